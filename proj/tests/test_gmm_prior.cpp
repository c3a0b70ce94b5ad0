#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "memprior/errors.hpp"
#include "memprior/forward_ops.hpp"
#include "memprior/gmm_prior.hpp"
#include "support.hpp"

using namespace memprior;
using testing::gaussian;

namespace {

// log (1/N) sum_n N(x | c_n, sigma^2) by direct summation in long double.
long double naive_log_density_1d(const Eigen::MatrixXd& centers, long double x, long double sigma) {
  long double sum = 0.0L;
  for (Index n = 0; n < centers.rows(); ++n) {
    const long double r = x - static_cast<long double>(centers(n, 0));
    sum += std::exp(-r * r / (2.0L * sigma * sigma)) / std::sqrt(2.0L * std::numbers::pi_v<long double> * sigma * sigma);
  }
  return std::log(sum / static_cast<long double>(centers.rows()));
}

TrainingSet two_points(double a) {
  Eigen::MatrixXd x(2, 1);
  x << -a, a;
  return TrainingSet(x);
}

}  // namespace

TEST_SUITE("gmm_prior") {

TEST_CASE("single standard Gaussian at its mode") {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(1, 1);
  const double v = mixture_log_density(c, Eigen::VectorXd::Zero(1), 1.0, 1.0);
  CHECK(v == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
  CHECK(v == doctest::Approx(-0.9189385332).epsilon(1e-9));
}

TEST_CASE("symmetric pair at the midpoint equals one component at distance a") {
  const double a = 0.7;
  const double sigma = 0.4;
  const TrainingSet pair = two_points(a);
  Eigen::MatrixXd one(1, 1);
  one << a;
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  CHECK(mixture_log_density(pair.examples(), x, 1.0, sigma) ==
        doctest::Approx(mixture_log_density(one, x, 1.0, sigma)).epsilon(1e-14));
  CHECK(mixture_score(pair.examples(), x, 1.0, sigma).norm() < 1e-14);
}

TEST_CASE("log density matches extended-precision summation on the cubic1d set") {
  const TrainingSet tr = cubic1d_default_training();
  for (double sigma : {0.3, 0.5, 1.0}) {
    for (double x : {0.1, -1.3, 2.0}) {
      const double got = mixture_log_density(tr.examples(), Eigen::VectorXd::Constant(1, x), 1.0, sigma);
      const long double ref = naive_log_density_1d(tr.examples(), x, sigma);
      CHECK(std::abs(got - static_cast<double>(ref)) / std::abs(static_cast<double>(ref)) < 1e-12);
    }
  }
}

TEST_CASE("single-component score is (m x1 - x) / sigma^2") {
  Eigen::MatrixXd c(1, 3);
  c << 0.5, -1.0, 2.0;
  const Eigen::Vector3d x(0.1, 0.2, 0.3);
  for (double m : {1.0, 0.8}) {
    const Eigen::VectorXd s = mixture_score(c, x, m, 0.7);
    const Eigen::VectorXd expected = (m * c.row(0).transpose() - x) / 0.49;
    CHECK((s - expected).norm() < 1e-14);
  }
}

TEST_CASE("score at sigma 0.05 matches finite differences on the cubic1d set") {
  const TrainingSet tr = cubic1d_default_training();
  const double sigma = 0.05;
  for (double x : {0.2, 0.85, -1.02}) {
    const Eigen::VectorXd p = Eigen::VectorXd::Constant(1, x);
    const double h = 1e-5;
    const double fd = (mixture_log_density(tr.examples(), p.array() + h, 1.0, sigma) -
                       mixture_log_density(tr.examples(), p.array() - h, 1.0, sigma)) /
                      (2 * h);
    const double s = mixture_score(tr.examples(), p, 1.0, sigma)[0];
    CHECK(std::abs(s - fd) / std::abs(s) < 1e-6);
  }
}

TEST_CASE("score equals finite-difference gradient at 100 random (x, t)") {
  auto rng = memprior::stream_rng(2024, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Eigen::MatrixXd centers = gaussian(rng, 7, 3, 1.0);
  for (const auto& sched : {NoiseSchedule::variance_exploding(0.05, 5.0),
                            NoiseSchedule::variance_preserving(0.05, 0.95)}) {
    const GmmPrior prior(TrainingSet(centers), sched);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const double t = unit(rng);
      const Eigen::VectorXd x = gaussian(rng, 3, 1.2);
      const Eigen::VectorXd s = prior.score_at(x, t);
      Eigen::VectorXd fd(3);
      for (Index j = 0; j < 3; ++j) {
        const Eigen::VectorXd e = Eigen::VectorXd::Unit(3, j) * 1e-5;
        fd[j] = (prior.log_density(x + e, t) - prior.log_density(x - e, t)) / 2e-5;
      }
      worst = std::max(worst, (s - fd).norm() / s.norm());
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("log density and score are finite far from every component") {
  const GmmPrior prior(cubic1d_default_training(), NoiseSchedule::variance_exploding());
  const Eigen::VectorXd far = Eigen::VectorXd::Constant(1, 1e3);
  CHECK(std::isfinite(prior.log_density(far, 0.0)));
  CHECK(prior.score_at(far, 0.0).allFinite());
}

TEST_CASE("log density is invariant under permutation of the training set") {
  auto rng = memprior::stream_rng(5, 0);
  const Eigen::MatrixXd c = gaussian(rng, 6, 2, 1.0);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  const Eigen::MatrixXd shuffled = perm * c;
  const GmmPrior a(TrainingSet(c), NoiseSchedule::variance_exploding());
  const GmmPrior b(TrainingSet(shuffled), NoiseSchedule::variance_exploding());
  for (int k = 0; k < 20; ++k) {
    const Eigen::VectorXd x = gaussian(rng, 2);
    const double t = 0.05 * k;
    CHECK(a.log_density(x, t) == doctest::Approx(b.log_density(x, t)).epsilon(1e-13));
  }
}

TEST_CASE("variance-preserving schedule keeps m^2 + sigma^2 = 1") {
  const NoiseSchedule s = NoiseSchedule::variance_preserving(0.01, 0.999);
  for (int k = 0; k <= 1000; ++k) {
    const double t = k / 1000.0;
    CHECK(std::abs(s.scale(t) * s.scale(t) + s.sigma(t) * s.sigma(t) - 1.0) < 1e-12);
  }
}

TEST_CASE("schedule endpoints, monotonicity and inverse") {
  const NoiseSchedule s = NoiseSchedule::variance_exploding();
  CHECK(s.sigma(0.0) == doctest::Approx(0.01));
  CHECK(s.sigma(1.0) == doctest::Approx(10.0));
  CHECK(s.scale(0.3) == 1.0);
  double prev = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double t = k / 100.0;
    CHECK(s.sigma(t) > prev);
    prev = s.sigma(t);
    CHECK(s.time_of_sigma(s.sigma(t)) == doctest::Approx(t).epsilon(1e-12));
  }
  CHECK(s.time_of_sigma(1e-9) == 0.0);
  CHECK(s.time_of_sigma(1e9) == 1.0);
}

TEST_CASE("responsibilities approach 1/N for very wide components") {
  const TrainingSet tr = cubic1d_default_training();
  const double sigma = 1e3 * tr.diameter();
  const Eigen::VectorXd r = mixture_responsibilities(tr.examples(), Eigen::VectorXd::Constant(1, 0.3), 1.0, sigma);
  CHECK(r.sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK((r.array() - 0.2).abs().maxCoeff() < 1e-3);
}

TEST_CASE("vanishing width: every draw sits on a training example") {
  const GmmPrior prior(cubic1d_default_training(), NoiseSchedule::variance_exploding(1e-6, 1.0));
  const Eigen::MatrixXd draws = prior.sample(0.0, 500, 17);
  for (Index i = 0; i < draws.rows(); ++i) {
    const double gap = (prior.training().examples().array() - draws(i, 0)).abs().minCoeff();
    CHECK(gap < 1e-5);
  }
}

TEST_CASE("component frequencies concentrate at 1/2 for a pair") {
  const GmmPrior prior(two_points(5.0), NoiseSchedule::variance_exploding(0.01, 1.0));
  const Eigen::MatrixXd draws = prior.sample(0.0, 10000, 3);
  const double right = (draws.array() > 0.0).cast<double>().mean();
  CHECK(std::abs(right - 0.5) < 3.0 * std::sqrt(0.25 / 1e4));
}

TEST_CASE("sampling is deterministic and independent of execution policy") {
  const GmmPrior prior(pentagon_training(), NoiseSchedule::variance_exploding());
  const Eigen::MatrixXd a = prior.sample(0.4, 300, 99, Exec::serial);
  const Eigen::MatrixXd b = prior.sample(0.4, 300, 99, Exec::parallel);
  const Eigen::MatrixXd c = prior.sample(0.4, 300, 99, Exec::serial);
  CHECK(testing::bitwise_equal(a, b));
  CHECK(testing::bitwise_equal(a, c));
  CHECK(!testing::bitwise_equal(a, prior.sample(0.4, 300, 100)));
}

TEST_CASE("batched score matches pointwise score in both execution modes") {
  const GmmPrior prior(pentagon_training(), NoiseSchedule::variance_exploding());
  auto rng = memprior::stream_rng(8, 0);
  const Eigen::MatrixXd x = gaussian(rng, 64, 2, 1.0);
  const Eigen::MatrixXd serial = prior.score_batch(x, 0.3, Exec::serial);
  const Eigen::MatrixXd parallel = prior.score_batch(x, 0.3, Exec::parallel);
  CHECK(testing::bitwise_equal(serial, parallel));
  for (Index i = 0; i < x.rows(); ++i) {
    CHECK((serial.row(i).transpose() - prior.score_at(x.row(i).transpose(), 0.3)).norm() < 1e-13);
  }
}

TEST_CASE("input validation") {
  const GmmPrior prior(pentagon_training(), NoiseSchedule::variance_exploding());
  CHECK_THROWS_AS(prior.log_density(Eigen::VectorXd::Zero(3), 0.5), InvalidArgument);
  CHECK_THROWS_AS(prior.score_at(Eigen::VectorXd::Zero(2), 1.5), InvalidArgument);
  CHECK_THROWS_AS(NoiseSchedule::variance_exploding(0.0, 1.0), DegenerateSchedule);
  CHECK_THROWS_AS(NoiseSchedule::variance_preserving(0.1, 1.2), InvalidArgument);
  CHECK_THROWS_AS(mixture_log_density(pentagon_training().examples(), Eigen::VectorXd::Zero(2), 1.0, 0.0),
                  DegenerateSchedule);
  CHECK_THROWS_AS(TrainingSet(Eigen::MatrixXd(0, 2)), InvalidArgument);
  CHECK_THROWS_AS(parse_schedule_kind("cosine"), InvalidArgument);
  CHECK(parse_schedule_kind(to_string(ScheduleKind::variance_preserving)) == ScheduleKind::variance_preserving);
}

}
