#include <doctest.h>

#include <cmath>
#include <numeric>

#include "memprior/errors.hpp"
#include "memprior/score_net.hpp"
#include "support.hpp"

using namespace memprior;
using testing::gaussian;

namespace {

ScoreNetSpec tiny_spec(Index dim) {
  ScoreNetSpec s;
  s.dim = dim;
  s.hidden = {7, 5};
  s.time_features = 4;
  return s;
}

}  // namespace

TEST_SUITE("score_net") {

TEST_CASE("parameter layout") {
  const ScoreNet net(tiny_spec(3), NoiseSchedule::variance_exploding(), 1);
  CHECK(net.parameter_count() == (7 + 1) * 7 + (7 + 1) * 5 + (5 + 1) * 3);
  const ScoreNet big(ScoreNetSpec{20, {256, 256, 256}, 16}, NoiseSchedule::variance_exploding(), 1);
  CHECK(big.parameter_count() == 37 * 256 + 257 * 256 * 2 + 257 * 20);
}

TEST_CASE("initial weights are scaled by fan-in and biases are zero") {
  const ScoreNet net(ScoreNetSpec{4, {400}, 0}, NoiseSchedule::variance_exploding(), 2);
  const Eigen::VectorXd& p = net.parameters();
  const Eigen::VectorXd w1 = p.head(400 * 4);
  CHECK(w1.squaredNorm() / 1600.0 == doctest::Approx(0.25).epsilon(0.1));
  CHECK(p.segment(1600, 400).cwiseAbs().maxCoeff() == 0.0);
  const ScoreNet again(ScoreNetSpec{4, {400}, 0}, NoiseSchedule::variance_exploding(), 2);
  CHECK(testing::bitwise_equal(again.parameters(), p));
}

TEST_CASE("input features: preconditioned state and log-sigma harmonics") {
  const auto sched = NoiseSchedule::variance_exploding(0.01, 10.0);
  const ScoreNet net(tiny_spec(2), sched, 1);
  Eigen::MatrixXd x(2, 2);
  x << 1.0, -2.0, 3.0, 0.5;
  Eigen::VectorXd t(2);
  t << 0.0, 0.7;
  const Eigen::MatrixXd f = net.features(x, t);
  REQUIRE(f.cols() == 6);
  for (Index i = 0; i < 2; ++i) {
    const double s = sched.sigma(t[i]);
    const double c = 1.0 / std::sqrt(1.0 + s * s);
    CHECK(f(i, 0) == doctest::Approx(c * x(i, 0)));
    CHECK(f(i, 1) == doctest::Approx(c * x(i, 1)));
    CHECK(f(i, 2) * f(i, 2) + f(i, 3) * f(i, 3) == doctest::Approx(1.0));
    CHECK(f(i, 4) * f(i, 4) + f(i, 5) * f(i, 5) == doctest::Approx(1.0));
    CHECK(std::atan2(f(i, 2), f(i, 3)) == doctest::Approx(std::remainder(0.1 * std::log(s), 2 * M_PI)));
  }
}

TEST_CASE("score is minus predicted noise over sigma") {
  const auto sched = NoiseSchedule::variance_preserving(0.01, 0.99);
  const ScoreNet net(tiny_spec(3), sched, 4);
  auto rng = stream_rng(4, 0);
  const Eigen::MatrixXd x = gaussian(rng, 9, 3, 1.0);
  const double t = 0.4;
  const Eigen::MatrixXd eps = net.predict_noise(x, Eigen::VectorXd::Constant(9, t));
  const Eigen::MatrixXd s = net.score_batch(x, t);
  CHECK(testing::rel_err(s, -eps / sched.sigma(t)) < 1e-14);
  CHECK(testing::bitwise_equal(net.score_batch(x, t, Exec::serial), net.score_batch(x, t, Exec::parallel)));
  CHECK(testing::rel_err(score_of(net, x.row(2).transpose(), t), s.row(2).transpose()) < 1e-14);
}

TEST_CASE("zero network predicts zero noise, so the loss is the noise energy") {
  ScoreNet net(tiny_spec(2), NoiseSchedule::variance_exploding(), 1);
  net.set_parameters(Eigen::VectorXd::Zero(net.parameter_count()));
  auto rng = stream_rng(5, 0);
  const Eigen::MatrixXd x0 = gaussian(rng, 16, 2, 1.0);
  const Eigen::MatrixXd eps = gaussian(rng, 16, 2, 1.0);
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(16, 0.0, 1.0);
  CHECK(net.dsm_loss(x0, t, eps) == doctest::Approx(eps.squaredNorm() / 16.0));
}

TEST_CASE("DSM loss gradient matches central differences") {
  for (auto sched : {NoiseSchedule::variance_exploding(0.01, 10.0), NoiseSchedule::variance_preserving(0.01, 0.99)}) {
    const ScoreNet net(tiny_spec(3), sched, 6);
    auto rng = stream_rng(6, 0);
    const Eigen::MatrixXd x0 = gaussian(rng, 11, 3, 1.0);
    const Eigen::MatrixXd eps = gaussian(rng, 11, 3, 1.0);
    std::uniform_real_distribution<double> unif;
    Eigen::VectorXd t(11);
    for (Index i = 0; i < 11; ++i) t[i] = unif(rng);
    Eigen::VectorXd grad;
    net.dsm_loss(x0, t, eps, &grad);
    REQUIRE(grad.size() == net.parameter_count());
    ScoreNet probe = net;
    const Eigen::VectorXd p0 = net.parameters();
    double worst = 0.0;
    for (Index k = 0; k < p0.size(); k += 3) {
      const double h = 1e-6;
      Eigen::VectorXd p = p0;
      p[k] += h;
      probe.set_parameters(p);
      const double up = probe.dsm_loss(x0, t, eps);
      p[k] -= 2 * h;
      probe.set_parameters(p);
      const double down = probe.dsm_loss(x0, t, eps);
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - grad[k]) / (std::abs(grad[k]) + 1e-4));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("training lowers the loss, is deterministic, and approaches the mixture score") {
  Eigen::MatrixXd pts(2, 1);
  pts << -1.0, 1.0;
  const TrainingSet data(pts);
  const auto sched = NoiseSchedule::variance_exploding(0.01, 10.0);
  TrainConfig cfg;
  cfg.steps = 3000;
  cfg.batch = 128;
  cfg.learning_rate = 2e-3;
  cfg.seed = 3;
  const ScoreNetSpec spec{1, {64, 64}, 8};
  const TrainResult a = train(data, spec, sched, cfg);
  REQUIRE(a.loss_trace.size() == 3000);
  const double head = std::accumulate(a.loss_trace.begin(), a.loss_trace.begin() + 100, 0.0) / 100;
  const double tail = std::accumulate(a.loss_trace.end() - 300, a.loss_trace.end(), 0.0) / 300;
  CHECK(tail < 0.5 * head);

  TrainConfig shorter = cfg;
  shorter.steps = 50;
  const TrainResult b1 = train(data, spec, sched, shorter);
  const TrainResult b2 = train(data, spec, sched, shorter);
  CHECK(testing::bitwise_equal(b1.net.parameters(), b2.net.parameters()));

  // Noise-scaled score error on draws from the noised mixture; the exact
  // target has unit scale, so an untrained net sits near 1.
  const GmmPrior prior(data, sched);
  for (double t : {0.2, 0.4, 0.6, 0.8}) {
    const Eigen::MatrixXd x = prior.sample(t, 400, 9);
    const Eigen::MatrixXd diff = (a.net.score_batch(x, t) - prior.score_batch(x, t)) * sched.sigma(t);
    CHECK(std::sqrt(diff.squaredNorm() / 400.0) < 0.3);
  }
}

TEST_CASE("an over-trained net on ten points reproduces the mixture score at the examples") {
  auto rng = stream_rng(8, 0);
  const Eigen::MatrixXd pts = gaussian(rng, 10, 2, 1.0);
  const TrainingSet data(pts);
  const auto sched = NoiseSchedule::variance_exploding(0.01, 10.0);
  TrainConfig cfg;
  cfg.steps = 20000;
  cfg.batch = 128;
  cfg.learning_rate = 1e-3;
  cfg.final_lr_fraction = 0.01;
  cfg.seed = 4;
  const TrainResult r = train(data, ScoreNetSpec{2, {128, 128, 128}, 8}, sched, cfg);
  const GmmPrior prior(data, sched);
  const double sigma = 0.1;
  const double t = sched.time_of_sigma(sigma);
  // The exact score nearly vanishes at the examples, so the error is measured
  // against the unit noise scale: sigma * score is the predicted noise.
  const Eigen::MatrixXd exact = prior.score_batch(pts, t);
  REQUIRE(sigma * exact.norm() < 1e-3);
  const Eigen::MatrixXd diff = (r.net.score_batch(pts, t) - exact) * sigma;
  CHECK(std::sqrt(diff.squaredNorm() / 10.0) < 0.1);
}

TEST_CASE("learning-rate decay changes the trajectory only after the first step") {
  const TrainingSet data(Eigen::MatrixXd::Constant(2, 1, 0.5));
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.batch = 4;
  cfg.final_lr_fraction = 0.0;
  CHECK_THROWS_AS(train(data, tiny_spec(1), NoiseSchedule::variance_exploding(), cfg), InvalidArgument);
  cfg.final_lr_fraction = 1.0;
  const TrainResult constant = train(data, tiny_spec(1), NoiseSchedule::variance_exploding(), cfg);
  cfg.final_lr_fraction = 0.5;
  const TrainResult decayed = train(data, tiny_spec(1), NoiseSchedule::variance_exploding(), cfg);
  CHECK(constant.loss_trace[0] == decayed.loss_trace[0]);
  CHECK(!testing::bitwise_equal(constant.net.parameters(), decayed.net.parameters()));
}

TEST_CASE("divergent training raises StepFailure") {
  const TrainingSet data(Eigen::MatrixXd::Constant(3, 2, 1.0));
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.batch = 8;
  cfg.learning_rate = 1e250;
  CHECK_THROWS_AS(train(data, tiny_spec(2), NoiseSchedule::variance_exploding(), cfg), StepFailure);
}

TEST_CASE("checkpoint round-trip") {
  testing::TempDir dir("ckpt");
  const auto sched = NoiseSchedule::variance_preserving(0.02, 0.95);
  const ScoreNet net(tiny_spec(3), sched, 11);
  save_checkpoint(net, CheckpointInfo{11, 1234}, dir.path());
  CheckpointInfo info;
  const ScoreNet back = load_checkpoint(dir.path(), &info);
  CHECK(info.seed == 11);
  CHECK(info.steps == 1234);
  CHECK(back.spec().hidden == net.spec().hidden);
  CHECK(back.spec().time_features == 4);
  CHECK(back.schedule().kind() == ScheduleKind::variance_preserving);
  CHECK(back.schedule().sigma_min() == 0.02);
  CHECK(back.schedule().sigma_max() == 0.95);
  CHECK(testing::bitwise_equal(back.parameters(), net.parameters()));
  testing::TempDir empty("ckpt_empty");
  CHECK_THROWS_AS(load_checkpoint(empty.path()), IoError);
}

TEST_CASE("validation") {
  const auto sched = NoiseSchedule::variance_exploding();
  CHECK_THROWS_AS(ScoreNet(ScoreNetSpec{0, {4}, 2}, sched, 0), InvalidArgument);
  CHECK_THROWS_AS(ScoreNet(ScoreNetSpec{2, {4}, 3}, sched, 0), InvalidArgument);
  CHECK_THROWS_AS(ScoreNet(ScoreNetSpec{2, {0}, 2}, sched, 0), InvalidArgument);
  ScoreNet net(tiny_spec(2), sched, 0);
  CHECK_THROWS_AS(net.set_parameters(Eigen::VectorXd::Zero(3)), InvalidArgument);
  CHECK_THROWS_AS(net.score_batch(Eigen::MatrixXd::Zero(1, 3), 0.5), InvalidArgument);
  CHECK_THROWS_AS(net.score_batch(Eigen::MatrixXd::Zero(1, 2), 1.5), InvalidArgument);
  TrainConfig cfg;
  cfg.steps = 0;
  CHECK_THROWS_AS(train(TrainingSet(Eigen::MatrixXd::Zero(2, 2)), tiny_spec(2), sched, cfg), InvalidArgument);
}

}
