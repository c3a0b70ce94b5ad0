#include <doctest.h>

#include <cmath>
#include <numbers>

#include "memprior/errors.hpp"
#include "memprior/forward_ops.hpp"
#include "support.hpp"

using namespace memprior;
using testing::gaussian;

namespace {

double jvp_fd_error(const ForwardOperator& op, int trials, std::uint64_t seed) {
  auto rng = stream_rng(seed, 0);
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    const Eigen::VectorXd x = gaussian(rng, op.model_dim());
    const Eigen::VectorXd u = gaussian(rng, op.model_dim());
    const double eps = 1e-5 * (1.0 + x.norm());
    const Eigen::VectorXd fd = (op.evaluate(x + eps * u) - op.evaluate(x - eps * u)) / (2 * eps);
    const Eigen::VectorXd jv = op.jacobian_vector(x, u);
    worst = std::max(worst, (jv - fd).norm() / jv.norm());
  }
  return worst;
}

double adjoint_error(const ForwardOperator& op, int trials, std::uint64_t seed) {
  auto rng = stream_rng(seed, 0);
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    const Eigen::VectorXd x = gaussian(rng, op.model_dim());
    const Eigen::VectorXd u = gaussian(rng, op.model_dim());
    const Eigen::VectorXd v = gaussian(rng, op.data_dim());
    const Eigen::VectorXd ju = op.jacobian_vector(x, u);
    const double lhs = ju.dot(v);
    const double rhs = u.dot(op.adjoint_jacobian_vector(x, v));
    worst = std::max(worst, std::abs(lhs - rhs) / (ju.norm() * v.norm()));
  }
  return worst;
}

}  // namespace

TEST_SUITE("forward_ops") {

TEST_CASE("cubic1d values and derivatives") {
  const auto op = make_cubic1d(0.3);
  CHECK(op->model_dim() == 1);
  CHECK(op->data_dim() == 1);
  CHECK(op->gamma() == 0.3);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  CHECK(op->evaluate(zero)[0] == 0.0);
  CHECK(op->evaluate(one)[0] == doctest::Approx(1.3).epsilon(1e-15));
  CHECK(op->jacobian_vector(zero, Eigen::VectorXd::Constant(1, 0.37))[0] == doctest::Approx(0.37));
  CHECK(op->jacobian_vector(one, one)[0] == doctest::Approx(1.9).epsilon(1e-15));
  CHECK(op->adjoint_jacobian_vector(one, Eigen::VectorXd::Constant(1, 2.0))[0] ==
        doctest::Approx(3.8).epsilon(1e-15));
  CHECK(op->dense_jacobian(one)(0, 0) == doctest::Approx(1.9));
}

TEST_CASE("pentagon2d vanishes at the origin and matches its formula") {
  const auto op = make_pentagon2d(0.3);
  CHECK(op->evaluate(Eigen::Vector2d::Zero()).norm() == 0.0);
  const Eigen::Vector2d x(0.4, -1.1);
  const Eigen::VectorXd f = op->evaluate(x);
  CHECK(f[0] == doctest::Approx(0.4 + 0.3 * 0.4 * -1.1));
  CHECK(f[1] == doctest::Approx(-1.1 + 0.2 * 0.16));
}

TEST_CASE("linear operator returns A x and A^T v exactly") {
  Eigen::MatrixXd a(3, 2);
  a << 1, 2, -3, 4, 0.5, -0.25;
  const auto op = make_linear(a, 0.1);
  CHECK(op->has_dense_jacobian());
  const Eigen::Vector2d x(0.3, -0.7);
  const Eigen::Vector3d v(1.0, -2.0, 0.5);
  CHECK((op->evaluate(x) - a * x).norm() == 0.0);
  CHECK((op->adjoint_jacobian_vector(x, v) - a.transpose() * v).norm() == 0.0);
  CHECK((op->dense_jacobian(x) - a).norm() == 0.0);
}

TEST_CASE("jvp matches central finite differences") {
  CHECK(jvp_fd_error(*make_cubic1d(0.3), 50, 1) < 1e-6);
  CHECK(jvp_fd_error(*make_pentagon2d(0.3), 50, 2) < 1e-6);
  auto rng = stream_rng(3, 0);
  CHECK(jvp_fd_error(*make_linear(gaussian(rng, 4, 3, 1.0), 1.0), 20, 4) < 1e-6);
}

TEST_CASE("adjoint identity at machine precision") {
  CHECK(adjoint_error(*make_cubic1d(0.3), 100, 5) < 1e-12);
  CHECK(adjoint_error(*make_pentagon2d(0.3), 100, 6) < 1e-12);
  auto rng = stream_rng(7, 0);
  CHECK(adjoint_error(*make_linear(gaussian(rng, 3, 5, 1.0), 1.0), 100, 8) < 1e-12);
}

TEST_CASE("linearization agrees with the direct products") {
  const auto op = make_pentagon2d(0.3);
  const Eigen::Vector2d x(0.2, 0.9);
  const auto lin = op->linearize(x);
  CHECK((lin->value() - op->evaluate(x)).norm() == 0.0);
  const Eigen::Vector2d u(1.0, -0.5);
  CHECK((lin->jvp(u) - op->jacobian_vector(x, u)).norm() < 1e-15);
  CHECK((lin->vjp(u) - op->adjoint_jacobian_vector(x, u)).norm() < 1e-15);
  Eigen::Matrix2d j;
  j << 1 + 0.3 * 0.9, 0.3 * 0.2, 0.4 * 0.2, 1;
  CHECK((lin->jacobian() - j).norm() < 1e-15);
  CHECK((op->dense_jacobian(x) - j).norm() < 1e-15);
}

TEST_CASE("pentagon training set geometry") {
  const TrainingSet p = pentagon_training();
  REQUIRE(p.size() == 5);
  REQUIRE(p.dim() == 2);
  CHECK(p.example(0)[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(p.example(0)[1] == doctest::Approx(1.0));
  for (Index n = 0; n < 5; ++n) {
    CHECK(p.example(n).norm() == doctest::Approx(1.0));
    const double angle = std::atan2(p.example(n)[1], p.example(n)[0]);
    double expected = std::numbers::pi / 2 + 2 * std::numbers::pi * static_cast<double>(n) / 5;
    if (expected > std::numbers::pi) expected -= 2 * std::numbers::pi;
    CHECK(angle == doctest::Approx(expected));
  }
  CHECK(p.examples().colwise().sum().norm() < 1e-14);
}

TEST_CASE("stylized observations") {
  const auto cubic = make_cubic1d(0.3);
  const Observation y1 = cubic1d_observation(*cubic);
  CHECK(y1.y.size() == 1);
  CHECK(y1.y[0] == 0.0);
  CHECK(y1.gamma == 0.3);

  const auto pent = make_pentagon2d(0.3);
  const Observation y2 = pentagon_observation(*pent);
  const Eigen::VectorXd truth = 0.7 * pentagon_training().example(0);
  CHECK((y2.y - pent->evaluate(truth)).norm() < 1e-15);
  REQUIRE(y2.true_model.has_value());
  CHECK((*y2.true_model - truth).norm() < 1e-15);
}

TEST_CASE("synthetic observations are seeded and optionally noiseless") {
  const auto op = make_pentagon2d(0.3);
  const Eigen::Vector2d truth(0.1, 0.2);
  const Observation clean = synthesize_observation(*op, truth, false, 4);
  CHECK((clean.y - op->evaluate(truth)).norm() == 0.0);
  CHECK(clean.provenance == Observation::Provenance::synthetic);
  const Observation a = synthesize_observation(*op, truth, true, 4);
  const Observation b = synthesize_observation(*op, truth, true, 4);
  CHECK(testing::bitwise_equal(a.y, b.y));
  CHECK((a.y - clean.y).norm() > 0.0);
  CHECK(a.seed == 4);
}

TEST_CASE("noise draws have the requested scale") {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(4000, 1);
  const auto op = make_linear(a, 0.25);
  const Observation o = synthesize_observation(*op, Eigen::VectorXd::Zero(1), true, 11);
  const double sd = std::sqrt(o.y.squaredNorm() / static_cast<double>(o.y.size()));
  CHECK(sd == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("dimension and parameter validation") {
  const auto op = make_pentagon2d(0.3);
  CHECK_THROWS_AS(op->evaluate(Eigen::VectorXd::Zero(3)), InvalidArgument);
  CHECK_THROWS_AS(op->jacobian_vector(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(1)), InvalidArgument);
  CHECK_THROWS_AS(op->adjoint_jacobian_vector(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(5)),
                  InvalidArgument);
  CHECK_THROWS_AS(make_cubic1d(0.0), InvalidArgument);
  CHECK_THROWS_AS(make_linear(Eigen::MatrixXd(0, 0), 1.0), InvalidArgument);
  CHECK_THROWS_AS(loaded_observation(*op, Eigen::VectorXd::Zero(3)), InvalidArgument);
}

}
