#include "memprior/forward_ops.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "memprior/errors.hpp"

namespace memprior {

Eigen::MatrixXd Linearization::jacobian() const {
  const Index d = model_dim();
  Eigen::MatrixXd jac(value().size(), d);
  for (Index j = 0; j < d; ++j) jac.col(j) = jvp(Eigen::VectorXd::Unit(d, j));
  return jac;
}

ForwardOperator::ForwardOperator(std::string name, Index model_dim, Index data_dim, double gamma)
    : name_(std::move(name)), model_dim_(model_dim), data_dim_(data_dim), gamma_(gamma) {
  if (model_dim < 1 || data_dim < 1) throw InvalidArgument("operator dimensions must be positive");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw InvalidArgument("noise level gamma must be positive and finite");
  }
}

void ForwardOperator::check_model(const Eigen::VectorXd& x) const {
  if (x.size() != model_dim_) {
    throw InvalidArgument(name_ + ": model vector has size " + std::to_string(x.size()) +
                          ", expected " + std::to_string(model_dim_));
  }
}

void ForwardOperator::check_data(const Eigen::VectorXd& v) const {
  if (v.size() != data_dim_) {
    throw InvalidArgument(name_ + ": data vector has size " + std::to_string(v.size()) +
                          ", expected " + std::to_string(data_dim_));
  }
}

Eigen::MatrixXd ForwardOperator::dense_jacobian(const Eigen::VectorXd& x) const {
  return linearize(x)->jacobian();
}

namespace {

// Linearization that defers to the operator's pointwise products.
class PointLinearization final : public Linearization {
 public:
  PointLinearization(const ForwardOperator& op, Eigen::VectorXd x)
      : op_(op), x_(std::move(x)), value_(op.evaluate(x_)) {}

  const Eigen::VectorXd& value() const override { return value_; }
  Eigen::VectorXd jvp(const Eigen::VectorXd& u) const override {
    return op_.jacobian_vector(x_, u);
  }
  Eigen::VectorXd vjp(const Eigen::VectorXd& v) const override {
    return op_.adjoint_jacobian_vector(x_, v);
  }
  Eigen::MatrixXd jacobian() const override {
    if (op_.has_dense_jacobian()) return op_.dense_jacobian(x_);
    return Linearization::jacobian();
  }
  Index model_dim() const override { return op_.model_dim(); }

 private:
  const ForwardOperator& op_;
  Eigen::VectorXd x_;
  Eigen::VectorXd value_;
};

// Closed-form operators implement F and its dense Jacobian; products follow.
class ClosedFormOperator : public ForwardOperator {
 public:
  using ForwardOperator::ForwardOperator;

  virtual Eigen::MatrixXd jacobian_at(const Eigen::VectorXd& x) const = 0;

  Eigen::VectorXd jacobian_vector(const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& u) const override {
    check_model(x);
    check_model(u);
    return jacobian_at(x) * u;
  }
  Eigen::VectorXd adjoint_jacobian_vector(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& v) const override {
    check_model(x);
    check_data(v);
    return jacobian_at(x).transpose() * v;
  }
  bool has_dense_jacobian() const override { return true; }
  Eigen::MatrixXd dense_jacobian(const Eigen::VectorXd& x) const override {
    check_model(x);
    return jacobian_at(x);
  }
};

class Cubic1d final : public ClosedFormOperator {
 public:
  explicit Cubic1d(double gamma) : ClosedFormOperator("cubic1d", 1, 1, gamma) {}

  Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const override {
    check_model(x);
    const double v = x[0];
    return Eigen::VectorXd::Constant(1, v + 0.3 * v * v * v);
  }
  Eigen::MatrixXd jacobian_at(const Eigen::VectorXd& x) const override {
    return Eigen::MatrixXd::Constant(1, 1, 1.0 + 0.9 * x[0] * x[0]);
  }
};

class Pentagon2d final : public ClosedFormOperator {
 public:
  explicit Pentagon2d(double gamma) : ClosedFormOperator("pentagon2d", 2, 2, gamma) {}

  Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const override {
    check_model(x);
    return Eigen::Vector2d(x[0] + 0.3 * x[0] * x[1], x[1] + 0.2 * x[0] * x[0]);
  }
  Eigen::MatrixXd jacobian_at(const Eigen::VectorXd& x) const override {
    Eigen::Matrix2d j;
    j << 1.0 + 0.3 * x[1], 0.3 * x[0],
         0.4 * x[0], 1.0;
    return j;
  }
};

class LinearOperator final : public ClosedFormOperator {
 public:
  LinearOperator(Eigen::MatrixXd a, double gamma)
      : ClosedFormOperator("linear", a.cols(), a.rows(), gamma), a_(std::move(a)) {}

  Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const override {
    check_model(x);
    return a_ * x;
  }
  Eigen::MatrixXd jacobian_at(const Eigen::VectorXd&) const override { return a_; }

 private:
  Eigen::MatrixXd a_;
};

}  // namespace

std::unique_ptr<Linearization> ForwardOperator::linearize(const Eigen::VectorXd& x) const {
  check_model(x);
  return std::make_unique<PointLinearization>(*this, x);
}

OperatorHandle make_cubic1d(double gamma) { return std::make_shared<Cubic1d>(gamma); }

OperatorHandle make_pentagon2d(double gamma) { return std::make_shared<Pentagon2d>(gamma); }

OperatorHandle make_linear(Eigen::MatrixXd a, double gamma) {
  if (a.size() == 0) throw InvalidArgument("linear operator needs a non-empty matrix");
  if (!a.allFinite()) throw InvalidArgument("linear operator matrix has non-finite entries");
  return std::make_shared<LinearOperator>(std::move(a), gamma);
}

TrainingSet cubic1d_default_training() {
  Eigen::MatrixXd x(5, 1);
  x << -2.0, -1.0, 0.8, 1.5, 2.2;
  return TrainingSet(x);
}

TrainingSet pentagon_training() {
  Eigen::MatrixXd x(5, 2);
  for (int k = 0; k < 5; ++k) {
    const double angle = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * k / 5.0;
    x(k, 0) = std::cos(angle);
    x(k, 1) = std::sin(angle);
  }
  return TrainingSet(x);
}

Observation synthesize_observation(const ForwardOperator& op, const Eigen::VectorXd& truth,
                                   bool add_noise, std::uint64_t seed) {
  Observation obs;
  obs.y = op.evaluate(truth);
  obs.gamma = op.gamma();
  obs.provenance = Observation::Provenance::synthetic;
  obs.seed = seed;
  obs.true_model = truth;
  if (add_noise) {
    auto rng = stream_rng(seed, 0);
    std::normal_distribution<double> normal;
    for (Index i = 0; i < obs.y.size(); ++i) obs.y[i] += op.gamma() * normal(rng);
  }
  return obs;
}

Observation loaded_observation(const ForwardOperator& op, Eigen::VectorXd y) {
  if (y.size() != op.data_dim()) {
    throw InvalidArgument("observation has size " + std::to_string(y.size()) + ", operator '" +
                          op.name() + "' produces " + std::to_string(op.data_dim()));
  }
  Observation obs;
  obs.y = std::move(y);
  obs.gamma = op.gamma();
  return obs;
}

Observation cubic1d_observation(const ForwardOperator& op) {
  return synthesize_observation(op, Eigen::VectorXd::Zero(1), false, 0);
}

Observation pentagon_observation(const ForwardOperator& op) {
  return synthesize_observation(op, 0.7 * pentagon_training().example(0), false, 0);
}

}  // namespace memprior
