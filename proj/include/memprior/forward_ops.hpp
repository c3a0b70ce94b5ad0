#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "memprior/gmm_prior.hpp"

namespace memprior {

/// Forward operator frozen at one model point: value, J u and J^T v. Lets
/// PDE-backed operators factor once and reuse the factorization for every
/// product at that point.
class Linearization {
 public:
  virtual ~Linearization() = default;

  virtual const Eigen::VectorXd& value() const = 0;
  virtual Eigen::VectorXd jvp(const Eigen::VectorXd& u) const = 0;
  virtual Eigen::VectorXd vjp(const Eigen::VectorXd& v) const = 0;
  /// Dense m x d Jacobian. Default: one jvp per unit vector.
  virtual Eigen::MatrixXd jacobian() const;

  virtual Index model_dim() const = 0;
};

/// F: R^d -> R^m with Gaussian noise level gamma. Immutable after
/// construction; every method is safe to call concurrently.
class ForwardOperator {
 public:
  ForwardOperator(std::string name, Index model_dim, Index data_dim, double gamma);
  virtual ~ForwardOperator() = default;

  const std::string& name() const { return name_; }
  Index model_dim() const { return model_dim_; }
  Index data_dim() const { return data_dim_; }
  double gamma() const { return gamma_; }

  virtual Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd jacobian_vector(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& u) const = 0;
  virtual Eigen::VectorXd adjoint_jacobian_vector(const Eigen::VectorXd& x,
                                                  const Eigen::VectorXd& v) const = 0;

  /// True when dense_jacobian is a closed form rather than d jvp calls.
  virtual bool has_dense_jacobian() const { return false; }
  virtual Eigen::MatrixXd dense_jacobian(const Eigen::VectorXd& x) const;

  virtual std::unique_ptr<Linearization> linearize(const Eigen::VectorXd& x) const;

 protected:
  void check_model(const Eigen::VectorXd& x) const;
  void check_data(const Eigen::VectorXd& v) const;

 private:
  std::string name_;
  Index model_dim_;
  Index data_dim_;
  double gamma_;
};

using OperatorHandle = std::shared_ptr<const ForwardOperator>;

/// F(x) = x + 0.3 x^3 on R.
OperatorHandle make_cubic1d(double gamma);
/// F(x) = (x1 + 0.3 x1 x2, x2 + 0.2 x1^2).
OperatorHandle make_pentagon2d(double gamma);
/// F(x) = A x.
OperatorHandle make_linear(Eigen::MatrixXd a, double gamma);

/// {-2, -1, 0.8, 1.5, 2.2}: five distinct 1-D examples.
TrainingSet cubic1d_default_training();
/// Regular pentagon, circumradius 1, centered at the origin, first vertex at
/// angle pi/2, counterclockwise.
TrainingSet pentagon_training();

struct Observation {
  enum class Provenance { synthetic, loaded };

  Eigen::VectorXd y;
  double gamma = 1.0;
  Provenance provenance = Provenance::loaded;
  std::uint64_t seed = 0;
  std::optional<Eigen::VectorXd> true_model;
};

/// y = F(truth) (+ N(0, gamma^2 I) when add_noise).
Observation synthesize_observation(const ForwardOperator& op, const Eigen::VectorXd& truth,
                                   bool add_noise, std::uint64_t seed);

/// Observation supplied directly; checked against op.data_dim().
Observation loaded_observation(const ForwardOperator& op, Eigen::VectorXd y);

/// Stylized 1-D setup: y = F(0) = 0.
Observation cubic1d_observation(const ForwardOperator& op);
/// Stylized 2-D setup: noiseless y = F(0.7 x_1), x_1 the first pentagon vertex.
Observation pentagon_observation(const ForwardOperator& op);

}  // namespace memprior
