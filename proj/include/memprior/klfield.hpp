#pragma once

// Karhunen-Loeve parameterization of squared-slowness fields.
//
// The covariance operator is (tau^2 I - Laplacian)^(-alpha) on the unit
// square with Neumann boundaries; its eigenpairs are
//   phi_jk ~ cos(j pi u) cos(k pi v),  lambda_jk = (tau^2 + pi^2 (j^2 + k^2))^(-alpha).
// Model vectors are whitened coefficients xi ~ N(0, I); synthesis applies the
// sqrt(lambda) weighting:
//   field = background + amplitude * sum_i sqrt(lambda_i) xi_i phi_i.

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "memprior/parallel.hpp"

namespace memprior {

struct KlMode {
  int j = 0;  // cosine order along x
  int k = 0;  // cosine order along z
};

class KlBasis {
 public:
  KlBasis(Index nx, Index nz, double alpha, double tau, std::vector<KlMode> modes,
          Eigen::VectorXd eigenvalues, Eigen::MatrixXd eigenfunctions, double background,
          double amplitude);

  Index nx() const { return nx_; }
  Index nz() const { return nz_; }
  Index grid_size() const { return nx_ * nz_; }
  Index n_terms() const { return eigenvalues_.size(); }
  double alpha() const { return alpha_; }
  double tau() const { return tau_; }
  double background() const { return background_; }
  double amplitude() const { return amplitude_; }
  const std::vector<KlMode>& modes() const { return modes_; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  /// grid_size x n_terms; column i is phi_i sampled at node (ix, iz) -> iz * nx + ix.
  const Eigen::MatrixXd& eigenfunctions() const { return eigenfunctions_; }
  /// Trapezoid weights of the grid inner product on the unit square.
  const Eigen::VectorXd& quadrature_weights() const { return weights_; }

  Eigen::VectorXd synthesize(const Eigen::VectorXd& xi) const;
  Eigen::VectorXd project(const Eigen::VectorXd& field) const;

  /// Linear part of synthesize (no background) and its Euclidean adjoint.
  Eigen::VectorXd synthesize_perturbation(const Eigen::VectorXd& xi) const;
  Eigen::VectorXd synthesize_adjoint(const Eigen::VectorXd& field) const;

  /// Gram matrix <phi_i, phi_j> under the quadrature weights.
  Eigen::MatrixXd gram() const;

  KlBasis with_amplitude(double amplitude) const;
  KlBasis with_background(double background) const;

 private:
  Index nx_;
  Index nz_;
  double alpha_;
  double tau_;
  std::vector<KlMode> modes_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenfunctions_;
  Eigen::VectorXd weights_;
  Eigen::VectorXd sqrt_eigenvalues_;
  double background_;
  double amplitude_;
};

/// Leading n_terms eigenpairs, eigenvalues descending with ties broken by
/// (j, k) lexicographic order.
KlBasis build_basis(Index nx, Index nz, double alpha, double tau, Index n_terms,
                    double background = 0.0, double amplitude = 1.0);

double kl_eigenvalue(int j, int k, double alpha, double tau);

struct FieldSamples {
  Eigen::MatrixXd coefficients;  // count x n_terms, whitened
  Eigen::MatrixXd fields;        // count x grid_size
};

/// Whitened coefficients only; row i comes from random stream i, so a larger
/// draw with the same seed extends a smaller one.
Eigen::MatrixXd sample_coefficients(Index n_terms, Index count, std::uint64_t seed,
                                    Exec exec = Exec::parallel);

FieldSamples sample_field(const KlBasis& basis, Index count, std::uint64_t seed,
                          Exec exec = Exec::parallel);

/// Eigenvalues, eigenfunctions and a manifest.json recording grid, alpha, tau,
/// ordering, background and amplitude.
void save_basis(const KlBasis& basis, const std::filesystem::path& dir);
KlBasis load_basis(const std::filesystem::path& dir);

}  // namespace memprior
