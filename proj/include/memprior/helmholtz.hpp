#pragma once

// 2-D frequency-domain Helmholtz modeling with a complex-stretched PML.
//
// Units: km, s, s^2/km^2 for squared slowness. The physical grid has nx x nz
// nodes spanning [0, extent_x] x [0, extent_z] (z downward); the PML adds
// pml_cells nodes on every side. After multiplying through by the stretch
// factors the operator
//
//   A(s) u = d_x (s_z/s_x d_x u) + d_z (s_x/s_z d_z u) + omega^2 s_x s_z s u
//
// is complex symmetric, so one LU factorization serves forward, Born and
// adjoint solves. Sources solve A u = -q with q a discrete delta of unit
// strength (amplitude / (h_x h_z) at one node); in a homogeneous medium u
// approximates the outgoing Green's function (i/4) H0^(1)(omega sqrt(s) r).

#include <complex>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "memprior/forward_ops.hpp"
#include "memprior/klfield.hpp"

namespace memprior {

struct HelmholtzConfig {
  Index nx = 200;
  Index nz = 200;
  double extent_x = 2.0;  // km
  double extent_z = 2.0;  // km
  double freq_hz = 6.0;
  Index pml_cells = 20;
  /// sigma_0 * L / c_ref for the quadratic damping profile sigma_0 (d/L)^2.
  double pml_strength = 12.0;
  Index n_sources = 15;
  Index n_receivers = 196;
  Index source_row = 2;         // nodes below the top edge
  Index receiver_row_from_bottom = 2;
  Index edge_margin = 2;        // columns kept clear at both ends of a line
  double background_slowness_sq = 0.25;
  double velocity_min = 1.5;
  double velocity_max = 3.5;
  double source_amplitude = 1.0;

  double spacing_x() const { return extent_x / static_cast<double>(nx - 1); }
  double spacing_z() const { return extent_z / static_cast<double>(nz - 1); }
  double omega() const;
  Index data_size() const { return 2 * n_sources * n_receivers; }
  /// Points per wavelength at the slowest admissible velocity.
  double points_per_wavelength() const;

  /// Throws InvalidArgument on an unusable configuration.
  void validate() const;
  /// Non-fatal findings (e.g. fewer than 8 points per wavelength).
  std::vector<std::string> warnings() const;
};

struct GridNode {
  Index ix = 0;
  Index iz = 0;
};

struct Acquisition {
  std::vector<GridNode> sources;
  std::vector<GridNode> receivers;
};

Acquisition make_acquisition(const HelmholtzConfig& cfg);

/// Assembled and factorized A(s) for one squared-slowness field, with the
/// source wavefields already solved. Immutable after construction and safe to
/// share read-only between threads.
class HelmholtzSolver {
 public:
  using Complex = std::complex<double>;
  using SparseMatrix = Eigen::SparseMatrix<Complex>;

  /// `slowness_sq` has nx * nz entries, node (ix, iz) at iz * nx + ix.
  HelmholtzSolver(HelmholtzConfig cfg, const Eigen::VectorXd& slowness_sq,
                  Exec exec = Exec::parallel);

  HelmholtzSolver(const HelmholtzSolver&) = delete;
  HelmholtzSolver& operator=(const HelmholtzSolver&) = delete;

  const HelmholtzConfig& config() const { return cfg_; }
  const Acquisition& acquisition() const { return acquisition_; }
  Index padded_nx() const { return pnx_; }
  Index padded_nz() const { return pnz_; }
  Index padded_index(Index ix, Index iz) const {
    return (iz + cfg_.pml_cells) * pnx_ + (ix + cfg_.pml_cells);
  }
  const SparseMatrix& matrix() const { return a_; }

  /// Solves A u = rhs on the padded grid; throws SolverFailure when the
  /// relative residual exceeds 1e-10.
  Eigen::VectorXcd solve(const Eigen::VectorXcd& rhs) const;
  /// Wavefield of a unit point source at physical node (ix, iz).
  Eigen::VectorXcd point_source_wavefield(GridNode node, double amplitude = 1.0) const;
  /// Restriction of a padded field to the nx * nz physical grid.
  Eigen::VectorXcd physical(const Eigen::VectorXcd& padded) const;

  const std::vector<Eigen::VectorXcd>& wavefields() const { return wavefields_; }
  /// Receiver samples for all sources, (re, im) interleaved, source-major.
  Eigen::VectorXd data() const;
  /// Linearized data for a squared-slowness perturbation on the physical grid.
  Eigen::VectorXd born(const Eigen::VectorXd& perturbation, Exec exec = Exec::parallel) const;
  /// Adjoint-state gradient: J^T v on the physical grid.
  Eigen::VectorXd adjoint(const Eigen::VectorXd& data_weights, Exec exec = Exec::parallel) const;

  /// Largest relative residual over the source solves.
  double max_residual() const { return max_residual_; }

 private:
  void assemble(const Eigen::VectorXd& slowness_sq);
  Eigen::VectorXd extend(const Eigen::VectorXd& physical_field) const;
  Eigen::VectorXd restrict_sum(const Eigen::VectorXd& padded_field) const;

  HelmholtzConfig cfg_;
  Acquisition acquisition_;
  Index pnx_;
  Index pnz_;
  std::vector<Index> extension_;     // padded node -> physical node
  Eigen::VectorXcd mass_weight_;     // omega^2 s_x s_z per padded node
  SparseMatrix a_;
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_;
  std::vector<Eigen::VectorXcd> wavefields_;
  double max_residual_ = 0.0;
};

Eigen::VectorXd solve_forward(const HelmholtzConfig& cfg, const Eigen::VectorXd& slowness_sq);
Eigen::VectorXd adjoint_state_vjp(const HelmholtzConfig& cfg, const Eigen::VectorXd& slowness_sq,
                                  const Eigen::VectorXd& v);
Eigen::VectorXd jvp_via_born(const HelmholtzConfig& cfg, const Eigen::VectorXd& slowness_sq,
                             const Eigen::VectorXd& u);

/// Helmholtz data as a function of whitened KL coefficients:
/// F(c) = solve_forward(cfg, clamp(synthesize(c))), with the clamp keeping
/// velocities inside [velocity_min, velocity_max]. Clamped nodes contribute
/// zero derivative.
class HelmholtzKlOperator final : public ForwardOperator {
 public:
  HelmholtzKlOperator(HelmholtzConfig cfg, std::shared_ptr<const KlBasis> basis, double gamma,
                      Exec solve_exec = Exec::serial);

  const HelmholtzConfig& config() const { return cfg_; }
  const KlBasis& basis() const { return *basis_; }

  /// Squared slowness after clamping, and the mask of unclamped nodes.
  Eigen::VectorXd slowness(const Eigen::VectorXd& coefficients) const;

  Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd jacobian_vector(const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& u) const override;
  Eigen::VectorXd adjoint_jacobian_vector(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& v) const override;
  std::unique_ptr<Linearization> linearize(const Eigen::VectorXd& x) const override;

 private:
  HelmholtzConfig cfg_;
  std::shared_ptr<const KlBasis> basis_;
  Exec solve_exec_;
};

std::shared_ptr<const HelmholtzKlOperator> compose_with_kl(const HelmholtzConfig& cfg,
                                                           std::shared_ptr<const KlBasis> basis,
                                                           double gamma,
                                                           Exec solve_exec = Exec::serial);

/// gamma = relative * ||F(x_true)|| / sqrt(m): per-component noise for a
/// prescribed relative noise level.
double relative_noise_gamma(const Eigen::VectorXd& clean_data, double relative);

}  // namespace memprior
