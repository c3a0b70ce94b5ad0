#include "memprior/helmholtz.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "memprior/errors.hpp"
#include "memprior/log.hpp"

namespace memprior {

using Complex = std::complex<double>;

double HelmholtzConfig::omega() const { return 2.0 * std::numbers::pi * freq_hz; }

double HelmholtzConfig::points_per_wavelength() const {
  const double h = std::max(spacing_x(), spacing_z());
  return velocity_min / (freq_hz * h);
}

namespace {

std::vector<Index> line_positions(Index count, Index lo, Index hi) {
  std::vector<Index> out;
  if (count == 1) {
    out.push_back((lo + hi) / 2);
    return out;
  }
  for (Index i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(count - 1);
    out.push_back(static_cast<Index>(std::lround(static_cast<double>(lo) + t * static_cast<double>(hi - lo))));
  }
  return out;
}

}  // namespace

void HelmholtzConfig::validate() const {
  if (nx < 8 || nz < 8) throw InvalidArgument("Helmholtz grid needs at least 8 nodes per axis");
  if (!(extent_x > 0.0) || !(extent_z > 0.0)) throw InvalidArgument("extent must be positive");
  if (!(freq_hz > 0.0)) throw InvalidArgument("frequency must be positive");
  if (pml_cells < 1) throw InvalidArgument("PML needs at least one cell");
  if (!(pml_strength >= 0.0)) throw InvalidArgument("PML strength must be nonnegative");
  if (n_sources < 1 || n_receivers < 1) throw InvalidArgument("need sources and receivers");
  if (!(background_slowness_sq > 0.0)) throw InvalidArgument("background slowness must be positive");
  if (!(velocity_min > 0.0) || !(velocity_max > velocity_min)) {
    throw InvalidArgument("velocity bounds must satisfy 0 < min < max");
  }
  const Index usable = nx - 2 * edge_margin;
  if (edge_margin < 0 || n_sources > usable || n_receivers > usable) {
    throw InvalidArgument("acquisition lines need " + std::to_string(std::max(n_sources, n_receivers)) +
                          " distinct nodes but only " + std::to_string(usable) + " are available");
  }
  if (source_row < 0 || source_row >= nz || receiver_row_from_bottom < 0 ||
      receiver_row_from_bottom >= nz) {
    throw InvalidArgument("acquisition rows fall outside the grid");
  }
}

std::vector<std::string> HelmholtzConfig::warnings() const {
  std::vector<std::string> out;
  const double ppw = points_per_wavelength();
  if (ppw < 8.0) {
    std::ostringstream os;
    os << "Helmholtz grid resolves only " << ppw << " points per wavelength at "
       << velocity_min << " km/s and " << freq_hz << " Hz (8 recommended)";
    out.push_back(os.str());
  }
  return out;
}

Acquisition make_acquisition(const HelmholtzConfig& cfg) {
  cfg.validate();
  Acquisition acq;
  const Index lo = cfg.edge_margin;
  const Index hi = cfg.nx - 1 - cfg.edge_margin;
  for (Index ix : line_positions(cfg.n_sources, lo, hi)) acq.sources.push_back({ix, cfg.source_row});
  const Index rz = cfg.nz - 1 - cfg.receiver_row_from_bottom;
  for (Index ix : line_positions(cfg.n_receivers, lo, hi)) acq.receivers.push_back({ix, rz});
  return acq;
}

HelmholtzSolver::HelmholtzSolver(HelmholtzConfig cfg, const Eigen::VectorXd& slowness_sq, Exec exec)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  acquisition_ = make_acquisition(cfg_);
  if (slowness_sq.size() != cfg_.nx * cfg_.nz) {
    throw InvalidArgument("slowness field has " + std::to_string(slowness_sq.size()) +
                          " entries, grid has " + std::to_string(cfg_.nx * cfg_.nz));
  }
  if (!slowness_sq.allFinite() || (slowness_sq.array() <= 0.0).any()) {
    throw InvalidModel("squared slowness must be finite and strictly positive everywhere");
  }
  pnx_ = cfg_.nx + 2 * cfg_.pml_cells;
  pnz_ = cfg_.nz + 2 * cfg_.pml_cells;
  assemble(slowness_sq);

  lu_.compute(a_);
  if (lu_.info() != Eigen::Success) {
    throw SolverFailure("Helmholtz LU factorization failed: " + lu_.lastErrorMessage());
  }

  wavefields_.resize(acquisition_.sources.size());
  for_each_index(exec, static_cast<Index>(wavefields_.size()), [&](Index k) {
    wavefields_[static_cast<std::size_t>(k)] =
        point_source_wavefield(acquisition_.sources[static_cast<std::size_t>(k)],
                               cfg_.source_amplitude);
  });
  const double q = cfg_.source_amplitude / (cfg_.spacing_x() * cfg_.spacing_z());
  for (std::size_t k = 0; k < wavefields_.size(); ++k) {
    Eigen::VectorXcd r = a_ * wavefields_[k];
    r[padded_index(acquisition_.sources[k].ix, acquisition_.sources[k].iz)] += q;
    if (q != 0.0) max_residual_ = std::max(max_residual_, r.norm() / std::abs(q));
  }
}

void HelmholtzSolver::assemble(const Eigen::VectorXd& slowness_sq) {
  const Index p = cfg_.pml_cells;
  const double hx = cfg_.spacing_x();
  const double hz = cfg_.spacing_z();
  const double omega = cfg_.omega();
  const double c_ref = 1.0 / std::sqrt(cfg_.background_slowness_sq);
  const double lx = static_cast<double>(p) * hx;
  const double lz = static_cast<double>(p) * hz;
  const double sigma0_x = cfg_.pml_strength * c_ref / lx;
  const double sigma0_z = cfg_.pml_strength * c_ref / lz;
  const double xmax = static_cast<double>(cfg_.nx - 1) * hx;
  const double zmax = static_cast<double>(cfg_.nz - 1) * hz;

  // Stretch factor at padded coordinate `pos` (in units of nodes, may be half-integer).
  auto stretch = [&](double pos, double h, double extent, double length, double sigma0) {
    const double coord = (pos - static_cast<double>(p)) * h;
    const double depth = std::max({0.0, -coord, coord - extent});
    const double ratio = depth / length;
    return Complex(1.0, sigma0 * ratio * ratio / omega);
  };
  auto sx = [&](double pos) { return stretch(pos, hx, xmax, lx, sigma0_x); };
  auto sz = [&](double pos) { return stretch(pos, hz, zmax, lz, sigma0_z); };

  const Index n = pnx_ * pnz_;
  extension_.resize(static_cast<std::size_t>(n));
  mass_weight_.resize(n);
  std::vector<Eigen::Triplet<Complex>> triplets;
  triplets.reserve(static_cast<std::size_t>(5 * n));
  for (Index iz = 0; iz < pnz_; ++iz) {
    for (Index ix = 0; ix < pnx_; ++ix) {
      const Index q = iz * pnx_ + ix;
      const Index px = std::clamp<Index>(ix - p, 0, cfg_.nx - 1);
      const Index pz = std::clamp<Index>(iz - p, 0, cfg_.nz - 1);
      extension_[static_cast<std::size_t>(q)] = pz * cfg_.nx + px;

      const double fx = static_cast<double>(ix);
      const double fz = static_cast<double>(iz);
      const Complex sxc = sx(fx);
      const Complex szc = sz(fz);
      const Complex cxp = szc / sx(fx + 0.5) / (hx * hx);
      const Complex cxm = szc / sx(fx - 0.5) / (hx * hx);
      const Complex czp = sxc / sz(fz + 0.5) / (hz * hz);
      const Complex czm = sxc / sz(fz - 0.5) / (hz * hz);
      mass_weight_[q] = omega * omega * sxc * szc;
      const double s = slowness_sq[extension_[static_cast<std::size_t>(q)]];
      triplets.emplace_back(q, q, -(cxp + cxm + czp + czm) + mass_weight_[q] * s);
      if (ix + 1 < pnx_) triplets.emplace_back(q, q + 1, cxp);
      if (ix > 0) triplets.emplace_back(q, q - 1, cxm);
      if (iz + 1 < pnz_) triplets.emplace_back(q, q + pnx_, czp);
      if (iz > 0) triplets.emplace_back(q, q - pnx_, czm);
    }
  }
  a_.resize(n, n);
  a_.setFromTriplets(triplets.begin(), triplets.end());
  a_.makeCompressed();
}

Eigen::VectorXcd HelmholtzSolver::solve(const Eigen::VectorXcd& rhs) const {
  if (rhs.size() != a_.rows()) throw InvalidArgument("right-hand side has wrong length");
  const double bnorm = rhs.norm();
  if (bnorm == 0.0) return Eigen::VectorXcd::Zero(rhs.size());
  Eigen::VectorXcd u = lu_.solve(rhs);
  const double residual = (a_ * u - rhs).norm() / bnorm;
  if (!(residual < 1e-10)) {
    std::ostringstream os;
    os << "Helmholtz solve residual " << residual << " exceeds 1e-10 (near-singular system; "
       << "log|det A| = " << lu_.logAbsDeterminant() << ")";
    throw SolverFailure(os.str());
  }
  return u;
}

Eigen::VectorXcd HelmholtzSolver::point_source_wavefield(GridNode node, double amplitude) const {
  if (node.ix < 0 || node.ix >= cfg_.nx || node.iz < 0 || node.iz >= cfg_.nz) {
    throw InvalidArgument("source node outside the physical grid");
  }
  Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(a_.rows());
  rhs[padded_index(node.ix, node.iz)] = -amplitude / (cfg_.spacing_x() * cfg_.spacing_z());
  return solve(rhs);
}

Eigen::VectorXcd HelmholtzSolver::physical(const Eigen::VectorXcd& padded) const {
  Eigen::VectorXcd out(cfg_.nx * cfg_.nz);
  for (Index iz = 0; iz < cfg_.nz; ++iz) {
    for (Index ix = 0; ix < cfg_.nx; ++ix) out[iz * cfg_.nx + ix] = padded[padded_index(ix, iz)];
  }
  return out;
}

Eigen::VectorXd HelmholtzSolver::data() const {
  const auto& rec = acquisition_.receivers;
  const Index nr = static_cast<Index>(rec.size());
  Eigen::VectorXd out(cfg_.data_size());
  for (std::size_t k = 0; k < wavefields_.size(); ++k) {
    for (Index j = 0; j < nr; ++j) {
      const Complex v = wavefields_[k][padded_index(rec[static_cast<std::size_t>(j)].ix,
                                                    rec[static_cast<std::size_t>(j)].iz)];
      const Index at = 2 * (static_cast<Index>(k) * nr + j);
      out[at] = v.real();
      out[at + 1] = v.imag();
    }
  }
  return out;
}

Eigen::VectorXd HelmholtzSolver::extend(const Eigen::VectorXd& physical_field) const {
  Eigen::VectorXd out(pnx_ * pnz_);
  for (Index q = 0; q < out.size(); ++q) out[q] = physical_field[extension_[static_cast<std::size_t>(q)]];
  return out;
}

Eigen::VectorXd HelmholtzSolver::restrict_sum(const Eigen::VectorXd& padded_field) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(cfg_.nx * cfg_.nz);
  for (Index q = 0; q < padded_field.size(); ++q) {
    out[extension_[static_cast<std::size_t>(q)]] += padded_field[q];
  }
  return out;
}

Eigen::VectorXd HelmholtzSolver::born(const Eigen::VectorXd& perturbation, Exec exec) const {
  if (perturbation.size() != cfg_.nx * cfg_.nz) throw InvalidArgument("perturbation has wrong length");
  const Eigen::VectorXd ds = extend(perturbation);
  const auto& rec = acquisition_.receivers;
  const Index nr = static_cast<Index>(rec.size());
  Eigen::VectorXd out(cfg_.data_size());
  for_each_index(exec, static_cast<Index>(wavefields_.size()), [&](Index k) {
    const auto& u = wavefields_[static_cast<std::size_t>(k)];
    // A du = -(dA) u with dA = diag(omega^2 s_x s_z ds).
    const Eigen::VectorXcd rhs = -(mass_weight_.array() * ds.array().cast<Complex>() * u.array()).matrix();
    const Eigen::VectorXcd du = solve(rhs);
    for (Index j = 0; j < nr; ++j) {
      const Complex v = du[padded_index(rec[static_cast<std::size_t>(j)].ix, rec[static_cast<std::size_t>(j)].iz)];
      out[2 * (k * nr + j)] = v.real();
      out[2 * (k * nr + j) + 1] = v.imag();
    }
  });
  return out;
}

Eigen::VectorXd HelmholtzSolver::adjoint(const Eigen::VectorXd& data_weights, Exec exec) const {
  if (data_weights.size() != cfg_.data_size()) throw InvalidArgument("data vector has wrong length");
  const auto& rec = acquisition_.receivers;
  const Index nr = static_cast<Index>(rec.size());
  const Index ns = static_cast<Index>(wavefields_.size());
  Eigen::MatrixXd per_source(pnx_ * pnz_, ns);
  for_each_index(exec, ns, [&](Index k) {
    // lambda = A^{-T} P^T conj(w) = A^{-1} P^T conj(w) since A is symmetric.
    Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(a_.rows());
    for (Index j = 0; j < nr; ++j) {
      const Index at = 2 * (k * nr + j);
      rhs[padded_index(rec[static_cast<std::size_t>(j)].ix, rec[static_cast<std::size_t>(j)].iz)] +=
          Complex(data_weights[at], -data_weights[at + 1]);
    }
    const Eigen::VectorXcd lambda = solve(rhs);
    per_source.col(k) =
        (-(mass_weight_.array() * lambda.array() * wavefields_[static_cast<std::size_t>(k)].array()))
            .real()
            .matrix();
  });
  return restrict_sum(per_source.rowwise().sum());
}

Eigen::VectorXd solve_forward(const HelmholtzConfig& cfg, const Eigen::VectorXd& slowness_sq) {
  return HelmholtzSolver(cfg, slowness_sq).data();
}

Eigen::VectorXd adjoint_state_vjp(const HelmholtzConfig& cfg, const Eigen::VectorXd& slowness_sq,
                                  const Eigen::VectorXd& v) {
  return HelmholtzSolver(cfg, slowness_sq).adjoint(v);
}

Eigen::VectorXd jvp_via_born(const HelmholtzConfig& cfg, const Eigen::VectorXd& slowness_sq,
                             const Eigen::VectorXd& u) {
  return HelmholtzSolver(cfg, slowness_sq).born(u);
}

namespace {

class HelmholtzLinearization final : public Linearization {
 public:
  HelmholtzLinearization(const KlBasis& basis, Eigen::VectorXd slowness, Eigen::VectorXd mask,
                         const HelmholtzConfig& cfg, Exec exec)
      : basis_(basis),
        mask_(std::move(mask)),
        solver_(std::make_unique<HelmholtzSolver>(cfg, slowness, exec)),
        value_(solver_->data()),
        exec_(exec) {}

  const Eigen::VectorXd& value() const override { return value_; }
  Eigen::VectorXd jvp(const Eigen::VectorXd& u) const override {
    if (u.size() != basis_.n_terms()) throw InvalidArgument("jvp direction has wrong length");
    return solver_->born(mask_.cwiseProduct(basis_.synthesize_perturbation(u)), exec_);
  }
  Eigen::VectorXd vjp(const Eigen::VectorXd& v) const override {
    return basis_.synthesize_adjoint(mask_.cwiseProduct(solver_->adjoint(v, exec_)));
  }
  Index model_dim() const override { return basis_.n_terms(); }

 private:
  const KlBasis& basis_;
  Eigen::VectorXd mask_;
  std::unique_ptr<HelmholtzSolver> solver_;
  Eigen::VectorXd value_;
  Exec exec_;
};

}  // namespace

HelmholtzKlOperator::HelmholtzKlOperator(HelmholtzConfig cfg, std::shared_ptr<const KlBasis> basis,
                                         double gamma, Exec solve_exec)
    : ForwardOperator("helmholtz-kl", basis ? basis->n_terms() : 0, cfg.data_size(), gamma),
      cfg_(std::move(cfg)),
      basis_(std::move(basis)),
      solve_exec_(solve_exec) {
  cfg_.validate();
  if (basis_->nx() != cfg_.nx || basis_->nz() != cfg_.nz) {
    throw InvalidArgument("KL basis grid does not match the Helmholtz grid");
  }
  for (const auto& w : cfg_.warnings()) warn_once("helmholtz-ppw", w);
}

Eigen::VectorXd HelmholtzKlOperator::slowness(const Eigen::VectorXd& coefficients) const {
  check_model(coefficients);
  const double lo = 1.0 / (cfg_.velocity_max * cfg_.velocity_max);
  const double hi = 1.0 / (cfg_.velocity_min * cfg_.velocity_min);
  Eigen::VectorXd s = basis_->synthesize(coefficients);
  if (!s.allFinite()) throw InvalidModel("KL synthesis produced non-finite slowness");
  if ((s.array() < lo).any() || (s.array() > hi).any()) {
    warn_once("helmholtz-clamp", "KL model leaves the admissible velocity range; clamping to [" +
                                     std::to_string(cfg_.velocity_min) + ", " +
                                     std::to_string(cfg_.velocity_max) + "] km/s");
  }
  return s.cwiseMax(lo).cwiseMin(hi);
}

namespace {

Eigen::VectorXd unclamped_mask(const Eigen::VectorXd& raw, const HelmholtzConfig& cfg) {
  const double lo = 1.0 / (cfg.velocity_max * cfg.velocity_max);
  const double hi = 1.0 / (cfg.velocity_min * cfg.velocity_min);
  return ((raw.array() >= lo) && (raw.array() <= hi)).cast<double>();
}

}  // namespace

Eigen::VectorXd HelmholtzKlOperator::evaluate(const Eigen::VectorXd& x) const {
  return HelmholtzSolver(cfg_, slowness(x), solve_exec_).data();
}

Eigen::VectorXd HelmholtzKlOperator::jacobian_vector(const Eigen::VectorXd& x,
                                                     const Eigen::VectorXd& u) const {
  check_model(u);
  return linearize(x)->jvp(u);
}

Eigen::VectorXd HelmholtzKlOperator::adjoint_jacobian_vector(const Eigen::VectorXd& x,
                                                             const Eigen::VectorXd& v) const {
  check_data(v);
  return linearize(x)->vjp(v);
}

std::unique_ptr<Linearization> HelmholtzKlOperator::linearize(const Eigen::VectorXd& x) const {
  check_model(x);
  const Eigen::VectorXd raw = basis_->synthesize(x);
  return std::make_unique<HelmholtzLinearization>(*basis_, slowness(x), unclamped_mask(raw, cfg_),
                                                  cfg_, solve_exec_);
}

std::shared_ptr<const HelmholtzKlOperator> compose_with_kl(const HelmholtzConfig& cfg,
                                                           std::shared_ptr<const KlBasis> basis,
                                                           double gamma, Exec solve_exec) {
  if (!basis) throw InvalidArgument("compose_with_kl needs a basis");
  return std::make_shared<HelmholtzKlOperator>(cfg, std::move(basis), gamma, solve_exec);
}

double relative_noise_gamma(const Eigen::VectorXd& clean_data, double relative) {
  if (!(relative > 0.0)) throw InvalidArgument("relative noise must be positive");
  return relative * clean_data.norm() / std::sqrt(static_cast<double>(clean_data.size()));
}

}  // namespace memprior
