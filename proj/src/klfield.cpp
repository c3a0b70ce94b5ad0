#include "memprior/klfield.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "memprior/errors.hpp"
#include "memprior/matrix_io.hpp"

namespace memprior {

namespace {

Eigen::VectorXd trapezoid_weights_1d(Index n) {
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n - 1));
  w[0] *= 0.5;
  w[n - 1] *= 0.5;
  return w;
}

}  // namespace

double kl_eigenvalue(int j, int k, double alpha, double tau) {
  const double pi2 = std::numbers::pi * std::numbers::pi;
  return std::pow(tau * tau + pi2 * static_cast<double>(j * j + k * k), -alpha);
}

KlBasis::KlBasis(Index nx, Index nz, double alpha, double tau, std::vector<KlMode> modes,
                 Eigen::VectorXd eigenvalues, Eigen::MatrixXd eigenfunctions, double background,
                 double amplitude)
    : nx_(nx),
      nz_(nz),
      alpha_(alpha),
      tau_(tau),
      modes_(std::move(modes)),
      eigenvalues_(std::move(eigenvalues)),
      eigenfunctions_(std::move(eigenfunctions)),
      background_(background),
      amplitude_(amplitude) {
  if (nx < 2 || nz < 2) throw InvalidArgument("KL grid needs at least 2 nodes per axis");
  if (eigenfunctions_.rows() != nx * nz || eigenfunctions_.cols() != eigenvalues_.size() ||
      static_cast<Index>(modes_.size()) != eigenvalues_.size()) {
    throw InvalidArgument("KL basis arrays have inconsistent shapes");
  }
  if ((eigenvalues_.array() <= 0.0).any()) throw InvalidArgument("KL eigenvalues must be positive");
  if (!(amplitude > 0.0)) throw InvalidArgument("KL amplitude must be positive");
  const Eigen::VectorXd wx = trapezoid_weights_1d(nx);
  const Eigen::VectorXd wz = trapezoid_weights_1d(nz);
  weights_.resize(nx * nz);
  for (Index iz = 0; iz < nz; ++iz) {
    for (Index ix = 0; ix < nx; ++ix) weights_[iz * nx + ix] = wx[ix] * wz[iz];
  }
  sqrt_eigenvalues_ = eigenvalues_.array().sqrt();
}

Eigen::VectorXd KlBasis::synthesize_perturbation(const Eigen::VectorXd& xi) const {
  if (xi.size() != n_terms()) throw InvalidArgument("coefficient vector has wrong length");
  return eigenfunctions_ * (amplitude_ * sqrt_eigenvalues_.cwiseProduct(xi));
}

Eigen::VectorXd KlBasis::synthesize_adjoint(const Eigen::VectorXd& field) const {
  if (field.size() != grid_size()) throw InvalidArgument("field has wrong length");
  return amplitude_ * sqrt_eigenvalues_.cwiseProduct(eigenfunctions_.transpose() * field);
}

Eigen::VectorXd KlBasis::synthesize(const Eigen::VectorXd& xi) const {
  Eigen::VectorXd f = synthesize_perturbation(xi);
  f.array() += background_;
  return f;
}

Eigen::VectorXd KlBasis::project(const Eigen::VectorXd& field) const {
  if (field.size() != grid_size()) throw InvalidArgument("field has wrong length");
  const Eigen::VectorXd centered = (field.array() - background_).matrix();
  const Eigen::VectorXd inner = eigenfunctions_.transpose() * weights_.cwiseProduct(centered);
  return inner.cwiseQuotient(amplitude_ * sqrt_eigenvalues_);
}

Eigen::MatrixXd KlBasis::gram() const {
  return eigenfunctions_.transpose() * weights_.asDiagonal() * eigenfunctions_;
}

KlBasis KlBasis::with_amplitude(double amplitude) const {
  return KlBasis(nx_, nz_, alpha_, tau_, modes_, eigenvalues_, eigenfunctions_, background_,
                 amplitude);
}

KlBasis KlBasis::with_background(double background) const {
  return KlBasis(nx_, nz_, alpha_, tau_, modes_, eigenvalues_, eigenfunctions_, background,
                 amplitude_);
}

KlBasis build_basis(Index nx, Index nz, double alpha, double tau, Index n_terms, double background,
                    double amplitude) {
  if (nx < 2 || nz < 2) throw InvalidArgument("KL grid needs at least 2 nodes per axis");
  if (!(alpha > 0.0) || !(tau > 0.0)) throw InvalidArgument("alpha and tau must be positive");
  if (n_terms < 1 || n_terms > nx * nz) {
    throw InvalidArgument("requested " + std::to_string(n_terms) + " KL terms but the " +
                          std::to_string(nx) + "x" + std::to_string(nz) + " grid resolves only " +
                          std::to_string(nx * nz));
  }
  std::vector<KlMode> all;
  all.reserve(static_cast<std::size_t>(nx * nz));
  for (int j = 0; j < nx; ++j) {
    for (int k = 0; k < nz; ++k) all.push_back({j, k});
  }
  // lambda depends on j^2 + k^2 only, so sorting on that integer is exact.
  std::sort(all.begin(), all.end(), [](const KlMode& a, const KlMode& b) {
    const int ra = a.j * a.j + a.k * a.k;
    const int rb = b.j * b.j + b.k * b.k;
    if (ra != rb) return ra < rb;
    if (a.j != b.j) return a.j < b.j;
    return a.k < b.k;
  });
  all.resize(static_cast<std::size_t>(n_terms));

  const Eigen::VectorXd wx = trapezoid_weights_1d(nx);
  const Eigen::VectorXd wz = trapezoid_weights_1d(nz);
  Eigen::VectorXd values(n_terms);
  Eigen::MatrixXd functions(nx * nz, n_terms);
  for (Index i = 0; i < n_terms; ++i) {
    const auto [j, k] = all[static_cast<std::size_t>(i)];
    values[i] = kl_eigenvalue(j, k, alpha, tau);
    Eigen::VectorXd cx(nx), cz(nz);
    for (Index ix = 0; ix < nx; ++ix) {
      cx[ix] = std::cos(j * std::numbers::pi * static_cast<double>(ix) / static_cast<double>(nx - 1));
    }
    for (Index iz = 0; iz < nz; ++iz) {
      cz[iz] = std::cos(k * std::numbers::pi * static_cast<double>(iz) / static_cast<double>(nz - 1));
    }
    // Separable trapezoid norm; the cosines are exactly orthogonal under it.
    const double norm = std::sqrt(cx.cwiseAbs2().dot(wx) * cz.cwiseAbs2().dot(wz));
    for (Index iz = 0; iz < nz; ++iz) {
      functions.col(i).segment(iz * nx, nx) = cx * (cz[iz] / norm);
    }
  }
  return KlBasis(nx, nz, alpha, tau, std::move(all), std::move(values), std::move(functions),
                 background, amplitude);
}

Eigen::MatrixXd sample_coefficients(Index n_terms, Index count, std::uint64_t seed, Exec exec) {
  if (count < 1) throw InvalidArgument("sample count must be >= 1");
  Eigen::MatrixXd out(count, n_terms);
  for_each_index(exec, count, [&](Index i) {
    auto rng = stream_rng(seed, static_cast<std::uint64_t>(i));
    std::normal_distribution<double> normal;
    for (Index t = 0; t < n_terms; ++t) out(i, t) = normal(rng);
  });
  return out;
}

FieldSamples sample_field(const KlBasis& basis, Index count, std::uint64_t seed, Exec exec) {
  FieldSamples out;
  out.coefficients = sample_coefficients(basis.n_terms(), count, seed, exec);
  out.fields.resize(count, basis.grid_size());
  for_each_index(exec, count, [&](Index i) {
    out.fields.row(i) = basis.synthesize(out.coefficients.row(i).transpose()).transpose();
  });
  return out;
}

void save_basis(const KlBasis& basis, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_vector(dir / "eigenvalues.mpst", basis.eigenvalues());
  io::write_matrix(dir / "eigenfunctions.mpst", basis.eigenfunctions());
  nlohmann::json modes = nlohmann::json::array();
  for (const auto& m : basis.modes()) modes.push_back({m.j, m.k});
  nlohmann::json manifest = {
      {"kind", "kl-basis"},
      {"nx", basis.nx()},
      {"nz", basis.nz()},
      {"alpha", basis.alpha()},
      {"tau", basis.tau()},
      {"n_terms", basis.n_terms()},
      {"background", basis.background()},
      {"amplitude", basis.amplitude()},
      {"ordering", "eigenvalue-descending, ties by (j,k) lexicographic"},
      {"modes", modes},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

KlBasis load_basis(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("missing KL manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad KL manifest: " + std::string(e.what()));
  }
  std::vector<KlMode> modes;
  for (const auto& m : manifest.at("modes")) modes.push_back({m.at(0).get<int>(), m.at(1).get<int>()});
  return KlBasis(manifest.at("nx").get<Index>(), manifest.at("nz").get<Index>(),
                 manifest.at("alpha").get<double>(), manifest.at("tau").get<double>(),
                 std::move(modes), io::read_vector(dir / "eigenvalues.mpst"),
                 io::read_matrix(dir / "eigenfunctions.mpst"),
                 manifest.at("background").get<double>(), manifest.at("amplitude").get<double>());
}

}  // namespace memprior
