#include "memprior/posteriors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "memprior/errors.hpp"
#include "memprior/matrix_io.hpp"

namespace memprior {

double log_sum_exp(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw InvalidArgument("log_sum_exp of an empty vector");
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

Eigen::VectorXd softmax(const Eigen::VectorXd& v) {
  const double lse = log_sum_exp(v);
  return (v.array() - lse).exp().matrix();
}

namespace {

void check_observation(const ForwardOperator& op, const TrainingSet& training,
                       const Observation& obs) {
  if (training.dim() != op.model_dim()) {
    throw InvalidArgument("training examples have dimension " + std::to_string(training.dim()) +
                          ", operator '" + op.name() + "' expects " +
                          std::to_string(op.model_dim()));
  }
  if (obs.y.size() != op.data_dim()) {
    throw InvalidArgument("observation has size " + std::to_string(obs.y.size()) +
                          ", operator produces " + std::to_string(op.data_dim()));
  }
}

}  // namespace

LookupTable lookup_table_weights(const TrainingSet& training, const ForwardOperator& op,
                                 const Observation& obs, Exec exec) {
  check_observation(op, training, obs);
  LookupTable out;
  out.misfits.resize(training.size());
  for_each_index(exec, training.size(), [&](Index n) {
    out.misfits[n] = (op.evaluate(training.example(n)) - obs.y).squaredNorm();
  });
  const double g2 = op.gamma() * op.gamma();
  out.weights = softmax((-0.5 / g2) * out.misfits);
  return out;
}

// ---------------------------------------------------------------------------

Index GridSpec::size() const {
  Index n = 1;
  for (const auto& a : axes) n *= a.points;
  return n;
}

Eigen::VectorXd GridSpec::node(Index q) const {
  Eigen::VectorXd x(dim());
  for (Index k = 0; k < dim(); ++k) {
    const auto& a = axes[static_cast<std::size_t>(k)];
    x[k] = a.at(q % a.points);
    q /= a.points;
  }
  return x;
}

double GridSpec::weight(Index q) const {
  double w = 1.0;
  for (const auto& a : axes) {
    const Index i = q % a.points;
    w *= (i == 0 || i == a.points - 1) ? 0.5 * a.spacing() : a.spacing();
    q /= a.points;
  }
  return w;
}

GridSpec GridSpec::covering(const TrainingSet& training, double sigma, double pad_sigmas,
                            const std::vector<Eigen::VectorXd>& extra, Index points) {
  const Index d = training.dim();
  if (d > 2) throw UnsupportedDimension("grids are limited to 1 or 2 dimensions");
  if (points == 0) points = d == 1 ? 2001 : 401;
  if (points < 2) throw InvalidArgument("grid needs at least 2 points per axis");
  Eigen::VectorXd lo = training.examples().colwise().minCoeff().transpose();
  Eigen::VectorXd hi = training.examples().colwise().maxCoeff().transpose();
  for (const auto& e : extra) {
    if (e.size() != d) throw InvalidArgument("extra grid point has wrong dimension");
    lo = lo.cwiseMin(e);
    hi = hi.cwiseMax(e);
  }
  GridSpec g;
  for (Index k = 0; k < d; ++k) g.axes.push_back({lo[k] - pad_sigmas * sigma, hi[k] + pad_sigmas * sigma, points});
  return g;
}

GridPosterior::GridPosterior(GridSpec grid, Eigen::VectorXd log_unnormalized)
    : grid_(std::move(grid)), log_unnormalized_(std::move(log_unnormalized)) {
  if (log_unnormalized_.size() != grid_.size()) throw InvalidArgument("grid values have wrong length");
  Eigen::VectorXd shifted(grid_.size());
  for (Index q = 0; q < grid_.size(); ++q) {
    shifted[q] = log_unnormalized_[q] + std::log(grid_.weight(q));
  }
  log_normalizer_ = log_sum_exp(shifted);
  if (!std::isfinite(log_normalizer_)) throw InternalConsistency("grid density cannot be normalized");
  density_ = (log_unnormalized_.array() - log_normalizer_).exp().matrix();
}

double GridPosterior::integral() const {
  double s = 0.0;
  for (Index q = 0; q < grid_.size(); ++q) s += grid_.weight(q) * density_[q];
  return s;
}

Eigen::VectorXd GridPosterior::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(grid_.dim());
  for (Index q = 0; q < grid_.size(); ++q) m += grid_.weight(q) * density_[q] * grid_.node(q);
  return m;
}

Eigen::MatrixXd GridPosterior::covariance() const {
  const Eigen::VectorXd mu = mean();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(grid_.dim(), grid_.dim());
  for (Index q = 0; q < grid_.size(); ++q) {
    const Eigen::VectorXd dx = grid_.node(q) - mu;
    c += grid_.weight(q) * density_[q] * dx * dx.transpose();
  }
  return c;
}

double GridPosterior::mass_within(const Eigen::MatrixXd& centers, double radius) const {
  if (centers.cols() != grid_.dim()) throw InvalidArgument("centers have wrong dimension");
  if (!(radius >= 0.0)) throw InvalidArgument("radius must be nonnegative");
  if (grid_.dim() == 1) {
    std::vector<std::pair<double, double>> spans;
    for (Index n = 0; n < centers.rows(); ++n) spans.emplace_back(centers(n, 0) - radius, centers(n, 0) + radius);
    std::sort(spans.begin(), spans.end());
    std::vector<std::pair<double, double>> merged;
    for (const auto& s : spans) {
      if (!merged.empty() && s.first <= merged.back().second) {
        merged.back().second = std::max(merged.back().second, s.second);
      } else {
        merged.push_back(s);
      }
    }
    const GridAxis& ax = grid_.axes[0];
    const double h = ax.spacing();
    double total = 0.0;
    for (Index i = 0; i + 1 < ax.points; ++i) {
      const double a = ax.at(i);
      const double b = ax.at(i + 1);
      const double fa = density_[i];
      const double fb = density_[i + 1];
      auto f = [&](double x) { return fa + (fb - fa) * (x - a) / h; };
      for (const auto& [u, v] : merged) {
        const double l = std::max(a, u);
        const double r = std::min(b, v);
        if (r > l) total += 0.5 * (r - l) * (f(l) + f(r));
      }
    }
    return total;
  }
  double total = 0.0;
  for (Index q = 0; q < grid_.size(); ++q) {
    const Eigen::VectorXd x = grid_.node(q);
    const double nearest = (centers.rowwise() - x.transpose()).rowwise().norm().minCoeff();
    if (nearest <= radius) total += grid_.weight(q) * density_[q];
  }
  return total;
}

double GridPosterior::total_variation(const Eigen::VectorXd& other) const {
  if (other.size() != grid_.size()) throw InvalidArgument("density has wrong length");
  double s = 0.0;
  for (Index q = 0; q < grid_.size(); ++q) s += grid_.weight(q) * std::abs(density_[q] - other[q]);
  return 0.5 * s;
}

GridPosterior grid_oracle(const TrainingSet& training, const ForwardOperator& op,
                          const Observation& obs, double sigma, const GridSpec& grid, Exec exec) {
  check_observation(op, training, obs);
  if (training.dim() > 2) {
    throw UnsupportedDimension("grid oracle supports d = 1 or 2, got d = " +
                               std::to_string(training.dim()));
  }
  if (grid.dim() != training.dim()) throw InvalidArgument("grid dimension does not match the model");
  if (!(sigma > 0.0)) throw DegenerateSchedule("grid oracle needs sigma > 0");
  const double g2 = op.gamma() * op.gamma();
  Eigen::VectorXd logp(grid.size());
  for_each_index(exec, grid.size(), [&](Index q) {
    const Eigen::VectorXd x = grid.node(q);
    logp[q] = -0.5 * (op.evaluate(x) - obs.y).squaredNorm() / g2 +
              mixture_log_density(training.examples(), x, 1.0, sigma);
  });
  return GridPosterior(grid, std::move(logp));
}

// ---------------------------------------------------------------------------

Eigen::VectorXd MixturePosterior::weights() const {
  Eigen::VectorXd w(size());
  for (Index k = 0; k < size(); ++k) w[k] = components[static_cast<std::size_t>(k)].weight;
  return w;
}

namespace {

double gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                            const Eigen::LLT<Eigen::MatrixXd>& chol) {
  const Eigen::VectorXd z = chol.matrixL().solve(x - mean);
  const double logdet = 2.0 * chol.matrixLLT().diagonal().array().log().sum();
  return -0.5 * z.squaredNorm() - 0.5 * logdet -
         0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

std::vector<Eigen::LLT<Eigen::MatrixXd>> factor_components(const MixturePosterior& p) {
  std::vector<Eigen::LLT<Eigen::MatrixXd>> out;
  out.reserve(p.components.size());
  for (const auto& c : p.components) {
    out.emplace_back(c.covariance);
    if (out.back().info() != Eigen::Success) {
      throw InternalConsistency("mixture component covariance is not positive definite");
    }
  }
  return out;
}

double mixture_log_density_with(const MixturePosterior& p,
                                 const std::vector<Eigen::LLT<Eigen::MatrixXd>>& chols,
                                 const Eigen::VectorXd& x) {
  Eigen::VectorXd terms(p.size());
  for (Index k = 0; k < p.size(); ++k) {
    const auto& c = p.components[static_cast<std::size_t>(k)];
    terms[k] = c.log_weight + gaussian_log_density(x, c.mean, chols[static_cast<std::size_t>(k)]);
  }
  return log_sum_exp(terms);
}

}  // namespace

double MixturePosterior::log_density(const Eigen::VectorXd& x) const {
  if (x.size() != dim()) throw InvalidArgument("point has wrong dimension");
  return mixture_log_density_with(*this, factor_components(*this), x);
}

Eigen::VectorXd MixturePosterior::density_on(const GridSpec& grid, Exec exec) const {
  if (grid.dim() != dim()) throw InvalidArgument("grid dimension does not match the mixture");
  const auto chols = factor_components(*this);
  Eigen::VectorXd out(grid.size());
  for_each_index(exec, grid.size(), [&](Index q) {
    out[q] = std::exp(mixture_log_density_with(*this, chols, grid.node(q)));
  });
  return out;
}

MixturePosterior linearized_mixture(const TrainingSet& training, const ForwardOperator& op,
                                    const Observation& obs, double sigma, MahalanobisRoute route,
                                    Exec exec) {
  check_observation(op, training, obs);
  if (!(sigma > 0.0)) throw DegenerateSchedule("linearized mixture needs sigma > 0");
  const Index d = training.dim();
  const Index m = op.data_dim();
  const double s2 = sigma * sigma;
  const double g2 = op.gamma() * op.gamma();
  if (route == MahalanobisRoute::automatic) {
    route = m <= d ? MahalanobisRoute::data_space : MahalanobisRoute::model_space;
  }

  MixturePosterior post;
  post.components.resize(static_cast<std::size_t>(training.size()));
  Eigen::VectorXd log_w(training.size());
  for_each_index(exec, training.size(), [&](Index n) {
    const Eigen::VectorXd xn = training.example(n);
    const auto lin = op.linearize(xn);
    const Eigen::MatrixXd jac = op.has_dense_jacobian() ? op.dense_jacobian(xn) : lin->jacobian();
    const Eigen::VectorXd r = obs.y - lin->value();
    const Eigen::VectorXd jtr = jac.transpose() * r;

    Eigen::MatrixXd precision = jac.transpose() * jac / g2;
    precision.diagonal().array() += 1.0 / s2;
    Eigen::LLT<Eigen::MatrixXd> pchol(precision);
    if (pchol.info() != Eigen::Success) {
      throw InternalConsistency("component " + std::to_string(n) +
                                ": posterior precision is not positive definite");
    }
    Eigen::MatrixXd cov = pchol.solve(Eigen::MatrixXd::Identity(d, d));
    cov = 0.5 * (cov + cov.transpose());

    double quad = 0.0;
    double logdet = 0.0;
    if (route == MahalanobisRoute::data_space) {
      Eigen::MatrixXd c = s2 * jac * jac.transpose();
      c.diagonal().array() += g2;
      Eigen::LLT<Eigen::MatrixXd> cchol(c);
      if (cchol.info() != Eigen::Success) {
        throw InternalConsistency("component " + std::to_string(n) +
                                  ": marginal data covariance is not positive definite");
      }
      quad = r.dot(cchol.solve(r));
      logdet = 2.0 * cchol.matrixLLT().diagonal().array().log().sum();
    } else {
      // C^-1 = g^-2 I - g^-4 J Sigma J^T ; det C = g^2m s^2d det(P).
      quad = r.squaredNorm() / g2 - jtr.dot(pchol.solve(jtr)) / (g2 * g2);
      logdet = static_cast<double>(m) * std::log(g2) + static_cast<double>(d) * std::log(s2) +
               2.0 * pchol.matrixLLT().diagonal().array().log().sum();
    }

    auto& comp = post.components[static_cast<std::size_t>(n)];
    comp.mean = xn + cov * jtr / g2;
    comp.covariance = std::move(cov);
    log_w[n] = -0.5 * quad - 0.5 * logdet;
  });
  const double lse = log_sum_exp(log_w);
  for (Index n = 0; n < training.size(); ++n) {
    auto& comp = post.components[static_cast<std::size_t>(n)];
    comp.log_weight = log_w[n] - lse;
    comp.weight = std::exp(comp.log_weight);
  }
  return post;
}

MixtureMoments mixture_moments(const MixturePosterior& p) {
  if (p.size() == 0) throw InvalidArgument("empty mixture");
  const Index d = p.dim();
  MixtureMoments out{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
  for (const auto& c : p.components) out.mean += c.weight * c.mean;
  for (const auto& c : p.components) {
    const Eigen::VectorXd dm = c.mean - out.mean;
    out.covariance += c.weight * (c.covariance + dm * dm.transpose());
  }
  return out;
}

Eigen::MatrixXd mixture_sample(const MixturePosterior& p, Index count, std::uint64_t seed,
                               Exec exec) {
  if (count < 1) throw InvalidArgument("sample count must be >= 1");
  if (p.size() == 0) throw InvalidArgument("empty mixture");
  std::vector<Eigen::MatrixXd> factors;
  for (const auto& c : p.components) {
    Eigen::LLT<Eigen::MatrixXd> chol(c.covariance);
    if (chol.info() != Eigen::Success) {
      throw InternalConsistency("mixture component covariance is not positive definite");
    }
    factors.push_back(chol.matrixL());
  }
  const Eigen::VectorXd w = p.weights();
  Eigen::VectorXd cumulative(w.size());
  std::partial_sum(w.begin(), w.end(), cumulative.begin());
  const Index d = p.dim();
  Eigen::MatrixXd out(count, d);
  for_each_index(exec, count, [&](Index i) {
    auto rng = stream_rng(seed, static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> uniform(0.0, cumulative[cumulative.size() - 1]);
    std::normal_distribution<double> normal;
    const double u = uniform(rng);
    Index k = static_cast<Index>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    k = std::min(k, p.size() - 1);
    Eigen::VectorXd z(d);
    for (Index j = 0; j < d; ++j) z[j] = normal(rng);
    const auto& c = p.components[static_cast<std::size_t>(k)];
    out.row(i) = (c.mean + factors[static_cast<std::size_t>(k)] * z).transpose();
  });
  return out;
}

SigmaPathReport sigma_zero_limit_check(const TrainingSet& training, const ForwardOperator& op,
                                       const Observation& obs, const std::vector<double>& sigmas) {
  if (sigmas.empty()) throw InvalidArgument("sigma path is empty");
  for (std::size_t i = 1; i < sigmas.size(); ++i) {
    if (!(sigmas[i] < sigmas[i - 1])) throw InvalidArgument("sigma path must be strictly decreasing");
  }
  const Eigen::VectorXd lookup = lookup_table_weights(training, op, obs).weights;
  SigmaPathReport rep;
  rep.sigmas = sigmas;
  for (double s : sigmas) {
    const Eigen::VectorXd w = linearized_mixture(training, op, obs, s).weights();
    const double dist = (w - lookup).lpNorm<1>();
    if (!rep.l1_distance.empty() && dist > rep.l1_distance.back() + 1e-14) rep.monotone = false;
    rep.l1_distance.push_back(dist);
  }
  rep.final_distance = rep.l1_distance.back();
  return rep;
}

void save_mixture(const MixturePosterior& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Index k = p.size();
  const Index d = p.dim();
  Eigen::MatrixXd means(k, d);
  io::Tensor covs;
  covs.dims = {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(d),
               static_cast<std::uint64_t>(d)};
  covs.values.reserve(static_cast<std::size_t>(k * d * d));
  for (Index n = 0; n < k; ++n) {
    const auto& c = p.components[static_cast<std::size_t>(n)];
    means.row(n) = c.mean.transpose();
    for (Index a = 0; a < d; ++a) {
      for (Index b = 0; b < d; ++b) covs.values.push_back(c.covariance(a, b));
    }
  }
  io::write_vector(dir / "weights.mpst", p.weights());
  io::write_matrix(dir / "means.mpst", means);
  io::write_tensor(dir / "covariances.mpst", covs);
  const nlohmann::json manifest = {
      {"kind", "mixture-posterior"},
      {"provenance", p.provenance == MixturePosterior::Provenance::linearized ? "linearized"
                                                                                : "lookup-limit"},
      {"components", k},
      {"dim", d},
      {"files", {"weights.mpst", "means.mpst", "covariances.mpst"}},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

}  // namespace memprior
