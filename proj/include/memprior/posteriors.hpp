#pragma once

// Posteriors under a memorized prior with Gaussian likelihood
// y = F(x) + N(0, gamma^2 I):
//   - lookup table: weights on the training examples themselves (sigma -> 0),
//   - grid oracle: brute-force evaluation of likelihood x GMM prior (d <= 2),
//   - linearized mixture: F linearized at every example, giving one Gaussian
//     component per example.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "memprior/forward_ops.hpp"
#include "memprior/gmm_prior.hpp"

namespace memprior {

/// Numerically stable log(sum(exp(v))).
double log_sum_exp(const Eigen::VectorXd& v);
/// exp(v - log_sum_exp(v)).
Eigen::VectorXd softmax(const Eigen::VectorXd& v);

struct LookupTable {
  Eigen::VectorXd weights;
  Eigen::VectorXd misfits;  // ||F(x_n) - y||^2
};

LookupTable lookup_table_weights(const TrainingSet& training, const ForwardOperator& op,
                                 const Observation& obs, Exec exec = Exec::parallel);

// ---------------------------------------------------------------------------
// Grid oracle

struct GridAxis {
  double lo = 0.0;
  double hi = 1.0;
  Index points = 2;

  double spacing() const { return (hi - lo) / static_cast<double>(points - 1); }
  double at(Index i) const { return lo + spacing() * static_cast<double>(i); }
};

struct GridSpec {
  std::vector<GridAxis> axes;

  Index dim() const { return static_cast<Index>(axes.size()); }
  Index size() const;
  /// Coordinates of flat node q; axis 0 varies fastest.
  Eigen::VectorXd node(Index q) const;
  /// Trapezoid weight of flat node q.
  double weight(Index q) const;

  /// Box around every training example padded by `pad_sigmas` * sigma (plus
  /// `extra` points to include, e.g. the likelihood mode). Default
  /// resolution: 2001 points in 1-D, 401 per axis in 2-D.
  static GridSpec covering(const TrainingSet& training, double sigma, double pad_sigmas = 6.0,
                           const std::vector<Eigen::VectorXd>& extra = {}, Index points = 0);
};

/// Normalized density sampled on a grid.
class GridPosterior {
 public:
  GridPosterior(GridSpec grid, Eigen::VectorXd log_unnormalized);

  const GridSpec& grid() const { return grid_; }
  const Eigen::VectorXd& log_unnormalized() const { return log_unnormalized_; }
  const Eigen::VectorXd& density() const { return density_; }
  /// Log of the trapezoid normalizing constant.
  double log_normalizer() const { return log_normalizer_; }

  double integral() const;
  Eigen::VectorXd mean() const;
  Eigen::MatrixXd covariance() const;
  /// Probability of the set {x : min_n ||x - c_n|| <= radius}. 1-D integrates
  /// the piecewise-linear density exactly over the union of intervals; 2-D
  /// uses the nodal indicator.
  double mass_within(const Eigen::MatrixXd& centers, double radius) const;
  /// 0.5 * integral |p - q| for another density sampled on the same grid.
  double total_variation(const Eigen::VectorXd& other_density) const;

 private:
  GridSpec grid_;
  Eigen::VectorXd log_unnormalized_;
  Eigen::VectorXd density_;
  double log_normalizer_ = 0.0;
};

/// log N(y | F(x), gamma^2 I) + log GMM(x; sigma) on the grid, normalized.
/// Throws UnsupportedDimension for d > 2.
GridPosterior grid_oracle(const TrainingSet& training, const ForwardOperator& op,
                          const Observation& obs, double sigma, const GridSpec& grid,
                          Exec exec = Exec::parallel);

// ---------------------------------------------------------------------------
// Linearized mixture

struct MixtureComponent {
  double weight = 0.0;
  double log_weight = 0.0;  // normalized
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

struct MixturePosterior {
  enum class Provenance { linearized, lookup_limit };

  std::vector<MixtureComponent> components;
  Provenance provenance = Provenance::linearized;

  Index size() const { return static_cast<Index>(components.size()); }
  Index dim() const { return components.empty() ? 0 : components.front().mean.size(); }
  Eigen::VectorXd weights() const;

  double log_density(const Eigen::VectorXd& x) const;
  Eigen::VectorXd density_on(const GridSpec& grid, Exec exec = Exec::parallel) const;
};

/// How the per-component Mahalanobis term and log-determinant are computed.
enum class MahalanobisRoute {
  automatic,   // data space when m <= d, else model space
  data_space,  // Cholesky of C = sigma^2 J J^T + gamma^2 I (m x m)
  model_space  // Woodbury through Sigma_n (d x d)
};

MixturePosterior linearized_mixture(const TrainingSet& training, const ForwardOperator& op,
                                    const Observation& obs, double sigma,
                                    MahalanobisRoute route = MahalanobisRoute::automatic,
                                    Exec exec = Exec::parallel);

struct MixtureMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

MixtureMoments mixture_moments(const MixturePosterior& p);

/// Row i uses its own random stream: categorical draw by weight, then a
/// Gaussian draw from that component.
Eigen::MatrixXd mixture_sample(const MixturePosterior& p, Index count, std::uint64_t seed,
                               Exec exec = Exec::parallel);

struct SigmaPathReport {
  std::vector<double> sigmas;
  std::vector<double> l1_distance;  // ||w_linearized(sigma) - w_lookup||_1
  bool monotone = true;             // nonincreasing along the path
  double final_distance = 0.0;
};

/// `sigmas` must be strictly decreasing.
SigmaPathReport sigma_zero_limit_check(const TrainingSet& training, const ForwardOperator& op,
                                       const Observation& obs, const std::vector<double>& sigmas);

/// weights.mpst, means.mpst (K x d), covariances.mpst (K x d x d), manifest.json.
void save_mixture(const MixturePosterior& p, const std::filesystem::path& dir);

}  // namespace memprior
