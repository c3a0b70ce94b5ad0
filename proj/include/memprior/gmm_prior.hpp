#pragma once

// Memorized diffusion prior: an isotropic Gaussian mixture centered on the
// training examples,
//
//   p(x, t) = (1/N) sum_n N(x | m(t) x_n, sigma(t)^2 I),
//
// which is the exact minimizer of denoising score matching on a finite set.

#include <cstdint>
#include <string_view>

#include <Eigen/Core>

#include "memprior/parallel.hpp"

namespace memprior {

/// N examples in R^d, stored one per row. Row order is the component index
/// used by every downstream output.
class TrainingSet {
 public:
  TrainingSet() = default;
  explicit TrainingSet(Eigen::MatrixXd examples);

  Index size() const { return examples_.rows(); }
  Index dim() const { return examples_.cols(); }
  const Eigen::MatrixXd& examples() const { return examples_; }
  Eigen::VectorXd example(Index n) const { return examples_.row(n).transpose(); }

  /// Largest pairwise Euclidean distance.
  double diameter() const;

 private:
  Eigen::MatrixXd examples_;
};

enum class ScheduleKind { variance_exploding, variance_preserving };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

/// Forward-process schedule with geometric noise level
/// sigma(t) = sigma_min * (sigma_max / sigma_min)^t on t in [0, 1].
///
/// Variance exploding keeps m(t) = 1. Variance preserving sets
/// m(t) = sqrt(1 - sigma(t)^2) and therefore needs sigma_max < 1.
class NoiseSchedule {
 public:
  NoiseSchedule(ScheduleKind kind, double sigma_min, double sigma_max);

  static NoiseSchedule variance_exploding(double sigma_min = 0.01, double sigma_max = 10.0) {
    return {ScheduleKind::variance_exploding, sigma_min, sigma_max};
  }
  static NoiseSchedule variance_preserving(double sigma_min, double sigma_max) {
    return {ScheduleKind::variance_preserving, sigma_min, sigma_max};
  }

  ScheduleKind kind() const { return kind_; }
  double sigma_min() const { return sigma_min_; }
  double sigma_max() const { return sigma_max_; }

  double sigma(double t) const;
  double scale(double t) const;  // m(t)
  /// Inverse of sigma(t); clamped to [0, 1].
  double time_of_sigma(double sigma) const;

  /// Coefficients of the forward SDE dx = f(t) x dt + g(t) dW.
  double drift_rate(double t) const;
  double diffusion_sq(double t) const;

 private:
  ScheduleKind kind_;
  double sigma_min_;
  double sigma_max_;
  double log_ratio_;
};

/// Anything that can report the score of the noised prior. Rows of `x` are
/// independent points.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual const NoiseSchedule& schedule() const = 0;
  virtual Index dim() const = 0;
  virtual Eigen::MatrixXd score_batch(const Eigen::MatrixXd& x, double t,
                                      Exec exec = Exec::parallel) const = 0;

  Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const;
};

// Mixture kernels with explicit scale m and width sigma. Centers are rows.

/// log (1/N) sum_n N(x | m c_n, sigma^2 I), evaluated with log-sum-exp.
double mixture_log_density(const Eigen::MatrixXd& centers, const Eigen::VectorXd& x, double m,
                           double sigma);
/// Softmax responsibilities r_n(x), max-subtracted.
Eigen::VectorXd mixture_responsibilities(const Eigen::MatrixXd& centers, const Eigen::VectorXd& x,
                                         double m, double sigma);
/// sum_n r_n(x) (m c_n - x) / sigma^2.
Eigen::VectorXd mixture_score(const Eigen::MatrixXd& centers, const Eigen::VectorXd& x, double m,
                              double sigma);

class GmmPrior final : public ScoreModel {
 public:
  GmmPrior(TrainingSet training, NoiseSchedule schedule);

  const TrainingSet& training() const { return training_; }
  const NoiseSchedule& schedule() const override { return schedule_; }
  Index dim() const override { return training_.dim(); }

  double log_density(const Eigen::VectorXd& x, double t) const;
  Eigen::VectorXd responsibilities(const Eigen::VectorXd& x, double t) const;
  Eigen::VectorXd score_at(const Eigen::VectorXd& x, double t) const;
  Eigen::MatrixXd score_batch(const Eigen::MatrixXd& x, double t,
                              Exec exec = Exec::parallel) const override;

  /// Ancestral draws: pick n uniformly, add N(0, sigma(t)^2 I) to m(t) x_n.
  /// Row i uses its own random stream, so output is independent of `exec`.
  Eigen::MatrixXd sample(double t, Index count, std::uint64_t seed,
                         Exec exec = Exec::parallel) const;

 private:
  void check_point(const Eigen::VectorXd& x, double t) const;

  TrainingSet training_;
  NoiseSchedule schedule_;
};

}  // namespace memprior
