#include "memprior/gmm_prior.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "memprior/errors.hpp"

namespace memprior {

TrainingSet::TrainingSet(Eigen::MatrixXd examples) : examples_(std::move(examples)) {
  if (examples_.rows() < 1 || examples_.cols() < 1) {
    throw InvalidArgument("training set needs at least one example of positive dimension");
  }
  if (!examples_.allFinite()) throw InvalidArgument("training set contains non-finite values");
}

double TrainingSet::diameter() const {
  double best = 0.0;
  for (Index a = 0; a < size(); ++a) {
    for (Index b = a + 1; b < size(); ++b) {
      best = std::max(best, (examples_.row(a) - examples_.row(b)).norm());
    }
  }
  return best;
}

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "variance-exploding" || name == "ve") return ScheduleKind::variance_exploding;
  if (name == "variance-preserving" || name == "vp") return ScheduleKind::variance_preserving;
  throw InvalidArgument("unknown schedule kind '" + std::string(name) + "'");
}

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::variance_exploding ? "variance-exploding" : "variance-preserving";
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, double sigma_min, double sigma_max)
    : kind_(kind), sigma_min_(sigma_min), sigma_max_(sigma_max) {
  if (!(sigma_min > 0.0)) throw DegenerateSchedule("sigma_min must be positive");
  if (!(sigma_max >= sigma_min)) throw InvalidArgument("sigma_max must be >= sigma_min");
  if (kind == ScheduleKind::variance_preserving && !(sigma_max < 1.0)) {
    throw InvalidArgument("variance-preserving schedule needs sigma_max < 1");
  }
  log_ratio_ = std::log(sigma_max_ / sigma_min_);
}

double NoiseSchedule::sigma(double t) const { return sigma_min_ * std::exp(log_ratio_ * t); }

double NoiseSchedule::scale(double t) const {
  if (kind_ == ScheduleKind::variance_exploding) return 1.0;
  const double s = sigma(t);
  return std::sqrt(1.0 - s * s);
}

double NoiseSchedule::time_of_sigma(double s) const {
  if (log_ratio_ == 0.0) return 0.0;
  return std::clamp(std::log(s / sigma_min_) / log_ratio_, 0.0, 1.0);
}

double NoiseSchedule::drift_rate(double t) const {
  if (kind_ == ScheduleKind::variance_exploding) return 0.0;
  const double s2 = std::pow(sigma(t), 2);
  return -s2 * log_ratio_ / (1.0 - s2);
}

double NoiseSchedule::diffusion_sq(double t) const {
  const double s2 = std::pow(sigma(t), 2);
  if (kind_ == ScheduleKind::variance_exploding) return 2.0 * s2 * log_ratio_;
  return 2.0 * s2 * log_ratio_ / (1.0 - s2);
}

Eigen::VectorXd ScoreModel::score(const Eigen::VectorXd& x, double t) const {
  Eigen::MatrixXd row = x.transpose();
  return score_batch(row, t, Exec::serial).row(0).transpose();
}

namespace {

void check_width(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw DegenerateSchedule("mixture width must be positive and finite");
  }
}

void check_dims(const Eigen::MatrixXd& centers, const Eigen::VectorXd& x) {
  if (x.size() != centers.cols()) {
    throw InvalidArgument("point has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(centers.cols()));
  }
}

// Exponents -||x - m c_n||^2 / (2 sigma^2).
Eigen::VectorXd log_kernels(const Eigen::MatrixXd& centers, const Eigen::VectorXd& x, double m,
                            double sigma) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  return -((m * centers).rowwise() - x.transpose()).rowwise().squaredNorm() * inv;
}

}  // namespace

double mixture_log_density(const Eigen::MatrixXd& centers, const Eigen::VectorXd& x, double m,
                           double sigma) {
  check_width(sigma);
  check_dims(centers, x);
  const Eigen::VectorXd e = log_kernels(centers, x, m, sigma);
  const double top = e.maxCoeff();
  const double lse = top + std::log((e.array() - top).exp().sum());
  const double d = static_cast<double>(centers.cols());
  return lse - std::log(static_cast<double>(centers.rows())) -
         0.5 * d * std::log(2.0 * std::numbers::pi * sigma * sigma);
}

Eigen::VectorXd mixture_responsibilities(const Eigen::MatrixXd& centers, const Eigen::VectorXd& x,
                                         double m, double sigma) {
  check_width(sigma);
  check_dims(centers, x);
  Eigen::VectorXd e = log_kernels(centers, x, m, sigma);
  e = (e.array() - e.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::VectorXd mixture_score(const Eigen::MatrixXd& centers, const Eigen::VectorXd& x, double m,
                              double sigma) {
  const Eigen::VectorXd r = mixture_responsibilities(centers, x, m, sigma);
  return (m * (centers.transpose() * r) - x) / (sigma * sigma);
}

GmmPrior::GmmPrior(TrainingSet training, NoiseSchedule schedule)
    : training_(std::move(training)), schedule_(schedule) {}

void GmmPrior::check_point(const Eigen::VectorXd& x, double t) const {
  if (x.size() != dim()) throw InvalidArgument("point dimension does not match training set");
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("diffusion time must lie in [0, 1]");
}

double GmmPrior::log_density(const Eigen::VectorXd& x, double t) const {
  check_point(x, t);
  return mixture_log_density(training_.examples(), x, schedule_.scale(t), schedule_.sigma(t));
}

Eigen::VectorXd GmmPrior::responsibilities(const Eigen::VectorXd& x, double t) const {
  check_point(x, t);
  return mixture_responsibilities(training_.examples(), x, schedule_.scale(t), schedule_.sigma(t));
}

Eigen::VectorXd GmmPrior::score_at(const Eigen::VectorXd& x, double t) const {
  check_point(x, t);
  return mixture_score(training_.examples(), x, schedule_.scale(t), schedule_.sigma(t));
}

Eigen::MatrixXd GmmPrior::score_batch(const Eigen::MatrixXd& x, double t, Exec exec) const {
  if (x.cols() != dim()) throw InvalidArgument("batch dimension does not match training set");
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("diffusion time must lie in [0, 1]");
  const double m = schedule_.scale(t);
  const double s = schedule_.sigma(t);
  Eigen::MatrixXd out(x.rows(), x.cols());
  for_each_index(exec, x.rows(), [&](Index i) {
    out.row(i) = mixture_score(training_.examples(), x.row(i).transpose(), m, s).transpose();
  });
  return out;
}

Eigen::MatrixXd GmmPrior::sample(double t, Index count, std::uint64_t seed, Exec exec) const {
  if (count < 1) throw InvalidArgument("sample count must be >= 1");
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("diffusion time must lie in [0, 1]");
  const double m = schedule_.scale(t);
  const double s = schedule_.sigma(t);
  Eigen::MatrixXd out(count, dim());
  for_each_index(exec, count, [&](Index i) {
    auto rng = stream_rng(seed, static_cast<std::uint64_t>(i));
    std::uniform_int_distribution<Index> pick(0, training_.size() - 1);
    std::normal_distribution<double> normal;
    const Index n = pick(rng);
    for (Index j = 0; j < dim(); ++j) out(i, j) = m * training_.examples()(n, j) + s * normal(rng);
  });
  return out;
}

}  // namespace memprior
