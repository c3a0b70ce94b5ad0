#include "memprior/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "memprior/errors.hpp"
#include "memprior/matrix_io.hpp"

namespace memprior {

NearestNeighbor nn_ratio(const Eigen::VectorXd& sample, const TrainingSet& training, Index k) {
  const Index n = training.size();
  if (n < 2) throw InvalidArgument("nearest-neighbor ratio is undefined for fewer than 2 examples");
  if (k == 0) k = n;
  if (k < 2 || k > n) {
    throw InvalidArgument("k must lie in [2, " + std::to_string(n) + "], got " + std::to_string(k));
  }
  if (sample.size() != training.dim()) throw InvalidArgument("sample has wrong dimension");

  Eigen::VectorXd dist(n);
  for (Index i = 0; i < n; ++i) dist[i] = (training.examples().row(i).transpose() - sample).norm();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return dist[a] < dist[b]; });

  NearestNeighbor out;
  out.distances.resize(n);
  for (Index i = 0; i < n; ++i) out.distances[i] = dist[order[static_cast<std::size_t>(i)]];
  out.order = std::move(order);
  out.nearest = out.order.front();
  out.d1 = out.distances[0];
  out.dbar = out.distances.segment(1, k - 1).mean();
  out.ratio = out.dbar > 0.0 ? out.d1 / out.dbar : (out.d1 > 0.0 ? INFINITY : 1.0);
  return out;
}

ExampleBlend blend_tight_examples(const TrainingSet& training, Index count) {
  const Index n = training.size();
  if (count < 1 || n < count + 1 || n < 3) {
    throw InvalidArgument("blend_tight_examples needs more examples than members (and at least 3)");
  }
  std::vector<std::pair<double, Index>> ratios;
  for (Index i = 0; i < n; ++i) {
    Eigen::MatrixXd others(n - 1, training.dim());
    others << training.examples().topRows(i), training.examples().bottomRows(n - 1 - i);
    ratios.emplace_back(nn_ratio(training.example(i), TrainingSet(std::move(others))).ratio, i);
  }
  std::sort(ratios.begin(), ratios.end());
  ExampleBlend out;
  out.model = Eigen::VectorXd::Zero(training.dim());
  for (Index k = 0; k < count; ++k) {
    out.members.push_back(ratios[static_cast<std::size_t>(k)].second);
    out.model += training.example(out.members.back()) / static_cast<double>(count);
  }
  return out;
}

MemorizationReport memorization_rate(const Eigen::MatrixXd& samples, const TrainingSet& training,
                                     double threshold, Index k, Exec exec) {
  if (samples.rows() < 1) throw InvalidArgument("no samples to diagnose");
  MemorizationReport rep;
  rep.threshold = threshold;
  rep.rows.resize(static_cast<std::size_t>(samples.rows()));
  for_each_index(exec, samples.rows(), [&](Index i) {
    const auto nn = nn_ratio(samples.row(i).transpose(), training, k);
    rep.rows[static_cast<std::size_t>(i)] = {i, nn.nearest, nn.d1, nn.dbar, nn.ratio, nn.ratio < threshold};
  });
  const auto hits = std::count_if(rep.rows.begin(), rep.rows.end(), [](const auto& r) { return r.memorized; });
  rep.rate = static_cast<double>(hits) / static_cast<double>(rep.rows.size());
  return rep;
}

namespace {

void column_moments(const Eigen::MatrixXd& x, Eigen::VectorXd& mean, Eigen::VectorXd& std) {
  mean = x.colwise().mean().transpose();
  if (x.rows() < 2) {
    std = Eigen::VectorXd::Zero(x.cols());
    return;
  }
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  std = (centered.colwise().squaredNorm().transpose() / static_cast<double>(x.rows() - 1)).cwiseSqrt();
}

}  // namespace

PosteriorSummary posterior_summary(const Eigen::MatrixXd& samples, const KlBasis* basis) {
  if (samples.rows() < 1) throw InvalidArgument("no samples to summarize");
  PosteriorSummary out;
  column_moments(samples, out.mean, out.std);
  if (basis) {
    if (samples.cols() != basis->n_terms()) throw InvalidArgument("samples do not match the KL basis");
    Eigen::MatrixXd fields(samples.rows(), basis->grid_size());
    for (Index i = 0; i < samples.rows(); ++i) {
      fields.row(i) = basis->synthesize(samples.row(i).transpose()).transpose();
    }
    Eigen::VectorXd fm, fs;
    column_moments(fields, fm, fs);
    out.field_mean = std::move(fm);
    out.field_std = std::move(fs);
  }
  return out;
}

CalibrationReport calibration_pairs(const Eigen::MatrixXd& samples, const Eigen::VectorXd& truth,
                                    double ratio) {
  if (samples.cols() != truth.size()) throw InvalidArgument("truth has wrong dimension");
  const PosteriorSummary s = posterior_summary(samples);
  CalibrationReport rep;
  Index flagged = 0;
  for (Index j = 0; j < truth.size(); ++j) {
    const CalibrationPair p{std::abs(s.mean[j] - truth[j]), s.std[j]};
    if (p.std > ratio * p.abs_error) ++flagged;
    rep.pairs.push_back(p);
  }
  rep.overconfident_fraction = static_cast<double>(flagged) / static_cast<double>(truth.size());
  rep.overconfident_spread = rep.overconfident_fraction > 0.25;
  return rep;
}

void write_memorization_csv(const MemorizationReport& report, const std::filesystem::path& path) {
  io::CsvWriter csv(path, {"sample_id", "nearest_idx", "d1", "dbar", "ratio", "memorized"});
  for (const auto& r : report.rows) {
    csv.add_row({static_cast<long long>(r.sample_id), static_cast<long long>(r.nearest), r.d1, r.dbar,
                 r.ratio, static_cast<long long>(r.memorized ? 1 : 0)});
  }
}

void write_calibration_csv(const CalibrationReport& report, const std::filesystem::path& path) {
  io::CsvWriter csv(path, {"coord", "abs_error", "std"});
  for (std::size_t j = 0; j < report.pairs.size(); ++j) {
    csv.add_row({static_cast<long long>(j), report.pairs[j].abs_error, report.pairs[j].std});
  }
}

}  // namespace memprior
