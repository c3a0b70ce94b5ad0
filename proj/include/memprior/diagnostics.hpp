#pragma once

// Memorization and uncertainty diagnostics over batches of model vectors.

#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "memprior/gmm_prior.hpp"
#include "memprior/klfield.hpp"

namespace memprior {

struct NearestNeighbor {
  double ratio = 0.0;        // d1 / mean(d2..dk)
  Index nearest = 0;
  double d1 = 0.0;
  double dbar = 0.0;
  Eigen::VectorXd distances;  // ascending
  std::vector<Index> order;   // training indices in ascending-distance order
};

/// k counts the nearest example, so k = N uses every remaining example.
/// k = 0 means N. Requires N >= 2 and 2 <= k <= N.
NearestNeighbor nn_ratio(const Eigen::VectorXd& sample, const TrainingSet& training, Index k = 0);

struct ExampleBlend {
  Eigen::VectorXd model;
  std::vector<Index> members;
};

/// Mean of the `count` examples whose leave-one-out nearest-neighbor ratio is
/// lowest. Used as a synthetic true model that sits between training points.
ExampleBlend blend_tight_examples(const TrainingSet& training, Index count = 3);

struct MemorizationRow {
  Index sample_id = 0;
  Index nearest = 0;
  double d1 = 0.0;
  double dbar = 0.0;
  double ratio = 0.0;
  bool memorized = false;
};

struct MemorizationReport {
  double threshold = 0.5;
  double rate = 0.0;
  std::vector<MemorizationRow> rows;
};

MemorizationReport memorization_rate(const Eigen::MatrixXd& samples, const TrainingSet& training,
                                     double threshold = 0.5, Index k = 0,
                                     Exec exec = Exec::parallel);

struct PosteriorSummary {
  Eigen::VectorXd mean;  // coefficient space
  Eigen::VectorXd std;   // (batch - 1) divisor
  std::optional<Eigen::VectorXd> field_mean;
  std::optional<Eigen::VectorXd> field_std;
};

PosteriorSummary posterior_summary(const Eigen::MatrixXd& samples,
                                   const KlBasis* basis = nullptr);

struct CalibrationPair {
  double abs_error = 0.0;
  double std = 0.0;
};

struct CalibrationReport {
  std::vector<CalibrationPair> pairs;
  /// Fraction of coordinates with std > ratio * error.
  double overconfident_fraction = 0.0;
  /// overconfident_fraction > 0.25.
  bool overconfident_spread = false;
};

CalibrationReport calibration_pairs(const Eigen::MatrixXd& samples, const Eigen::VectorXd& truth,
                                    double ratio = 2.0);

/// Header: sample_id,nearest_idx,d1,dbar,ratio,memorized
void write_memorization_csv(const MemorizationReport& report, const std::filesystem::path& path);
/// Header: coord,abs_error,std
void write_calibration_csv(const CalibrationReport& report, const std::filesystem::path& path);

}  // namespace memprior
