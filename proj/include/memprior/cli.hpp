#pragma once

// Experiment driver: JSON configs, run directories, manifests, subcommands.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "memprior/gmm_prior.hpp"
#include "memprior/helmholtz.hpp"
#include "memprior/samplers.hpp"
#include "memprior/score_net.hpp"

namespace memprior::cli {

enum ExitCode : int {
  kSuccess = 0,
  kConfigError = 2,
  kNumericalFailure = 3,
  kVerificationFailure = 4,
};

struct OperatorSection {
  std::string preset;  // cubic1d | pentagon2d | linear | helmholtz-kl
  double gamma = 0.3;
  std::optional<Eigen::MatrixXd> matrix;
  double relative_noise = 0.055;
};

struct KlSection {
  Index n_terms = 100;
  double alpha = 3.0;
  double tau = 5.0;
  double amplitude = 1.0;
  std::string distance_weighting = "whitened";  // whitened | lambda
};

struct TrainingSection {
  std::string source = "preset";  // preset | inline | file | generated
  std::string preset;             // cubic1d | pentagon
  std::optional<Eigen::MatrixXd> examples;
  std::filesystem::path path;
  std::vector<Index> sizes = {50, 200, 1000};
  Index n = 0;  // which generated size to use downstream
};

struct ObservationSection {
  std::optional<Eigen::VectorXd> y;
  std::optional<Eigen::VectorXd> true_model;
  bool add_noise = false;
};

struct StylizedSection {
  std::vector<double> sigmas = {0.5, 0.3, 0.05};
  Index grid_points = 0;          // 0: 2001 (1-D) or 401 (2-D)
  double collapse_radius = 0.0;   // 0: 3 * min(sigmas)
  std::vector<double> limit_sigmas = {1.0, 0.3, 0.1, 0.03, 0.01, 1e-3, 1e-4};
};

struct SamplerSection {
  Index n_steps = 500;
  double zeta = 1.0;
  Index batch = 256;
  Guidance guidance = Guidance::misfit_normalized;
  std::string score = "analytic";  // analytic | net
};

struct DiagnosticsSection {
  double threshold = 0.5;
  Index k = 0;
};

struct InputsSection {
  std::filesystem::path dataset_dir;
  std::filesystem::path training;
  std::filesystem::path checkpoint;
  std::filesystem::path samples;
  std::filesystem::path truth;
};

struct ExperimentConfig {
  std::string experiment = "stylized-1d";  // stylized-1d | stylized-2d | fwi
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  OperatorSection op;
  HelmholtzConfig helmholtz;
  KlSection kl;
  TrainingSection training;
  ObservationSection observation;
  ScheduleKind schedule_kind = ScheduleKind::variance_exploding;
  double sigma_min = 0.01;
  double sigma_max = 10.0;
  StylizedSection stylized;
  ScoreNetSpec net;
  TrainConfig train;
  SamplerSection sampler;
  DiagnosticsSection diagnostics;
  InputsSection inputs;

  nlohmann::json source;  // the document as read

  NoiseSchedule schedule() const { return {schedule_kind, sigma_min, sigma_max}; }
  SamplerConfig sampler_config() const;
};

/// Strict parse: unknown keys and out-of-range values throw ConfigError.
/// Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Exclusive handle on an output directory. Creates `<dir>/.lock` with
/// O_EXCL and removes it on destruction.
class RunDirectory {
 public:
  explicit RunDirectory(std::filesystem::path dir);
  ~RunDirectory();
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;

  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path file(const std::string& name) const { return dir_ / name; }

 private:
  std::filesystem::path dir_;
  std::filesystem::path lock_;
};

std::uint32_t file_crc32(const std::filesystem::path& path);
std::string utc_timestamp();

struct ManifestInfo {
  std::string command;
  nlohmann::json config;
  std::vector<std::pair<std::string, std::uint64_t>> seeds;
  std::string started;
  nlohmann::json extra = nlohmann::json::object();
};

/// Lists every regular file under the run directory (except the manifest and
/// lock) with size and CRC-32, then writes manifest.json via rename.
void write_run_manifest(const RunDirectory& run, const ManifestInfo& info);

// Subcommands. Each writes into `run` and returns an exit code.
int cmd_stylized(const ExperimentConfig& cfg, const RunDirectory& run);
int cmd_fwi_gen(const ExperimentConfig& cfg, const RunDirectory& run);
int cmd_train(const ExperimentConfig& cfg, const RunDirectory& run);
int cmd_sample(const ExperimentConfig& cfg, const RunDirectory& run);
int cmd_dps(const ExperimentConfig& cfg, const RunDirectory& run);
int cmd_diagnose(const ExperimentConfig& cfg, const RunDirectory& run);

struct VerifyCheck {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// Oracle suite: adjoint tests, gradient checks, Green's function, linear-case
/// exactness, sigma -> 0 weight limit. `quick` shrinks the Helmholtz grid.
std::vector<VerifyCheck> run_verification(bool quick);
int cmd_verify(const RunDirectory* run, bool quick);

/// Entry point used by the executable.
int run_app(int argc, char** argv);

}  // namespace memprior::cli
