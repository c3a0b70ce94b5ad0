#pragma once

// Multilayer-perceptron denoiser trained by denoising score matching.
//
// Input: c_in(t) * x concatenated with sinusoidal features of log sigma(t),
// c_in = 1 / sqrt(m^2 + sigma^2). Output: predicted noise eps_hat, so the
// score estimate is -eps_hat / sigma(t). Hidden layers use SiLU.

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "memprior/gmm_prior.hpp"

namespace memprior {

struct ScoreNetSpec {
  Index dim = 1;
  std::vector<Index> hidden = {256, 256, 256};
  Index time_features = 16;  // even; sin/cos pairs
};

class ScoreNet final : public ScoreModel {
 public:
  /// Weights drawn N(0, 1/fan_in), biases zero.
  ScoreNet(ScoreNetSpec spec, NoiseSchedule schedule, std::uint64_t seed);

  const ScoreNetSpec& spec() const { return spec_; }
  const NoiseSchedule& schedule() const override { return schedule_; }
  Index dim() const override { return spec_.dim; }

  Index parameter_count() const { return params_.size(); }
  const Eigen::VectorXd& parameters() const { return params_; }
  void set_parameters(const Eigen::VectorXd& p);

  /// Network input features for rows of x at per-row times t (count x width).
  Eigen::MatrixXd features(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) const;
  /// eps_hat for rows of x at per-row times.
  Eigen::MatrixXd predict_noise(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) const;
  Eigen::MatrixXd score_batch(const Eigen::MatrixXd& x, double t,
                              Exec exec = Exec::parallel) const override;

  /// mean_b ||eps_hat(x_b, t_b) - eps_b||^2 with x_b = m(t_b) x0_b + sigma(t_b) eps_b.
  /// When `gradient` is non-null it receives d loss / d parameters.
  double dsm_loss(const Eigen::MatrixXd& x0, const Eigen::VectorXd& t, const Eigen::MatrixXd& eps,
                  Eigen::VectorXd* gradient = nullptr) const;

 private:
  struct Layer {
    Index in;
    Index out;
    Index w_offset;
    Index b_offset;
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input_t, std::vector<Eigen::MatrixXd>* pre,
                          std::vector<Eigen::MatrixXd>* post) const;

  ScoreNetSpec spec_;
  NoiseSchedule schedule_;
  std::vector<Layer> layers_;
  Eigen::VectorXd params_;
};

struct TrainConfig {
  Index steps = 50000;
  Index batch = 64;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 10.0;
  /// Cosine decay of the learning rate down to this fraction of it at the
  /// last step; 1 keeps it constant.
  double final_lr_fraction = 1.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ScoreNet net;
  std::vector<double> loss_trace;  // one entry per step
};

/// Adam on the DSM loss with t ~ U[0, 1]. Deterministic given cfg.seed.
/// Throws StepFailure on a non-finite loss or parameter.
TrainResult train(const TrainingSet& data, const ScoreNetSpec& spec, const NoiseSchedule& schedule,
                  const TrainConfig& cfg);

/// -eps_hat / sigma(t) for a single point.
Eigen::VectorXd score_of(const ScoreNet& net, const Eigen::VectorXd& x, double t);

struct CheckpointInfo {
  std::uint64_t seed = 0;
  Index steps = 0;
};

/// manifest.json (architecture, schedule, seed, steps) + parameters.mpst.
void save_checkpoint(const ScoreNet& net, const CheckpointInfo& info,
                     const std::filesystem::path& dir);
ScoreNet load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);

}  // namespace memprior
