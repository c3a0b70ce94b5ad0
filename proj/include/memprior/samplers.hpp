#pragma once

// Reverse diffusion from a score model, unconditional or guided by a forward
// operator (diffusion posterior sampling).
//
// Noise levels run geometrically from sigma_max down to sigma_min over
// n_steps levels. Between levels the chain takes an ancestral step of the
// reverse SDE; at the last level it is replaced by the Tweedie estimate
// x0_hat = (x + sigma^2 score) / m.

#include <cstdint>
#include <string_view>

#include <Eigen/Core>

#include "memprior/forward_ops.hpp"
#include "memprior/gmm_prior.hpp"

namespace memprior {

enum class Guidance {
  /// zeta / ||r|| * (2 / m) * J^T r, evaluated at x0_hat.
  misfit_normalized,
  /// zeta * beta_i / (m gamma^2) * J^T r: the likelihood score scaled by the
  /// step's variance increment beta_i (sigma_min^2 at the end).
  noise_weighted,
};

Guidance parse_guidance(std::string_view name);
std::string_view to_string(Guidance g);

struct SamplerConfig {
  Index n_steps = 500;
  NoiseSchedule schedule = NoiseSchedule::variance_exploding();
  double zeta = 1.0;
  Index batch = 256;
  std::uint64_t seed = 0;
  Guidance guidance = Guidance::misfit_normalized;

  void validate() const;
  /// n_steps noise levels, descending from sigma_max to sigma_min.
  Eigen::VectorXd sigma_levels() const;
};

struct SamplerResult {
  Eigen::MatrixXd samples;  // batch x d
  /// n_steps x batch data misfit ||y - F(x0_hat)||; empty when unguided by an
  /// operator.
  Eigen::MatrixXd misfit;

  /// Mean over chains of the last row of `misfit`.
  double final_mean_misfit() const;
};

SamplerResult sample_unconditional(const ScoreModel& score, const SamplerConfig& cfg,
                                   Exec exec = Exec::parallel);

/// zeta = 0 reproduces sample_unconditional bit for bit (plus the misfit trace).
/// Throws StepFailure carrying the step index on a non-finite state or a
/// forward-solver failure.
SamplerResult sample_dps(const ScoreModel& score, const ForwardOperator& op, const Observation& obs,
                         const SamplerConfig& cfg, Exec exec = Exec::parallel);

}  // namespace memprior
