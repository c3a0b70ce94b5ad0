#include "memprior/samplers.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "memprior/errors.hpp"
#include "memprior/log.hpp"

namespace memprior {

Guidance parse_guidance(std::string_view name) {
  if (name == "misfit_normalized" || name == "misfit-normalized") return Guidance::misfit_normalized;
  if (name == "noise_weighted" || name == "noise-weighted") return Guidance::noise_weighted;
  throw InvalidArgument("unknown guidance mode '" + std::string(name) + "'");
}

std::string_view to_string(Guidance g) {
  return g == Guidance::misfit_normalized ? "misfit_normalized" : "noise_weighted";
}

void SamplerConfig::validate() const {
  if (n_steps < 2) throw InvalidArgument("sampler needs n_steps >= 2");
  if (batch < 1) throw InvalidArgument("sampler batch must be positive");
  if (!(zeta >= 0.0) || !std::isfinite(zeta)) throw InvalidArgument("guidance scale must be >= 0");
}

Eigen::VectorXd SamplerConfig::sigma_levels() const {
  Eigen::VectorXd s(n_steps);
  const double lo = std::log(schedule.sigma_min());
  const double hi = std::log(schedule.sigma_max());
  for (Index i = 0; i < n_steps; ++i) {
    s[i] = std::exp(hi + (lo - hi) * static_cast<double>(i) / static_cast<double>(n_steps - 1));
  }
  s[0] = schedule.sigma_max();
  s[n_steps - 1] = schedule.sigma_min();
  return s;
}

double SamplerResult::final_mean_misfit() const {
  if (misfit.rows() == 0) throw InvalidArgument("no misfit trace recorded");
  return misfit.row(misfit.rows() - 1).mean();
}

namespace {

SamplerResult reverse_diffusion(const ScoreModel& score, const ForwardOperator* op,
                                const Observation* obs, const SamplerConfig& cfg, Exec exec) {
  cfg.validate();
  const NoiseSchedule& sched = cfg.schedule;
  if (score.schedule().kind() != sched.kind()) {
    throw InvalidArgument("sampler schedule kind differs from the score model's schedule");
  }
  if (sched.sigma_min() < score.schedule().sigma_min() * (1.0 - 1e-12) ||
      sched.sigma_max() > score.schedule().sigma_max() * (1.0 + 1e-12)) {
    warn_once("sampler-range",
              "sampler noise range exceeds the score model's schedule; times are clamped");
  }
  const Index d = score.dim();
  if (op) {
    if (op->model_dim() != d) throw InvalidArgument("operator model dimension differs from the prior");
    if (obs->y.size() != op->data_dim()) throw InvalidArgument("observation has wrong length");
  }
  const Eigen::VectorXd levels = cfg.sigma_levels();
  const Index steps = cfg.n_steps;
  const Index batch = cfg.batch;
  const double gamma2 = op ? op->gamma() * op->gamma() : 1.0;

  std::vector<std::mt19937_64> rngs;
  rngs.reserve(static_cast<std::size_t>(batch));
  for (Index b = 0; b < batch; ++b) rngs.push_back(stream_rng(cfg.seed, static_cast<std::uint64_t>(b)));

  SamplerResult res;
  res.samples.resize(batch, d);
  if (op) res.misfit.resize(steps, batch);
  {
    const double m1 = sched.scale(1.0);
    const double s1 = sched.sigma(1.0);
    const double sd = std::sqrt(m1 * m1 + s1 * s1);
    for_each_index(exec, batch, [&](Index b) {
      std::normal_distribution<double> normal;
      auto& rng = rngs[static_cast<std::size_t>(b)];
      for (Index j = 0; j < d; ++j) res.samples(b, j) = sd * normal(rng);
    });
  }

  for (Index i = 0; i < steps; ++i) {
    const double sigma = levels[i];
    const double t = sched.time_of_sigma(sigma);
    const double m = sched.scale(t);
    const bool last = i + 1 == steps;
    const double next_sigma = last ? 0.0 : levels[i + 1];
    // Ancestral step between adjacent levels: x_i = a x_{i+1} + sqrt(beta) z
    // forward, inverted as (x + beta * score) / a + sqrt(beta) z.
    const double a = last ? 1.0 : m / sched.scale(sched.time_of_sigma(next_sigma));
    const double decrement = last ? sigma * sigma : sigma * sigma - a * a * next_sigma * next_sigma;

    const Eigen::MatrixXd s = score.score_batch(res.samples, score.schedule().time_of_sigma(sigma), exec);
    for_each_index(exec, batch, [&](Index b) {
      auto& rng = rngs[static_cast<std::size_t>(b)];
      std::normal_distribution<double> normal;
      Eigen::VectorXd x = res.samples.row(b).transpose();
      const Eigen::VectorXd sb = s.row(b).transpose();
      const Eigen::VectorXd x0_hat = (x + sigma * sigma * sb) / m;

      Eigen::VectorXd guidance;
      if (op) {
        try {
          const auto lin = op->linearize(x0_hat);
          const Eigen::VectorXd r = obs->y - lin->value();
          const double rn = r.norm();
          res.misfit(i, b) = rn;
          if (rn > 0.0 && cfg.zeta > 0.0) {
            const Eigen::VectorXd jtr = lin->vjp(r);
            if (cfg.guidance == Guidance::misfit_normalized) {
              guidance = (cfg.zeta / rn) * (2.0 / m) * jtr;
            } else {
              guidance = cfg.zeta * decrement / (m * gamma2) * jtr;
            }
          }
        } catch (const StepFailure&) {
          throw;
        } catch (const Error& e) {
          throw StepFailure(std::string("forward operator failed: ") + e.what(),
                            static_cast<std::size_t>(i));
        }
      }

      if (last) {
        x = x0_hat;
      } else {
        x = (x + decrement * sb) / a;
        const double noise = std::sqrt(decrement);
        for (Index j = 0; j < d; ++j) x[j] += noise * normal(rng);
      }
      if (guidance.size() == d) x += guidance;
      if (!x.allFinite()) {
        throw StepFailure("reverse diffusion produced a non-finite state in chain " +
                              std::to_string(b),
                          static_cast<std::size_t>(i));
      }
      res.samples.row(b) = x.transpose();
    });
  }
  return res;
}

}  // namespace

SamplerResult sample_unconditional(const ScoreModel& score, const SamplerConfig& cfg, Exec exec) {
  return reverse_diffusion(score, nullptr, nullptr, cfg, exec);
}

SamplerResult sample_dps(const ScoreModel& score, const ForwardOperator& op, const Observation& obs,
                         const SamplerConfig& cfg, Exec exec) {
  return reverse_diffusion(score, &op, &obs, cfg, exec);
}

}  // namespace memprior
