#include <cstdio>
#include <functional>
#include <map>

#include <CLI11.hpp>

#include "memprior/cli.hpp"
#include "memprior/errors.hpp"
#include "memprior/log.hpp"
#include "memprior/parallel.hpp"

namespace memprior::cli {

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const InvalidArgument*>(&e) || dynamic_cast<const UnsupportedDimension*>(&e)) {
    return kConfigError;
  }
  return kNumericalFailure;
}

}  // namespace

int run_app(int argc, char** argv) {
  CLI::App app{"Memorized diffusion priors in Bayesian inverse problems"};
  app.require_subcommand(1);

  std::filesystem::path config_path;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  int threads = 0;
  bool quick = false;

  using Command = std::function<int(const ExperimentConfig&, const RunDirectory&)>;
  const std::map<std::string, std::pair<std::string, Command>> commands{
      {"stylized", {"grid oracle, linearized mixture and lookup table over a sigma sweep", cmd_stylized}},
      {"fwi-gen", {"KL basis, training sets, true model and noisy Helmholtz data", cmd_fwi_gen}},
      {"train", {"train a score network by denoising score matching", cmd_train}},
      {"sample", {"unconditional reverse diffusion", cmd_sample}},
      {"dps", {"diffusion posterior sampling", cmd_dps}},
      {"diagnose", {"memorization ratios, posterior summaries, calibration pairs", cmd_diagnose}},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "run directory (overrides output_dir)");
    sub->add_option("--seed", seed, "random seed (overrides config)");
    sub->add_option("--threads", threads, "OpenMP threads");
    subs[name] = sub;
  }
  auto* verify = app.add_subcommand("verify", "run the oracle suite");
  verify->add_option("--out", out_dir, "optional directory for verify.csv and a manifest");
  verify->add_option("--threads", threads, "OpenMP threads");
  verify->add_flag("--quick", quick, "smaller Helmholtz grids");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kConfigError;
  }
  if (threads > 0) set_thread_count(threads);

  try {
    if (verify->parsed()) {
      if (out_dir.empty()) return cmd_verify(nullptr, quick);
      RunDirectory run(out_dir);
      return cmd_verify(&run, quick);
    }
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      ExperimentConfig cfg = load_config(config_path);
      if (sub->count("--seed")) {
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.source["seed"] = seed;
      }
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      RunDirectory run(cfg.output_dir);
      return commands.at(name).second(cfg, run);
    }
  } catch (const StepFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumericalFailure;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumericalFailure;
  }
  return kConfigError;
}

}  // namespace memprior::cli
