#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "memprior/cli.hpp"
#include "memprior/diagnostics.hpp"
#include "memprior/errors.hpp"
#include "memprior/forward_ops.hpp"
#include "memprior/klfield.hpp"
#include "memprior/log.hpp"
#include "memprior/matrix_io.hpp"
#include "memprior/posteriors.hpp"

namespace memprior::cli {

namespace {

using nlohmann::json;

std::string sigma_tag(double s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

OperatorHandle stylized_operator(const ExperimentConfig& cfg) {
  if (cfg.op.preset == "cubic1d") return make_cubic1d(cfg.op.gamma);
  if (cfg.op.preset == "pentagon2d") return make_pentagon2d(cfg.op.gamma);
  if (cfg.op.preset == "linear") return make_linear(*cfg.op.matrix, cfg.op.gamma);
  throw ConfigError("operator '" + cfg.op.preset + "' is not a stylized operator");
}

// ---------------------------------------------------------------------------
// FWI datasets

struct Dataset {
  std::filesystem::path dir;
  HelmholtzConfig helmholtz;
  std::shared_ptr<const KlBasis> basis;
  double gamma = 1.0;
  Eigen::VectorXd observed;
  Eigen::VectorXd truth;
  std::vector<Index> sizes;
};

json helmholtz_json(const HelmholtzConfig& h) {
  return {{"nx", h.nx},
          {"nz", h.nz},
          {"extent_x", h.extent_x},
          {"extent_z", h.extent_z},
          {"freq_hz", h.freq_hz},
          {"pml_cells", h.pml_cells},
          {"pml_strength", h.pml_strength},
          {"n_sources", h.n_sources},
          {"n_receivers", h.n_receivers},
          {"source_row", h.source_row},
          {"receiver_row_from_bottom", h.receiver_row_from_bottom},
          {"edge_margin", h.edge_margin},
          {"background_slowness_sq", h.background_slowness_sq},
          {"velocity_min", h.velocity_min},
          {"velocity_max", h.velocity_max},
          {"source_amplitude", h.source_amplitude}};
}

HelmholtzConfig helmholtz_from_json(const json& j) {
  HelmholtzConfig h;
  h.nx = j.at("nx").get<Index>();
  h.nz = j.at("nz").get<Index>();
  h.extent_x = j.at("extent_x").get<double>();
  h.extent_z = j.at("extent_z").get<double>();
  h.freq_hz = j.at("freq_hz").get<double>();
  h.pml_cells = j.at("pml_cells").get<Index>();
  h.pml_strength = j.at("pml_strength").get<double>();
  h.n_sources = j.at("n_sources").get<Index>();
  h.n_receivers = j.at("n_receivers").get<Index>();
  h.source_row = j.at("source_row").get<Index>();
  h.receiver_row_from_bottom = j.at("receiver_row_from_bottom").get<Index>();
  h.edge_margin = j.at("edge_margin").get<Index>();
  h.background_slowness_sq = j.at("background_slowness_sq").get<double>();
  h.velocity_min = j.at("velocity_min").get<double>();
  h.velocity_max = j.at("velocity_max").get<double>();
  h.source_amplitude = j.at("source_amplitude").get<double>();
  return h;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (dir.empty()) throw ConfigError("this command needs inputs.dataset_dir for experiment 'fwi'");
  std::ifstream in(dir / "dataset.json");
  if (!in) throw ConfigError("no dataset.json in " + dir.string());
  Dataset ds;
  ds.dir = dir;
  try {
    const json j = json::parse(in);
    ds.helmholtz = helmholtz_from_json(j.at("helmholtz"));
    ds.gamma = j.at("gamma").get<double>();
    ds.sizes = j.at("sizes").get<std::vector<Index>>();
  } catch (const json::exception& e) {
    throw ConfigError("malformed dataset.json: " + std::string(e.what()));
  }
  ds.basis = std::make_shared<const KlBasis>(load_basis(dir / "basis"));
  ds.observed = io::read_vector(dir / "observed.mpst");
  ds.truth = io::read_vector(dir / "true_coeffs.mpst");
  return ds;
}

TrainingSet load_training(const ExperimentConfig& cfg) {
  if (!cfg.inputs.training.empty()) return TrainingSet(io::read_matrix(cfg.inputs.training));
  const auto& t = cfg.training;
  if (t.source == "preset") return t.preset == "pentagon" ? pentagon_training() : cubic1d_default_training();
  if (t.source == "inline") return TrainingSet(*t.examples);
  if (t.source == "file") return TrainingSet(io::read_matrix(t.path));
  // generated: read the chosen size from the dataset directory
  if (cfg.inputs.dataset_dir.empty()) {
    throw ConfigError("generated training sets are read from inputs.dataset_dir (run fwi-gen first)");
  }
  if (t.n == 0) throw ConfigError("training.n selects which generated training set to use");
  const auto path = cfg.inputs.dataset_dir / ("training_N" + std::to_string(t.n) + ".mpst");
  if (!std::filesystem::exists(path)) throw ConfigError("dataset has no " + path.filename().string());
  return TrainingSet(io::read_matrix(path));
}

Observation stylized_observation(const ExperimentConfig& cfg, const ForwardOperator& op) {
  const auto& o = cfg.observation;
  if (o.y) return loaded_observation(op, *o.y);
  if (o.true_model) return synthesize_observation(op, *o.true_model, o.add_noise, cfg.seed);
  if (cfg.op.preset == "cubic1d") return cubic1d_observation(op);
  if (cfg.op.preset == "pentagon2d") return pentagon_observation(op);
  throw ConfigError("operator 'linear' needs observation.y or observation.true_model");
}

void check_training_dim(const TrainingSet& training, const ForwardOperator& op) {
  if (training.dim() != op.model_dim()) {
    throw ConfigError("training examples have dimension " + std::to_string(training.dim()) +
                      " but operator '" + op.name() + "' expects " + std::to_string(op.model_dim()));
  }
}

ManifestInfo start_manifest(const std::string& command, const ExperimentConfig& cfg) {
  ManifestInfo info;
  info.command = command;
  info.config = cfg.source;
  info.seeds = {{"seed", cfg.seed}};
  info.started = utc_timestamp();
  return info;
}

void write_samples_and_trace(const RunDirectory& run, const SamplerResult& res,
                             const SamplerConfig& scfg) {
  io::write_matrix(run.file("samples.mpst"), res.samples);
  if (res.misfit.rows() == 0) return;
  io::write_matrix(run.file("misfit.mpst"), res.misfit);
  const Eigen::VectorXd levels = scfg.sigma_levels();
  io::CsvWriter csv(run.file("misfit_summary.csv"), {"step", "sigma", "mean", "min", "max"});
  for (Index i = 0; i < res.misfit.rows(); ++i) {
    csv.add_row({static_cast<long long>(i), levels[i], res.misfit.row(i).mean(),
                 res.misfit.row(i).minCoeff(), res.misfit.row(i).maxCoeff()});
  }
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_stylized(const ExperimentConfig& cfg, const RunDirectory& run) {
  if (cfg.experiment == "fwi") throw ConfigError("'stylized' needs experiment stylized-1d or stylized-2d");
  auto info = start_manifest("stylized", cfg);
  const OperatorHandle op = stylized_operator(cfg);
  const TrainingSet training = load_training(cfg);
  check_training_dim(training, *op);
  if (training.dim() > 2) throw ConfigError("stylized runs need d = 1 or 2");
  const Observation obs = stylized_observation(cfg, *op);
  const Index d = training.dim();

  const LookupTable table = lookup_table_weights(training, *op, obs);
  {
    std::vector<std::string> header{"n"};
    for (Index k = 0; k < d; ++k) header.push_back("x" + std::to_string(k + 1));
    header.insert(header.end(), {"misfit", "weight"});
    io::CsvWriter csv(run.file("lookup_weights.csv"), header);
    for (Index n = 0; n < training.size(); ++n) {
      std::vector<io::CsvWriter::Cell> row{static_cast<long long>(n)};
      for (Index k = 0; k < d; ++k) row.emplace_back(training.examples()(n, k));
      row.emplace_back(table.misfits[n]);
      row.emplace_back(table.weights[n]);
      csv.add_row(row);
    }
  }

  const double smallest = *std::min_element(cfg.stylized.sigmas.begin(), cfg.stylized.sigmas.end());
  const double radius = cfg.stylized.collapse_radius > 0.0 ? cfg.stylized.collapse_radius : 3.0 * smallest;
  io::CsvWriter summary(run.file("summary.csv"),
                        {"sigma", "tv_linearized", "mass_within_radius", "radius", "mass_within_3sigma",
                         "integral"});
  std::vector<Eigen::VectorXd> extra;
  if (obs.true_model) extra.push_back(*obs.true_model);
  for (double sigma : cfg.stylized.sigmas) {
    const GridSpec grid = GridSpec::covering(training, sigma, 6.0, extra, cfg.stylized.grid_points);
    const GridPosterior exact = grid_oracle(training, *op, obs, sigma, grid);
    const MixturePosterior lin = linearized_mixture(training, *op, obs, sigma);
    const Eigen::VectorXd lin_density = lin.density_on(grid);
    Eigen::VectorXd prior(grid.size());
    for (Index q = 0; q < grid.size(); ++q) {
      prior[q] = std::exp(mixture_log_density(training.examples(), grid.node(q), 1.0, sigma));
    }
    const std::string tag = sigma_tag(sigma);
    {
      std::vector<std::string> header;
      for (Index k = 0; k < d; ++k) header.push_back("x" + std::to_string(k + 1));
      header.insert(header.end(), {"exact", "linearized", "prior"});
      io::CsvWriter csv(run.file("grid_sigma" + tag + ".csv"), header);
      for (Index q = 0; q < grid.size(); ++q) {
        const Eigen::VectorXd x = grid.node(q);
        std::vector<io::CsvWriter::Cell> row;
        for (Index k = 0; k < d; ++k) row.emplace_back(x[k]);
        row.emplace_back(exact.density()[q]);
        row.emplace_back(lin_density[q]);
        row.emplace_back(prior[q]);
        csv.add_row(row);
      }
    }
    save_mixture(lin, run.path() / ("mixture_sigma" + tag));
    summary.add_row({sigma, exact.total_variation(lin_density),
                     exact.mass_within(training.examples(), radius), radius,
                     exact.mass_within(training.examples(), 3.0 * sigma), exact.integral()});
  }

  if (!cfg.stylized.limit_sigmas.empty()) {
    const SigmaPathReport rep = sigma_zero_limit_check(training, *op, obs, cfg.stylized.limit_sigmas);
    io::CsvWriter csv(run.file("sigma_limit.csv"), {"sigma", "l1_distance"});
    for (std::size_t i = 0; i < rep.sigmas.size(); ++i) csv.add_row({rep.sigmas[i], rep.l1_distance[i]});
    info.extra["sigma_limit"] = {{"monotone", rep.monotone}, {"final_distance", rep.final_distance}};
  }
  summary.close();
  info.extra["collapse_radius"] = radius;
  write_run_manifest(run, info);
  return kSuccess;
}

int cmd_fwi_gen(const ExperimentConfig& cfg, const RunDirectory& run) {
  if (cfg.experiment != "fwi") throw ConfigError("'fwi-gen' needs experiment 'fwi'");
  auto info = start_manifest("fwi-gen", cfg);
  const HelmholtzConfig& h = cfg.helmholtz;
  for (const auto& w : h.warnings()) warn(w);
  auto basis = std::make_shared<const KlBasis>(build_basis(h.nx, h.nz, cfg.kl.alpha, cfg.kl.tau, cfg.kl.n_terms,
                                                           h.background_slowness_sq, cfg.kl.amplitude));
  save_basis(*basis, run.path() / "basis");

  std::vector<Index> sizes = cfg.training.sizes;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  const Eigen::MatrixXd all = sample_coefficients(basis->n_terms(), sizes.back(), cfg.seed);
  for (Index n : sizes) io::write_matrix(run.file("training_N" + std::to_string(n) + ".mpst"), all.topRows(n));

  // True model: mean of the three examples of the N = 50 set (or the
  // smallest set) whose leave-one-out nearest-neighbor ratio is lowest.
  const Index base_n = std::find(sizes.begin(), sizes.end(), 50) != sizes.end() ? 50 : sizes.front();
  if (base_n < 4) throw ConfigError("the true-model recipe needs a training set of at least 4 examples");
  const ExampleBlend blend = blend_tight_examples(TrainingSet(all.topRows(base_n)));
  const Eigen::VectorXd& truth = blend.model;
  const std::vector<Index>& picked = blend.members;
  io::write_vector(run.file("true_coeffs.mpst"), truth);
  const Eigen::VectorXd field = basis->synthesize(truth);
  io::write_matrix(run.file("true_field.mpst"),
                   Eigen::Map<const Eigen::MatrixXd>(field.data(), h.nx, h.nz).transpose());

  HelmholtzKlOperator probe(h, basis, 1.0, Exec::parallel);
  const Eigen::VectorXd clean = probe.evaluate(truth);
  const double gamma = relative_noise_gamma(clean, cfg.op.relative_noise);
  Eigen::VectorXd observed = clean;
  {
    auto rng = stream_rng(cfg.seed, 0xda7au);
    std::normal_distribution<double> normal;
    for (Index i = 0; i < observed.size(); ++i) observed[i] += gamma * normal(rng);
  }
  io::write_vector(run.file("clean_data.mpst"), clean);
  io::write_vector(run.file("observed.mpst"), observed);

  const Acquisition acq = make_acquisition(h);
  json sources = json::array();
  json receivers = json::array();
  for (const auto& s : acq.sources) sources.push_back({s.ix, s.iz});
  for (const auto& r : acq.receivers) receivers.push_back({r.ix, r.iz});
  const json dataset = {
      {"kind", "fwi-dataset"},
      {"helmholtz", helmholtz_json(h)},
      {"acquisition", {{"sources", sources}, {"receivers", receivers}, {"data_layout", "source-major, (re, im) per receiver"}}},
      {"klfield", {{"n_terms", cfg.kl.n_terms}, {"alpha", cfg.kl.alpha}, {"tau", cfg.kl.tau}, {"amplitude", cfg.kl.amplitude}}},
      {"gamma", gamma},
      {"relative_noise", cfg.op.relative_noise},
      {"sizes", sizes},
      {"true_model_members", picked},
      {"true_model_base_size", base_n},
  };
  std::ofstream(run.file("dataset.json")) << dataset.dump(2) << '\n';
  info.seeds.emplace_back("noise_stream", 0xda7au);
  info.extra["gamma"] = gamma;
  write_run_manifest(run, info);
  return kSuccess;
}

int cmd_train(const ExperimentConfig& cfg, const RunDirectory& run) {
  auto info = start_manifest("train", cfg);
  const TrainingSet training = load_training(cfg);
  ScoreNetSpec spec = cfg.net;
  spec.dim = training.dim();
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const TrainResult result = train(training, spec, cfg.schedule(), tc);
  save_checkpoint(result.net, {tc.seed, tc.steps}, run.path() / "checkpoint");
  io::CsvWriter csv(run.file("loss_trace.csv"), {"step", "loss"});
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    csv.add_row({static_cast<long long>(i), result.loss_trace[i]});
  }
  csv.close();
  info.extra["final_loss"] = result.loss_trace.back();
  write_run_manifest(run, info);
  return kSuccess;
}

namespace {

std::unique_ptr<ScoreModel> make_score(const ExperimentConfig& cfg, const TrainingSet& training) {
  if (cfg.sampler.score == "analytic") return std::make_unique<GmmPrior>(training, cfg.schedule());
  if (cfg.inputs.checkpoint.empty()) throw ConfigError("sampler.score 'net' needs inputs.checkpoint");
  auto net = std::make_unique<ScoreNet>(load_checkpoint(cfg.inputs.checkpoint));
  if (net->dim() != training.dim()) throw ConfigError("checkpoint dimension differs from the training set");
  return net;
}

}  // namespace

int cmd_sample(const ExperimentConfig& cfg, const RunDirectory& run) {
  auto info = start_manifest("sample", cfg);
  const TrainingSet training = load_training(cfg);
  const auto score = make_score(cfg, training);
  const SamplerConfig scfg = cfg.sampler_config();
  const SamplerResult res = sample_unconditional(*score, scfg);
  write_samples_and_trace(run, res, scfg);
  write_run_manifest(run, info);
  return kSuccess;
}

int cmd_dps(const ExperimentConfig& cfg, const RunDirectory& run) {
  auto info = start_manifest("dps", cfg);
  const TrainingSet training = load_training(cfg);
  const auto score = make_score(cfg, training);
  const SamplerConfig scfg = cfg.sampler_config();
  SamplerResult res;
  if (cfg.experiment == "fwi") {
    const Dataset ds = load_dataset(cfg.inputs.dataset_dir);
    HelmholtzKlOperator op(ds.helmholtz, ds.basis, ds.gamma, Exec::serial);
    check_training_dim(training, op);
    res = sample_dps(*score, op, loaded_observation(op, ds.observed), scfg);
  } else {
    const OperatorHandle op = stylized_operator(cfg);
    check_training_dim(training, *op);
    res = sample_dps(*score, *op, stylized_observation(cfg, *op), scfg);
  }
  write_samples_and_trace(run, res, scfg);
  info.extra["final_mean_misfit"] = res.final_mean_misfit();
  write_run_manifest(run, info);
  return kSuccess;
}

int cmd_diagnose(const ExperimentConfig& cfg, const RunDirectory& run) {
  auto info = start_manifest("diagnose", cfg);
  if (cfg.inputs.samples.empty()) throw ConfigError("'diagnose' needs inputs.samples");
  TrainingSet training = load_training(cfg);
  Eigen::MatrixXd samples = io::read_matrix(cfg.inputs.samples);
  if (samples.cols() != training.dim()) throw ConfigError("samples and training set differ in dimension");

  std::optional<Dataset> ds;
  if (!cfg.inputs.dataset_dir.empty()) ds = load_dataset(cfg.inputs.dataset_dir);
  std::optional<Eigen::VectorXd> truth;
  if (!cfg.inputs.truth.empty()) {
    truth = io::read_vector(cfg.inputs.truth);
  } else if (ds) {
    truth = ds->truth;
  } else if (cfg.observation.true_model) {
    truth = *cfg.observation.true_model;
  }

  // Distances may be measured on lambda-weighted coefficients instead of whitened ones.
  Eigen::MatrixXd dist_samples = samples;
  TrainingSet dist_training = training;
  if (cfg.kl.distance_weighting == "lambda") {
    if (!ds) throw ConfigError("distance_weighting 'lambda' needs inputs.dataset_dir for the KL eigenvalues");
    const Eigen::RowVectorXd w = ds->basis->eigenvalues().cwiseSqrt().transpose();
    dist_samples = samples.array().rowwise() * w.array();
    dist_training = TrainingSet(training.examples().array().rowwise() * w.array());
  }
  if (training.size() < 2) throw ConfigError("nearest-neighbor ratios need at least 2 training examples");
  const MemorizationReport mem = memorization_rate(dist_samples, dist_training, cfg.diagnostics.threshold,
                                                   cfg.diagnostics.k);
  write_memorization_csv(mem, run.file("memorization.csv"));

  const KlBasis* basis = ds ? ds->basis.get() : nullptr;
  const PosteriorSummary summary = posterior_summary(samples, basis);
  io::write_vector(run.file("posterior_mean.mpst"), summary.mean);
  io::write_vector(run.file("posterior_std.mpst"), summary.std);
  if (summary.field_mean) {
    const auto nx = basis->nx();
    const auto nz = basis->nz();
    io::write_matrix(run.file("field_mean.mpst"),
                     Eigen::Map<const Eigen::MatrixXd>(summary.field_mean->data(), nx, nz).transpose());
    io::write_matrix(run.file("field_std.mpst"),
                     Eigen::Map<const Eigen::MatrixXd>(summary.field_std->data(), nx, nz).transpose());
  }
  json report = {{"memorization_rate", mem.rate},
                 {"threshold", mem.threshold},
                 {"k", cfg.diagnostics.k == 0 ? training.size() : cfg.diagnostics.k},
                 {"samples", samples.rows()},
                 {"training_size", training.size()},
                 {"distance_weighting", cfg.kl.distance_weighting}};
  if (truth) {
    if (truth->size() != samples.cols()) throw ConfigError("truth and samples differ in dimension");
    const CalibrationReport cal = calibration_pairs(samples, *truth);
    write_calibration_csv(cal, run.file("calibration.csv"));
    report["overconfident_fraction"] = cal.overconfident_fraction;
    report["overconfident_spread"] = cal.overconfident_spread;
  }
  std::ofstream(run.file("report.json")) << report.dump(2) << '\n';
  std::printf("memorization rate %.4f (threshold %.3g, %lld samples)\n", mem.rate, mem.threshold,
              static_cast<long long>(samples.rows()));
  info.extra["memorization_rate"] = mem.rate;
  write_run_manifest(run, info);
  return kSuccess;
}

}  // namespace memprior::cli
