#include <fstream>
#include <set>

#include "memprior/cli.hpp"
#include "memprior/errors.hpp"

namespace memprior::cli {

namespace {

using nlohmann::json;

// Reads keys from one JSON object and rejects any key it was not asked about.
class Section {
 public:
  Section(const json& node, std::string name) : node_(node), name_(std::move(name)) {
    if (!node_.is_object()) throw ConfigError("'" + name_ + "' must be an object");
  }

  void finish() const {
    for (const auto& [key, _] : node_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + qualified(key) + "'");
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = node_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("'" + qualified(key) + "' has the wrong type");
    }
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return node_.at(key);
  }

  std::string qualified(const std::string& key) const {
    return name_.empty() ? key : name_ + "." + key;
  }

 private:
  const json& node_;
  std::string name_;
  std::set<std::string> seen_;
};

Eigen::MatrixXd to_matrix(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError("'" + what + "' must be a non-empty array");
  // Flat array of numbers: one column per entry is ambiguous, so read as rows of length 1.
  if (!j.front().is_array()) {
    Eigen::MatrixXd m(static_cast<Index>(j.size()), 1);
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_number()) throw ConfigError("'" + what + "' must contain numbers");
      m(static_cast<Index>(i), 0) = j[i].get<double>();
    }
    return m;
  }
  const std::size_t cols = j.front().size();
  Eigen::MatrixXd m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw ConfigError("'" + what + "' rows differ in length");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[i][c].is_number()) throw ConfigError("'" + what + "' must contain numbers");
      m(static_cast<Index>(i), static_cast<Index>(c)) = j[i][c].get<double>();
    }
  }
  return m;
}

Eigen::VectorXd to_vector(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError("'" + what + "' must be a non-empty array");
  Eigen::VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError("'" + what + "' must contain numbers");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

SamplerConfig ExperimentConfig::sampler_config() const {
  SamplerConfig s;
  s.n_steps = sampler.n_steps;
  s.schedule = schedule();
  s.zeta = sampler.zeta;
  s.batch = sampler.batch;
  s.seed = seed;
  s.guidance = sampler.guidance;
  return s;
}

ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  cfg.source = doc;
  Section top(doc, "");
  top.read("experiment", cfg.experiment);
  require(cfg.experiment == "stylized-1d" || cfg.experiment == "stylized-2d" || cfg.experiment == "fwi",
          "experiment must be one of stylized-1d, stylized-2d, fwi");
  const bool fwi = cfg.experiment == "fwi";
  const bool two_d = cfg.experiment == "stylized-2d";

  std::string out;
  top.read("output_dir", out);
  cfg.output_dir = resolve(base_dir, out);
  top.read("seed", cfg.seed);

  cfg.op.preset = fwi ? "helmholtz-kl" : (two_d ? "pentagon2d" : "cubic1d");
  if (fwi) cfg.op.gamma = 0.0;
  if (top.has("operator")) {
    Section s(top.at("operator"), "operator");
    s.read("preset", cfg.op.preset);
    s.read("gamma", cfg.op.gamma);
    s.read("relative_noise", cfg.op.relative_noise);
    if (s.has("matrix")) cfg.op.matrix = to_matrix(s.at("matrix"), "operator.matrix");
    s.finish();
  }
  const std::set<std::string> presets{"cubic1d", "pentagon2d", "linear", "helmholtz-kl"};
  require(presets.count(cfg.op.preset) == 1, "unknown operator preset '" + cfg.op.preset + "'");
  require(fwi == (cfg.op.preset == "helmholtz-kl"), "operator 'helmholtz-kl' goes with experiment 'fwi' only");
  require(cfg.op.preset != "linear" || cfg.op.matrix.has_value(), "operator 'linear' needs 'matrix'");
  require(fwi || cfg.op.gamma > 0.0, "operator.gamma must be positive");
  require(cfg.op.relative_noise > 0.0, "operator.relative_noise must be positive");

  if (top.has("helmholtz")) {
    Section s(top.at("helmholtz"), "helmholtz");
    auto& h = cfg.helmholtz;
    s.read("nx", h.nx);
    s.read("nz", h.nz);
    if (s.has("extent")) {
      s.read("extent", h.extent_x);
      h.extent_z = h.extent_x;
    }
    s.read("freq_hz", h.freq_hz);
    s.read("pml_cells", h.pml_cells);
    s.read("pml_strength", h.pml_strength);
    s.read("n_sources", h.n_sources);
    s.read("n_receivers", h.n_receivers);
    s.read("source_row", h.source_row);
    s.read("receiver_row_from_bottom", h.receiver_row_from_bottom);
    s.read("edge_margin", h.edge_margin);
    s.read("background_slowness_sq", h.background_slowness_sq);
    s.read("velocity_min", h.velocity_min);
    s.read("velocity_max", h.velocity_max);
    s.read("source_amplitude", h.source_amplitude);
    s.finish();
  }
  if (fwi) {
    try {
      cfg.helmholtz.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("helmholtz: ") + e.what());
    }
  }

  if (top.has("klfield")) {
    Section s(top.at("klfield"), "klfield");
    s.read("n_terms", cfg.kl.n_terms);
    s.read("alpha", cfg.kl.alpha);
    s.read("tau", cfg.kl.tau);
    s.read("amplitude", cfg.kl.amplitude);
    s.read("distance_weighting", cfg.kl.distance_weighting);
    s.finish();
  }
  require(cfg.kl.n_terms >= 1, "klfield.n_terms must be >= 1");
  require(cfg.kl.alpha > 0.0 && cfg.kl.tau > 0.0, "klfield.alpha and klfield.tau must be positive");
  require(cfg.kl.amplitude > 0.0, "klfield.amplitude must be positive");
  require(cfg.kl.distance_weighting == "whitened" || cfg.kl.distance_weighting == "lambda",
          "klfield.distance_weighting must be 'whitened' or 'lambda'");

  cfg.training.source = fwi ? "generated" : "preset";
  cfg.training.preset = two_d ? "pentagon" : "cubic1d";
  if (top.has("training")) {
    Section s(top.at("training"), "training");
    s.read("source", cfg.training.source);
    s.read("preset", cfg.training.preset);
    if (s.has("examples")) {
      cfg.training.examples = to_matrix(s.at("examples"), "training.examples");
      if (!s.has("source") || cfg.training.source == "preset") cfg.training.source = "inline";
    }
    std::string path;
    s.read("path", path);
    cfg.training.path = resolve(base_dir, path);
    s.read("sizes", cfg.training.sizes);
    s.read("n", cfg.training.n);
    s.finish();
  }
  {
    const auto& t = cfg.training;
    const std::set<std::string> sources{"preset", "inline", "file", "generated"};
    require(sources.count(t.source) == 1, "training.source must be preset, inline, file or generated");
    require(t.source != "preset" || t.preset == "cubic1d" || t.preset == "pentagon",
            "training.preset must be 'cubic1d' or 'pentagon'");
    require(t.source != "inline" || t.examples.has_value(), "training.source 'inline' needs 'examples'");
    require(t.source != "file" || !t.path.empty(), "training.source 'file' needs 'path'");
    require(!t.sizes.empty(), "training.sizes must not be empty");
    for (Index n : t.sizes) require(n >= 2, "training.sizes entries must be >= 2");
    require(t.n >= 0, "training.n must be >= 0");
  }

  if (top.has("observation")) {
    Section s(top.at("observation"), "observation");
    if (s.has("y")) cfg.observation.y = to_vector(s.at("y"), "observation.y");
    if (s.has("true_model")) cfg.observation.true_model = to_vector(s.at("true_model"), "observation.true_model");
    s.read("add_noise", cfg.observation.add_noise);
    s.finish();
  }

  if (top.has("schedule")) {
    Section s(top.at("schedule"), "schedule");
    std::string kind = std::string(to_string(cfg.schedule_kind));
    s.read("kind", kind);
    try {
      cfg.schedule_kind = parse_schedule_kind(kind);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("schedule.kind: ") + e.what());
    }
    s.read("sigma_min", cfg.sigma_min);
    s.read("sigma_max", cfg.sigma_max);
    s.finish();
  }
  try {
    (void)cfg.schedule();
  } catch (const Error& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }

  if (top.has("stylized")) {
    Section s(top.at("stylized"), "stylized");
    s.read("sigmas", cfg.stylized.sigmas);
    s.read("grid_points", cfg.stylized.grid_points);
    s.read("collapse_radius", cfg.stylized.collapse_radius);
    s.read("limit_sigmas", cfg.stylized.limit_sigmas);
    s.finish();
  }
  require(!cfg.stylized.sigmas.empty(), "stylized.sigmas must not be empty");
  for (double v : cfg.stylized.sigmas) require(v > 0.0, "stylized.sigmas must be positive");
  for (std::size_t i = 1; i < cfg.stylized.limit_sigmas.size(); ++i) {
    require(cfg.stylized.limit_sigmas[i] < cfg.stylized.limit_sigmas[i - 1],
            "stylized.limit_sigmas must be strictly decreasing");
  }
  require(cfg.stylized.grid_points == 0 || cfg.stylized.grid_points >= 3, "stylized.grid_points must be >= 3");
  require(cfg.stylized.collapse_radius >= 0.0, "stylized.collapse_radius must be >= 0");

  if (top.has("train")) {
    Section s(top.at("train"), "train");
    s.read("steps", cfg.train.steps);
    s.read("batch", cfg.train.batch);
    s.read("learning_rate", cfg.train.learning_rate);
    s.read("clip_norm", cfg.train.clip_norm);
    s.read("final_lr_fraction", cfg.train.final_lr_fraction);
    s.read("hidden", cfg.net.hidden);
    s.read("time_features", cfg.net.time_features);
    s.finish();
  }
  require(cfg.train.steps >= 1, "train.steps must be >= 1");
  require(cfg.train.batch >= 1, "train.batch must be >= 1");
  require(cfg.train.learning_rate > 0.0, "train.learning_rate must be positive");
  require(cfg.train.final_lr_fraction > 0.0 && cfg.train.final_lr_fraction <= 1.0,
          "train.final_lr_fraction must be in (0, 1]");
  require(cfg.net.time_features >= 0 && cfg.net.time_features % 2 == 0,
          "train.time_features must be a nonnegative even number");
  for (Index h : cfg.net.hidden) require(h >= 1, "train.hidden widths must be positive");
  cfg.train.seed = cfg.seed;

  if (top.has("sampler")) {
    Section s(top.at("sampler"), "sampler");
    s.read("n_steps", cfg.sampler.n_steps);
    s.read("zeta", cfg.sampler.zeta);
    s.read("batch", cfg.sampler.batch);
    s.read("score", cfg.sampler.score);
    std::string g = std::string(to_string(cfg.sampler.guidance));
    s.read("guidance", g);
    try {
      cfg.sampler.guidance = parse_guidance(g);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("sampler.guidance: ") + e.what());
    }
    s.finish();
  }
  require(cfg.sampler.n_steps >= 2, "sampler.n_steps must be >= 2");
  require(cfg.sampler.zeta >= 0.0, "sampler.zeta must be >= 0");
  require(cfg.sampler.batch >= 1, "sampler.batch must be >= 1");
  require(cfg.sampler.score == "analytic" || cfg.sampler.score == "net",
          "sampler.score must be 'analytic' or 'net'");

  if (top.has("diagnostics")) {
    Section s(top.at("diagnostics"), "diagnostics");
    s.read("threshold", cfg.diagnostics.threshold);
    s.read("k", cfg.diagnostics.k);
    s.finish();
  }
  require(cfg.diagnostics.threshold > 0.0, "diagnostics.threshold must be positive");
  require(cfg.diagnostics.k == 0 || cfg.diagnostics.k >= 2, "diagnostics.k must be 0 (all) or >= 2");

  if (top.has("inputs")) {
    Section s(top.at("inputs"), "inputs");
    std::string v;
    auto path_key = [&](const char* key, std::filesystem::path& dst) {
      v.clear();
      s.read(key, v);
      dst = resolve(base_dir, v);
    };
    path_key("dataset_dir", cfg.inputs.dataset_dir);
    path_key("training", cfg.inputs.training);
    path_key("checkpoint", cfg.inputs.checkpoint);
    path_key("samples", cfg.inputs.samples);
    path_key("truth", cfg.inputs.truth);
    s.finish();
  }
  for (const auto* p : {&cfg.inputs.dataset_dir, &cfg.inputs.training, &cfg.inputs.checkpoint,
                        &cfg.inputs.samples, &cfg.inputs.truth, &cfg.training.path}) {
    require(p->empty() || std::filesystem::exists(*p), "input path does not exist: " + p->string());
  }
  top.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_config(doc, path.parent_path());
}

}  // namespace memprior::cli
