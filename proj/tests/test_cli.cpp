#include <doctest.h>

#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "memprior/cli.hpp"
#include "memprior/errors.hpp"
#include "memprior/log.hpp"
#include "memprior/matrix_io.hpp"
#include "support.hpp"

using namespace memprior;
using namespace memprior::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "memprior");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_app(static_cast<int>(argv.size()), argv.data());
}

fs::path write_json(const fs::path& p, const json& j) {
  std::ofstream(p) << j.dump(2);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

json stylized_doc() {
  return {{"experiment", "stylized-1d"},
          {"seed", 3},
          {"stylized", {{"sigmas", {0.5, 0.05}}, {"grid_points", 401}}},
          {"sampler", {{"n_steps", 30}, {"batch", 16}, {"zeta", 0.1}}}};
}

json tiny_fwi_doc() {
  return {{"experiment", "fwi"},
          {"seed", 5},
          {"helmholtz", {{"nx", 16}, {"nz", 16}, {"freq_hz", 1.5}, {"pml_cells", 6}, {"n_sources", 3}, {"n_receivers", 8}}},
          {"klfield", {{"n_terms", 8}}},
          {"training", {{"sizes", {6, 12}}, {"n", 6}}},
          {"sampler", {{"n_steps", 5}, {"batch", 4}}}};
}

struct QuietWarnings {
  QuietWarnings() { set_warning_sink([](const std::string&) {}); }
  ~QuietWarnings() { set_warning_sink(nullptr); }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("shipped configs parse") {
  for (const char* name : {"stylized-1d.json", "stylized-2d.json", "fwi.json", "fwi-small.json"}) {
    CAPTURE(name);
    const ExperimentConfig cfg = load_config(fs::path(MEMPRIOR_SOURCE_DIR) / "configs" / name);
    CHECK(!cfg.output_dir.empty());
  }
  const ExperimentConfig fwi = load_config(fs::path(MEMPRIOR_SOURCE_DIR) / "configs" / "fwi.json");
  CHECK(fwi.helmholtz.nx == 200);
  CHECK(fwi.training.sizes == std::vector<Index>{50, 200, 1000});
  CHECK(fwi.sampler.batch == 256);
}

TEST_CASE("defaults follow the experiment kind") {
  const ExperimentConfig a = parse_config(json{{"experiment", "stylized-2d"}});
  CHECK(a.op.preset == "pentagon2d");
  CHECK(a.training.preset == "pentagon");
  CHECK(a.stylized.sigmas == std::vector<double>{0.5, 0.3, 0.05});
  CHECK(a.sampler.n_steps == 500);
  CHECK(a.sampler.zeta == 1.0);
  CHECK(a.sigma_min == 0.01);
  const ExperimentConfig b = parse_config(json{{"experiment", "fwi"}});
  CHECK(b.op.preset == "helmholtz-kl");
  CHECK(b.training.source == "generated");
}

TEST_CASE("strict parsing rejects unknown keys, bad types and bad ranges") {
  CHECK_THROWS_AS(parse_config(json{{"experimnt", "fwi"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"sampler", {{"n_step", 3}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"sampler", {{"n_steps", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"sampler", {{"n_steps", 1}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"sampler", {{"zeta", -1.0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"sampler", {{"guidance", "strong"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"schedule", {{"sigma_min", 0.0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"schedule", {{"kind", "vp"}, {"sigma_max", 10.0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"experiment", "fwi"}, {"helmholtz", {{"n_receivers", 1000}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"experiment", "nonsense"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"operator", {{"preset", "linear"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"inputs", {{"samples", "/no/such/file.mpst"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"klfield", {{"distance_weighting", "euclid"}}}}), ConfigError);
  CHECK_NOTHROW(parse_config(json{{"schedule", {{"kind", "vp"}, {"sigma_max", 0.99}}}}));
}

TEST_CASE("run directories are exclusive") {
  testing::TempDir dir("lock");
  {
    RunDirectory a(dir / "run");
    CHECK(fs::exists(dir / "run" / ".lock"));
    CHECK_THROWS_AS(RunDirectory(dir / "run"), IoError);
  }
  CHECK(!fs::exists(dir / "run" / ".lock"));
  CHECK_NOTHROW(RunDirectory(dir / "run"));
}

TEST_CASE("exit codes") {
  testing::TempDir dir("exit");
  CHECK(run({"stylized"}) == kConfigError);
  CHECK(run({"no-such-command"}) == kConfigError);
  const auto bad = write_json(dir / "bad.json", json{{"experiment", "stylized-1d"}, {"typo", 1}});
  CHECK(run({"stylized", "--config", bad.string(), "--out", (dir / "o1").string()}) == kConfigError);
  CHECK(run({"stylized", "--config", (dir / "missing.json").string(), "--out", (dir / "o2").string()}) == kConfigError);

  const auto good = write_json(dir / "good.json", stylized_doc());
  {
    RunDirectory hold(dir / "locked");
    CHECK(run({"stylized", "--config", good.string(), "--out", (dir / "locked").string()}) == kConfigError);
  }

  json diverge = stylized_doc();
  diverge["train"] = {{"steps", 100}, {"batch", 4}, {"learning_rate", 1e250}, {"hidden", {8}}};
  const auto div = write_json(dir / "div.json", diverge);
  CHECK(run({"train", "--config", div.string(), "--out", (dir / "o3").string()}) == kNumericalFailure);

  QuietWarnings quiet;
  CHECK(run({"verify", "--quick"}) == kSuccess);
}

TEST_CASE("stylized run writes a complete manifest and reruns byte for byte") {
  testing::TempDir dir("styl");
  const auto cfg = write_json(dir / "cfg.json", stylized_doc());
  REQUIRE(run({"stylized", "--config", cfg.string(), "--out", (dir / "a").string()}) == kSuccess);
  REQUIRE(run({"stylized", "--config", cfg.string(), "--out", (dir / "b").string()}) == kSuccess);

  const json m = read_json(dir / "a" / "manifest.json");
  CHECK(m["command"] == "stylized");
  CHECK(m["config"] == stylized_doc());
  CHECK(m["seeds"]["seed"] == 3);
  CHECK(m.contains("version"));
  CHECK(m.contains("started_utc"));
  std::size_t listed = 0;
  for (const auto& f : m["files"]) {
    const fs::path p = dir / "a" / f["path"].get<std::string>();
    REQUIRE(fs::exists(p));
    CHECK(f["bytes"].get<std::uintmax_t>() == fs::file_size(p));
    char crc[9];
    std::snprintf(crc, sizeof crc, "%08x", file_crc32(p));
    CHECK(f["crc32"] == std::string(crc));
    ++listed;
  }
  std::size_t on_disk = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (e.is_regular_file() && e.path() != dir / "a" / "manifest.json") ++on_disk;
  }
  CHECK(listed == on_disk);
  CHECK(!fs::exists(dir / "a" / ".lock"));

  for (const auto& f : m["files"]) {
    const std::string rel = f["path"];
    CHECK(slurp(dir / "a" / rel) == slurp(dir / "b" / rel));
  }
  CHECK(slurp(dir / "a" / "summary.csv").rfind("sigma,tv_linearized,mass_within_radius", 0) == 0);
  CHECK(fs::exists(dir / "a" / "mixture_sigma0.05" / "means.mpst"));
}

TEST_CASE("sampling commands honour the seed override") {
  testing::TempDir dir("seed");
  const auto cfg = write_json(dir / "cfg.json", stylized_doc());
  REQUIRE(run({"dps", "--config", cfg.string(), "--out", (dir / "a").string()}) == kSuccess);
  REQUIRE(run({"dps", "--config", cfg.string(), "--out", (dir / "b").string()}) == kSuccess);
  REQUIRE(run({"dps", "--config", cfg.string(), "--out", (dir / "c").string(), "--seed", "4"}) == kSuccess);
  CHECK(slurp(dir / "a" / "samples.mpst") == slurp(dir / "b" / "samples.mpst"));
  CHECK(slurp(dir / "a" / "samples.mpst") != slurp(dir / "c" / "samples.mpst"));
  const Eigen::MatrixXd misfit = io::read_matrix(dir / "a" / "misfit.mpst");
  CHECK(misfit.rows() == 30);
  CHECK(misfit.cols() == 16);
  CHECK(read_json(dir / "c" / "manifest.json")["seeds"]["seed"] == 4);
  REQUIRE(run({"sample", "--config", cfg.string(), "--out", (dir / "u").string()}) == kSuccess);
  CHECK(io::read_matrix(dir / "u" / "samples.mpst").rows() == 16);
}

TEST_CASE("fwi pipeline: generate, sample, diagnose") {
  QuietWarnings quiet;
  testing::TempDir dir("fwi");
  const auto gen = write_json(dir / "gen.json", tiny_fwi_doc());
  REQUIRE(run({"fwi-gen", "--config", gen.string(), "--out", (dir / "data").string()}) == kSuccess);
  const json ds = read_json(dir / "data" / "dataset.json");
  CHECK(ds["sizes"] == json{6, 12});
  CHECK(ds["true_model_members"].size() == 3);
  CHECK(ds["gamma"].get<double>() > 0.0);
  const Eigen::MatrixXd t6 = io::read_matrix(dir / "data" / "training_N6.mpst");
  const Eigen::MatrixXd t12 = io::read_matrix(dir / "data" / "training_N12.mpst");
  CHECK(testing::bitwise_equal(t6, t12.topRows(6)));
  CHECK(io::read_vector(dir / "data" / "observed.mpst").size() == 2 * 3 * 8);
  CHECK(io::read_matrix(dir / "data" / "true_field.mpst").rows() == 16);

  json dps = tiny_fwi_doc();
  dps["inputs"] = {{"dataset_dir", (dir / "data").string()}};
  const auto dcfg = write_json(dir / "dps.json", dps);
  REQUIRE(run({"dps", "--config", dcfg.string(), "--out", (dir / "post").string()}) == kSuccess);
  CHECK(io::read_matrix(dir / "post" / "samples.mpst").cols() == 8);

  json diag = dps;
  diag["inputs"]["samples"] = (dir / "post" / "samples.mpst").string();
  const auto gcfg = write_json(dir / "diag.json", diag);
  REQUIRE(run({"diagnose", "--config", gcfg.string(), "--out", (dir / "diag").string()}) == kSuccess);
  const json rep = read_json(dir / "diag" / "report.json");
  CHECK(rep["memorization_rate"].get<double>() >= 0.0);
  CHECK(rep.contains("overconfident_fraction"));
  CHECK(slurp(dir / "diag" / "memorization.csv").rfind("sample_id,nearest_idx,d1,dbar,ratio,memorized\n", 0) == 0);
  CHECK(slurp(dir / "diag" / "calibration.csv").rfind("coord,abs_error,std\n", 0) == 0);
  CHECK(io::read_matrix(dir / "diag" / "field_mean.mpst").cols() == 16);

  diag["klfield"] = {{"n_terms", 8}, {"distance_weighting", "lambda"}};
  const auto lcfg = write_json(dir / "diag_lambda.json", diag);
  REQUIRE(run({"diagnose", "--config", lcfg.string(), "--out", (dir / "diag_l").string()}) == kSuccess);
}

}
