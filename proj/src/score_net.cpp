#include "memprior/score_net.hpp"

#include <cmath>
#include <numbers>
#include <fstream>

#include <json.hpp>

#include "memprior/errors.hpp"
#include "memprior/matrix_io.hpp"

namespace memprior {

namespace {

constexpr Index kChunk = 64;

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }

// Frequencies of the log-sigma features, geometric in [0.1, 10].
double feature_frequency(Index k, Index pairs) {
  if (pairs == 1) return 1.0;
  return 0.1 * std::pow(100.0, static_cast<double>(k) / static_cast<double>(pairs - 1));
}

}  // namespace

ScoreNet::ScoreNet(ScoreNetSpec spec, NoiseSchedule schedule, std::uint64_t seed)
    : spec_(std::move(spec)), schedule_(schedule) {
  if (spec_.dim < 1) throw InvalidArgument("score net dimension must be positive");
  if (spec_.time_features < 0 || spec_.time_features % 2 != 0) {
    throw InvalidArgument("time_features must be a nonnegative even number");
  }
  for (Index h : spec_.hidden) {
    if (h < 1) throw InvalidArgument("hidden widths must be positive");
  }
  Index in = spec_.dim + spec_.time_features;
  Index offset = 0;
  std::vector<Index> outs = spec_.hidden;
  outs.push_back(spec_.dim);
  for (Index out : outs) {
    layers_.push_back({in, out, offset, offset + in * out});
    offset += in * out + out;
    in = out;
  }
  params_ = Eigen::VectorXd::Zero(offset);
  auto rng = stream_rng(seed, 0x1a7e5u);
  std::normal_distribution<double> normal;
  for (const auto& l : layers_) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (Index i = 0; i < l.in * l.out; ++i) params_[l.w_offset + i] = scale * normal(rng);
  }
}

void ScoreNet::set_parameters(const Eigen::VectorXd& p) {
  if (p.size() != params_.size()) {
    throw InvalidArgument("parameter vector has " + std::to_string(p.size()) + " entries, net has " +
                          std::to_string(params_.size()));
  }
  params_ = p;
}

Eigen::MatrixXd ScoreNet::features(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) const {
  if (x.cols() != spec_.dim) throw InvalidArgument("input has wrong dimension");
  if (t.size() != x.rows()) throw InvalidArgument("need one time per row");
  const Index pairs = spec_.time_features / 2;
  Eigen::MatrixXd f(x.rows(), spec_.dim + spec_.time_features);
  for (Index i = 0; i < x.rows(); ++i) {
    const double s = schedule_.sigma(t[i]);
    const double m = schedule_.scale(t[i]);
    f.row(i).head(spec_.dim) = x.row(i) / std::sqrt(m * m + s * s);
    const double ls = std::log(s);
    for (Index k = 0; k < pairs; ++k) {
      const double w = feature_frequency(k, pairs);
      f(i, spec_.dim + 2 * k) = std::sin(w * ls);
      f(i, spec_.dim + 2 * k + 1) = std::cos(w * ls);
    }
  }
  return f;
}

// Columns are batch entries.
Eigen::MatrixXd ScoreNet::forward(const Eigen::MatrixXd& input_t, std::vector<Eigen::MatrixXd>* pre,
                                  std::vector<Eigen::MatrixXd>* post) const {
  Eigen::MatrixXd h = input_t;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const auto& l = layers_[li];
    Eigen::Map<const Eigen::MatrixXd> w(params_.data() + l.w_offset, l.out, l.in);
    Eigen::Map<const Eigen::VectorXd> b(params_.data() + l.b_offset, l.out);
    if (post) post->push_back(h);
    Eigen::MatrixXd z = w * h;
    z.colwise() += b;
    if (li + 1 == layers_.size()) return z;
    if (pre) pre->push_back(z);
    h = (z.array() * sigmoid(z.array())).matrix();
  }
  return h;
}

Eigen::MatrixXd ScoreNet::predict_noise(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) const {
  return forward(features(x, t).transpose(), nullptr, nullptr).transpose();
}

Eigen::MatrixXd ScoreNet::score_batch(const Eigen::MatrixXd& x, double t, Exec exec) const {
  if (x.cols() != spec_.dim) throw InvalidArgument("batch dimension does not match the net");
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("diffusion time must lie in [0, 1]");
  const double s = schedule_.sigma(t);
  Eigen::MatrixXd out(x.rows(), x.cols());
  // Fixed-size chunks keep serial and parallel results bitwise identical.
  const Index chunks = (x.rows() + kChunk - 1) / kChunk;
  for_each_index(exec, chunks, [&](Index c) {
    const Index begin = c * kChunk;
    const Index count = std::min(kChunk, x.rows() - begin);
    const Eigen::MatrixXd block = x.middleRows(begin, count);
    out.middleRows(begin, count) =
        -predict_noise(block, Eigen::VectorXd::Constant(count, t)) / s;
  });
  return out;
}

double ScoreNet::dsm_loss(const Eigen::MatrixXd& x0, const Eigen::VectorXd& t,
                          const Eigen::MatrixXd& eps, Eigen::VectorXd* gradient) const {
  const Index batch = x0.rows();
  if (batch < 1 || eps.rows() != batch || t.size() != batch || x0.cols() != spec_.dim ||
      eps.cols() != spec_.dim) {
    throw InvalidArgument("dsm_loss inputs have inconsistent shapes");
  }
  Eigen::MatrixXd xt(batch, spec_.dim);
  for (Index i = 0; i < batch; ++i) {
    xt.row(i) = schedule_.scale(t[i]) * x0.row(i) + schedule_.sigma(t[i]) * eps.row(i);
  }
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> post;
  const Eigen::MatrixXd out = forward(features(xt, t).transpose(), &pre, &post);
  const Eigen::MatrixXd diff = out - eps.transpose();
  const double loss = diff.squaredNorm() / static_cast<double>(batch);
  if (!gradient) return loss;

  gradient->setZero(params_.size());
  Eigen::MatrixXd dz = 2.0 * diff / static_cast<double>(batch);
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& l = layers_[li];
    Eigen::Map<Eigen::MatrixXd> gw(gradient->data() + l.w_offset, l.out, l.in);
    Eigen::Map<Eigen::VectorXd> gb(gradient->data() + l.b_offset, l.out);
    gw.noalias() = dz * post[li].transpose();
    gb = dz.rowwise().sum();
    if (li == 0) break;
    Eigen::Map<const Eigen::MatrixXd> w(params_.data() + l.w_offset, l.out, l.in);
    const Eigen::MatrixXd dh = w.transpose() * dz;
    const Eigen::ArrayXXd z = pre[li - 1].array();
    const Eigen::ArrayXXd sg = sigmoid(z);
    dz = (dh.array() * sg * (1.0 + z * (1.0 - sg))).matrix();
  }
  return loss;
}

TrainResult train(const TrainingSet& data, const ScoreNetSpec& spec, const NoiseSchedule& schedule,
                  const TrainConfig& cfg) {
  if (cfg.steps < 1) throw InvalidArgument("training needs at least one step");
  if (cfg.batch < 1) throw InvalidArgument("batch size must be positive");
  if (!(cfg.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (!(cfg.final_lr_fraction > 0.0 && cfg.final_lr_fraction <= 1.0)) {
    throw InvalidArgument("final learning-rate fraction must be in (0, 1]");
  }
  if (spec.dim != data.dim()) throw InvalidArgument("net dimension does not match the data");

  TrainResult result{ScoreNet(spec, schedule, cfg.seed), {}};
  ScoreNet& net = result.net;
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.steps));
  const Index p = net.parameter_count();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd grad(p);
  Eigen::VectorXd params = net.parameters();

  auto rng = stream_rng(cfg.seed, 0x7a1du);
  std::uniform_int_distribution<Index> pick(0, data.size() - 1);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x0(cfg.batch, data.dim());
  Eigen::MatrixXd eps(cfg.batch, data.dim());
  Eigen::VectorXd t(cfg.batch);
  double b1 = 1.0;
  double b2 = 1.0;
  for (Index step = 0; step < cfg.steps; ++step) {
    for (Index i = 0; i < cfg.batch; ++i) {
      x0.row(i) = data.examples().row(pick(rng));
      t[i] = uniform(rng);
      for (Index j = 0; j < data.dim(); ++j) eps(i, j) = normal(rng);
    }
    const double loss = net.dsm_loss(x0, t, eps, &grad);
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw StepFailure("score-net training diverged", static_cast<std::size_t>(step));
    }
    result.loss_trace.push_back(loss);
    const double gn = grad.norm();
    if (cfg.clip_norm > 0.0 && gn > cfg.clip_norm) grad *= cfg.clip_norm / gn;
    m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
    m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad.cwiseAbs2();
    b1 *= cfg.beta1;
    b2 *= cfg.beta2;
    const double progress = cfg.steps > 1 ? static_cast<double>(step) / static_cast<double>(cfg.steps - 1) : 0.0;
    const double lr = cfg.learning_rate * (cfg.final_lr_fraction +
                                           (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    params.array() -= lr * (m1.array() / (1.0 - b1)) /
                      ((m2.array() / (1.0 - b2)).sqrt() + cfg.epsilon);
    if (!params.allFinite()) {
      throw StepFailure("score-net parameters became non-finite", static_cast<std::size_t>(step));
    }
    net.set_parameters(params);
  }
  return result;
}

Eigen::VectorXd score_of(const ScoreNet& net, const Eigen::VectorXd& x, double t) {
  return net.score(x, t);
}

void save_checkpoint(const ScoreNet& net, const CheckpointInfo& info,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_vector(dir / "parameters.mpst", net.parameters());
  const auto& s = net.schedule();
  const nlohmann::json manifest = {
      {"kind", "score-net"},
      {"dim", net.spec().dim},
      {"hidden", net.spec().hidden},
      {"time_features", net.spec().time_features},
      {"activation", "silu"},
      {"parameterization", "epsilon"},
      {"schedule",
       {{"kind", std::string(to_string(s.kind()))},
        {"sigma_min", s.sigma_min()},
        {"sigma_max", s.sigma_max()}}},
      {"seed", info.seed},
      {"steps", info.steps},
      {"parameter_count", net.parameter_count()},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

ScoreNet load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("missing checkpoint manifest in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    ScoreNetSpec spec;
    spec.dim = j.at("dim").get<Index>();
    spec.hidden = j.at("hidden").get<std::vector<Index>>();
    spec.time_features = j.at("time_features").get<Index>();
    const auto& sj = j.at("schedule");
    NoiseSchedule schedule(parse_schedule_kind(sj.at("kind").get<std::string>()),
                           sj.at("sigma_min").get<double>(), sj.at("sigma_max").get<double>());
    ScoreNet net(spec, schedule, 0);
    net.set_parameters(io::read_vector(dir / "parameters.mpst"));
    if (info) {
      info->seed = j.at("seed").get<std::uint64_t>();
      info->steps = j.at("steps").get<Index>();
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace memprior
