#include <cmath>
#include <complex>
#include <cstdio>
#include <random>

#include <Eigen/LU>

#include "memprior/cli.hpp"
#include "memprior/errors.hpp"
#include "memprior/forward_ops.hpp"
#include "memprior/matrix_io.hpp"
#include "memprior/posteriors.hpp"
#include "memprior/score_net.hpp"

namespace memprior::cli {

namespace {

VerifyCheck check(std::string name, double value, double tol, std::string detail = {}) {
  return {std::move(name), value < tol, value, tol, std::move(detail)};
}

Eigen::VectorXd gaussian(std::mt19937_64& rng, Index n, double scale = 1.0) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = scale * normal(rng);
  return v;
}

double gmm_score_fd_error() {
  const GmmPrior prior(pentagon_training(), NoiseSchedule::variance_exploding(0.05, 5.0));
  auto rng = stream_rng(11, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double t = unit(rng);
    const Eigen::VectorXd x = gaussian(rng, 2, 1.5);
    const Eigen::VectorXd s = prior.score_at(x, t);
    Eigen::VectorXd fd(2);
    for (Index j = 0; j < 2; ++j) {
      const double h = 1e-5;
      Eigen::VectorXd e = Eigen::VectorXd::Unit(2, j) * h;
      fd[j] = (prior.log_density(x + e, t) - prior.log_density(x - e, t)) / (2 * h);
    }
    worst = std::max(worst, (s - fd).norm() / std::max(s.norm(), 1e-300));
  }
  return worst;
}

double operator_adjoint_error(const ForwardOperator& op, int trials, std::uint64_t seed,
                              double x_scale = 1.0) {
  auto rng = stream_rng(seed, 0);
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    const Eigen::VectorXd x = gaussian(rng, op.model_dim(), x_scale);
    const Eigen::VectorXd u = gaussian(rng, op.model_dim());
    const Eigen::VectorXd v = gaussian(rng, op.data_dim());
    const auto lin = op.linearize(x);
    const Eigen::VectorXd ju = lin->jvp(u);
    const double lhs = ju.dot(v);
    const double rhs = u.dot(lin->vjp(v));
    worst = std::max(worst, std::abs(lhs - rhs) / (ju.norm() * v.norm()));
  }
  return worst;
}

double operator_jvp_fd_error(const ForwardOperator& op, int trials, std::uint64_t seed) {
  auto rng = stream_rng(seed, 0);
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    const Eigen::VectorXd x = gaussian(rng, op.model_dim());
    const Eigen::VectorXd u = gaussian(rng, op.model_dim());
    const double eps = 1e-5 * (1.0 + x.norm());
    const Eigen::VectorXd fd = (op.evaluate(x + eps * u) - op.evaluate(x - eps * u)) / (2 * eps);
    const Eigen::VectorXd jv = op.jacobian_vector(x, u);
    worst = std::max(worst, (jv - fd).norm() / jv.norm());
  }
  return worst;
}

double green_function_error(Index n) {
  HelmholtzConfig cfg;
  cfg.nx = n;
  cfg.nz = n;
  cfg.n_sources = 1;
  cfg.n_receivers = 1;
  const Eigen::VectorXd s = Eigen::VectorXd::Constant(n * n, cfg.background_slowness_sq);
  const HelmholtzSolver solver(cfg, s);
  const GridNode src{n / 2, n / 2};
  const Eigen::VectorXcd u = solver.physical(solver.point_source_wavefield(src));
  const double h = cfg.spacing_x();
  const double k = cfg.omega() * std::sqrt(cfg.background_slowness_sq);
  double num = 0.0;
  double den = 0.0;
  for (Index iz = 5; iz < n - 5; ++iz) {
    for (Index ix = 5; ix < n - 5; ++ix) {
      const double r = h * std::hypot(static_cast<double>(ix - src.ix), static_cast<double>(iz - src.iz));
      if (r < 5.0 * h) continue;
      const std::complex<double> g =
          std::complex<double>(0.0, 0.25) *
          std::complex<double>(std::cyl_bessel_j(0.0, k * r), std::cyl_neumann(0.0, k * r));
      num += std::norm(u[iz * n + ix] - g);
      den += std::norm(g);
    }
  }
  return std::sqrt(num / den);
}

double helmholtz_adjoint_error(Index n, int trials) {
  HelmholtzConfig cfg;
  cfg.nx = n;
  cfg.nz = n;
  cfg.pml_cells = std::max<Index>(8, n / 10);
  cfg.n_receivers = n - 4;
  auto basis = std::make_shared<const KlBasis>(build_basis(n, n, 3.0, 5.0, 20, cfg.background_slowness_sq, 3.0));
  HelmholtzKlOperator op(cfg, basis, 1.0, Exec::parallel);
  return operator_adjoint_error(op, trials, 23, 0.5);
}

std::pair<double, double> linear_exactness() {
  auto rng = stream_rng(31, 0);
  Eigen::MatrixXd a(2, 2);
  a << 1.2, -0.4, 0.3, 0.8;
  const double gamma = 0.5;
  const double sigma = 0.7;
  const OperatorHandle op = make_linear(a, gamma);
  Eigen::MatrixXd x1(1, 2);
  x1 << 0.3, -0.2;
  const TrainingSet one(x1);
  const Observation obs = loaded_observation(*op, gaussian(rng, 2));
  const MixturePosterior mix = linearized_mixture(one, *op, obs, sigma);
  const Eigen::MatrixXd prec = Eigen::MatrixXd::Identity(2, 2) / (sigma * sigma) + a.transpose() * a / (gamma * gamma);
  const Eigen::MatrixXd cov = prec.inverse();
  const Eigen::VectorXd mean = cov * (x1.row(0).transpose() / (sigma * sigma) + a.transpose() * obs.y / (gamma * gamma));
  const double closed = std::max((mix.components[0].mean - mean).norm(), (mix.components[0].covariance - cov).norm());

  Eigen::MatrixXd xs(3, 1);
  xs << -1.0, 0.2, 1.1;
  const OperatorHandle op1 = make_linear(Eigen::MatrixXd::Constant(1, 1, 1.5), 0.4);
  const TrainingSet three(xs);
  const Observation y1 = loaded_observation(*op1, Eigen::VectorXd::Constant(1, 0.5));
  const double s = 0.3;
  const GridSpec grid = GridSpec::covering(three, s, 8.0, {}, 4001);
  const GridPosterior exact = grid_oracle(three, *op1, y1, s, grid);
  const double tv = exact.total_variation(linearized_mixture(three, *op1, y1, s).density_on(grid));
  return {closed, tv};
}

double sigma_limit_distance(bool pentagon) {
  const std::vector<double> path{1.0, 0.1, 0.01, 1e-3, 1e-4};
  if (pentagon) {
    const auto op = make_pentagon2d(0.3);
    return sigma_zero_limit_check(pentagon_training(), *op, pentagon_observation(*op), path).final_distance;
  }
  const auto op = make_cubic1d(0.3);
  return sigma_zero_limit_check(cubic1d_default_training(), *op, cubic1d_observation(*op), path).final_distance;
}

double toy_net_gradient_error() {
  ScoreNetSpec spec;
  spec.dim = 1;
  spec.hidden = {};
  spec.time_features = 0;
  ScoreNet net(spec, NoiseSchedule::variance_exploding(0.1, 2.0), 5);
  auto rng = stream_rng(41, 0);
  const Eigen::MatrixXd x0 = gaussian(rng, 8);
  const Eigen::MatrixXd eps = gaussian(rng, 8);
  Eigen::VectorXd t(8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Index i = 0; i < 8; ++i) t[i] = unit(rng);
  Eigen::VectorXd grad;
  net.dsm_loss(x0, t, eps, &grad);
  const Eigen::VectorXd p0 = net.parameters();
  Eigen::VectorXd fd(p0.size());
  for (Index j = 0; j < p0.size(); ++j) {
    const double h = 1e-6;
    Eigen::VectorXd p = p0;
    p[j] += h;
    net.set_parameters(p);
    const double up = net.dsm_loss(x0, t, eps);
    p[j] -= 2 * h;
    net.set_parameters(p);
    const double down = net.dsm_loss(x0, t, eps);
    fd[j] = (up - down) / (2 * h);
  }
  return (grad - fd).norm() / fd.norm();
}

}  // namespace

std::vector<VerifyCheck> run_verification(bool quick) {
  std::vector<VerifyCheck> out;
  auto guarded = [&](const std::string& name, double tol, auto&& fn) {
    try {
      out.push_back(check(name, fn(), tol));
    } catch (const std::exception& e) {
      out.push_back({name, false, NAN, tol, e.what()});
    }
  };
  guarded("gmm score vs finite differences", 1e-6, gmm_score_fd_error);
  guarded("cubic1d jvp vs finite differences", 1e-6, [] { return operator_jvp_fd_error(*make_cubic1d(0.3), 50, 3); });
  guarded("pentagon2d jvp vs finite differences", 1e-6, [] { return operator_jvp_fd_error(*make_pentagon2d(0.3), 50, 4); });
  guarded("pentagon2d adjoint identity", 1e-12, [] { return operator_adjoint_error(*make_pentagon2d(0.3), 100, 5); });
  guarded("helmholtz-kl adjoint identity", 1e-8, [&] { return helmholtz_adjoint_error(quick ? 48 : 200, quick ? 3 : 20); });
  guarded("helmholtz green's function", 0.05, [&] { return green_function_error(quick ? 120 : 200); });
  guarded("linear N=1 conjugate closed form", 1e-8, [] { return linear_exactness().first; });
  guarded("linear mixture vs grid oracle (TV)", 1e-3, [] { return linear_exactness().second; });
  guarded("cubic1d lookup-table limit (L1)", 1e-3, [] { return sigma_limit_distance(false); });
  guarded("pentagon2d lookup-table limit (L1)", 1e-3, [] { return sigma_limit_distance(true); });
  guarded("score-net parameter gradient", 1e-4, toy_net_gradient_error);
  return out;
}

int cmd_verify(const RunDirectory* run, bool quick) {
  const std::string started = utc_timestamp();
  const auto checks = run_verification(quick);
  bool ok = true;
  for (const auto& c : checks) {
    std::printf("%-4s %-40s %.3e (tol %.1e)%s%s\n", c.passed ? "ok" : "FAIL", c.name.c_str(), c.value,
                c.tolerance, c.detail.empty() ? "" : "  ", c.detail.c_str());
    ok = ok && c.passed;
  }
  if (run) {
    {
      io::CsvWriter csv(run->file("verify.csv"), {"check", "passed", "value", "tolerance"});
      for (const auto& c : checks) {
        csv.add_row({c.name, static_cast<long long>(c.passed ? 1 : 0), c.value, c.tolerance});
      }
    }
    ManifestInfo info;
    info.command = "verify";
    info.config = {{"quick", quick}};
    info.started = started;
    info.extra["passed"] = ok;
    write_run_manifest(*run, info);
  }
  return ok ? kSuccess : kVerificationFailure;
}

}  // namespace memprior::cli
