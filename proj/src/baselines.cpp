#include "orthofe/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "orthofe/error.hpp"
#include "orthofe/parallel.hpp"
#include "orthofe/shrinkage.hpp"

namespace orthofe {

namespace {

constexpr double kZ975 = 1.959963984540054;

void check_lengths(const Eigen::VectorXd& a, const Eigen::VectorXd& w) {
  if (a.size() != w.size() || a.size() < 3)
    throw Error(ErrorKind::InvalidArgument, "baseline needs matching alpha and W vectors of length >= 3");
}

}  // namespace

double sample_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorKind::InvalidArgument, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BaselineResult plugin_estimate(const Eigen::VectorXd& alphas, const Eigen::VectorXd& w, const std::string& method) {
  check_lengths(alphas, w);
  const Index n = alphas.size();
  const double abar = alphas.mean();
  const double sxx = (alphas.array() - abar).square().sum();
  if (!(sxx > 0.0)) throw Error(ErrorKind::DegenerateRegressor, "fixed-effect estimates have no variation");
  Eigen::MatrixXd x(n, 2);
  x.col(0).setOnes();
  x.col(1) = alphas;
  const Eigen::Matrix2d xtx = x.transpose() * x;
  const Eigen::Matrix2d inv = xtx.inverse();
  BaselineResult out;
  out.method = method;
  out.mu_hat = inv * (x.transpose() * w);
  const Eigen::VectorXd e = w - x * out.mu_hat;
  const Eigen::Matrix2d meat = x.transpose() * e.array().square().matrix().asDiagonal() * x;
  const Eigen::Matrix2d v = inv * meat * inv;
  out.se = v.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.ci_lower = out.mu_hat - kZ975 * out.se;
  out.ci_upper = out.mu_hat + kZ975 * out.se;
  return out;
}

Eigen::Vector2d cgk_point(const Eigen::VectorXd& alphas, const Eigen::VectorXd& w, const Eigen::VectorXd& u2,
                          bool* floored) {
  const double n = static_cast<double>(alphas.size());
  const double abar = alphas.mean(), wbar = w.mean();
  const double var = (alphas.array() - abar).square().sum() / n;
  const double cov = ((alphas.array() - abar) * (w.array() - wbar)).sum() / n;
  if (!(var > 0.0)) throw Error(ErrorKind::DegenerateRegressor, "fixed-effect estimates have no variation");
  double denom = var - u2.mean();
  const bool floor = denom < 0.1 * var;
  if (floor) denom = 0.1 * var;
  if (floored) *floored = floor;
  const double slope = cov / denom;
  return {wbar - slope * abar, slope};
}

BaselineResult cgk_estimate(const Eigen::VectorXd& alphas, const Eigen::VectorXd& w, const Eigen::VectorXd& u2,
                            const SeedConfig& seed, const CgkConfig& config) {
  check_lengths(alphas, w);
  if (u2.size() != alphas.size()) throw Error(ErrorKind::InvalidArgument, "cgk: one u2 per individual required");
  if (config.draws < 2 || !(config.level > 0.0 && config.level < 1.0))
    throw Error(ErrorKind::InvalidArgument, "cgk: need >= 2 bootstrap draws and level in (0, 1)");
  BaselineResult out;
  out.method = "cgk";
  bool floored = false;
  out.mu_hat = cgk_point(alphas, w, u2, &floored);
  if (floored) out.flags.push_back("negative_signal_variance");

  const Index n = alphas.size();
  const std::size_t draws = static_cast<std::size_t>(config.draws);
  std::vector<Eigen::Vector2d> boot(draws, Eigen::Vector2d::Constant(std::numeric_limits<double>::quiet_NaN()));
  parallel_for(draws, config.threads, [&](std::size_t b) {
    auto rng = seed.stream("cgk-boot", b);
    std::uniform_int_distribution<Index> pick(0, n - 1);
    Eigen::VectorXd ab(n), wb(n), ub(n);
    for (Index k = 0; k < n; ++k) {
      const Index j = pick(rng);
      ab(k) = alphas(j);
      wb(k) = w(j);
      ub(k) = u2(j);
    }
    try {
      boot[b] = cgk_point(ab, wb, ub);
    } catch (const Error&) {
      // resample without variation in alpha; dropped below
    }
  });

  out.se.resize(2);
  out.ci_lower.resize(2);
  out.ci_upper.resize(2);
  const double tail = 0.5 * (1.0 - config.level);
  for (int c = 0; c < 2; ++c) {
    std::vector<double> v;
    v.reserve(draws);
    for (const auto& d : boot)
      if (std::isfinite(d(c))) v.push_back(d(c));
    if (v.size() < 2) throw Error(ErrorKind::EstimationFailed, "cgk: bootstrap produced no usable draws");
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    out.se(c) = std::sqrt(ss / static_cast<double>(v.size() - 1));
    out.ci_lower(c) = sample_quantile(v, tail);
    out.ci_upper(c) = sample_quantile(v, 1.0 - tail);
    out.bootstrap_draws = static_cast<int>(v.size());
  }
  return out;
}

BaselineInputs baseline_inputs(const PanelDataset& panel, FirstStageMethod method, Index bb_min_t,
                               VarianceMethod variance, Index nw_lag) {
  IndexSet all(static_cast<std::size_t>(panel.n()));
  std::iota(all.begin(), all.end(), Index{0});
  BaselineInputs out;
  out.beta = first_stage(panel, all, method, bb_min_t).beta;
  const Index h = panel.t_len();
  out.alpha = extract_alpha(panel, out.beta, all, h).alpha;
  out.u2 = residual_variance(fold_residuals(panel, out.beta, all, out.alpha, h), h, variance, nw_lag);
  return out;
}

bool is_baseline_method(const std::string& method) {
  return method == "naive" || method == "xie-eb" || method == "xie-sure" || method == "cgk";
}

BaselineResult run_baseline(const std::string& method, const BaselineInputs& inputs, const CrossSection& cross,
                            const SeedConfig& seed, const CgkConfig& cgk) {
  if (cross.n() != inputs.alpha.size() || cross.q() < 1)
    throw Error(ErrorKind::InvalidArgument, "baseline: cross-section does not match the panel");
  const Eigen::VectorXd w = cross.w.col(0);
  if (method == "naive") return plugin_estimate(inputs.alpha, w, method);
  if (method == "xie-eb") return plugin_estimate(shrink(inputs.alpha, inputs.u2, Shrinkage::EB).shrunk, w, method);
  if (method == "xie-sure") return plugin_estimate(shrink(inputs.alpha, inputs.u2, Shrinkage::SURE).shrunk, w, method);
  if (method == "cgk") return cgk_estimate(inputs.alpha, w, inputs.u2.u2, seed, cgk);
  throw Error(ErrorKind::InvalidArgument, "unknown baseline method '" + method + "'");
}

}  // namespace orthofe
