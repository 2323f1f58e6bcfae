#pragma once

#include <string>
#include <vector>

#include "orthofe/data_model.hpp"
#include "orthofe/panel_stage.hpp"

namespace orthofe {

struct BaselineResult {
  std::string method;
  Eigen::VectorXd mu_hat;  ///< (intercept, slope)
  Eigen::VectorXd se;      ///< HC0 for plug-in variants, bootstrap SD for CGK
  Eigen::VectorXd ci_lower;
  Eigen::VectorXd ci_upper;
  int bootstrap_draws = 0;
  std::vector<std::string> flags;
};

/// OLS of W on (1, alpha) with HC0 standard errors and 95% normal intervals.
BaselineResult plugin_estimate(const Eigen::VectorXd& alphas, const Eigen::VectorXd& w, const std::string& method);

struct CgkConfig {
  int draws = 500;
  double level = 0.95;
  int threads = 1;
};

/// Measurement-error corrected slope Cov(alpha, W) / (Var(alpha) - mean u2)
/// with a percentile bootstrap over individuals. The denominator is floored
/// at 10% of Var(alpha) and flagged when the correction would exceed that.
BaselineResult cgk_estimate(const Eigen::VectorXd& alphas, const Eigen::VectorXd& w, const Eigen::VectorXd& u2,
                            const SeedConfig& seed, const CgkConfig& config = {});

/// Point estimate only (used by the bootstrap and by tests).
Eigen::Vector2d cgk_point(const Eigen::VectorXd& alphas, const Eigen::VectorXd& w, const Eigen::VectorXd& u2,
                          bool* floored = nullptr);

/// Full-sample fixed effects over all T periods and the variance of their
/// time-averaged residuals.
struct BaselineInputs {
  Eigen::VectorXd alpha;
  ResidualVariances u2;
  Eigen::VectorXd beta;
};

BaselineInputs baseline_inputs(const PanelDataset& panel, FirstStageMethod method, Index bb_min_t,
                               VarianceMethod variance = VarianceMethod::Iid, Index nw_lag = 0);

/// "naive", "xie-eb", "xie-sure" or "cgk" on W column 0.
BaselineResult run_baseline(const std::string& method, const BaselineInputs& inputs, const CrossSection& cross,
                            const SeedConfig& seed, const CgkConfig& cgk = {});

bool is_baseline_method(const std::string& method);

/// Type-7 sample quantile of `values` (copied and sorted).
double sample_quantile(std::vector<double> values, double p);

}  // namespace orthofe
