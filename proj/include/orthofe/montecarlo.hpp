#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "orthofe/baselines.hpp"
#include "orthofe/orthogonal_gmm.hpp"

namespace orthofe {

struct DgpConfig {
  Index n = 100;
  Index t_len = 12;
  double beta0 = 0.0;
  double c = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Latent draws behind a simulated sample. Only oracle tests may look.
struct TrueLatents {
  Eigen::VectorXd alpha;
  Eigen::MatrixXd u1, u2;  ///< N x T, period t in column t-1
  Eigen::VectorXd v;
};

class SimulatedSample {
 public:
  SimulatedSample(PanelDataset panel, CrossSection cross, TrueLatents truth)
      : panel(std::move(panel)), cross(std::move(cross)), truth_(std::move(truth)) {}

  PanelDataset panel;
  CrossSection cross;

  /// Every call is counted so tests can confirm estimators never read it.
  const TrueLatents& truth() const {
    reads_->fetch_add(1);
    return truth_;
  }
  long truth_reads() const { return reads_->load(); }

 private:
  TrueLatents truth_;
  std::shared_ptr<std::atomic<long>> reads_ = std::make_shared<std::atomic<long>>(0);
};

/// Dynamic panel Y_it = beta0 Y_i,t-1 + alpha_i + u_it started from its
/// stationary law, and W_i = alpha_i + v_i - c * mean of u1 over the first
/// floor(T/2) - 1 periods. The panel stores x1 = Y_i,t-1.
SimulatedSample simulate_dgp(const DgpConfig& cfg);

/// Blundell-Bond starting period: 4 for T = 12, 6 for T = 22.
Index default_bb_min_t(Index t_len);

std::vector<std::string> all_methods();
bool is_orth_method(const std::string& method);

/// Estimation settings shared by the Monte Carlo and the CLI.
struct McConfig {
  DgpConfig dgp;
  EstConfig est;  ///< shrinkage is set per orth-* method
  std::vector<std::string> methods = all_methods();
  int reps = 200;
  int threads = 1;  ///< workers across replications
  int cgk_draws = 500;
  double truth = 1.0;  ///< mu_02
  std::function<void(int done, int total)> progress;
};

/// Desk-scale estimation defaults for simulated data: Blundell-Bond first
/// stage, S = 5, L = 5.
EstConfig simulation_est_config(const DgpConfig& dgp);

/// One method on one replication.
struct RepRecord {
  bool failed = false;
  std::string error;
  double mu2 = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;  ///< CGK percentile interval, else mu2 -/+ z se
  double ci_upper = 0.0;
  bool percentile_ci = false;
  double max_kkt_ratio = 0.0;
  double min_shrink_weight = 0.0;
  double max_shrink_weight = 0.0;
  bool shrinkage_used = false;
  bool solver_monotone = true;
};

/// H0: mu_02 = g. Percentile methods reject when g is outside the interval,
/// the rest when |t| > 1.959964.
bool rejects(const RepRecord& r, double g);

/// Runs one method on one sample.
RepRecord run_method(const std::string& method, const SimulatedSample& sample, const EstConfig& est, int cgk_draws,
                     const SeedConfig& seed);

struct McRecords {
  std::vector<std::string> methods;
  std::vector<std::vector<RepRecord>> by_method;  ///< [method][rep]
  McConfig config;
};

McRecords run_replications_raw(const McConfig& config);

struct MethodSummary {
  std::string method;
  double bias = 0.0;
  double std = 0.0;
  double rmse = 0.0;
  double rej_prob = 0.0;
  int reps = 0;
  int n_fail = 0;
  double max_kkt_ratio = 0.0;
  double min_shrink_weight = 0.0;
  double max_shrink_weight = 0.0;
  bool shrinkage_used = false;
  bool solver_monotone = true;
};

struct SimSummary {
  DgpConfig dgp;
  std::vector<MethodSummary> methods;

  const MethodSummary& at(const std::string& method) const;
};

/// Aggregates records. Throws TooManyFailures when any method fails on more
/// than 10% of replications.
SimSummary summarize(const McRecords& records);

SimSummary run_replications(const McConfig& config);

struct PowerRow {
  std::string method;
  double null_value = 0.0;
  double rejection = 0.0;
};

std::vector<PowerRow> power_table(const McRecords& records, const std::vector<double>& null_grid);
std::vector<PowerRow> power_curve(const McConfig& config, const std::vector<double>& null_grid);

/// "lo:hi:step" inclusive of hi up to rounding, or a single value.
std::vector<double> parse_grid(const std::string& spec);

std::string format_double(double v);
std::string summary_csv(const SimSummary& summary);
std::string power_csv(const std::vector<PowerRow>& rows);

}  // namespace orthofe
