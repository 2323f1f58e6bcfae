#pragma once

#include <functional>
#include <string>
#include <vector>

#include "orthofe/data_model.hpp"
#include "orthofe/moment_models.hpp"
#include "orthofe/nuisance_aen.hpp"
#include "orthofe/panel_stage.hpp"
#include "orthofe/shrinkage.hpp"

namespace orthofe {

struct EstConfig {
  int folds = 5;
  int splits = 20;
  Shrinkage shrinkage = Shrinkage::None;
  FirstStageMethod first_stage = FirstStageMethod::WithinOls;
  Index bb_min_t = 4;
  VarianceMethod variance = VarianceMethod::Iid;
  Index nw_lag = -1;  ///< < 0 selects newey_west_default_lag(T - 1)
  DictionarySpec dictionary;
  AenConfig aen;
  double gmm_tolerance = 1e-10;
  int gmm_max_iterations = 200;
  std::uint64_t seed = 0;
  int threads = 1;  ///< workers across split realizations

  void validate() const;
};

/// Everything estimated for fold l from individuals outside fold l.
struct FoldNuisance {
  int fold = 0;
  Eigen::VectorXd beta;       ///< beta_l, fit without fold l
  Eigen::VectorXd mu_tilde;   ///< preliminary mu_l
  IndexSet train_rows;        ///< individuals outside fold l
  Eigen::VectorXd train_alpha;  ///< nested alpha_{i l l'} for train_rows
  NuisanceFit nuisance;
  bool nested_fallback = false;  ///< L = 2: nested betas reuse beta_l
  double min_shrink_weight = 0.0;
  double max_shrink_weight = 0.0;
};

/// Fold-l quantities that use fold-l data.
struct FoldArtifacts {
  FoldNuisance nuisance;
  IndexSet members;
  Eigen::VectorXd alpha_raw;
  Eigen::VectorXd alpha;  ///< after shrinkage (equals alpha_raw without shrinkage)
  Eigen::VectorXd shrink_weights;
  Eigen::MatrixXd a_hat;  ///< rows follow members, columns moment coordinates
  Eigen::MatrixXd psi;    ///< adjustment terms, same layout as a_hat
};

struct GmmSolution {
  Eigen::VectorXd mu;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  bool used_steepest_descent = false;
};

struct WeightingResult {
  Eigen::MatrixXd upsilon;
  bool ridge_used = false;
};

struct SplitResult {
  Eigen::VectorXd mu_hat;
  Eigen::MatrixXd vcov;
  Eigen::MatrixXd g_hat;
  Eigen::MatrixXd upsilon_hat;
  Eigen::MatrixXd omega_hat;
  GmmSolution step1;
  GmmSolution step2;
  double step1_objective_under_upsilon = 0.0;
  bool ridge_used = false;
  std::vector<FoldArtifacts> folds;
};

struct EstimateDiagnostics {
  std::vector<std::string> flags;
  double objective = 0.0;
  int iterations = 0;
  int failed_splits = 0;
  double max_kkt_ratio = 0.0;
  double min_shrink_weight = 0.0;
  double max_shrink_weight = 0.0;
  bool solver_monotone = true;
};

struct EstimateResult {
  Eigen::VectorXd mu_hat;
  Eigen::MatrixXd vcov;  ///< per-observation V-hat averaged over splits
  Eigen::VectorXd se;    ///< sqrt(diag(vcov) / N)
  Eigen::MatrixXd g_hat, upsilon_hat, omega_hat;  ///< averaged over splits
  std::vector<Eigen::VectorXd> per_split_mu;
  EstimateDiagnostics diagnostics;
  Index n = 0;
};

// --- preliminary and per-fold stages --------------------------------------

struct PreliminaryFit {
  Eigen::VectorXd mu_tilde;
  IndexSet rows;
  Eigen::VectorXd alpha;
  bool nested_fallback = false;
  double min_shrink_weight = 1.0;
  double max_shrink_weight = 0.0;
};

/// Nested cross-fitting: for each l' != l, beta_{l l'} from individuals
/// outside folds l and l', alpha_{i l l'} for i in fold l' (optionally
/// shrunk within l'), then the plain moment GMM on individuals outside l.
PreliminaryFit preliminary_mu(const PanelDataset& panel, const CrossSection& cross, const MomentModel& model,
                              const EstConfig& config, const FoldPartition& folds, int l);

/// beta_l, mu_tilde_l and the a-function fit. Reads no fold-l individual.
FoldNuisance fit_fold_nuisance(const PanelDataset& panel, const CrossSection& cross, const MomentModel& model,
                               const EstConfig& config, const FoldPartition& folds, int l, const SeedConfig& seed);

/// alpha_il (+ shrinkage), a-hat and psi-hat for fold l's members.
FoldArtifacts complete_fold(const PanelDataset& panel, const MomentModel& model, const EstConfig& config,
                            const FoldPartition& folds, FoldNuisance nuisance);

/// psi_i = a_i * (Y_iT - X_iT'beta - alpha_i), one row per member.
Eigen::MatrixXd adjustment_terms(const PanelDataset& panel, const IndexSet& members, const Eigen::VectorXd& beta,
                                 const Eigen::VectorXd& alpha, const Eigen::MatrixXd& a_hat);

// --- assembly ---------------------------------------------------------------

/// (1/N) sum over folds and members of m(W_i, alpha_il, mu) + psi_il.
Eigen::VectorXd debiased_moments(const Eigen::VectorXd& mu, const std::vector<FoldArtifacts>& folds,
                                 const CrossSection& cross, const MomentModel& model);

/// (1/N) sum of dm/dmu at (alpha_il, mu).
Eigen::MatrixXd jacobian(const std::vector<FoldArtifacts>& folds, const CrossSection& cross, const MomentModel& model,
                         const Eigen::VectorXd& mu);

/// (1/N) sum of (m + psi)(m + psi)' with m at mu_tilde_l (per fold) when
/// `at_mu` is empty, else at `at_mu`.
Eigen::MatrixXd moment_outer_product(const std::vector<FoldArtifacts>& folds, const CrossSection& cross,
                                     const MomentModel& model, const Eigen::VectorXd& at_mu = {});

/// Symmetrized inverse; adds 1e-10 * trace / dim to the diagonal when the
/// condition number exceeds 1e12.
WeightingResult invert_weighting(const Eigen::MatrixXd& omega);

WeightingResult weighting_matrix(const std::vector<FoldArtifacts>& folds, const CrossSection& cross,
                                 const MomentModel& model);

using MomentFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

/// Gauss-Newton on m(mu)' U m(mu) with step halving (at most 30 halvings);
/// falls back to steepest descent when the Gauss-Newton direction stalls.
GmmSolution gmm_minimize(const MomentFn& moments, const JacobianFn& jac, const Eigen::MatrixXd& upsilon,
                         const Eigen::VectorXd& start, double tolerance = 1e-10, int max_iterations = 200);

/// (G'UG)^-1 G'U Omega U G (G'UG)^-1
Eigen::MatrixXd sandwich_variance(const Eigen::MatrixXd& g, const Eigen::MatrixXd& upsilon, const Eigen::MatrixXd& omega);

/// One split realization end to end.
SplitResult estimate_split(const PanelDataset& panel, const CrossSection& cross, const MomentModel& model,
                           const EstConfig& config, const FoldPartition& folds, const SeedConfig& seed);

/// S split realizations; mu-hat and V-hat are averaged over the splits that
/// succeed. Fails when more than half the splits fail.
EstimateResult cross_fit_estimate(const PanelDataset& panel, const CrossSection& cross, const MomentModel& model,
                                  const EstConfig& config);

}  // namespace orthofe
