#pragma once

#include <vector>

#include "orthofe/data_model.hpp"
#include "orthofe/moment_models.hpp"

namespace orthofe {

/// Which panel-history variables enter the dictionary b(X_i, alpha_i).
/// Levels are taken from periods 1..T-1 only; the final period is reserved
/// for the adjustment term.
struct DictionarySpec {
  bool include_alpha = true;
  bool include_x = true;   ///< every regressor in every period 1..T-1
  bool include_y = false;  ///< the outcome in every period 1..T-1
  int interaction_order = 1;  ///< 2 appends alpha * level for each level feature

  Index feature_count(const PanelDataset& panel) const;
};

/// Per-feature centering and scaling frozen from a training sample.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& features);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& features) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& features) const;
  Index size() const { return mean.size(); }
};

/// Raw (unstandardized) dictionary row for individual i.
Eigen::VectorXd build_dictionary(const PanelDataset& panel, Index i, double alpha, const DictionarySpec& spec);
/// Standardized dictionary row. Throws SpecMismatch when the standardizer was
/// fitted on a different feature count.
Eigen::VectorXd build_dictionary(const PanelDataset& panel, Index i, double alpha, const DictionarySpec& spec,
                                 const Standardizer& standardizer);
/// Raw dictionary rows for `rows`, alpha(k) pairing with rows[k].
Eigen::MatrixXd build_dictionary_matrix(const PanelDataset& panel, const IndexSet& rows, const Eigen::VectorXd& alpha,
                                        const DictionarySpec& spec);

struct SolverOptions {
  int max_sweeps = 100000;
  double tolerance = 1e-7;  ///< on the largest coefficient change in a sweep
};

/// Solution of
///   argmin ||y - X pi||^2 + lambda2 ||pi||^2 + lambda1 sum_j w_j |pi_j|
/// with X and y centered internally; `coef` is (1 + lambda2/n) times the
/// argmin and `intercept` makes predictions intercept + x'coef.
struct PenalizedFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd argmin;
  double intercept = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double kkt_violation = 0.0;  ///< largest subgradient violation of `argmin`
  double kkt_scale = 1.0;      ///< max(1, max_j |2 X_j'y|) on centered data
  int sweeps = 0;
  bool converged = false;
  bool objective_monotone = true;

  double kkt_ratio() const { return kkt_violation / kkt_scale; }
  double predict(const Eigen::VectorXd& x) const { return intercept + x.dot(coef); }
};

/// Centered Gram-form problem shared by the solvers. Building it is the only
/// O(n k^2) step; coordinate descent then runs in O(k) per update.
struct GramProblem {
  Eigen::MatrixXd gram;   ///< Xc'Xc
  Eigen::VectorXd xty;    ///< Xc'yc
  double yty = 0.0;       ///< yc'yc
  Eigen::VectorXd x_mean;
  double y_mean = 0.0;
  Index n = 0;

  static GramProblem build(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);
  double lambda_max(const Eigen::VectorXd& weights) const;
};

PenalizedFit elastic_net(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda1, double lambda2,
                         const SolverOptions& options = {});

/// Weighted-l1 solve on a prepared problem. `warm` (unscaled argmin) may be empty.
PenalizedFit solve_penalized(const GramProblem& problem, double lambda1, double lambda2,
                             const Eigen::VectorXd& weights, const Eigen::VectorXd& warm,
                             const SolverOptions& options = {});

/// Objective value of `argmin` for the problem (no rescaling).
double penalized_objective(const GramProblem& problem, const Eigen::VectorXd& argmin, double lambda1,
                           double lambda2, const Eigen::VectorXd& weights);

struct AenConfig {
  int lambda1_points = 50;
  double lambda1_ratio = 1e-4;
  std::vector<double> lambda2_multipliers{0.0, 0.1, 1.0, 10.0};  ///< times the training size n
  int cv_folds = 5;
  double gamma = 0.0;  ///< 0 selects the rule-based value
  double g = 0.0;      ///< 0 selects ln T / ln N
  SolverOptions solver;
};

/// ceil(2g / (1 - g)) + 1 with g clipped to (0.5, 0.99) and the result to [1, 6].
double gamma_rule(double g);
double default_g(Index n, Index t_len);

struct CvGrid {
  std::vector<double> lambda1;  ///< descending
  std::vector<double> lambda2;
};

struct CvSelection {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  Eigen::MatrixXd cv_error;  ///< rows follow lambda2, columns lambda1
};

/// lambda1: `points` log-spaced values from lambda_max down to ratio * lambda_max.
std::vector<double> lambda1_grid(double lambda_max, int points, double ratio);

/// K-fold CV mean squared prediction error over the grid. Ties prefer larger
/// lambda1, then larger lambda2.
CvSelection cv_select(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const CvGrid& grid, int folds,
                      const SeedConfig& seed, const Eigen::VectorXd& weights = {},
                      const SolverOptions& options = {});

/// w_j = (|pi_j| + 1/n)^(-gamma)
Eigen::VectorXd aen_weights(const Eigen::VectorXd& en_coef, Index n, double gamma);

struct AenFit {
  PenalizedFit stage1;
  PenalizedFit stage2;
  Eigen::VectorXd weights;
  double gamma = 0.0;
};

/// Stage 1: elastic net tuned by cv_select. Stage 2: weighted elastic net at
/// (lambda1_star, lambda2) with weights from stage 1.
AenFit adaptive_elastic_net(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda1_star, double lambda2,
                            double gamma, const AenConfig& config, const SeedConfig& seed);

/// Full tuning: stage-1 (lambda1, lambda2) by CV, then lambda1_star by CV on the
/// weighted grid with lambda2 held at its stage-1 value.
AenFit fit_aen_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double gamma, const AenConfig& config,
                  const SeedConfig& seed);

/// One moment coordinate of a(X_i, alpha_i, mu).
struct CoordinateFit {
  bool known = false;
  double constant = 0.0;
  Eigen::VectorXd coef;  ///< on the standardized scale
  double intercept = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double kkt_ratio = 0.0;
  bool monotone = true;
};

struct NuisanceFit {
  std::vector<CoordinateFit> coords;
  DictionarySpec spec;
  Standardizer standardizer;
  int training_fold = -1;
  double gamma = 0.0;

  /// a-hat for standardized dictionary features.
  Eigen::VectorXd predict_standardized(const Eigen::VectorXd& features) const;
  /// a-hat for individual i with fixed-effect estimate alpha.
  Eigen::VectorXd predict(const PanelDataset& panel, Index i, double alpha) const;
  double max_kkt_ratio() const;
};

/// Regresses each non-constant coordinate of dm/dalpha(W_i, d_i, alpha_i, mu)
/// on the dictionary over `train_rows` (alpha(k) pairs with train_rows[k]).
NuisanceFit fit_nuisance(const PanelDataset& panel, const CrossSection& cross, const IndexSet& train_rows,
                         const Eigen::VectorXd& alpha, const MomentModel& model, const Eigen::VectorXd& mu,
                         const DictionarySpec& spec, const AenConfig& config, const SeedConfig& seed,
                         int training_fold = -1);

}  // namespace orthofe
