#pragma once

#include <string_view>

#include "orthofe/data_model.hpp"

namespace orthofe {

enum class FirstStageMethod { WithinOls, BlundellBond };
enum class Shrinkage { None, EB, SURE };
enum class VarianceMethod { Iid, NeweyWest };

std::string_view to_string(FirstStageMethod m);
std::string_view to_string(Shrinkage s);

struct FirstStageFit {
  Eigen::VectorXd beta;
  FirstStageMethod method = FirstStageMethod::WithinOls;
  /// u_it = Y_it - X_it'beta - mean_t(Y_it - X_it'beta), all individuals, all periods.
  Eigen::MatrixXd residuals;
  /// Per-individual intercepts used for `residuals`.
  Eigen::VectorXd intercepts;
  /// Blundell-Bond only: the weighting matrix had to be ridge-regularized.
  bool ridge_used = false;
  double objective_step1 = 0.0;  ///< step-1 objective under the step-2 weighting at the step-1 beta
  double objective_step2 = 0.0;  ///< step-2 objective at the step-2 beta
};

struct AlphaEstimates {
  Eigen::VectorXd alpha;
  Index horizon = 0;
  Shrinkage shrinkage = Shrinkage::None;
};

struct ResidualVariances {
  Eigen::VectorXd u2;
  VarianceMethod method = VarianceMethod::Iid;
  Index lag = 0;
};

/// Fixed-effect (within) OLS of y on x over `subset`, all T periods.
/// Residuals are returned for every individual in the panel, using the
/// subset's beta and each individual's own mean as intercept.
FirstStageFit within_fe_ols(const PanelDataset& panel, const IndexSet& subset);

/// Two-step system-GMM for a scalar AR coefficient using, for t >= min_t
/// (1-based period index with Y_i0 the pre-sample value),
///   dY_t - b dY_{t-1},  Y_{t-2}(dY_t - b dY_{t-1}),  Y_{t-3}(dY_t - b dY_{t-1}),
///   dY_{t-1}(Y_t - b Y_{t-1}).
/// Requires `panel.lagged_outcome` and p == 1.
FirstStageFit blundell_bond(const PanelDataset& panel, const IndexSet& subset, Index min_t);

/// Dispatches on `method`; `min_t` is used only by Blundell-Bond.
FirstStageFit first_stage(const PanelDataset& panel, const IndexSet& subset, FirstStageMethod method, Index min_t);

/// alpha_i = mean over the first `horizon` periods of (Y_it - X_it'beta).
AlphaEstimates extract_alpha(const PanelDataset& panel, const Eigen::VectorXd& beta, const IndexSet& fold,
                             Index horizon);

/// Residuals Y_it - X_it'beta - alpha_i for the fold over the first `horizon`
/// periods (rows follow `fold`).
Eigen::MatrixXd fold_residuals(const PanelDataset& panel, const Eigen::VectorXd& beta, const IndexSet& fold,
                               const Eigen::VectorXd& alpha, Index horizon);

/// Variance of the time-averaged residual per row of `residuals`, using its
/// first `horizon` columns. Newey-West uses Bartlett weights 1 - j/(lag+1).
ResidualVariances residual_variance(const Eigen::MatrixXd& residuals, Index horizon, VarianceMethod method,
                                    Index lag = 0);

/// floor(4 (T/100)^(2/9))
Index newey_west_default_lag(Index periods);

}  // namespace orthofe
