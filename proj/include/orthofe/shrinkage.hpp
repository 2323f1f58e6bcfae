#pragma once

#include "orthofe/panel_stage.hpp"

namespace orthofe {

/// Normal-prior shrinkage of fixed-effect estimates toward their fold mean.
struct ShrinkageFit {
  Eigen::VectorXd shrunk;
  double sigma_alpha2 = 0.0;
  double center = 0.0;
  /// s_i = u_i^2 / (u_i^2 + sigma_alpha^2); shrunk_i = s_i center + (1 - s_i) alpha_i.
  Eigen::VectorXd weights;
  Shrinkage method = Shrinkage::EB;
};

/// Moment-based prior variance: max(0, sample variance of alphas - mean u_i^2).
ShrinkageFit eb_shrink(const Eigen::VectorXd& alphas, const ResidualVariances& u2);

/// Mean over i of the unbiased risk estimate
///   u_i^2 + u_i^4 (alpha_i - center)^2 / (sigma2 + u_i^2)^2 - 2 u_i^4 / (sigma2 + u_i^2).
double ure_objective(double sigma2, const Eigen::VectorXd& alphas, const ResidualVariances& u2, double center);

/// Prior variance minimizing ure_objective on [0, 100 * sample variance],
/// located on a 200-point log grid and refined by golden-section search.
ShrinkageFit sure_shrink(const Eigen::VectorXd& alphas, const ResidualVariances& u2);

/// Applies `method` (None returns the input with zero weights).
ShrinkageFit shrink(const Eigen::VectorXd& alphas, const ResidualVariances& u2, Shrinkage method);

/// Shrinkage weights and values for a fixed prior variance.
ShrinkageFit apply_prior(const Eigen::VectorXd& alphas, const ResidualVariances& u2, double center, double sigma2,
                         Shrinkage method);

}  // namespace orthofe
