#include "orthofe/shrinkage.hpp"

#include <cmath>

#include "orthofe/error.hpp"

namespace orthofe {

namespace {

void check_fold(const Eigen::VectorXd& alphas, const ResidualVariances& u2) {
  if (alphas.size() < 2) throw Error(ErrorKind::FoldTooSmall, "shrinkage needs at least two individuals");
  if (u2.u2.size() != alphas.size())
    throw Error(ErrorKind::InvalidArgument, "shrinkage: alphas and variances differ in length");
}

double sample_variance(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace

ShrinkageFit apply_prior(const Eigen::VectorXd& alphas, const ResidualVariances& u2, double center, double sigma2,
                         Shrinkage method) {
  ShrinkageFit fit;
  fit.method = method;
  fit.center = center;
  fit.sigma_alpha2 = sigma2;
  fit.weights.resize(alphas.size());
  fit.shrunk.resize(alphas.size());
  for (Index i = 0; i < alphas.size(); ++i) {
    const double u = u2.u2(i);
    const double s = u > 0.0 ? u / (u + sigma2) : 0.0;
    fit.weights(i) = s;
    fit.shrunk(i) = s * center + (1.0 - s) * alphas(i);
  }
  return fit;
}

ShrinkageFit eb_shrink(const Eigen::VectorXd& alphas, const ResidualVariances& u2) {
  check_fold(alphas, u2);
  const double sigma2 = std::max(0.0, sample_variance(alphas) - u2.u2.mean());
  return apply_prior(alphas, u2, alphas.mean(), sigma2, Shrinkage::EB);
}

double ure_objective(double sigma2, const Eigen::VectorXd& alphas, const ResidualVariances& u2, double center) {
  double total = 0.0;
  for (Index i = 0; i < alphas.size(); ++i) {
    const double u = u2.u2(i);
    if (u <= 0.0) continue;
    const double denom = sigma2 + u;
    const double dev = alphas(i) - center;
    total += u + u * u * dev * dev / (denom * denom) - 2.0 * u * u / denom;
  }
  return total / static_cast<double>(alphas.size());
}

ShrinkageFit sure_shrink(const Eigen::VectorXd& alphas, const ResidualVariances& u2) {
  check_fold(alphas, u2);
  const double center = alphas.mean();
  const double upper = 100.0 * sample_variance(alphas);
  if ((u2.u2.array() <= 0.0).all() || !(upper > 0.0))
    return apply_prior(alphas, u2, center, upper, Shrinkage::SURE);

  auto ure = [&](double s2) { return ure_objective(s2, alphas, u2, center); };

  // Grid: 0 followed by 199 log-spaced points from upper * 1e-8 to upper.
  constexpr int kGrid = 200;
  std::vector<double> grid(kGrid);
  grid[0] = 0.0;
  const double lo = std::log(upper * 1e-8), hi = std::log(upper);
  for (int k = 1; k < kGrid; ++k) grid[k] = std::exp(lo + (hi - lo) * (k - 1) / (kGrid - 2));
  int best = 0;
  double best_val = ure(grid[0]);
  for (int k = 1; k < kGrid; ++k) {
    double v = ure(grid[k]);
    if (v < best_val) {
      best_val = v;
      best = k;
    }
  }

  double a = grid[std::max(best - 1, 0)];
  double b = grid[std::min(best + 1, kGrid - 1)];
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = ure(x1), f2 = ure(x2);
  while (b - a > 1e-6 * std::max(std::abs(b), 1e-300)) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = ure(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = ure(x2);
    }
  }
  double sigma2 = grid[best];
  for (double cand : {x1, x2, 0.5 * (a + b)}) {
    double v = ure(cand);
    if (v < best_val) {
      best_val = v;
      sigma2 = cand;
    }
  }
  return apply_prior(alphas, u2, center, sigma2, Shrinkage::SURE);
}

ShrinkageFit shrink(const Eigen::VectorXd& alphas, const ResidualVariances& u2, Shrinkage method) {
  switch (method) {
    case Shrinkage::EB: return eb_shrink(alphas, u2);
    case Shrinkage::SURE: return sure_shrink(alphas, u2);
    case Shrinkage::None: break;
  }
  ShrinkageFit fit;
  fit.method = Shrinkage::None;
  fit.shrunk = alphas;
  fit.center = alphas.size() ? alphas.mean() : 0.0;
  fit.weights = Eigen::VectorXd::Zero(alphas.size());
  return fit;
}

}  // namespace orthofe
