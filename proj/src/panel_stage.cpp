#include "orthofe/panel_stage.hpp"

#include <cmath>

#include "orthofe/error.hpp"
#include "orthofe/kernels.hpp"

namespace orthofe {

std::string_view to_string(FirstStageMethod m) {
  return m == FirstStageMethod::WithinOls ? "within-ols" : "blundell-bond";
}

std::string_view to_string(Shrinkage s) {
  switch (s) {
    case Shrinkage::None: return "none";
    case Shrinkage::EB: return "eb";
    case Shrinkage::SURE: return "sure";
  }
  return "none";
}

namespace {

void fill_residuals(const PanelDataset& panel, FirstStageFit& fit) {
  const Index n = panel.n(), T = panel.t_len();
  fit.residuals.resize(n, T);
  fit.intercepts.resize(n);
  for (Index i = 0; i < n; ++i) {
    double mean = 0.0;
    for (Index t = 0; t < T; ++t) {
      double e = panel.y(i, t) - panel.xb(i, t, fit.beta);
      fit.residuals(i, t) = e;
      mean += e;
    }
    mean /= static_cast<double>(T);
    fit.intercepts(i) = mean;
    fit.residuals.row(i).array() -= mean;
  }
}

}  // namespace

FirstStageFit within_fe_ols(const PanelDataset& panel, const IndexSet& subset) {
  if (subset.empty()) throw Error(ErrorKind::InvalidArgument, "within_fe_ols: empty subset");
  const Index T = panel.t_len(), p = panel.p();
  FirstStageFit fit;
  fit.method = FirstStageMethod::WithinOls;
  fit.beta = Eigen::VectorXd::Zero(p);
  if (p > 0) {
    const Index rows = static_cast<Index>(subset.size()) * T;
    Eigen::MatrixXd xt(rows, p);
    Eigen::VectorXd yt(rows);
    Index r = 0;
    for (Index i : subset) {
      const double ybar = panel.y.row(i).mean();
      Eigen::VectorXd xbar(p);
      for (Index k = 0; k < p; ++k) xbar(k) = panel.x[k].row(i).mean();
      for (Index t = 0; t < T; ++t, ++r) {
        yt(r) = panel.y(i, t) - ybar;
        for (Index k = 0; k < p; ++k) xt(r, k) = panel.x[k](i, t) - xbar(k);
      }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(xt, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double cond = sv(p - 1) > 0.0 ? sv(0) / sv(p - 1) : std::numeric_limits<double>::infinity();
    if (!(cond < 1e12))
      throw Error(ErrorKind::RankDeficientDesign,
                  "within-transformed design is rank deficient (condition number " + std::to_string(cond) + ")");
    fit.beta = svd.solve(yt);
  }
  fill_residuals(panel, fit);
  return fit;
}

FirstStageFit blundell_bond(const PanelDataset& panel, const IndexSet& subset, Index min_t) {
  if (!panel.lagged_outcome || panel.p() != 1)
    throw Error(ErrorKind::InvalidArgument, "blundell_bond requires a dynamic panel with x1 = lagged y");
  const Index T = panel.t_len();
  if (min_t < 4 || min_t > T)
    throw Error(ErrorKind::InvalidArgument, "blundell_bond needs 4 <= min_t <= T");
  if (subset.size() < 2) throw Error(ErrorKind::InvalidArgument, "blundell_bond: subset too small");

  const Index periods = T - min_t + 1;
  const Index dim = 4 * periods;
  const Index n = static_cast<Index>(subset.size());
  // g_i(b) = a_i - b c_i
  Eigen::MatrixXd a(dim, n), c(dim, n);
  for (Index col = 0; col < n; ++col) {
    const Index i = subset[static_cast<std::size_t>(col)];
    auto ys = [&](Index s) { return s == 0 ? panel.x[0](i, 0) : panel.y(i, s - 1); };
    for (Index k = 0; k < periods; ++k) {
      const Index t = min_t + k;
      const double dy = ys(t) - ys(t - 1);
      const double dy1 = ys(t - 1) - ys(t - 2);
      const Index r = 4 * k;
      a(r, col) = dy;
      c(r, col) = dy1;
      a(r + 1, col) = ys(t - 2) * dy;
      c(r + 1, col) = ys(t - 2) * dy1;
      a(r + 2, col) = ys(t - 3) * dy;
      c(r + 2, col) = ys(t - 3) * dy1;
      a(r + 3, col) = dy1 * ys(t);
      c(r + 3, col) = dy1 * ys(t - 1);
    }
  }
  const Eigen::VectorXd abar = a.rowwise().mean();
  const Eigen::VectorXd cbar = c.rowwise().mean();

  auto solve = [&](const Eigen::MatrixXd& w) {
    const double den = cbar.dot(w * cbar);
    if (!(std::abs(den) > 0.0)) throw Error(ErrorKind::RankDeficientDesign, "blundell_bond: moments carry no information on beta");
    return cbar.dot(w * abar) / den;
  };
  auto objective = [&](double b, const Eigen::MatrixXd& w) {
    Eigen::VectorXd g = abar - b * cbar;
    return g.dot(w * g);
  };

  FirstStageFit fit;
  fit.method = FirstStageMethod::BlundellBond;
  const double b1 = solve(Eigen::MatrixXd::Identity(dim, dim));

  Eigen::MatrixXd g = a - b1 * c;
  Eigen::VectorXd gbar = g.rowwise().mean();
  g.colwise() -= gbar;
  Eigen::MatrixXd s = (g * g.transpose()) / static_cast<double>(n);
  s = 0.5 * (s + s.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  const double max_ev = eig.eigenvalues().maxCoeff();
  const double min_ev = eig.eigenvalues().minCoeff();
  if (!(min_ev > 1e-12 * max_ev)) {
    fit.ridge_used = true;
    s.diagonal().array() += 1e-8 * s.trace() / static_cast<double>(dim);
    eig.compute(s);
  }
  const Eigen::MatrixXd w = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                            eig.eigenvectors().transpose();
  const double b2 = solve(w);
  fit.beta = Eigen::VectorXd::Constant(1, b2);
  fit.objective_step1 = objective(b1, w);
  fit.objective_step2 = objective(b2, w);
  fill_residuals(panel, fit);
  return fit;
}

FirstStageFit first_stage(const PanelDataset& panel, const IndexSet& subset, FirstStageMethod method, Index min_t) {
  return method == FirstStageMethod::BlundellBond ? blundell_bond(panel, subset, min_t)
                                                  : within_fe_ols(panel, subset);
}

AlphaEstimates extract_alpha(const PanelDataset& panel, const Eigen::VectorXd& beta, const IndexSet& fold,
                             Index horizon) {
  if (horizon < 1 || horizon > panel.t_len())
    throw Error(ErrorKind::HorizonTooLarge,
                "horizon " + std::to_string(horizon) + " outside 1.." + std::to_string(panel.t_len()));
  AlphaEstimates out;
  out.horizon = horizon;
  out.alpha.resize(static_cast<Index>(fold.size()));
  for (std::size_t k = 0; k < fold.size(); ++k) {
    const Index i = fold[k];
    double s = 0.0;
    for (Index t = 0; t < horizon; ++t) s += panel.y(i, t) - panel.xb(i, t, beta);
    out.alpha(static_cast<Index>(k)) = s / static_cast<double>(horizon);
  }
  return out;
}

Eigen::MatrixXd fold_residuals(const PanelDataset& panel, const Eigen::VectorXd& beta, const IndexSet& fold,
                               const Eigen::VectorXd& alpha, Index horizon) {
  Eigen::MatrixXd r(static_cast<Index>(fold.size()), horizon);
  for (std::size_t k = 0; k < fold.size(); ++k) {
    const Index i = fold[k];
    for (Index t = 0; t < horizon; ++t)
      r(static_cast<Index>(k), t) = panel.y(i, t) - panel.xb(i, t, beta) - alpha(static_cast<Index>(k));
  }
  return r;
}

ResidualVariances residual_variance(const Eigen::MatrixXd& residuals, Index horizon, VarianceMethod method,
                                    Index lag) {
  if (horizon < 2 || horizon > residuals.cols())
    throw Error(ErrorKind::InvalidArgument, "residual_variance: horizon must be in 2..columns");
  ResidualVariances out;
  out.method = method;
  out.lag = method == VarianceMethod::NeweyWest ? std::min(lag, horizon - 1) : 0;
  out.u2.resize(residuals.rows());
  const double h2 = static_cast<double>(horizon) * static_cast<double>(horizon);
  std::vector<double> row(static_cast<std::size_t>(horizon));
  for (Index i = 0; i < residuals.rows(); ++i) {
    for (Index t = 0; t < horizon; ++t) row[static_cast<std::size_t>(t)] = residuals(i, t);
    std::span<const double> u(row);
    double s = kernels::sum_squares(u);
    for (Index j = 1; j <= out.lag; ++j) {
      const double w = 1.0 - static_cast<double>(j) / static_cast<double>(out.lag + 1);
      s += 2.0 * w * kernels::dot(u.first(static_cast<std::size_t>(horizon - j)), u.subspan(static_cast<std::size_t>(j)));
    }
    out.u2(i) = std::max(0.0, s / h2);
  }
  return out;
}

Index newey_west_default_lag(Index periods) {
  return static_cast<Index>(std::floor(4.0 * std::pow(static_cast<double>(periods) / 100.0, 2.0 / 9.0)));
}

}  // namespace orthofe
