#include "orthofe/nuisance_aen.hpp"

#include <algorithm>
#include <cmath>

#include "orthofe/error.hpp"
#include "orthofe/kernels.hpp"

namespace orthofe {

// ---------------------------------------------------------------------------
// Dictionary

Index DictionarySpec::feature_count(const PanelDataset& panel) const {
  const Index periods = panel.t_len() - 1;
  const Index levels = (include_x ? panel.p() * periods : 0) + (include_y ? periods : 0);
  return levels + (include_alpha ? 1 : 0) + (interaction_order >= 2 ? levels : 0);
}

Eigen::VectorXd build_dictionary(const PanelDataset& panel, Index i, double alpha, const DictionarySpec& spec) {
  const Index periods = panel.t_len() - 1;
  Eigen::VectorXd out(spec.feature_count(panel));
  Index pos = 0;
  if (spec.include_x)
    for (Index k = 0; k < panel.p(); ++k)
      for (Index t = 0; t < periods; ++t) out(pos++) = panel.x[k](i, t);
  if (spec.include_y)
    for (Index t = 0; t < periods; ++t) out(pos++) = panel.y(i, t);
  const Index levels = pos;
  if (spec.include_alpha) out(pos++) = alpha;
  if (spec.interaction_order >= 2)
    for (Index k = 0; k < levels; ++k) out(pos++) = alpha * out(k);
  return out;
}

Eigen::VectorXd build_dictionary(const PanelDataset& panel, Index i, double alpha, const DictionarySpec& spec,
                                 const Standardizer& standardizer) {
  Eigen::VectorXd raw = build_dictionary(panel, i, alpha, spec);
  if (raw.size() != standardizer.size())
    throw Error(ErrorKind::SpecMismatch, "dictionary has " + std::to_string(raw.size()) +
                                             " features, fit used " + std::to_string(standardizer.size()));
  return standardizer.apply(raw);
}

Eigen::MatrixXd build_dictionary_matrix(const PanelDataset& panel, const IndexSet& rows, const Eigen::VectorXd& alpha,
                                        const DictionarySpec& spec) {
  Eigen::MatrixXd out(static_cast<Index>(rows.size()), spec.feature_count(panel));
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.row(static_cast<Index>(k)) = build_dictionary(panel, rows[k], alpha(static_cast<Index>(k)), spec).transpose();
  return out;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& features) {
  Standardizer s;
  const double n = static_cast<double>(features.rows());
  s.mean = features.colwise().mean().transpose();
  s.scale.resize(features.cols());
  for (Index j = 0; j < features.cols(); ++j) {
    const double var = (features.col(j).array() - s.mean(j)).square().sum() / n;
    s.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& features) const {
  return ((features.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix();
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& features) const {
  return ((features - mean).array() / scale.array()).matrix();
}

// ---------------------------------------------------------------------------
// Coordinate descent

GramProblem GramProblem::build(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  GramProblem p;
  p.n = x.rows();
  const Index k = x.cols();
  p.x_mean = x.colwise().mean().transpose();
  p.y_mean = y.mean();
  Eigen::MatrixXd xc = x.rowwise() - p.x_mean.transpose();
  Eigen::VectorXd yc = y.array() - p.y_mean;
  const auto len = static_cast<std::size_t>(p.n);
  auto col = [&](Index j) { return std::span<const double>(xc.col(j).data(), len); };
  std::span<const double> ys(yc.data(), len);
  p.gram.resize(k, k);
  p.xty.resize(k);
  for (Index j = 0; j < k; ++j) {
    for (Index m = 0; m <= j; ++m) {
      const double v = kernels::dot(col(j), col(m));
      p.gram(j, m) = v;
      p.gram(m, j) = v;
    }
    p.xty(j) = kernels::dot(col(j), ys);
  }
  p.yty = kernels::sum_squares(ys);
  return p;
}

double GramProblem::lambda_max(const Eigen::VectorXd& weights) const {
  double lmax = 0.0;
  for (Index j = 0; j < xty.size(); ++j) {
    const double w = weights.size() ? weights(j) : 1.0;
    if (w > 0.0 && gram(j, j) > 0.0) lmax = std::max(lmax, 2.0 * std::abs(xty(j)) / w);
  }
  return lmax;
}

double penalized_objective(const GramProblem& problem, const Eigen::VectorXd& argmin, double lambda1,
                           double lambda2, const Eigen::VectorXd& weights) {
  const double rss = problem.yty - 2.0 * argmin.dot(problem.xty) + argmin.dot(problem.gram * argmin);
  double l1 = 0.0;
  for (Index j = 0; j < argmin.size(); ++j) l1 += (weights.size() ? weights(j) : 1.0) * std::abs(argmin(j));
  return rss + lambda2 * argmin.squaredNorm() + lambda1 * l1;
}

namespace {

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

// Largest KKT violation of `pi` given the exact gradient X'r.
double kkt_violation(const GramProblem& p, const Eigen::VectorXd& pi, const Eigen::VectorXd& grad, double lambda1,
                     double lambda2, const Eigen::VectorXd& weights) {
  double worst = 0.0;
  for (Index j = 0; j < pi.size(); ++j) {
    if (p.gram(j, j) <= 0.0) continue;
    const double w = weights.size() ? weights(j) : 1.0;
    const double g = 2.0 * grad(j) - 2.0 * lambda2 * pi(j);
    double v;
    if (pi(j) == 0.0)
      v = std::max(0.0, std::abs(g) - lambda1 * w);
    else
      v = std::abs(g - lambda1 * w * (pi(j) > 0.0 ? 1.0 : -1.0));
    worst = std::max(worst, v);
  }
  return worst;
}

}  // namespace

PenalizedFit solve_penalized(const GramProblem& problem, double lambda1, double lambda2,
                             const Eigen::VectorXd& weights, const Eigen::VectorXd& warm,
                             const SolverOptions& options) {
  const Index k = problem.xty.size();
  PenalizedFit fit;
  fit.lambda1 = lambda1;
  fit.lambda2 = lambda2;
  fit.kkt_scale = std::max(1.0, 2.0 * (k ? problem.xty.cwiseAbs().maxCoeff() : 0.0));

  Eigen::VectorXd pi = warm.size() == k ? warm : Eigen::VectorXd::Zero(k);
  for (Index j = 0; j < k; ++j)
    if (problem.gram(j, j) <= 0.0) pi(j) = 0.0;
  Eigen::VectorXd grad = problem.xty - problem.gram * pi;
  const double kkt_target = 0.1 * 1e-6 * fit.kkt_scale;
  const auto klen = static_cast<std::size_t>(k);

  double prev_obj = penalized_objective(problem, pi, lambda1, lambda2, weights);
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Index j = 0; j < k; ++j) {
      const double gjj = problem.gram(j, j);
      if (gjj <= 0.0) continue;
      const double w = weights.size() ? weights(j) : 1.0;
      const double z = grad(j) + gjj * pi(j);
      const double updated = soft_threshold(z, 0.5 * lambda1 * w) / (gjj + lambda2);
      const double delta = updated - pi(j);
      if (delta != 0.0) {
        kernels::axpy(-delta, std::span<const double>(problem.gram.col(j).data(), klen),
                      std::span<double>(grad.data(), klen));
        pi(j) = updated;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    fit.sweeps = sweep + 1;
    const double obj = penalized_objective(problem, pi, lambda1, lambda2, weights);
    if (obj > prev_obj + 1e-10 * std::max(1.0, std::abs(prev_obj))) fit.objective_monotone = false;
    prev_obj = obj;
    if (max_change < options.tolerance) {
      grad = problem.xty - problem.gram * pi;
      if (kkt_violation(problem, pi, grad, lambda1, lambda2, weights) <= kkt_target) {
        fit.converged = true;
        break;
      }
    }
  }
  grad = problem.xty - problem.gram * pi;
  fit.kkt_violation = kkt_violation(problem, pi, grad, lambda1, lambda2, weights);
  fit.argmin = pi;
  const double rescale = problem.n > 0 ? 1.0 + lambda2 / static_cast<double>(problem.n) : 1.0;
  fit.coef = rescale * pi;
  fit.intercept = problem.y_mean - problem.x_mean.dot(fit.coef);
  return fit;
}

PenalizedFit elastic_net(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda1, double lambda2,
                         const SolverOptions& options) {
  if (x.rows() < 2 || x.rows() != y.size()) throw Error(ErrorKind::InvalidArgument, "elastic_net: need n >= 2 matching rows");
  return solve_penalized(GramProblem::build(x, y), lambda1, lambda2, Eigen::VectorXd(), Eigen::VectorXd(), options);
}

// ---------------------------------------------------------------------------
// Tuning

double default_g(Index n, Index t_len) {
  return std::log(static_cast<double>(t_len)) / std::log(static_cast<double>(n));
}

double gamma_rule(double g) {
  g = std::clamp(g, 0.5, 0.99);
  const double gamma = std::ceil(2.0 * g / (1.0 - g)) + 1.0;
  return std::clamp(gamma, 1.0, 6.0);
}

std::vector<double> lambda1_grid(double lambda_max, int points, double ratio) {
  std::vector<double> grid(static_cast<std::size_t>(std::max(points, 1)));
  if (grid.size() == 1 || !(lambda_max > 0.0)) {
    std::fill(grid.begin(), grid.end(), std::max(lambda_max, 0.0));
    return grid;
  }
  const double lhi = std::log(lambda_max), llo = std::log(lambda_max * ratio);
  for (std::size_t k = 0; k < grid.size(); ++k)
    grid[k] = std::exp(lhi + (llo - lhi) * static_cast<double>(k) / static_cast<double>(grid.size() - 1));
  return grid;
}

CvSelection cv_select(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const CvGrid& grid, int folds,
                      const SeedConfig& seed, const Eigen::VectorXd& weights, const SolverOptions& options) {
  if (folds < 2) throw Error(ErrorKind::InvalidArgument, "cv_select needs at least two folds");
  if (grid.lambda1.empty() || grid.lambda2.empty()) throw Error(ErrorKind::InvalidArgument, "cv_select: empty grid");
  const Index n = x.rows();
  const int k_folds = static_cast<int>(std::min<Index>(folds, n));
  const FoldPartition part = make_folds(n, k_folds, seed);
  const auto n1 = static_cast<Index>(grid.lambda1.size());
  const auto n2 = static_cast<Index>(grid.lambda2.size());
  CvSelection sel;
  sel.cv_error = Eigen::MatrixXd::Zero(n2, n1);

  for (int f = 0; f < k_folds; ++f) {
    const IndexSet train = part.excluding({f});
    const IndexSet test = part.members(f);
    Eigen::MatrixXd xtr(static_cast<Index>(train.size()), x.cols());
    Eigen::VectorXd ytr(static_cast<Index>(train.size()));
    for (std::size_t r = 0; r < train.size(); ++r) {
      xtr.row(static_cast<Index>(r)) = x.row(train[r]);
      ytr(static_cast<Index>(r)) = y(train[r]);
    }
    const GramProblem problem = GramProblem::build(xtr, ytr);
    for (Index b = 0; b < n2; ++b) {
      Eigen::VectorXd warm;
      for (Index a = 0; a < n1; ++a) {
        const PenalizedFit fit = solve_penalized(problem, grid.lambda1[static_cast<std::size_t>(a)],
                                                 grid.lambda2[static_cast<std::size_t>(b)], weights, warm, options);
        warm = fit.argmin;
        double sse = 0.0;
        for (Index i : test) {
          const double e = y(i) - fit.predict(x.row(i).transpose());
          sse += e * e;
        }
        sel.cv_error(b, a) += sse;
      }
    }
  }
  sel.cv_error /= static_cast<double>(n);

  // lambda1 is descending and lambda2 is scanned from largest down, so a
  // strict improvement test keeps the preferred entry on ties.
  std::vector<Index> order2(static_cast<std::size_t>(n2));
  for (Index b = 0; b < n2; ++b) order2[static_cast<std::size_t>(b)] = b;
  std::stable_sort(order2.begin(), order2.end(), [&](Index l, Index r) {
    return grid.lambda2[static_cast<std::size_t>(l)] > grid.lambda2[static_cast<std::size_t>(r)];
  });
  std::vector<Index> order1(static_cast<std::size_t>(n1));
  for (Index a = 0; a < n1; ++a) order1[static_cast<std::size_t>(a)] = a;
  std::stable_sort(order1.begin(), order1.end(), [&](Index l, Index r) {
    return grid.lambda1[static_cast<std::size_t>(l)] > grid.lambda1[static_cast<std::size_t>(r)];
  });
  double best = std::numeric_limits<double>::infinity();
  for (Index a : order1)
    for (Index b : order2)
      if (sel.cv_error(b, a) < best) {
        best = sel.cv_error(b, a);
        sel.lambda1 = grid.lambda1[static_cast<std::size_t>(a)];
        sel.lambda2 = grid.lambda2[static_cast<std::size_t>(b)];
      }
  return sel;
}

Eigen::VectorXd aen_weights(const Eigen::VectorXd& en_coef, Index n, double gamma) {
  const double eps = 1.0 / static_cast<double>(n);
  return (en_coef.array().abs() + eps).pow(-gamma).matrix();
}

namespace {

CvGrid default_grid(const GramProblem& problem, const AenConfig& config, const Eigen::VectorXd& weights) {
  CvGrid grid;
  grid.lambda1 = lambda1_grid(problem.lambda_max(weights), config.lambda1_points, config.lambda1_ratio);
  for (double m : config.lambda2_multipliers) grid.lambda2.push_back(m * static_cast<double>(problem.n));
  return grid;
}

PenalizedFit stage_one(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GramProblem& problem,
                       const AenConfig& config, const SeedConfig& seed) {
  const CvGrid grid = default_grid(problem, config, Eigen::VectorXd());
  const CvSelection sel = cv_select(x, y, grid, config.cv_folds, seed.child("en-cv"), Eigen::VectorXd(), config.solver);
  return solve_penalized(problem, sel.lambda1, sel.lambda2, Eigen::VectorXd(), Eigen::VectorXd(), config.solver);
}

}  // namespace

AenFit adaptive_elastic_net(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda1_star, double lambda2,
                            double gamma, const AenConfig& config, const SeedConfig& seed) {
  if (x.rows() < 2 || x.rows() != y.size()) throw Error(ErrorKind::InvalidArgument, "adaptive_elastic_net: need n >= 2 matching rows");
  const GramProblem problem = GramProblem::build(x, y);
  AenFit out;
  out.gamma = gamma;
  out.stage1 = stage_one(x, y, problem, config, seed);
  out.weights = aen_weights(out.stage1.coef, problem.n, gamma);
  out.stage2 = solve_penalized(problem, lambda1_star, lambda2, out.weights, Eigen::VectorXd(), config.solver);
  return out;
}

AenFit fit_aen_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double gamma, const AenConfig& config,
                  const SeedConfig& seed) {
  if (x.rows() < 2 || x.rows() != y.size()) throw Error(ErrorKind::InvalidArgument, "fit_aen_cv: need n >= 2 matching rows");
  const GramProblem problem = GramProblem::build(x, y);
  AenFit out;
  out.gamma = gamma;
  out.stage1 = stage_one(x, y, problem, config, seed);
  out.weights = aen_weights(out.stage1.coef, problem.n, gamma);
  CvGrid grid;
  grid.lambda1 = lambda1_grid(problem.lambda_max(out.weights), config.lambda1_points, config.lambda1_ratio);
  grid.lambda2 = {out.stage1.lambda2};
  const CvSelection sel = cv_select(x, y, grid, config.cv_folds, seed.child("aen-cv"), out.weights, config.solver);
  out.stage2 = solve_penalized(problem, sel.lambda1, sel.lambda2, out.weights, Eigen::VectorXd(), config.solver);
  return out;
}

// ---------------------------------------------------------------------------
// Nuisance fit

Eigen::VectorXd NuisanceFit::predict_standardized(const Eigen::VectorXd& features) const {
  Eigen::VectorXd out(static_cast<Index>(coords.size()));
  for (std::size_t c = 0; c < coords.size(); ++c) {
    const CoordinateFit& cf = coords[c];
    out(static_cast<Index>(c)) = cf.known ? cf.constant : cf.intercept + features.dot(cf.coef);
  }
  return out;
}

Eigen::VectorXd NuisanceFit::predict(const PanelDataset& panel, Index i, double alpha) const {
  return predict_standardized(build_dictionary(panel, i, alpha, spec, standardizer));
}

double NuisanceFit::max_kkt_ratio() const {
  double worst = 0.0;
  for (const auto& c : coords)
    if (!c.known) worst = std::max(worst, c.kkt_ratio);
  return worst;
}

NuisanceFit fit_nuisance(const PanelDataset& panel, const CrossSection& cross, const IndexSet& train_rows,
                         const Eigen::VectorXd& alpha, const MomentModel& model, const Eigen::VectorXd& mu,
                         const DictionarySpec& spec, const AenConfig& config, const SeedConfig& seed,
                         int training_fold) {
  if (!mu.allFinite()) throw Error(ErrorKind::InvalidArgument, "fit_nuisance: preliminary mu is not finite");
  if (static_cast<Index>(train_rows.size()) != alpha.size())
    throw Error(ErrorKind::InvalidArgument, "fit_nuisance: one alpha per training row required");
  NuisanceFit fit;
  fit.spec = spec;
  fit.training_fold = training_fold;
  fit.gamma = config.gamma > 0.0 ? config.gamma
                                 : gamma_rule(config.g > 0.0 ? config.g : default_g(panel.n(), panel.t_len()));
  fit.coords.resize(static_cast<std::size_t>(model.dim_m()));
  for (const auto& [coord, value] : model.known_a_coords(mu)) {
    fit.coords[static_cast<std::size_t>(coord)].known = true;
    fit.coords[static_cast<std::size_t>(coord)].constant = value;
  }

  const Eigen::MatrixXd raw = build_dictionary_matrix(panel, train_rows, alpha, spec);
  fit.standardizer = Standardizer::fit(raw);
  const Eigen::MatrixXd features = fit.standardizer.apply(raw);

  const Index n = static_cast<Index>(train_rows.size());
  Eigen::MatrixXd targets(n, model.dim_m());
  for (Index r = 0; r < n; ++r) {
    const Index i = train_rows[static_cast<std::size_t>(r)];
    targets.row(r) = model.dm_dalpha(cross.w.row(i).transpose(), cross.d(i), alpha(r), mu).transpose();
  }
  for (Index c = 0; c < model.dim_m(); ++c) {
    CoordinateFit& cf = fit.coords[static_cast<std::size_t>(c)];
    if (cf.known) continue;
    const AenFit aen = fit_aen_cv(features, targets.col(c), fit.gamma, config, seed.child("coord", static_cast<std::uint64_t>(c)));
    cf.coef = aen.stage2.coef;
    cf.intercept = aen.stage2.intercept;
    cf.lambda1 = aen.stage2.lambda1;
    cf.lambda2 = aen.stage2.lambda2;
    cf.kkt_ratio = std::max(aen.stage1.kkt_ratio(), aen.stage2.kkt_ratio());
    cf.monotone = aen.stage1.objective_monotone && aen.stage2.objective_monotone;
  }
  return fit;
}

}  // namespace orthofe
