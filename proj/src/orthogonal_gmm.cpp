#include "orthofe/orthogonal_gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "orthofe/error.hpp"
#include "orthofe/parallel.hpp"

namespace orthofe {

void EstConfig::validate() const {
  if (folds < 2) throw Error(ErrorKind::InvalidFoldCount, "need at least 2 folds");
  if (splits < 1) throw Error(ErrorKind::InvalidArgument, "need at least 1 split");
  if (!(gmm_tolerance > 0.0) || gmm_max_iterations < 1)
    throw Error(ErrorKind::InvalidArgument, "GMM tolerance and iteration cap must be positive");
  if (aen.lambda1_points < 1 || aen.lambda2_multipliers.empty())
    throw Error(ErrorKind::InvalidArgument, "AEN grids must be nonempty");
  if (aen.cv_folds < 2) throw Error(ErrorKind::InvalidArgument, "AEN needs at least 2 CV folds");
  if (aen.gamma < 0.0 || !(aen.solver.tolerance > 0.0))
    throw Error(ErrorKind::InvalidArgument, "AEN gamma must be >= 0 and tolerance > 0");
}

namespace {

Index alpha_horizon(const PanelDataset& panel) { return panel.t_len() - 1; }

Index resolved_lag(const EstConfig& config, Index horizon) {
  return config.nw_lag >= 0 ? config.nw_lag : newey_west_default_lag(horizon);
}

// alpha over the first T-1 periods for `rows`, shrunk within the group when asked.
ShrinkageFit fold_alpha(const PanelDataset& panel, const Eigen::VectorXd& beta, const IndexSet& rows,
                        const EstConfig& config, Eigen::VectorXd* raw = nullptr) {
  const Index h = alpha_horizon(panel);
  const AlphaEstimates est = extract_alpha(panel, beta, rows, h);
  if (raw) *raw = est.alpha;
  if (config.shrinkage == Shrinkage::None) {
    ShrinkageFit none;
    none.shrunk = est.alpha;
    none.weights = Eigen::VectorXd::Zero(est.alpha.size());
    none.method = Shrinkage::None;
    return none;
  }
  const Eigen::MatrixXd res = fold_residuals(panel, beta, rows, est.alpha, h);
  const ResidualVariances u2 = residual_variance(res, h, config.variance, resolved_lag(config, h));
  return shrink(est.alpha, u2, config.shrinkage);
}

double quad(const Eigen::VectorXd& m, const Eigen::MatrixXd& u) { return m.dot(u * m); }

void add_flag(std::vector<std::string>& flags, const std::string& f) {
  if (std::find(flags.begin(), flags.end(), f) == flags.end()) flags.push_back(f);
}

Index total_members(const std::vector<FoldArtifacts>& folds) {
  Index n = 0;
  for (const auto& f : folds) n += static_cast<Index>(f.members.size());
  return n;
}

}  // namespace

PreliminaryFit preliminary_mu(const PanelDataset& panel, const CrossSection& cross, const MomentModel& model,
                              const EstConfig& config, const FoldPartition& folds, int l) {
  PreliminaryFit out;
  out.rows = folds.excluding({l});
  out.alpha.resize(static_cast<Index>(out.rows.size()));
  out.nested_fallback = folds.folds() < 3;

  std::vector<Index> position(static_cast<std::size_t>(panel.n()), -1);
  for (std::size_t k = 0; k < out.rows.size(); ++k) position[static_cast<std::size_t>(out.rows[k])] = static_cast<Index>(k);

  Eigen::VectorXd fallback_beta;
  if (out.nested_fallback)
    fallback_beta = first_stage(panel, out.rows, config.first_stage, config.bb_min_t).beta;

  for (int lp = 0; lp < folds.folds(); ++lp) {
    if (lp == l) continue;
    Eigen::VectorXd beta;
    if (out.nested_fallback) {
      beta = fallback_beta;
    } else {
      const IndexSet nested = folds.excluding({l, lp});
      if (nested.size() < 2)
        throw Error(ErrorKind::SingularNestedFit, "nested first stage for folds " + std::to_string(l) + "," +
                                                      std::to_string(lp) + " has fewer than 2 individuals");
      beta = first_stage(panel, nested, config.first_stage, config.bb_min_t).beta;
    }
    const IndexSet members = folds.members(lp);
    const ShrinkageFit a = fold_alpha(panel, beta, members, config);
    for (std::size_t k = 0; k < members.size(); ++k)
      out.alpha(position[static_cast<std::size_t>(members[k])]) = a.shrunk(static_cast<Index>(k));
    if (config.shrinkage != Shrinkage::None && a.weights.size() > 0) {
      out.min_shrink_weight = std::min(out.min_shrink_weight, a.weights.minCoeff());
      out.max_shrink_weight = std::max(out.max_shrink_weight, a.weights.maxCoeff());
    }
  }
  if (config.shrinkage == Shrinkage::None) out.min_shrink_weight = out.max_shrink_weight = 0.0;

  const Index n = static_cast<Index>(out.rows.size());
  const auto moments = [&](const Eigen::VectorXd& mu) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(model.dim_m());
    for (Index r = 0; r < n; ++r) {
      const Index i = out.rows[static_cast<std::size_t>(r)];
      s += model.m(cross.w.row(i).transpose(), cross.d(i), out.alpha(r), mu);
    }
    return Eigen::VectorXd(s / static_cast<double>(n));
  };
  const auto jac = [&](const Eigen::VectorXd& mu) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(model.dim_m(), model.dim_mu());
    for (Index r = 0; r < n; ++r) {
      const Index i = out.rows[static_cast<std::size_t>(r)];
      g += model.dm_dmu(cross.w.row(i).transpose(), cross.d(i), out.alpha(r), mu);
    }
    return Eigen::MatrixXd(g / static_cast<double>(n));
  };
  const GmmSolution sol = gmm_minimize(moments, jac, Eigen::MatrixXd::Identity(model.dim_m(), model.dim_m()),
                                       Eigen::VectorXd::Zero(model.dim_mu()), config.gmm_tolerance,
                                       config.gmm_max_iterations);
  out.mu_tilde = sol.mu;
  return out;
}

FoldNuisance fit_fold_nuisance(const PanelDataset& panel, const CrossSection& cross, const MomentModel& model,
                               const EstConfig& config, const FoldPartition& folds, int l, const SeedConfig& seed) {
  FoldNuisance out;
  out.fold = l;
  out.train_rows = folds.excluding({l});
  out.beta = first_stage(panel, out.train_rows, config.first_stage, config.bb_min_t).beta;
  PreliminaryFit pre = preliminary_mu(panel, cross, model, config, folds, l);
  out.mu_tilde = pre.mu_tilde;
  out.train_alpha = std::move(pre.alpha);
  out.nested_fallback = pre.nested_fallback;
  out.min_shrink_weight = pre.min_shrink_weight;
  out.max_shrink_weight = pre.max_shrink_weight;
  out.nuisance = fit_nuisance(panel, cross, out.train_rows, out.train_alpha, model, out.mu_tilde, config.dictionary,
                              config.aen, seed.child("fold", static_cast<std::uint64_t>(l)), l);
  return out;
}

FoldArtifacts complete_fold(const PanelDataset& panel, const MomentModel& model, const EstConfig& config,
                            const FoldPartition& folds, FoldNuisance nuisance) {
  FoldArtifacts out;
  out.members = folds.members(nuisance.fold);
  const ShrinkageFit a = fold_alpha(panel, nuisance.beta, out.members, config, &out.alpha_raw);
  out.alpha = a.shrunk;
  out.shrink_weights = a.weights;
  const Index n = static_cast<Index>(out.members.size());
  out.a_hat.resize(n, model.dim_m());
  for (Index k = 0; k < n; ++k)
    out.a_hat.row(k) = nuisance.nuisance.predict(panel, out.members[static_cast<std::size_t>(k)], out.alpha(k)).transpose();
  out.psi = adjustment_terms(panel, out.members, nuisance.beta, out.alpha, out.a_hat);
  out.nuisance = std::move(nuisance);
  return out;
}

Eigen::MatrixXd adjustment_terms(const PanelDataset& panel, const IndexSet& members, const Eigen::VectorXd& beta,
                                 const Eigen::VectorXd& alpha, const Eigen::MatrixXd& a_hat) {
  const Index last = panel.t_len() - 1;
  Eigen::MatrixXd psi(a_hat.rows(), a_hat.cols());
  for (Index k = 0; k < a_hat.rows(); ++k) {
    const Index i = members[static_cast<std::size_t>(k)];
    const double r = panel.y(i, last) - panel.xb(i, last, beta) - alpha(k);
    psi.row(k) = a_hat.row(k) * r;
  }
  return psi;
}

Eigen::VectorXd debiased_moments(const Eigen::VectorXd& mu, const std::vector<FoldArtifacts>& folds,
                                 const CrossSection& cross, const MomentModel& model) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(model.dim_m());
  for (const auto& f : folds) {
    for (std::size_t k = 0; k < f.members.size(); ++k) {
      const Index i = f.members[k];
      const Index r = static_cast<Index>(k);
      s += model.m(cross.w.row(i).transpose(), cross.d(i), f.alpha(r), mu) + f.psi.row(r).transpose();
    }
  }
  return s / static_cast<double>(total_members(folds));
}

Eigen::MatrixXd jacobian(const std::vector<FoldArtifacts>& folds, const CrossSection& cross, const MomentModel& model,
                         const Eigen::VectorXd& mu) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(model.dim_m(), model.dim_mu());
  for (const auto& f : folds)
    for (std::size_t k = 0; k < f.members.size(); ++k) {
      const Index i = f.members[k];
      g += model.dm_dmu(cross.w.row(i).transpose(), cross.d(i), f.alpha(static_cast<Index>(k)), mu);
    }
  return g / static_cast<double>(total_members(folds));
}

Eigen::MatrixXd moment_outer_product(const std::vector<FoldArtifacts>& folds, const CrossSection& cross,
                                     const MomentModel& model, const Eigen::VectorXd& at_mu) {
  Eigen::MatrixXd o = Eigen::MatrixXd::Zero(model.dim_m(), model.dim_m());
  for (const auto& f : folds) {
    const Eigen::VectorXd& mu = at_mu.size() > 0 ? at_mu : f.nuisance.mu_tilde;
    for (std::size_t k = 0; k < f.members.size(); ++k) {
      const Index i = f.members[k];
      const Index r = static_cast<Index>(k);
      const Eigen::VectorXd v = model.m(cross.w.row(i).transpose(), cross.d(i), f.alpha(r), mu) + f.psi.row(r).transpose();
      o.noalias() += v * v.transpose();
    }
  }
  o /= static_cast<double>(total_members(folds));
  return 0.5 * (o + o.transpose());
}

WeightingResult invert_weighting(const Eigen::MatrixXd& omega) {
  WeightingResult out;
  Eigen::MatrixXd s = 0.5 * (omega + omega.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  const double max_ev = eig.eigenvalues().maxCoeff();
  const double min_ev = eig.eigenvalues().minCoeff();
  if (!(min_ev > 0.0) || max_ev / min_ev > 1e12) {
    out.ridge_used = true;
    double bump = 1e-10 * s.trace() / static_cast<double>(s.rows());
    if (!(bump > 0.0)) bump = 1e-10;
    s.diagonal().array() += bump;
    eig.compute(s);
  }
  const Eigen::VectorXd inv = eig.eigenvalues().cwiseMax(std::numeric_limits<double>::min()).cwiseInverse();
  out.upsilon = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  out.upsilon = 0.5 * (out.upsilon + out.upsilon.transpose());
  return out;
}

WeightingResult weighting_matrix(const std::vector<FoldArtifacts>& folds, const CrossSection& cross,
                                 const MomentModel& model) {
  return invert_weighting(moment_outer_product(folds, cross, model));
}

GmmSolution gmm_minimize(const MomentFn& moments, const JacobianFn& jac, const Eigen::MatrixXd& upsilon,
                         const Eigen::VectorXd& start, double tolerance, int max_iterations) {
  GmmSolution sol;
  sol.mu = start;
  Eigen::VectorXd m = moments(sol.mu);
  sol.objective = quad(m, upsilon);
  if (!std::isfinite(sol.objective)) throw Error(ErrorKind::EstimationFailed, "GMM objective is not finite at the start");

  for (int it = 1; it <= max_iterations; ++it) {
    sol.iterations = it;
    const Eigen::MatrixXd g = jac(sol.mu);
    const Eigen::MatrixXd h = g.transpose() * upsilon * g;
    const Eigen::VectorXd grad = g.transpose() * upsilon * m;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(h);
    if (lu.rank() < h.cols()) throw Error(ErrorKind::SingularJacobian, "GMM Jacobian is rank deficient");
    const Eigen::VectorXd gn = -lu.solve(grad);
    const double gn_norm = gn.norm();
    if (!std::isfinite(gn_norm)) throw Error(ErrorKind::SingularJacobian, "Gauss-Newton step is not finite");
    if (gn_norm < tolerance) {
      sol.converged = true;
      return sol;
    }

    auto line_search = [&](const Eigen::VectorXd& dir, Eigen::VectorXd& step) {
      double t = 1.0;
      for (int halving = 0; halving <= 30; ++halving, t *= 0.5) {
        const Eigen::VectorXd cand = sol.mu + t * dir;
        const Eigen::VectorXd mc = moments(cand);
        const double q = quad(mc, upsilon);
        if (std::isfinite(q) && q <= sol.objective) {
          step = t * dir;
          sol.mu = cand;
          m = mc;
          sol.objective = q;
          return true;
        }
      }
      return false;
    };

    Eigen::VectorXd step;
    if (!line_search(gn, step)) {
      // steepest descent, scaled to the Gauss-Newton step length
      const double gnorm = grad.norm();
      bool moved = false;
      if (gnorm > 0.0) {
        sol.used_steepest_descent = true;
        moved = line_search(-grad * (gn_norm / gnorm), step);
      }
      if (!moved) {
        // numerically stationary: nothing lowers the objective
        sol.converged = gn_norm < std::max(tolerance, 1e-8 * (1.0 + sol.mu.norm()));
        return sol;
      }
    }
    if (step.norm() < tolerance) {
      sol.converged = true;
      return sol;
    }
  }
  return sol;
}

Eigen::MatrixXd sandwich_variance(const Eigen::MatrixXd& g, const Eigen::MatrixXd& upsilon, const Eigen::MatrixXd& omega) {
  const Eigen::MatrixXd a = g.transpose() * upsilon * g;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (lu.rank() < a.cols()) throw Error(ErrorKind::RankDeficientJacobian, "G'UG is singular");
  const Eigen::MatrixXd ainv = lu.inverse();
  const Eigen::MatrixXd b = g.transpose() * upsilon * omega * upsilon * g;
  Eigen::MatrixXd v = ainv * b * ainv.transpose();
  return 0.5 * (v + v.transpose());
}

SplitResult estimate_split(const PanelDataset& panel, const CrossSection& cross, const MomentModel& model,
                           const EstConfig& config, const FoldPartition& folds, const SeedConfig& seed) {
  SplitResult out;
  out.folds.reserve(static_cast<std::size_t>(folds.folds()));
  Eigen::VectorXd start = Eigen::VectorXd::Zero(model.dim_mu());
  for (int l = 0; l < folds.folds(); ++l) {
    FoldNuisance nuis = fit_fold_nuisance(panel, cross, model, config, folds, l, seed);
    start += nuis.mu_tilde;
    out.folds.push_back(complete_fold(panel, model, config, folds, std::move(nuis)));
  }
  start /= static_cast<double>(folds.folds());

  const auto moments = [&](const Eigen::VectorXd& mu) { return debiased_moments(mu, out.folds, cross, model); };
  const auto jac = [&](const Eigen::VectorXd& mu) { return jacobian(out.folds, cross, model, mu); };

  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(model.dim_m(), model.dim_m());
  out.step1 = gmm_minimize(moments, jac, eye, start, config.gmm_tolerance, config.gmm_max_iterations);

  const WeightingResult w = weighting_matrix(out.folds, cross, model);
  out.upsilon_hat = w.upsilon;
  out.ridge_used = w.ridge_used;
  out.step1_objective_under_upsilon = quad(moments(out.step1.mu), out.upsilon_hat);
  out.step2 = gmm_minimize(moments, jac, out.upsilon_hat, out.step1.mu, config.gmm_tolerance, config.gmm_max_iterations);

  out.mu_hat = out.step2.mu;
  out.g_hat = jacobian(out.folds, cross, model, out.mu_hat);
  out.omega_hat = moment_outer_product(out.folds, cross, model, out.mu_hat);
  out.vcov = sandwich_variance(out.g_hat, out.upsilon_hat, out.omega_hat);
  if (!out.mu_hat.allFinite() || !out.vcov.allFinite())
    throw Error(ErrorKind::EstimationFailed, "split produced non-finite estimates");
  return out;
}

EstimateResult cross_fit_estimate(const PanelDataset& panel, const CrossSection& cross, const MomentModel& model,
                                  const EstConfig& config) {
  config.validate();
  panel.validate();
  cross.validate();
  check_paired(panel, cross);
  if (model.requires_outcome() && !cross.outcome)
    throw Error(ErrorKind::InvalidArgument, std::string(model.name()) + " model needs an outcome column");
  if (static_cast<Index>(config.folds) > panel.n())
    throw Error(ErrorKind::InvalidFoldCount, "more folds than individuals");

  const std::size_t splits = static_cast<std::size_t>(config.splits);
  std::vector<std::optional<SplitResult>> results(splits);
  std::vector<std::string> failures(splits);
  const SeedConfig master(config.seed);

  parallel_for(splits, config.threads, [&](std::size_t s) {
    const SeedConfig split_seed = master.child("split", s);
    try {
      const FoldPartition folds = make_folds(panel.n(), config.folds, split_seed.child("folds"));
      results[s] = estimate_split(panel, cross, model, config, folds, split_seed.child("nuisance"));
    } catch (const Error& e) {
      if (e.is_data_error()) throw;
      failures[s] = e.what();
    }
  });

  EstimateResult out;
  out.n = panel.n();
  auto& diag = out.diagnostics;
  diag.min_shrink_weight = std::numeric_limits<double>::infinity();
  diag.max_shrink_weight = 0.0;
  Index ok = 0;
  for (std::size_t s = 0; s < splits; ++s) {
    if (!results[s]) {
      ++diag.failed_splits;
      continue;
    }
    const SplitResult& r = *results[s];
    if (ok == 0) {
      out.mu_hat = Eigen::VectorXd::Zero(r.mu_hat.size());
      out.vcov = Eigen::MatrixXd::Zero(r.vcov.rows(), r.vcov.cols());
      out.g_hat = Eigen::MatrixXd::Zero(r.g_hat.rows(), r.g_hat.cols());
      out.upsilon_hat = Eigen::MatrixXd::Zero(r.upsilon_hat.rows(), r.upsilon_hat.cols());
      out.omega_hat = Eigen::MatrixXd::Zero(r.omega_hat.rows(), r.omega_hat.cols());
    }
    ++ok;
    out.mu_hat += r.mu_hat;
    out.vcov += r.vcov;
    out.g_hat += r.g_hat;
    out.upsilon_hat += r.upsilon_hat;
    out.omega_hat += r.omega_hat;
    out.per_split_mu.push_back(r.mu_hat);
    diag.objective += r.step2.objective;
    diag.iterations += r.step1.iterations + r.step2.iterations;
    if (!r.step1.converged || !r.step2.converged) add_flag(diag.flags, "gmm_no_convergence");
    if (r.step1.used_steepest_descent || r.step2.used_steepest_descent) add_flag(diag.flags, "gmm_steepest_descent");
    if (r.ridge_used) add_flag(diag.flags, "weighting_ridge");
    for (const auto& f : r.folds) {
      if (f.nuisance.nested_fallback) add_flag(diag.flags, "nested_fallback_two_folds");
      diag.max_kkt_ratio = std::max(diag.max_kkt_ratio, f.nuisance.nuisance.max_kkt_ratio());
      for (const auto& c : f.nuisance.nuisance.coords)
        if (!c.known && !c.monotone) diag.solver_monotone = false;
      if (config.shrinkage != Shrinkage::None) {
        diag.min_shrink_weight = std::min({diag.min_shrink_weight, f.shrink_weights.minCoeff(), f.nuisance.min_shrink_weight});
        diag.max_shrink_weight = std::max({diag.max_shrink_weight, f.shrink_weights.maxCoeff(), f.nuisance.max_shrink_weight});
      }
    }
  }
  if (config.shrinkage == Shrinkage::None || ok == 0) diag.min_shrink_weight = 0.0;
  if (!diag.solver_monotone) add_flag(diag.flags, "solver_non_monotone");
  if (diag.failed_splits > 0) add_flag(diag.flags, "split_failures");

  if (2 * diag.failed_splits > config.splits || ok == 0) {
    std::string first;
    for (const auto& f : failures)
      if (!f.empty()) {
        first = f;
        break;
      }
    throw Error(ErrorKind::EstimationFailed, std::to_string(diag.failed_splits) + " of " + std::to_string(config.splits) +
                                                 " splits failed (first: " + first + ")");
  }
  const double k = static_cast<double>(ok);
  out.mu_hat /= k;
  out.vcov /= k;
  out.g_hat /= k;
  out.upsilon_hat /= k;
  out.omega_hat /= k;
  diag.objective /= k;
  out.se = (out.vcov.diagonal().cwiseMax(0.0) / static_cast<double>(out.n)).cwiseSqrt();
  return out;
}

}  // namespace orthofe
