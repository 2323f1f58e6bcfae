#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>

#include "orthofe/error.hpp"
#include "orthofe/montecarlo.hpp"
#include "orthofe/orthogonal_gmm.hpp"
#include "support.hpp"

using namespace orthofe;

namespace {

// m = w - mu, a one-moment test double
class MeanModel final : public MomentModel {
 public:
  std::string_view name() const override { return "mean"; }
  Index dim_m() const override { return 1; }
  Index dim_mu() const override { return 1; }
  Eigen::VectorXd m(const RowRef& w, double, double, const Eigen::VectorXd& mu) const override {
    return Eigen::VectorXd::Constant(1, w(0) - mu(0));
  }
  Eigen::VectorXd dm_dalpha(const RowRef&, double, double, const Eigen::VectorXd&) const override {
    return Eigen::VectorXd::Zero(1);
  }
  Eigen::MatrixXd dm_dmu(const RowRef&, double, double, const Eigen::VectorXd&) const override {
    return Eigen::MatrixXd::Constant(1, 1, -1.0);
  }
};

FoldArtifacts artifact(const IndexSet& members, const Eigen::VectorXd& alpha, const Eigen::MatrixXd& psi,
                       const Eigen::VectorXd& mu_tilde) {
  FoldArtifacts f;
  f.members = members;
  f.alpha = alpha;
  f.alpha_raw = alpha;
  f.psi = psi;
  f.a_hat = Eigen::MatrixXd::Zero(psi.rows(), psi.cols());
  f.nuisance.mu_tilde = mu_tilde;
  return f;
}

IndexSet range(Index lo, Index hi) {
  IndexSet s(static_cast<std::size_t>(hi - lo));
  std::iota(s.begin(), s.end(), lo);
  return s;
}

Eigen::Vector2d ols(const Eigen::VectorXd& a, const Eigen::VectorXd& w) {
  const double am = a.mean(), wm = w.mean();
  const double slope = ((a.array() - am) * (w.array() - wm)).sum() / (a.array() - am).square().sum();
  return {wm - slope * am, slope};
}

EstConfig quick_config() {
  EstConfig c;
  c.folds = 3;
  c.splits = 1;
  c.aen.lambda1_points = 15;
  c.aen.lambda2_multipliers = {0.0, 1.0};
  c.aen.cv_folds = 3;
  return c;
}

}  // namespace

TEST_CASE("gmm on exactly identified linear moments equals closed-form ols") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  const Index n = 300;
  Eigen::VectorXd a(n), w(n);
  for (Index i = 0; i < n; ++i) a(i) = z(rng), w(i) = 0.4 + 1.3 * a(i) + z(rng);
  const LinearModel model;
  const auto moments = [&](const Eigen::VectorXd& mu) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(2);
    for (Index i = 0; i < n; ++i) s += model.m(w.segment(i, 1), 0, a(i), mu);
    return Eigen::VectorXd(s / double(n));
  };
  const auto jac = [&](const Eigen::VectorXd& mu) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(2, 2);
    for (Index i = 0; i < n; ++i) g += model.dm_dmu(w.segment(i, 1), 0, a(i), mu);
    return Eigen::MatrixXd(g / double(n));
  };
  const auto sol = gmm_minimize(moments, jac, Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero());
  const auto ref = ols(a, w);
  CHECK(std::abs(sol.mu(0) - ref(0)) < 1e-8);
  CHECK(std::abs(sol.mu(1) - ref(1)) < 1e-8);
  CHECK(sol.converged);
  CHECK(moments(sol.mu).norm() < 1e-8);

  // noiseless data started at the truth
  Eigen::VectorXd exact = (1.0 + 2.0 * a.array()).matrix();
  const auto m2 = [&](const Eigen::VectorXd& mu) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(2);
    for (Index i = 0; i < n; ++i) s += model.m(exact.segment(i, 1), 0, a(i), mu);
    return Eigen::VectorXd(s / double(n));
  };
  const auto at_truth = gmm_minimize(m2, jac, Eigen::Matrix2d::Identity(), Eigen::Vector2d(1, 2));
  CHECK(at_truth.iterations <= 2);
  CHECK(at_truth.converged);
}

TEST_CASE("gmm reports a singular jacobian") {
  const auto m = [](const Eigen::VectorXd& mu) { return Eigen::VectorXd(Eigen::Vector2d(mu(0) + mu(1), 1.0)); };
  const auto j = [](const Eigen::VectorXd&) {
    Eigen::MatrixXd g(2, 2);
    g << 1, 1, 0, 0;
    return g;
  };
  try {
    gmm_minimize(m, j, Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero());
    FAIL("expected SingularJacobian");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SingularJacobian);
  }
}

TEST_CASE("logit gmm lands within three standard errors of the truth") {
  const Index n = 2000;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0, 1);
  const Eigen::Vector3d mu0(0.8, -0.5, 0.25);
  Eigen::MatrixXd w(n, 2);
  Eigen::VectorXd a(n), d(n);
  Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
  for (Index i = 0; i < n; ++i) {
    a(i) = z(rng);
    w(i, 0) = 1.0;
    w(i, 1) = z(rng);
    const double idx = w.row(i).dot(mu0.tail(2)) + a(i) * mu0(0);
    d(i) = u(rng) < logistic(idx) ? 1.0 : 0.0;
    const Eigen::Vector3d zz(a(i), w(i, 0), w(i, 1));
    info += logistic_variance(idx) * zz * zz.transpose();
  }
  info /= double(n);
  const LogitModel model(2);
  const auto moments = [&](const Eigen::VectorXd& mu) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(3);
    for (Index i = 0; i < n; ++i) s += model.m(w.row(i).transpose(), d(i), a(i), mu);
    return Eigen::VectorXd(s / double(n));
  };
  const auto jac = [&](const Eigen::VectorXd& mu) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(3, 3);
    for (Index i = 0; i < n; ++i) g += model.dm_dmu(w.row(i).transpose(), d(i), a(i), mu);
    return Eigen::MatrixXd(g / double(n));
  };
  const auto sol = gmm_minimize(moments, jac, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
  const Eigen::Matrix3d v = info.inverse() / double(n);
  for (Index j = 0; j < 3; ++j) CHECK(std::abs(sol.mu(j) - mu0(j)) < 3.0 * std::sqrt(v(j, j)));
  CHECK(moments(sol.mu).norm() < 1e-8);
}

TEST_CASE("sandwich variance identities") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd g(4, 2), b(4, 4), c(4, 4);
    for (Index i = 0; i < 4; ++i) {
      for (Index j = 0; j < 2; ++j) g(i, j) = z(rng);
      for (Index j = 0; j < 4; ++j) b(i, j) = z(rng), c(i, j) = z(rng);
    }
    const Eigen::MatrixXd omega = b * b.transpose() + 0.1 * Eigen::MatrixXd::Identity(4, 4);
    const Eigen::MatrixXd up = c * c.transpose() + 0.1 * Eigen::MatrixXd::Identity(4, 4);
    const Eigen::MatrixXd eff = sandwich_variance(g, omega.inverse(), omega);
    const Eigen::MatrixXd closed = (g.transpose() * omega.inverse() * g).inverse();
    CHECK((eff - closed).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, closed.cwiseAbs().maxCoeff()));
    const Eigen::MatrixXd v = sandwich_variance(g, up, omega);
    CHECK(v == v.transpose());
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(v).eigenvalues().minCoeff() >= -1e-12 * v.norm());
  }
  const auto s = sandwich_variance(Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::MatrixXd::Constant(1, 1, 3.0),
                                   Eigen::MatrixXd::Constant(1, 1, 5.0));
  CHECK(s(0, 0) == doctest::Approx(5.0 / 4.0));
  CHECK_THROWS_AS(sandwich_variance(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Identity(2, 2),
                                    Eigen::MatrixXd::Identity(2, 2)),
                  Error);
}

TEST_CASE("weighting matrix examples") {
  const MeanModel model;
  CrossSection cross = testsupport::cross_from(Eigen::Vector2d(1.0, -1.0));
  const std::vector<FoldArtifacts> folds{
      artifact({0, 1}, Eigen::Vector2d::Zero(), Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXd::Zero(1))};
  const auto w = weighting_matrix(folds, cross, model);
  CHECK(w.upsilon(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(w.ridge_used);

  // identical moment vectors: rank one, ridge path
  const LinearModel lin;
  CrossSection flat = testsupport::cross_from(Eigen::VectorXd::Constant(5, 2.0));
  const std::vector<FoldArtifacts> same{
      artifact(range(0, 5), Eigen::VectorXd::Constant(5, 1.0), Eigen::MatrixXd::Zero(5, 2), Eigen::Vector2d(0.5, 0.5))};
  const auto r = weighting_matrix(same, flat, lin);
  CHECK(r.ridge_used);
  CHECK(r.upsilon == r.upsilon.transpose());
  CHECK(r.upsilon.allFinite());
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(r.upsilon).eigenvalues().minCoeff() >= 0.0);
}

TEST_CASE("adjustment terms") {
  PanelDataset p;
  p.y.resize(2, 3);
  p.y << 0, 0, 5, 0, 0, 2;
  p.x.assign(1, Eigen::MatrixXd::Zero(2, 3));
  p.x[0](0, 2) = 1.0;
  p.ids = {1, 2};
  const Eigen::VectorXd beta = Eigen::VectorXd::Constant(1, 2.0);
  const Eigen::Vector2d alpha(1.0, 2.0);  // residuals: 5 - 2 - 1 = 2 and 2 - 0 - 2 = 0
  CHECK(adjustment_terms(p, {0, 1}, beta, alpha, Eigen::MatrixXd::Zero(2, 2)).cwiseAbs().maxCoeff() == 0.0);
  Eigen::MatrixXd a(2, 2);
  a << -1.5, 0.7, -1.5, 3.0;
  const auto psi = adjustment_terms(p, {0, 1}, beta, alpha, a);
  CHECK(psi(0, 0) == -3.0);
  CHECK(psi(0, 1) == doctest::Approx(1.4));
  CHECK(psi.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("debiased moments and jacobian") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  const Index n = 40;
  Eigen::VectorXd w(n), a(n);
  for (Index i = 0; i < n; ++i) a(i) = z(rng), w(i) = 1 + a(i) + z(rng);
  const auto cross = testsupport::cross_from(w);
  const LinearModel model;
  Eigen::MatrixXd psi(n, 2);
  for (Index i = 0; i < n; ++i) psi(i, 0) = z(rng), psi(i, 1) = z(rng);
  std::vector<FoldArtifacts> folds{artifact(range(0, 25), a.head(25), psi.topRows(25), Eigen::Vector2d(0, 1)),
                                   artifact(range(25, n), a.tail(15), psi.bottomRows(15), Eigen::Vector2d(0, 1))};

  // psi = 0 gives the plug-in moments
  auto zero = folds;
  for (auto& f : zero) f.psi.setZero();
  const Eigen::Vector2d mu(0.3, 0.8);
  Eigen::Vector2d plug = Eigen::Vector2d::Zero();
  for (Index i = 0; i < n; ++i) plug += linear_m(w(i), a(i), mu);
  CHECK((debiased_moments(mu, zero, cross, model) - plug / double(n)).norm() < 1e-14);

  // affine in mu
  const Eigen::Vector2d ma(-1, 2), mb(3, 0.5);
  const auto mid = debiased_moments(0.5 * (ma + mb), folds, cross, model);
  const Eigen::VectorXd avg = 0.5 * (debiased_moments(ma, folds, cross, model) + debiased_moments(mb, folds, cross, model));
  CHECK((mid - avg).cwiseAbs().maxCoeff() < 1e-12);

  // closed-form jacobian and its finite-difference check
  const auto g = jacobian(folds, cross, model, mu);
  Eigen::Matrix2d expect;
  expect << -1, -a.mean(), -a.mean(), -a.squaredNorm() / double(n);
  CHECK((g - expect).cwiseAbs().maxCoeff() < 1e-12);
  for (Index c = 0; c < 2; ++c) {
    Eigen::VectorXd up = mu, dn = mu;
    up(c) += 1e-6;
    dn(c) -= 1e-6;
    const Eigen::VectorXd fd = (debiased_moments(up, folds, cross, model) - debiased_moments(dn, folds, cross, model)) / 2e-6;
    for (Index r = 0; r < 2; ++r) CHECK(std::abs(fd(r) - g(r, c)) < 1e-6 * std::max(1.0, std::abs(g(r, c))));
  }

  // exactly identified: the solution zeroes the debiased moments
  const auto sol = gmm_minimize([&](const Eigen::VectorXd& m) { return debiased_moments(m, folds, cross, model); },
                                [&](const Eigen::VectorXd& m) { return jacobian(folds, cross, model, m); },
                                Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero());
  CHECK(debiased_moments(sol.mu, folds, cross, model).norm() < 1e-8);
}

TEST_CASE("logit jacobian at zero") {
  const Index n = 30;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  CrossSection cross;
  cross.w.resize(n, 2);
  Eigen::VectorXd a(n), d(n);
  Eigen::Matrix3d outer = Eigen::Matrix3d::Zero();
  for (Index i = 0; i < n; ++i) {
    cross.w(i, 0) = z(rng);
    cross.w(i, 1) = z(rng);
    a(i) = z(rng);
    d(i) = i % 2;
    const Eigen::Vector3d v(a(i), cross.w(i, 0), cross.w(i, 1));
    outer += v * v.transpose();
  }
  cross.outcome = d;
  cross.ids.resize(n);
  const LogitModel model(2);
  std::vector<FoldArtifacts> folds{artifact(range(0, n), a, Eigen::MatrixXd::Zero(n, 3), Eigen::Vector3d::Zero())};
  const auto g = jacobian(folds, cross, model, Eigen::Vector3d::Zero());
  CHECK((g + 0.25 * outer / double(n)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("debiasing preserves identification on a symmetric noiseless construction") {
  // each (alpha, W, a) appears twice with opposite final-period residuals,
  // so the adjustment terms cancel exactly
  const Index half = 50;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z;
  Eigen::VectorXd a(2 * half), w(2 * half);
  Eigen::MatrixXd psi(2 * half, 2);
  for (Index i = 0; i < half; ++i) {
    a(i) = a(i + half) = z(rng);
    w(i) = w(i + half) = -0.5 + 1.5 * a(i) + 0.3 * z(rng);
    const double r = z(rng);
    const Eigen::Vector2d ai(-1.5, z(rng));
    psi.row(i) = ai.transpose() * r;
    psi.row(i + half) = -ai.transpose() * r;
  }
  const auto cross = testsupport::cross_from(w);
  const LinearModel model;
  const std::vector<FoldArtifacts> with{artifact(range(0, 2 * half), a, psi, Eigen::Vector2d(0, 1))};
  auto without = with;
  without[0].psi.setZero();
  const auto solve = [&](const std::vector<FoldArtifacts>& f) {
    return gmm_minimize([&](const Eigen::VectorXd& m) { return debiased_moments(m, f, cross, model); },
                        [&](const Eigen::VectorXd& m) { return jacobian(f, cross, model, m); },
                        Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero())
        .mu;
  };
  CHECK((solve(with) - solve(without)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("orthogonality on a linear population with an analytic a") {
  // static panel, x_t = N(0,1) + 0.5 alpha, W = mu1 + mu2 alpha + g (xbar - 0.5 alpha) + e
  const Index draws = 100000, t_len = 6;
  const double beta = 0.7, g = 0.8;
  const Eigen::Vector2d mu0(0.2, 1.0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z;
  Eigen::Vector2d s_raw = Eigen::Vector2d::Zero(), q_raw = Eigen::Vector2d::Zero();
  Eigen::Vector2d s_orth = Eigen::Vector2d::Zero(), q_orth = Eigen::Vector2d::Zero();
  for (Index i = 0; i < draws; ++i) {
    const double alpha = std::sqrt(0.5) * z(rng);
    double xbar = 0.0, x_last = 0.0, y_last = 0.0;
    for (Index t = 0; t < t_len; ++t) {
      const double x = z(rng) + 0.5 * alpha;
      const double y = beta * x + alpha + std::sqrt(0.5) * z(rng);
      if (t < t_len - 1) xbar += x / double(t_len - 1);
      x_last = x;
      y_last = y;
    }
    const double w = mu0(0) + mu0(1) * alpha + g * (xbar - 0.5 * alpha) + z(rng);
    const Eigen::Vector2d a(-mu0(1), g * (xbar - 0.5 * alpha) - mu0(1) * alpha);
    const Eigen::Vector2d da(0.0, -0.5 * g - mu0(1));
    const Eigen::Vector2d dm = linear_dm_dalpha(w, alpha, mu0);
    const double u_last = y_last - beta * x_last - alpha;
    const Eigen::Vector2d centered = dm - a;
    const Eigen::Vector2d orth = dm + da * u_last - a;  // derivative of m + a (Y_T - X_T b - alpha) in alpha
    s_raw += centered;
    q_raw += centered.cwiseProduct(centered);
    s_orth += orth;
    q_orth += orth.cwiseProduct(orth);
  }
  for (Index j = 0; j < 2; ++j) {
    const double m1 = s_raw(j) / double(draws);
    const double se1 = std::sqrt(std::max(0.0, q_raw(j) / double(draws) - m1 * m1) / double(draws));
    CHECK(std::abs(m1) <= 4 * se1 + 1e-15);
    const double m2 = s_orth(j) / double(draws);
    const double se2 = std::sqrt(std::max(0.0, q_orth(j) / double(draws) - m2 * m2) / double(draws));
    CHECK(std::abs(m2) <= 4 * se2 + 1e-15);
  }
}

TEST_CASE("adjustment terms have mean zero under sequential exogeneity") {
  DgpConfig cfg;
  cfg.n = 100000;
  cfg.t_len = 12;
  cfg.beta0 = 0.5;
  cfg.c = 2.0;
  cfg.seed = 8;
  const auto s = simulate_dgp(cfg);
  const auto& truth = s.truth();
  const Index last = cfg.t_len - 1;
  double sum = 0.0, sq = 0.0;
  for (Index i = 0; i < cfg.n; ++i) {
    const double alpha = truth.alpha(i);
    const double a = std::tanh(s.panel.x[0](i, last)) + std::sin(alpha) + 0.3 * std::cos(s.cross.w(i, 0));
    const double r = s.panel.y(i, last) - cfg.beta0 * s.panel.x[0](i, last) - alpha;
    sum += a * r;
    sq += a * r * a * r;
  }
  const double m = sum / double(cfg.n);
  const double se = std::sqrt((sq / double(cfg.n) - m * m) / double(cfg.n));
  CHECK(std::abs(m) < 4 * se);
}

TEST_CASE("preliminary mu") {
  SUBCASE("noiseless W = 1 + 2 alpha") {
    Eigen::VectorXd alpha(30);
    for (Index i = 0; i < 30; ++i) alpha(i) = std::sin(double(i));
    const auto p = testsupport::static_panel(30, 5, 0.5, alpha, 0.0, 1);
    const auto cross = testsupport::cross_from((1.0 + 2.0 * alpha.array()).matrix());
    const auto folds = make_folds(30, 3, SeedConfig(2));
    const auto pre = preliminary_mu(p, cross, LinearModel(), quick_config(), folds, 0);
    CHECK(std::abs(pre.mu_tilde(0) - 1.0) < 1e-10);
    CHECK(std::abs(pre.mu_tilde(1) - 2.0) < 1e-10);
    CHECK_FALSE(pre.nested_fallback);
  }
  SUBCASE("matches an independent nested assembly") {
    DgpConfig cfg;
    cfg.n = 80;
    cfg.seed = 9;
    const auto s = simulate_dgp(cfg);
    auto est = quick_config();
    est.folds = 4;
    const auto folds = make_folds(cfg.n, 4, SeedConfig(3));
    const int l = 2;
    const auto pre = preliminary_mu(s.panel, s.cross, LinearModel(), est, folds, l);
    Eigen::VectorXd a(cfg.n), w(cfg.n);
    Index k = 0;
    for (int lp = 0; lp < 4; ++lp) {
      if (lp == l) continue;
      const auto beta = within_fe_ols(s.panel, folds.excluding({l, lp})).beta;
      for (Index i : folds.members(lp)) {
        double avg = 0.0;
        for (Index t = 0; t < cfg.t_len - 1; ++t) avg += s.panel.y(i, t) - beta(0) * s.panel.x[0](i, t);
        a(k) = avg / double(cfg.t_len - 1);
        w(k) = s.cross.w(i, 0);
        ++k;
      }
    }
    const auto ref = ols(a.head(k), w.head(k));
    CHECK(std::abs(pre.mu_tilde(0) - ref(0)) < 1e-10);
    CHECK(std::abs(pre.mu_tilde(1) - ref(1)) < 1e-10);
  }
  SUBCASE("two folds fall back to the fold-level first stage") {
    DgpConfig cfg;
    cfg.n = 40;
    cfg.seed = 10;
    const auto s = simulate_dgp(cfg);
    auto est = quick_config();
    est.folds = 2;
    const auto pre = preliminary_mu(s.panel, s.cross, LinearModel(), est, make_folds(40, 2, SeedConfig(1)), 0);
    CHECK(pre.nested_fallback);
  }
  SUBCASE("simulated draw lands near the truth") {
    DgpConfig cfg;
    cfg.n = 100;
    cfg.seed = 11;
    const auto s = simulate_dgp(cfg);
    auto est = simulation_est_config(cfg);
    const auto pre = preliminary_mu(s.panel, s.cross, LinearModel(), est, make_folds(100, 5, SeedConfig(4)), 1);
    CHECK(std::abs(pre.mu_tilde(1) - 1.0) < 0.3);
  }
}

TEST_CASE("fold nuisance never reads the held-out fold") {
  DgpConfig cfg;
  cfg.n = 90;
  cfg.c = 2.0;
  cfg.seed = 12;
  const auto s = simulate_dgp(cfg);
  const auto folds = make_folds(cfg.n, 3, SeedConfig(5));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto method : {FirstStageMethod::WithinOls, FirstStageMethod::BlundellBond}) {
    for (auto shrink : {Shrinkage::None, Shrinkage::SURE}) {
      auto est = quick_config();
      est.first_stage = method;
      est.shrinkage = shrink;
      for (int l = 0; l < 3; ++l) {
        auto panel = s.panel;
        auto cross = s.cross;
        for (Index i : folds.members(l)) {
          panel.y.row(i).setConstant(nan);
          panel.x[0].row(i).setConstant(nan);
          cross.w.row(i).setConstant(nan);
        }
        const auto clean = fit_fold_nuisance(s.panel, s.cross, LinearModel(), est, folds, l, SeedConfig(6));
        const auto dirty = fit_fold_nuisance(panel, cross, LinearModel(), est, folds, l, SeedConfig(6));
        CHECK(dirty.beta.allFinite());
        CHECK(dirty.mu_tilde.allFinite());
        CHECK(dirty.train_alpha.allFinite());
        CHECK(dirty.nuisance.standardizer.mean.allFinite());
        CHECK(dirty.nuisance.standardizer.scale.allFinite());
        for (const auto& c : dirty.nuisance.coords) {
          CHECK(std::isfinite(c.constant));
          CHECK(std::isfinite(c.intercept));
          CHECK(c.coef.allFinite());
        }
        CHECK(dirty.beta == clean.beta);
        CHECK(dirty.mu_tilde == clean.mu_tilde);
        CHECK(dirty.nuisance.coords[1].coef == clean.nuisance.coords[1].coef);
      }
    }
  }
}

TEST_CASE("cross-fit estimate on noiseless data recovers the truth") {
  Eigen::VectorXd alpha(60);
  for (Index i = 0; i < 60; ++i) alpha(i) = std::cos(1.7 * double(i));
  const auto p = testsupport::static_panel(60, 6, 1.1, alpha, 0.0, 13);
  const auto cross = testsupport::cross_from((0.5 + 1.5 * alpha.array()).matrix());
  auto est = quick_config();
  est.folds = 2;
  est.splits = 1;
  const auto r = cross_fit_estimate(p, cross, LinearModel(), est);
  CHECK(std::abs(r.mu_hat(0) - 0.5) < 1e-6);
  CHECK(std::abs(r.mu_hat(1) - 1.5) < 1e-6);
  CHECK(std::find(r.diagnostics.flags.begin(), r.diagnostics.flags.end(), "nested_fallback_two_folds") !=
        r.diagnostics.flags.end());
}

TEST_CASE("cross-fit estimate on simulated data") {
  DgpConfig cfg;
  cfg.n = 100;
  cfg.c = 3.0;
  cfg.seed = 14;
  const auto s = simulate_dgp(cfg);
  auto est = simulation_est_config(cfg);
  est.splits = 2;
  est.shrinkage = Shrinkage::EB;

  const auto folds = make_folds(cfg.n, est.folds, SeedConfig(7));
  const auto split = estimate_split(s.panel, s.cross, LinearModel(), est, folds, SeedConfig(8));
  CHECK(split.step2.objective <= split.step1_objective_under_upsilon + 1e-14);
  for (const auto& f : split.folds) {
    CHECK((f.shrink_weights.array() >= 0.0).all());
    CHECK((f.shrink_weights.array() <= 1.0).all());
    CHECK(f.nuisance.nuisance.max_kkt_ratio() < 1e-6);
  }

  const auto r = cross_fit_estimate(s.panel, s.cross, LinearModel(), est);
  CHECK(r.vcov == r.vcov.transpose());
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(r.vcov).eigenvalues().minCoeff() >= 0.0);
  CHECK((r.se.array() > 0.0).all());
  CHECK(r.per_split_mu.size() == 2);
  CHECK(((r.per_split_mu[0] + r.per_split_mu[1]) / 2.0 - r.mu_hat).norm() < 1e-14);
  CHECK(r.diagnostics.max_kkt_ratio < 1e-6);

  auto threaded = est;
  threaded.threads = 2;
  const auto r2 = cross_fit_estimate(s.panel, s.cross, LinearModel(), threaded);
  CHECK(std::memcmp(r.mu_hat.data(), r2.mu_hat.data(), sizeof(double) * 2) == 0);
  CHECK(r.vcov == r2.vcov);
}

TEST_CASE("estimation config validation") {
  EstConfig c;
  c.folds = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = EstConfig{};
  c.splits = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}
