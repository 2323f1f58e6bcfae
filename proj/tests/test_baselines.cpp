#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "orthofe/baselines.hpp"
#include "orthofe/error.hpp"
#include "orthofe/montecarlo.hpp"
#include "support.hpp"

using namespace orthofe;

namespace {

struct Draw {
  Eigen::VectorXd a, w, u2;
};

Draw draw(Index n, std::uint64_t seed, double noise = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.01, 0.2);
  Draw d{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Index i = 0; i < n; ++i) {
    const double alpha = z(rng);
    d.u2(i) = u(rng);
    d.a(i) = alpha + std::sqrt(d.u2(i)) * z(rng);
    d.w(i) = 0.2 + alpha + noise * z(rng);
  }
  return d;
}

double moment_var(const Eigen::VectorXd& a) { return (a.array() - a.mean()).square().mean(); }

}  // namespace

TEST_CASE("plugin estimate on an exact line") {
  Eigen::VectorXd a(5);
  a << -1, 0.5, 2, 3, -0.25;
  const auto r = plugin_estimate(a, (1.0 + 2.0 * a.array()).matrix(), "naive");
  CHECK(r.mu_hat(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.mu_hat(1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.se.cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(plugin_estimate(Eigen::VectorXd::Ones(5), a, "naive"), Error);
}

TEST_CASE("plugin slope on pure noise is within four robust standard errors of zero") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  Eigen::VectorXd a(500), w(500);
  for (Index i = 0; i < 500; ++i) a(i) = z(rng), w(i) = z(rng) * (1.0 + 0.5 * std::abs(a(i)));
  a.array() -= a.mean();
  const auto r = plugin_estimate(a, w, "naive");
  CHECK(std::abs(r.mu_hat(1)) < 4.0 * r.se(1));

  // HC0 against a direct sandwich
  Eigen::MatrixXd x(500, 2);
  x.col(0).setOnes();
  x.col(1) = a;
  const Eigen::Matrix2d inv = (x.transpose() * x).inverse();
  const Eigen::VectorXd e = w - x * r.mu_hat;
  Eigen::Matrix2d meat = Eigen::Matrix2d::Zero();
  for (Index i = 0; i < 500; ++i) meat += e(i) * e(i) * x.row(i).transpose() * x.row(i);
  const Eigen::Matrix2d v = inv * meat * inv;
  CHECK(r.se(1) == doctest::Approx(std::sqrt(v(1, 1))).epsilon(1e-10));
  CHECK(r.ci_upper(1) - r.mu_hat(1) == doctest::Approx(1.959964 * r.se(1)).epsilon(1e-6));
}

TEST_CASE("cgk point estimate") {
  const auto d = draw(300, 3);
  const auto none = cgk_point(d.a, d.w, Eigen::VectorXd::Zero(300));
  const auto ols = plugin_estimate(d.a, d.w, "naive");
  CHECK(std::abs(none(0) - ols.mu_hat(0)) < 1e-12);
  CHECK(std::abs(none(1) - ols.mu_hat(1)) < 1e-12);

  // slope = plugin slope * Var / (Var - mean u2)
  const auto c = cgk_point(d.a, d.w, d.u2);
  const double v = moment_var(d.a);
  CHECK(std::abs(c(1) - ols.mu_hat(1) * v / (v - d.u2.mean())) < 1e-12);
  CHECK(std::abs(c(0) - (d.w.mean() - c(1) * d.a.mean())) < 1e-12);

  // hand example: Var = 1, mean u2 = 0.5, Cov = 0.5
  const Eigen::Vector2d a(-1, 1), w(-0.5, 0.5), u2(0.5, 0.5);
  CHECK(cgk_point(a, w, u2)(1) == doctest::Approx(1.0));

  bool floored = false;
  const Eigen::Vector2d big(5, 5);
  const auto f = cgk_point(a, w, big, &floored);
  CHECK(floored);
  CHECK(f(1) == doctest::Approx(0.5 / 0.1));
}

TEST_CASE("cgk bootstrap") {
  const auto d = draw(200, 4);
  CgkConfig cfg;
  cfg.draws = 300;
  const auto a = cgk_estimate(d.a, d.w, d.u2, SeedConfig(9), cfg);
  const auto b = cgk_estimate(d.a, d.w, d.u2, SeedConfig(9), cfg);
  CHECK(a.ci_lower == b.ci_lower);
  CHECK(a.ci_upper == b.ci_upper);
  CHECK(a.se == b.se);
  auto threaded = cfg;
  threaded.threads = 3;
  const auto t = cgk_estimate(d.a, d.w, d.u2, SeedConfig(9), threaded);
  CHECK(t.ci_lower == a.ci_lower);
  CHECK(t.ci_upper == a.ci_upper);
  CHECK(a.bootstrap_draws == 300);
  CHECK(a.ci_lower(1) < a.mu_hat(1));
  CHECK(a.ci_upper(1) > a.mu_hat(1));

  auto narrow = cfg;
  narrow.level = 0.8;
  const auto n = cgk_estimate(d.a, d.w, d.u2, SeedConfig(9), narrow);
  for (Index j = 0; j < 2; ++j) {
    CHECK(n.ci_lower(j) >= a.ci_lower(j));
    CHECK(n.ci_upper(j) <= a.ci_upper(j));
  }
  CHECK(cgk_estimate(d.a, d.w, d.u2, SeedConfig(10), cfg).ci_lower != a.ci_lower);
}

TEST_CASE("type-7 quantile") {
  CHECK(sample_quantile({4, 1, 3, 2}, 0.25) == doctest::Approx(1.75));
  CHECK(sample_quantile({4, 1, 3, 2}, 0.0) == 1.0);
  CHECK(sample_quantile({4, 1, 3, 2}, 1.0) == 4.0);
  CHECK(sample_quantile({7}, 0.3) == 7.0);
}

TEST_CASE("baseline inputs use every period") {
  DgpConfig cfg;
  cfg.n = 200;
  cfg.beta0 = 0.3;
  cfg.seed = 5;
  const auto s = simulate_dgp(cfg);
  const auto in = baseline_inputs(s.panel, FirstStageMethod::BlundellBond, 4);
  IndexSet all(200);
  std::iota(all.begin(), all.end(), Index{0});
  const double b = blundell_bond(s.panel, all, 4).beta(0);
  CHECK(in.beta(0) == b);
  for (Index i = 0; i < 200; i += 17) {
    double avg = 0.0;
    for (Index t = 0; t < cfg.t_len; ++t) avg += s.panel.y(i, t) - b * s.panel.x[0](i, t);
    avg /= double(cfg.t_len);
    CHECK(in.alpha(i) == doctest::Approx(avg).epsilon(1e-12));
    double ss = 0.0;
    for (Index t = 0; t < cfg.t_len; ++t) {
      const double r = s.panel.y(i, t) - b * s.panel.x[0](i, t) - avg;
      ss += r * r;
    }
    CHECK(in.u2.u2(i) == doctest::Approx(ss / double(cfg.t_len * cfg.t_len)).epsilon(1e-12));
  }
}

TEST_CASE("run baseline dispatches every method") {
  DgpConfig cfg;
  cfg.n = 150;
  cfg.seed = 6;
  const auto s = simulate_dgp(cfg);
  const auto in = baseline_inputs(s.panel, FirstStageMethod::WithinOls, 4);
  CgkConfig cgk;
  cgk.draws = 50;
  for (const std::string m : {"naive", "xie-eb", "xie-sure", "cgk"}) {
    CHECK(is_baseline_method(m));
    const auto r = run_baseline(m, in, s.cross, SeedConfig(1), cgk);
    CHECK(r.method == m);
    CHECK(r.mu_hat.allFinite());
    CHECK((r.se.array() > 0.0).all());
  }
  // shrinking toward the mean steepens the slope
  CHECK(std::abs(run_baseline("xie-eb", in, s.cross, SeedConfig(1)).mu_hat(1)) >=
        std::abs(run_baseline("naive", in, s.cross, SeedConfig(1)).mu_hat(1)));
  CHECK_FALSE(is_baseline_method("orth-mean"));
  CHECK_THROWS_AS(run_baseline("probit", in, s.cross, SeedConfig(1)), Error);
}
