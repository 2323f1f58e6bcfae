#include "orthofe/moment_models.hpp"

#include <cmath>
#include <string>

#include "orthofe/error.hpp"

namespace orthofe {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logistic_variance(double x) {
  const double e = std::exp(-std::abs(x));
  const double denom = 1.0 + e;
  return e / (denom * denom);
}

Eigen::Vector2d linear_m(double w, double alpha, const Eigen::Vector2d& mu) {
  const double v = w - mu(0) - mu(1) * alpha;
  return {v, alpha * v};
}

Eigen::Vector2d linear_dm_dalpha(double w, double alpha, const Eigen::Vector2d& mu) {
  return {-mu(1), w - mu(0) - 2.0 * mu(1) * alpha};
}

Eigen::Matrix2d linear_dm_dmu(double /*w*/, double alpha, const Eigen::Vector2d& /*mu*/) {
  Eigen::Matrix2d g;
  g << -1.0, -alpha, -alpha, -alpha * alpha;
  return g;
}

Eigen::VectorXd LinearModel::m(const RowRef& w, double, double alpha, const Eigen::VectorXd& mu) const {
  return linear_m(w(0), alpha, mu.head<2>());
}

Eigen::VectorXd LinearModel::dm_dalpha(const RowRef& w, double, double alpha, const Eigen::VectorXd& mu) const {
  return linear_dm_dalpha(w(0), alpha, mu.head<2>());
}

Eigen::MatrixXd LinearModel::dm_dmu(const RowRef& w, double, double alpha, const Eigen::VectorXd& mu) const {
  return linear_dm_dmu(w(0), alpha, mu.head<2>());
}

std::vector<std::pair<Index, double>> LinearModel::known_a_coords(const Eigen::VectorXd& mu) const {
  return {{0, -mu(1)}};
}

namespace {

double logit_index(const RowRef& w, double alpha, const Eigen::VectorXd& mu) {
  return mu(0) * alpha + w.dot(mu.tail(w.size()));
}

Eigen::VectorXd regressor(const RowRef& w, double alpha) {
  Eigen::VectorXd z(1 + w.size());
  z(0) = alpha;
  z.tail(w.size()) = w;
  return z;
}

}  // namespace

Eigen::VectorXd logit_m(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) {
  const double r = d - logistic(logit_index(w, alpha, mu));
  return r * regressor(w, alpha);
}

Eigen::VectorXd logit_dm_dalpha(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) {
  const double x = logit_index(w, alpha, mu);
  const double lv = logistic_variance(x);
  Eigen::VectorXd out = -mu(0) * lv * regressor(w, alpha);
  out(0) += d - logistic(x);
  return out;
}

Eigen::MatrixXd logit_dm_dmu(const RowRef& w, double, double alpha, const Eigen::VectorXd& mu) {
  const double lv = logistic_variance(logit_index(w, alpha, mu));
  const Eigen::VectorXd z = regressor(w, alpha);
  const Index k = z.size();
  Eigen::MatrixXd h(k, k);
  for (Index r = 0; r < k; ++r)
    for (Index c = 0; c <= r; ++c) h(r, c) = h(c, r) = -lv * (z(r) * z(c));
  return h;
}

Eigen::VectorXd LogitModel::m(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const {
  return logit_m(w, d, alpha, mu);
}

Eigen::VectorXd LogitModel::dm_dalpha(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const {
  return logit_dm_dalpha(w, d, alpha, mu);
}

Eigen::MatrixXd LogitModel::dm_dmu(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const {
  return logit_dm_dmu(w, d, alpha, mu);
}

std::unique_ptr<MomentModel> make_model(std::string_view name, Index q) {
  if (name == "linear") {
    if (q < 1) throw Error(ErrorKind::InvalidArgument, "linear model needs one W column");
    return std::make_unique<LinearModel>();
  }
  if (name == "logit") return std::make_unique<LogitModel>(q);
  throw Error(ErrorKind::InvalidArgument, "unknown model '" + std::string(name) + "'");
}

}  // namespace orthofe
