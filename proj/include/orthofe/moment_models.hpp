#pragma once

#include <memory>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace orthofe {

using Index = Eigen::Index;
using RowRef = Eigen::Ref<const Eigen::VectorXd>;

/// A cross-sectional moment system m(W_i, alpha_i, mu) with analytic
/// derivatives. `d` is the optional binary outcome; models that do not use
/// it ignore the value.
class MomentModel {
 public:
  virtual ~MomentModel() = default;

  virtual std::string_view name() const = 0;
  virtual Index dim_m() const = 0;
  virtual Index dim_mu() const = 0;
  virtual bool requires_outcome() const { return false; }

  virtual Eigen::VectorXd m(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const = 0;
  virtual Eigen::VectorXd dm_dalpha(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const = 0;
  virtual Eigen::MatrixXd dm_dmu(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const = 0;

  /// Moment coordinates whose a-function is a known constant at mu; those
  /// coordinates need no nuisance regression.
  virtual std::vector<std::pair<Index, double>> known_a_coords(const Eigen::VectorXd& /*mu*/) const { return {}; }
};

/// W_i = mu1 + mu2 alpha_i + v_i, with moments (v, alpha v). Uses w(0).
class LinearModel final : public MomentModel {
 public:
  std::string_view name() const override { return "linear"; }
  Index dim_m() const override { return 2; }
  Index dim_mu() const override { return 2; }
  Eigen::VectorXd m(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const override;
  Eigen::VectorXd dm_dalpha(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const override;
  Eigen::MatrixXd dm_dmu(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const override;
  /// a_1 = -mu2.
  std::vector<std::pair<Index, double>> known_a_coords(const Eigen::VectorXd& mu) const override;
};

/// Logit score moments (d - L(w'mu_- + alpha mu_1)) * (alpha, w).
/// mu = (coefficient on alpha, coefficients on w).
class LogitModel final : public MomentModel {
 public:
  explicit LogitModel(Index q) : q_(q) {}
  std::string_view name() const override { return "logit"; }
  Index dim_m() const override { return 1 + q_; }
  Index dim_mu() const override { return 1 + q_; }
  bool requires_outcome() const override { return true; }
  Eigen::VectorXd m(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const override;
  Eigen::VectorXd dm_dalpha(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const override;
  Eigen::MatrixXd dm_dmu(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu) const override;
  Index q() const { return q_; }

 private:
  Index q_;
};

/// exp(x) / (1 + exp(x)), evaluated without overflow.
double logistic(double x);
/// L(x)(1 - L(x)), evaluated without cancellation.
double logistic_variance(double x);

// Scalar-form entry points for the linear model.
Eigen::Vector2d linear_m(double w, double alpha, const Eigen::Vector2d& mu);
Eigen::Vector2d linear_dm_dalpha(double w, double alpha, const Eigen::Vector2d& mu);
Eigen::Matrix2d linear_dm_dmu(double w, double alpha, const Eigen::Vector2d& mu);

Eigen::VectorXd logit_m(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu);
Eigen::VectorXd logit_dm_dalpha(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu);
Eigen::MatrixXd logit_dm_dmu(const RowRef& w, double d, double alpha, const Eigen::VectorXd& mu);

/// "linear" or "logit" (q = number of W columns).
std::unique_ptr<MomentModel> make_model(std::string_view name, Index q);

}  // namespace orthofe
