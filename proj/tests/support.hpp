#pragma once

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "orthofe/data_model.hpp"

namespace testsupport {

using orthofe::Index;

/// Static panel y = x * beta + alpha_i + noise * N(0,1).
inline orthofe::PanelDataset static_panel(Index n, Index t, double beta, const Eigen::VectorXd& alpha, double noise,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  orthofe::PanelDataset p;
  p.y.resize(n, t);
  p.x.assign(1, Eigen::MatrixXd(n, t));
  p.ids.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    p.ids[static_cast<std::size_t>(i)] = i + 1;
    for (Index s = 0; s < t; ++s) {
      const double x = z(rng);
      p.x[0](i, s) = x;
      p.y(i, s) = beta * x + alpha(i) + noise * z(rng);
    }
  }
  return p;
}

inline orthofe::CrossSection cross_from(const Eigen::VectorXd& w) {
  orthofe::CrossSection c;
  c.w = w;
  c.ids.resize(static_cast<std::size_t>(w.size()));
  for (Index i = 0; i < w.size(); ++i) c.ids[static_cast<std::size_t>(i)] = i + 1;
  return c;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

/// Central difference of a vector function of a scalar.
template <class F>
Eigen::VectorXd central_diff(F f, double x) {
  const double h = 1e-6 * std::max(1.0, std::abs(x));
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace testsupport
