#include "orthofe/montecarlo.hpp"

#include <charconv>
#include <cmath>
#include <mutex>
#include <sstream>

#include "orthofe/error.hpp"
#include "orthofe/parallel.hpp"

namespace orthofe {

namespace {
constexpr double kZ975 = 1.959964;
}

void DgpConfig::validate() const {
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "DGP needs N >= 2");
  if (t_len < 4) throw Error(ErrorKind::InvalidArgument, "DGP needs T >= 4");
  if (!(std::abs(beta0) < 1.0)) throw Error(ErrorKind::InvalidArgument, "DGP needs |beta0| < 1");
  if (!std::isfinite(c)) throw Error(ErrorKind::InvalidArgument, "DGP needs a finite c");
}

SimulatedSample simulate_dgp(const DgpConfig& cfg) {
  cfg.validate();
  const Index n = cfg.n, T = cfg.t_len;
  const double b = cfg.beta0;
  auto rng = SeedConfig(cfg.seed).stream("dgp");
  std::normal_distribution<double> z(0.0, 1.0);
  const double sd_alpha = std::sqrt(0.5), sd_u = 0.5;
  const double sd_y0 = std::sqrt(1.0 / (2.0 * (1.0 - b * b)));
  const Index window = T / 2 - 1;

  TrueLatents truth;
  truth.alpha.resize(n);
  truth.u1.resize(n, T);
  truth.u2.resize(n, T);
  truth.v.resize(n);
  PanelDataset panel;
  panel.y.resize(n, T);
  panel.x.assign(1, Eigen::MatrixXd(n, T));
  panel.ids.resize(static_cast<std::size_t>(n));
  panel.lagged_outcome = true;
  CrossSection cross;
  cross.w.resize(n, 1);
  cross.ids.resize(static_cast<std::size_t>(n));

  for (Index i = 0; i < n; ++i) {
    const double alpha = sd_alpha * z(rng);
    double y_prev = alpha / (1.0 - b) + sd_y0 * z(rng);
    double u1_sum = 0.0;
    for (Index t = 0; t < T; ++t) {
      const double u1 = sd_u * z(rng);
      const double u2 = sd_u * z(rng);
      truth.u1(i, t) = u1;
      truth.u2(i, t) = u2;
      if (t < window) u1_sum += u1;
      panel.x[0](i, t) = y_prev;
      y_prev = b * y_prev + alpha + u1 + u2;
      panel.y(i, t) = y_prev;
    }
    const double v = z(rng);
    truth.alpha(i) = alpha;
    truth.v(i) = v;
    cross.w(i, 0) = alpha + v - cfg.c * u1_sum / static_cast<double>(window);
    panel.ids[static_cast<std::size_t>(i)] = i + 1;
    cross.ids[static_cast<std::size_t>(i)] = i + 1;
  }
  return SimulatedSample(std::move(panel), std::move(cross), std::move(truth));
}

Index default_bb_min_t(Index t_len) { return std::min(t_len, std::max<Index>(4, t_len / 4 + 1)); }

std::vector<std::string> all_methods() {
  return {"naive", "xie-eb", "xie-sure", "cgk", "orth-mean", "orth-eb", "orth-sure"};
}

bool is_orth_method(const std::string& method) {
  return method == "orth-mean" || method == "orth-eb" || method == "orth-sure";
}

Shrinkage orth_shrinkage(const std::string& method) {
  if (method == "orth-eb") return Shrinkage::EB;
  if (method == "orth-sure") return Shrinkage::SURE;
  return Shrinkage::None;
}

EstConfig simulation_est_config(const DgpConfig& dgp) {
  EstConfig est;
  est.folds = 5;
  est.splits = 5;
  est.first_stage = FirstStageMethod::BlundellBond;
  est.bb_min_t = default_bb_min_t(dgp.t_len);
  return est;
}

bool rejects(const RepRecord& r, double g) {
  if (r.percentile_ci) return g < r.ci_lower || g > r.ci_upper;
  if (!(r.se > 0.0)) return r.mu2 != g;
  return std::abs((r.mu2 - g) / r.se) > kZ975;
}

RepRecord run_method(const std::string& method, const SimulatedSample& sample, const EstConfig& est, int cgk_draws,
                     const SeedConfig& seed) {
  RepRecord rec;
  try {
    if (is_orth_method(method)) {
      EstConfig cfg = est;
      cfg.shrinkage = orth_shrinkage(method);
      cfg.seed = seed.derive("est");
      cfg.threads = 1;
      const LinearModel model;
      const EstimateResult r = cross_fit_estimate(sample.panel, sample.cross, model, cfg);
      rec.mu2 = r.mu_hat(1);
      rec.se = r.se(1);
      rec.max_kkt_ratio = r.diagnostics.max_kkt_ratio;
      rec.shrinkage_used = cfg.shrinkage != Shrinkage::None;
      rec.min_shrink_weight = r.diagnostics.min_shrink_weight;
      rec.max_shrink_weight = r.diagnostics.max_shrink_weight;
      rec.solver_monotone = r.diagnostics.solver_monotone;
    } else if (is_baseline_method(method)) {
      const BaselineInputs in = baseline_inputs(sample.panel, est.first_stage, est.bb_min_t);
      CgkConfig cgk;
      cgk.draws = cgk_draws;
      const BaselineResult r = run_baseline(method, in, sample.cross, seed.child("cgk"), cgk);
      rec.mu2 = r.mu_hat(1);
      rec.se = r.se(1);
      rec.percentile_ci = method == "cgk";
      if (method == "xie-eb" || method == "xie-sure") {
        const ShrinkageFit s = shrink(in.alpha, in.u2, method == "xie-eb" ? Shrinkage::EB : Shrinkage::SURE);
        rec.shrinkage_used = true;
        rec.min_shrink_weight = s.weights.minCoeff();
        rec.max_shrink_weight = s.weights.maxCoeff();
      }
      rec.ci_lower = r.ci_lower(1);
      rec.ci_upper = r.ci_upper(1);
      return rec;
    } else {
      throw Error(ErrorKind::InvalidArgument, "unknown method '" + method + "'");
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidArgument) throw;
    rec.failed = true;
    rec.error = e.what();
    return rec;
  }
  rec.ci_lower = rec.mu2 - kZ975 * rec.se;
  rec.ci_upper = rec.mu2 + kZ975 * rec.se;
  return rec;
}

McRecords run_replications_raw(const McConfig& config) {
  config.dgp.validate();
  config.est.validate();
  if (config.reps < 1) throw Error(ErrorKind::InvalidArgument, "need at least one replication");
  for (const auto& m : config.methods)
    if (!is_orth_method(m) && !is_baseline_method(m)) throw Error(ErrorKind::InvalidArgument, "unknown method '" + m + "'");

  McRecords out;
  out.config = config;
  out.methods = config.methods;
  const std::size_t reps = static_cast<std::size_t>(config.reps);
  out.by_method.assign(config.methods.size(), std::vector<RepRecord>(reps));
  const SeedConfig master(config.dgp.seed);
  std::atomic<int> done{0};
  std::mutex progress_mutex;

  parallel_for(reps, config.threads, [&](std::size_t r) {
    const SeedConfig rep = master.child("rep", r);
    DgpConfig dgp = config.dgp;
    dgp.seed = rep.derive("dgp");
    const SimulatedSample sample = simulate_dgp(dgp);
    for (std::size_t m = 0; m < config.methods.size(); ++m)
      out.by_method[m][r] = run_method(config.methods[m], sample, config.est, config.cgk_draws, rep.child("method"));
    const int finished = done.fetch_add(1) + 1;
    if (config.progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      config.progress(finished, config.reps);
    }
  });
  return out;
}

const MethodSummary& SimSummary::at(const std::string& method) const {
  for (const auto& m : methods)
    if (m.method == method) return m;
  throw Error(ErrorKind::InvalidArgument, "no summary for method '" + method + "'");
}

SimSummary summarize(const McRecords& records) {
  SimSummary out;
  out.dgp = records.config.dgp;
  const double truth = records.config.truth;
  for (std::size_t m = 0; m < records.methods.size(); ++m) {
    MethodSummary s;
    s.method = records.methods[m];
    s.reps = static_cast<int>(records.by_method[m].size());
    s.min_shrink_weight = 1.0;
    double sum = 0.0, rej = 0.0;
    int ok = 0;
    for (const auto& r : records.by_method[m]) {
      if (r.failed) {
        ++s.n_fail;
        continue;
      }
      ++ok;
      sum += r.mu2;
      rej += rejects(r, truth) ? 1.0 : 0.0;
      s.max_kkt_ratio = std::max(s.max_kkt_ratio, r.max_kkt_ratio);
      s.solver_monotone = s.solver_monotone && r.solver_monotone;
      if (r.shrinkage_used) {
        s.shrinkage_used = true;
        s.min_shrink_weight = std::min(s.min_shrink_weight, r.min_shrink_weight);
        s.max_shrink_weight = std::max(s.max_shrink_weight, r.max_shrink_weight);
      }
    }
    if (!s.shrinkage_used) s.min_shrink_weight = 0.0;
    if (10 * s.n_fail > s.reps)
      throw Error(ErrorKind::TooManyFailures, s.method + " failed on " + std::to_string(s.n_fail) + " of " +
                                                  std::to_string(s.reps) + " replications");
    if (ok > 0) {
      const double k = static_cast<double>(ok);
      const double mean = sum / k;
      double ss = 0.0, se2 = 0.0;
      for (const auto& r : records.by_method[m]) {
        if (r.failed) continue;
        ss += (r.mu2 - mean) * (r.mu2 - mean);
        se2 += (r.mu2 - truth) * (r.mu2 - truth);
      }
      s.bias = mean - truth;
      s.std = std::sqrt(ss / k);
      s.rmse = std::sqrt(se2 / k);
      s.rej_prob = rej / k;
    }
    out.methods.push_back(s);
  }
  return out;
}

SimSummary run_replications(const McConfig& config) { return summarize(run_replications_raw(config)); }

std::vector<PowerRow> power_table(const McRecords& records, const std::vector<double>& null_grid) {
  std::vector<PowerRow> rows;
  for (std::size_t m = 0; m < records.methods.size(); ++m) {
    for (double g : null_grid) {
      double rej = 0.0;
      int ok = 0;
      for (const auto& r : records.by_method[m]) {
        if (r.failed) continue;
        ++ok;
        rej += rejects(r, g) ? 1.0 : 0.0;
      }
      rows.push_back({records.methods[m], g, ok > 0 ? rej / ok : 0.0});
    }
  }
  return rows;
}

std::vector<PowerRow> power_curve(const McConfig& config, const std::vector<double>& null_grid) {
  return power_table(run_replications_raw(config), null_grid);
}

std::vector<double> parse_grid(const std::string& spec) {
  auto number = [&](std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw Error(ErrorKind::InvalidArgument, "bad grid value '" + std::string(s) + "' in '" + spec + "'");
    return v;
  };
  std::vector<std::string_view> parts;
  std::string_view rest(spec);
  for (std::size_t pos; (pos = rest.find(':')) != std::string_view::npos; rest.remove_prefix(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  if (parts.size() == 1) return {number(parts[0])};
  if (parts.size() != 3) throw Error(ErrorKind::InvalidArgument, "grid must be lo:hi:step, got '" + spec + "'");
  const double lo = number(parts[0]), hi = number(parts[1]), step = number(parts[2]);
  if (!(step > 0.0) || hi < lo) throw Error(ErrorKind::InvalidArgument, "grid needs lo <= hi and step > 0");
  const auto count = static_cast<long>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> out;
  for (long k = 0; k < count; ++k) {
    // round to 12 significant digits so 0.4 + 3 * 0.1 prints as 0.7
    const double v = lo + static_cast<double>(k) * step;
    out.push_back(std::round(v * 1e12) / 1e12);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string summary_csv(const SimSummary& summary) {
  std::ostringstream os;
  os << "method,c,N,T,bias,std,rmse,rej_prob,n_fail\n";
  for (const auto& m : summary.methods)
    os << m.method << ',' << format_double(summary.dgp.c) << ',' << summary.dgp.n << ',' << summary.dgp.t_len << ','
       << format_double(m.bias) << ',' << format_double(m.std) << ',' << format_double(m.rmse) << ','
       << format_double(m.rej_prob) << ',' << m.n_fail << '\n';
  return os.str();
}

std::string power_csv(const std::vector<PowerRow>& rows) {
  std::ostringstream os;
  os << "method,null_value,rejection\n";
  for (const auto& r : rows) os << r.method << ',' << format_double(r.null_value) << ',' << format_double(r.rejection) << '\n';
  return os.str();
}

}  // namespace orthofe
