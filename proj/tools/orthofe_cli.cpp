// orthofe command-line front end: estimate | simulate | power

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>

#include <CLI11.hpp>
#include <json.hpp>

#include "orthofe/baselines.hpp"
#include "orthofe/error.hpp"
#include "orthofe/montecarlo.hpp"
#include "orthofe/orthogonal_gmm.hpp"
#include "orthofe/parallel.hpp"

using json = nlohmann::ordered_json;
using namespace orthofe;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitEstimation = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- small parsers --------------------------------------------------------

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

Shrinkage parse_shrinkage(const std::string& s) {
  if (s == "none") return Shrinkage::None;
  if (s == "eb") return Shrinkage::EB;
  if (s == "sure") return Shrinkage::SURE;
  throw UsageError("--shrinkage must be none, eb or sure");
}

FirstStageMethod parse_first_stage(const std::string& s) {
  if (s == "within") return FirstStageMethod::WithinOls;
  if (s == "bb") return FirstStageMethod::BlundellBond;
  throw UsageError("--first-stage must be within or bb");
}

VarianceMethod parse_variance(const std::string& s) {
  if (s == "iid") return VarianceMethod::Iid;
  if (s == "nw") return VarianceMethod::NeweyWest;
  throw UsageError("--variance must be iid or nw");
}

json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

json to_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Index r = 0; r < m.rows(); ++r) a.push_back(to_json(Eigen::VectorXd(m.row(r).transpose())));
  return a;
}

double normal_two_sided_p(double t) { return std::erfc(std::abs(t) / std::sqrt(2.0)); }

// ---- config layering: defaults < --config file < explicit flags -------------

struct Layered {
  json values;
  void overlay_file(const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path);
    json file;
    try {
      in >> file;
    } catch (const json::exception& e) {
      throw UsageError("config " + path + ": " + e.what());
    }
    if (!file.is_object()) throw UsageError("config " + path + " must be a JSON object");
    for (auto& [k, v] : file.items()) {
      if (!values.contains(k)) throw UsageError("config " + path + ": unknown key '" + k + "'");
      values[k] = v;
    }
  }
};

template <class T>
void flag(CLI::App& app, Layered& cfg, std::map<std::string, std::function<void()>>& setters, const std::string& key,
          const std::string& names, T default_value, const std::string& help) {
  auto holder = std::make_shared<T>(default_value);
  cfg.values[key] = default_value;
  CLI::Option* opt;
  if constexpr (std::is_same_v<T, bool>)
    opt = app.add_flag(names, *holder, help);
  else
    opt = app.add_option(names, *holder, help);
  setters[key] = [opt, holder, &cfg, key] {
    if (opt->count() > 0) cfg.values[key] = *holder;
  };
}

void apply_flags(std::map<std::string, std::function<void()>>& setters) {
  for (auto& [k, f] : setters) f();
}

EstConfig est_from(const json& c) {
  EstConfig est;
  est.folds = c.at("folds").get<int>();
  est.splits = c.at("splits").get<int>();
  est.shrinkage = parse_shrinkage(c.at("shrinkage").get<std::string>());
  est.first_stage = parse_first_stage(c.at("first-stage").get<std::string>());
  est.bb_min_t = c.at("bb-min-t").get<Index>();
  est.variance = parse_variance(c.at("variance").get<std::string>());
  est.nw_lag = c.at("nw-lag").get<Index>();
  est.dictionary.include_y = c.at("dict-y").get<bool>();
  est.dictionary.interaction_order = c.at("dict-order").get<int>();
  est.aen.gamma = c.at("gamma").get<double>();
  est.seed = c.at("seed").get<std::uint64_t>();
  est.threads = c.at("threads").get<int>();
  if (est.threads < 1) est.threads = default_thread_count();
  return est;
}

void common_est_flags(CLI::App& app, Layered& cfg, std::map<std::string, std::function<void()>>& s) {
  flag<int>(app, cfg, s, "folds", "--folds", 5, "cross-fitting folds L");
  flag<int>(app, cfg, s, "splits", "--splits", 20, "sample-split realizations S");
  flag<std::string>(app, cfg, s, "shrinkage", "--shrinkage", "none", "none|eb|sure (for method 'orth')");
  flag<std::string>(app, cfg, s, "first-stage", "--first-stage", "within", "within|bb");
  flag<Index>(app, cfg, s, "bb-min-t", "--bb-min-t", 0, "first period used by Blundell-Bond (0: from T)");
  flag<std::string>(app, cfg, s, "variance", "--variance", "iid", "iid|nw residual variance for shrinkage");
  flag<Index>(app, cfg, s, "nw-lag", "--nw-lag", -1, "Newey-West lag (-1: rule of thumb)");
  flag<bool>(app, cfg, s, "dict-y", "--dict-y", false, "add the outcome history to the dictionary");
  flag<int>(app, cfg, s, "dict-order", "--dict-order", 1, "1, or 2 for alpha interactions");
  flag<double>(app, cfg, s, "gamma", "--gamma", 0.0, "adaptive exponent (0: rule based)");
  flag<std::uint64_t>(app, cfg, s, "seed", "--seed", 0, "master seed");
  flag<int>(app, cfg, s, "threads", "--threads", 0, "worker threads (0: all cores)");
  flag<int>(app, cfg, s, "cgk-draws", "--cgk-draws", 500, "bootstrap draws for cgk");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

// ---- estimate ------------------------------------------------------------------

json orth_block(const std::string& method, const EstimateResult& r) {
  json b;
  b["method"] = method;
  b["mu_hat"] = to_json(r.mu_hat);
  b["se"] = to_json(r.se);
  b["vcov"] = to_json(r.vcov);
  Eigen::VectorXd t(r.mu_hat.size()), p(r.mu_hat.size());
  for (Index k = 0; k < t.size(); ++k) {
    t(k) = r.se(k) > 0.0 ? r.mu_hat(k) / r.se(k) : 0.0;
    p(k) = normal_two_sided_p(t(k));
  }
  b["t_stat"] = to_json(t);
  b["p_value"] = to_json(p);
  json splits = json::array();
  for (const auto& m : r.per_split_mu) splits.push_back(to_json(m));
  b["per_split_mu"] = splits;
  b["G_hat"] = to_json(r.g_hat);
  b["Upsilon_hat"] = to_json(r.upsilon_hat);
  b["Omega_hat"] = to_json(r.omega_hat);
  const auto& d = r.diagnostics;
  b["diagnostics"] = {{"flags", d.flags},
                      {"objective", d.objective},
                      {"iterations", d.iterations},
                      {"failed_splits", d.failed_splits},
                      {"max_kkt_ratio", d.max_kkt_ratio},
                      {"min_shrink_weight", d.min_shrink_weight},
                      {"max_shrink_weight", d.max_shrink_weight},
                      {"solver_monotone", d.solver_monotone}};
  return b;
}

json baseline_block(const BaselineResult& r) {
  json b;
  b["method"] = r.method;
  b["mu_hat"] = to_json(r.mu_hat);
  b["se"] = to_json(r.se);
  b["ci_lower"] = to_json(r.ci_lower);
  b["ci_upper"] = to_json(r.ci_upper);
  if (r.bootstrap_draws > 0) b["bootstrap_draws"] = r.bootstrap_draws;
  b["diagnostics"] = {{"flags", r.flags}};
  return b;
}

int cmd_estimate(const json& c, bool print) {
  const auto methods = split_list(c.at("method").get<std::string>());
  if (methods.empty()) throw UsageError("--method needs at least one method");
  for (const auto& m : methods)
    if (m != "orth" && !is_orth_method(m) && !is_baseline_method(m)) throw UsageError("unknown method '" + m + "'");
  const std::string out_path = c.at("out").get<std::string>();
  if (c.at("panel").get<std::string>().empty() || c.at("cross").get<std::string>().empty())
    throw UsageError("--panel and --cross are required");
  EstConfig est = est_from(c);

  PanelDataset panel;
  CrossSection cross;
  std::unique_ptr<MomentModel> model;
  try {
    panel = load_panel(c.at("panel").get<std::string>(), c.at("dynamic").get<bool>());
    cross = load_cross(c.at("cross").get<std::string>());
    panel.validate();
    cross.validate();
    check_paired(panel, cross);
    const std::string groups = c.at("groups").get<std::string>();
    if (!groups.empty()) {
      const CrossSection g = load_cross(groups);
      if (g.ids != panel.ids || g.q() < 1) throw Error(ErrorKind::IdMismatch, "group file ids differ from the panel");
      std::vector<std::int64_t> labels(static_cast<std::size_t>(g.n()));
      for (Index i = 0; i < g.n(); ++i) labels[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(g.w(i, 0));
      panel = demean_by_group(panel, labels);
    }
    model = make_model(c.at("model").get<std::string>(), cross.q());
    if (model->requires_outcome() && !cross.outcome) throw Error(ErrorKind::BadHeader, "logit model needs an outcome column");
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  if (est.bb_min_t <= 0) est.bb_min_t = default_bb_min_t(panel.t_len());

  json results = json::array();
  try {
    for (const auto& m : methods) {
      if (m == "orth" || is_orth_method(m)) {
        EstConfig cfg = est;
        if (m == "orth-mean") cfg.shrinkage = Shrinkage::None;
        if (m == "orth-eb") cfg.shrinkage = Shrinkage::EB;
        if (m == "orth-sure") cfg.shrinkage = Shrinkage::SURE;
        results.push_back(orth_block(m, cross_fit_estimate(panel, cross, *model, cfg)));
      } else {
        if (model->name() != "linear") throw UsageError(m + " is only defined for the linear model");
        const BaselineInputs in = baseline_inputs(panel, est.first_stage, est.bb_min_t, est.variance,
                                                  est.nw_lag >= 0 ? est.nw_lag : newey_west_default_lag(panel.t_len()));
        CgkConfig cgk;
        cgk.draws = c.at("cgk-draws").get<int>();
        cgk.threads = est.threads;
        results.push_back(baseline_block(run_baseline(m, in, cross, SeedConfig(est.seed).child("cgk"), cgk)));
      }
    }
  } catch (const Error& e) {
    std::cerr << (e.is_data_error() ? "data error: " : "estimation failed: ") << e.what() << '\n';
    return e.is_data_error() ? kExitData : kExitEstimation;
  }

  json doc;
  doc["config"] = c;
  doc["n"] = panel.n();
  doc["t_len"] = panel.t_len();
  doc["results"] = results;
  const std::string text = doc.dump(2) + "\n";
  if (!out_path.empty()) write_text(out_path, text);
  if (print || out_path.empty()) std::cout << text;
  return 0;
}

// ---- simulate / power -------------------------------------------------------------

McConfig mc_from(const json& c, bool full_profile) {
  McConfig mc;
  mc.dgp.n = c.at("N").get<Index>();
  mc.dgp.t_len = c.at("T").get<Index>();
  mc.dgp.beta0 = c.at("beta0").get<double>();
  mc.dgp.c = c.at("c").get<double>();
  mc.dgp.seed = c.at("seed").get<std::uint64_t>();
  mc.est = est_from(c);
  if (mc.est.bb_min_t <= 0) mc.est.bb_min_t = default_bb_min_t(mc.dgp.t_len);
  mc.reps = c.at("reps").get<int>();
  mc.methods = split_list(c.at("methods").get<std::string>());
  mc.cgk_draws = c.at("cgk-draws").get<int>();
  if (full_profile) {
    mc.reps = 1000;
    mc.est.splits = 20;
  }
  mc.threads = mc.est.threads;
  mc.est.threads = 1;
  mc.progress = [](int done, int total) {
    if (done % 10 == 0 || done == total) std::cerr << "replication " << done << "/" << total << '\n';
  };
  return mc;
}

void sim_flags(CLI::App& app, Layered& cfg, std::map<std::string, std::function<void()>>& s) {
  flag<Index>(app, cfg, s, "N", "--N", 100, "individuals");
  flag<Index>(app, cfg, s, "T", "--T", 12, "periods");
  flag<double>(app, cfg, s, "beta0", "--beta0", 0.0, "AR coefficient");
  flag<double>(app, cfg, s, "c", "--c", 0.0, "endogeneity scale");
  flag<int>(app, cfg, s, "reps", "--reps", 200, "replications");
  std::string all;
  for (const auto& m : all_methods()) all += (all.empty() ? "" : ",") + m;
  flag<std::string>(app, cfg, s, "methods", "--methods", all, "comma-separated methods");
  flag<std::string>(app, cfg, s, "out", "--out", "", "output CSV");
  flag<std::string>(app, cfg, s, "profile", "--profile", "desk", "desk (R=200, S=5) or full (R=1000, S=20)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orthogonal moments with estimated fixed effects"};
  app.require_subcommand(1);
  bool print = false;
  std::string config_path;

  std::map<std::string, Layered> cfgs;
  std::map<std::string, std::map<std::string, std::function<void()>>> setters;

  auto* est = app.add_subcommand("estimate", "estimate on user data");
  {
    auto& c = cfgs["estimate"];
    auto& s = setters["estimate"];
    flag<std::string>(*est, c, s, "panel", "--panel", "", "panel CSV (id,t,y,x1..xp)");
    flag<std::string>(*est, c, s, "cross", "--cross", "", "cross-section CSV (id,w1..wq[,outcome])");
    flag<std::string>(*est, c, s, "groups", "--groups", "", "optional CSV id,w1 of group labels for by-period demeaning");
    flag<std::string>(*est, c, s, "model", "--model", "linear", "linear|logit");
    flag<std::string>(*est, c, s, "method", "--method", "orth", "comma-separated: orth, orth-mean, orth-eb, orth-sure, naive, xie-eb, xie-sure, cgk");
    flag<bool>(*est, c, s, "dynamic", "--dynamic", false, "x1 is the lagged outcome");
    flag<std::string>(*est, c, s, "out", "--out", "", "output JSON");
    common_est_flags(*est, c, s);
  }
  auto* sim = app.add_subcommand("simulate", "Monte Carlo summary");
  auto* pow = app.add_subcommand("power", "Monte Carlo power curve");
  for (auto* sub : {sim, pow}) {
    auto& c = cfgs[sub->get_name()];
    auto& s = setters[sub->get_name()];
    sim_flags(*sub, c, s);
    common_est_flags(*sub, c, s);
    // simulation defaults: Blundell-Bond first stage, desk-scale S
    c.values["first-stage"] = "bb";
    c.values["splits"] = 5;
    if (sub == pow) flag<std::string>(*sub, c, s, "null-grid", "--null-grid", "0.4:1.6:0.1", "lo:hi:step");
  }
  for (auto* sub : {est, sim, pow}) {
    sub->add_option("--config", config_path, "JSON config; flags override");
    sub->add_flag("--print", print, "also write results to stdout");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    CLI::App* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    Layered& cfg = cfgs[name];
    cfg.overlay_file(config_path);
    apply_flags(setters[name]);
    const json& c = cfg.values;

    if (name == "estimate") return cmd_estimate(c, print);

    const std::string profile = c.at("profile").get<std::string>();
    if (profile != "desk" && profile != "full") throw UsageError("--profile must be desk or full");
    const McConfig mc = mc_from(c, profile == "full");
    std::string text;
    try {
      if (name == "simulate") {
        text = summary_csv(run_replications(mc));
      } else {
        std::vector<double> grid;
        try {
          grid = parse_grid(c.at("null-grid").get<std::string>());
        } catch (const Error& e) {
          throw UsageError(e.what());
        }
        text = power_csv(power_curve(mc, grid));
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::InvalidArgument) throw UsageError(e.what());
      std::cerr << "estimation failed: " << e.what() << '\n';
      return kExitEstimation;
    }
    const std::string out = c.at("out").get<std::string>();
    if (!out.empty()) write_text(out, text);
    if (print || out.empty()) std::cout << text;
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.is_data_error() ? kExitData : kExitUsage;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  }
}
