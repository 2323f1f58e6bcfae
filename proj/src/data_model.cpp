#include "orthofe/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "orthofe/error.hpp"

namespace orthofe {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto pos = text.find('\n', start);
    auto line = text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return lines;
}

std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (k) out += "; ";
    out += items[k];
  }
  return out;
}

}  // namespace

void PanelDataset::validate() const {
  if (n() < 2 || t_len() < 3)
    throw Error(ErrorKind::InvalidArgument, "panel needs n >= 2 and T >= 3");
  for (const auto& xk : x)
    if (xk.rows() != n() || xk.cols() != t_len())
      throw Error(ErrorKind::InvalidArgument, "regressor shape differs from outcome shape");
  if (!ids.empty() && static_cast<Index>(ids.size()) != n())
    throw Error(ErrorKind::InvalidArgument, "id count differs from row count");
}

void CrossSection::validate() const {
  if (!ids.empty() && static_cast<Index>(ids.size()) != n())
    throw Error(ErrorKind::InvalidArgument, "id count differs from row count");
  if (outcome) {
    if (outcome->size() != n()) throw Error(ErrorKind::InvalidArgument, "outcome length differs from n");
    for (Index i = 0; i < n(); ++i) {
      double d = (*outcome)(i);
      if (d != 0.0 && d != 1.0) throw Error(ErrorKind::InvalidArgument, "outcome must be 0 or 1");
    }
  }
}

void check_paired(const PanelDataset& panel, const CrossSection& cross) {
  if (panel.n() != cross.n())
    throw Error(ErrorKind::IdMismatch, "panel has " + std::to_string(panel.n()) +
                                           " individuals, cross-section has " + std::to_string(cross.n()));
  if (panel.ids.empty() || cross.ids.empty()) return;
  for (std::size_t k = 0; k < panel.ids.size(); ++k)
    if (panel.ids[k] != cross.ids[k])
      throw Error(ErrorKind::IdMismatch, "row " + std::to_string(k) + ": panel id " +
                                             std::to_string(panel.ids[k]) + " vs cross-section id " +
                                             std::to_string(cross.ids[k]));
}

// ---------------------------------------------------------------------------
// Folds and seeds

FoldPartition::FoldPartition(std::vector<int> assignments, int folds)
    : assignments_(std::move(assignments)), folds_(folds) {
  for (int a : assignments_)
    if (a < 0 || a >= folds_) throw Error(ErrorKind::InvalidArgument, "fold index out of range");
}

IndexSet FoldPartition::members(int l) const {
  IndexSet out;
  for (Index i = 0; i < n(); ++i)
    if (fold_of(i) == l) out.push_back(i);
  return out;
}

IndexSet FoldPartition::excluding(std::span<const int> folds) const {
  IndexSet out;
  for (Index i = 0; i < n(); ++i)
    if (std::find(folds.begin(), folds.end(), fold_of(i)) == folds.end()) out.push_back(i);
  return out;
}

IndexSet FoldPartition::excluding(std::initializer_list<int> folds) const {
  return excluding(std::span<const int>(folds.begin(), folds.size()));
}

std::uint64_t SeedConfig::derive(std::string_view tag, std::uint64_t index) const {
  std::uint64_t h = splitmix64(master_ ^ 0x5851f42d4c957f2dULL);
  h = splitmix64(h ^ fnv1a(tag));
  return splitmix64(h ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

FoldPartition make_folds(Index n, int folds, const SeedConfig& seed) {
  if (folds < 2 || folds > n)
    throw Error(ErrorKind::InvalidFoldCount,
                "need 2 <= L <= n, got L=" + std::to_string(folds) + ", n=" + std::to_string(n));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  auto rng = seed.stream("folds");
  for (Index i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<Index> pick(0, i);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n));
  const Index base = n / folds;
  const Index extra = n % folds;
  Index pos = 0;
  for (int l = 0; l < folds; ++l) {
    Index size = base + (l < extra ? 1 : 0);
    for (Index k = 0; k < size; ++k) assignment[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])] = l;
  }
  return FoldPartition(std::move(assignment), folds);
}

// ---------------------------------------------------------------------------
// Group demeaning

PanelDataset demean_by_group(const PanelDataset& panel, std::span<const std::int64_t> group) {
  if (static_cast<Index>(group.size()) != panel.n())
    throw Error(ErrorKind::InvalidArgument, "group labels must have one entry per individual");
  std::map<std::int64_t, std::vector<Index>> members;
  for (Index i = 0; i < panel.n(); ++i) members[group[static_cast<std::size_t>(i)]].push_back(i);
  for (const auto& [g, idx] : members)
    if (idx.size() < 2)
      throw Error(ErrorKind::SingletonGroupPeriod, "group " + std::to_string(g) + " has a single individual");

  auto demean = [&](Eigen::MatrixXd& m) {
    for (const auto& [g, idx] : members) {
      for (Index t = 0; t < m.cols(); ++t) {
        double mean = 0.0;
        for (Index i : idx) mean += m(i, t);
        mean /= static_cast<double>(idx.size());
        for (Index i : idx) m(i, t) -= mean;
      }
    }
  };
  PanelDataset out = panel;
  demean(out.y);
  for (auto& xk : out.x) demean(xk);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

PanelDataset parse_panel_csv(std::string_view text, bool lagged_outcome) {
  auto lines = split_lines(text);
  if (lines.empty()) throw Error(ErrorKind::BadHeader, "empty panel file");
  auto header = split_fields(lines[0]);
  if (header.size() < 3 || header[0] != "id" || header[1] != "t" || header[2] != "y")
    throw Error(ErrorKind::BadHeader, "panel header must start with id,t,y");
  const std::size_t p = header.size() - 3;
  for (std::size_t k = 0; k < p; ++k)
    if (header[3 + k] != "x" + std::to_string(k + 1))
      throw Error(ErrorKind::BadHeader, "expected column x" + std::to_string(k + 1));

  struct Row {
    std::int64_t id, t;
    std::vector<double> vals;
  };
  std::vector<Row> rows;
  std::vector<std::string> bad;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    auto f = split_fields(lines[r]);
    if (f.size() != header.size()) {
      bad.push_back("line " + std::to_string(r + 1) + ": expected " + std::to_string(header.size()) + " fields");
      continue;
    }
    auto id = parse_int(f[0]);
    auto t = parse_int(f[1]);
    Row row{id.value_or(0), t.value_or(0), {}};
    bool ok = id && t;
    for (std::size_t k = 2; k < f.size(); ++k) {
      auto v = parse_double(f[k]);
      if (!v) ok = false;
      row.vals.push_back(v.value_or(0.0));
    }
    if (!ok) {
      bad.push_back("line " + std::to_string(r + 1) + ": '" + std::string(lines[r]) + "'");
      continue;
    }
    rows.push_back(std::move(row));
  }
  if (!bad.empty()) throw Error(ErrorKind::NonNumericValue, join(bad));

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.id != b.id ? a.id < b.id : a.t < b.t;
  });
  for (std::size_t k = 1; k < rows.size(); ++k)
    if (rows[k].id == rows[k - 1].id && rows[k].t == rows[k - 1].t)
      bad.push_back("id " + std::to_string(rows[k].id) + " t " + std::to_string(rows[k].t));
  if (!bad.empty()) throw Error(ErrorKind::DuplicateRow, join(bad));

  std::set<std::int64_t> periods;
  std::vector<std::int64_t> ids;
  for (const auto& row : rows) {
    periods.insert(row.t);
    if (ids.empty() || ids.back() != row.id) ids.push_back(row.id);
  }
  std::vector<std::int64_t> period_list(periods.begin(), periods.end());
  std::unordered_map<std::int64_t, Index> period_pos;
  for (std::size_t k = 0; k < period_list.size(); ++k) period_pos[period_list[k]] = static_cast<Index>(k);

  const Index n = static_cast<Index>(ids.size());
  const Index T = static_cast<Index>(period_list.size());
  PanelDataset panel;
  panel.y = Eigen::MatrixXd::Constant(n, T, std::numeric_limits<double>::quiet_NaN());
  panel.x.assign(p, Eigen::MatrixXd::Constant(n, T, std::numeric_limits<double>::quiet_NaN()));
  panel.ids = ids;
  panel.lagged_outcome = lagged_outcome;
  std::vector<std::vector<bool>> seen(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(T), false));
  Index i = -1;
  std::int64_t last = 0;
  for (const auto& row : rows) {
    if (i < 0 || row.id != last) {
      ++i;
      last = row.id;
    }
    Index t = period_pos[row.t];
    seen[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] = true;
    panel.y(i, t) = row.vals[0];
    for (std::size_t k = 0; k < p; ++k) panel.x[k](i, t) = row.vals[1 + k];
  }
  for (Index a = 0; a < n; ++a)
    for (Index t = 0; t < T; ++t)
      if (!seen[static_cast<std::size_t>(a)][static_cast<std::size_t>(t)])
        bad.push_back("id " + std::to_string(ids[static_cast<std::size_t>(a)]) + " missing t " +
                      std::to_string(period_list[static_cast<std::size_t>(t)]));
  if (!bad.empty()) throw Error(ErrorKind::MissingCell, join(bad));
  panel.validate();
  return panel;
}

CrossSection parse_cross_csv(std::string_view text) {
  auto lines = split_lines(text);
  if (lines.empty()) throw Error(ErrorKind::BadHeader, "empty cross-section file");
  auto header = split_fields(lines[0]);
  if (header.size() < 2 || header[0] != "id") throw Error(ErrorKind::BadHeader, "cross-section header must start with id");
  const bool has_outcome = header.back() == "outcome";
  const std::size_t q = header.size() - 1 - (has_outcome ? 1 : 0);
  for (std::size_t k = 0; k < q; ++k)
    if (header[1 + k] != "w" + std::to_string(k + 1))
      throw Error(ErrorKind::BadHeader, "expected column w" + std::to_string(k + 1));

  std::vector<std::pair<std::int64_t, std::vector<double>>> rows;
  std::vector<std::string> bad;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    auto f = split_fields(lines[r]);
    if (f.size() != header.size()) {
      bad.push_back("line " + std::to_string(r + 1) + ": expected " + std::to_string(header.size()) + " fields");
      continue;
    }
    auto id = parse_int(f[0]);
    bool ok = id.has_value();
    std::vector<double> vals;
    for (std::size_t k = 1; k < f.size(); ++k) {
      auto v = parse_double(f[k]);
      if (!v) ok = false;
      vals.push_back(v.value_or(0.0));
    }
    if (!ok) {
      bad.push_back("line " + std::to_string(r + 1) + ": '" + std::string(lines[r]) + "'");
      continue;
    }
    rows.emplace_back(*id, std::move(vals));
  }
  if (!bad.empty()) throw Error(ErrorKind::NonNumericValue, join(bad));
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t k = 1; k < rows.size(); ++k)
    if (rows[k].first == rows[k - 1].first) bad.push_back("id " + std::to_string(rows[k].first));
  if (!bad.empty()) throw Error(ErrorKind::DuplicateRow, join(bad));

  const Index n = static_cast<Index>(rows.size());
  CrossSection cross;
  cross.w.resize(n, static_cast<Index>(q));
  if (has_outcome) cross.outcome = Eigen::VectorXd(n);
  for (Index i = 0; i < n; ++i) {
    const auto& [id, vals] = rows[static_cast<std::size_t>(i)];
    cross.ids.push_back(id);
    for (std::size_t k = 0; k < q; ++k) cross.w(i, static_cast<Index>(k)) = vals[k];
    if (has_outcome) (*cross.outcome)(i) = vals[q];
  }
  cross.validate();
  return cross;
}

PanelDataset load_panel(const std::filesystem::path& path, bool lagged_outcome) {
  return parse_panel_csv(read_file(path), lagged_outcome);
}

CrossSection load_cross(const std::filesystem::path& path) { return parse_cross_csv(read_file(path)); }

void write_panel(const PanelDataset& panel, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path.string());
  out << "id,t,y";
  for (Index k = 0; k < panel.p(); ++k) out << ",x" << (k + 1);
  out << '\n';
  for (Index i = 0; i < panel.n(); ++i) {
    std::int64_t id = panel.ids.empty() ? i + 1 : panel.ids[static_cast<std::size_t>(i)];
    for (Index t = 0; t < panel.t_len(); ++t) {
      out << id << ',' << (t + 1) << ',' << format_double(panel.y(i, t));
      for (Index k = 0; k < panel.p(); ++k) out << ',' << format_double(panel.x[k](i, t));
      out << '\n';
    }
  }
}

void write_cross(const CrossSection& cross, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path.string());
  out << "id";
  for (Index k = 0; k < cross.q(); ++k) out << ",w" << (k + 1);
  if (cross.outcome) out << ",outcome";
  out << '\n';
  for (Index i = 0; i < cross.n(); ++i) {
    out << (cross.ids.empty() ? i + 1 : cross.ids[static_cast<std::size_t>(i)]);
    for (Index k = 0; k < cross.q(); ++k) out << ',' << format_double(cross.w(i, k));
    if (cross.outcome) out << ',' << format_double((*cross.outcome)(i));
    out << '\n';
  }
}

}  // namespace orthofe
