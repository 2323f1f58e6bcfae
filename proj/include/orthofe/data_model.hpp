#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace orthofe {

using Index = Eigen::Index;
using IndexSet = std::vector<Index>;

/// Balanced N x T panel of an outcome and p regressors.
///
/// `x[k](i, t)` is regressor k for individual i in period t (0-based). When
/// `lagged_outcome` is set, column 0 of x holds the previous period's outcome,
/// so `x[0](i, 0)` is the pre-sample value Y_i0.
struct PanelDataset {
  Eigen::MatrixXd y;
  std::vector<Eigen::MatrixXd> x;
  std::vector<std::int64_t> ids;
  bool lagged_outcome = false;

  Index n() const { return y.rows(); }
  Index t_len() const { return y.cols(); }
  Index p() const { return static_cast<Index>(x.size()); }

  /// X_it' b for one individual and period.
  double xb(Index i, Index t, const Eigen::VectorXd& b) const {
    double s = 0.0;
    for (Index k = 0; k < p(); ++k) s += x[k](i, t) * b(k);
    return s;
  }

  /// Throws InvalidArgument when shapes are inconsistent or n < 2, T < 3.
  void validate() const;
};

/// Per-individual cross-sectional observables W_i and an optional binary outcome.
struct CrossSection {
  Eigen::MatrixXd w;
  std::optional<Eigen::VectorXd> outcome;
  std::vector<std::int64_t> ids;

  Index n() const { return w.rows(); }
  Index q() const { return w.cols(); }
  double d(Index i) const { return outcome ? (*outcome)(i) : 0.0; }

  void validate() const;
};

/// Throws IdMismatch naming the first position where the two id lists differ.
void check_paired(const PanelDataset& panel, const CrossSection& cross);

/// Assignment of each individual to one of L folds.
class FoldPartition {
 public:
  FoldPartition(std::vector<int> assignments, int folds);

  int folds() const { return folds_; }
  Index n() const { return static_cast<Index>(assignments_.size()); }
  int fold_of(Index i) const { return assignments_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& assignments() const { return assignments_; }

  /// Members of fold l in increasing index order.
  IndexSet members(int l) const;
  /// Individuals outside every listed fold, in increasing index order.
  IndexSet excluding(std::initializer_list<int> folds) const;
  IndexSet excluding(std::span<const int> folds) const;

 private:
  std::vector<int> assignments_;
  int folds_;
};

/// Seed derivation. Child seeds are a counter-based hash of
/// (master_seed, tag, index) so streams never depend on draw order.
class SeedConfig {
 public:
  explicit SeedConfig(std::uint64_t master_seed = 0) : master_(master_seed) {}

  std::uint64_t master_seed() const { return master_; }
  std::uint64_t derive(std::string_view tag, std::uint64_t index = 0) const;
  SeedConfig child(std::string_view tag, std::uint64_t index = 0) const {
    return SeedConfig(derive(tag, index));
  }
  std::mt19937_64 stream(std::string_view tag, std::uint64_t index = 0) const {
    return std::mt19937_64(derive(tag, index));
  }

 private:
  std::uint64_t master_;
};

/// Fisher-Yates shuffle of 0..n-1, then contiguous blocks. The first n mod L
/// folds receive one extra member.
FoldPartition make_folds(Index n, int folds, const SeedConfig& seed);

/// Subtracts the (group, period) mean from y and every regressor.
PanelDataset demean_by_group(const PanelDataset& panel, std::span<const std::int64_t> group);

// CSV I/O. Panel header: id,t,y,x1..xp. Cross-section header: id,w1..wq[,outcome].
PanelDataset load_panel(const std::filesystem::path& path, bool lagged_outcome = false);
void write_panel(const PanelDataset& panel, const std::filesystem::path& path);
CrossSection load_cross(const std::filesystem::path& path);
void write_cross(const CrossSection& cross, const std::filesystem::path& path);

/// Parses panel CSV text already in memory.
PanelDataset parse_panel_csv(std::string_view text, bool lagged_outcome = false);
CrossSection parse_cross_csv(std::string_view text);

}  // namespace orthofe
