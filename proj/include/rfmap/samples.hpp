#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "rfmap/errors.hpp"
#include "rfmap/tensor3.hpp"

namespace rfmap {

/// One surveyed reference point: grid position and its fingerprint tube.
struct TubeSample {
  Index i = 0;
  Index j = 0;
  std::vector<double> tube;
};

/// Set of sampled grid positions with their length-n3 tubes (tubal sampling:
/// the observation mask is constant along mode 3).
class TubeSampleSet {
 public:
  TubeSampleSet() = default;

  TubeSampleSet(Index n1, Index n2, Index n3) : n1_(n1), n2_(n2), n3_(n3) {
    if (n1 <= 0 || n2 <= 0 || n3 <= 0) throw DimensionError("TubeSampleSet: dimensions must be positive");
    slot_.assign(static_cast<std::size_t>(n1 * n2), -1);
  }

  /// Samples every listed position of a full tensor.
  static TubeSampleSet from_tensor(const Tensor3& t, std::span<const std::pair<Index, Index>> positions) {
    TubeSampleSet s(t.n1(), t.n2(), t.n3());
    for (auto [i, j] : positions) s.add(i, j, t.tube(i, j));
    return s;
  }

  Index n1() const noexcept { return n1_; }
  Index n2() const noexcept { return n2_; }
  Index n3() const noexcept { return n3_; }
  Index size() const noexcept { return static_cast<Index>(entries_.size()); }
  bool empty() const noexcept { return entries_.empty(); }

  const std::vector<TubeSample>& entries() const noexcept { return entries_; }

  bool contains(Index i, Index j) const noexcept {
    return in_bounds(i, j) && slot_[static_cast<std::size_t>(i + n1_ * j)] >= 0;
  }

  /// Adds a sample; duplicates and out-of-grid positions are rejected.
  void add(Index i, Index j, std::vector<double> tube) {
    if (!in_bounds(i, j)) {
      throw InvalidArgument("TubeSampleSet: position (" + std::to_string(i) + "," + std::to_string(j) +
                            ") outside " + std::to_string(n1_) + "x" + std::to_string(n2_) + " grid");
    }
    if (static_cast<Index>(tube.size()) != n3_) {
      throw DimensionError("TubeSampleSet: tube length " + std::to_string(tube.size()) + " != n3 = " + std::to_string(n3_));
    }
    auto& slot = slot_[static_cast<std::size_t>(i + n1_ * j)];
    if (slot >= 0) throw InvalidArgument("TubeSampleSet: duplicate position (" + std::to_string(i) + "," + std::to_string(j) + ")");
    slot = static_cast<Index>(entries_.size());
    entries_.push_back({i, j, std::move(tube)});
  }

  const TubeSample& at(Index i, Index j) const {
    if (!contains(i, j)) throw InvalidArgument("TubeSampleSet: position not sampled");
    return entries_[static_cast<std::size_t>(slot_[static_cast<std::size_t>(i + n1_ * j)])];
  }

  /// Sampled rows of column j in ascending order.
  std::vector<Index> rows_in_column(Index j) const {
    std::vector<Index> rows;
    for (Index i = 0; i < n1_; ++i)
      if (contains(i, j)) rows.push_back(i);
    return rows;
  }

  /// n1 x n2 observation mask (true = sampled).
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask() const {
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> m(n1_, n2_);
    for (Index j = 0; j < n2_; ++j)
      for (Index i = 0; i < n1_; ++i) m(i, j) = contains(i, j);
    return m;
  }

  /// P_Omega(Y): sampled tubes in place, zeros elsewhere.
  Tensor3 zero_filled() const {
    Tensor3 t(n1_, n2_, n3_);
    for (const auto& e : entries_) t.set_tube(e.i, e.j, e.tube);
    return t;
  }

  /// Union of two sample sets on the same grid; on overlap the first wins.
  TubeSampleSet merged(const TubeSampleSet& other) const {
    TubeSampleSet out = *this;
    for (const auto& e : other.entries_)
      if (!out.contains(e.i, e.j)) out.add(e.i, e.j, e.tube);
    return out;
  }

  /// Entries sorted by (j, i); used for canonical serialization.
  std::vector<TubeSample> sorted_entries() const {
    auto out = entries_;
    std::sort(out.begin(), out.end(), [](const TubeSample& a, const TubeSample& b) {
      return a.j != b.j ? a.j < b.j : a.i < b.i;
    });
    return out;
  }

 private:
  bool in_bounds(Index i, Index j) const noexcept { return i >= 0 && j >= 0 && i < n1_ && j < n2_; }

  Index n1_ = 0;
  Index n2_ = 0;
  Index n3_ = 0;
  std::vector<TubeSample> entries_;
  std::vector<Index> slot_;
};

}  // namespace rfmap
