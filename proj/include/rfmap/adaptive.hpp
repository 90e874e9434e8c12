#pragma once

// Two-pass adaptive tubal sampling.
//
// Pass 1 samples m = floor(delta * M / n2) random rows in every column. Pass 2
// runs L rounds; each round scores the remaining columns by the residual energy
// of their pass-1 sub-tubes outside the current subspace estimate U, samples s
// columns in full with probability proportional to that score, and extends U
// with the new residual directions. Every column is finally estimated by least
// squares through U restricted to its sampled rows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rfmap/completion.hpp"
#include "rfmap/errors.hpp"
#include "rfmap/rng.hpp"
#include "rfmap/samples.hpp"
#include "rfmap/talgebra.hpp"
#include "rfmap/tensor3.hpp"

namespace rfmap {

struct AdaptiveConfig {
  Index budget_m = 0;       ///< total tube budget M
  double delta = 0.5;       ///< share of M spent in pass 1
  int rounds_l = 4;         ///< pass-2 rounds L
  std::uint64_t seed = 0;
  std::optional<Index> rank_cap;  ///< default min(n1, L s, max(1, m / 2))
  double rank_tol = 1e-8;         ///< residual fibers below rank_tol * ||block|| are not added to U
  std::optional<double> floor_dbm = kNoiseFloorDbm;  ///< clamp applied to the estimate

  /// Pass-1 rows per column, m = floor(delta M / n2), at most n1.
  Index first_pass_rows(Index n1, Index n2) const {
    const auto m = static_cast<Index>(std::floor(delta * static_cast<double>(budget_m) / static_cast<double>(n2) + 1e-9));
    return std::min(m, n1);
  }

  /// Pass-2 columns per round, s = max(1, floor((1 - delta) M / ((n1 - m) L))); 0 when m = n1.
  Index columns_per_round(Index n1, Index n2) const {
    const Index m = first_pass_rows(n1, n2);
    if (m >= n1) return 0;
    const double s = (1.0 - delta) * static_cast<double>(budget_m) / (static_cast<double>(n1 - m) * rounds_l);
    return std::max<Index>(1, static_cast<Index>(std::floor(s + 1e-9)));
  }

  Index effective_rank_cap(Index n1, Index n2) const {
    if (rank_cap) return *rank_cap;
    // m / 2 keeps every column's least-squares fit at least twice overdetermined.
    return std::min({n1, static_cast<Index>(rounds_l) * columns_per_round(n1, n2), std::max<Index>(1, first_pass_rows(n1, n2) / 2)});
  }

  void validate(Index n1, Index n2) const {
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("AdaptiveConfig: delta must lie in (0, 1)");
    if (rounds_l < 1) throw InvalidArgument("AdaptiveConfig: rounds_l must be >= 1");
    if (budget_m < 1 || budget_m > n1 * n2) {
      throw InvalidArgument("AdaptiveConfig: budget_m = " + std::to_string(budget_m) + " outside [1, " + std::to_string(n1 * n2) + "]");
    }
    if (first_pass_rows(n1, n2) < 1) {
      throw InvalidArgument("AdaptiveConfig: budget infeasible, m = floor(delta * M / n2) = 0; raise budget_m or delta");
    }
    if (rank_cap && *rank_cap < 0) throw InvalidArgument("AdaptiveConfig: rank_cap must be non-negative");
    if (!(rank_tol >= 0.0)) throw InvalidArgument("AdaptiveConfig: rank_tol must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// Measurement oracles
// ---------------------------------------------------------------------------

/// Query access to the fingerprint tube at (i, j). The first measurement of a
/// position is cached and returned by later queries; cost counts distinct
/// positions. Safe for concurrent queries.
class MeasurementOracle {
 public:
  MeasurementOracle(Index n1, Index n2, Index n3) : n1_(n1), n2_(n2), n3_(n3) {
    if (n1 <= 0 || n2 <= 0 || n3 <= 0) throw DimensionError("MeasurementOracle: dimensions must be positive");
  }
  virtual ~MeasurementOracle() = default;

  Index n1() const noexcept { return n1_; }
  Index n2() const noexcept { return n2_; }
  Index n3() const noexcept { return n3_; }

  std::vector<double> measure(Index i, Index j) {
    if (i < 0 || j < 0 || i >= n1_ || j >= n2_) throw InvalidArgument("MeasurementOracle: position outside grid");
    std::lock_guard lock(mutex_);
    const auto key = i + n1_ * j;
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, acquire(i, j)).first;
    return it->second;
  }

  Index cost() const {
    std::lock_guard lock(mutex_);
    return static_cast<Index>(cache_.size());
  }

 protected:
  virtual std::vector<double> acquire(Index i, Index j) = 0;

 private:
  Index n1_, n2_, n3_;
  mutable std::mutex mutex_;
  std::map<Index, std::vector<double>> cache_;
};

/// Wraps a ground-truth tensor: tube + N(0, sigma^2) noise, clamped at the floor.
/// The noise of position (i, j) depends only on (seed, i, j).
class SimulatedOracle : public MeasurementOracle {
 public:
  SimulatedOracle(Tensor3 truth, double sigma, std::uint64_t seed, std::optional<double> floor_dbm = kNoiseFloorDbm)
      : MeasurementOracle(truth.n1(), truth.n2(), truth.n3()),
        truth_(std::move(truth)),
        sigma_(sigma),
        seed_(seed),
        floor_(floor_dbm) {
    if (!(sigma >= 0.0)) throw InvalidArgument("SimulatedOracle: sigma must be non-negative");
  }

  const Tensor3& truth() const noexcept { return truth_; }

 protected:
  std::vector<double> acquire(Index i, Index j) override {
    auto tube = truth_.tube(i, j);
    Stream rng(seed_, {tag(StreamTag::measurement), static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)});
    for (double& v : tube) {
      if (sigma_ > 0.0) v += sigma_ * rng.normal();
      if (floor_) v = std::max(v, *floor_);
    }
    return tube;
  }

 private:
  Tensor3 truth_;
  double sigma_;
  std::uint64_t seed_;
  std::optional<double> floor_;
};

// ---------------------------------------------------------------------------
// Subspace estimate
// ---------------------------------------------------------------------------

/// Current U: n1 x d x n3 with orthonormal Fourier slices (d may be 0).
struct SubspaceEstimate {
  Index n1 = 0;
  Index n3 = 0;
  FourierTensor3 fourier;  ///< n1 x d x n3; empty slices when d = 0

  SubspaceEstimate() = default;
  SubspaceEstimate(Index rows, Index depth) : n1(rows), n3(depth), fourier(rows, 0, depth) {}

  Index dim() const noexcept { return fourier.n2; }
  Tensor3 basis() const {
    if (dim() == 0) throw InvalidArgument("SubspaceEstimate: basis is empty");
    return ifft3(fourier);
  }
};

namespace detail {

inline CMatrix restrict_rows(const CMatrix& m, const std::vector<Index>& rows) {
  CMatrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

/// Fourier slices (0..n3/2) of an m x n3 block of sub-tubes.
inline std::vector<Eigen::VectorXcd> tube_spectra(const std::vector<std::vector<double>>& tubes, Index n3) {
  Tensor3 t(static_cast<Index>(tubes.size()), 1, n3);
  for (std::size_t r = 0; r < tubes.size(); ++r) t.set_tube(static_cast<Index>(r), 0, tubes[r]);
  const FourierTensor3 f = fft3(t);
  std::vector<Eigen::VectorXcd> out;
  for (Index k = 0; k < unique_slice_count(n3); ++k) out.push_back(f[k].col(0));
  return out;
}

/// Least-squares coefficients of x on the columns of a, with a ridge when a^H a is near singular.
inline Eigen::VectorXcd ridge_lstsq(const CMatrix& a, const Eigen::VectorXcd& x, bool& flagged) {
  CMatrix gram = a.adjoint() * a;
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(gram, Eigen::EigenvaluesOnly);
  const double largest = eig.eigenvalues().maxCoeff();
  const double smallest = eig.eigenvalues().minCoeff();
  if (largest <= 0.0) return Eigen::VectorXcd::Zero(a.cols());
  if (!(smallest > kSingularRatio * largest)) {
    gram += CMatrix::Identity(gram.rows(), gram.cols()) * (kRidgeRatio * largest);
    flagged = true;
  }
  return gram.ldlt().solve(a.adjoint() * x);
}

/// ||P_{U_rows}^perp x||_F^2 in the time domain for a block of sub-tubes at `rows`.
inline double restricted_residual_energy(const SubspaceEstimate& u, const std::vector<Index>& rows,
                                         const std::vector<Eigen::VectorXcd>& spectra, bool& flagged) {
  const Index n3 = u.n3;
  double energy = 0.0;
  for (Index k = 0; k < unique_slice_count(n3); ++k) {
    const auto& x = spectra[static_cast<std::size_t>(k)];
    Eigen::VectorXcd r = x;
    if (u.dim() > 0) {
      const CMatrix a = restrict_rows(u.fourier[k], rows);
      r -= a * ridge_lstsq(a, x, flagged);
    }
    energy += slice_weight(k, n3) * r.squaredNorm();
  }
  return energy / static_cast<double>(n3);
}

inline double spectra_energy(const std::vector<Eigen::VectorXcd>& spectra, Index n3) {
  double e = 0.0;
  for (Index k = 0; k < static_cast<Index>(spectra.size()); ++k) e += slice_weight(k, n3) * spectra[static_cast<std::size_t>(k)].squaredNorm();
  return e / static_cast<double>(n3);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pass 1
// ---------------------------------------------------------------------------

/// m distinct rows per column, uniformly without replacement, drawn from the
/// stream (seed, first_pass, j).
inline TubeSampleSet first_pass_rows(MeasurementOracle& oracle, Index m, std::uint64_t seed) {
  const Index n1 = oracle.n1(), n2 = oracle.n2();
  if (m < 1 || m > n1) throw InvalidArgument("first_pass: rows per column m = " + std::to_string(m) + " outside [1, n1]");
  TubeSampleSet s(n1, n2, oracle.n3());
  std::vector<Index> rows(static_cast<std::size_t>(n1));
  for (Index j = 0; j < n2; ++j) {
    for (Index i = 0; i < n1; ++i) rows[static_cast<std::size_t>(i)] = i;
    Stream rng(seed, {tag(StreamTag::first_pass), static_cast<std::uint64_t>(j)});
    for (Index a = 0; a < m; ++a) {
      const auto b = a + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n1 - a)));
      std::swap(rows[static_cast<std::size_t>(a)], rows[static_cast<std::size_t>(b)]);
    }
    std::vector<Index> chosen(rows.begin(), rows.begin() + m);
    std::sort(chosen.begin(), chosen.end());
    for (Index i : chosen) s.add(i, j, oracle.measure(i, j));
  }
  return s;
}

/// `count` distinct grid positions, uniformly without replacement (the
/// non-adaptive baseline), drawn from the stream (seed, uniform_tubes).
inline TubeSampleSet uniform_tubes(MeasurementOracle& oracle, Index count, std::uint64_t seed) {
  const Index n1 = oracle.n1(), n2 = oracle.n2();
  if (count < 1 || count > n1 * n2) throw InvalidArgument("uniform_tubes: count " + std::to_string(count) + " outside [1, n1 n2]");
  std::vector<Index> cells(static_cast<std::size_t>(n1 * n2));
  for (Index p = 0; p < n1 * n2; ++p) cells[static_cast<std::size_t>(p)] = p;
  Stream rng(seed, {tag(StreamTag::uniform_tubes)});
  for (Index a = 0; a < count; ++a) {
    const auto b = a + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n1 * n2 - a)));
    std::swap(cells[static_cast<std::size_t>(a)], cells[static_cast<std::size_t>(b)]);
  }
  std::sort(cells.begin(), cells.begin() + count);
  TubeSampleSet s(n1, n2, oracle.n3());
  for (Index a = 0; a < count; ++a) {
    const Index p = cells[static_cast<std::size_t>(a)];
    s.add(p % n1, p / n1, oracle.measure(p % n1, p / n1));
  }
  return s;
}

inline TubeSampleSet first_pass(MeasurementOracle& oracle, const AdaptiveConfig& cfg) {
  cfg.validate(oracle.n1(), oracle.n2());
  return first_pass_rows(oracle, cfg.first_pass_rows(oracle.n1(), oracle.n2()), cfg.seed);
}

// ---------------------------------------------------------------------------
// Probability estimation
// ---------------------------------------------------------------------------

struct ProbabilityEstimate {
  std::vector<Index> columns;    ///< the candidate set, in the given order
  std::vector<double> energy;    ///< residual energy of each column's pass-1 sub-tubes
  std::vector<double> p;         ///< normalized scores (sum to 1)
  bool uniform_fallback = false; ///< every energy was zero
  bool regularized = false;
};

/// Energies at or below this fraction of a column's raw energy count as zero.
inline constexpr double kZeroResidualRatio = 1e-20;

inline ProbabilityEstimate estimate_probs(const SubspaceEstimate& u, const TubeSampleSet& pass1, const std::vector<Index>& remaining) {
  if (remaining.empty()) throw InvalidArgument("estimate_probs: candidate column set is empty");
  if (u.dim() > 0 && (u.n1 != pass1.n1() || u.n3 != pass1.n3())) throw DimensionError("estimate_probs: subspace and samples disagree in n1 or n3");
  ProbabilityEstimate out;
  out.columns = remaining;
  double total = 0.0;
  for (Index j : remaining) {
    const auto rows = pass1.rows_in_column(j);
    double e = 0.0;
    if (!rows.empty()) {
      std::vector<std::vector<double>> tubes;
      for (Index i : rows) tubes.push_back(pass1.at(i, j).tube);
      const auto spectra = detail::tube_spectra(tubes, pass1.n3());
      e = detail::restricted_residual_energy(u, rows, spectra, out.regularized);
      if (e <= kZeroResidualRatio * detail::spectra_energy(spectra, pass1.n3())) e = 0.0;
    }
    out.energy.push_back(e);
    total += e;
  }
  const double n = static_cast<double>(remaining.size());
  for (double e : out.energy) out.p.push_back(total > 0.0 ? e / total : 1.0 / n);
  out.uniform_fallback = !(total > 0.0);
  return out;
}

/// Sequential weighted selection of `count` distinct entries. Zero-weight
/// entries are drawn uniformly only once the positive-weight ones run out.
inline std::vector<Index> weighted_sample_without_replacement(const std::vector<Index>& items, std::vector<double> weights,
                                                              Index count, Stream& rng) {
  if (items.size() != weights.size()) throw DimensionError("weighted sampling: items and weights differ in length");
  std::vector<Index> pool = items;
  std::vector<Index> out;
  while (static_cast<Index>(out.size()) < count && !pool.empty()) {
    double total = 0.0;
    for (double w : weights) total += w;
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = pool.size();
      for (std::size_t n = 0; n < pool.size(); ++n) {
        if (weights[n] <= 0.0) continue;
        acc += weights[n];
        if (target < acc) {
          pick = n;
          break;
        }
      }
      if (pick == pool.size()) {  // round-off at the top end
        for (std::size_t n = pool.size(); n-- > 0;)
          if (weights[n] > 0.0) {
            pick = n;
            break;
          }
      }
    } else {
      pick = static_cast<std::size_t>(rng.below(pool.size()));
    }
    out.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pass 2
// ---------------------------------------------------------------------------

struct SecondPassResult {
  SubspaceEstimate subspace;
  TubeSampleSet full_columns;        ///< every tube of the columns sampled in full
  std::vector<Index> sampled_columns;
  int rounds_completed = 0;
  /// Total pass-1 residual energy over all columns; entry 0 is before round 1,
  /// entry l after round l.
  std::vector<double> round_residuals;
  std::vector<int> fallback_rounds;  ///< rounds that used uniform column scores
  bool early_stop = false;
  std::string stop_reason;
  bool regularized = false;
};

namespace detail {

inline double total_restricted_residual(const SubspaceEstimate& u, const TubeSampleSet& pass1, bool& flagged) {
  double total = 0.0;
  for (Index j = 0; j < pass1.n2(); ++j) {
    const auto rows = pass1.rows_in_column(j);
    if (rows.empty()) continue;
    std::vector<std::vector<double>> tubes;
    for (Index i : rows) tubes.push_back(pass1.at(i, j).tube);
    total += restricted_residual_energy(u, rows, tube_spectra(tubes, pass1.n3()), flagged);
  }
  return total;
}

/// Extends u with the residual directions of `block` (n1 x c x n3) outside
/// t-span(u). If the dimension then exceeds `cap`, u is cut back to the `cap`
/// leading t-SVD directions of `sampled`, the columns observed in full so far
/// (all of which lie in the grown span).
inline void grow_subspace(SubspaceEstimate& u, const Tensor3& block, const Tensor3& sampled, Index cap, double rank_tol) {
  const Index n1 = block.n1(), n3 = block.n3();
  FourierTensor3 res = fft3(block);
  for (Index k = 0; k < unique_slice_count(n3); ++k)
    if (u.dim() > 0) res[k] -= u.fourier[k] * (u.fourier[k].adjoint() * res[k]);
  const Index p = std::min(n1 - u.dim(), block.n2());
  std::vector<SliceSvd> svds;
  std::vector<double> energy(static_cast<std::size_t>(std::max<Index>(p, 0)), 0.0);
  for (Index k = 0; k < unique_slice_count(n3); ++k) {
    svds.push_back(slice_svd(res[k], is_self_conjugate(k, n3), Eigen::ComputeThinU, k, "second_pass"));
    for (Index i = 0; i < p; ++i) energy[static_cast<std::size_t>(i)] += slice_weight(k, n3) * svds.back().s(i) * svds.back().s(i);
  }
  const double cut = rank_tol * block.norm();
  Index keep = 0;
  while (keep < p && std::sqrt(energy[static_cast<std::size_t>(keep)] / static_cast<double>(n3)) > cut) ++keep;
  if (keep == 0) return;
  const Index d = u.dim() + keep;
  FourierTensor3 grown(n1, d, n3);
  for (Index k = 0; k < unique_slice_count(n3); ++k) {
    CMatrix joined(n1, d);
    if (u.dim() > 0) joined.leftCols(u.dim()) = u.fourier[k];
    joined.rightCols(keep) = svds[static_cast<std::size_t>(k)].u.leftCols(keep);
    grown[k] = orthonormal_slice(joined, is_self_conjugate(k, n3));
  }
  grown.mirror_upper_half();
  if (d <= cap) {
    u.fourier = std::move(grown);
    return;
  }
  // Keep the cap directions carrying the most energy of the sampled columns.
  const FourierTensor3 fs = fft3(sampled);
  FourierTensor3 cut_basis(n1, cap, n3);
  for (Index k = 0; k < unique_slice_count(n3); ++k) {
    const bool real = is_self_conjugate(k, n3);
    const CMatrix coeff = grown[k].adjoint() * fs[k];
    auto svd = slice_svd(coeff, real, Eigen::ComputeFullU, k, "second_pass");
    cut_basis[k] = orthonormal_slice(grown[k] * svd.u.leftCols(cap), real);
  }
  cut_basis.mirror_upper_half();
  u.fourier = std::move(cut_basis);
}

}  // namespace detail

inline SecondPassResult second_pass(MeasurementOracle& oracle, const AdaptiveConfig& cfg, const TubeSampleSet& pass1) {
  const Index n1 = oracle.n1(), n2 = oracle.n2(), n3 = oracle.n3();
  cfg.validate(n1, n2);
  if (pass1.n1() != n1 || pass1.n2() != n2 || pass1.n3() != n3) throw DimensionError("second_pass: pass-1 samples do not match the oracle grid");
  const Index m = cfg.first_pass_rows(n1, n2);
  const Index s = cfg.columns_per_round(n1, n2);
  const Index cap = cfg.effective_rank_cap(n1, n2);

  SecondPassResult out;
  out.subspace = SubspaceEstimate(n1, n3);
  out.full_columns = TubeSampleSet(n1, n2, n3);
  out.round_residuals.push_back(detail::total_restricted_residual(out.subspace, pass1, out.regularized));
  if (s == 0) {
    out.stop_reason = "pass 1 covered every row";
    return out;
  }

  Tensor3 sampled;
  std::vector<Index> remaining(static_cast<std::size_t>(n2));
  for (Index j = 0; j < n2; ++j) remaining[static_cast<std::size_t>(j)] = j;
  for (int l = 1; l <= cfg.rounds_l; ++l) {
    if (remaining.empty()) {
      out.early_stop = true;
      out.stop_reason = "column pool exhausted before round " + std::to_string(l);
      break;
    }
    const Index spent = oracle.cost();
    const Index per_column = n1 - m;
    const Index affordable = per_column > 0 ? (cfg.budget_m - spent) / per_column : s;
    const Index take = std::min(s, affordable);
    if (take < 1) {
      out.early_stop = true;
      out.stop_reason = "budget exhausted before round " + std::to_string(l);
      break;
    }
    const auto probs = estimate_probs(out.subspace, pass1, remaining);
    out.regularized = out.regularized || probs.regularized;
    if (probs.uniform_fallback) out.fallback_rounds.push_back(l);
    Stream rng(cfg.seed, {tag(StreamTag::second_pass), static_cast<std::uint64_t>(l)});
    const auto picked = weighted_sample_without_replacement(remaining, probs.p, take, rng);

    Tensor3 block(n1, static_cast<Index>(picked.size()), n3);
    for (std::size_t c = 0; c < picked.size(); ++c) {
      const Index j = picked[c];
      for (Index i = 0; i < n1; ++i) {
        auto tube = oracle.measure(i, j);
        block.set_tube(i, static_cast<Index>(c), tube);
        out.full_columns.add(i, j, std::move(tube));
      }
      out.sampled_columns.push_back(j);
      remaining.erase(std::find(remaining.begin(), remaining.end(), j));
    }
    sampled = concat_lateral(sampled, block);
    detail::grow_subspace(out.subspace, block, sampled, cap, cfg.rank_tol);
    out.rounds_completed = l;
    out.round_residuals.push_back(detail::total_restricted_residual(out.subspace, pass1, out.regularized));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimation
// ---------------------------------------------------------------------------

/// U (U_rows^T U_rows)^-1 U_rows^T T(rows, j, :) for one lateral slice.
inline Flagged<Tensor3> estimate_slice(const SubspaceEstimate& u, const std::vector<Index>& rows,
                                       const std::vector<std::vector<double>>& tubes) {
  if (rows.size() != tubes.size()) throw DimensionError("estimate_slice: rows and tubes differ in count");
  const Index d = u.dim();
  if (static_cast<Index>(rows.size()) < d) {
    throw InvalidArgument("estimate_slice: " + std::to_string(rows.size()) + " sampled rows cannot determine a " +
                          std::to_string(d) + "-dimensional subspace; increase the budget or delta, or lower rank_cap");
  }
  const Index n1 = u.n1, n3 = u.n3;
  for (Index i : rows)
    if (i < 0 || i >= n1) throw InvalidArgument("estimate_slice: row index outside the subspace");
  Flagged<Tensor3> out{Tensor3(n1, 1, n3), false};
  if (d == 0 || rows.empty()) return out;
  const auto spectra = detail::tube_spectra(tubes, n3);
  FourierTensor3 est(n1, 1, n3);
  for (Index k = 0; k < unique_slice_count(n3); ++k) {
    const CMatrix a = detail::restrict_rows(u.fourier[k], rows);
    Eigen::VectorXcd c = detail::ridge_lstsq(a, spectra[static_cast<std::size_t>(k)], out.regularized);
    est[k] = u.fourier[k] * c;
    if (is_self_conjugate(k, n3)) est[k] = est[k].real().cast<Complex>();
  }
  est.mirror_upper_half();
  out.value = ifft3(est);
  return out;
}

struct RunReport {
  Index cost_tubes = 0;
  int rounds = 0;
  Index subspace_dim = 0;
  std::vector<double> round_residuals;
  Index first_pass_rows = 0;
  Index columns_per_round = 0;
  Index rank_cap = 0;
  bool early_stop = false;
  std::string stop_reason;
  std::vector<int> fallback_rounds;
  bool regularized = false;
};

inline void write_report(std::ostream& os, const RunReport& r) {
  auto join = [](const auto& v) {
    std::ostringstream s;
    s.precision(17);
    for (std::size_t n = 0; n < v.size(); ++n) s << (n ? "," : "") << v[n];
    return s.str();
  };
  os << "cost_tubes=" << r.cost_tubes << "\n"
     << "rounds=" << r.rounds << "\n"
     << "subspace_dim=" << r.subspace_dim << "\n"
     << "round_residuals=" << join(r.round_residuals) << "\n"
     << "first_pass_rows=" << r.first_pass_rows << "\n"
     << "columns_per_round=" << r.columns_per_round << "\n"
     << "rank_cap=" << r.rank_cap << "\n"
     << "early_stop=" << (r.early_stop ? 1 : 0) << "\n"
     << "stop_reason=" << r.stop_reason << "\n"
     << "fallback_rounds=" << join(r.fallback_rounds) << "\n"
     << "regularized=" << (r.regularized ? 1 : 0) << "\n";
}

struct AdaptiveResult {
  Tensor3 estimate;
  TubeSampleSet samples;  ///< every measured position
  SubspaceEstimate subspace;
  RunReport report;
};

inline AdaptiveResult adaptive_complete(MeasurementOracle& oracle, const AdaptiveConfig& cfg) {
  const Index n1 = oracle.n1(), n2 = oracle.n2(), n3 = oracle.n3();
  cfg.validate(n1, n2);
  if (oracle.cost() != 0) throw InvalidArgument("adaptive_complete: oracle has already been queried");
  const TubeSampleSet pass1 = first_pass(oracle, cfg);
  auto pass2 = second_pass(oracle, cfg, pass1);

  AdaptiveResult out;
  out.samples = pass2.full_columns.merged(pass1);
  out.estimate = Tensor3(n1, n2, n3);
  bool regularized = pass2.regularized;
  for (Index j = 0; j < n2; ++j) {
    const auto rows = out.samples.rows_in_column(j);
    if (static_cast<Index>(rows.size()) == n1) {
      for (Index i : rows) out.estimate.set_tube(i, j, out.samples.at(i, j).tube);
      continue;
    }
    std::vector<std::vector<double>> tubes;
    for (Index i : rows) tubes.push_back(out.samples.at(i, j).tube);
    auto col = estimate_slice(pass2.subspace, rows, tubes);
    regularized = regularized || col.regularized;
    for (Index i = 0; i < n1; ++i)
      for (Index k = 0; k < n3; ++k) out.estimate(i, j, k) = col.value(i, 0, k);
  }
  detail::clamp_floor(out.estimate, cfg.floor_dbm);
  detail::require_finite(out.estimate, "adaptive_complete");

  out.report.cost_tubes = oracle.cost();
  out.report.rounds = pass2.rounds_completed;
  out.report.subspace_dim = pass2.subspace.dim();
  out.report.round_residuals = pass2.round_residuals;
  out.report.first_pass_rows = cfg.first_pass_rows(n1, n2);
  out.report.columns_per_round = cfg.columns_per_round(n1, n2);
  out.report.rank_cap = cfg.effective_rank_cap(n1, n2);
  out.report.early_stop = pass2.early_stop;
  out.report.stop_reason = pass2.stop_reason;
  out.report.fallback_rounds = pass2.fallback_rounds;
  out.report.regularized = regularized;
  out.subspace = std::move(pass2.subspace);
  if (out.report.cost_tubes != out.samples.size() || out.report.cost_tubes > cfg.budget_m) {
    throw NumericError("adaptive_complete: budget accounting mismatch");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct ProbQuality {
  std::vector<Index> columns;
  std::vector<double> p_hat;
  std::vector<double> p_true;
  std::vector<double> ratio;  ///< p_hat / p_true (1 when both are zero, inf when only p_true is)
  double fraction_within = 0.0;  ///< share of columns with ratio in [2/5, 5/2]
};

/// Compares pass-1 scores with the true column residual shares
/// ||P_U^perp T(:, j, :)||^2 / ||P_U^perp T||^2 over the given columns.
inline ProbQuality check_prob_quality(const Tensor3& truth, const SubspaceEstimate& u, const TubeSampleSet& pass1,
                                      std::vector<Index> columns = {}) {
  if (!truth.same_shape(pass1.zero_filled())) throw DimensionError("check_prob_quality: truth and samples differ in shape");
  if (columns.empty())
    for (Index j = 0; j < truth.n2(); ++j) columns.push_back(j);
  const auto est = estimate_probs(u, pass1, columns);
  ProbQuality q;
  q.columns = columns;
  q.p_hat = est.p;
  double total = 0.0;
  std::vector<double> energy;
  std::vector<Index> all_rows(static_cast<std::size_t>(truth.n1()));
  for (Index i = 0; i < truth.n1(); ++i) all_rows[static_cast<std::size_t>(i)] = i;
  bool flagged = false;
  for (Index j : columns) {
    std::vector<std::vector<double>> tubes;
    for (Index i = 0; i < truth.n1(); ++i) tubes.push_back(truth.tube(i, j));
    const double e = detail::restricted_residual_energy(u, all_rows, detail::tube_spectra(tubes, truth.n3()), flagged);
    energy.push_back(e);
    total += e;
  }
  Index within = 0;
  for (std::size_t n = 0; n < columns.size(); ++n) {
    const double p = total > 0.0 ? energy[n] / total : 1.0 / static_cast<double>(columns.size());
    q.p_true.push_back(p);
    const double r = p > 0.0 ? q.p_hat[n] / p : (q.p_hat[n] > 0.0 ? INFINITY : 1.0);
    q.ratio.push_back(r);
    if (r >= 0.4 && r <= 2.5) ++within;
  }
  q.fraction_within = static_cast<double>(within) / static_cast<double>(columns.size());
  return q;
}

}  // namespace rfmap
