#pragma once

// t-product algebra on third-order tensors.
//
// Every operation here is diagonalized by the mode-3 DFT: a t-product is a
// slice-wise matrix product of Fourier slices, the t-transpose is a slice-wise
// conjugate transpose, and so on. For real tensors only slices 0..n3/2 are
// computed; the rest follow by conjugate symmetry. Self-conjugate slices
// (k = 0 and, for even n3, k = n3/2) are processed with real arithmetic so
// that factors stay exactly real after the inverse transform.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rfmap/errors.hpp"
#include "rfmap/tensor3.hpp"

namespace rfmap {

/// A value together with a flag telling whether a regularized inverse was used.
template <class T>
struct Flagged {
  T value;
  bool regularized = false;
};

/// Relative threshold below which a Fourier slice counts as singular.
inline constexpr double kSingularRatio = 1e-12;
/// Size of the ridge added to a singular slice, relative to its largest singular value.
inline constexpr double kRidgeRatio = 1e-10;

namespace detail {

/// Runs `f(k, self_conjugate)` on the unique Fourier slices and mirrors the rest.
template <class F>
FourierTensor3 map_unique_slices(Index n1, Index n2, Index n3, F&& f) {
  FourierTensor3 out(n1, n2, n3);
  for (Index k = 0; k < unique_slice_count(n3); ++k) out[k] = f(k, is_self_conjugate(k, n3));
  out.mirror_upper_half();
  return out;
}

/// Multiplicity of a unique slice in the full spectrum.
inline constexpr double slice_weight(Index k, Index n3) noexcept { return is_self_conjugate(k, n3) ? 1.0 : 2.0; }

struct SliceSvd {
  CMatrix u;
  Eigen::VectorXd s;
  CMatrix v;
};

inline std::string slice_context(const char* op, Index k) { return std::string(op) + ": SVD failed on Fourier slice " + std::to_string(k); }

/// SVD of one Fourier slice. `options` are Eigen's ComputeThin*/ComputeFull* flags (0 for values only).
inline SliceSvd slice_svd(const CMatrix& m, bool real, unsigned options, Index k, const char* op) {
  SliceSvd out;
  if (real) {
    Eigen::JacobiSVD<Matrix> svd(m.real(), options);
    if (svd.info() != Eigen::Success) throw NumericError(slice_context(op, k), k);
    out.s = svd.singularValues();
    if (options & (Eigen::ComputeFullU | Eigen::ComputeThinU)) out.u = svd.matrixU().cast<Complex>();
    if (options & (Eigen::ComputeFullV | Eigen::ComputeThinV)) out.v = svd.matrixV().cast<Complex>();
  } else {
    Eigen::JacobiSVD<CMatrix> svd(m, options);
    if (svd.info() != Eigen::Success) throw NumericError(slice_context(op, k), k);
    out.s = svd.singularValues();
    if (options & (Eigen::ComputeFullU | Eigen::ComputeThinU)) out.u = svd.matrixU();
    if (options & (Eigen::ComputeFullV | Eigen::ComputeThinV)) out.v = svd.matrixV();
  }
  return out;
}

/// Singular values of the unique Fourier slices, one column per slice.
inline Matrix unique_singular_values(const FourierTensor3& f, const char* op) {
  const Index half = unique_slice_count(f.n3);
  Matrix sv(std::min(f.n1, f.n2), half);
  for (Index k = 0; k < half; ++k) sv.col(k) = slice_svd(f[k], is_self_conjugate(k, f.n3), 0, k, op).s;
  return sv;
}

/// Inverse of a square slice; singular slices either throw or get a ridge.
/// `fallback_scale` sizes the ridge of an all-zero slice.
inline CMatrix invert_slice(const CMatrix& m, bool real, Index k, bool regularize, double fallback_scale, bool& flagged) {
  const auto svd = slice_svd(m, real, 0, k, "tinv");
  const double largest = svd.s.size() ? svd.s(0) : 0.0;
  const double smallest = svd.s.size() ? svd.s(svd.s.size() - 1) : 0.0;
  CMatrix work = m;
  if (!(smallest > kSingularRatio * largest)) {
    const double cond = smallest > 0.0 ? largest / smallest : INFINITY;
    const double scale = largest > 0.0 ? largest : fallback_scale;
    if (!regularize || scale == 0.0) {
      throw NumericError("tinv: Fourier slice " + std::to_string(k) + " is singular (condition estimate " +
                             std::to_string(cond) + ")",
                         k, cond);
    }
    work += CMatrix::Identity(m.rows(), m.cols()) * (kRidgeRatio * scale);
    flagged = true;
  }
  if (real) return work.real().inverse().cast<Complex>();
  return work.inverse();
}

/// Least-squares projector applied slice-wise: returns B (B^H B)^-1 B^H X.
/// The Gram matrix gets a ridge when it is numerically singular.
inline CMatrix project_slice(const CMatrix& basis, const CMatrix& x, bool real, bool& flagged) {
  if (basis.cols() == 0) return CMatrix::Zero(x.rows(), x.cols());
  CMatrix gram = basis.adjoint() * basis;
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(gram, Eigen::EigenvaluesOnly);
  const double largest = eig.eigenvalues().maxCoeff();
  const double smallest = eig.eigenvalues().minCoeff();
  if (largest <= 0.0) return CMatrix::Zero(x.rows(), x.cols());
  if (!(smallest > kSingularRatio * largest)) {
    gram += CMatrix::Identity(gram.rows(), gram.cols()) * (kRidgeRatio * largest);
    flagged = true;
  }
  CMatrix coeff = gram.ldlt().solve(basis.adjoint() * x);
  CMatrix out = basis * coeff;
  if (real) out = out.real().cast<Complex>();
  return out;
}

/// Orthonormal basis for the columns of one slice (thin Householder QR).
inline CMatrix orthonormal_slice(const CMatrix& m, bool real) {
  const Index d = std::min(m.rows(), m.cols());
  if (real) {
    Eigen::HouseholderQR<Matrix> qr(m.real());
    Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), d);
    return q.cast<Complex>();
  }
  Eigen::HouseholderQR<CMatrix> qr(m);
  return qr.householderQ() * CMatrix::Identity(m.rows(), d);
}

inline void require_positive_shape(const Tensor3& t, const char* op) {
  if (t.empty()) throw DimensionError(std::string(op) + ": empty tensor");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Products and transposes
// ---------------------------------------------------------------------------

/// Slice-wise product of two Fourier tensors (Fourier image of the t-product).
inline FourierTensor3 fourier_product(const FourierTensor3& a, const FourierTensor3& b) {
  if (a.n2 != b.n1 || a.n3 != b.n3) {
    throw DimensionError("tprod: cannot multiply " + Tensor3::shape_string(a.n1, a.n2, a.n3) + " by " +
                         Tensor3::shape_string(b.n1, b.n2, b.n3));
  }
  return detail::map_unique_slices(a.n1, b.n2, a.n3, [&](Index k, bool) -> CMatrix { return a[k] * b[k]; });
}

/// t-product: tube-wise circular convolution, evaluated in the Fourier domain.
inline Tensor3 tprod(const Tensor3& a, const Tensor3& b) {
  if (a.n2() != b.n1() || a.n3() != b.n3()) {
    throw DimensionError("tprod: cannot multiply " + a.shape() + " by " + b.shape());
  }
  return ifft3(fourier_product(fft3(a), fft3(b)));
}

/// t-transpose: each frontal slice transposed, slices 1..n3-1 in reverse order.
inline Tensor3 ttranspose(const Tensor3& t) {
  Tensor3 out(t.n2(), t.n1(), t.n3());
  for (Index k = 0; k < t.n3(); ++k) out.slice(conjugate_partner(k, t.n3())) = t.slice(k).transpose();
  return out;
}

/// Fourier image of the t-transpose.
inline FourierTensor3 fourier_adjoint(const FourierTensor3& f) {
  FourierTensor3 out(f.n2, f.n1, f.n3);
  for (Index k = 0; k < f.n3; ++k) out[k] = f[k].adjoint();
  return out;
}

// ---------------------------------------------------------------------------
// t-SVD and derived quantities
// ---------------------------------------------------------------------------

struct TSVDFactors {
  Tensor3 U;      ///< n1 x n1 x n3, orthogonal
  Tensor3 Theta;  ///< n1 x n2 x n3, f-diagonal
  Tensor3 V;      ///< n2 x n2 x n3, orthogonal
  std::vector<double> fiber_norms;  ///< ||Theta(i,i,:)||_F, non-increasing
};

/// t-SVD via full SVDs of the Fourier slices.
inline TSVDFactors tsvd(const Tensor3& t) {
  detail::require_positive_shape(t, "tsvd");
  const FourierTensor3 f = fft3(t);
  const Index n1 = t.n1(), n2 = t.n2(), n3 = t.n3();
  const Index p = std::min(n1, n2);
  FourierTensor3 fu(n1, n1, n3), ftheta(n1, n2, n3), fv(n2, n2, n3);
  std::vector<double> energy(static_cast<std::size_t>(p), 0.0);
  for (Index k = 0; k < unique_slice_count(n3); ++k) {
    const bool real = is_self_conjugate(k, n3);
    auto svd = detail::slice_svd(f[k], real, Eigen::ComputeFullU | Eigen::ComputeFullV, k, "tsvd");
    fu[k] = svd.u;
    fv[k] = svd.v;
    for (Index i = 0; i < p; ++i) {
      ftheta[k](i, i) = svd.s(i);
      energy[static_cast<std::size_t>(i)] += detail::slice_weight(k, n3) * svd.s(i) * svd.s(i);
    }
  }
  fu.mirror_upper_half();
  ftheta.mirror_upper_half();
  fv.mirror_upper_half();

  TSVDFactors out{ifft3(fu), ifft3(ftheta), ifft3(fv), {}};
  out.fiber_norms.reserve(energy.size());
  for (double e : energy) out.fiber_norms.push_back(std::sqrt(e / static_cast<double>(n3)));
  // f-diagonal by construction; scrub round-off off the diagonal.
  for (Index k = 0; k < n3; ++k)
    for (Index j = 0; j < n2; ++j)
      for (Index i = 0; i < n1; ++i)
        if (i != j) out.Theta(i, j, k) = 0.0;
  return out;
}

/// Norms ||Theta(i,i,:)||_F of the t-SVD, without forming the factors.
inline std::vector<double> fiber_norms(const Tensor3& t) {
  detail::require_positive_shape(t, "fiber_norms");
  const FourierTensor3 f = fft3(t);
  const Matrix sv = detail::unique_singular_values(f, "fiber_norms");
  std::vector<double> out(static_cast<std::size_t>(sv.rows()), 0.0);
  for (Index i = 0; i < sv.rows(); ++i) {
    double e = 0.0;
    for (Index k = 0; k < sv.cols(); ++k) e += detail::slice_weight(k, t.n3()) * sv(i, k) * sv(i, k);
    out[static_cast<std::size_t>(i)] = std::sqrt(e / static_cast<double>(t.n3()));
  }
  return out;
}

inline constexpr double kDefaultRankTolerance = 1e-8;

/// Number of fibers whose norm exceeds tol times the leading fiber norm.
inline Index tubal_rank(const Tensor3& t, double tol = kDefaultRankTolerance) {
  if (tol < 0.0) throw InvalidArgument("tubal_rank: tolerance must be non-negative");
  const auto norms = fiber_norms(t);
  if (norms.empty() || norms.front() == 0.0) return 0;
  const double cut = tol * norms.front();
  return static_cast<Index>(std::count_if(norms.begin(), norms.end(), [&](double v) { return v > cut; }));
}

/// Best tubal-rank-r approximation: keeps the r leading fibers of the t-SVD.
inline Tensor3 best_rank_r(const Tensor3& t, Index r) {
  detail::require_positive_shape(t, "best_rank_r");
  const Index p = std::min(t.n1(), t.n2());
  if (r < 1 || r > p) {
    throw InvalidArgument("best_rank_r: r = " + std::to_string(r) + " outside [1, " + std::to_string(p) + "]");
  }
  const FourierTensor3 f = fft3(t);
  return ifft3(detail::map_unique_slices(t.n1(), t.n2(), t.n3(), [&](Index k, bool real) -> CMatrix {
    auto svd = detail::slice_svd(f[k], real, Eigen::ComputeThinU | Eigen::ComputeThinV, k, "best_rank_r");
    return svd.u.leftCols(r) * svd.s.head(r).asDiagonal() * svd.v.leftCols(r).adjoint();
  }));
}

/// Tensor nuclear norm: sum of the nuclear norms of all Fourier slices.
inline double tnn(const Tensor3& t) {
  detail::require_positive_shape(t, "tnn");
  const FourierTensor3 f = fft3(t);
  const Matrix sv = detail::unique_singular_values(f, "tnn");
  double total = 0.0;
  for (Index k = 0; k < sv.cols(); ++k) total += detail::slice_weight(k, t.n3()) * sv.col(k).sum();
  return total;
}

// ---------------------------------------------------------------------------
// Inverses and projections
// ---------------------------------------------------------------------------

enum class InversePolicy {
  strict,      ///< singular slices raise NumericError
  regularize,  ///< singular slices get a small ridge; the result is flagged
};

inline Flagged<Tensor3> tinv_flagged(const Tensor3& t, InversePolicy policy = InversePolicy::strict) {
  detail::require_positive_shape(t, "tinv");
  if (t.n1() != t.n2()) throw DimensionError("tinv: tensor must have square frontal slices, got " + t.shape());
  const FourierTensor3 f = fft3(t);
  bool flagged = false;
  const double scale = detail::unique_singular_values(f, "tinv").row(0).maxCoeff();
  auto inv = detail::map_unique_slices(t.n1(), t.n2(), t.n3(), [&](Index k, bool real) {
    return detail::invert_slice(f[k], real, k, policy == InversePolicy::regularize, scale, flagged);
  });
  return {ifft3(inv), flagged};
}

/// Inverse under the t-product.
inline Tensor3 tinv(const Tensor3& t, InversePolicy policy = InversePolicy::strict) {
  return tinv_flagged(t, policy).value;
}

/// Fourier-domain projection of x onto t-span(u); u and x share n1 and n3.
inline Flagged<FourierTensor3> fourier_projection(const FourierTensor3& u, const FourierTensor3& x) {
  if (u.n1 != x.n1 || u.n3 != x.n3) {
    throw DimensionError("proj: basis " + Tensor3::shape_string(u.n1, u.n2, u.n3) + " incompatible with " +
                         Tensor3::shape_string(x.n1, x.n2, x.n3));
  }
  bool flagged = false;
  auto out = detail::map_unique_slices(x.n1, x.n2, x.n3, [&](Index k, bool real) {
    return detail::project_slice(u[k], x[k], real, flagged);
  });
  return {std::move(out), flagged};
}

/// Projection U * (U^T * U)^-1 * U^T * x, regularized when U^T * U is near singular.
inline Flagged<Tensor3> proj_flagged(const Tensor3& u, const Tensor3& x) {
  if (u.n1() != x.n1() || u.n3() != x.n3()) throw DimensionError("proj: basis " + u.shape() + " incompatible with " + x.shape());
  auto p = fourier_projection(fft3(u), fft3(x));
  return {ifft3(p.value), p.regularized};
}

inline Tensor3 proj(const Tensor3& u, const Tensor3& x) { return proj_flagged(u, x).value; }

/// Projection onto the orthogonal complement of t-span(u).
inline Tensor3 proj_perp(const Tensor3& u, const Tensor3& x) { return x - proj(u, x); }

/// t-QR orthonormalization: lateral slices replaced by an orthonormal basis of
/// the same t-span (slice-wise thin QR). Requires n2 <= n1.
inline FourierTensor3 fourier_orthonormalize(const FourierTensor3& u) {
  if (u.n2 > u.n1) {
    throw DimensionError("orthonormalize: " + std::to_string(u.n2) + " lateral slices exceed n1 = " + std::to_string(u.n1));
  }
  return detail::map_unique_slices(u.n1, u.n2, u.n3, [&](Index k, bool real) { return detail::orthonormal_slice(u[k], real); });
}

inline Tensor3 torthonormalize(const Tensor3& u) { return ifft3(fourier_orthonormalize(fft3(u))); }

// ---------------------------------------------------------------------------
// Incoherence measures
// ---------------------------------------------------------------------------

namespace detail {

inline double coherence(const Tensor3& factor, const char* op) {
  require_positive_shape(factor, op);
  const Index n = factor.n1();
  const Index r = factor.n2();
  if (r > n) throw DimensionError(std::string(op) + ": factor has more lateral slices than rows (" + factor.shape() + ")");
  const FourierTensor3 q = fourier_orthonormalize(fft3(factor));
  double worst = 0.0;
  for (Index k = 0; k < unique_slice_count(q.n3); ++k) worst = std::max(worst, q[k].rowwise().squaredNorm().maxCoeff());
  return static_cast<double>(n) / static_cast<double>(r) * worst;
}

}  // namespace detail

/// Tensor-column incoherence (N1/r) max_{i,k} ||U_k^H e_i||^2, after orthonormalizing u.
inline double coherence_u(const Tensor3& u_factor) { return detail::coherence(u_factor, "coherence_u"); }

/// Tensor-row incoherence (N2/r) max_{j,k} ||V_k^H e_j||^2, after orthonormalizing v.
inline double coherence_v(const Tensor3& v_factor) { return detail::coherence(v_factor, "coherence_v"); }

/// max over lateral index i and slice k of sum_j |V^T(i,j,k)|^2 in the Fourier domain.
inline double xi0(const Tensor3& v_factor) {
  detail::require_positive_shape(v_factor, "xi0");
  const FourierTensor3 f = fft3(v_factor);
  double worst = 0.0;
  for (Index k = 0; k < unique_slice_count(f.n3); ++k) worst = std::max(worst, f[k].colwise().squaredNorm().maxCoeff());
  return worst;
}

}  // namespace rfmap
