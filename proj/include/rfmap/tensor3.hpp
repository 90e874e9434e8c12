#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "rfmap/errors.hpp"

namespace rfmap {

using Index = Eigen::Index;
using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXd;
using CMatrix = Eigen::MatrixXcd;

/// Dense real third-order array. Storage order is i fastest, then j, then k,
/// so every frontal slice T(:,:,k) is a contiguous column-major n1 x n2 block.
class Tensor3 {
 public:
  Tensor3() = default;

  Tensor3(Index n1, Index n2, Index n3, double fill = 0.0) : n1_(n1), n2_(n2), n3_(n3) {
    if (n1 <= 0 || n2 <= 0 || n3 <= 0) {
      throw DimensionError("Tensor3 dimensions must be positive, got " + shape_string(n1, n2, n3));
    }
    data_.assign(static_cast<std::size_t>(n1 * n2 * n3), fill);
  }

  static Tensor3 zeros(Index n1, Index n2, Index n3) { return Tensor3(n1, n2, n3, 0.0); }

  /// Identity tensor: frontal slice 0 is the n x n identity, all others zero.
  static Tensor3 identity(Index n, Index n3) {
    Tensor3 t(n, n, n3);
    for (Index i = 0; i < n; ++i) t(i, i, 0) = 1.0;
    return t;
  }

  Index n1() const noexcept { return n1_; }
  Index n2() const noexcept { return n2_; }
  Index n3() const noexcept { return n3_; }
  Index size() const noexcept { return static_cast<Index>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  std::string shape() const { return shape_string(n1_, n2_, n3_); }
  bool same_shape(const Tensor3& o) const noexcept { return n1_ == o.n1_ && n2_ == o.n2_ && n3_ == o.n3_; }

  double& operator()(Index i, Index j, Index k) noexcept { return data_[offset(i, j, k)]; }
  double operator()(Index i, Index j, Index k) const noexcept { return data_[offset(i, j, k)]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Eigen::Map<Matrix> slice(Index k) noexcept { return {data_.data() + k * n1_ * n2_, n1_, n2_}; }
  Eigen::Map<const Matrix> slice(Index k) const noexcept { return {data_.data() + k * n1_ * n2_, n1_, n2_}; }

  /// Copies tube T(i,j,:).
  std::vector<double> tube(Index i, Index j) const {
    std::vector<double> out(static_cast<std::size_t>(n3_));
    for (Index k = 0; k < n3_; ++k) out[static_cast<std::size_t>(k)] = (*this)(i, j, k);
    return out;
  }

  void set_tube(Index i, Index j, std::span<const double> values) {
    if (static_cast<Index>(values.size()) != n3_) {
      throw DimensionError("tube length " + std::to_string(values.size()) + " does not match n3 = " +
                           std::to_string(n3_));
    }
    for (Index k = 0; k < n3_; ++k) (*this)(i, j, k) = values[static_cast<std::size_t>(k)];
  }

  /// Lateral slices T(:, cols, :) stacked in the given order.
  Tensor3 lateral(std::span<const Index> cols) const {
    Tensor3 out(n1_, static_cast<Index>(cols.size()), n3_);
    for (Index k = 0; k < n3_; ++k)
      for (std::size_t c = 0; c < cols.size(); ++c) out.slice(k).col(static_cast<Index>(c)) = slice(k).col(cols[c]);
    return out;
  }

  Tensor3 lateral(Index col) const { return lateral(std::span<const Index>(&col, 1)); }

  /// Horizontal slices T(rows, :, :) stacked in the given order.
  Tensor3 horizontal(std::span<const Index> rows) const {
    Tensor3 out(static_cast<Index>(rows.size()), n2_, n3_);
    for (Index k = 0; k < n3_; ++k)
      for (std::size_t r = 0; r < rows.size(); ++r) out.slice(k).row(static_cast<Index>(r)) = slice(k).row(rows[r]);
    return out;
  }

  double norm() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  double squared_norm() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
  }

  double max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor3& operator+=(const Tensor3& o) {
    require_same_shape(o, "+=");
    for (std::size_t n = 0; n < data_.size(); ++n) data_[n] += o.data_[n];
    return *this;
  }

  Tensor3& operator-=(const Tensor3& o) {
    require_same_shape(o, "-=");
    for (std::size_t n = 0; n < data_.size(); ++n) data_[n] -= o.data_[n];
    return *this;
  }

  Tensor3& operator*=(double a) noexcept {
    for (double& v : data_) v *= a;
    return *this;
  }

  friend Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
  friend Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }
  friend Tensor3 operator*(double s, Tensor3 a) { return a *= s; }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

  static std::string shape_string(Index n1, Index n2, Index n3) {
    std::ostringstream os;
    os << n1 << "x" << n2 << "x" << n3;
    return os.str();
  }

 private:
  std::size_t offset(Index i, Index j, Index k) const noexcept {
    return static_cast<std::size_t>(i + n1_ * (j + n2_ * k));
  }

  void require_same_shape(const Tensor3& o, const char* op) const {
    if (!same_shape(o)) throw DimensionError(std::string("operator") + op + ": shapes " + shape() + " and " + o.shape());
  }

  Index n1_ = 0;
  Index n2_ = 0;
  Index n3_ = 0;
  std::vector<double> data_;
};

/// Largest absolute elementwise difference between two same-shape tensors.
inline double max_abs_diff(const Tensor3& a, const Tensor3& b) {
  if (!a.same_shape(b)) throw DimensionError("max_abs_diff: shapes " + a.shape() + " and " + b.shape());
  double m = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t n = 0; n < da.size(); ++n) m = std::max(m, std::abs(da[n] - db[n]));
  return m;
}

/// Relative Frobenius error ||a - b|| / ||b|| (absolute when b is zero).
inline double relative_error(const Tensor3& a, const Tensor3& b) {
  const double denom = b.norm();
  const double num = (a - b).norm();
  return denom > 0.0 ? num / denom : num;
}

/// Stacks lateral slices side by side.
inline Tensor3 concat_lateral(const Tensor3& a, const Tensor3& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.n1() != b.n1() || a.n3() != b.n3())
    throw DimensionError("concat_lateral: shapes " + a.shape() + " and " + b.shape());
  Tensor3 out(a.n1(), a.n2() + b.n2(), a.n3());
  for (Index k = 0; k < a.n3(); ++k) {
    out.slice(k).leftCols(a.n2()) = a.slice(k);
    out.slice(k).rightCols(b.n2()) = b.slice(k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fourier domain
// ---------------------------------------------------------------------------

/// Index of the slice holding the complex conjugate of slice k for real data.
inline constexpr Index conjugate_partner(Index k, Index n3) noexcept { return (n3 - k) % n3; }

/// Slices 0..n3/2 determine a real tensor's spectrum.
inline constexpr Index unique_slice_count(Index n3) noexcept { return n3 / 2 + 1; }

/// Slices that equal their own conjugate partner hold real matrices.
inline constexpr bool is_self_conjugate(Index k, Index n3) noexcept { return conjugate_partner(k, n3) == k; }

/// Mode-3 DFT of a Tensor3: n3 complex frontal slices of size n1 x n2.
struct FourierTensor3 {
  Index n1 = 0;
  Index n2 = 0;
  Index n3 = 0;
  std::vector<CMatrix> slices;

  FourierTensor3() = default;
  FourierTensor3(Index r, Index c, Index depth)
      : n1(r), n2(c), n3(depth), slices(static_cast<std::size_t>(depth), CMatrix::Zero(r, c)) {}

  CMatrix& operator[](Index k) { return slices[static_cast<std::size_t>(k)]; }
  const CMatrix& operator[](Index k) const { return slices[static_cast<std::size_t>(k)]; }

  /// Overwrites slices above n3/2 with the conjugates of their partners.
  void mirror_upper_half() {
    for (Index k = unique_slice_count(n3); k < n3; ++k) (*this)[k] = (*this)[conjugate_partner(k, n3)].conjugate();
  }
};

namespace detail {

inline Eigen::FFT<double>& tube_fft() {
  thread_local Eigen::FFT<double> fft;
  return fft;
}

}  // namespace detail

/// Unnormalized forward DFT along mode 3. Slices 0..n3/2 are kept and the rest
/// are filled by conjugate symmetry, which is exact for real input.
inline FourierTensor3 fft3(const Tensor3& t) {
  FourierTensor3 f(t.n1(), t.n2(), t.n3());
  const Index half = unique_slice_count(t.n3());
  std::vector<double> tube(static_cast<std::size_t>(t.n3()));
  std::vector<Complex> spectrum;
  auto& fft = detail::tube_fft();
  for (Index j = 0; j < t.n2(); ++j) {
    for (Index i = 0; i < t.n1(); ++i) {
      for (Index k = 0; k < t.n3(); ++k) tube[static_cast<std::size_t>(k)] = t(i, j, k);
      if (t.n3() == 1) {
        spectrum.assign(1, Complex(tube[0], 0.0));  // kissfft mishandles length 1
      } else {
        fft.fwd(spectrum, tube);
      }
      for (Index k = 0; k < half; ++k) f[k](i, j) = spectrum[static_cast<std::size_t>(k)];
    }
  }
  for (Index k = 0; k < half; ++k)
    if (is_self_conjugate(k, t.n3())) f[k] = f[k].real().cast<Complex>();
  f.mirror_upper_half();
  return f;
}

/// Inverse DFT along mode 3 with 1/n3 scaling, keeping the real part.
/// When `max_imag` is given it receives the largest discarded imaginary part.
inline Tensor3 ifft3(const FourierTensor3& f, double* max_imag = nullptr) {
  Tensor3 t(f.n1, f.n2, f.n3);
  std::vector<Complex> spectrum(static_cast<std::size_t>(f.n3));
  std::vector<Complex> tube;
  auto& fft = detail::tube_fft();
  double worst = 0.0;
  for (Index j = 0; j < f.n2; ++j) {
    for (Index i = 0; i < f.n1; ++i) {
      for (Index k = 0; k < f.n3; ++k) spectrum[static_cast<std::size_t>(k)] = f[k](i, j);
      if (f.n3 == 1) {
        tube = spectrum;
      } else {
        fft.inv(tube, spectrum);
      }
      for (Index k = 0; k < f.n3; ++k) {
        t(i, j, k) = tube[static_cast<std::size_t>(k)].real();
        worst = std::max(worst, std::abs(tube[static_cast<std::size_t>(k)].imag()));
      }
    }
  }
  if (max_imag) *max_imag = worst;
  return t;
}

}  // namespace rfmap
