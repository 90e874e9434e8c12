#pragma once

// Completion of tubal-sampled tensors.
//
// complete_tnn minimizes ||P_Omega(Y - X)||_F^2 + lambda * TNN(X). Because the
// sampling mask is constant along mode 3, the problem separates into one masked
// nuclear-norm problem per Fourier slice; each is solved by ADMM alternating
// singular value thresholding with a mask-constrained least-squares step.
//
// The ADMM penalty starts at admm_rho * lambda_s / sigma_max(P_Omega(Y_k)) and
// grows geometrically (inexact augmented Lagrangian style). A fixed penalty
// stalls for small lambda: each step removes only lambda/rho of spectral mass.
// The solver keeps the best iterate seen so far, so the reported objective
// never increases.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rfmap/errors.hpp"
#include "rfmap/samples.hpp"
#include "rfmap/talgebra.hpp"
#include "rfmap/tensor3.hpp"

namespace rfmap {

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kNoiseFloorDbm = -110.0;

struct CompletionConfig {
  std::optional<double> lambda;  ///< default 0.1 * ||P_Omega(Y)||_F / sqrt(n1 n2)
  double admm_rho = 1.0;         ///< initial penalty in units of lambda_s / sigma_max
  double rho_growth = 1.2;
  double rho_max_factor = 1e10;  ///< cap on rho relative to its initial value
  int max_iters = 500;
  double rel_tol = 1e-6;
  std::optional<Index> target_rank;                 ///< AltMin rank for complete_mc_flat
  std::optional<double> floor_dbm = kNoiseFloorDbm;  ///< clamp applied to the output

  void validate() const {
    if (lambda && !(*lambda > 0.0)) throw InvalidArgument("CompletionConfig: lambda must be > 0");
    if (!(admm_rho > 0.0)) throw InvalidArgument("CompletionConfig: admm_rho must be > 0");
    if (!(rho_growth >= 1.0)) throw InvalidArgument("CompletionConfig: rho_growth must be >= 1");
    if (!(rho_max_factor >= 1.0)) throw InvalidArgument("CompletionConfig: rho_max_factor must be >= 1");
    if (max_iters < 1) throw InvalidArgument("CompletionConfig: max_iters must be >= 1");
    if (!(rel_tol > 0.0)) throw InvalidArgument("CompletionConfig: rel_tol must be > 0");
    if (target_rank && *target_rank < 1) throw InvalidArgument("CompletionConfig: target_rank must be >= 1");
  }
};

struct ConvergenceReport {
  int iterations = 0;          ///< largest iteration count over the subproblems
  bool converged = true;       ///< false if any subproblem hit max_iters
  double final_residual = 0.0; ///< largest relative primal residual ||X - Z|| / ||X||
  double objective = 0.0;      ///< objective of the returned estimate
  double lambda = 0.0;
  double max_imag_residue = 0.0;
  std::vector<double> objective_history;  ///< objective of the returned iterate after each step
};

struct CompletionResult {
  Tensor3 estimate;
  ConvergenceReport report;
};

/// Default regularization weight for a sample set.
inline double default_lambda(const TubeSampleSet& samples) {
  double energy = 0.0;
  for (const auto& e : samples.entries())
    for (double v : e.tube) energy += v * v;
  return 0.1 * std::sqrt(energy) / std::sqrt(static_cast<double>(samples.n1() * samples.n2()));
}

// ---------------------------------------------------------------------------
// Singular value thresholding
// ---------------------------------------------------------------------------

template <class Scalar>
struct Thresholded {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> value;
  double nuclear_norm = 0.0;  ///< of the thresholded matrix
};

/// U max(S - tau, 0) V^* for real or complex matrices.
template <class Scalar>
Thresholded<Scalar> svt_with_norm(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& m, double tau) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (tau < 0.0) throw InvalidArgument("svt: tau must be non-negative");
  Eigen::BDCSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericError("svt: SVD failed");
  const Eigen::VectorXd& s = svd.singularValues();
  Index keep = 0;
  while (keep < s.size() && s(keep) > tau) ++keep;
  Thresholded<Scalar> out;
  if (keep == 0) {
    out.value = Mat::Zero(m.rows(), m.cols());
    return out;
  }
  const Eigen::VectorXd shrunk = (s.head(keep).array() - tau).matrix();
  out.value = svd.matrixU().leftCols(keep) * shrunk.template cast<Scalar>().asDiagonal() * svd.matrixV().leftCols(keep).adjoint();
  out.nuclear_norm = shrunk.sum();
  return out;
}

inline CMatrix svt(const CMatrix& m, double tau) { return svt_with_norm<Complex>(m, tau).value; }
inline Matrix svt(const Matrix& m, double tau) { return svt_with_norm<double>(m, tau).value; }

// ---------------------------------------------------------------------------
// Masked nuclear-norm ADMM
// ---------------------------------------------------------------------------

namespace detail {

template <class Scalar>
struct SliceSolution {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> estimate;
  std::vector<double> history;  ///< incumbent objective after each iteration
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
};

template <class Scalar>
double masked_misfit(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& y,
                     const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x, const BoolArray& mask) {
  double s = 0.0;
  for (Index j = 0; j < y.cols(); ++j)
    for (Index i = 0; i < y.rows(); ++i)
      if (mask(i, j)) s += std::norm(y(i, j) - x(i, j));
  return s;
}

/// min_X ||P(Y - X)||^2 + lambda_s ||X||_* on one slice.
template <class Scalar>
SliceSolution<Scalar> admm_nuclear(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& y, const BoolArray& mask,
                                   double lambda_s, const CompletionConfig& cfg) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  SliceSolution<Scalar> sol;
  Mat x = Mat::Zero(y.rows(), y.cols());
  for (Index j = 0; j < y.cols(); ++j)
    for (Index i = 0; i < y.rows(); ++i)
      if (mask(i, j)) x(i, j) = y(i, j);

  Eigen::BDCSVD<Mat> top(x);
  const double sigma_max = top.singularValues().size() ? top.singularValues()(0) : 0.0;
  sol.estimate = Mat::Zero(y.rows(), y.cols());
  double best = masked_misfit<Scalar>(y, sol.estimate, mask);
  if (sigma_max == 0.0) {
    sol.converged = true;
    sol.history.push_back(best);
    return sol;
  }

  const double rho0 = cfg.admm_rho * lambda_s / sigma_max;
  const double rho_cap = rho0 * cfg.rho_max_factor;
  double rho = rho0;
  Mat u = Mat::Zero(y.rows(), y.cols());
  for (int it = 1; it <= cfg.max_iters; ++it) {
    auto z = svt_with_norm<Scalar>(x + u, lambda_s / rho);
    Mat x_next = z.value - u;
    for (Index j = 0; j < y.cols(); ++j)
      for (Index i = 0; i < y.rows(); ++i)
        if (mask(i, j)) x_next(i, j) = (Scalar(2.0) * y(i, j) + Scalar(rho) * (z.value(i, j) - u(i, j))) / Scalar(2.0 + rho);
    u += x_next - z.value;

    const double x_norm = std::max(x_next.norm(), 1e-300);
    const double change = (x_next - x).norm() / std::max(x.norm(), 1e-300);
    const double primal = (x_next - z.value).norm() / x_norm;
    x = std::move(x_next);

    const double objective = masked_misfit<Scalar>(y, z.value, mask) + lambda_s * z.nuclear_norm;
    if (objective < best) {
      best = objective;
      sol.estimate = z.value;
    }
    sol.history.push_back(best);
    sol.iterations = it;
    sol.residual = primal;
    if (change < cfg.rel_tol && primal < cfg.rel_tol) {
      sol.converged = true;
      break;
    }
    const double rho_next = std::min(rho * cfg.rho_growth, rho_cap);
    u *= Scalar(rho / rho_next);
    rho = rho_next;
  }
  return sol;
}

/// Folds per-subproblem incumbent histories into one objective trace.
inline std::vector<double> combine_histories(const std::vector<std::vector<double>>& histories, const std::vector<double>& weights) {
  std::size_t len = 0;
  for (const auto& h : histories) len = std::max(len, h.size());
  std::vector<double> out(len, 0.0);
  for (std::size_t s = 0; s < histories.size(); ++s) {
    const auto& h = histories[s];
    if (h.empty()) continue;
    for (std::size_t t = 0; t < len; ++t) out[t] += weights[s] * h[std::min(t, h.size() - 1)];
  }
  return out;
}

inline void clamp_floor(Tensor3& t, const std::optional<double>& floor) {
  if (!floor) return;
  for (double& v : t.data()) v = std::max(v, *floor);
}

inline void require_finite(const Tensor3& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite values in the estimate");
}

inline void require_samples(const TubeSampleSet& s, const char* op) {
  if (s.empty()) throw InvalidArgument(std::string(op) + ": sample set is empty");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// TNN completion and baselines
// ---------------------------------------------------------------------------

inline CompletionResult complete_tnn(const TubeSampleSet& samples, const CompletionConfig& cfg = {}) {
  cfg.validate();
  detail::require_samples(samples, "complete_tnn");
  const double lambda = cfg.lambda.value_or(default_lambda(samples));
  const Index n1 = samples.n1(), n2 = samples.n2(), n3 = samples.n3();
  const BoolArray mask = samples.mask();
  const FourierTensor3 f = fft3(samples.zero_filled());
  // Parseval: ||P(Y - X)||^2 = (1/n3) sum_k ||P(Y_k - X_k)||^2 in the Fourier domain.
  const double lambda_s = lambda * static_cast<double>(n3);

  FourierTensor3 est(n1, n2, n3);
  ConvergenceReport report;
  report.lambda = lambda;
  std::vector<std::vector<double>> histories;
  std::vector<double> weights;
  for (Index k = 0; k < unique_slice_count(n3); ++k) {
    const double w = detail::slice_weight(k, n3) / static_cast<double>(n3);
    if (is_self_conjugate(k, n3)) {
      auto sol = detail::admm_nuclear<double>(f[k].real(), mask, lambda_s, cfg);
      est[k] = sol.estimate.cast<Complex>();
      report.iterations = std::max(report.iterations, sol.iterations);
      report.converged = report.converged && sol.converged;
      report.final_residual = std::max(report.final_residual, sol.residual);
      histories.push_back(std::move(sol.history));
    } else {
      auto sol = detail::admm_nuclear<Complex>(f[k], mask, lambda_s, cfg);
      est[k] = std::move(sol.estimate);
      report.iterations = std::max(report.iterations, sol.iterations);
      report.converged = report.converged && sol.converged;
      report.final_residual = std::max(report.final_residual, sol.residual);
      histories.push_back(std::move(sol.history));
    }
    weights.push_back(w);
  }
  est.mirror_upper_half();
  report.objective_history = detail::combine_histories(histories, weights);
  report.objective = report.objective_history.empty() ? 0.0 : report.objective_history.back();

  CompletionResult out{ifft3(est, &report.max_imag_residue), std::move(report)};
  detail::clamp_floor(out.estimate, cfg.floor_dbm);
  detail::require_finite(out.estimate, "complete_tnn");
  return out;
}

/// Objective ||P_Omega(Y - X)||_F^2 + lambda * TNN(X) of an estimate.
inline double tnn_objective(const TubeSampleSet& samples, const Tensor3& x, double lambda) {
  double misfit = 0.0;
  for (const auto& e : samples.entries())
    for (Index k = 0; k < samples.n3(); ++k) {
      const double d = e.tube[static_cast<std::size_t>(k)] - x(e.i, e.j, k);
      misfit += d * d;
    }
  return misfit + lambda * tnn(x);
}

/// Face-wise matrix completion: every frontal slice (one access point) is
/// completed on its own with the same mask and no cross-slice coupling.
inline CompletionResult complete_mc_facewise(const TubeSampleSet& samples, const CompletionConfig& cfg = {}) {
  cfg.validate();
  detail::require_samples(samples, "complete_mc_facewise");
  const double lambda = cfg.lambda.value_or(default_lambda(samples));
  const BoolArray mask = samples.mask();
  const Tensor3 y = samples.zero_filled();
  Tensor3 est(samples.n1(), samples.n2(), samples.n3());
  ConvergenceReport report;
  report.lambda = lambda;
  std::vector<std::vector<double>> histories;
  for (Index k = 0; k < y.n3(); ++k) {
    auto sol = detail::admm_nuclear<double>(Matrix(y.slice(k)), mask, lambda, cfg);
    est.slice(k) = sol.estimate;
    report.iterations = std::max(report.iterations, sol.iterations);
    report.converged = report.converged && sol.converged;
    report.final_residual = std::max(report.final_residual, sol.residual);
    histories.push_back(std::move(sol.history));
  }
  report.objective_history = detail::combine_histories(histories, std::vector<double>(histories.size(), 1.0));
  report.objective = report.objective_history.empty() ? 0.0 : report.objective_history.back();
  CompletionResult out{std::move(est), std::move(report)};
  detail::clamp_floor(out.estimate, cfg.floor_dbm);
  detail::require_finite(out.estimate, "complete_mc_facewise");
  return out;
}

// ---------------------------------------------------------------------------
// Flattened AltMin baseline
// ---------------------------------------------------------------------------

/// (n1 n2) x n3 matrix of tubes; row p = i + n1 * j.
inline Matrix flatten(const Tensor3& t) {
  Matrix m(t.n1() * t.n2(), t.n3());
  for (Index k = 0; k < t.n3(); ++k)
    for (Index j = 0; j < t.n2(); ++j)
      for (Index i = 0; i < t.n1(); ++i) m(i + t.n1() * j, k) = t(i, j, k);
  return m;
}

inline Tensor3 unflatten(const Matrix& m, Index n1, Index n2) {
  if (m.rows() != n1 * n2) throw DimensionError("unflatten: row count does not match grid");
  Tensor3 t(n1, n2, m.cols());
  for (Index k = 0; k < m.cols(); ++k)
    for (Index j = 0; j < n2; ++j)
      for (Index i = 0; i < n1; ++i) t(i, j, k) = m(i + n1 * j, k);
  return t;
}

struct AltMinResult {
  Matrix estimate;
  int iterations = 0;
  bool converged = false;
};

/// Alternating least squares for a rank-r factorization A B^T fitted to the
/// observed entries of `y`. Factors start from the truncated SVD of the
/// zero-filled matrix. Rows without any observation take the mean of the
/// observed rows' factors.
inline AltMinResult altmin_complete(const Matrix& y, const BoolArray& mask, Index rank, int max_iters, double rel_tol) {
  if (rank < 1 || rank > std::min(y.rows(), y.cols())) {
    throw InvalidArgument("complete_mc_flat: rank " + std::to_string(rank) + " exceeds min dimension " +
                          std::to_string(std::min(y.rows(), y.cols())));
  }
  if (mask.rows() != y.rows() || mask.cols() != y.cols()) throw DimensionError("altmin: mask shape mismatch");
  const Matrix filled = mask.select(y, Matrix::Zero(y.rows(), y.cols()));
  Eigen::BDCSVD<Matrix> svd(filled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericError("altmin: initial SVD failed");
  Matrix a = svd.matrixU().leftCols(rank) * svd.singularValues().head(rank).asDiagonal();
  Matrix b = svd.matrixV().leftCols(rank);
  const double ridge = 1e-12 * std::max(1.0, filled.squaredNorm());

  auto solve_rows = [&](Matrix& target, const Matrix& fixed, bool by_row) {
    const Index count = by_row ? y.rows() : y.cols();
    std::vector<bool> observed(static_cast<std::size_t>(count), false);
    for (Index p = 0; p < count; ++p) {
      Matrix gram = Matrix::Identity(rank, rank) * ridge;
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(rank);
      const Index other = by_row ? y.cols() : y.rows();
      bool any = false;
      for (Index q = 0; q < other; ++q) {
        const bool seen = by_row ? mask(p, q) : mask(q, p);
        if (!seen) continue;
        any = true;
        const auto f = fixed.row(q).transpose();
        gram.noalias() += f * f.transpose();
        rhs.noalias() += f * (by_row ? y(p, q) : y(q, p));
      }
      observed[static_cast<std::size_t>(p)] = any;
      if (any) target.row(p) = gram.ldlt().solve(rhs).transpose();
    }
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(rank);
    Index n_obs = 0;
    for (Index p = 0; p < count; ++p)
      if (observed[static_cast<std::size_t>(p)]) {
        mean += target.row(p);
        ++n_obs;
      }
    if (n_obs > 0) mean /= static_cast<double>(n_obs);
    for (Index p = 0; p < count; ++p)
      if (!observed[static_cast<std::size_t>(p)]) target.row(p) = mean;
  };

  AltMinResult out;
  Matrix prev = a * b.transpose();
  for (int it = 1; it <= max_iters; ++it) {
    solve_rows(a, b, true);
    solve_rows(b, a, false);
    Matrix cur = a * b.transpose();
    const double change = (cur - prev).norm() / std::max(prev.norm(), 1e-300);
    prev = std::move(cur);
    out.iterations = it;
    if (change < rel_tol) {
      out.converged = true;
      break;
    }
  }
  out.estimate = std::move(prev);
  return out;
}

/// Completion after flattening to a locations x access-points matrix; sampled
/// tubes are the observed rows.
inline CompletionResult complete_mc_flat(const TubeSampleSet& samples, const CompletionConfig& cfg) {
  cfg.validate();
  detail::require_samples(samples, "complete_mc_flat");
  if (!cfg.target_rank) throw InvalidArgument("complete_mc_flat: target_rank must be set");
  const Index n1 = samples.n1(), n2 = samples.n2(), n3 = samples.n3();
  const Matrix y = flatten(samples.zero_filled());
  BoolArray mask = BoolArray::Constant(n1 * n2, n3, false);
  for (const auto& e : samples.entries()) mask.row(e.i + n1 * e.j).setConstant(true);
  auto fit = altmin_complete(y, mask, *cfg.target_rank, cfg.max_iters, cfg.rel_tol);
  CompletionResult out{unflatten(fit.estimate, n1, n2), {}};
  out.report.iterations = fit.iterations;
  out.report.converged = fit.converged;
  detail::clamp_floor(out.estimate, cfg.floor_dbm);
  detail::require_finite(out.estimate, "complete_mc_flat");
  return out;
}

}  // namespace rfmap
