#pragma once

// Transferability and explainability statistics: two-sample and pseudo-1D
// Kolmogorov-Smirnov distances, OLS with t-test p-values, and timestep Grad-CAM.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "irrig/classifiers/transformer.hpp"
#include "irrig/core/error.hpp"
#include "irrig/core/parallel.hpp"
#include "irrig/unmix.hpp"

namespace irrig {

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov

/// Step function F(x) = fraction of samples <= x.
class EmpiricalCDF {
 public:
  explicit EmpiricalCDF(std::vector<double> values) : sorted_(std::move(values)) {
    if (sorted_.empty()) throw NumericError("EmpiricalCDF: empty sample");
    std::sort(sorted_.begin(), sorted_.end());
  }
  double operator()(double x) const {
    const auto n = std::upper_bound(sorted_.begin(), sorted_.end(), x) - sorted_.begin();
    return static_cast<double>(n) / static_cast<double>(sorted_.size());
  }
  const std::vector<double>& sorted() const { return sorted_; }

 private:
  std::vector<double> sorted_;
};

/// sup_x |F_A(x) - F_B(x)|, evaluated exactly at every point of the merged support.
inline double ks_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw NumericError("ks_1d: empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() || j < y.size()) {
    const double v = j == y.size() || (i < x.size() && x[i] <= y[j]) ? x[i] : y[j];
    while (i < x.size() && x[i] <= v) ++i;
    while (j < y.size() && y[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return d;
}

/// Euclidean composition of per-dimension KS statistics over score columns.
inline double ks_pseudo_1d(const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols()) throw ShapeError("ks_pseudo_1d: score dimension mismatch");
  double s = 0.0;
  for (Index k = 0; k < a.cols(); ++k) {
    const VectorXd ca = a.col(k), cb = b.col(k);
    const double d = ks_1d({ca.data(), static_cast<std::size_t>(ca.size())}, {cb.data(), static_cast<std::size_t>(cb.size())});
    s += d * d;
  }
  return std::sqrt(s);
}

struct KSReport {
  std::vector<std::string> regions;
  MatrixXd matrix;     // R x R, symmetric, zero diagonal
  VectorXd row_means;  // mean over the other regions
};

/// Pairwise pseudo-1D KS distances between regions in the first K dimensions of `basis`.
/// Each region's samples are rows (samples x T) of one class.
inline KSReport region_similarity_matrix(const std::map<std::string, MatrixXd>& samples, const PCBasis& basis,
                                         Index K = 10) {
  if (K < 1 || K > basis.dims()) throw NumericError("region_similarity_matrix: K exceeds basis dimensions");
  KSReport rep;
  std::vector<MatrixXd> scores;
  for (const auto& [name, X] : samples) {
    if (X.rows() < 2) throw NumericError("region_similarity_matrix: region '" + name + "' has fewer than 2 samples");
    rep.regions.push_back(name);
    scores.push_back(basis.project(X).leftCols(K));
  }
  const std::size_t R = scores.size();
  rep.matrix = MatrixXd::Zero(static_cast<Index>(R), static_cast<Index>(R));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = i + 1; j < R; ++j) pairs.emplace_back(i, j);
  std::vector<double> values(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t k) { values[k] = ks_pseudo_1d(scores[pairs[k].first], scores[pairs[k].second]); });
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto i = static_cast<Index>(pairs[k].first), j = static_cast<Index>(pairs[k].second);
    rep.matrix(i, j) = rep.matrix(j, i) = values[k];
  }
  rep.row_means = VectorXd::Zero(static_cast<Index>(R));
  if (R > 1) rep.row_means = rep.matrix.rowwise().sum() / static_cast<double>(R - 1);
  return rep;
}

// ---------------------------------------------------------------------------
// Ordinary least squares

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300, eps = 1e-15;
  double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lbt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(lbt) * detail::beta_cf(a, b, x) / a;
  return 1.0 - std::exp(lbt) * detail::beta_cf(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
inline double t_two_sided_p(double t, double dof) {
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

struct OLSReport {
  std::vector<std::string> names;  // "intercept" first when fitted
  VectorXd coefficients, std_errors, t_stats, p_values;
  double r_squared = 0.0;
  Index n = 0;
  double dof = 0.0;
  VectorXd residuals;
};

/// Least squares via column-pivoting QR, standard errors from s^2 (X'X)^-1 and two-sided
/// t-test p-values with n - p - 1 degrees of freedom (n - p without an intercept).
inline OLSReport ols_fit(const MatrixXd& X, const VectorXd& y, std::vector<std::string> names = {},
                         bool intercept = true) {
  const Index n = X.rows(), p = X.cols();
  if (y.size() != n) throw ShapeError("ols_fit: response length mismatch");
  if (names.empty())
    for (Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j));
  if (static_cast<Index>(names.size()) != p) throw ShapeError("ols_fit: one name per column required");
  MatrixXd A(n, p + (intercept ? 1 : 0));
  if (intercept) {
    A.col(0).setOnes();
    A.rightCols(p) = X;
    names.insert(names.begin(), "intercept");
  } else {
    A = X;
  }
  const Index q = A.cols();
  if (n <= q) throw NumericError("ols_fit: need more observations than coefficients");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < q) {
    std::string cols;
    const auto& perm = qr.colsPermutation().indices();
    for (Index k = qr.rank(); k < q; ++k) cols += (cols.empty() ? "" : ", ") + names[static_cast<std::size_t>(perm(k))];
    throw NumericError("ols_fit: design matrix is rank deficient; collinear column(s): " + cols);
  }
  OLSReport rep;
  rep.names = std::move(names);
  rep.n = n;
  rep.dof = static_cast<double>(n - q);
  rep.coefficients = qr.solve(y);
  rep.residuals = y - A * rep.coefficients;
  const double ssr = rep.residuals.squaredNorm();
  const double s2 = ssr / rep.dof;
  const MatrixXd cov = (A.transpose() * A).inverse() * s2;
  rep.std_errors = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  rep.t_stats.resize(q);
  rep.p_values.resize(q);
  for (Index j = 0; j < q; ++j) {
    const double b = rep.coefficients(j), se = rep.std_errors(j);
    const double t = se > 0 ? b / se : (b == 0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), b));
    rep.t_stats(j) = t;
    rep.p_values(j) = t_two_sided_p(t, rep.dof);
  }
  const double centered = intercept ? (y.array() - y.mean()).matrix().squaredNorm() : y.squaredNorm();
  rep.r_squared = centered > 0 ? std::clamp(1.0 - ssr / centered, 0.0, 1.0) : 1.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Grad-CAM

struct SaliencyMap {
  std::vector<double> importance;  // T values in [0, 1]
  bool all_zero = false;
};

/// Min-max normalization; a constant nonzero map becomes all ones, an all-zero map is flagged.
inline SaliencyMap normalize_saliency(SaliencyMap map) {
  const auto [lo, hi] = std::minmax_element(map.importance.begin(), map.importance.end());
  const double a = *lo, b = *hi;
  if (b <= 0.0) {
    std::fill(map.importance.begin(), map.importance.end(), 0.0);
    map.all_zero = true;
  } else if (b - a <= 1e-12 * b) {
    std::fill(map.importance.begin(), map.importance.end(), 1.0);
  } else {
    for (auto& v : map.importance) v = (v - a) / (b - a);
  }
  return map;
}

/// A = encoder output (T x d), alpha_k = mean_t dlogit/dA[t,k],
/// importance(t) = max(0, sum_k alpha_k A[t,k]), min-max normalized.
/// Needs the variant whose pooled encoder output feeds the logit directly.
inline SaliencyMap grad_cam(const TransformerNet& net, std::span<const double> standardized_sample) {
  if (net.config().dense != 0) throw NumericError("grad_cam: needs the network without the penultimate dense layer");
  const std::size_t T = net.config().timesteps, d = net.config().d_model;
  TransformerWorkspace ws;
  ws.resize(net.config());
  net.forward(standardized_sample, ws);
  net.backward(1.0, ws, {});
  std::vector<double> alpha(d, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < d; ++k) alpha[k] += ws.da2[t * d + k];
  for (auto& a : alpha) a /= static_cast<double>(T);
  SaliencyMap map;
  map.importance.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += alpha[k] * ws.a2[t * d + k];
    map.importance[t] = std::max(0.0, s);
  }
  return normalize_saliency(std::move(map));
}

}  // namespace irrig
