#pragma once

// Temporal mixture modeling: principal components of a phenology cube, endmember
// selection and unconstrained least-squares inversion with RMS accounting.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "irrig/core/error.hpp"
#include "irrig/core/parallel.hpp"
#include "irrig/raster_io.hpp"
#include "irrig/timeseries.hpp"

namespace irrig {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// P pixels x T timesteps with the (row, col) of each pixel.
struct PhenologyCube {
  MatrixXd X;
  std::vector<std::pair<int, int>> pixels;

  Index pixel_count() const { return X.rows(); }
  Index timesteps() const { return X.cols(); }
};

/// Every pixel of one band of a fully valid stack.
inline PhenologyCube cube_from_stack(const RasterStack& stack, int band = 0) {
  PhenologyCube cube;
  const Index P = static_cast<Index>(stack.pixels());
  cube.X.resize(P, stack.timesteps());
  cube.pixels.reserve(static_cast<std::size_t>(P));
  for (int r = 0; r < stack.height(); ++r)
    for (int c = 0; c < stack.width(); ++c) {
      const Index p = static_cast<Index>(r) * stack.width() + c;
      for (int t = 0; t < stack.timesteps(); ++t) {
        if (!stack.is_valid(t, band, r, c)) throw NumericError("cube_from_stack: stack has invalid cells");
        cube.X(p, t) = stack.at(t, band, r, c);
      }
      cube.pixels.emplace_back(r, c);
    }
  return cube;
}

struct PCBasis {
  VectorXd mean;         // T
  MatrixXd components;   // T x K, orthonormal columns
  VectorXd eigenvalues;  // K, non-increasing (variance with P - 1 denominator)
  VectorXd explained;    // K, fraction of total variance

  Index dims() const { return components.cols(); }

  MatrixXd project(const MatrixXd& X) const { return (X.rowwise() - mean.transpose()) * components; }
};

struct PCResult {
  PCBasis basis;
  MatrixXd scores;  // P x K
};

/// Mean-centered SVD. Each component is signed so its largest-magnitude entry is positive.
inline PCResult pc_transform(const MatrixXd& X, Index K) {
  const Index P = X.rows(), T = X.cols();
  if (K < 1 || K > P || K > T) throw NumericError("pc_transform: need 1 <= K <= min(P, T)");
  PCResult out;
  out.basis.mean = X.colwise().mean().transpose();
  const MatrixXd centered = X.rowwise() - out.basis.mean.transpose();
  const double dof = P > 1 ? static_cast<double>(P - 1) : 1.0;
  Eigen::BDCSVD<MatrixXd> svd(centered, Eigen::ComputeThinV);
  const VectorXd sv = svd.singularValues();
  const double total = sv.squaredNorm() / dof;
  if (!(total > 0)) throw NumericError("pc_transform: cube has zero variance");
  MatrixXd V = svd.matrixV().leftCols(K);
  for (Index k = 0; k < K; ++k) {
    const double peak = V.col(k).cwiseAbs().maxCoeff();
    Index first = 0;
    while (std::abs(V(first, k)) < peak * (1.0 - 1e-12)) ++first;
    if (V(first, k) < 0) V.col(k) = -V.col(k);
  }
  out.basis.components = V;
  out.basis.eigenvalues = sv.head(K).array().square() / dof;
  out.basis.explained = out.basis.eigenvalues / total;
  out.scores = centered * V;
  return out;
}

struct TemporalEndmembers {
  MatrixXd E;  // T x M
  std::vector<std::string> names;

  Index count() const { return E.cols(); }
};

struct ManualSelection {
  std::vector<Index> pixels;
};

/// Greedy farthest-point picking in the first `dims` score dimensions, seeded by the
/// pixel with the largest score norm.
struct HullExtremes {
  Index count = 4;
  Index dims = 3;
};

using EndmemberStrategy = std::variant<ManualSelection, HullExtremes>;

/// Indices chosen by the hull-extremes heuristic: each step adds the pixel whose minimum
/// distance to the already chosen set is largest (ties to the lower index).
inline std::vector<Index> hull_extreme_indices(const MatrixXd& scores, Index count, Index dims) {
  const Index P = scores.rows();
  if (count > P) throw NumericError("select_endmembers: more endmembers than pixels");
  if (dims < 1 || dims > scores.cols()) throw NumericError("select_endmembers: bad score dimension count");
  const MatrixXd S = scores.leftCols(dims);
  std::vector<Index> chosen;
  Index seed = 0;
  S.rowwise().squaredNorm().maxCoeff(&seed);
  chosen.push_back(seed);
  VectorXd nearest = (S.rowwise() - S.row(seed)).rowwise().squaredNorm();
  while (static_cast<Index>(chosen.size()) < count) {
    Index next = 0;
    double best = -1.0;
    for (Index p = 0; p < P; ++p)
      if (nearest(p) > best) {
        best = nearest(p);
        next = p;
      }
    chosen.push_back(next);
    nearest = nearest.cwiseMin((S.rowwise() - S.row(next)).rowwise().squaredNorm());
  }
  return chosen;
}

inline TemporalEndmembers select_endmembers(const MatrixXd& X, const MatrixXd& scores,
                                            const EndmemberStrategy& strategy) {
  std::vector<Index> idx;
  if (const auto* manual = std::get_if<ManualSelection>(&strategy)) {
    idx = manual->pixels;
    std::set<Index> seen;
    for (Index i : idx) {
      if (i < 0 || i >= X.rows()) throw NumericError("select_endmembers: pixel index out of range");
      if (!seen.insert(i).second) throw NumericError("select_endmembers: duplicate pixel index");
    }
  } else {
    const auto& hull = std::get<HullExtremes>(strategy);
    idx = hull_extreme_indices(scores, hull.count, hull.dims);
  }
  if (idx.empty()) throw NumericError("select_endmembers: no endmembers selected");
  TemporalEndmembers em;
  em.E.resize(X.cols(), static_cast<Index>(idx.size()));
  for (std::size_t m = 0; m < idx.size(); ++m) {
    em.E.col(static_cast<Index>(m)) = X.row(idx[m]).transpose();
    em.names.push_back("tEM" + std::to_string(m + 1));
  }
  return em;
}

struct UnmixResult {
  MatrixXd fractions;  // P x M, unconstrained
  VectorXd rms;        // P, ||x - E f|| / sqrt(T)
};

/// Unconstrained least squares through a single QR factorization of E shared by all pixels.
inline UnmixResult unmix_lsq(const MatrixXd& X, const TemporalEndmembers& em) {
  const Index T = em.E.rows(), M = em.E.cols();
  if (X.cols() != T) throw ShapeError("unmix_lsq: cube and endmember lengths differ");
  if (M < 1 || T < M) throw NumericError("unmix_lsq: need 1 <= M <= T");
  if (!em.E.allFinite()) throw NumericError("unmix_lsq: endmembers contain non-finite values");
  const Eigen::ColPivHouseholderQR<MatrixXd> qr(em.E);
  if (qr.rank() < M) throw NumericError("unmix_lsq: endmember matrix is rank deficient");
  UnmixResult out;
  out.fractions = qr.solve(X.transpose()).transpose();
  const MatrixXd residual = X - out.fractions * em.E.transpose();
  out.rms = residual.rowwise().norm() / std::sqrt(static_cast<double>(T));
  return out;
}

struct RmsCdf {
  std::vector<std::pair<double, double>> at_thresholds;  // (threshold, fraction of pixels with rms <= threshold)
  std::vector<std::pair<double, double>> deciles;        // (quantile 0.1..0.9, rms value)
};

inline RmsCdf rms_cdf(const VectorXd& rms, const std::vector<double>& thresholds) {
  if (rms.size() == 0) throw NumericError("rms_cdf: empty result");
  std::vector<double> sorted(rms.data(), rms.data() + rms.size());
  std::sort(sorted.begin(), sorted.end());
  RmsCdf out;
  for (double th : thresholds) {
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), th) - sorted.begin();
    out.at_thresholds.emplace_back(th, static_cast<double>(n) / static_cast<double>(sorted.size()));
  }
  for (int d = 1; d <= 9; ++d) out.deciles.emplace_back(d / 10.0, percentile_sorted(sorted, d * 10.0));
  return out;
}

}  // namespace irrig
