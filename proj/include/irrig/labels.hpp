#pragma once

// Label curation: polygon rasterization, median-series confirmation, Gaussian-mixture
// cluster cleaning and polygon-level train/val/test splits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "irrig/core/error.hpp"
#include "irrig/core/log.hpp"
#include "irrig/core/parallel.hpp"
#include "irrig/core/random.hpp"
#include "irrig/raster_io.hpp"
#include "irrig/timeseries.hpp"

namespace irrig {

struct PixelIndex {
  int row = 0;
  int col = 0;
  bool operator==(const PixelIndex&) const = default;
  auto operator<=>(const PixelIndex&) const = default;
};

/// Even-odd test of a point against every ring of a polygon (holes included).
inline bool point_in_polygon(const Polygon& poly, double x, double y) {
  bool inside = false;
  for (const auto& ring : poly.rings) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point& a = ring[i];
      const Point& b = ring[j];
      if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
    }
  }
  return inside;
}

/// Pixels (row, col) whose centers (col + 0.5, row + 0.5) fall inside the polygon.
inline std::vector<PixelIndex> rasterize_polygon(const Polygon& poly, int height, int width) {
  double xmin = std::numeric_limits<double>::infinity(), ymin = xmin;
  double xmax = -xmin, ymax = -xmin;
  for (const auto& ring : poly.rings)
    for (const auto& p : ring) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  std::vector<PixelIndex> out;
  const int r0 = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
  const int r1 = std::min(height - 1, static_cast<int>(std::ceil(ymax)));
  const int c0 = std::max(0, static_cast<int>(std::floor(xmin - 0.5)));
  const int c1 = std::min(width - 1, static_cast<int>(std::ceil(xmax)));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c)
      if (point_in_polygon(poly, c + 0.5, r + 0.5)) out.push_back({r, c});
  if (out.empty()) log::warn("polygon " + std::to_string(poly.id) + " covers no pixel centers");
  return out;
}

// ---------------------------------------------------------------------------
// Median-series confirmation

struct PolygonSeries {
  std::vector<double> median;
  std::vector<double> stddev;
  std::vector<std::uint8_t> valid;  // timesteps with at least one valid member
  CubicSpline spline;
};

/// Per-timestep median (mean of the middle pair for even counts) and population
/// standard deviation over member pixels, plus a natural spline through the median.
inline PolygonSeries polygon_median_series(const RasterStack& stack, int band,
                                           std::span<const PixelIndex> members) {
  if (members.empty()) throw NumericError("polygon_median_series: polygon covers no pixels");
  const int T = stack.timesteps();
  std::vector<double> median(T, 0.0), sd(T, 0.0);
  std::vector<std::uint8_t> valid(T, 0);
  std::vector<double> knots, knot_values;
  std::vector<double> buf;
  for (int t = 0; t < T; ++t) {
    buf.clear();
    for (const auto& px : members)
      if (stack.is_valid(t, band, px.row, px.col)) buf.push_back(stack.at(t, band, px.row, px.col));
    if (buf.empty()) continue;
    std::sort(buf.begin(), buf.end());
    const std::size_t n = buf.size();
    median[t] = n % 2 ? buf[n / 2] : 0.5 * (buf[n / 2 - 1] + buf[n / 2]);
    const double mean = std::accumulate(buf.begin(), buf.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : buf) ss += (v - mean) * (v - mean);
    sd[t] = std::sqrt(ss / static_cast<double>(n));
    valid[t] = 1;
    knots.push_back(t);
    knot_values.push_back(median[t]);
  }
  if (knots.size() < 2) throw NumericError("polygon_median_series: fewer than 2 valid timesteps");
  return {std::move(median), std::move(sd), std::move(valid), CubicSpline(std::move(knots), std::move(knot_values))};
}

struct CurationRules {
  double evi_threshold = 0.2;
  int min_run = 2;             // "multiple successive" timesteps
  double noise_std = 0.15;     // mean per-timestep std above which a polygon is discarded
  int gmm_components = 15;
  int max_clean_iterations = 10;
};

struct Confirmation {
  bool confirmed = false;
  std::string reason;  // empty when confirmed
};

inline Confirmation confirm_polygon(const PolygonSeries& series, LandClass cls, const TimeGrid& grid,
                                    const CurationRules& rules = {}) {
  const auto dry = season_window(grid, Season::dry);
  const auto rainy = season_window(grid, Season::rainy);
  const double dry_max = series.spline.max_over(dry.lo, dry.hi);
  if (cls == LandClass::irrigated) {
    if (!(dry_max > rules.evi_threshold)) return {false, "no dry-season peak"};
  } else {
    if (dry_max > rules.evi_threshold) return {false, "dry-season peak"};
    if (!(series.spline.max_over(rainy.lo, rainy.hi) > rules.evi_threshold)) return {false, "no rainy-season peak"};
  }
  double mean_sd = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < series.stddev.size(); ++t)
    if (series.valid[t]) {
      mean_sd += series.stddev[t];
      ++n;
    }
  if (n > 0 && mean_sd / static_cast<double>(n) > rules.noise_std) return {false, "noisy"};
  return {true, {}};
}

// ---------------------------------------------------------------------------
// Gaussian mixture with diagonal covariances

inline constexpr double kVarianceFloor = 1e-6;

struct ClusterModel {
  std::vector<double> weights;               // K
  std::vector<std::vector<double>> means;    // K x T
  std::vector<std::vector<double>> variances;  // K x T, >= kVarianceFloor
  std::vector<double> log_likelihood;        // mean per-sample log-likelihood after each EM step
  int iterations = 0;

  std::size_t components() const { return weights.size(); }
};

struct GmmFit {
  ClusterModel model;
  std::vector<int> assignment;  // argmax responsibility per sample
};

struct GmmOptions {
  int components = 15;
  double tolerance = 1e-4;  // stop when the mean log-likelihood gain falls below this
  int max_iterations = 200;
  int kmeans_iterations = 100;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

/// k-means++ seeding followed by Lloyd iterations; empty clusters are re-seeded from the
/// sample farthest from its current center.
inline std::vector<std::vector<double>> kmeans_init(const std::vector<std::vector<double>>& X, int K, Rng& rng,
                                                    int iterations, std::vector<int>& labels) {
  const std::size_t N = X.size();
  std::vector<std::vector<double>> centers;
  centers.push_back(X[uniform_index(rng, N)]);
  std::vector<double> d2(N);
  for (std::size_t i = 0; i < N; ++i) d2[i] = sq_dist(X[i], centers[0]);
  while (static_cast<int>(centers.size()) < K) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0) {
      double u = uniform01(rng) * total;
      for (pick = 0; pick + 1 < N; ++pick) {
        u -= d2[pick];
        if (u < 0) break;
      }
    } else {
      pick = uniform_index(rng, N);
    }
    centers.push_back(X[pick]);
    for (std::size_t i = 0; i < N; ++i) d2[i] = std::min(d2[i], sq_dist(X[i], centers.back()));
  }
  labels.assign(N, 0);
  const std::size_t T = X[0].size();
  for (int it = 0; it < iterations; ++it) {
    bool changed = it == 0;
    std::vector<double> best(N);
    for (std::size_t i = 0; i < N; ++i) {
      int arg = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        const double d = sq_dist(X[i], centers[k]);
        if (d < bd) {
          bd = d;
          arg = k;
        }
      }
      best[i] = bd;
      if (labels[i] != arg) changed = true;
      labels[i] = arg;
    }
    std::vector<int> counts(K, 0);
    for (int l : labels) ++counts[l];
    for (int k = 0; k < K; ++k) {
      if (counts[k] > 0) continue;
      const auto far = static_cast<std::size_t>(std::max_element(best.begin(), best.end()) - best.begin());
      --counts[labels[far]];
      labels[far] = k;
      counts[k] = 1;
      best[far] = 0.0;
      changed = true;
    }
    for (int k = 0; k < K; ++k) std::fill(centers[k].begin(), centers[k].end(), 0.0);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t t = 0; t < T; ++t) centers[labels[i]][t] += X[i][t];
    for (int k = 0; k < K; ++k)
      for (auto& v : centers[k]) v /= counts[k];
    if (!changed) break;
  }
  return centers;
}

}  // namespace detail

/// EM for a diagonal-covariance mixture, initialized by k-means++/Lloyd on the samples.
/// The E-step runs per sample in parallel; sums are reduced in sample order.
inline GmmFit fit_gmm(const std::vector<std::vector<double>>& X, std::uint64_t seed, const GmmOptions& opt = {}) {
  const int K = opt.components;
  const std::size_t N = X.size();
  if (K < 1) throw NumericError("fit_gmm: need at least one component");
  if (N < static_cast<std::size_t>(K)) throw NumericError("fit_gmm: fewer samples than components");
  const std::size_t T = X[0].size();
  for (const auto& x : X)
    if (x.size() != T) throw ShapeError("fit_gmm: ragged samples");

  Rng rng = make_stream(seed, 0);
  std::vector<int> labels;
  GmmFit fit;
  ClusterModel& m = fit.model;
  m.means = detail::kmeans_init(X, K, rng, opt.kmeans_iterations, labels);
  m.weights.assign(K, 0.0);
  m.variances.assign(K, std::vector<double>(T, 0.0));
  {
    std::vector<double> counts(K, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      counts[labels[i]] += 1;
      for (std::size_t t = 0; t < T; ++t) {
        const double d = X[i][t] - m.means[labels[i]][t];
        m.variances[labels[i]][t] += d * d;
      }
    }
    for (int k = 0; k < K; ++k) {
      m.weights[k] = counts[k] / static_cast<double>(N);
      for (auto& v : m.variances[k]) v = std::max(kVarianceFloor, v / counts[k]);
    }
  }

  constexpr double kLog2Pi = 1.8378770664093454836;
  std::vector<double> resp(N * K);
  std::vector<double> sample_ll(N);
  auto e_step = [&] {
    std::vector<double> log_norm(K);
    for (int k = 0; k < K; ++k) {
      double s = 0.0;
      for (double v : m.variances[k]) s += std::log(v);
      log_norm[k] = (m.weights[k] > 0 ? std::log(m.weights[k]) : -std::numeric_limits<double>::infinity()) -
                    0.5 * (static_cast<double>(T) * kLog2Pi + s);
    }
    parallel_for(N, [&](std::size_t i) {
      double* r = &resp[i * K];
      double top = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        double q = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
          const double d = X[i][t] - m.means[k][t];
          q += d * d / m.variances[k][t];
        }
        r[k] = log_norm[k] - 0.5 * q;
        top = std::max(top, r[k]);
      }
      double z = 0.0;
      for (int k = 0; k < K; ++k) {
        r[k] = std::exp(r[k] - top);
        z += r[k];
      }
      for (int k = 0; k < K; ++k) r[k] /= z;
      sample_ll[i] = top + std::log(z);
    });
    double total = 0.0;
    for (double v : sample_ll) total += v;
    return total / static_cast<double>(N);
  };

  double ll = e_step();
  for (int it = 0; it < opt.max_iterations; ++it) {
    // M-step. Components with no responsibility mass keep their previous parameters.
    std::vector<double> nk(K, 0.0);
    for (std::size_t i = 0; i < N; ++i)
      for (int k = 0; k < K; ++k) nk[k] += resp[i * K + k];
    for (int k = 0; k < K; ++k) {
      m.weights[k] = nk[k] / static_cast<double>(N);
      if (nk[k] < 1e-12) continue;
      std::vector<double> mean(T, 0.0), var(T, 0.0);
      for (std::size_t i = 0; i < N; ++i) {
        const double w = resp[i * K + k];
        if (w == 0.0) continue;
        for (std::size_t t = 0; t < T; ++t) mean[t] += w * X[i][t];
      }
      for (auto& v : mean) v /= nk[k];
      for (std::size_t i = 0; i < N; ++i) {
        const double w = resp[i * K + k];
        if (w == 0.0) continue;
        for (std::size_t t = 0; t < T; ++t) {
          const double d = X[i][t] - mean[t];
          var[t] += w * d * d;
        }
      }
      for (auto& v : var) v = std::max(kVarianceFloor, v / nk[k]);
      m.means[k] = std::move(mean);
      m.variances[k] = std::move(var);
    }
    const double next = e_step();
    m.log_likelihood.push_back(next);
    m.iterations = it + 1;
    const double gain = next - ll;
    ll = next;
    if (gain < opt.tolerance) break;
  }
  fit.assignment.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double* r = &resp[i * K];
    fit.assignment[i] = static_cast<int>(std::max_element(r, r + K) - r);
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Cluster verdicts

struct ClusterVerdict {
  std::vector<double> centroid;
  std::size_t members = 0;
  bool keep = true;
  std::string violated;  // rule tag when discarded
};

using ClusterReport = std::vector<ClusterVerdict>;

inline int longest_run(std::span<const double> x, bool above, double threshold) {
  int best = 0, run = 0;
  for (double v : x) {
    const bool hit = above ? v > threshold : v <= threshold;
    run = hit ? run + 1 : 0;
    best = std::max(best, run);
  }
  return best;
}

/// Applies the class definition to one centroid. Returns the violated rule tag or empty.
inline std::string centroid_violation(std::span<const double> centroid, LandClass cls, const TimeGrid& grid,
                                      const CurationRules& rules = {}) {
  const double dry_max = window_max(centroid, season_window(grid, Season::dry));
  if (cls == LandClass::irrigated) {
    if (!(dry_max > rules.evi_threshold)) return "no dry-season peak";
    if (longest_run(centroid, false, rules.evi_threshold) < rules.min_run) return "no senescence";
    if (longest_run(centroid, true, rules.evi_threshold) < rules.min_run) return "no growth cycle";
    return {};
  }
  if (dry_max > rules.evi_threshold) return "dry-season peak";
  return {};
}

inline ClusterReport cluster_verdicts(const ClusterModel& model, std::span<const int> assignment, LandClass cls,
                                      const TimeGrid& grid, const CurationRules& rules = {}) {
  ClusterReport rep(model.components());
  for (int a : assignment) ++rep[static_cast<std::size_t>(a)].members;
  for (std::size_t k = 0; k < rep.size(); ++k) {
    rep[k].centroid = model.means[k];
    rep[k].violated = centroid_violation(rep[k].centroid, cls, grid, rules);
    rep[k].keep = rep[k].violated.empty();
  }
  return rep;
}

struct CleaningIteration {
  std::size_t samples = 0;
  std::vector<std::size_t> cluster_members;
  std::vector<std::string> discarded;  // violated tag per discarded cluster
  std::size_t removed = 0;
};

struct CleaningResult {
  std::vector<std::size_t> retained;  // indices into the input, ascending
  std::vector<CleaningIteration> log;
  bool converged = false;
};

/// Repeats {fit mixture, judge clusters, drop members of discarded clusters} until every
/// cluster passes or the iteration cap is hit.
inline CleaningResult clean_labels(const std::vector<std::vector<double>>& samples, LandClass cls,
                                   const TimeGrid& grid, std::uint64_t seed, const CurationRules& rules = {}) {
  if (samples.size() < static_cast<std::size_t>(rules.gmm_components))
    throw NumericError("clean_labels: need at least " + std::to_string(rules.gmm_components) + " samples");
  CleaningResult res;
  res.retained.resize(samples.size());
  std::iota(res.retained.begin(), res.retained.end(), 0);
  for (int it = 0; it < rules.max_clean_iterations; ++it) {
    std::vector<std::vector<double>> current;
    current.reserve(res.retained.size());
    for (auto i : res.retained) current.push_back(samples[i]);
    GmmOptions opt;
    opt.components = std::min<int>(rules.gmm_components, static_cast<int>(current.size()));
    const auto fit = fit_gmm(current, derive_seed(seed, static_cast<std::uint64_t>(it)), opt);
    const auto report = cluster_verdicts(fit.model, fit.assignment, cls, grid, rules);
    CleaningIteration entry;
    entry.samples = current.size();
    for (const auto& v : report) {
      entry.cluster_members.push_back(v.members);
      if (!v.keep) entry.discarded.push_back(v.violated);
    }
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < current.size(); ++i)
      if (report[static_cast<std::size_t>(fit.assignment[i])].keep) keep.push_back(res.retained[i]);
    entry.removed = current.size() - keep.size();
    res.log.push_back(std::move(entry));
    if (keep.empty()) throw NumericError("clean_labels: every sample was discarded");
    const bool done = keep.size() == res.retained.size();
    res.retained = std::move(keep);
    if (done) {
      res.converged = true;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Polygon splits

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

using SplitAssignment = std::map<std::int64_t, Split>;

/// Largest-remainder apportionment of n items over the three ratios.
inline std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& ratios) {
  const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = r[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(counts[i]);
    used += counts[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++counts[order[k % 3]];
  return counts;
}

/// Stratified by (region, class): shuffle each group with its own seeded stream and cut
/// at the apportioned boundaries. Groups with fewer than 3 polygons go to train.
inline SplitAssignment split_polygons(const std::vector<std::tuple<std::int64_t, std::string, LandClass>>& polygons,
                                      const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9 || ratios.train < 0 || ratios.val < 0 || ratios.test < 0)
    throw NumericError("split_polygons: ratios must be non-negative and sum to 1");
  std::map<std::pair<std::string, int>, std::vector<std::int64_t>> groups;
  for (const auto& [id, region, cls] : polygons) groups[{region, static_cast<int>(cls)}].push_back(id);
  SplitAssignment out;
  std::uint64_t g = 0;
  for (auto& [key, ids] : groups) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Rng rng = make_stream(seed, g++);
    if (ids.size() < 3) {
      log::warn("split_polygons: region '" + key.first + "' class " + std::to_string(key.second) + " has " +
                std::to_string(ids.size()) + " polygon(s); all assigned to train");
      for (auto id : ids) out[id] = Split::train;
      continue;
    }
    shuffle(ids, rng);
    const auto counts = apportion(ids.size(), ratios);
    std::size_t i = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t k = 0; k < counts[s]; ++k) out[ids[i++]] = static_cast<Split>(s);
  }
  return out;
}

inline SplitAssignment split_polygons(const PolygonSet& polys, const SplitRatios& ratios, std::uint64_t seed) {
  std::vector<std::tuple<std::int64_t, std::string, LandClass>> items;
  for (const auto& p : polys) items.emplace_back(p.id, p.region, p.cls);
  return split_polygons(items, ratios, seed);
}

/// Every polygon present in a sample table, with its region and class.
inline std::vector<std::tuple<std::int64_t, std::string, LandClass>> table_polygons(const SampleTable& table) {
  std::map<std::int64_t, std::tuple<std::int64_t, std::string, LandClass>> seen;
  for (const auto& r : table.rows) seen.try_emplace(r.polygon_id, r.polygon_id, r.region, r.cls);
  std::vector<std::tuple<std::int64_t, std::string, LandClass>> out;
  for (auto& [_, v] : seen) out.push_back(v);
  return out;
}

inline void apply_split(SampleTable& table, const SplitAssignment& assignment) {
  for (auto& r : table.rows) {
    const auto it = assignment.find(r.polygon_id);
    if (it == assignment.end()) throw FormatError("apply_split: polygon " + std::to_string(r.polygon_id) + " unassigned");
    r.split = it->second;
  }
}

}  // namespace irrig
