#pragma once

// Per-pixel time-series numerics on the regular 10-day grid.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irrig/core/error.hpp"
#include "irrig/core/random.hpp"
#include "irrig/raster_io.hpp"

namespace irrig {

namespace chr = std::chrono;

inline chr::year_month_day parse_date(std::string_view s) {
  int y = 0;
  unsigned m = 0, d = 0;
  const std::string str(s);
  if (std::sscanf(str.c_str(), "%d-%u-%u", &y, &m, &d) != 3)
    throw FormatError("bad ISO date '" + str + "'");
  const chr::year_month_day ymd{chr::year{y}, chr::month{m}, chr::day{d}};
  if (!ymd.ok()) throw FormatError("bad ISO date '" + str + "'");
  return ymd;
}

inline std::string format_date(chr::year_month_day ymd) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

/// Regular acquisition grid. The default is one annual slice anchored on June 1.
struct TimeGrid {
  chr::year_month_day start{chr::year{2020}, chr::June, chr::day{1}};
  int step_days = 10;
  int timesteps = 36;

  static TimeGrid annual(int year) { return {chr::year_month_day{chr::year{year}, chr::June, chr::day{1}}, 10, 36}; }

  static TimeGrid from_header(const StackHeader& h) {
    return {parse_date(h.start_date), h.step_days, h.timesteps};
  }

  chr::sys_days window_start(int t) const { return chr::sys_days{start} + chr::days{t * step_days}; }

  /// Timestep index whose window contains `day` (may be negative or >= timesteps).
  int index_of(chr::sys_days day) const {
    const auto offset = (day - chr::sys_days{start}).count();
    return static_cast<int>(std::floor(static_cast<double>(offset) / step_days));
  }
};

struct TimeSeries {
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  static TimeSeries all_valid(std::vector<double> v) {
    TimeSeries s;
    s.valid.assign(v.size(), 1);
    s.values = std::move(v);
    return s;
  }
  std::size_t size() const { return values.size(); }
  std::size_t valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1)); }
};

// ---------------------------------------------------------------------------
// Vegetation index

/// Enhanced vegetation index 2.5 (N - R) / (N + 6R - 7.5B + 1), clamped to [-1, 1].
/// Returns nullopt for non-finite inputs or a zero denominator.
inline std::optional<double> compute_evi(double blue, double red, double nir) {
  if (!std::isfinite(blue) || !std::isfinite(red) || !std::isfinite(nir)) return std::nullopt;
  const double den = nir + 6.0 * red - 7.5 * blue + 1.0;
  if (den == 0.0) return std::nullopt;
  const double evi = 2.5 * (nir - red) / den;
  if (!std::isfinite(evi)) return std::nullopt;
  return std::clamp(evi, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Gap filling and smoothing

/// Linear interpolation across interior gaps; leading and trailing gaps take the
/// nearest valid value.
inline std::vector<double> interpolate_gaps(const TimeSeries& s) {
  const std::size_t n = s.values.size();
  if (s.valid.size() != n) throw ShapeError("interpolate_gaps: mask length mismatch");
  std::vector<double> out(s.values);
  std::ptrdiff_t prev = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (!s.valid[i]) continue;
    const auto cur = static_cast<std::ptrdiff_t>(i);
    if (prev < 0) {
      for (std::ptrdiff_t k = 0; k < cur; ++k) out[k] = s.values[i];
    } else {
      const double a = s.values[prev], b = s.values[i];
      const double span = static_cast<double>(cur - prev);
      for (std::ptrdiff_t k = prev + 1; k < cur; ++k) out[k] = a + (b - a) * static_cast<double>(k - prev) / span;
    }
    prev = cur;
  }
  if (prev < 0) throw NumericError("interpolate_gaps: series has no valid entries");
  for (std::size_t k = static_cast<std::size_t>(prev) + 1; k < n; ++k) out[k] = s.values[prev];
  return out;
}

/// Window-5, order-3 least-squares smoothing weights.
inline constexpr std::array<double, 5> kSavgolWeights{-3.0 / 35, 12.0 / 35, 17.0 / 35, 12.0 / 35, -3.0 / 35};

/// Savitzky-Golay smoothing (window 5, cubic) with mirror padding at both ends
/// (x[-k] = x[k], x[n-1+k] = x[n-1-k]).
inline std::vector<double> savgol_smooth(std::span<const double> x) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  if (n < 5) throw NumericError("savgol_smooth: series needs at least 5 samples");
  auto mirrored = [&](std::ptrdiff_t i) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    return x[static_cast<std::size_t>(i)];
  };
  std::vector<double> out(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::ptrdiff_t k = -2; k <= 2; ++k) acc += kSavgolWeights[k + 2] * mirrored(i + k);
    out[i] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Natural cubic spline

class CubicSpline {
 public:
  CubicSpline(std::vector<double> knots, std::vector<double> values)
      : x_(std::move(knots)), y_(std::move(values)) {
    const std::size_t n = x_.size();
    if (n != y_.size()) throw ShapeError("cubic_spline: knot/value length mismatch");
    if (n < 2) throw NumericError("cubic_spline: needs at least 2 knots");
    for (std::size_t i = 1; i < n; ++i)
      if (!(x_[i] > x_[i - 1])) throw NumericError("cubic_spline: knots must be strictly increasing (duplicate knot)");
    // Second derivatives with m[0] = m[n-1] = 0, tridiagonal solve.
    m_.assign(n, 0.0);
    if (n > 2) {
      std::vector<double> diag(n - 2), upper(n - 2), rhs(n - 2);
      for (std::size_t i = 1; i + 1 < n; ++i) {
        const double h0 = x_[i] - x_[i - 1], h1 = x_[i + 1] - x_[i];
        diag[i - 1] = 2.0 * (h0 + h1);
        upper[i - 1] = h1;
        rhs[i - 1] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
      }
      for (std::size_t i = 1; i < n - 2; ++i) {
        const double lower = x_[i + 1] - x_[i];
        const double w = lower / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
      }
      for (std::size_t i = n - 2; i-- > 0;) {
        const double next = i + 1 < n - 2 ? m_[i + 2] : 0.0;
        m_[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
      }
    }
  }

  /// Evaluation clamps outside the knot range to the end values.
  double operator()(double t) const {
    if (t <= x_.front()) return y_.front();
    if (t >= x_.back()) return y_.back();
    const auto it = std::upper_bound(x_.begin(), x_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
    const double h = x_[i + 1] - x_[i];
    const double a = (x_[i + 1] - t) / h, b = (t - x_[i]) / h;
    return a * y_[i] + b * y_[i + 1] + ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
  }

  /// Maximum over [lo, hi] sampled at `step` spacing (both ends included).
  double max_over(double lo, double hi, double step = 0.1) const {
    double best = (*this)(lo);
    const int n = static_cast<int>(std::ceil((hi - lo) / step));
    for (int i = 1; i <= n; ++i) best = std::max(best, (*this)(std::min(hi, lo + i * step)));
    return best;
  }

  const std::vector<double>& knots() const { return x_; }

 private:
  std::vector<double> x_, y_, m_;
};

inline CubicSpline cubic_spline(std::vector<double> times, std::vector<double> values) {
  return CubicSpline(std::move(times), std::move(values));
}

// ---------------------------------------------------------------------------
// Percentiles

/// Linear-interpolation percentile: rank q/100 * (n - 1) into the sorted values.
inline double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw NumericError("percentile: empty input");
  if (!(q >= 0.0 && q <= 100.0)) throw NumericError("percentile: q outside [0, 100]");
  const double rank = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline double percentile(std::span<const double> values, double q) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return percentile_sorted(v, q);
}

/// Percentile over the valid entries of a masked series.
inline double percentile(const TimeSeries& s, double q) {
  std::vector<double> v;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.valid[i]) v.push_back(s.values[i]);
  std::sort(v.begin(), v.end());
  return percentile_sorted(v, q);
}

// ---------------------------------------------------------------------------
// Season windows

enum class Season { dry, rainy };

struct SeasonWindow {
  Season kind = Season::dry;
  int lo = 0;  // inclusive
  int hi = 0;  // inclusive

  int length() const { return hi - lo + 1; }
  bool contains(int t) const { return t >= lo && t <= hi; }
};

namespace detail {
// Day offsets from June 1 in a non-leap year.
inline constexpr int kDec1 = 183;
inline constexpr int kApr1 = 304;
inline constexpr int kOct1 = 122;
}  // namespace detail

/// Timesteps of year slice `year` whose [10t, 10t + 10) span overlaps the calendar
/// window: dry = Dec 1 to Apr 1, rainy = Jun 1 to Oct 1.
inline SeasonWindow season_window(const TimeGrid& grid, Season kind, int year = 0) {
  if (static_cast<unsigned>(grid.start.month()) != 6 || static_cast<unsigned>(grid.start.day()) != 1)
    throw NumericError("season_window: grid must be anchored on June 1");
  if (grid.step_days != 10 || grid.timesteps % 36 != 0)
    throw NumericError("season_window: grid must be 10-day steps in whole 36-step years");
  if (year < 0 || year >= grid.timesteps / 36) throw NumericError("season_window: year slice out of range");
  const int begin = kind == Season::dry ? detail::kDec1 : 0;
  const int end = kind == Season::dry ? detail::kApr1 : detail::kOct1;
  const int step = grid.step_days;
  const int lo = begin / step;                 // first t with 10t + 10 > begin
  const int hi = (end + step - 1) / step - 1;  // last t with 10t < end
  return {kind, lo + 36 * year, hi + 36 * year};
}

inline double window_max(std::span<const double> x, const SeasonWindow& w) {
  if (w.hi >= static_cast<int>(x.size())) throw ShapeError("season window exceeds series length");
  return *std::max_element(x.begin() + w.lo, x.begin() + w.hi + 1);
}

// ---------------------------------------------------------------------------
// Shift augmentation

inline constexpr int kMaxShift = 3;

/// Moves values by `shift` positions (positive = later); vacated positions repeat the
/// nearest retained edge value.
inline std::vector<double> random_shift(std::span<const double> x, int shift) {
  if (std::abs(shift) > kMaxShift) throw NumericError("random_shift: |shift| must be <= 3");
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> out(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = x[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i - shift, 0, n - 1))];
  return out;
}

/// Uniform draw over the 7 shifts -3..+3.
inline int draw_shift(Rng& rng) { return static_cast<int>(uniform_index(rng, 2 * kMaxShift + 1)) - kMaxShift; }

// ---------------------------------------------------------------------------
// Standardization

/// One scalar mean and standard deviation per feature layer.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  double apply(std::size_t layer, double x) const { return (x - mean[layer]) / stddev[layer]; }
};

inline double standardize(double x, double mean, double stddev) {
  if (!(stddev > 0)) throw NumericError("standardize: std must be positive");
  return (x - mean) / stddev;
}

inline std::vector<double> standardize(std::span<const double> x, double mean, double stddev) {
  if (!(stddev > 0)) throw NumericError("standardize: std must be positive");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / stddev;
  return out;
}

/// Mean and population standard deviation of every layer over all training-split values.
inline Standardizer fit_standardizer(const SampleTable& table, bool training_split_only = true) {
  const std::size_t L = table.layer_names.size();
  Standardizer s;
  s.mean.assign(L, 0.0);
  s.stddev.assign(L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    double sum = 0.0, n = 0.0;
    for (const auto& r : table.rows) {
      if (training_split_only && r.split != Split::train) continue;
      for (float v : r.layers[l]) sum += v;
      n += static_cast<double>(r.layers[l].size());
    }
    if (n == 0) throw NumericError("fit_standardizer: no training values");
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& r : table.rows) {
      if (training_split_only && r.split != Split::train) continue;
      for (float v : r.layers[l]) ss += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(ss / n);
    if (!(sd > 0)) throw NumericError("fit_standardizer: layer '" + table.layer_names[l] + "' is constant");
    s.mean[l] = mean;
    s.stddev[l] = sd;
  }
  return s;
}

}  // namespace irrig
