#pragma once

// Prediction admissibility criteria and the rule-based reference classifier.

#include <algorithm>
#include <span>
#include <vector>

#include "irrig/raster_io.hpp"
#include "irrig/timeseries.hpp"

namespace irrig {

struct AdmissibilityRules {
  double evi_threshold = 0.2;
  double low_percentile = 10.0;
  double high_percentile = 90.0;
  double min_percentile_ratio = 2.0;
  double max_slope_percent = 8.0;
  double ratio_floor = 1e-6;
};

struct AdmissibilityVerdict {
  bool p10_low = false;   // not evergreen
  bool p90_high = false;  // not barren
  bool dry_peak = false;  // vegetation growth in the dry season
  bool ratio = false;     // seasonal contrast
  bool slope_ok = false;  // terrain flat enough to crop
  bool admissible = false;
};

/// Evaluates the five conjunctive criteria on a gap-free EVI series of one annual slice.
inline AdmissibilityVerdict evaluate_criteria(std::span<const double> evi, double slope_percent,
                                              const TimeGrid& grid = {}, const AdmissibilityRules& rules = {}) {
  std::vector<double> sorted(evi.begin(), evi.end());
  std::sort(sorted.begin(), sorted.end());
  const double p10 = percentile_sorted(sorted, rules.low_percentile);
  const double p90 = percentile_sorted(sorted, rules.high_percentile);
  AdmissibilityVerdict v;
  v.p10_low = p10 < rules.evi_threshold;
  v.p90_high = p90 > rules.evi_threshold;
  v.dry_peak = window_max(evi, season_window(grid, Season::dry)) > rules.evi_threshold;
  v.ratio = p90 / std::max(p10, rules.ratio_floor) > rules.min_percentile_ratio;
  v.slope_ok = slope_percent < rules.max_slope_percent;
  v.admissible = v.p10_low && v.p90_high && v.dry_peak && v.ratio && v.slope_ok;
  return v;
}

/// Irrigated iff every admissibility criterion holds.
inline LandClass reference_classify(std::span<const double> evi, double slope_percent, const TimeGrid& grid = {},
                                    const AdmissibilityRules& rules = {}) {
  return evaluate_criteria(evi, slope_percent, grid, rules).admissible ? LandClass::irrigated
                                                                         : LandClass::non_irrigated;
}

/// Admissibility of every pixel of a one-band annual EVI stack; slope is a one-band plane.
inline std::vector<std::uint8_t> admissibility_mask(const RasterStack& evi, const RasterStack& slope,
                                                    const AdmissibilityRules& rules = {}) {
  if (evi.width() != slope.width() || evi.height() != slope.height())
    throw ShapeError("admissibility_mask: EVI and slope rasters differ in shape");
  const auto grid = TimeGrid::from_header(evi.header);
  std::vector<std::uint8_t> out(evi.pixels(), 0);
  for (int r = 0; r < evi.height(); ++r)
    for (int c = 0; c < evi.width(); ++c) {
      const auto s = evi.series(0, r, c);
      out[static_cast<std::size_t>(r) * evi.width() + c] =
          evaluate_criteria(s, slope.at(0, 0, r, c), grid, rules).admissible ? 1 : 0;
    }
  return out;
}

}  // namespace irrig
