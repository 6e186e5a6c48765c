#pragma once

// Raster-scale prediction with the admissibility pre-filter, small-component sieving,
// per-zone change accounting and bitemporal compositing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "irrig/admissibility.hpp"
#include "irrig/classifiers/model.hpp"
#include "irrig/core/log.hpp"
#include "irrig/core/parallel.hpp"
#include "irrig/raster_io.hpp"

namespace irrig {

struct PredictionRaster {
  int width = 0;
  int height = 0;
  double pixel_size_m = 10.0;
  int year = 0;
  std::vector<std::uint8_t> cls;  // row-major, 1 = irrigated
  std::vector<float> probability;  // 0 where inadmissible
  std::vector<std::uint8_t> admissible;
  std::size_t model_calls = 0;  // samples passed to the classifier

  std::size_t pixels() const { return cls.size(); }
};

/// Classifies every pixel of annual slice `year` of a one-band EVI stack. Inadmissible
/// pixels are set to 0 without reaching the model; admissible pixels of each tile are
/// classified in one batch. The result does not depend on the tile size.
inline PredictionRaster predict_raster(const TrainedModel& model, const RasterStack& evi, const RasterStack& slope,
                                       int tile_size = 256, int year = 0, const AdmissibilityRules& rules = {}) {
  if (evi.width() != slope.width() || evi.height() != slope.height())
    throw ShapeError("predict_raster: EVI and slope rasters differ in shape");
  if (model.input_mode == InputMode::all_bands) throw NumericError("predict_raster: model must consume EVI inputs");
  if (tile_size < 1) throw NumericError("predict_raster: tile size must be positive");
  const int T = model.timesteps;
  if ((year + 1) * T > evi.timesteps()) throw ShapeError("predict_raster: stack lacks the requested year");
  if (!evi.all_valid()) throw NumericError("predict_raster: EVI stack must be fully valid");
  TimeGrid grid = TimeGrid::from_header(evi.header);
  grid.timesteps = T;
  const int band = evi.band_index("EVI");

  PredictionRaster out;
  out.width = evi.width();
  out.height = evi.height();
  out.pixel_size_m = evi.header.pixel_size_m;
  out.year = year;
  out.cls.assign(evi.pixels(), 0);
  out.probability.assign(evi.pixels(), 0.0f);
  out.admissible.assign(evi.pixels(), 0);

  const int tiles_x = (out.width + tile_size - 1) / tile_size;
  const int tiles_y = (out.height + tile_size - 1) / tile_size;
  std::vector<std::size_t> calls(static_cast<std::size_t>(tiles_x) * tiles_y, 0);
  parallel_for(calls.size(), [&](std::size_t k) {
    const int r0 = static_cast<int>(k / tiles_x) * tile_size, c0 = static_cast<int>(k % tiles_x) * tile_size;
    const int r1 = std::min(out.height, r0 + tile_size), c1 = std::min(out.width, c0 + tile_size);
    Dataset batch;
    batch.layers = 1;
    batch.timesteps = T;
    std::vector<std::size_t> where;
    std::vector<double> s(T);
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) {
        for (int t = 0; t < T; ++t) s[t] = evi.at(year * T + t, band, r, c);
        const std::size_t p = static_cast<std::size_t>(r) * out.width + c;
        if (!evaluate_criteria(s, slope.at(0, 0, r, c), grid, rules).admissible) continue;
        out.admissible[p] = 1;
        batch.push(s, 0, 1.0, {});
        where.push_back(p);
      }
    if (where.empty()) return;
    const auto prob = predict_proba(model, batch);
    calls[k] = where.size();
    for (std::size_t i = 0; i < where.size(); ++i) {
      out.probability[where[i]] = static_cast<float>(prob[i]);
      out.cls[where[i]] = prob[i] >= 0.5 ? 1 : 0;
    }
  });
  out.model_calls = std::accumulate(calls.begin(), calls.end(), std::size_t{0});
  return out;
}

// ---------------------------------------------------------------------------
// Sieve

/// Smallest component kept: ceil(min_area_ha * 10,000 / pixel area).
inline std::size_t sieve_threshold_pixels(double min_area_ha, double pixel_size_m) {
  return static_cast<std::size_t>(std::ceil(min_area_ha * 10000.0 / (pixel_size_m * pixel_size_m) - 1e-9));
}

/// Removes connected class-1 components (4- or 8-neighbour) smaller than the threshold.
inline std::vector<std::uint8_t> sieve_small_components(std::span<const std::uint8_t> cls, int width, int height,
                                                        double pixel_size_m = 10.0, double min_area_ha = 0.1,
                                                        int connectivity = 4) {
  if (cls.size() != static_cast<std::size_t>(width) * height) throw ShapeError("sieve: raster size mismatch");
  if (connectivity != 4 && connectivity != 8) throw NumericError("sieve: connectivity must be 4 or 8");
  const std::size_t N = cls.size();
  std::vector<std::uint32_t> parent(N);
  std::iota(parent.begin(), parent.end(), 0u);
  auto find = [&](std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto unite = [&](std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const auto p = static_cast<std::uint32_t>(r * width + c);
      if (!cls[p]) continue;
      if (c > 0 && cls[p - 1]) unite(p, p - 1);
      if (r > 0 && cls[p - width]) unite(p, p - width);
      if (connectivity == 8 && r > 0) {
        if (c > 0 && cls[p - width - 1]) unite(p, p - width - 1);
        if (c + 1 < width && cls[p - width + 1]) unite(p, p - width + 1);
      }
    }
  std::vector<std::uint32_t> size(N, 0);
  for (std::size_t p = 0; p < N; ++p)
    if (cls[p]) ++size[find(static_cast<std::uint32_t>(p))];
  const std::size_t keep = sieve_threshold_pixels(min_area_ha, pixel_size_m);
  std::vector<std::uint8_t> out(cls.begin(), cls.end());
  for (std::size_t p = 0; p < N; ++p)
    if (cls[p] && size[find(static_cast<std::uint32_t>(p))] < keep) out[p] = 0;
  return out;
}

// ---------------------------------------------------------------------------
// Zone statistics

struct ZoneChange {
  int zone = 0;
  std::string name;
  double hectares_a = 0.0;
  double hectares_b = 0.0;
  double total_hectares = 0.0;
  std::optional<double> percent_change;  // empty when year A has no irrigated area
  double change_fraction_of_area = 0.0;  // (B - A) / zone area
};

struct ChangeReport {
  std::vector<ZoneChange> zones;  // ascending zone id
  ZoneChange total;               // every zoned pixel
};

inline ChangeReport zone_statistics(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                                    const ZoneMap& zones) {
  const std::size_t N = zones.ids.size();
  if (a.size() != N || b.size() != N) throw ShapeError("zone_statistics: raster shapes differ from the zone map");
  const double ha = zones.pixel_size_m * zones.pixel_size_m / 10000.0;
  std::map<int, std::array<std::size_t, 3>> counts;  // (A, B, area)
  for (std::size_t p = 0; p < N; ++p) {
    const int z = zones.ids[p];
    if (z == 0) continue;
    auto& c = counts[z];
    c[0] += a[p] ? 1 : 0;
    c[1] += b[p] ? 1 : 0;
    ++c[2];
  }
  auto finish = [&](ZoneChange& zc, const std::array<std::size_t, 3>& c) {
    zc.hectares_a = static_cast<double>(c[0]) * ha;
    zc.hectares_b = static_cast<double>(c[1]) * ha;
    zc.total_hectares = static_cast<double>(c[2]) * ha;
    if (c[0] > 0) zc.percent_change = (zc.hectares_b - zc.hectares_a) / zc.hectares_a * 100.0;
    if (c[2] > 0) zc.change_fraction_of_area = (zc.hectares_b - zc.hectares_a) / zc.total_hectares;
  };
  ChangeReport rep;
  std::array<std::size_t, 3> all{};
  for (const auto& [z, c] : counts) {
    ZoneChange zc;
    zc.zone = z;
    const auto it = zones.names.find(z);
    if (it == zones.names.end()) log::warn("zone_statistics: zone id " + std::to_string(z) + " has no name");
    else zc.name = it->second;
    finish(zc, c);
    rep.zones.push_back(zc);
    for (int k = 0; k < 3; ++k) all[k] += c[k];
  }
  rep.total.name = "Total";
  finish(rep.total, all);
  return rep;
}

inline std::string change_report_csv(const ChangeReport& rep) {
  std::string out = "zone,name,irrigated_ha_a,irrigated_ha_b,total_ha,percent_change,change_fraction_of_area\n";
  auto row = [&](const ZoneChange& z, const std::string& id) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%s,%.4f,%.4f,%.4f,", id.c_str(), z.name.c_str(), z.hectares_a, z.hectares_b,
                  z.total_hectares);
    out += buf;
    if (z.percent_change) {
      std::snprintf(buf, sizeof buf, "%.4f", *z.percent_change);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.6f\n", z.change_fraction_of_area);
    out += buf;
  };
  for (const auto& z : rep.zones) row(z, std::to_string(z.zone));
  row(rep.total, "total");
  return out;
}

// ---------------------------------------------------------------------------
// Bitemporal composite

enum class ChangeCategory : std::uint8_t { neither = 0, a_only = 1, b_only = 2, both = 3 };

inline std::vector<std::uint8_t> bitemporal_composite(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ShapeError("bitemporal_composite: raster shapes differ");
  std::vector<std::uint8_t> out(a.size());
  for (std::size_t p = 0; p < a.size(); ++p) {
    const bool x = a[p] != 0, y = b[p] != 0;
    out[p] = static_cast<std::uint8_t>(x && y   ? ChangeCategory::both
                                       : x      ? ChangeCategory::a_only
                                       : y      ? ChangeCategory::b_only
                                                : ChangeCategory::neither);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raster plumbing for class planes

inline RasterStack class_plane(std::span<const std::uint8_t> cls, int width, int height, double pixel_size_m,
                               std::string band = "class") {
  auto s = make_plane(width, height, std::move(band), pixel_size_m);
  for (std::size_t p = 0; p < cls.size(); ++p) s.values[p] = cls[p];
  return s;
}

inline std::vector<std::uint8_t> plane_classes(const RasterStack& s, int band = 0) {
  std::vector<std::uint8_t> out(s.pixels());
  for (std::size_t p = 0; p < out.size(); ++p) {
    const float v = s.values[static_cast<std::size_t>(band) * s.pixels() + p];
    if (v != 0.0f && v != 1.0f && v != 2.0f && v != 3.0f) throw FormatError("class raster holds a non-class value");
    out[p] = static_cast<std::uint8_t>(v);
  }
  return out;
}

}  // namespace irrig
