#pragma once

// Synthetic phenology generator: Gaussian-pulse EVI profiles, labeled regions grouped
// into polygons, and coherent raster worlds (EVI stack, polygons, zones, slope, truth).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "irrig/core/error.hpp"
#include "irrig/core/random.hpp"
#include "irrig/labels.hpp"
#include "irrig/mosaic.hpp"
#include "irrig/raster_io.hpp"
#include "irrig/timeseries.hpp"

namespace irrig {

enum class ProfileKind { non_irrigated, irrigated, evergreen, barren };

inline LandClass profile_class(ProfileKind k) {
  return k == ProfileKind::irrigated ? LandClass::irrigated : LandClass::non_irrigated;
}

struct Pulse {
  double center = 0.0;  // timestep
  double width = 2.5;   // standard deviation in timesteps
  double amplitude = 0.0;
  double center_jitter = 0.0;  // uniform half-ranges of the per-polygon draw
  double width_jitter = 0.0;
  double amplitude_jitter = 0.0;
};

struct PhenologyProfile {
  ProfileKind kind = ProfileKind::non_irrigated;
  double baseline = 0.08;
  double baseline_jitter = 0.02;
  std::optional<Pulse> rainy;
  std::optional<Pulse> dry;  // irrigated profiles only
  double noise_sigma = 0.02;
  int phase_offset = 0;  // region-level shift of every pulse, |offset| <= 3
  int timesteps = 36;

  void validate() const {
    if (std::abs(phase_offset) > kMaxShift) throw NumericError("profile: |phase offset| must be <= 3");
    if (noise_sigma < 0 || timesteps < 1) throw NumericError("profile: invalid noise or length");
    for (const auto* p : {&rainy, &dry})
      if (*p && (!((*p)->width > 0) || (*p)->amplitude < 0 || (*p)->width - (*p)->width_jitter <= 0 ||
                 (*p)->amplitude - (*p)->amplitude_jitter < 0))
        throw NumericError("profile: pulse widths must be positive and amplitudes non-negative");
    if (dry && kind != ProfileKind::irrigated) throw NumericError("profile: only irrigated profiles have a dry pulse");
  }

  /// Default shapes: a rainy-season cycle peaking in September, plus a dry-season cycle
  /// inside December to April for irrigated land.
  static PhenologyProfile standard(ProfileKind kind, int phase_offset = 0) {
    PhenologyProfile p;
    p.kind = kind;
    p.phase_offset = phase_offset;
    const Pulse rain{9.0, 2.5, 0.45, 1.0, 0.3, 0.08};
    switch (kind) {
      case ProfileKind::non_irrigated: p.rainy = rain; break;
      case ProfileKind::irrigated:
        p.rainy = rain;
        p.dry = Pulse{23.0, 2.5, 0.40, 2.0, 0.3, 0.08};
        break;
      case ProfileKind::evergreen:
        p.baseline = 0.45;
        p.baseline_jitter = 0.04;
        p.rainy = Pulse{9.0, 4.0, 0.12, 1.0, 0.5, 0.04};
        break;
      case ProfileKind::barren:
        p.baseline = 0.05;
        p.noise_sigma = 0.015;
        break;
    }
    return p;
  }

  /// Rain-fed crop whose long season runs into December.
  static PhenologyProfile long_season(int phase_offset = 0) {
    auto p = standard(ProfileKind::non_irrigated, phase_offset);
    p.rainy = Pulse{13.0, 4.0, 0.45, 1.0, 0.3, 0.06};
    return p;
  }

  /// Irrigated perennial cover that never senesces below 0.2.
  static PhenologyProfile perennial_irrigated(int phase_offset = 0) {
    auto p = standard(ProfileKind::irrigated, phase_offset);
    p.baseline = 0.24;
    p.baseline_jitter = 0.02;
    p.rainy->amplitude = 0.35;
    p.dry->amplitude = 0.30;
    return p;
  }
};

/// Per-polygon draw of a profile's pulse parameters.
struct ProfileDraw {
  double baseline = 0.0;
  std::vector<std::array<double, 3>> pulses;  // (center, width, amplitude)
};

inline ProfileDraw draw_profile(const PhenologyProfile& p, Rng& rng) {
  auto jitter = [&](double v, double half) { return half > 0 ? v + (2.0 * uniform01(rng) - 1.0) * half : v; };
  ProfileDraw d;
  d.baseline = jitter(p.baseline, p.baseline_jitter);
  if (p.rainy)
    d.pulses.push_back({jitter(p.rainy->center, p.rainy->center_jitter) + p.phase_offset,
                        jitter(p.rainy->width, p.rainy->width_jitter), jitter(p.rainy->amplitude, p.rainy->amplitude_jitter)});
  if (p.dry) {
    // keep the dry cycle inside the dry window after the regional offset
    const double c = std::clamp(jitter(p.dry->center, p.dry->center_jitter) + p.phase_offset, 18.0, 30.0);
    d.pulses.push_back({c, jitter(p.dry->width, p.dry->width_jitter), jitter(p.dry->amplitude, p.dry->amplitude_jitter)});
  }
  return d;
}

/// baseline + sum of Gaussian pulses + N(0, sigma^2), clamped to [-0.2, 1].
inline std::vector<double> render_series(const ProfileDraw& d, double noise_sigma, int timesteps, Rng& rng) {
  std::vector<double> out(static_cast<std::size_t>(timesteps));
  for (int t = 0; t < timesteps; ++t) {
    double v = d.baseline;
    for (const auto& [c, w, a] : d.pulses) v += a * std::exp(-0.5 * (t - c) * (t - c) / (w * w));
    if (noise_sigma > 0) v += noise_sigma * standard_normal(rng);
    out[static_cast<std::size_t>(t)] = std::clamp(v, -0.2, 1.0);
  }
  return out;
}

struct SyntheticSeries {
  std::vector<double> values;
  LandClass cls = LandClass::non_irrigated;
  ProfileKind kind = ProfileKind::non_irrigated;
};

inline SyntheticSeries generate_series(const PhenologyProfile& p, std::uint64_t seed) {
  p.validate();
  Rng rng = make_stream(seed, 0x5E41);
  const auto d = draw_profile(p, rng);
  return {render_series(d, p.noise_sigma, p.timesteps, rng), profile_class(p.kind), p.kind};
}

// ---------------------------------------------------------------------------
// Labeled regions

/// Weighted mixture of profiles for one class.
using ProfileMix = std::vector<std::pair<double, PhenologyProfile>>;

struct RegionSpec {
  std::string name = "region";
  int phase_offset = 0;
  std::size_t irrigated = 100;
  std::size_t non_irrigated = 100;
  std::size_t pixels_per_polygon = 10;
  double contamination = 0.0;  // share of each class replaced by opposite-class series
  bool all_bands = false;      // add ten reflectance-like bands before the EVI layer
  bool mixed = false;          // add long-season, perennial, evergreen and barren variants
  std::int64_t first_polygon_id = 1;
};

struct SyntheticRegion {
  SampleTable table;
  std::vector<std::uint8_t> planted;  // per row, 1 = series of the opposite class
  std::int64_t next_polygon_id = 1;
};

inline const std::vector<std::string>& synthetic_band_names() {
  static const std::vector<std::string> names{"B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12"};
  return names;
}

namespace detail {

// band = offset + gain * EVI + N(0, 0.01)
inline constexpr std::array<std::array<double, 2>, 10> kBandAffine{{{0.06, -0.05},
                                                                    {0.09, -0.02},
                                                                    {0.12, -0.12},
                                                                    {0.15, 0.02},
                                                                    {0.18, 0.20},
                                                                    {0.20, 0.35},
                                                                    {0.20, 0.45},
                                                                    {0.22, 0.42},
                                                                    {0.28, -0.10},
                                                                    {0.22, -0.18}}};

inline ProfileMix class_mix(LandClass cls, int offset, bool mixed) {
  if (cls == LandClass::irrigated) {
    if (!mixed) return {{1.0, PhenologyProfile::standard(ProfileKind::irrigated, offset)}};
    return {{0.8, PhenologyProfile::standard(ProfileKind::irrigated, offset)},
            {0.2, PhenologyProfile::perennial_irrigated(offset)}};
  }
  if (!mixed) return {{1.0, PhenologyProfile::standard(ProfileKind::non_irrigated, offset)}};
  return {{0.6, PhenologyProfile::standard(ProfileKind::non_irrigated, offset)},
          {0.2, PhenologyProfile::long_season(offset)},
          {0.1, PhenologyProfile::standard(ProfileKind::evergreen, offset)},
          {0.1, PhenologyProfile::standard(ProfileKind::barren, offset)}};
}

inline const PhenologyProfile& pick(const ProfileMix& mix, Rng& rng) {
  double total = 0.0;
  for (const auto& [w, _] : mix) total += w;
  double u = uniform01(rng) * total;
  for (const auto& [w, p] : mix) {
    if (u < w) return p;
    u -= w;
  }
  return mix.back().second;
}

inline PixelSample make_row(const std::string& region, std::int64_t polygon, LandClass cls,
                            const std::vector<double>& evi, bool all_bands, Rng& rng) {
  PixelSample s;
  s.region = region;
  s.polygon_id = polygon;
  s.cls = cls;
  if (all_bands)
    for (const auto& [offset, gain] : kBandAffine) {
      std::vector<float> band(evi.size());
      for (std::size_t t = 0; t < evi.size(); ++t)
        band[t] = static_cast<float>(offset + gain * evi[t] + 0.01 * standard_normal(rng));
      s.layers.push_back(std::move(band));
    }
  s.layers.emplace_back(evi.begin(), evi.end());
  return s;
}

}  // namespace detail

/// Samples grouped into polygons: pixels of one polygon share pulse parameters and
/// differ by noise. Every row starts in the train split.
inline SyntheticRegion generate_region(const RegionSpec& spec, std::uint64_t seed) {
  if (spec.irrigated + spec.non_irrigated == 0) throw NumericError("generate_region: counts must be positive");
  if (spec.pixels_per_polygon < 1) throw NumericError("generate_region: pixels_per_polygon must be >= 1");
  if (spec.contamination < 0 || spec.contamination >= 1) throw NumericError("generate_region: contamination in [0, 1)");
  SyntheticRegion out;
  out.table.timesteps = 36;
  out.table.layer_names.clear();
  if (spec.all_bands) out.table.layer_names = synthetic_band_names();
  out.table.layer_names.push_back("EVI");
  std::int64_t polygon = spec.first_polygon_id;
  std::uint64_t stream = 0;
  for (LandClass cls : {LandClass::non_irrigated, LandClass::irrigated}) {
    const std::size_t count = cls == LandClass::irrigated ? spec.irrigated : spec.non_irrigated;
    const auto mix = detail::class_mix(cls, spec.phase_offset, spec.mixed);
    const auto wrong = detail::class_mix(cls == LandClass::irrigated ? LandClass::non_irrigated : LandClass::irrigated,
                                         spec.phase_offset, false);
    Rng plant_rng = make_stream(seed, 0xC0 + static_cast<std::uint64_t>(cls));
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, plant_rng);
    const auto n_plant = static_cast<std::size_t>(std::llround(spec.contamination * static_cast<double>(count)));
    std::vector<std::uint8_t> plant(count, 0);
    for (std::size_t i = 0; i < n_plant; ++i) plant[order[i]] = 1;

    for (std::size_t start = 0; start < count; start += spec.pixels_per_polygon, ++polygon) {
      Rng rng = make_stream(seed, stream++);
      const auto& profile = detail::pick(mix, rng);
      const auto draw = draw_profile(profile, rng);
      for (std::size_t i = start; i < std::min(count, start + spec.pixels_per_polygon); ++i) {
        std::vector<double> evi;
        if (plant[i]) {
          const auto& other = wrong.front().second;
          evi = render_series(draw_profile(other, rng), other.noise_sigma, 36, rng);
        } else {
          evi = render_series(draw, profile.noise_sigma, 36, rng);
        }
        out.table.rows.push_back(detail::make_row(spec.name, polygon, cls, evi, spec.all_bands, rng));
        out.planted.push_back(plant[i]);
      }
    }
  }
  out.next_polygon_id = polygon;
  return out;
}

/// Several regions with distinct polygon ids, split 70/15/15 by polygon.
inline SyntheticRegion generate_regions(std::vector<RegionSpec> specs, std::uint64_t seed,
                                        const SplitRatios& ratios = {}) {
  SyntheticRegion all;
  std::int64_t next = 1;
  for (std::size_t r = 0; r < specs.size(); ++r) {
    specs[r].first_polygon_id = next;
    auto reg = generate_region(specs[r], derive_seed(seed, r));
    next = reg.next_polygon_id;
    if (all.table.rows.empty()) {
      all.table.layer_names = reg.table.layer_names;
      all.table.timesteps = reg.table.timesteps;
    } else if (reg.table.layer_names != all.table.layer_names) {
      throw ShapeError("generate_regions: regions disagree on layers");
    }
    for (auto& row : reg.table.rows) all.table.rows.push_back(std::move(row));
    all.planted.insert(all.planted.end(), reg.planted.begin(), reg.planted.end());
  }
  all.next_polygon_id = next;
  apply_split(all.table, split_polygons(table_polygons(all.table), ratios, derive_seed(seed, 0x5917)));
  return all;
}

// ---------------------------------------------------------------------------
// Worlds

struct PixelRect {
  int row = 0, col = 0, rows = 0, cols = 0;
  bool contains(int r, int c) const { return r >= row && r < row + rows && c >= col && c < col + cols; }
};

struct WorldConfig {
  int width = 128;
  int height = 128;
  double pixel_size_m = 10.0;
  int years = 2;
  int field_size = 8;
  int field_gap = 2;
  double irrigated_share = 0.35;
  double non_irrigated_share = 0.35;
  double evergreen_share = 0.15;  // the remainder is barren
  double decline = 0.4;           // share of irrigated fields not irrigated in the second year
  int zones = 2;
  std::optional<PixelRect> steep;  // defaults to the bottom-right quarter
  double flat_slope_max = 4.0;
  double steep_slope = 12.0;
  int phase_offset = 0;
  std::string region = "world";
  std::uint64_t seed = 0;                  // field layout
  std::optional<std::uint64_t> noise_seed;  // pulse draws and noise; defaults to seed

  void validate() const {
    if (width < 1 || height < 1 || years < 1 || field_size < 1 || field_gap < 0 || zones < 1)
      throw NumericError("world: invalid dimensions");
    const double s = irrigated_share + non_irrigated_share + evergreen_share;
    if (irrigated_share < 0 || non_irrigated_share < 0 || evergreen_share < 0 || s > 1 + 1e-12)
      throw NumericError("world: land-cover shares must be non-negative and sum to at most 1");
  }
  PixelRect steep_rect() const { return steep.value_or(PixelRect{height * 3 / 4, width * 3 / 4, height - height * 3 / 4, width - width * 3 / 4}); }
};

struct World {
  RasterStack evi;    // 1 band "EVI", 36 steps per year
  RasterStack slope;  // percent
  RasterStack truth;  // one timestep per year, 1 = irrigated
  PolygonSet polygons;
  ZoneMap zones;
};

/// Rejects polygon sets whose outer-ring bounding boxes intersect with positive area.
inline void check_non_overlapping(const PolygonSet& polys) {
  struct Box { double x0, y0, x1, y1; };
  std::vector<Box> boxes;
  for (const auto& p : polys) {
    Box b{1e300, 1e300, -1e300, -1e300};
    for (const auto& v : p.rings.front()) {
      b.x0 = std::min(b.x0, v.x);
      b.y0 = std::min(b.y0, v.y);
      b.x1 = std::max(b.x1, v.x);
      b.y1 = std::max(b.y1, v.y);
    }
    boxes.push_back(b);
  }
  for (std::size_t i = 0; i < boxes.size(); ++i)
    for (std::size_t j = i + 1; j < boxes.size(); ++j)
      if (boxes[i].x0 < boxes[j].x1 && boxes[j].x0 < boxes[i].x1 && boxes[i].y0 < boxes[j].y1 &&
          boxes[j].y0 < boxes[i].y1)
        throw NumericError("generate_world: polygons " + std::to_string(polys[i].id) + " and " +
                           std::to_string(polys[j].id) + " overlap");
}

/// Square fields on a regular lattice over rain-fed background. Labeled polygons cover
/// the irrigated and non-irrigated fields; zones are vertical strips.
inline World generate_world(const WorldConfig& cfg) {
  cfg.validate();
  const int W = cfg.width, H = cfg.height, T = 36 * cfg.years;
  World w;
  StackHeader h;
  h.width = W;
  h.height = H;
  h.bands = {"EVI"};
  h.timesteps = T;
  h.pixel_size_m = cfg.pixel_size_m;
  w.evi = RasterStack::allocate(h);
  w.slope = make_plane(W, H, "slope", cfg.pixel_size_m);
  StackHeader th = h;
  th.bands = {"truth"};
  th.timesteps = cfg.years;
  w.truth = RasterStack::allocate(th);

  const int cell = cfg.field_size + cfg.field_gap;
  const int cells_x = std::max(0, (W - cfg.field_gap) / cell), cells_y = std::max(0, (H - cfg.field_gap) / cell);
  // per pixel: index of the owning field, or -1 for background
  std::vector<int> owner(static_cast<std::size_t>(W) * H, -1);
  struct Field {
    ProfileKind kind;
    bool declines;
  };
  std::vector<Field> fields;
  Rng layout = make_stream(cfg.seed, 0x1A40);
  for (int cy = 0; cy < cells_y; ++cy)
    for (int cx = 0; cx < cells_x; ++cx) {
      const double u = uniform01(layout);
      ProfileKind kind = ProfileKind::barren;
      if (u < cfg.irrigated_share) kind = ProfileKind::irrigated;
      else if (u < cfg.irrigated_share + cfg.non_irrigated_share) kind = ProfileKind::non_irrigated;
      else if (u < cfg.irrigated_share + cfg.non_irrigated_share + cfg.evergreen_share) kind = ProfileKind::evergreen;
      const bool declines = kind == ProfileKind::irrigated && uniform01(layout) < cfg.decline;
      const int id = static_cast<int>(fields.size());
      fields.push_back({kind, declines});
      const int r0 = cfg.field_gap + cy * cell, c0 = cfg.field_gap + cx * cell;
      for (int r = r0; r < r0 + cfg.field_size; ++r)
        for (int c = c0; c < c0 + cfg.field_size; ++c) owner[static_cast<std::size_t>(r) * W + c] = id;
      if (kind == ProfileKind::irrigated || kind == ProfileKind::non_irrigated) {
        Polygon p;
        p.id = id + 1;
        p.region = cfg.region;
        p.cls = profile_class(kind);
        const double x0 = c0, y0 = r0, x1 = c0 + cfg.field_size, y1 = r0 + cfg.field_size;
        p.rings.push_back({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
        w.polygons.push_back(std::move(p));
      }
    }
  check_non_overlapping(w.polygons);

  // Parameters per (field, year); background pixels draw their own.
  const std::uint64_t noise = cfg.noise_seed.value_or(cfg.seed);
  std::vector<std::vector<ProfileDraw>> draws(fields.size());
  for (std::size_t f = 0; f < fields.size(); ++f) {
    Rng rng = make_stream(noise, 0x100000 + f);
    for (int y = 0; y < cfg.years; ++y) {
      ProfileKind k = fields[f].kind;
      if (y > 0 && fields[f].declines) k = ProfileKind::non_irrigated;
      draws[f].push_back(draw_profile(PhenologyProfile::standard(k, cfg.phase_offset), rng));
    }
  }
  const PixelRect steep = cfg.steep_rect();
  parallel_for(static_cast<std::size_t>(H), [&](std::size_t rr) {
    const int r = static_cast<int>(rr);
    Rng rng = make_stream(noise, 0x200000 + rr);
    for (int c = 0; c < W; ++c) {
      const int f = owner[static_cast<std::size_t>(r) * W + c];
      for (int y = 0; y < cfg.years; ++y) {
        ProfileKind k = ProfileKind::non_irrigated;
        ProfileDraw d;
        if (f >= 0) {
          k = fields[static_cast<std::size_t>(f)].kind;
          if (y > 0 && fields[static_cast<std::size_t>(f)].declines) k = ProfileKind::non_irrigated;
          d = draws[static_cast<std::size_t>(f)][static_cast<std::size_t>(y)];
        } else {
          d = draw_profile(PhenologyProfile::standard(k, cfg.phase_offset), rng);
        }
        const auto s = render_series(d, PhenologyProfile::standard(k).noise_sigma, 36, rng);
        for (int t = 0; t < 36; ++t) w.evi.values[w.evi.index(y * 36 + t, 0, r, c)] = static_cast<float>(s[t]);
        w.truth.values[w.truth.index(y, 0, r, c)] = k == ProfileKind::irrigated ? 1.0f : 0.0f;
      }
      w.slope.values[w.slope.index(0, 0, r, c)] =
          static_cast<float>(steep.contains(r, c) ? cfg.steep_slope : cfg.flat_slope_max * uniform01(rng));
    }
  });

  w.zones.width = W;
  w.zones.height = H;
  w.zones.pixel_size_m = cfg.pixel_size_m;
  w.zones.ids.resize(static_cast<std::size_t>(W) * H);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) w.zones.at(r, c) = 1 + std::min(cfg.zones - 1, c * cfg.zones / W);
  for (int z = 1; z <= cfg.zones; ++z) w.zones.names[z] = "zone-" + std::to_string(z);
  return w;
}

// ---------------------------------------------------------------------------
// Scenes

struct SceneConfig {
  int pad_timesteps = 5;
  int scenes_per_window = 2;
  double clouded_scene_share = 0.2;  // scenes drawn above the 10% cloud threshold
  double empty_window_share = 0.05;  // windows without any acquisition
  std::uint64_t seed = 0;
};

/// Red and blue reflectances for an EVI value, with the near-infrared solved from the
/// EVI definition.
inline std::array<double, 3> reflectances_for_evi(double evi) {
  const double blue = 0.04, red = 0.02 + 0.08 * (1.0 - std::clamp(evi, 0.0, 1.0));
  const double nir = (evi * (6.0 * red - 7.5 * blue + 1.0) + 2.5 * red) / (2.5 - evi);
  return {blue, red, nir};
}

/// Acquisitions (bands blue, red, nir) over the padded period of a world's EVI stack.
/// Pad windows repeat the nearest core timestep; cloud masks are random rectangles.
inline std::vector<SceneImage> generate_scenes(const World& w, const SceneConfig& cfg) {
  const int T = w.evi.timesteps(), H = w.evi.height(), W = w.evi.width();
  const TimeGrid grid = TimeGrid::from_header(w.evi.header);
  std::vector<SceneImage> out;
  for (int t = -cfg.pad_timesteps; t < T + cfg.pad_timesteps; ++t) {
    Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(t + cfg.pad_timesteps));
    if (uniform01(rng) < cfg.empty_window_share) continue;
    const int core = std::clamp(t, 0, T - 1);
    for (int k = 0; k < cfg.scenes_per_window; ++k) {
      SceneImage img;
      img.id = "scene_" + std::to_string(t + cfg.pad_timesteps) + "_" + std::to_string(k);
      img.date = grid.window_start(t) + chr::days{static_cast<int>(uniform_index(rng, 10))};
      img.height = H;
      img.width = W;
      img.band_names = {"blue", "red", "nir"};
      img.values.resize(3 * img.pixels());
      img.clouded.assign(img.pixels(), 0);
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
          const auto refl = reflectances_for_evi(w.evi.at(core, 0, r, c));
          for (int b = 0; b < 3; ++b)
            img.values[(static_cast<std::size_t>(b) * H + r) * W + c] = static_cast<float>(refl[b]);
        }
      const bool heavy = uniform01(rng) < cfg.clouded_scene_share;
      const double target = heavy ? 0.3 + 0.4 * uniform01(rng) : 0.08 * uniform01(rng);
      const int ch = std::max(1, static_cast<int>(std::sqrt(target) * H)), cw = std::max(1, static_cast<int>(std::sqrt(target) * W));
      if (target > 0.005) {
        const int r0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(std::max(1, H - ch + 1))));
        const int c0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(std::max(1, W - cw + 1))));
        for (int r = r0; r < std::min(H, r0 + ch); ++r)
          for (int c = c0; c < std::min(W, c0 + cw); ++c) img.clouded[static_cast<std::size_t>(r) * W + c] = 1;
      }
      img.update_cloud_fraction();
      out.push_back(std::move(img));
    }
  }
  return out;
}

}  // namespace irrig
