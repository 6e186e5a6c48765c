#pragma once

// Cloud-free compositing of per-acquisition scenes into a regular, gap-free stack.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irrig/core/error.hpp"
#include "irrig/core/parallel.hpp"
#include "irrig/raster_io.hpp"
#include "irrig/timeseries.hpp"

namespace irrig {

struct SceneImage {
  std::string id;
  chr::sys_days date{};
  int height = 0;
  int width = 0;
  std::vector<std::string> band_names;
  std::vector<float> values;           // band-major: (b * H + r) * W + c
  std::vector<std::uint8_t> clouded;   // H x W, 1 = clouded
  double cloud_fraction = 0.0;

  int bands() const { return static_cast<int>(band_names.size()); }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }

  /// Recomputes cloud_fraction from the mask.
  void update_cloud_fraction() {
    const auto n = static_cast<double>(pixels());
    cloud_fraction = n > 0 ? static_cast<double>(std::count(clouded.begin(), clouded.end(), 1)) / n : 0.0;
  }

  void validate() const {
    if (values.size() != pixels() * band_names.size() || clouded.size() != pixels())
      throw ShapeError("scene '" + id + "': band or mask size mismatch");
  }
};

struct MosaicConfig {
  double scene_cloud_threshold = 0.10;
  int timestep_days = 10;
  int pad_timesteps = 5;
  bool smooth = true;

  void validate() const {
    if (!(scene_cloud_threshold > 0 && scene_cloud_threshold <= 1))
      throw NumericError("mosaic: scene_cloud_threshold must lie in (0, 1]");
    if (pad_timesteps < 0) throw NumericError("mosaic: pad_timesteps must be >= 0");
    if (timestep_days <= 0) throw NumericError("mosaic: timestep_days must be positive");
  }
};

struct Composite {
  std::vector<float> values;         // B x H x W
  std::vector<std::uint8_t> valid;   // H x W
  int scenes_used = 0;
};

namespace detail {
inline std::vector<const SceneImage*> order_by_cloud(std::span<const SceneImage> scenes) {
  std::vector<const SceneImage*> order;
  for (const auto& s : scenes) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const SceneImage* a, const SceneImage* b) {
    if (a->cloud_fraction != b->cloud_fraction) return a->cloud_fraction < b->cloud_fraction;
    if (a->date != b->date) return a->date < b->date;
    return a->id < b->id;
  });
  return order;
}
}  // namespace detail

/// Per pixel, takes the value from the least-cloudy scene in which the pixel is clear,
/// falling back through scenes in ascending cloud order (ties: earlier date, then id).
inline Composite composite_timestep(std::span<const SceneImage> scenes, int bands, int height, int width) {
  const std::size_t P = static_cast<std::size_t>(height) * width;
  Composite out;
  out.values.assign(P * bands, std::numeric_limits<float>::quiet_NaN());
  out.valid.assign(P, 0);
  out.scenes_used = static_cast<int>(scenes.size());
  for (const auto& s : scenes) {
    s.validate();
    if (s.height != height || s.width != width || s.bands() != bands)
      throw ShapeError("composite_timestep: scene '" + s.id + "' shape differs from the others");
  }
  const auto order = detail::order_by_cloud(scenes);
  for (std::size_t p = 0; p < P; ++p) {
    for (const SceneImage* s : order) {
      if (s->clouded[p]) continue;
      for (int b = 0; b < bands; ++b) out.values[b * P + p] = s->values[b * P + p];
      out.valid[p] = 1;
      break;
    }
  }
  return out;
}

inline Composite composite_timestep(std::span<const SceneImage> scenes) {
  if (scenes.empty()) throw ShapeError("composite_timestep: shape unknown without scenes");
  return composite_timestep(scenes, scenes.front().bands(), scenes.front().height, scenes.front().width);
}

struct MosaicResult {
  RasterStack stack;                  // core period, fully valid
  std::vector<std::uint8_t> observed;  // T x H x W validity before interpolation (core period)
  std::vector<int> scenes_per_window;  // scenes accepted per core timestep
};

/// Composites every window of the padded period, fills gaps along time, smooths each
/// band and discards the pads. Scenes at or above the cloud threshold are dropped.
inline MosaicResult build_stack(std::span<const SceneImage> scenes, const MosaicConfig& config,
                                const TimeGrid& grid) {
  config.validate();
  if (scenes.empty()) throw ShapeError("build_stack: no scenes");
  const int B = scenes.front().bands(), H = scenes.front().height, W = scenes.front().width;
  const int pad = config.pad_timesteps;
  const int total = grid.timesteps + 2 * pad;
  TimeGrid padded = grid;
  padded.step_days = config.timestep_days;

  std::vector<std::vector<SceneImage>> windows(static_cast<std::size_t>(total));
  for (const auto& s : scenes) {
    if (!(s.cloud_fraction < config.scene_cloud_threshold)) continue;
    const int k = padded.index_of(s.date) + pad;
    if (k >= 0 && k < total) windows[k].push_back(s);
  }

  const std::size_t P = static_cast<std::size_t>(H) * W;
  std::vector<Composite> comps(static_cast<std::size_t>(total));
  for (int k = 0; k < total; ++k) {
    if (windows[k].empty()) {
      comps[k].values.assign(P * B, std::numeric_limits<float>::quiet_NaN());
      comps[k].valid.assign(P, 0);
    } else {
      comps[k] = composite_timestep(windows[k], B, H, W);
    }
  }

  StackHeader h;
  h.width = W;
  h.height = H;
  h.bands = scenes.front().band_names;
  h.timesteps = grid.timesteps;
  h.start_date = format_date(grid.start);
  h.step_days = config.timestep_days;
  MosaicResult result;
  result.stack = RasterStack::allocate(h);
  result.observed.assign(static_cast<std::size_t>(grid.timesteps) * P, 0);
  for (int t = 0; t < grid.timesteps; ++t) {
    result.scenes_per_window.push_back(static_cast<int>(windows[t + pad].size()));
    for (std::size_t p = 0; p < P; ++p) result.observed[t * P + p] = comps[t + pad].valid[p];
  }

  std::vector<std::size_t> never_valid(P, 0);
  parallel_for(P, [&](std::size_t p) {
    TimeSeries s;
    s.values.resize(static_cast<std::size_t>(total));
    s.valid.resize(static_cast<std::size_t>(total));
    for (int k = 0; k < total; ++k) s.valid[k] = comps[k].valid[p];
    if (s.valid_count() == 0) {
      never_valid[p] = 1;
      return;
    }
    for (int b = 0; b < B; ++b) {
      for (int k = 0; k < total; ++k) s.values[k] = comps[k].values[b * P + p];
      auto filled = interpolate_gaps(s);
      if (config.smooth && total >= 5) filled = savgol_smooth(filled);
      const int r = static_cast<int>(p / W), c = static_cast<int>(p % W);
      for (int t = 0; t < grid.timesteps; ++t) result.stack.at(t, b, r, c) = static_cast<float>(filled[t + pad]);
    }
  });
  std::string missing;
  std::size_t count = 0;
  for (std::size_t p = 0; p < P; ++p) {
    if (!never_valid[p]) continue;
    if (count++ < 10) missing += " (" + std::to_string(p / W) + "," + std::to_string(p % W) + ")";
  }
  if (count > 0)
    throw NumericError("build_stack: " + std::to_string(count) + " pixel(s) invalid at every timestep:" + missing);
  return result;
}

/// Splits a multi-year stack into consecutive annual slices.
inline std::vector<RasterStack> split_years(const RasterStack& stack, int steps_per_year = 36) {
  if (stack.timesteps() % steps_per_year != 0) throw ShapeError("split_years: timesteps not a whole number of years");
  const int years = stack.timesteps() / steps_per_year;
  std::vector<RasterStack> out;
  const auto start = parse_date(stack.header.start_date);
  for (int y = 0; y < years; ++y) {
    StackHeader h = stack.header;
    h.timesteps = steps_per_year;
    h.start_date = format_date(chr::year_month_day{
        chr::sys_days{start} + chr::days{y * steps_per_year * stack.header.step_days}});
    auto slice = RasterStack::allocate(h);
    const std::size_t per_step = static_cast<std::size_t>(stack.bands()) * stack.pixels();
    const std::size_t offset = static_cast<std::size_t>(y) * steps_per_year * per_step;
    std::copy_n(stack.values.begin() + offset, slice.values.size(), slice.values.begin());
    std::copy_n(stack.valid.begin() + offset, slice.valid.size(), slice.valid.begin());
    out.push_back(std::move(slice));
  }
  return out;
}

struct InterpolationReport {
  std::size_t cells = 0;
  double total_fraction = 0.0;
  std::optional<double> dry_fraction;    // over dry-season cells, when the grid supports it
  std::optional<double> rainy_fraction;
  double from_empty_windows = 0.0;       // share of interpolated cells in windows with no scene
  double from_masking = 0.0;             // share caused by per-pixel cloud masks
};

/// Interpolation statistics of a pre-interpolation validity mask (T x H x W).
inline InterpolationReport interpolation_stats(std::span<const std::uint8_t> observed,
                                               std::span<const int> scenes_per_window, std::size_t pixels,
                                               const TimeGrid& grid) {
  const std::size_t T = static_cast<std::size_t>(grid.timesteps);
  if (observed.size() != T * pixels || scenes_per_window.size() != T)
    throw ShapeError("interpolation_stats: mask shape does not match the grid");
  InterpolationReport rep;
  rep.cells = observed.size();
  std::vector<std::size_t> per_step(T, 0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t p = 0; p < pixels; ++p) per_step[t] += observed[t * pixels + p] ? 0 : 1;
  std::size_t interpolated = 0, empty = 0;
  for (std::size_t t = 0; t < T; ++t) {
    interpolated += per_step[t];
    if (scenes_per_window[t] == 0) empty += per_step[t];
  }
  if (rep.cells > 0) rep.total_fraction = static_cast<double>(interpolated) / static_cast<double>(rep.cells);
  if (interpolated > 0) {
    rep.from_empty_windows = static_cast<double>(empty) / static_cast<double>(interpolated);
    rep.from_masking = 1.0 - rep.from_empty_windows;
  }
  const bool seasonal = static_cast<unsigned>(grid.start.month()) == 6 &&
                        static_cast<unsigned>(grid.start.day()) == 1 && grid.step_days == 10 &&
                        grid.timesteps % 36 == 0;
  if (seasonal) {
    for (Season kind : {Season::dry, Season::rainy}) {
      std::size_t hit = 0, cells = 0;
      for (int y = 0; y < grid.timesteps / 36; ++y) {
        const auto w = season_window(grid, kind, y);
        for (int t = w.lo; t <= w.hi; ++t) {
          hit += per_step[t];
          cells += pixels;
        }
      }
      const double f = cells ? static_cast<double>(hit) / static_cast<double>(cells) : 0.0;
      (kind == Season::dry ? rep.dry_fraction : rep.rainy_fraction) = f;
    }
  }
  return rep;
}

/// Loads a scene stored as a one-timestep stack (invalid cells = clouded) with a JSON
/// sidecar `<name>.scene.json` holding {"date": ..., "cloud_fraction": ...}.
inline SceneImage read_scene(const fs::path& path) {
  const auto s = read_stack(path);
  if (s.timesteps() != 1) throw FormatError("scene stack must have exactly 1 timestep");
  const auto paths = stack_paths(path);
  const auto meta = detail::read_json_file(paths.header.parent_path() / (paths.name + ".scene.json"));
  SceneImage img;
  img.id = paths.name;
  img.date = chr::sys_days{parse_date(meta.at("date").get<std::string>())};
  img.height = s.height();
  img.width = s.width();
  img.band_names = s.header.bands;
  img.values = s.values;
  img.clouded.assign(s.pixels(), 0);
  for (int b = 0; b < s.bands(); ++b)
    for (std::size_t p = 0; p < s.pixels(); ++p)
      if (!s.valid[b * s.pixels() + p]) img.clouded[p] = 1;
  img.update_cloud_fraction();
  if (meta.contains("cloud_fraction")) {
    const double declared = meta["cloud_fraction"].get<double>();
    if (std::abs(declared - img.cloud_fraction) > 1e-9)
      throw FormatError("scene '" + img.id + "': cloud_fraction disagrees with its mask");
  }
  return img;
}

inline void write_scene(const SceneImage& img, const fs::path& path) {
  img.validate();
  StackHeader h;
  h.width = img.width;
  h.height = img.height;
  h.bands = img.band_names;
  h.timesteps = 1;
  h.start_date = format_date(chr::year_month_day{img.date});
  auto s = RasterStack::allocate(h);
  s.values = img.values;
  const std::size_t P = img.pixels();
  for (int b = 0; b < img.bands(); ++b)
    for (std::size_t p = 0; p < P; ++p)
      if (img.clouded[p]) {
        s.valid[b * P + p] = 0;
        s.values[b * P + p] = std::numeric_limits<float>::quiet_NaN();
      }
  write_stack(s, path);
  const auto paths = stack_paths(path);
  detail::write_json_file(paths.header.parent_path() / (paths.name + ".scene.json"),
                          {{"date", format_date(chr::year_month_day{img.date})}, {"cloud_fraction", img.cloud_fraction}});
}

/// One-band EVI stack from a stack holding blue, red and nir bands. Cells whose inputs
/// are invalid or whose index is undefined stay invalid.
inline RasterStack evi_from_bands(const RasterStack& bands, std::string_view blue = "blue",
                                  std::string_view red = "red", std::string_view nir = "nir") {
  const int b = bands.band_index(blue), r = bands.band_index(red), n = bands.band_index(nir);
  StackHeader h = bands.header;
  h.bands = {"EVI"};
  auto out = RasterStack::allocate(h);
  for (int t = 0; t < bands.timesteps(); ++t)
    for (int y = 0; y < bands.height(); ++y)
      for (int x = 0; x < bands.width(); ++x) {
        std::optional<double> v;
        if (bands.is_valid(t, b, y, x) && bands.is_valid(t, r, y, x) && bands.is_valid(t, n, y, x))
          v = compute_evi(bands.at(t, b, y, x), bands.at(t, r, y, x), bands.at(t, n, y, x));
        if (v) out.values[out.index(t, 0, y, x)] = static_cast<float>(*v);
        else out.set_invalid(t, 0, y, x);
      }
  return out;
}

}  // namespace irrig
