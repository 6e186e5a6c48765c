#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irrig/core/error.hpp"
#include "irrig/raster_io.hpp"
#include "irrig/timeseries.hpp"

namespace irrig {

enum class InputMode { all_bands, evi, evi_shifted };

inline std::string_view to_string(InputMode m) {
  switch (m) {
    case InputMode::all_bands: return "all-bands";
    case InputMode::evi: return "evi";
    case InputMode::evi_shifted: return "evi-shifted";
  }
  return "?";
}

inline InputMode parse_input_mode(std::string_view s) {
  if (s == "all-bands" || s == "all_bands" || s == "ALL_BANDS") return InputMode::all_bands;
  if (s == "evi" || s == "EVI") return InputMode::evi;
  if (s == "evi-shifted" || s == "evi_shifted" || s == "EVI_SHIFTED") return InputMode::evi_shifted;
  throw FormatError("unknown input mode '" + std::string(s) + "'");
}

/// N samples of L layers x T timesteps, stored sample-major as (n * L + l) * T + t.
/// Features are raw (unstandardized); models carry their own standardizer.
struct Dataset {
  int layers = 1;
  int timesteps = 0;
  std::vector<double> features;
  std::vector<int> labels;
  std::vector<double> weights;
  std::vector<std::string> regions;
  std::vector<std::int64_t> polygons;

  std::size_t size() const { return labels.size(); }
  std::size_t width() const { return static_cast<std::size_t>(layers) * timesteps; }

  std::span<const double> sample(std::size_t i) const { return {features.data() + i * width(), width()}; }
  std::span<double> sample(std::size_t i) { return {features.data() + i * width(), width()}; }

  void push(std::span<const double> x, int label, double weight, std::string region, std::int64_t polygon = 0) {
    if (x.size() != width()) throw ShapeError("dataset: sample width mismatch");
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
    weights.push_back(weight);
    regions.push_back(std::move(region));
    polygons.push_back(polygon);
  }

  void append(const Dataset& other) {
    if (other.size() == 0) return;
    if (size() == 0 && features.empty()) {
      layers = other.layers;
      timesteps = other.timesteps;
    }
    if (other.layers != layers || other.timesteps != timesteps) throw ShapeError("dataset: append shape mismatch");
    features.insert(features.end(), other.features.begin(), other.features.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    weights.insert(weights.end(), other.weights.begin(), other.weights.end());
    regions.insert(regions.end(), other.regions.begin(), other.regions.end());
    polygons.insert(polygons.end(), other.polygons.begin(), other.polygons.end());
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d;
    d.layers = layers;
    d.timesteps = timesteps;
    for (auto i : idx) d.push(sample(i), labels[i], weights[i], regions[i], polygons[i]);
    return d;
  }

  void validate() const {
    const std::size_t n = labels.size();
    if (features.size() != n * width() || weights.size() != n || regions.size() != n || polygons.size() != n)
      throw ShapeError("dataset: inconsistent array lengths");
    for (double w : weights)
      if (!(w > 0) || !std::isfinite(w)) throw NumericError("dataset: weights must be finite and positive");
    for (int y : labels)
      if (y != 0 && y != 1) throw NumericError("dataset: labels must be 0 or 1");
  }

  bool has_both_classes() const {
    const bool any1 = std::find(labels.begin(), labels.end(), 1) != labels.end();
    const bool any0 = std::find(labels.begin(), labels.end(), 0) != labels.end();
    return any0 && any1;
  }
};

/// Feature layers consumed by an input mode: the EVI layer, or every non-EVI band layer.
inline std::vector<int> mode_layers(const SampleTable& table, InputMode mode) {
  std::vector<int> out;
  if (mode == InputMode::all_bands) {
    for (std::size_t l = 0; l < table.layer_names.size(); ++l)
      if (table.layer_names[l] != "EVI") out.push_back(static_cast<int>(l));
    if (out.empty()) throw FormatError("all-bands mode needs band layers besides EVI");
  } else {
    out.push_back(table.layer_index("EVI"));
  }
  return out;
}

/// Rows of `table` that satisfy `keep`, restricted to the layers of `mode`; unit weights.
template <class Pred>
Dataset make_dataset(const SampleTable& table, InputMode mode, Pred&& keep) {
  const auto layers = mode_layers(table, mode);
  Dataset d;
  d.layers = static_cast<int>(layers.size());
  d.timesteps = table.timesteps;
  std::vector<double> buf(d.width());
  for (const auto& r : table.rows) {
    if (!keep(r)) continue;
    for (std::size_t l = 0; l < layers.size(); ++l)
      std::copy(r.layers[layers[l]].begin(), r.layers[layers[l]].end(), buf.begin() + l * table.timesteps);
    d.push(buf, static_cast<int>(r.cls), 1.0, r.region, r.polygon_id);
  }
  return d;
}

inline Dataset make_dataset(const SampleTable& table, InputMode mode) {
  return make_dataset(table, mode, [](const PixelSample&) { return true; });
}

/// Per-layer mean and population std over every value of a dataset.
inline Standardizer fit_standardizer(const Dataset& d) {
  Standardizer s;
  s.mean.assign(d.layers, 0.0);
  s.stddev.assign(d.layers, 0.0);
  const std::size_t T = d.timesteps;
  for (int l = 0; l < d.layers; ++l) {
    double sum = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t t = 0; t < T; ++t) sum += d.sample(i)[l * T + t];
    const double n = static_cast<double>(d.size() * T);
    if (n == 0) throw NumericError("fit_standardizer: empty dataset");
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t t = 0; t < T; ++t) {
        const double v = d.sample(i)[l * T + t] - mean;
        ss += v * v;
      }
    const double sd = std::sqrt(ss / n);
    if (!(sd > 0)) throw NumericError("fit_standardizer: constant training layer " + std::to_string(l));
    s.mean[l] = mean;
    s.stddev[l] = sd;
  }
  return s;
}

inline void standardize_in_place(std::span<double> x, const Standardizer& s, int timesteps) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t l = i / static_cast<std::size_t>(timesteps);
    x[i] = (x[i] - s.mean[l]) / s.stddev[l];
  }
}

}  // namespace irrig
