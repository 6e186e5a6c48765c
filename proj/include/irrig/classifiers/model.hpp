#pragma once

// Common handle over every classifier variant, with persistence as
// `<name>.model.json` metadata plus a `<name>.model.bin` little-endian f64 blob.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "irrig/admissibility.hpp"
#include "irrig/classifiers/dataset.hpp"
#include "irrig/classifiers/transformer.hpp"
#include "irrig/classifiers/trees.hpp"
#include "irrig/core/error.hpp"
#include "irrig/core/parallel.hpp"

namespace irrig {

enum class ModelVariant { reference, random_forest, gbdt, transformer };

inline std::string_view to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::reference: return "reference";
    case ModelVariant::random_forest: return "random_forest";
    case ModelVariant::gbdt: return "gbdt";
    case ModelVariant::transformer: return "transformer";
  }
  return "?";
}

inline ModelVariant parse_model_variant(std::string_view s) {
  if (s == "reference") return ModelVariant::reference;
  if (s == "random_forest" || s == "random-forest" || s == "rf") return ModelVariant::random_forest;
  if (s == "gbdt") return ModelVariant::gbdt;
  if (s == "transformer") return ModelVariant::transformer;
  throw FormatError("unknown model variant '" + std::string(s) + "'");
}

struct ReferenceRule {
  AdmissibilityRules rules;
  double slope_percent = 0.0;  // samples carry no terrain, so flat ground is assumed
};

struct TrainedModel {
  ModelVariant variant = ModelVariant::reference;
  InputMode input_mode = InputMode::evi;
  int layers = 1;
  int timesteps = 36;
  Standardizer standardizer;
  std::variant<ReferenceRule, Forest, Gbdt, TransformerNet> params;
  nlohmann::json metadata = nlohmann::json::object();

  void check_input(const Dataset& d) const {
    if (d.layers != layers || d.timesteps != timesteps)
      throw ShapeError("model expects " + std::to_string(layers) + " x " + std::to_string(timesteps) +
                       " samples, got " + std::to_string(d.layers) + " x " + std::to_string(d.timesteps));
  }
};

inline TrainedModel make_reference_model(int timesteps = 36, const AdmissibilityRules& rules = {}) {
  TrainedModel m;
  m.variant = ModelVariant::reference;
  m.input_mode = InputMode::evi;
  m.layers = 1;
  m.timesteps = timesteps;
  m.params = ReferenceRule{rules, 0.0};
  return m;
}

/// Standardized copy of every sample in a dataset.
inline std::vector<double> standardized_features(const Dataset& d, const Standardizer& s) {
  std::vector<double> x = d.features;
  for (std::size_t i = 0; i < d.size(); ++i)
    standardize_in_place({x.data() + i * d.width(), d.width()}, s, d.timesteps);
  return x;
}

/// Irrigated-class probability of every sample. Deterministic for any thread count.
inline std::vector<double> predict_proba(const TrainedModel& model, const Dataset& data) {
  model.check_input(data);
  const std::size_t N = data.size(), w = data.width();
  std::vector<double> out(N, 0.0);
  if (N == 0) return out;
  if (model.variant == ModelVariant::reference) {
    const auto& rule = std::get<ReferenceRule>(model.params);
    TimeGrid grid;
    grid.timesteps = model.timesteps;
    parallel_for(N, [&](std::size_t i) {
      out[i] = reference_classify(data.sample(i), rule.slope_percent, grid, rule.rules) == LandClass::irrigated;
    });
    return out;
  }
  const auto x = standardized_features(data, model.standardizer);
  auto row = [&](std::size_t i) { return std::span<const double>(x.data() + i * w, w); };
  switch (model.variant) {
    case ModelVariant::random_forest: {
      const auto& f = std::get<Forest>(model.params);
      parallel_for(N, [&](std::size_t i) { out[i] = f.predict(row(i)); });
      break;
    }
    case ModelVariant::gbdt: {
      const auto& g = std::get<Gbdt>(model.params);
      parallel_for(N, [&](std::size_t i) { out[i] = g.predict(row(i)); });
      break;
    }
    case ModelVariant::transformer: {
      const auto& net = std::get<TransformerNet>(model.params);
      const std::size_t chunks = (N + 63) / 64;
      parallel_for(chunks, [&](std::size_t c) {
        TransformerWorkspace ws;
        ws.resize(net.config());
        for (std::size_t i = c * 64; i < std::min(N, c * 64 + 64); ++i) out[i] = net.predict(row(i), ws);
      });
      break;
    }
    default: break;
  }
  return out;
}

inline std::vector<int> predict_class(const TrainedModel& model, const Dataset& data) {
  const auto p = predict_proba(model, data);
  std::vector<int> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] >= 0.5 ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kModelFormatVersion = 1;

namespace detail {

struct BlobWriter {
  std::vector<double> data;
  void put(double v) { data.push_back(v); }
  void put(std::span<const double> v) { data.insert(data.end(), v.begin(), v.end()); }
  void put_tree(const Tree& t) {
    for (const auto& n : t.nodes) {
      put(n.feature);
      put(n.threshold);
      put(n.left);
      put(n.right);
      put(n.value);
    }
  }
};

struct BlobReader {
  std::span<const double> data;
  std::size_t pos = 0;
  double get() {
    if (pos >= data.size()) throw FormatError("model blob: truncated data");
    return data[pos++];
  }
  std::vector<double> get(std::size_t n) {
    if (pos + n > data.size()) throw FormatError("model blob: truncated data");
    std::vector<double> v(data.begin() + pos, data.begin() + pos + n);
    pos += n;
    return v;
  }
  Tree get_tree(std::size_t nodes) {
    Tree t;
    t.nodes.resize(nodes);
    for (auto& n : t.nodes) {
      n.feature = static_cast<int>(get());
      n.threshold = get();
      n.left = static_cast<int>(get());
      n.right = static_cast<int>(get());
      n.value = get();
    }
    return t;
  }
};

inline fs::path model_blob_path(const fs::path& header) {
  std::string name = header.filename().string();
  const std::string suffix = ".model.json";
  if (name.size() > suffix.size() && name.ends_with(suffix)) name.resize(name.size() - suffix.size());
  return header.parent_path() / (name + ".model.bin");
}

inline fs::path model_header_path(const fs::path& path) {
  const std::string name = path.filename().string();
  if (name.ends_with(".model.json")) return path;
  return path.parent_path() / (name + ".model.json");
}

}  // namespace detail

inline void save_model(const TrainedModel& m, const fs::path& path) {
  const fs::path header = detail::model_header_path(path);
  const fs::path blob_path = detail::model_blob_path(header);
  detail::BlobWriter blob;
  nlohmann::json j;
  j["format"] = "irrig-model";
  j["version"] = kModelFormatVersion;
  j["variant"] = std::string(to_string(m.variant));
  j["input_mode"] = std::string(to_string(m.input_mode));
  j["layers"] = m.layers;
  j["timesteps"] = m.timesteps;
  j["metadata"] = m.metadata;
  j["blob"] = blob_path.filename().string();
  j["standardizer_layers"] = m.standardizer.mean.size();
  blob.put(m.standardizer.mean);
  blob.put(m.standardizer.stddev);
  switch (m.variant) {
    case ModelVariant::reference: {
      const auto& r = std::get<ReferenceRule>(m.params);
      const std::vector<double> v{r.rules.evi_threshold,     r.rules.low_percentile,    r.rules.high_percentile,
                                  r.rules.min_percentile_ratio, r.rules.max_slope_percent, r.rules.ratio_floor,
                                  r.slope_percent};
      blob.put(v);
      break;
    }
    case ModelVariant::random_forest: {
      const auto& f = std::get<Forest>(m.params);
      j["features"] = f.features;
      auto counts = nlohmann::json::array();
      for (const auto& t : f.trees) {
        counts.push_back(t.nodes.size());
        blob.put_tree(t);
      }
      j["tree_nodes"] = counts;
      break;
    }
    case ModelVariant::gbdt: {
      const auto& g = std::get<Gbdt>(m.params);
      j["best_round"] = g.best_round;
      j["train_logloss"] = g.train_logloss;
      j["valid_logloss"] = g.valid_logloss;
      blob.put(g.base_logit);
      blob.put(g.learning_rate);
      auto counts = nlohmann::json::array();
      for (const auto& t : g.trees) {
        counts.push_back(t.nodes.size());
        blob.put_tree(t);
      }
      j["tree_nodes"] = counts;
      break;
    }
    case ModelVariant::transformer: {
      const auto& net = std::get<TransformerNet>(m.params);
      const auto& c = net.config();
      j["network"] = {{"inputs", c.inputs}, {"timesteps", c.timesteps}, {"d_model", c.d_model},
                      {"heads", c.heads},   {"ff", c.ff},               {"dense", c.dense}};
      j["parameters"] = net.parameter_count();
      blob.put(net.params());
      break;
    }
  }
  j["blob_values"] = blob.data.size();
  if (!header.parent_path().empty()) fs::create_directories(header.parent_path());
  detail::write_json_file(header, j);
  std::ofstream out(blob_path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + blob_path.string());
  static_assert(std::endian::native == std::endian::little, "model blobs assume a little-endian host");
  out.write(reinterpret_cast<const char*>(blob.data.data()),
            static_cast<std::streamsize>(blob.data.size() * sizeof(double)));
  if (!out) throw FormatError("write failed: " + blob_path.string());
}

inline TrainedModel load_model(const fs::path& path) {
  const fs::path header = detail::model_header_path(path);
  const auto j = detail::read_json_file(header);
  if (j.value("format", "") != "irrig-model") throw FormatError(header.string() + ": not a model file");
  if (j.at("version").get<int>() != kModelFormatVersion)
    throw FormatError(header.string() + ": unknown model version " + j.at("version").dump());
  const auto bytes = detail::read_bytes(header.parent_path() / j.at("blob").get<std::string>());
  const std::size_t n = j.at("blob_values").get<std::size_t>();
  if (bytes.size() != n * sizeof(double)) throw FormatError("model blob: truncated data");
  std::vector<double> values(n);
  if (n > 0) std::memcpy(values.data(), bytes.data(), bytes.size());
  detail::BlobReader blob{values};

  TrainedModel m;
  m.variant = parse_model_variant(j.at("variant").get<std::string>());
  m.input_mode = parse_input_mode(j.at("input_mode").get<std::string>());
  m.layers = j.at("layers").get<int>();
  m.timesteps = j.at("timesteps").get<int>();
  m.metadata = j.value("metadata", nlohmann::json::object());
  const auto sl = j.at("standardizer_layers").get<std::size_t>();
  m.standardizer.mean = blob.get(sl);
  m.standardizer.stddev = blob.get(sl);
  switch (m.variant) {
    case ModelVariant::reference: {
      ReferenceRule r;
      r.rules.evi_threshold = blob.get();
      r.rules.low_percentile = blob.get();
      r.rules.high_percentile = blob.get();
      r.rules.min_percentile_ratio = blob.get();
      r.rules.max_slope_percent = blob.get();
      r.rules.ratio_floor = blob.get();
      r.slope_percent = blob.get();
      m.params = r;
      break;
    }
    case ModelVariant::random_forest: {
      Forest f;
      f.features = j.at("features").get<std::size_t>();
      for (const auto& c : j.at("tree_nodes")) f.trees.push_back(blob.get_tree(c.get<std::size_t>()));
      m.params = std::move(f);
      break;
    }
    case ModelVariant::gbdt: {
      Gbdt g;
      g.best_round = j.at("best_round").get<int>();
      g.train_logloss = j.at("train_logloss").get<std::vector<double>>();
      g.valid_logloss = j.at("valid_logloss").get<std::vector<double>>();
      g.base_logit = blob.get();
      g.learning_rate = blob.get();
      for (const auto& c : j.at("tree_nodes")) g.trees.push_back(blob.get_tree(c.get<std::size_t>()));
      m.params = std::move(g);
      break;
    }
    case ModelVariant::transformer: {
      const auto& c = j.at("network");
      TransformerConfig cfg;
      cfg.inputs = c.at("inputs").get<int>();
      cfg.timesteps = c.at("timesteps").get<int>();
      cfg.d_model = c.at("d_model").get<int>();
      cfg.heads = c.at("heads").get<int>();
      cfg.ff = c.at("ff").get<int>();
      cfg.dense = c.at("dense").get<int>();
      TransformerNet net(cfg);
      net.params() = blob.get(net.parameter_count());
      m.params = std::move(net);
      break;
    }
  }
  if (blob.pos != values.size()) throw FormatError("model blob: trailing data");
  return m;
}

}  // namespace irrig
