#pragma once

// Verb-style command line over the whole pipeline. Every invocation writes a `run.json`
// manifest (inputs, effective config, seed, output hashes) that `replay` re-executes and
// verifies.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "irrig/admissibility.hpp"
#include "irrig/classifiers/model.hpp"
#include "irrig/core/config_util.hpp"
#include "irrig/core/error.hpp"
#include "irrig/core/log.hpp"
#include "irrig/core/parallel.hpp"
#include "irrig/core/random.hpp"
#include "irrig/diagnostics.hpp"
#include "irrig/harness.hpp"
#include "irrig/inference.hpp"
#include "irrig/labels.hpp"
#include "irrig/mosaic.hpp"
#include "irrig/raster_io.hpp"
#include "irrig/synth.hpp"
#include "irrig/timeseries.hpp"
#include "irrig/unmix.hpp"

namespace irrig::cli {

inline constexpr std::string_view kVersion = "1.0.0";
inline constexpr std::string_view kManifestName = "run.json";

/// Bad flags or config: reported with usage text and exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

enum class Kind { integer, real, boolean, text, input, int_list, real_list, text_list, object, object_list };

struct Option {
  std::string key;
  Kind kind;
  json fallback;
  std::string help;
};

struct Invocation {
  std::string verb;
  json config;  // effective value of every option
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  fs::path out;
  std::ostream* messages = &std::cout;

  template <class T>
  T get(const std::string& key) const {
    return config.at(key).get<T>();
  }
  fs::path path(const std::string& key) const {
    const auto p = config.at(key).get<std::string>();
    if (p.empty()) throw UsageError(verb + ": --" + key + " is required");
    return p;
  }
  fs::path output(const std::string& name) const { return out / name; }
  void say(const std::string& line) const { *messages << line << "\n"; }
};

struct Verb {
  std::string name;  // nested verbs are "parent child"
  std::string help;
  std::vector<Option> options;
  std::function<void(const Invocation&)> handler;
};

// ---------------------------------------------------------------------------
// Hashing

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string file_hash(const fs::path& p) {
  const auto bytes = irrig::detail::read_bytes(p);
  return hex64(fnv1a({bytes.data(), bytes.size()}));
}

/// Every regular file below `dir`, relative and sorted; `skip` names top-level files to omit.
inline std::map<std::string, std::string> directory_hashes(const fs::path& dir, const std::set<std::string>& skip = {}) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (skip.count(rel)) continue;
    out[rel] = file_hash(e.path());
  }
  return out;
}

/// A file together with its companions sharing the name before the first dot
/// (stack data and mask, zone names, model blob, scene sidecar); a directory in full.
inline std::map<std::string, std::string> input_hashes(const fs::path& p) {
  if (fs::is_directory(p)) return directory_hashes(p);
  if (!fs::exists(p)) throw Error("input not found: " + p.string());
  const std::string name = p.filename().string();
  const std::string stem = name.substr(0, name.find('.'));
  const fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto n = e.path().filename().string();
    if (n == name || (n.size() > stem.size() && n.compare(0, stem.size(), stem) == 0 && n[stem.size()] == '.'))
      out[n] = file_hash(e.path());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Option values

namespace detail {

inline std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

inline json parse_scalar(Kind kind, const std::string& raw, const std::string& key) {
  try {
    switch (kind) {
      case Kind::integer:
      case Kind::int_list: {
        std::size_t used = 0;
        const long long v = std::stoll(raw, &used);
        if (used != raw.size()) break;
        return v;
      }
      case Kind::real:
      case Kind::real_list: {
        std::size_t used = 0;
        const double v = std::stod(raw, &used);
        if (used != raw.size()) break;
        return v;
      }
      case Kind::boolean:
        if (raw == "true" || raw == "1") return true;
        if (raw == "false" || raw == "0") return false;
        break;
      default: return raw;
    }
  } catch (const std::logic_error&) {
  }
  throw UsageError("invalid value '" + raw + "' for " + flag_name(key));
}

inline bool is_list(Kind k) { return k == Kind::int_list || k == Kind::real_list || k == Kind::text_list; }

inline bool element_ok(Kind kind, const json& v) {
  switch (kind) {
    case Kind::integer:
    case Kind::int_list: return v.is_number_integer();
    case Kind::real:
    case Kind::real_list: return v.is_number();
    case Kind::boolean: return v.is_boolean();
    case Kind::text:
    case Kind::input:
    case Kind::text_list: return v.is_string();
    case Kind::object: return v.is_object();
    case Kind::object_list: return v.is_object();
  }
  return false;
}

/// Type-checks a config value against the option kind.
inline json checked(const Option& o, const json& v) {
  if (is_list(o.kind) || o.kind == Kind::object_list) {
    if (!v.is_array()) throw UsageError("config: '" + o.key + "' must be an array");
    for (const auto& e : v)
      if (!element_ok(o.kind, e)) throw UsageError("config: '" + o.key + "' holds an element of the wrong type");
    return v;
  }
  if (!element_ok(o.kind, v)) throw UsageError("config: '" + o.key + "' has the wrong type");
  return v;
}

inline json absolute_path(const json& v) {
  const auto s = v.get<std::string>();
  return s.empty() ? v : json(fs::absolute(s).lexically_normal().string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config sections

namespace detail {

inline AdmissibilityRules parse_rules(const json& j) {
  reject_unknown_keys(j, {"evi_threshold", "low_percentile", "high_percentile", "min_percentile_ratio",
                          "max_slope_percent", "ratio_floor"},
                      "rules");
  AdmissibilityRules r;
  read_opt(j, "evi_threshold", r.evi_threshold);
  read_opt(j, "low_percentile", r.low_percentile);
  read_opt(j, "high_percentile", r.high_percentile);
  read_opt(j, "min_percentile_ratio", r.min_percentile_ratio);
  read_opt(j, "max_slope_percent", r.max_slope_percent);
  read_opt(j, "ratio_floor", r.ratio_floor);
  return r;
}

inline SplitRatios parse_ratios(const json& j) {
  reject_unknown_keys(j, {"train", "val", "test"}, "ratios");
  SplitRatios r;
  read_opt(j, "train", r.train);
  read_opt(j, "val", r.val);
  read_opt(j, "test", r.test);
  return r;
}

inline TransformerConfig parse_network(const json& j) {
  reject_unknown_keys(j, {"d_model", "heads", "ff", "dense"}, "network");
  TransformerConfig c;
  read_opt(j, "d_model", c.d_model);
  read_opt(j, "heads", c.heads);
  read_opt(j, "ff", c.ff);
  read_opt(j, "dense", c.dense);
  return c;
}

inline ForestParams parse_forest(const json& j) {
  reject_unknown_keys(j, {"trees", "min_leaf", "max_features"}, "forest");
  ForestParams p;
  read_opt(j, "trees", p.trees);
  read_opt(j, "min_leaf", p.min_leaf);
  read_opt(j, "max_features", p.max_features);
  return p;
}

inline GbdtParams parse_gbdt(const json& j) {
  reject_unknown_keys(j, {"max_rounds", "depth", "learning_rate", "early_stopping_rounds", "l2", "min_child_hessian"},
                      "gbdt");
  GbdtParams p;
  read_opt(j, "max_rounds", p.max_rounds);
  read_opt(j, "depth", p.depth);
  read_opt(j, "learning_rate", p.learning_rate);
  read_opt(j, "early_stopping_rounds", p.early_stopping_rounds);
  read_opt(j, "l2", p.l2);
  read_opt(j, "min_child_hessian", p.min_child_hessian);
  return p;
}

inline WorldConfig parse_world(const json& j) {
  reject_unknown_keys(j, {"width", "height", "pixel_size_m", "years", "field_size", "field_gap", "irrigated_share",
                          "non_irrigated_share", "evergreen_share", "decline", "zones", "steep", "flat_slope_max",
                          "steep_slope", "phase_offset", "region"},
                      "world");
  WorldConfig c;
  read_opt(j, "width", c.width);
  read_opt(j, "height", c.height);
  read_opt(j, "pixel_size_m", c.pixel_size_m);
  read_opt(j, "years", c.years);
  read_opt(j, "field_size", c.field_size);
  read_opt(j, "field_gap", c.field_gap);
  read_opt(j, "irrigated_share", c.irrigated_share);
  read_opt(j, "non_irrigated_share", c.non_irrigated_share);
  read_opt(j, "evergreen_share", c.evergreen_share);
  read_opt(j, "decline", c.decline);
  read_opt(j, "zones", c.zones);
  read_opt(j, "flat_slope_max", c.flat_slope_max);
  read_opt(j, "steep_slope", c.steep_slope);
  read_opt(j, "phase_offset", c.phase_offset);
  read_opt(j, "region", c.region);
  if (j.contains("steep")) {
    const auto& s = j["steep"];
    reject_unknown_keys(s, {"row", "col", "rows", "cols"}, "world.steep");
    PixelRect r;
    read_opt(s, "row", r.row);
    read_opt(s, "col", r.col);
    read_opt(s, "rows", r.rows);
    read_opt(s, "cols", r.cols);
    c.steep = r;
  }
  return c;
}

inline SceneConfig parse_scenes(const json& j) {
  reject_unknown_keys(j, {"pad_timesteps", "scenes_per_window", "clouded_scene_share", "empty_window_share"},
                      "scenes");
  SceneConfig c;
  read_opt(j, "pad_timesteps", c.pad_timesteps);
  read_opt(j, "scenes_per_window", c.scenes_per_window);
  read_opt(j, "clouded_scene_share", c.clouded_scene_share);
  read_opt(j, "empty_window_share", c.empty_window_share);
  return c;
}

inline RegionSpec parse_region_spec(const json& j) {
  reject_unknown_keys(j, {"name", "phase_offset", "irrigated", "non_irrigated", "pixels_per_polygon", "contamination",
                          "all_bands", "mixed"},
                      "regions[]");
  RegionSpec s;
  read_opt(j, "name", s.name);
  read_opt(j, "phase_offset", s.phase_offset);
  read_opt(j, "irrigated", s.irrigated);
  read_opt(j, "non_irrigated", s.non_irrigated);
  read_opt(j, "pixels_per_polygon", s.pixels_per_polygon);
  read_opt(j, "contamination", s.contamination);
  read_opt(j, "all_bands", s.all_bands);
  read_opt(j, "mixed", s.mixed);
  return s;
}

inline const std::vector<Option>& training_options() {
  static const std::vector<Option> opts{
      {"samples", Kind::input, "", "sample table CSV"},
      {"model", Kind::text, "transformer", "reference | random_forest | gbdt | transformer"},
      {"input", Kind::text, "evi", "all-bands | evi | evi-shifted"},
      {"holdout", Kind::text_list, json::array(), "regions that never supply training rows"},
      {"batch_size", Kind::integer, 256, "rows drawn per region per step"},
      {"max_epochs", Kind::integer, 30, "epoch cap"},
      {"patience", Kind::integer, 10, "epochs without improvement before stopping"},
      {"learning_rate", Kind::real, 1e-4, "Adam learning rate"},
      {"gbdt_valid_fraction", Kind::real, 0.10, "rows held out for boosting early stopping"},
      {"network", Kind::object, json::object(), "d_model, heads, ff, dense"},
      {"forest", Kind::object, json::object(), "trees, min_leaf, max_features"},
      {"gbdt", Kind::object, json::object(), "max_rounds, depth, learning_rate, early_stopping_rounds, l2, ..."},
  };
  return opts;
}

inline TrainingConfig training_config(const Invocation& inv, std::uint64_t stream) {
  TrainingConfig c;
  c.variant = parse_model_variant(inv.get<std::string>("model"));
  c.mode = parse_input_mode(inv.get<std::string>("input"));
  c.batch_size = inv.get<int>("batch_size");
  c.max_epochs = inv.get<int>("max_epochs");
  c.patience = inv.get<int>("patience");
  c.learning_rate = inv.get<double>("learning_rate");
  c.gbdt_valid_fraction = inv.get<double>("gbdt_valid_fraction");
  c.network = parse_network(inv.config.at("network"));
  c.forest = parse_forest(inv.config.at("forest"));
  c.gbdt = parse_gbdt(inv.config.at("gbdt"));
  c.seed = derive_seed(inv.seed, stream);
  return c;
}

inline std::set<std::string> holdout_set(const Invocation& inv) {
  const auto v = inv.get<std::vector<std::string>>("holdout");
  return {v.begin(), v.end()};
}

/// Parses every config-only section so unknown keys fail before any work starts.
inline void validate_sections(const json& cfg, const std::vector<Option>& options) {
  try {
    for (const auto& o : options) {
      if (o.kind != Kind::object && o.kind != Kind::object_list) continue;
      const auto& key = o.key;
      const auto& v = cfg.at(key);
      if (key == "rules") parse_rules(v);
      else if (key == "ratios") parse_ratios(v);
      else if (key == "network") parse_network(v);
      else if (key == "forest") parse_forest(v);
      else if (key == "gbdt") parse_gbdt(v);
      else if (key == "world") parse_world(v);
      else if (key == "scenes") parse_scenes(v);
      else if (key == "regions")
        for (const auto& r : v) parse_region_spec(r);
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const FormatError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

inline std::vector<Option> with(std::vector<Option> base, const std::vector<Option>& extra) {
  base.insert(base.end(), extra.begin(), extra.end());
  return base;
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
}

inline RasterStack annual_slice(const RasterStack& stack, int year) {
  if (year < 0) throw UsageError("--year must be >= 0");
  if (stack.timesteps() == 36 && year == 0) return stack;
  const auto years = split_years(stack, 36);
  if (year >= static_cast<int>(years.size())) throw UsageError("--year exceeds the stack's annual slices");
  return years[static_cast<std::size_t>(year)];
}

/// Minimal numeric CSV: header row, then rows of numbers.
inline std::map<std::string, std::vector<double>> read_numeric_csv(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw FormatError("cannot open " + p.string());
  std::string line;
  if (!std::getline(f, line)) throw FormatError(p.string() + ": empty file");
  std::vector<std::string> names;
  for (auto s : irrig::detail::split_csv(line)) names.emplace_back(s);
  std::map<std::string, std::vector<double>> cols;
  std::size_t row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = irrig::detail::split_csv(line);
    if (cells.size() != names.size()) throw FormatError(p.string() + ": ragged row " + std::to_string(row));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::string cell(cells[i]);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      cols[names[i]].push_back(!cell.empty() && end == cell.c_str() + cell.size()
                                   ? v
                                   : std::numeric_limits<double>::quiet_NaN());
    }
  }
  return cols;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Verbs

namespace verbs {

using detail::training_options;
using detail::with;

inline void synth(const Invocation& inv) {
  WorldConfig wc = detail::parse_world(inv.config.at("world"));
  wc.seed = derive_seed(inv.seed, 1);
  const World w = generate_world(wc);
  write_stack(w.evi, inv.output("evi.stack.json"));
  write_stack(w.slope, inv.output("slope.stack.json"));
  write_stack(w.truth, inv.output("truth.stack.json"));
  write_polygons(w.polygons, inv.output("polygons.json"));
  write_zone_map(w.zones, inv.output("zones.stack.json"));
  if (inv.get<bool>("emit_scenes")) {
    SceneConfig sc = detail::parse_scenes(inv.config.at("scenes"));
    sc.seed = derive_seed(inv.seed, 2);
    const auto scenes = generate_scenes(w, sc);
    fs::create_directories(inv.output("scenes"));
    for (const auto& s : scenes) write_scene(s, inv.output("scenes") / (s.id + ".stack.json"));
    inv.say("scenes: " + std::to_string(scenes.size()));
  }
  const auto& regions = inv.config.at("regions");
  if (!regions.empty()) {
    std::vector<RegionSpec> specs;
    for (const auto& r : regions) specs.push_back(detail::parse_region_spec(r));
    const auto set = generate_regions(specs, derive_seed(inv.seed, 3), detail::parse_ratios(inv.config.at("ratios")));
    write_samples(set.table, inv.output("samples.csv"));
    inv.say("samples: " + std::to_string(set.table.size()));
  }
  inv.say("world: " + std::to_string(wc.width) + " x " + std::to_string(wc.height) + ", " +
          std::to_string(w.polygons.size()) + " polygons");
}

inline void mosaic(const Invocation& inv) {
  std::vector<SceneImage> scenes;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(inv.path("scenes"))) {
    const auto n = e.path().filename().string();
    if (e.is_regular_file() && n.ends_with(".stack.json")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) scenes.push_back(read_scene(f));
  MosaicConfig mc;
  mc.scene_cloud_threshold = inv.get<double>("scene_cloud_threshold");
  mc.timestep_days = inv.get<int>("timestep_days");
  mc.pad_timesteps = inv.get<int>("pad_timesteps");
  mc.smooth = inv.get<bool>("smooth");
  TimeGrid grid{parse_date(inv.get<std::string>("start_date")), mc.timestep_days, inv.get<int>("timesteps")};
  const auto res = build_stack(scenes, mc, grid);
  write_stack(res.stack, inv.output("bands.stack.json"));
  const auto evi = evi_from_bands(res.stack);
  write_stack(evi, inv.output("evi.stack.json"));
  const auto rep = interpolation_stats(res.observed, res.scenes_per_window, res.stack.pixels(), grid);
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  irrig::detail::write_json_file(inv.output("interpolation.json"),
                                 {{"scenes", scenes.size()},
                                  {"scenes_per_window", res.scenes_per_window},
                                  {"interpolated_cells", rep.cells},
                                  {"total_fraction", rep.total_fraction},
                                  {"dry_fraction", opt(rep.dry_fraction)},
                                  {"rainy_fraction", opt(rep.rainy_fraction)},
                                  {"from_empty_windows", rep.from_empty_windows},
                                  {"from_masking", rep.from_masking}});
  inv.say("mosaic: " + std::to_string(scenes.size()) + " scenes, " + detail::fmt(100.0 * rep.total_fraction) +
          "% interpolated");
}

inline void unmix(const Invocation& inv) {
  const auto stack = read_stack(inv.path("stack"));
  const auto cube = cube_from_stack(stack, stack.band_index(inv.get<std::string>("band")));
  const auto dims = inv.get<int>("dims");
  const Index K = std::min<Index>(std::max(inv.get<int>("components"), dims), cube.timesteps());
  const auto pc = pc_transform(cube.X, K);
  EndmemberStrategy strategy = HullExtremes{inv.get<int>("endmembers"), dims};
  const auto manual = inv.get<std::vector<Index>>("pixels");
  if (!manual.empty()) strategy = ManualSelection{manual};
  const auto em = select_endmembers(cube.X, pc.scores, strategy);
  const auto res = unmix_lsq(cube.X, em);

  StackHeader h = stack.header;
  h.bands = em.names;
  h.timesteps = 1;
  auto fractions = RasterStack::allocate(h);
  for (std::size_t p = 0; p < stack.pixels(); ++p)
    for (Index m = 0; m < em.count(); ++m)
      fractions.values[static_cast<std::size_t>(m) * stack.pixels() + p] =
          static_cast<float>(res.fractions(static_cast<Index>(p), m));
  write_stack(fractions, inv.output("fractions.stack.json"));
  auto rms = make_plane(stack.width(), stack.height(), "rms", stack.header.pixel_size_m);
  for (std::size_t p = 0; p < stack.pixels(); ++p) rms.values[p] = static_cast<float>(res.rms(static_cast<Index>(p)));
  write_stack(rms, inv.output("rms.stack.json"));

  json ems = json::array();
  for (Index m = 0; m < em.count(); ++m) {
    std::vector<double> col(em.E.col(m).data(), em.E.col(m).data() + em.E.rows());
    ems.push_back({{"name", em.names[static_cast<std::size_t>(m)]}, {"series", col}});
  }
  std::vector<double> explained(pc.basis.explained.data(), pc.basis.explained.data() + pc.basis.explained.size());
  const auto cdf = rms_cdf(res.rms, inv.get<std::vector<double>>("thresholds"));
  irrig::detail::write_json_file(inv.output("endmembers.json"),
                                 {{"endmembers", ems},
                                  {"explained_variance", explained},
                                  {"rms_at_thresholds", cdf.at_thresholds},
                                  {"rms_deciles", cdf.deciles}});
  inv.say("unmix: " + std::to_string(em.count()) + " endmembers, median rms " + detail::fmt(cdf.deciles[4].second));
}

inline void curate(const Invocation& inv) {
  const auto stack = detail::annual_slice(read_stack(inv.path("stack")), inv.get<int>("year"));
  const auto polys = read_polygons(inv.path("polygons"));
  const int band = stack.band_index(inv.get<std::string>("band"));
  const TimeGrid grid = TimeGrid::from_header(stack.header);
  CurationRules rules;
  rules.evi_threshold = inv.get<double>("evi_threshold");
  rules.min_run = inv.get<int>("min_run");
  rules.noise_std = inv.get<double>("noise_std");
  rules.gmm_components = inv.get<int>("gmm_components");
  rules.max_clean_iterations = inv.get<int>("max_clean_iterations");

  SampleTable table;
  table.layer_names = {"EVI"};
  table.timesteps = stack.timesteps();
  json polygon_log = json::array();
  for (const auto& poly : polys) {
    const auto members = rasterize_polygon(poly, stack.height(), stack.width());
    json entry{{"id", poly.id}, {"region", poly.region}, {"class", class_name(poly.cls)}, {"pixels", members.size()}};
    if (members.empty()) {
      entry["confirmed"] = false;
      entry["reason"] = "covers no pixels";
      polygon_log.push_back(entry);
      continue;
    }
    const auto series = polygon_median_series(stack, band, members);
    const auto verdict = confirm_polygon(series, poly.cls, grid, rules);
    entry["confirmed"] = verdict.confirmed;
    if (!verdict.confirmed) entry["reason"] = verdict.reason;
    polygon_log.push_back(entry);
    if (!verdict.confirmed) continue;
    for (const auto& px : members) {
      PixelSample s;
      s.region = poly.region;
      s.polygon_id = poly.id;
      s.cls = poly.cls;
      std::vector<float> v(static_cast<std::size_t>(stack.timesteps()));
      bool ok = true;
      for (int t = 0; t < stack.timesteps() && ok; ++t) {
        ok = stack.is_valid(t, band, px.row, px.col);
        v[static_cast<std::size_t>(t)] = stack.at(t, band, px.row, px.col);
      }
      if (!ok) continue;
      s.layers.push_back(std::move(v));
      table.rows.push_back(std::move(s));
    }
  }

  json cleaning = json::array();
  if (inv.get<bool>("clean")) {
    std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < table.rows.size(); ++i)
      groups[{table.rows[i].region, static_cast<int>(table.rows[i].cls)}].push_back(i);
    std::vector<std::uint8_t> keep(table.rows.size(), 1);
    std::uint64_t g = 0;
    for (const auto& [key, idx] : groups) {
      const auto cls = static_cast<LandClass>(key.second);
      json entry{{"region", key.first}, {"class", class_name(cls)}, {"samples", idx.size()}};
      if (idx.size() < static_cast<std::size_t>(rules.gmm_components)) {
        log::warn("curate: region '" + key.first + "' class " + std::string(class_name(cls)) +
                  " has too few samples for cluster cleaning; kept as is");
        entry["skipped"] = true;
        cleaning.push_back(entry);
        ++g;
        continue;
      }
      std::vector<std::vector<double>> X;
      for (auto i : idx) X.emplace_back(table.rows[i].layers[0].begin(), table.rows[i].layers[0].end());
      const auto res = clean_labels(X, cls, grid, derive_seed(inv.seed, 0xC1EA + g++), rules);
      std::vector<std::uint8_t> retained(idx.size(), 0);
      for (auto r : res.retained) retained[r] = 1;
      for (std::size_t k = 0; k < idx.size(); ++k) keep[idx[k]] = retained[k];
      json iters = json::array();
      for (const auto& it : res.log)
        iters.push_back({{"samples", it.samples},
                         {"cluster_members", it.cluster_members},
                         {"discarded", it.discarded},
                         {"removed", it.removed}});
      entry["retained"] = res.retained.size();
      entry["converged"] = res.converged;
      entry["iterations"] = iters;
      cleaning.push_back(entry);
    }
    std::vector<PixelSample> rows;
    for (std::size_t i = 0; i < table.rows.size(); ++i)
      if (keep[i]) rows.push_back(std::move(table.rows[i]));
    table.rows = std::move(rows);
  }
  if (table.rows.empty()) throw NumericError("curate: no samples survived curation");
  apply_split(table, split_polygons(table_polygons(table), detail::parse_ratios(inv.config.at("ratios")),
                                    derive_seed(inv.seed, 0x5B17)));
  write_samples(table, inv.output("samples.csv"));
  irrig::detail::write_json_file(inv.output("curation.json"), {{"polygons", polygon_log}, {"cleaning", cleaning}});
  inv.say("curate: " + std::to_string(table.size()) + " samples");
}

inline void filter(const Invocation& inv) {
  const auto evi = detail::annual_slice(read_stack(inv.path("evi")), inv.get<int>("year"));
  const auto slope = read_stack(inv.path("slope"));
  const auto mask = admissibility_mask(evi, slope, detail::parse_rules(inv.config.at("rules")));
  write_stack(class_plane(mask, evi.width(), evi.height(), evi.header.pixel_size_m, "admissible"),
              inv.output("admissible.stack.json"));
  const auto n = std::count(mask.begin(), mask.end(), 1);
  irrig::detail::write_json_file(inv.output("filter.json"), {{"pixels", mask.size()}, {"admissible", n}});
  inv.say("filter: " + std::to_string(n) + " of " + std::to_string(mask.size()) + " pixels admissible");
}

inline void train(const Invocation& inv) {
  const auto table = read_samples(inv.path("samples"));
  const auto cfg = detail::training_config(inv, 0x7A1);
  const auto regions = make_region_datasets(table, cfg.mode, detail::holdout_set(inv));
  std::vector<const RegionDataset*> included;
  for (const auto& r : regions)
    if (r.role == RegionRole::trainable) included.push_back(&r);
  if (included.empty()) throw NumericError("train: no trainable regions");
  TrainedModel model;
  if (cfg.variant == ModelVariant::transformer) {
    auto run = train_network_loop(included, cfg);
    json hist = json::array();
    for (const auto& e : run.history) hist.push_back(to_json(e));
    irrig::detail::write_json_file(inv.output("history.json"),
                                   {{"epochs", hist}, {"best_epoch", run.best_epoch}, {"never_improved", run.never_improved}});
    model = std::move(run.model);
  } else {
    model = train_model(included, cfg);
  }
  save_model(model, inv.output("model.model.json"));
  json metrics = json::array();
  for (const auto& r : regions) {
    if (r.test.size() == 0) continue;
    auto m = to_json(metrics_from(r.name, predict_class(model, r.test), r.test.labels));
    m["role"] = r.role == RegionRole::trainable ? "trainable" : "holdout_only";
    metrics.push_back(m);
  }
  irrig::detail::write_json_file(inv.output("metrics.json"), {{"split", "test"}, {"regions", metrics}});
  inv.say("train: " + std::string(to_string(cfg.variant)) + " on " + std::to_string(included.size()) + " regions");
}

inline void predict(const Invocation& inv) {
  const auto model = load_model(inv.path("model"));
  const auto table = read_samples(inv.path("samples"));
  const auto split = inv.get<std::string>("split");
  const bool all = split == "all";
  const Split s = all ? Split::train : parse_split(split);
  const auto data = make_dataset(table, model.input_mode, [&](const PixelSample& p) { return all || p.split == s; });
  const auto prob = predict_proba(model, data);
  std::string csv = "row,region,polygon_id,truth,probability,predicted\n";
  std::vector<int> pred(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) {
    pred[i] = prob[i] >= 0.5 ? 1 : 0;
    csv += std::to_string(i) + "," + data.regions[i] + "," + std::to_string(data.polygons[i]) + "," +
           std::to_string(data.labels[i]) + "," + detail::fmt(prob[i]) + "," + std::to_string(pred[i]) + "\n";
  }
  detail::write_text(inv.output("predictions.csv"), csv);
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> by_region;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    by_region[data.regions[i]].first.push_back(pred[i]);
    by_region[data.regions[i]].second.push_back(data.labels[i]);
  }
  json metrics = json::array();
  for (const auto& [name, pt] : by_region) metrics.push_back(to_json(metrics_from(name, pt.first, pt.second)));
  metrics.push_back(to_json(metrics_from("all", pred, data.labels)));
  irrig::detail::write_json_file(inv.output("metrics.json"), {{"split", split}, {"regions", metrics}});
  inv.say("predict: " + std::to_string(pred.size()) + " samples");
}

inline void sweep(const Invocation& inv) {
  const auto table = read_samples(inv.path("samples"));
  const auto cfg = detail::training_config(inv, 0x5E3);
  const auto regions = make_region_datasets(table, cfg.mode, detail::holdout_set(inv));
  std::size_t R = 0;
  for (const auto& r : regions) R += r.role == RegionRole::trainable;
  auto sizes = inv.get<std::vector<int>>("sizes");
  if (sizes.empty())
    for (int x = 1; x < static_cast<int>(R); ++x) sizes.push_back(x);
  const auto res = region_sweep(regions, sizes, cfg);
  detail::write_text(inv.output("sweep.csv"), sweep_csv(res));
  json aggs = json::array(), rows = json::array();
  for (const auto& a : res.aggregates) aggs.push_back(to_json(a));
  for (const auto& r : res.rows) {
    auto m = to_json(r.metrics);
    m["size"] = r.size;
    m["subset"] = r.subset;
    m["trained"] = r.trained;
    rows.push_back(m);
  }
  irrig::detail::write_json_file(inv.output("sweep.json"),
                                 {{"model", to_string(cfg.variant)}, {"input", to_string(cfg.mode)},
                                  {"aggregates", aggs}, {"rows", rows}});
  inv.say("sweep: " + std::to_string(res.rows.size()) + " withheld evaluations");
}

inline void diagnose_ks(const Invocation& inv) {
  const auto table = read_samples(inv.path("samples"));
  const int layer = table.layer_index(inv.get<std::string>("layer"));
  const auto K = static_cast<Index>(inv.get<int>("dims"));
  const auto classes = inv.get<std::string>("class");
  std::vector<LandClass> targets;
  if (classes == "irrigated" || classes == "both") targets.push_back(LandClass::irrigated);
  if (classes == "non_irrigated" || classes == "both") targets.push_back(LandClass::non_irrigated);
  if (targets.empty()) throw UsageError("diagnose ks: --class must be irrigated, non_irrigated or both");
  json report = json::object();
  std::string csv = "class,region_a,region_b,ks\n";
  for (LandClass cls : targets) {
    std::map<std::string, std::vector<const PixelSample*>> rows;
    std::vector<const PixelSample*> pool;
    for (const auto& r : table.rows)
      if (r.cls == cls) {
        rows[r.region].push_back(&r);
        pool.push_back(&r);
      }
    if (pool.empty()) continue;
    const Index T = table.timesteps;
    auto to_matrix = [&](const std::vector<const PixelSample*>& v) {
      MatrixXd X(static_cast<Index>(v.size()), T);
      for (std::size_t i = 0; i < v.size(); ++i)
        for (Index t = 0; t < T; ++t) X(static_cast<Index>(i), t) = v[i]->layers[static_cast<std::size_t>(layer)][static_cast<std::size_t>(t)];
      return X;
    };
    const auto pc = pc_transform(to_matrix(pool), std::min<Index>(K, T));
    std::map<std::string, MatrixXd> samples;
    for (const auto& [name, v] : rows) samples[name] = to_matrix(v);
    const auto rep = region_similarity_matrix(samples, pc.basis, std::min<Index>(K, T));
    json matrix = json::array();
    for (Index i = 0; i < rep.matrix.rows(); ++i) {
      json jr = json::array();
      for (Index j = 0; j < rep.matrix.cols(); ++j) {
        jr.push_back(rep.matrix(i, j));
        csv += std::string(class_name(cls)) + "," + rep.regions[static_cast<std::size_t>(i)] + "," +
               rep.regions[static_cast<std::size_t>(j)] + "," + detail::fmt(rep.matrix(i, j)) + "\n";
      }
      matrix.push_back(jr);
    }
    std::vector<double> means(rep.row_means.data(), rep.row_means.data() + rep.row_means.size());
    report[std::string(class_name(cls))] = {{"regions", rep.regions}, {"matrix", matrix}, {"row_means", means}};
  }
  detail::write_text(inv.output("ks.csv"), csv);
  irrig::detail::write_json_file(inv.output("ks.json"), report);
  inv.say("diagnose ks: " + std::to_string(table.regions().size()) + " regions");
}

inline void diagnose_ols(const Invocation& inv) {
  const auto cols = detail::read_numeric_csv(inv.path("table"));
  const auto response = inv.get<std::string>("response");
  const auto predictors = inv.get<std::vector<std::string>>("predictors");
  if (predictors.empty()) throw UsageError("diagnose ols: --predictors is required");
  auto column = [&](const std::string& name) -> const std::vector<double>& {
    const auto it = cols.find(name);
    if (it == cols.end()) throw FormatError("diagnose ols: table has no column '" + name + "'");
    return it->second;
  };
  const auto& y = column(response);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < y.size(); ++i) {
    bool ok = std::isfinite(y[i]);
    for (const auto& p : predictors) ok = ok && std::isfinite(column(p)[i]);
    if (ok) keep.push_back(i);
  }
  if (keep.size() < y.size()) log::warn("diagnose ols: dropped " + std::to_string(y.size() - keep.size()) + " rows with missing values");
  MatrixXd X(static_cast<Index>(keep.size()), static_cast<Index>(predictors.size()));
  VectorXd Y(static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    Y(static_cast<Index>(k)) = y[keep[k]];
    for (std::size_t j = 0; j < predictors.size(); ++j)
      X(static_cast<Index>(k), static_cast<Index>(j)) = column(predictors[j])[keep[k]];
  }
  const auto rep = ols_fit(X, Y, predictors, inv.get<bool>("intercept"));
  std::string csv = "term,coefficient,std_error,t,p_value\n";
  json terms = json::array();
  for (std::size_t j = 0; j < rep.names.size(); ++j) {
    const auto J = static_cast<Index>(j);
    csv += rep.names[j] + "," + detail::fmt(rep.coefficients(J)) + "," + detail::fmt(rep.std_errors(J)) + "," +
           detail::fmt(rep.t_stats(J)) + "," + detail::fmt(rep.p_values(J)) + "\n";
    terms.push_back({{"term", rep.names[j]},
                     {"coefficient", rep.coefficients(J)},
                     {"std_error", rep.std_errors(J)},
                     {"t", rep.t_stats(J)},
                     {"p_value", rep.p_values(J)}});
  }
  detail::write_text(inv.output("ols.csv"), csv);
  irrig::detail::write_json_file(inv.output("ols.json"),
                                 {{"response", response}, {"n", rep.n}, {"dof", rep.dof}, {"r_squared", rep.r_squared}, {"terms", terms}});
  inv.say("diagnose ols: R^2 = " + detail::fmt(rep.r_squared));
}

inline void diagnose_saliency(const Invocation& inv) {
  const auto model = load_model(inv.path("model"));
  if (model.variant != ModelVariant::transformer) throw NumericError("diagnose saliency: needs a transformer model");
  const auto& net = std::get<TransformerNet>(model.params);
  const auto table = read_samples(inv.path("samples"));
  const Split s = parse_split(inv.get<std::string>("split"));
  const auto data = make_dataset(table, model.input_mode, [&](const PixelSample& p) { return p.split == s; });
  const auto x = standardized_features(data, model.standardizer);
  const std::size_t T = static_cast<std::size_t>(model.timesteps), w = data.width();
  std::vector<SaliencyMap> maps(data.size());
  parallel_for(data.size(), [&](std::size_t i) { maps[i] = grad_cam(net, {x.data() + i * w, w}); });
  std::array<std::vector<double>, 2> mean{std::vector<double>(T, 0.0), std::vector<double>(T, 0.0)};
  std::array<std::size_t, 2> n{0, 0}, zero{0, 0};
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const int c = data.labels[i];
    if (maps[i].all_zero) ++zero[c];
    ++n[c];
    for (std::size_t t = 0; t < T; ++t) mean[c][t] += maps[i].importance[t];
  }
  std::string csv = "timestep,non_irrigated,irrigated\n";
  for (int c = 0; c < 2; ++c)
    for (auto& v : mean[c]) v = n[c] ? v / static_cast<double>(n[c]) : 0.0;
  for (std::size_t t = 0; t < T; ++t) csv += std::to_string(t) + "," + detail::fmt(mean[0][t]) + "," + detail::fmt(mean[1][t]) + "\n";
  detail::write_text(inv.output("saliency.csv"), csv);
  irrig::detail::write_json_file(inv.output("saliency.json"),
                                 {{"samples", {n[0], n[1]}}, {"all_zero", {zero[0], zero[1]}},
                                  {"mean_non_irrigated", mean[0]}, {"mean_irrigated", mean[1]}});
  inv.say("diagnose saliency: " + std::to_string(data.size()) + " samples");
}

inline void infer(const Invocation& inv) {
  const auto model = load_model(inv.path("model"));
  const auto evi = read_stack(inv.path("evi"));
  const auto slope = read_stack(inv.path("slope"));
  const auto pred = predict_raster(model, evi, slope, inv.get<int>("tile_size"), inv.get<int>("year"),
                                   detail::parse_rules(inv.config.at("rules")));
  write_stack(class_plane(pred.cls, pred.width, pred.height, pred.pixel_size_m), inv.output("prediction.stack.json"));
  auto prob = make_plane(pred.width, pred.height, "probability", pred.pixel_size_m);
  prob.values.assign(pred.probability.begin(), pred.probability.end());
  write_stack(prob, inv.output("probability.stack.json"));
  const auto irrigated = std::count(pred.cls.begin(), pred.cls.end(), 1);
  irrig::detail::write_json_file(inv.output("infer.json"),
                                 {{"pixels", pred.pixels()},
                                  {"admissible", std::count(pred.admissible.begin(), pred.admissible.end(), 1)},
                                  {"model_calls", pred.model_calls},
                                  {"irrigated", irrigated},
                                  {"year", pred.year}});
  inv.say("infer: " + std::to_string(irrigated) + " irrigated pixels");
}

inline void sieve(const Invocation& inv) {
  const auto s = read_stack(inv.path("prediction"));
  const auto cls = plane_classes(s);
  const auto out = sieve_small_components(cls, s.width(), s.height(), s.header.pixel_size_m,
                                          inv.get<double>("min_area_ha"), inv.get<int>("connectivity"));
  write_stack(class_plane(out, s.width(), s.height(), s.header.pixel_size_m), inv.output("sieved.stack.json"));
  std::size_t removed = 0;
  for (std::size_t p = 0; p < out.size(); ++p) removed += cls[p] != out[p];
  irrig::detail::write_json_file(inv.output("sieve.json"),
                                 {{"removed_pixels", removed},
                                  {"threshold_pixels", sieve_threshold_pixels(inv.get<double>("min_area_ha"), s.header.pixel_size_m)}});
  inv.say("sieve: removed " + std::to_string(removed) + " pixels");
}

inline void zonestats(const Invocation& inv) {
  const auto a = plane_classes(read_stack(inv.path("a")));
  const auto b = plane_classes(read_stack(inv.path("b")));
  const auto zones = read_zone_map(inv.path("zones"));
  const auto rep = zone_statistics(a, b, zones);
  detail::write_text(inv.output("zonestats.csv"), change_report_csv(rep));
  auto row = [](const ZoneChange& z) {
    return json{{"zone", z.zone},
                {"name", z.name},
                {"irrigated_ha_a", z.hectares_a},
                {"irrigated_ha_b", z.hectares_b},
                {"total_ha", z.total_hectares},
                {"percent_change", z.percent_change ? json(*z.percent_change) : json(nullptr)},
                {"change_fraction_of_area", z.change_fraction_of_area}};
  };
  json zs = json::array();
  for (const auto& z : rep.zones) zs.push_back(row(z));
  irrig::detail::write_json_file(inv.output("zonestats.json"), {{"zones", zs}, {"total", row(rep.total)}});
  inv.say("zonestats: " + std::to_string(rep.zones.size()) + " zones");
}

inline void composite(const Invocation& inv) {
  const auto sa = read_stack(inv.path("a"));
  const auto sb = read_stack(inv.path("b"));
  if (sa.width() != sb.width() || sa.height() != sb.height()) throw ShapeError("composite: rasters differ in shape");
  const auto out = bitemporal_composite(plane_classes(sa), plane_classes(sb));
  write_stack(class_plane(out, sa.width(), sa.height(), sa.header.pixel_size_m, "change"),
              inv.output("composite.stack.json"));
  std::array<std::size_t, 4> counts{};
  for (auto v : out) ++counts[v];
  irrig::detail::write_json_file(inv.output("composite.json"),
                                 {{"neither", counts[0]}, {"a_only", counts[1]}, {"b_only", counts[2]}, {"both", counts[3]}});
  inv.say("composite: " + std::to_string(counts[1]) + " lost, " + std::to_string(counts[2]) + " gained");
}

}  // namespace verbs

inline const std::vector<Verb>& verb_table() {
  using verbs::training_options;
  using verbs::with;
  static const std::vector<Verb> table{
      {"synth",
       "generate a synthetic world, its scenes and optional labeled regions",
       {{"world", Kind::object, json::object(), "world geometry and land-cover shares"},
        {"scenes", Kind::object, json::object(), "scene acquisition settings"},
        {"emit_scenes", Kind::boolean, true, "write per-acquisition scenes"},
        {"regions", Kind::object_list, json::array(), "labeled sample regions to generate"},
        {"ratios", Kind::object, json::object(), "train/val/test polygon shares"}},
       verbs::synth},
      {"mosaic",
       "composite scenes into a gap-filled, smoothed stack and derive EVI",
       {{"scenes", Kind::input, "", "directory of scene stacks"},
        {"start_date", Kind::text, "2020-06-01", "first core timestep"},
        {"timesteps", Kind::integer, 36, "core timesteps"},
        {"timestep_days", Kind::integer, 10, "days per timestep"},
        {"pad_timesteps", Kind::integer, 5, "padding on both ends"},
        {"scene_cloud_threshold", Kind::real, 0.10, "scenes at or above this cloud share are dropped"},
        {"smooth", Kind::boolean, true, "apply Savitzky-Golay smoothing"}},
       verbs::mosaic},
      {"unmix",
       "temporal endmember unmixing of a one-band stack",
       {{"stack", Kind::input, "", "EVI stack"},
        {"band", Kind::text, "EVI", "band to unmix"},
        {"components", Kind::integer, 10, "principal components computed"},
        {"dims", Kind::integer, 3, "components searched for hull extremes"},
        {"endmembers", Kind::integer, 4, "endmembers picked from the hull"},
        {"pixels", Kind::int_list, json::array(), "manual endmember pixel indices"},
        {"thresholds", Kind::real_list, json::array({0.01, 0.02, 0.05}), "rms CDF thresholds"}},
       verbs::unmix},
      {"curate",
       "confirm polygons, extract samples, clean clusters and split polygons",
       {{"stack", Kind::input, "", "EVI stack"},
        {"polygons", Kind::input, "", "labeled polygons JSON"},
        {"band", Kind::text, "EVI", "band holding EVI"},
        {"year", Kind::integer, 0, "annual slice"},
        {"evi_threshold", Kind::real, 0.2, "vegetated threshold"},
        {"min_run", Kind::integer, 2, "successive timesteps for a run"},
        {"noise_std", Kind::real, 0.15, "polygon noise ceiling"},
        {"gmm_components", Kind::integer, 15, "mixture components"},
        {"max_clean_iterations", Kind::integer, 10, "cleaning iteration cap"},
        {"clean", Kind::boolean, true, "run cluster cleaning"},
        {"ratios", Kind::object, json::object(), "train/val/test polygon shares"}},
       verbs::curate},
      {"filter",
       "admissibility mask of an EVI stack",
       {{"evi", Kind::input, "", "EVI stack"},
        {"slope", Kind::input, "", "slope plane (percent)"},
        {"year", Kind::integer, 0, "annual slice"},
        {"rules", Kind::object, json::object(), "admissibility thresholds"}},
       verbs::filter},
      {"train", "train one classifier on every trainable region", training_options(), verbs::train},
      {"predict",
       "classify the rows of a sample table",
       {{"model", Kind::input, "", "model JSON"},
        {"samples", Kind::input, "", "sample table CSV"},
        {"split", Kind::text, "test", "train | val | test | all"}},
       verbs::predict},
      {"sweep",
       "withheld-region sweep over subset sizes",
       with(training_options(), {{"sizes", Kind::int_list, json::array(), "subset sizes (default 1..R-1)"}}),
       verbs::sweep},
      {"diagnose ks",
       "pseudo-1D KS distances between regions",
       {{"samples", Kind::input, "", "sample table CSV"},
        {"layer", Kind::text, "EVI", "layer compared"},
        {"class", Kind::text, "both", "irrigated | non_irrigated | both"},
        {"dims", Kind::integer, 10, "principal components"}},
       verbs::diagnose_ks},
      {"diagnose ols",
       "ordinary least squares over columns of a CSV",
       {{"table", Kind::input, "", "numeric CSV"},
        {"response", Kind::text, "f1", "response column"},
        {"predictors", Kind::text_list, json::array(), "predictor columns"},
        {"intercept", Kind::boolean, true, "fit an intercept"}},
       verbs::diagnose_ols},
      {"diagnose saliency",
       "timestep Grad-CAM of a transformer model",
       {{"model", Kind::input, "", "transformer model JSON"},
        {"samples", Kind::input, "", "sample table CSV"},
        {"split", Kind::text, "test", "split explained"}},
       verbs::diagnose_saliency},
      {"infer",
       "classify every pixel of an EVI stack",
       {{"model", Kind::input, "", "model JSON"},
        {"evi", Kind::input, "", "EVI stack"},
        {"slope", Kind::input, "", "slope plane (percent)"},
        {"year", Kind::integer, 0, "annual slice"},
        {"tile_size", Kind::integer, 256, "tile edge in pixels"},
        {"rules", Kind::object, json::object(), "admissibility thresholds"}},
       verbs::infer},
      {"sieve",
       "remove small irrigated components",
       {{"prediction", Kind::input, "", "class plane"},
        {"min_area_ha", Kind::real, 0.1, "smallest kept area"},
        {"connectivity", Kind::integer, 4, "4 or 8"}},
       verbs::sieve},
      {"zonestats",
       "per-zone irrigated area and change between two predictions",
       {{"a", Kind::input, "", "first-year class plane"},
        {"b", Kind::input, "", "second-year class plane"},
        {"zones", Kind::input, "", "zone map"}},
       verbs::zonestats},
      {"composite",
       "bitemporal change categories",
       {{"a", Kind::input, "", "first-year class plane"}, {"b", Kind::input, "", "second-year class plane"}},
       verbs::composite},
  };
  return table;
}

inline const Verb& find_verb(const std::string& name) {
  for (const auto& v : verb_table())
    if (v.name == name) return v;
  throw UsageError("unknown verb '" + name + "'");
}

// ---------------------------------------------------------------------------
// Execution

struct Request {
  std::string verb;
  json flags = json::object();  // options given on the command line, already typed
  std::optional<fs::path> config_file;
  std::optional<json> config_override;  // used by replay instead of a file
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  fs::path out;
  std::vector<std::string> argv;
};

/// Defaults, then flags, then config-file values.
inline Invocation resolve(const Request& req, std::ostream& messages) {
  const Verb& verb = find_verb(req.verb);
  Invocation inv;
  inv.verb = verb.name;
  inv.messages = &messages;
  inv.config = json::object();
  for (const auto& o : verb.options) inv.config[o.key] = o.fallback;
  for (const auto& [k, v] : req.flags.items()) inv.config[k] = v;
  inv.seed = req.seed.value_or(0);
  inv.threads = req.threads.value_or(1);
  json file;
  if (req.config_override) file = *req.config_override;
  else if (req.config_file) file = irrig::detail::read_json_file(*req.config_file);
  if (!file.is_null()) {
    if (!file.is_object()) throw UsageError("config: expected a JSON object");
    for (const auto& [k, v] : file.items()) {
      if (k == "seed") {
        if (!v.is_number_unsigned() && !v.is_number_integer()) throw UsageError("config: 'seed' must be an integer");
        inv.seed = v.get<std::uint64_t>();
        continue;
      }
      if (k == "threads") {
        if (!v.is_number_integer() || v.get<long long>() < 1) throw UsageError("config: 'threads' must be >= 1");
        if (!req.config_override) inv.threads = v.get<std::size_t>();
        continue;
      }
      const auto it = std::find_if(verb.options.begin(), verb.options.end(), [&](const Option& o) { return o.key == k; });
      if (it == verb.options.end()) throw UsageError("config: unknown key '" + k + "' for " + verb.name);
      inv.config[k] = detail::checked(*it, v);
    }
  }
  for (const auto& o : verb.options)
    if (o.kind == Kind::input) inv.config[o.key] = detail::absolute_path(inv.config[o.key]);
  detail::validate_sections(inv.config, verb.options);
  if (req.out.empty()) throw UsageError(verb.name + ": --out is required");
  inv.out = fs::absolute(req.out).lexically_normal();
  return inv;
}

inline json make_manifest(const Invocation& inv, const std::vector<std::string>& argv) {
  const auto& verb = find_verb(inv.verb);
  json inputs = json::object();
  for (const auto& o : verb.options) {
    if (o.kind != Kind::input) continue;
    const auto p = inv.config.at(o.key).get<std::string>();
    if (!p.empty()) inputs[o.key] = {{"path", p}, {"files", input_hashes(p)}};
  }
  return {{"format", "irrig-run"},
          {"version", kVersion},
          {"verb", inv.verb},
          {"argv", argv},
          {"config", inv.config},
          {"config_hash", hex64(fnv1a(inv.config.dump()))},
          {"seed", inv.seed},
          {"threads", inv.threads},
          {"inputs", inputs},
          {"outputs", json::object()}};
}

/// Runs a resolved verb and writes its manifest.
inline json execute(const Invocation& inv, const std::vector<std::string>& argv) {
  const auto& verb = find_verb(inv.verb);
  fs::create_directories(inv.out);
  json manifest = make_manifest(inv, argv);
  const std::size_t saved = default_threads();
  set_default_threads(inv.threads);
  try {
    verb.handler(inv);
  } catch (...) {
    set_default_threads(saved);
    throw;
  }
  set_default_threads(saved);
  manifest["outputs"] = directory_hashes(inv.out, {std::string(kManifestName)});
  irrig::detail::write_json_file(inv.out / kManifestName, manifest);
  return manifest;
}

// ---------------------------------------------------------------------------
// Replay

struct ReplayReport {
  std::vector<std::string> identical;
  std::vector<std::string> within_tolerance;  // network blobs differing by at most 1e-6
  std::vector<std::string> differing;
  std::vector<std::string> missing;

  bool ok() const { return differing.empty() && missing.empty(); }
};

/// Largest absolute difference between two little-endian f64 blobs, or +inf on a size mismatch.
inline double blob_divergence(const fs::path& a, const fs::path& b) {
  const auto x = irrig::detail::read_bytes(a), y = irrig::detail::read_bytes(b);
  if (x.size() != y.size() || x.size() % 8 != 0) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); i += 8) {
    double u, v;
    std::memcpy(&u, x.data() + i, 8);
    std::memcpy(&v, y.data() + i, 8);
    worst = std::max(worst, std::abs(u - v));
  }
  return worst;
}

inline ReplayReport compare_outputs(const json& expected, const json& actual, const fs::path& original_dir,
                                    const fs::path& replay_dir) {
  ReplayReport rep;
  for (const auto& [name, hash] : expected.items()) {
    if (!actual.contains(name)) {
      rep.missing.push_back(name);
      continue;
    }
    if (actual[name] == hash) {
      rep.identical.push_back(name);
      continue;
    }
    const bool network_blob = name.ends_with(".model.bin") && fs::exists(original_dir / name);
    if (network_blob && blob_divergence(original_dir / name, replay_dir / name) <= 1e-6)
      rep.within_tolerance.push_back(name);
    else
      rep.differing.push_back(name);
  }
  for (const auto& [name, _] : actual.items())
    if (!expected.contains(name)) rep.differing.push_back(name);
  return rep;
}

inline ReplayReport replay(const fs::path& manifest_path, const fs::path& out, std::optional<std::size_t> threads,
                           std::ostream& messages) {
  const json m = irrig::detail::read_json_file(manifest_path);
  if (m.value("format", "") != "irrig-run") throw FormatError("replay: not a run manifest");
  Request req;
  req.verb = m.at("verb").get<std::string>();
  json cfg = m.at("config");
  cfg["seed"] = m.at("seed");
  req.config_override = cfg;
  req.threads = threads.value_or(m.at("threads").get<std::size_t>());
  if (fs::exists(out) && !fs::is_empty(out)) throw UsageError("replay: output directory is not empty");
  req.out = out;
  const auto inv = resolve(req, messages);
  for (const auto& [key, input] : m.at("inputs").items()) {
    const auto now = input_hashes(input.at("path").get<std::string>());
    if (json(now) != input.at("files")) throw Error("replay: input '" + key + "' changed since the recorded run");
  }
  auto argv = m.at("argv").get<std::vector<std::string>>();
  const json fresh = execute(inv, argv);
  const auto rep = compare_outputs(m.at("outputs"), fresh.at("outputs"), manifest_path.parent_path(), inv.out);
  irrig::detail::write_json_file(inv.out / "replay.json",
                                 {{"manifest", fs::absolute(manifest_path).string()},
                                  {"threads", inv.threads},
                                  {"identical", rep.identical},
                                  {"within_tolerance", rep.within_tolerance},
                                  {"differing", rep.differing},
                                  {"missing", rep.missing},
                                  {"ok", rep.ok()}});
  return rep;
}

// ---------------------------------------------------------------------------
// Entry point

/// Runs one command line (without the program name). Returns 0 on success, 1 on a
/// failed run or replay mismatch and 2 on bad usage.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"irrig: irrigation detection from vegetation-index timeseries", "irrig"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  struct Bound {
    const Verb* verb;
    CLI::App* sub;
    std::deque<std::string> scalars;
    std::deque<std::vector<std::string>> lists;
    std::vector<std::pair<const Option*, CLI::Option*>> opts;
    std::string config, out;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    CLI::Option *seed_opt = nullptr, *threads_opt = nullptr, *config_opt = nullptr;
  };
  std::deque<Bound> bound;
  std::map<std::string, CLI::App*> parents;
  for (const auto& v : verb_table()) {
    CLI::App* parent = &app;
    std::string leaf = v.name;
    if (const auto sp = v.name.find(' '); sp != std::string::npos) {
      const auto head = v.name.substr(0, sp);
      leaf = v.name.substr(sp + 1);
      if (!parents.count(head)) {
        parents[head] = app.add_subcommand(head, head + " reports");
        parents[head]->require_subcommand(1);
      }
      parent = parents[head];
    }
    Bound& b = bound.emplace_back();
    b.verb = &v;
    b.sub = parent->add_subcommand(leaf, v.help);
    b.config_opt = b.sub->add_option("--config", b.config, "JSON config; its values override flags");
    b.seed_opt = b.sub->add_option("--seed", b.seed, "master seed");
    b.threads_opt = b.sub->add_option("--threads", b.threads, "worker threads")->check(CLI::PositiveNumber);
    b.sub->add_option("--out", b.out, "output directory")->required();
    for (const auto& o : v.options) {
      if (o.kind == Kind::object || o.kind == Kind::object_list) continue;
      CLI::Option* opt = nullptr;
      if (detail::is_list(o.kind)) {
        opt = b.sub->add_option(detail::flag_name(o.key), b.lists.emplace_back(), o.help)->delimiter(',');
      } else {
        opt = b.sub->add_option(detail::flag_name(o.key), b.scalars.emplace_back(), o.help);
      }
      b.opts.emplace_back(&o, opt);
    }
  }
  std::string manifest, replay_out;
  std::size_t replay_threads = 0;
  auto* replay_cmd = app.add_subcommand("replay", "re-run a manifest and verify its outputs");
  replay_cmd->add_option("--manifest", manifest, "run.json of the recorded run")->required();
  replay_cmd->add_option("--out", replay_out, "output directory (default: <run>/replay)");
  auto* replay_threads_opt = replay_cmd->add_option("--threads", replay_threads, "worker threads")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (replay_cmd->parsed()) {
      const fs::path mp = manifest;
      const fs::path dir = replay_out.empty() ? mp.parent_path() / "replay" : fs::path(replay_out);
      std::optional<std::size_t> th;
      if (replay_threads_opt->count()) th = replay_threads;
      const auto rep = replay(mp, dir, th, out);
      out << "replay: " << rep.identical.size() << " identical, " << rep.within_tolerance.size()
          << " within tolerance, " << rep.differing.size() << " differing, " << rep.missing.size() << " missing\n";
      for (const auto& n : rep.differing) err << "differs: " << n << "\n";
      for (const auto& n : rep.missing) err << "missing: " << n << "\n";
      return rep.ok() ? 0 : 1;
    }
    for (auto& b : bound) {
      if (!b.sub->parsed()) continue;
      Request req;
      req.verb = b.verb->name;
      req.argv = args;
      for (const auto& [o, opt] : b.opts) {
        if (!opt->count()) continue;
        if (detail::is_list(o->kind)) {
          json arr = json::array();
          for (const auto& s : opt->as<std::vector<std::string>>()) arr.push_back(detail::parse_scalar(o->kind, s, o->key));
          req.flags[o->key] = arr;
        } else {
          req.flags[o->key] = detail::parse_scalar(o->kind, opt->as<std::string>(), o->key);
        }
      }
      if (b.config_opt->count()) req.config_file = b.config;
      if (b.seed_opt->count()) req.seed = b.seed;
      if (b.threads_opt->count()) req.threads = b.threads;
      req.out = b.out;
      const auto inv = resolve(req, out);
      execute(inv, args);
      return 0;
    }
    err << app.help();
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int run(int argc, const char* const* argv) {
  return run(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace irrig::cli
