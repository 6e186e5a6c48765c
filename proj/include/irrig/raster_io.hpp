#pragma once

// On-disk artifacts: raster stacks, sample tables, polygon sets and zone maps.
//
// Stack layout: `<name>.stack.json` (header), `<name>.f32` (little-endian float32
// values in ((t*B + b)*H + r)*W + c order, NaN where invalid) and `<name>.mask.bin`
// (one validity bit per cell in the same order, LSB first, padded to a byte).

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "irrig/core/error.hpp"
#include "irrig/core/log.hpp"

namespace irrig {

namespace fs = std::filesystem;

inline constexpr int kStackFormatVersion = 1;

struct StackHeader {
  int version = kStackFormatVersion;
  int width = 0;
  int height = 0;
  std::vector<std::string> bands;
  int timesteps = 0;
  std::string start_date = "2020-06-01";
  int step_days = 10;
  double pixel_size_m = 10.0;
  std::string nodata_policy = "nan";
  std::string data_file;

  std::size_t band_count() const { return bands.size(); }
  std::size_t cell_count() const {
    return static_cast<std::size_t>(timesteps) * bands.size() * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }

  void validate() const {
    if (version != kStackFormatVersion)
      throw FormatError("stack header: unknown version " + std::to_string(version));
    if (width < 1 || height < 1 || timesteps < 1 || bands.empty())
      throw ShapeError("stack header: width, height, timesteps and bands must all be >= 1");
    if (step_days <= 0) throw FormatError("stack header: step_days must be positive");
    if (!(pixel_size_m > 0)) throw FormatError("stack header: pixel_size_m must be positive");
    if (nodata_policy != "nan") throw FormatError("stack header: nodata_policy must be \"nan\"");
    std::set<std::string> seen;
    for (const auto& b : bands)
      if (!seen.insert(b).second) throw FormatError("stack header: duplicate band name '" + b + "'");
  }
};

inline void to_json(nlohmann::json& j, const StackHeader& h) {
  j = nlohmann::json{{"version", h.version},       {"width", h.width},
                     {"height", h.height},         {"bands", h.bands},
                     {"timesteps", h.timesteps},   {"start_date", h.start_date},
                     {"step_days", h.step_days},   {"pixel_size_m", h.pixel_size_m},
                     {"nodata_policy", h.nodata_policy}, {"data_file", h.data_file}};
}

inline void from_json(const nlohmann::json& j, StackHeader& h) {
  try {
    h.version = j.at("version").get<int>();
    h.width = j.at("width").get<int>();
    h.height = j.at("height").get<int>();
    h.bands = j.at("bands").get<std::vector<std::string>>();
    h.timesteps = j.at("timesteps").get<int>();
    h.start_date = j.at("start_date").get<std::string>();
    h.step_days = j.at("step_days").get<int>();
    h.pixel_size_m = j.at("pixel_size_m").get<double>();
    h.nodata_policy = j.at("nodata_policy").get<std::string>();
    h.data_file = j.at("data_file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("stack header: ") + e.what());
  }
}

/// Dense (time, band, row, col) raster with an authoritative validity mask.
struct RasterStack {
  StackHeader header;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  static RasterStack allocate(StackHeader h, float fill = 0.0f) {
    h.validate();
    RasterStack s;
    s.values.assign(h.cell_count(), fill);
    s.valid.assign(h.cell_count(), 1);
    s.header = std::move(h);
    return s;
  }

  int width() const { return header.width; }
  int height() const { return header.height; }
  int timesteps() const { return header.timesteps; }
  int bands() const { return static_cast<int>(header.bands.size()); }
  std::size_t pixels() const { return static_cast<std::size_t>(header.width) * header.height; }

  std::size_t index(int t, int b, int r, int c) const {
    return ((static_cast<std::size_t>(t) * header.bands.size() + b) * header.height + r) *
               header.width + c;
  }
  float at(int t, int b, int r, int c) const { return values[index(t, b, r, c)]; }
  float& at(int t, int b, int r, int c) { return values[index(t, b, r, c)]; }
  bool is_valid(int t, int b, int r, int c) const { return valid[index(t, b, r, c)] != 0; }
  void set_invalid(int t, int b, int r, int c) {
    const auto i = index(t, b, r, c);
    valid[i] = 0;
    values[i] = std::numeric_limits<float>::quiet_NaN();
  }

  int band_index(std::string_view name) const {
    for (std::size_t i = 0; i < header.bands.size(); ++i)
      if (header.bands[i] == name) return static_cast<int>(i);
    throw FormatError("stack has no band named '" + std::string(name) + "'");
  }

  bool all_valid() const {
    return std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
  }

  /// Time series of one band at one pixel.
  std::vector<double> series(int b, int r, int c) const {
    std::vector<double> out(static_cast<std::size_t>(header.timesteps));
    for (int t = 0; t < header.timesteps; ++t) out[t] = at(t, b, r, c);
    return out;
  }

  void check_consistent() const {
    header.validate();
    if (values.size() != header.cell_count() || valid.size() != header.cell_count())
      throw ShapeError("raster stack: array length " + std::to_string(values.size()) +
                       " does not match header (" + std::to_string(header.cell_count()) + ")");
  }
};

struct StackPaths {
  fs::path header;
  fs::path data;
  fs::path mask;
  std::string name;
};

/// Accepts `dir/name.stack.json` or `dir/name` and returns all three file paths.
inline StackPaths stack_paths(const fs::path& path) {
  std::string file = path.filename().string();
  constexpr std::string_view suffix = ".stack.json";
  if (file.size() > suffix.size() && file.ends_with(suffix)) file.resize(file.size() - suffix.size());
  const fs::path dir = path.parent_path();
  return {dir / (file + std::string(suffix)), dir / (file + ".f32"), dir / (file + ".mask.bin"), file};
}

namespace detail {

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  return v;
}

inline nlohmann::json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw FormatError("cannot open '" + p.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + p.string() + "': " + e.what());
  }
}

inline void write_json_file(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw FormatError("cannot write '" + p.string() + "'");
  out << j.dump(2) << '\n';
}

inline std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline void write_stack(const RasterStack& stack, const fs::path& path) {
  stack.check_consistent();
  const auto paths = stack_paths(path);
  StackHeader h = stack.header;
  h.data_file = paths.data.filename().string();
  detail::write_json_file(paths.header, nlohmann::json(h));

  const std::size_t n = stack.values.size();
  std::vector<std::uint32_t> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    float v = stack.valid[i] ? stack.values[i] : std::numeric_limits<float>::quiet_NaN();
    raw[i] = detail::to_little(std::bit_cast<std::uint32_t>(v));
  }
  {
    std::ofstream out(paths.data, std::ios::binary);
    if (!out) throw FormatError("cannot write '" + paths.data.string() + "'");
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(n * 4));
  }
  std::vector<std::uint8_t> bits((n + 7) / 8, 0);
  for (std::size_t i = 0; i < n; ++i)
    if (stack.valid[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  std::ofstream out(paths.mask, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + paths.mask.string() + "'");
  out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
}

inline RasterStack read_stack(const fs::path& path) {
  const auto paths = stack_paths(path);
  RasterStack s;
  s.header = detail::read_json_file(paths.header).get<StackHeader>();
  s.header.validate();
  const fs::path data = paths.header.parent_path() / s.header.data_file;
  const auto bytes = detail::read_bytes(data);
  const std::size_t n = s.header.cell_count();
  if (bytes.size() < n * 4)
    throw FormatError("truncated data: '" + data.string() + "' holds " +
                      std::to_string(bytes.size()) + " bytes, header implies " +
                      std::to_string(n * 4));
  if (bytes.size() > n * 4) throw FormatError("data file '" + data.string() + "' is longer than the header implies");
  s.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + i * 4, 4);
    s.values[i] = std::bit_cast<float>(detail::to_little(v));
  }
  const auto mask = detail::read_bytes(paths.mask);
  if (mask.size() != (n + 7) / 8) throw FormatError("truncated data: mask file '" + paths.mask.string() + "'");
  s.valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.valid[i] = (static_cast<std::uint8_t>(mask[i / 8]) >> (i % 8)) & 1u;
    if (!s.valid[i]) s.values[i] = std::numeric_limits<float>::quiet_NaN();
  }
  return s;
}

// ---------------------------------------------------------------------------
// Sample tables

enum class LandClass : int { non_irrigated = 0, irrigated = 1 };
enum class Split : int { train = 0, val = 1, test = 2 };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

inline std::string_view class_name(LandClass c) {
  return c == LandClass::irrigated ? "irrigated" : "non_irrigated";
}

inline LandClass parse_class_name(std::string_view s) {
  if (s == "irrigated") return LandClass::irrigated;
  if (s == "non_irrigated") return LandClass::non_irrigated;
  throw FormatError("unknown class '" + std::string(s) + "'");
}

/// One labeled pixel: every feature layer is a series of the table's length.
struct PixelSample {
  std::string region;
  std::int64_t polygon_id = 0;
  LandClass cls = LandClass::non_irrigated;
  Split split = Split::train;
  std::vector<std::vector<float>> layers;

  bool operator==(const PixelSample&) const = default;
};

struct SampleTable {
  std::vector<std::string> layer_names{"EVI"};
  int timesteps = 0;
  std::vector<PixelSample> rows;

  bool operator==(const SampleTable&) const = default;

  std::size_t size() const { return rows.size(); }

  int layer_index(std::string_view name) const {
    for (std::size_t i = 0; i < layer_names.size(); ++i)
      if (layer_names[i] == name) return static_cast<int>(i);
    throw FormatError("sample table has no layer '" + std::string(name) + "'");
  }

  void validate() const {
    for (const auto& r : rows) {
      if (r.layers.size() != layer_names.size())
        throw ShapeError("sample table: row has " + std::to_string(r.layers.size()) + " layers, expected " +
                         std::to_string(layer_names.size()));
      for (const auto& l : r.layers)
        if (static_cast<int>(l.size()) != timesteps) throw ShapeError("sample table: ragged row");
      if (r.region.find_first_of(",\n\r") != std::string::npos)
        throw FormatError("sample table: region names may not contain commas or newlines");
    }
  }

  std::vector<std::string> regions() const {
    std::set<std::string> s;
    for (const auto& r : rows) s.insert(r.region);
    return {s.begin(), s.end()};
  }
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, std::string_view what, std::size_t line_no) {
  T v{};
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  // from_chars rejects a leading '+'.
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw FormatError("samples line " + std::to_string(line_no) + ": bad " + std::string(what) + " '" +
                      std::string(s) + "'");
  return v;
}

inline std::string time_column(int t, int width) {
  std::string digits = std::to_string(t);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
  return "t" + digits;
}

inline int time_column_width(int timesteps) {
  return std::max<int>(2, static_cast<int>(std::to_string(std::max(timesteps - 1, 0)).size()));
}

}  // namespace detail

inline void write_samples(const SampleTable& table, const fs::path& path) {
  table.validate();
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  const int width = detail::time_column_width(table.timesteps);
  out << "region,polygon_id,class,split,layer";
  for (int t = 0; t < table.timesteps; ++t) out << ',' << detail::time_column(t, width);
  out << '\n';
  char buf[64];
  for (const auto& row : table.rows) {
    for (std::size_t l = 0; l < table.layer_names.size(); ++l) {
      out << row.region << ',' << row.polygon_id << ',' << static_cast<int>(row.cls) << ','
          << to_string(row.split) << ',' << table.layer_names[l];
      for (float v : row.layers[l]) {
        // Shortest representation that round-trips a float (at most 9 significant digits).
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
        out << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
      }
      out << '\n';
    }
  }
}

/// Rows are grouped into samples in blocks of L consecutive rows, one per layer, where
/// the layer order is fixed by the first block.
inline SampleTable read_samples(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("samples: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto head = detail::split_csv(line);
  static constexpr std::string_view kFixed[] = {"region", "polygon_id", "class", "split", "layer"};
  for (std::size_t i = 0; i < 5; ++i)
    if (i >= head.size() || head[i] != kFixed[i])
      throw FormatError("samples: missing column '" + std::string(kFixed[i]) + "'");
  SampleTable table;
  table.timesteps = static_cast<int>(head.size()) - 5;
  if (table.timesteps < 1) throw FormatError("samples: missing column 't00'");
  const int width = detail::time_column_width(table.timesteps);
  for (int t = 0; t < table.timesteps; ++t)
    if (head[5 + t] != detail::time_column(t, width))
      throw FormatError("samples: missing column '" + detail::time_column(t, width) + "'");

  struct RawRow {
    std::string region;
    std::int64_t polygon;
    LandClass cls;
    Split split;
    std::string layer;
    std::vector<float> values;
  };
  std::vector<RawRow> raw;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != head.size())
      throw FormatError("samples line " + std::to_string(line_no) + ": ragged row (" + std::to_string(f.size()) +
                        " fields, expected " + std::to_string(head.size()) + ")");
    RawRow r;
    r.region = std::string(f[0]);
    r.polygon = detail::parse_number<std::int64_t>(f[1], "polygon_id", line_no);
    const int cls = detail::parse_number<int>(f[2], "class", line_no);
    if (cls != 0 && cls != 1)
      throw FormatError("samples line " + std::to_string(line_no) + ": class must be 0 or 1, got " +
                        std::string(f[2]));
    r.cls = static_cast<LandClass>(cls);
    r.split = parse_split(f[3]);
    r.layer = std::string(f[4]);
    r.values.resize(static_cast<std::size_t>(table.timesteps));
    for (int t = 0; t < table.timesteps; ++t) r.values[t] = detail::parse_number<float>(f[5 + t], "value", line_no);
    raw.push_back(std::move(r));
  }
  if (raw.empty()) {
    table.layer_names = {"EVI"};
    return table;
  }
  // Layer order from the first block.
  table.layer_names.clear();
  for (const auto& r : raw) {
    if (std::find(table.layer_names.begin(), table.layer_names.end(), r.layer) != table.layer_names.end()) break;
    table.layer_names.push_back(r.layer);
  }
  const std::size_t L = table.layer_names.size();
  if (raw.size() % L != 0) throw FormatError("samples: row count is not a multiple of the layer count");
  table.rows.reserve(raw.size() / L);
  for (std::size_t i = 0; i < raw.size(); i += L) {
    PixelSample s;
    s.region = raw[i].region;
    s.polygon_id = raw[i].polygon;
    s.cls = raw[i].cls;
    s.split = raw[i].split;
    for (std::size_t l = 0; l < L; ++l) {
      const auto& r = raw[i + l];
      if (r.layer != table.layer_names[l] || r.region != s.region || r.polygon != s.polygon_id || r.cls != s.cls ||
          r.split != s.split)
        throw FormatError("samples: inconsistent layer block starting at data row " + std::to_string(i + 1));
      s.layers.push_back(std::move(raw[i + l].values));
    }
    table.rows.push_back(std::move(s));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Polygons

struct Point {
  double x = 0;  // column coordinate
  double y = 0;  // row coordinate
  bool operator==(const Point&) const = default;
};

/// Vertices of a ring without the repeated closing vertex; closure is implicit.
using Ring = std::vector<Point>;

struct Polygon {
  std::int64_t id = 0;
  std::string region;
  LandClass cls = LandClass::non_irrigated;
  std::vector<Ring> rings;  // first is the outer boundary, the rest are holes

  bool operator==(const Polygon&) const = default;
};

using PolygonSet = std::vector<Polygon>;

inline PolygonSet parse_polygons(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("polygons: expected a JSON array");
  PolygonSet out;
  for (const auto& item : j) {
    Polygon p;
    try {
      p.id = item.at("id").get<std::int64_t>();
      p.region = item.at("region").get<std::string>();
      p.cls = parse_class_name(item.at("class").get<std::string>());
      for (const auto& ring_j : item.at("rings")) {
        Ring ring;
        for (const auto& pt : ring_j) {
          if (!pt.is_array() || pt.size() != 2) throw FormatError("polygon " + std::to_string(p.id) + ": bad vertex");
          ring.push_back({pt[0].get<double>(), pt[1].get<double>()});
        }
        if (ring.size() >= 2 && ring.front() == ring.back()) {
          ring.pop_back();
        } else if (!ring.empty()) {
          log::warn("polygon " + std::to_string(p.id) + ": ring not closed, auto-closing");
        }
        if (ring.size() < 3)
          throw FormatError("polygon " + std::to_string(p.id) + ": ring has fewer than 3 vertices");
        p.rings.push_back(std::move(ring));
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("polygons: ") + e.what());
    }
    if (p.rings.empty()) throw FormatError("polygon " + std::to_string(p.id) + ": no rings");
    out.push_back(std::move(p));
  }
  return out;
}

inline nlohmann::json polygons_to_json(const PolygonSet& polys) {
  auto arr = nlohmann::json::array();
  for (const auto& p : polys) {
    auto rings = nlohmann::json::array();
    for (const auto& ring : p.rings) {
      auto r = nlohmann::json::array();
      for (const auto& pt : ring) r.push_back({pt.x, pt.y});
      if (!ring.empty()) r.push_back({ring.front().x, ring.front().y});
      rings.push_back(std::move(r));
    }
    arr.push_back({{"id", p.id}, {"region", p.region}, {"class", class_name(p.cls)}, {"rings", std::move(rings)}});
  }
  return arr;
}

inline PolygonSet read_polygons(const fs::path& path) { return parse_polygons(detail::read_json_file(path)); }

inline void write_polygons(const PolygonSet& polys, const fs::path& path) {
  detail::write_json_file(path, polygons_to_json(polys));
}

// ---------------------------------------------------------------------------
// Zone maps

struct ZoneMap {
  int width = 0;
  int height = 0;
  double pixel_size_m = 10.0;
  std::vector<int> ids;  // row-major, 0 = outside every zone
  std::map<int, std::string> names;

  bool operator==(const ZoneMap&) const = default;

  int at(int r, int c) const { return ids[static_cast<std::size_t>(r) * width + c]; }
  int& at(int r, int c) { return ids[static_cast<std::size_t>(r) * width + c]; }
};

inline fs::path zone_names_path(const fs::path& path) {
  const auto p = stack_paths(path);
  return p.header.parent_path() / (p.name + ".zones.json");
}

inline void write_zone_map(const ZoneMap& zm, const fs::path& path) {
  if (zm.ids.size() != static_cast<std::size_t>(zm.width) * zm.height) throw ShapeError("zone map: size mismatch");
  StackHeader h;
  h.width = zm.width;
  h.height = zm.height;
  h.bands = {"zone"};
  h.timesteps = 1;
  h.pixel_size_m = zm.pixel_size_m;
  auto s = RasterStack::allocate(h);
  for (std::size_t i = 0; i < zm.ids.size(); ++i) s.values[i] = static_cast<float>(zm.ids[i]);
  write_stack(s, path);
  nlohmann::json names = nlohmann::json::object();
  for (const auto& [id, name] : zm.names) names[std::to_string(id)] = name;
  detail::write_json_file(zone_names_path(path), names);
}

inline ZoneMap read_zone_map(const fs::path& path) {
  const auto s = read_stack(path);
  if (s.bands() != 1 || s.timesteps() != 1) throw FormatError("zone map: expected 1 band and 1 timestep");
  ZoneMap zm;
  zm.width = s.width();
  zm.height = s.height();
  zm.pixel_size_m = s.header.pixel_size_m;
  zm.ids.resize(s.pixels());
  for (std::size_t i = 0; i < zm.ids.size(); ++i) {
    const float v = s.values[i];
    if (!s.valid[i] || v != std::round(v)) throw FormatError("zone map: non-integer zone id");
    zm.ids[i] = static_cast<int>(v);
  }
  const auto names = detail::read_json_file(zone_names_path(path));
  for (const auto& [key, value] : names.items()) {
    int id = 0;
    auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
    if (ec != std::errc() || ptr != key.data() + key.size()) throw FormatError("zone names: bad id '" + key + "'");
    zm.names[id] = value.get<std::string>();
  }
  return zm;
}

/// Builds a single-band, single-timestep raster (slope, class, probability, ...).
inline RasterStack make_plane(int width, int height, std::string band, double pixel_size_m = 10.0) {
  StackHeader h;
  h.width = width;
  h.height = height;
  h.bands = {std::move(band)};
  h.timesteps = 1;
  h.pixel_size_m = pixel_size_m;
  return RasterStack::allocate(std::move(h));
}

}  // namespace irrig
