#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "irrig/core/log.hpp"
#include "irrig/mosaic.hpp"
#include "irrig/raster_io.hpp"
#include "irrig/synth.hpp"
#include "irrig/timeseries.hpp"
#include "support.hpp"

namespace irrig {
namespace {

using testing::TempDir;

RasterStack counter_stack(int T, int B, int H, int W) {
  StackHeader h;
  h.width = W;
  h.height = H;
  h.timesteps = T;
  h.bands.clear();
  for (int b = 0; b < B; ++b) h.bands.push_back("b" + std::to_string(b));
  auto s = RasterStack::allocate(h);
  for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = static_cast<float>(i);
  return s;
}

// ---------------------------------------------------------------------------
// raster io

TEST(RasterIo, SmallStackRoundtripsBitExactly) {
  TempDir dir;
  auto s = counter_stack(2, 1, 2, 2);
  s.values[1] = -0.0f;
  s.values[2] = 1.0e-38f;
  s.set_invalid(1, 0, 1, 1);
  write_stack(s, dir / "tiny");
  const auto back = read_stack(dir / "tiny.stack.json");
  ASSERT_EQ(back.values.size(), s.values.size());
  EXPECT_EQ(back.valid, s.valid);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (!s.valid[i]) {
      EXPECT_TRUE(std::isnan(back.values[i]));
      continue;
    }
    EXPECT_EQ(std::bit_cast<std::uint32_t>(back.values[i]), std::bit_cast<std::uint32_t>(s.values[i]));
  }
  EXPECT_EQ(back.header.bands, s.header.bands);
  EXPECT_EQ(back.header.start_date, s.header.start_date);
}

TEST(RasterIo, AnnualHeaderAccepted) {
  StackHeader h;
  h.width = 3;
  h.height = 2;
  h.timesteps = 36;
  h.step_days = 10;
  h.start_date = "2020-06-01";
  h.bands = {"EVI"};
  EXPECT_NO_THROW(h.validate());
  const auto grid = TimeGrid::from_header(h);
  EXPECT_EQ(season_window(grid, Season::dry).lo, 18);
}

TEST(RasterIo, OffsetFormulaHoldsAtEveryCorner) {
  const int T = 3, B = 2, H = 4, W = 5;
  TempDir dir;
  write_stack(counter_stack(T, B, H, W), dir / "counter");
  const auto s = read_stack(dir / "counter");
  for (int t : {0, T - 1})
    for (int b : {0, B - 1})
      for (int r : {0, H - 1})
        for (int c : {0, W - 1}) {
          const int offset = ((t * B + b) * H + r) * W + c;
          EXPECT_EQ(s.at(t, b, r, c), static_cast<float>(offset));
        }
  // raw little-endian bytes at a known offset
  std::ifstream raw(dir / "counter.f32", std::ios::binary);
  const int offset = ((1 * B + 1) * H + 2) * W + 3;
  raw.seekg(offset * 4);
  unsigned char bytes[4];
  raw.read(reinterpret_cast<char*>(bytes), 4);
  const std::uint32_t u = bytes[0] | (bytes[1] << 8) | (bytes[2] << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
  EXPECT_EQ(std::bit_cast<float>(u), static_cast<float>(offset));
}

TEST(RasterIo, TruncatedDataIsRejected) {
  TempDir dir;
  write_stack(counter_stack(2, 1, 2, 2), dir / "s");
  fs::resize_file(dir / "s.f32", 12);
  try {
    read_stack(dir / "s");
    FAIL() << "expected an error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated data"), std::string::npos);
  }
}

TEST(RasterIo, UnknownVersionIsRejected) {
  TempDir dir;
  write_stack(counter_stack(1, 1, 1, 1), dir / "s");
  auto j = detail::read_json_file(dir / "s.stack.json");
  j["version"] = 99;
  detail::write_json_file(dir / "s.stack.json", j);
  EXPECT_THROW(read_stack(dir / "s"), FormatError);
}

TEST(RasterIo, InconsistentStackIsRejectedOnWrite) {
  TempDir dir;
  auto s = counter_stack(1, 1, 2, 2);
  s.values.pop_back();
  EXPECT_THROW(write_stack(s, dir / "s"), ShapeError);
}

TEST(Samples, SingleRowFileHasThirtySixSteps) {
  TempDir dir;
  std::ofstream out(dir / "one.csv");
  out << "region,polygon_id,class,split,layer";
  for (int t = 0; t < 36; ++t) out << ",t" << (t < 10 ? "0" : "") << t;
  out << "\nAmhara,7,1,train,EVI";
  for (int t = 0; t < 36; ++t) out << "," << 0.01 * t;
  out << "\n";
  out.close();
  const auto table = read_samples(dir / "one.csv");
  EXPECT_EQ(table.timesteps, 36);
  ASSERT_EQ(table.size(), 1u);
  EXPECT_EQ(table.rows[0].cls, LandClass::irrigated);
  EXPECT_FLOAT_EQ(table.rows[0].layers[0][35], 0.35f);
}

TEST(Samples, ClassOutsideBinaryIsRejected) {
  TempDir dir;
  std::ofstream out(dir / "bad.csv");
  out << "region,polygon_id,class,split,layer,t00,t01\nA,1,2,train,EVI,0.1,0.2\n";
  out.close();
  EXPECT_THROW(read_samples(dir / "bad.csv"), FormatError);
}

TEST(Samples, RaggedRowAndMissingColumnAreRejected) {
  TempDir dir;
  {
    std::ofstream out(dir / "ragged.csv");
    out << "region,polygon_id,class,split,layer,t00,t01\nA,1,0,train,EVI,0.1\n";
  }
  EXPECT_THROW(read_samples(dir / "ragged.csv"), FormatError);
  {
    std::ofstream out(dir / "missing.csv");
    out << "region,polygon_id,split,layer,t00\nA,1,train,EVI,0.1\n";
  }
  EXPECT_THROW(read_samples(dir / "missing.csv"), FormatError);
}

TEST(Samples, TenThousandSyntheticRowsRoundtrip) {
  RegionSpec spec;
  spec.irrigated = 5000;
  spec.non_irrigated = 5000;
  auto table = generate_region(spec, 11).table;
  TempDir dir;
  write_samples(table, dir / "s.csv");
  EXPECT_EQ(read_samples(dir / "s.csv"), table);
}

TEST(Samples, MultiLayerRowsRoundtrip) {
  RegionSpec spec;
  spec.irrigated = 20;
  spec.non_irrigated = 20;
  spec.all_bands = true;
  auto table = generate_regions({spec}, 3).table;
  TempDir dir;
  write_samples(table, dir / "s.csv");
  const auto back = read_samples(dir / "s.csv");
  EXPECT_EQ(back.layer_names.size(), 11u);
  EXPECT_EQ(back, table);
}

TEST(Polygons, UnitSquareHasFourVertices) {
  const auto polys = parse_polygons(nlohmann::json::parse(
      R"([{"id": 1, "region": "A", "class": "irrigated", "rings": [[[0,0],[1,0],[1,1],[0,1],[0,0]]]}])"));
  ASSERT_EQ(polys.size(), 1u);
  EXPECT_EQ(polys[0].rings[0].size(), 4u);
  EXPECT_EQ(polys[0].cls, LandClass::irrigated);
}

TEST(Polygons, UnclosedRingIsClosedWithWarning) {
  log::ScopedCapture capture;
  const auto polys = parse_polygons(nlohmann::json::parse(
      R"([{"id": 4, "region": "A", "class": "non_irrigated", "rings": [[[0,0],[2,0],[2,2],[0,2]]]}])"));
  EXPECT_EQ(polys[0].rings[0].size(), 4u);
  EXPECT_TRUE(capture.contains("ring not closed, auto-closing"));
}

TEST(Polygons, DegenerateRingAndUnknownClassAreRejected) {
  EXPECT_THROW(parse_polygons(nlohmann::json::parse(
                   R"([{"id": 1, "region": "A", "class": "irrigated", "rings": [[[0,0],[1,1]]]}])")),
               FormatError);
  EXPECT_THROW(parse_polygons(nlohmann::json::parse(
                   R"([{"id": 1, "region": "A", "class": "orchard", "rings": [[[0,0],[1,0],[1,1]]]}])")),
               FormatError);
}

TEST(Polygons, RoundtripThroughFile) {
  PolygonSet polys;
  Polygon p;
  p.id = 9;
  p.region = "Tigray";
  p.cls = LandClass::irrigated;
  p.rings = {{{0, 0}, {4, 0}, {4, 4}, {0, 4}}, {{1, 1}, {2, 1}, {2, 2}}};
  polys.push_back(p);
  TempDir dir;
  write_polygons(polys, dir / "p.json");
  EXPECT_EQ(read_polygons(dir / "p.json"), polys);
}

TEST(ZoneMaps, RoundtripThroughFile) {
  ZoneMap zm;
  zm.width = 3;
  zm.height = 2;
  zm.ids = {0, 1, 1, 2, 2, 0};
  zm.names = {{1, "North"}, {2, "South"}};
  TempDir dir;
  write_zone_map(zm, dir / "zones");
  EXPECT_EQ(read_zone_map(dir / "zones"), zm);
}

// ---------------------------------------------------------------------------
// time series

TEST(Evi, FormulaValues) {
  EXPECT_NEAR(*compute_evi(0.05, 0.10, 0.40), 0.461538, 1e-6);
  EXPECT_NEAR(*compute_evi(0.02, 0.05, 0.30), 0.431034, 1e-6);
  for (double b : {0.0, 0.03, 0.1}) EXPECT_DOUBLE_EQ(*compute_evi(b, 0.2, 0.2), 0.0);
}

TEST(Evi, InvalidInputsAreFlagged) {
  EXPECT_FALSE(compute_evi(std::nan(""), 0.1, 0.2).has_value());
  EXPECT_FALSE(compute_evi(0.1, std::numeric_limits<double>::infinity(), 0.2).has_value());
  // nir + 6 red - 7.5 blue + 1 = 0
  EXPECT_FALSE(compute_evi(0.2, 0.0, 0.5).has_value());
  EXPECT_DOUBLE_EQ(*compute_evi(0.0, 0.0, 100.0), 1.0);
}

TEST(Gaps, LinearAndEdgeFill) {
  TimeSeries a{{1, 0, 3}, {1, 0, 1}};
  EXPECT_EQ(interpolate_gaps(a), (std::vector<double>{1, 2, 3}));
  TimeSeries b{{0, 2, 4}, {0, 1, 1}};
  EXPECT_EQ(interpolate_gaps(b), (std::vector<double>{2, 2, 4}));
  TimeSeries c{{0, 0}, {0, 0}};
  EXPECT_THROW(interpolate_gaps(c), NumericError);
}

TEST(Gaps, IdempotentOnValidSeries) {
  const auto s = TimeSeries::all_valid({0.3, 0.1, 0.7, 0.2});
  EXPECT_EQ(interpolate_gaps(s), s.values);
  TimeSeries g{{0.3, 0, 0, 0.9, 0}, {1, 0, 0, 1, 0}};
  const auto once = interpolate_gaps(g);
  EXPECT_EQ(interpolate_gaps(TimeSeries::all_valid(once)), once);
}

TEST(Savgol, WeightsMatchLeastSquaresCubicFit) {
  Eigen::Matrix<double, 5, 4> A;
  for (int i = 0; i < 5; ++i)
    for (int p = 0; p < 4; ++p) A(i, p) = std::pow(i - 2.0, p);
  const Eigen::Matrix<double, 4, 5> pinv = (A.transpose() * A).inverse() * A.transpose();
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(kSavgolWeights[i], pinv(0, i), 1e-12);
}

TEST(Savgol, ImpulseCenterIsSeventeenThirtyFifths) {
  const std::vector<double> impulse{0, 0, 1, 0, 0};
  EXPECT_NEAR(savgol_smooth(impulse)[2], 17.0 / 35.0, 1e-15);
  EXPECT_NEAR(17.0 / 35.0, 0.485714, 1e-6);
}

TEST(Savgol, ConstantAndCubicReproduction) {
  const std::vector<double> flat(12, 0.37);
  for (double v : savgol_smooth(flat)) EXPECT_DOUBLE_EQ(v, 0.37);
  Rng rng = make_stream(5, 0);
  for (int trial = 0; trial < 20; ++trial) {
    double c[4];
    for (double& v : c) v = 2.0 * uniform01(rng) - 1.0;
    std::vector<double> x(20);
    for (int t = 0; t < 20; ++t) x[t] = c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t * 0.01;
    const auto y = savgol_smooth(x);
    for (int t = 2; t < 18; ++t) EXPECT_NEAR(y[t], x[t], 1e-9 * (1 + std::abs(x[t])));
  }
  EXPECT_THROW(savgol_smooth(std::vector<double>{1, 2, 3, 4}), NumericError);
}

TEST(Savgol, FiniteAfterGapFilling) {
  TimeSeries s{{0.1, 0, 0, 0.8, 0, 0.3, 0}, {1, 0, 0, 1, 0, 1, 0}};
  for (double v : savgol_smooth(interpolate_gaps(s))) EXPECT_TRUE(std::isfinite(v));
}

TEST(Spline, InterpolatesKnotsAndClamps) {
  CubicSpline s({0, 1, 3, 4}, {0.2, 0.8, 0.1, 0.4});
  EXPECT_DOUBLE_EQ(s(0), 0.2);
  EXPECT_NEAR(s(1), 0.8, 1e-15);
  EXPECT_NEAR(s(3), 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(s(-5), 0.2);
  EXPECT_DOUBLE_EQ(s(9), 0.4);
  CubicSpline line({2, 6}, {1, 3});
  EXPECT_NEAR(line(3), 1.5, 1e-15);
  EXPECT_THROW(CubicSpline({0, 1, 1}, {0, 1, 2}), NumericError);
}

TEST(Spline, SineMidpointsWithinOnePercent) {
  std::vector<double> x, y;
  for (int i = 0; i < 10; ++i) {
    x.push_back(std::numbers::pi * i / 9.0);
    y.push_back(std::sin(x.back()));
  }
  const CubicSpline s(x, y);
  for (int i = 0; i + 1 < 10; ++i) {
    const double mid = 0.5 * (x[i] + x[i + 1]);
    EXPECT_LT(std::abs(s(mid) - std::sin(mid)), 1e-2);
  }
}

TEST(Percentile, RankInterpolation) {
  std::vector<double> v{10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
  EXPECT_NEAR(percentile(v, 10), 1.9, 1e-12);
  EXPECT_NEAR(percentile(v, 90), 9.1, 1e-12);
  const std::vector<double> flat(7, 0.42);
  for (double q : {0.0, 33.0, 100.0}) EXPECT_DOUBLE_EQ(percentile(flat, q), 0.42);
  EXPECT_THROW(percentile(std::vector<double>{}, 50), NumericError);
}

TEST(Percentile, MonotoneInQ) {
  Rng rng = make_stream(9, 1);
  std::vector<double> v(37);
  for (double& x : v) x = standard_normal(rng);
  double prev = -1e300;
  for (int q = 0; q <= 100; ++q) {
    const double p = percentile(v, q);
    EXPECT_GE(p, prev);
    prev = p;
  }
}

TEST(Percentile, MaskedSeriesUsesValidEntries) {
  TimeSeries s{{1, 100, 2, 3}, {1, 0, 1, 1}};
  EXPECT_DOUBLE_EQ(percentile(s, 50), 2.0);
}

TEST(Seasons, WindowsFromCalendarOverlap) {
  const TimeGrid grid;
  const auto dry = season_window(grid, Season::dry);
  const auto rainy = season_window(grid, Season::rainy);
  EXPECT_EQ(dry.lo, 18);
  EXPECT_EQ(dry.hi, 30);
  EXPECT_EQ(rainy.lo, 0);
  EXPECT_EQ(rainy.hi, 12);
  // independent check: [10t, 10t+10) overlaps [183, 304)
  for (int t = 0; t < 36; ++t) {
    const bool overlaps = 10 * t + 10 > 183 && 10 * t < 304;
    EXPECT_EQ(overlaps, t >= dry.lo && t <= dry.hi) << t;
  }
  TimeGrid two = grid;
  two.timesteps = 72;
  EXPECT_EQ(season_window(two, Season::dry, 1).lo, 54);
}

TEST(Seasons, NonJuneAnchorIsRejected) {
  TimeGrid grid;
  grid.start = chr::year_month_day{chr::year{2020}, chr::July, chr::day{1}};
  EXPECT_THROW(season_window(grid, Season::dry), NumericError);
}

TEST(Shift, EdgeReplication) {
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_EQ(random_shift(x, 0), x);
  EXPECT_EQ(random_shift(x, 1), (std::vector<double>{1, 1, 2, 3}));
  EXPECT_EQ(random_shift(x, -2), (std::vector<double>{3, 4, 4, 4}));
  EXPECT_THROW(random_shift(x, 4), NumericError);
}

TEST(Shift, OppositeShiftRestoresInterior) {
  std::vector<double> x(36);
  for (int t = 0; t < 36; ++t) x[t] = std::sin(0.3 * t) + 0.01 * t;
  for (int s = -3; s <= 3; ++s) {
    const auto back = random_shift(random_shift(x, s), -s);
    const int a = std::abs(s);
    for (int t = 0; t < 36; ++t) {
      const bool interior = s >= 0 ? t < 36 - a : t >= a;
      if (interior) EXPECT_DOUBLE_EQ(back[t], x[t]) << "shift " << s << " t " << t;
    }
  }
}

TEST(Shift, DrawsAreUniformOverSevenShifts) {
  Rng rng = make_stream(2024, 3);
  const int n = 70000;
  std::array<int, 7> counts{};
  for (int i = 0; i < n; ++i) {
    const int s = draw_shift(rng);
    ASSERT_GE(s, -3);
    ASSERT_LE(s, 3);
    ++counts[s + 3];
  }
  const double p = 1.0 / 7.0, sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) EXPECT_LT(std::abs(c - n * p), 3 * sigma);
}

TEST(Standardize, ValuesAndFit) {
  EXPECT_DOUBLE_EQ(standardize(0.5, 0.3, 0.2), 1.0);
  EXPECT_THROW(standardize(0.5, 0.3, 0.0), NumericError);

  RegionSpec spec;
  spec.irrigated = 40;
  spec.non_irrigated = 40;
  auto table = generate_region(spec, 4).table;
  const auto s = fit_standardizer(table);
  double sum = 0, sq = 0, n = 0;
  for (const auto& r : table.rows)
    for (float v : r.layers[0]) {
      const double z = s.apply(0, v);
      sum += z;
      sq += z * z;
      n += 1;
    }
  EXPECT_NEAR(sum / n, 0.0, 1e-9);
  EXPECT_NEAR(std::sqrt(sq / n - (sum / n) * (sum / n)), 1.0, 1e-9);

  for (auto& r : table.rows) std::fill(r.layers[0].begin(), r.layers[0].end(), 0.3f);
  EXPECT_THROW(fit_standardizer(table), NumericError);
}

// ---------------------------------------------------------------------------
// mosaic

SceneImage flat_scene(std::string id, chr::sys_days date, int H, int W, float value, double clouds = 0.0) {
  SceneImage s;
  s.id = std::move(id);
  s.date = date;
  s.height = H;
  s.width = W;
  s.band_names = {"blue", "red", "nir"};
  s.values.assign(3 * s.pixels(), value);
  s.clouded.assign(s.pixels(), 0);
  const auto n = static_cast<std::size_t>(std::llround(clouds * static_cast<double>(s.pixels())));
  for (std::size_t p = 0; p < n; ++p) s.clouded[s.pixels() - 1 - p] = 1;
  s.update_cloud_fraction();
  return s;
}

TEST(Composite, LeastCloudyClearSceneWins) {
  const auto day = chr::sys_days{chr::year{2020} / 6 / 3};
  std::vector<SceneImage> scenes{flat_scene("b", day, 2, 2, 2.0f), flat_scene("a", day, 2, 2, 1.0f)};
  scenes[0].clouded = {0, 1, 1, 0};
  scenes[1].clouded = {0, 0, 0, 1};
  for (auto& s : scenes) s.update_cloud_fraction();
  const auto c = composite_timestep(scenes);
  // pixel 0 is clear in both; the 25% scene wins
  EXPECT_EQ(c.values[0], 1.0f);
  // pixel 3 is clouded in the 25% scene, pixel 2 only in the 50% one
  EXPECT_EQ(c.values[3], 2.0f);
  EXPECT_EQ(c.values[2], 1.0f);
  EXPECT_TRUE(c.valid[3]);
}

TEST(Composite, CloudedEverywhereIsInvalid) {
  const auto day = chr::sys_days{chr::year{2020} / 6 / 3};
  std::vector<SceneImage> scenes{flat_scene("a", day, 1, 2, 1.0f, 0.5), flat_scene("b", day, 1, 2, 2.0f, 0.5)};
  const auto c = composite_timestep(scenes);
  EXPECT_FALSE(c.valid[1]);
  EXPECT_TRUE(std::isnan(c.values[1]));
  scenes.push_back(flat_scene("c", day, 2, 2, 1.0f));
  EXPECT_THROW(composite_timestep(scenes), ShapeError);
}

std::vector<SceneImage> ramp_scenes(const TimeGrid& grid, int pad, int H, int W, int skip_window) {
  std::vector<SceneImage> out;
  for (int t = -pad; t < grid.timesteps + pad; ++t) {
    if (t == skip_window) continue;
    auto s = flat_scene("s" + std::to_string(t + pad), grid.window_start(t) + chr::days{4}, H, W, 0.0f);
    for (int b = 0; b < 3; ++b)
      for (std::size_t p = 0; p < s.pixels(); ++p) s.values[b * s.pixels() + p] = 0.1f * b + 0.01f * (t + pad) + 0.001f * p;
    out.push_back(std::move(s));
  }
  return out;
}

TEST(BuildStack, RampRecoveredAcrossEmptyWindow) {
  TimeGrid grid;
  MosaicConfig cfg;
  cfg.smooth = false;
  const auto scenes = ramp_scenes(grid, cfg.pad_timesteps, 2, 3, 10);
  const auto res = build_stack(scenes, cfg, grid);
  EXPECT_EQ(res.stack.timesteps(), 36);
  EXPECT_TRUE(res.stack.all_valid());
  EXPECT_EQ(res.scenes_per_window[10], 0);
  for (std::size_t p = 0; p < 6; ++p)
    for (int b = 0; b < 3; ++b) {
      const float expect = 0.1f * b + 0.01f * (10 + 5) + 0.001f * p;
      EXPECT_NEAR(res.stack.at(10, b, static_cast<int>(p / 3), static_cast<int>(p % 3)), expect, 1e-6);
    }
  const auto rep = interpolation_stats(res.observed, res.scenes_per_window, 6, grid);
  EXPECT_NEAR(rep.total_fraction, 1.0 / 36.0, 1e-12);
  EXPECT_DOUBLE_EQ(rep.from_empty_windows, 1.0);
  EXPECT_DOUBLE_EQ(*rep.dry_fraction, 0.0);
}

TEST(BuildStack, SmoothedRampUnchangedAndPadsDiscarded) {
  TimeGrid grid;
  grid.timesteps = 72;
  MosaicConfig cfg;
  const auto scenes = ramp_scenes(grid, cfg.pad_timesteps, 1, 2, 1000);
  const auto res = build_stack(scenes, cfg, grid);
  ASSERT_EQ(res.stack.timesteps(), 72);
  for (int t = 0; t < 72; ++t) EXPECT_NEAR(res.stack.at(t, 2, 0, 1), 0.2f + 0.01f * (t + 5) + 0.001f, 1e-5);
}

TEST(BuildStack, CloudyScenesDroppedAndAllInvalidPixelReported) {
  TimeGrid grid;
  MosaicConfig cfg;
  auto scenes = ramp_scenes(grid, cfg.pad_timesteps, 1, 20, 1000);
  for (auto& s : scenes) {
    s.clouded[1] = 1;
    s.update_cloud_fraction();
  }
  auto hazy = scenes.front();
  hazy.id = "hazy";
  std::fill(hazy.clouded.begin() + 2, hazy.clouded.end(), 1);
  hazy.clouded[1] = 0;
  hazy.update_cloud_fraction();
  scenes.push_back(hazy);
  try {
    build_stack(scenes, cfg, grid);
    FAIL() << "expected an error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("(0,1)"), std::string::npos);
  }
}

TEST(InterpolationStats, QuarterEmpty) {
  TimeGrid grid;
  grid.start = chr::year_month_day{chr::year{2020}, chr::January, chr::day{1}};
  grid.timesteps = 4;
  std::vector<std::uint8_t> mask(4 * 3, 1);
  std::vector<int> per_window{1, 0, 1, 1};
  for (int p = 0; p < 3; ++p) mask[1 * 3 + p] = 0;
  const auto rep = interpolation_stats(mask, per_window, 3, grid);
  EXPECT_DOUBLE_EQ(rep.total_fraction, 0.25);
  EXPECT_FALSE(rep.dry_fraction.has_value());
  std::fill(mask.begin(), mask.end(), 1);
  const auto none = interpolation_stats(mask, std::vector<int>{1, 1, 1, 1}, 3, grid);
  EXPECT_DOUBLE_EQ(none.total_fraction, 0.0);
  EXPECT_DOUBLE_EQ(none.from_masking, 0.0);
}

TEST(Scenes, RoundtripThroughFile) {
  auto s = flat_scene("x", chr::sys_days{chr::year{2021} / 1 / 12}, 2, 3, 0.25f, 0.34);
  TempDir dir;
  write_scene(s, dir / "x");
  const auto back = read_scene(dir / "x");
  EXPECT_EQ(back.date, s.date);
  EXPECT_EQ(back.clouded, s.clouded);
  EXPECT_NEAR(back.cloud_fraction, s.cloud_fraction, 1e-12);
  EXPECT_EQ(back.values[0], 0.25f);
}

}  // namespace
}  // namespace irrig
