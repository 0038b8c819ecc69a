#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "repose/io.hpp"
#include "repose/scene.hpp"

using namespace repose;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "repose_test_scene";
  fs::create_directories(dir);
  return dir / name;
}

SceneSpec one_stratum(int count) {
  SceneSpec s;
  s.count_min = s.count_max = count;
  Stratum st;
  st.y_min = 0.3;
  st.y_max = 0.6;
  st.size_min = 0.02;
  st.size_max = 0.04;
  s.strata = {st};
  return s;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("generate_scene is deterministic per seed") {
  SceneSpec s = one_stratum(25);
  s.seed = 42;
  const Frame a = generate_scene(s);
  const Frame b = generate_scene(s);
  CHECK(a.detections == b.detections);
  s.seed = 43;
  CHECK(generate_scene(s).detections != a.detections);
}

TEST_CASE("single stratum scene stays inside its band") {
  SceneSpec s = one_stratum(10);
  const Frame f = generate_scene(s);
  REQUIRE(f.detections.size() == 10);
  for (const auto& b : f.detections) {
    CHECK(b.cy >= 0.3);
    CHECK(b.cy <= 0.6);
    CHECK_NOTHROW(validate_box(b));
    CHECK(b.left() >= 0.0);
    CHECK(b.right() <= 1.0);
  }
}

TEST_CASE("object height correlates with y across strata") {
  SceneSpec s;
  s.count_min = s.count_max = 1000;
  Stratum top;
  top.y_min = 0.05;
  top.y_max = 0.45;
  top.size_min = 0.005;
  top.size_max = 0.01;
  Stratum bottom;
  bottom.y_min = 0.55;
  bottom.y_max = 0.95;
  bottom.size_min = 0.05;
  bottom.size_max = 0.1;
  s.strata = {top, bottom};
  s.seed = 5;
  const Frame f = generate_scene(s);
  REQUIRE(f.detections.size() == 1000);
  std::vector<double> ys, hs;
  for (const auto& b : f.detections) {
    ys.push_back(b.cy);
    hs.push_back(b.h);
  }
  CHECK(pearson(ys, hs) > 0.8);
}

TEST_CASE("scene spec validation") {
  SceneSpec s = one_stratum(10);
  s.strata.clear();
  CHECK_THROWS_AS(generate_scene(s), ValidationError);
  s = one_stratum(10);
  s.count_min = 0;
  CHECK_THROWS_AS(validate_scene_spec(s), ValidationError);
  s = one_stratum(10);
  s.strata[0].y_max = 1.2;
  CHECK_THROWS_AS(validate_scene_spec(s), ValidationError);
  s = one_stratum(10);
  s.strata[0].size_min = 0.0;
  CHECK_THROWS_AS(validate_scene_spec(s), ValidationError);
}

TEST_CASE("scene spec JSON round-trip and unknown keys") {
  SceneSpec s = one_stratum(12);
  s.seed = 9;
  s.strata[0].groups = 3;
  const SceneSpec back = scene_spec_from_json(scene_spec_to_json(s));
  CHECK(generate_scene(back).detections == generate_scene(s).detections);
  auto j = scene_spec_to_json(s);
  j["colour"] = "red";
  CHECK_THROWS_AS(scene_spec_from_json(j), ValidationError);
}

TEST_CASE("detection JSON load") {
  const fs::path p = scratch("three.json");
  write_file_atomic(p, R"({"width_px": 1920, "height_px": 1080, "detections": [
    {"cx": 0.1, "cy": 0.2, "w": 0.05, "h": 0.1, "score": 0.9, "class_id": 0},
    {"cx": 0.5, "cy": 0.5, "w": 0.05, "h": 0.1, "score": 0.8, "class_id": 1},
    {"cx": 0.9, "cy": 0.8, "w": 0.05, "h": 0.1, "score": 0.7, "class_id": 0}]})");
  const Frame f = load_detections(p, DetectionFormat::json);
  CHECK(f.width_px == 1920);
  CHECK(f.detections.size() == 3);
  CHECK(f.detections[1].class_id == 1);

  write_file_atomic(p, R"({"width_px": 1920, "height_px": 1080, "detections": [{"cx": 0.1, "cy": 0.2, "w": 0.0, "h": 0.1}]})");
  CHECK_THROWS_AS(load_detections(p, DetectionFormat::json), ValidationError);
  CHECK_THROWS_AS(load_detections(scratch("missing.json"), DetectionFormat::json), ValidationError);
}

TEST_CASE("detection CSV validation names the row") {
  const std::string bad = "cx,cy,w,h,score,class_id\n0.5,0.5,0.1,0.1,0.9,0\n1.5,0.5,0.1,0.1,0.9,0\n";
  CHECK_THROWS_WITH_AS(parse_detections_csv(bad), doctest::Contains("row 3"), ValidationError);
  CHECK_THROWS_AS(parse_detections_csv("x,y\n"), ValidationError);
  CHECK_THROWS_AS(parse_detections_csv("cx,cy,w,h,score,class_id\n0.5,0.5,abc,0.1,0.9,0\n"), ValidationError);
  CHECK_THROWS_AS(parse_detections_csv("cx,cy,w,h,score,class_id\n0.5,0.5,0.1\n"), ValidationError);
}

TEST_CASE("detection files round-trip bit-exactly") {
  std::mt19937_64 rng(21);
  Frame f{3840, 2160, {}};
  for (int k = 0; k < 100; ++k) {
    auto b = oracle::random_box(rng);
    b.class_id = static_cast<int>(rng() % 3);
    f.detections.push_back(b);
  }
  for (auto fmt : {DetectionFormat::json, DetectionFormat::csv}) {
    const fs::path p = scratch(fmt == DetectionFormat::json ? "rt.json" : "rt.csv");
    CHECK(format_for_path(p) == fmt);
    save_detections(f, p, fmt);
    const Frame back = load_detections(p, fmt, 3840, 2160);
    CHECK(back.width_px == 3840);
    CHECK(back.detections == f.detections);
  }
}

TEST_CASE("tile_frame arrangement") {
  const Frame f{1000, 1000, {}};
  auto g = tile_frame(f, 1, 4);
  CHECK(g.rows == 2);
  CHECK(g.cols == 2);
  REQUIRE(g.tiles.size() == 4);
  CHECK(g.tiles[3].x0 == 0.5);
  CHECK(g.tiles[3].y1 == 1.0);

  g = tile_frame(f, 1, 1);
  REQUIRE(g.tiles.size() == 1);
  CHECK(g.tiles[0].width() == 1.0);
  CHECK(g.tiles[0].height() == 1.0);

  g = tile_frame(f, 2, 4);
  CHECK(g.rows == 2);
  CHECK(g.cols == 4);

  g = tile_frame(f, 1, 7);
  CHECK(g.rows == 1);
  CHECK(g.cols == 7);

  CHECK_THROWS_AS(tile_frame(f, 0, 4), ValidationError);
}

TEST_CASE("tiles cover the frame without overlap") {
  const Frame f{1000, 1000, {}};
  for (int n = 1; n <= 3; ++n) {
    for (int e = 1; e <= 6; ++e) {
      const auto g = tile_frame(f, n, e);
      REQUIRE(g.tiles.size() == static_cast<std::size_t>(n * e));
      double area = 0.0;
      for (const auto& t : g.tiles) area += t.width() * t.height();
      CHECK(area == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t a = 0; a < g.tiles.size(); ++a) {
        for (std::size_t b = a + 1; b < g.tiles.size(); ++b) {
          const double ix = std::min(g.tiles[a].x1, g.tiles[b].x1) - std::max(g.tiles[a].x0, g.tiles[b].x0);
          const double iy = std::min(g.tiles[a].y1, g.tiles[b].y1) - std::max(g.tiles[a].y0, g.tiles[b].y0);
          CHECK((ix <= 1e-12 || iy <= 1e-12));
        }
      }
    }
  }
}

TEST_CASE("aggregate_tiles remaps and suppresses duplicates") {
  const TileRect left{0.0, 0.0, 0.5, 1.0};
  const TileRect right{0.5, 0.0, 1.0, 1.0};

  std::vector<TileDetections> per{{left, {DetectionBox{0.5, 0.5, 0.2, 0.2, 0.9, 0}}},
                                  {right, {DetectionBox{0.5, 0.5, 0.2, 0.2, 0.8, 0}}}};
  auto out = aggregate_tiles(per, 0.5);
  REQUIRE(out.size() == 2);
  CHECK(out[0].cx == doctest::Approx(0.25));
  CHECK(out[0].w == doctest::Approx(0.1));
  CHECK(out[1].cx == doctest::Approx(0.75));

  // The same object seen from both sides of the seam.
  per = {{left, {DetectionBox{0.98, 0.5, 0.2, 0.1, 0.9, 0}}}, {right, {DetectionBox{0.0, 0.5, 0.16, 0.1, 0.7, 0}}}};
  out = aggregate_tiles(per, 0.5);
  CHECK(out.size() == 1);
  CHECK(out[0].score == 0.9);
}

TEST_CASE("aggregate_tiles equals remap then global NMS") {
  std::mt19937_64 rng(4);
  const Frame f{1000, 1000, {}};
  const auto grid = tile_frame(f, 1, 4);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<TileDetections> per;
    std::vector<DetectionBox> remapped;
    for (const auto& t : grid.tiles) {
      TileDetections td{t, {}};
      for (int k = 0; k < 6; ++k) {
        auto b = oracle::random_box(rng);
        b.w += 0.2;
        b.h += 0.2;
        b.cx = std::clamp(b.cx, b.w / 2, 1 - b.w / 2);
        b.cy = std::clamp(b.cy, b.h / 2, 1 - b.h / 2);
        td.boxes.push_back(b);
        DetectionBox g = b;
        g.cx = t.x0 + b.cx * t.width();
        g.cy = t.y0 + b.cy * t.height();
        g.w = b.w * t.width();
        g.h = b.h * t.height();
        remapped.push_back(g);
      }
      per.push_back(td);
    }
    const auto got = aggregate_tiles(per, 0.5);
    const auto want = oracle::naive_nms(remapped, 0.5);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].cx == doctest::Approx(want[i].cx).epsilon(1e-12));
      CHECK(got[i].cy == doctest::Approx(want[i].cy).epsilon(1e-12));
      CHECK(got[i].score == want[i].score);
      CHECK(got[i].left() >= -1e-12);
      CHECK(got[i].right() <= 1 + 1e-12);
    }
  }
}

TEST_CASE("coarse_detect without noise reproduces the scene") {
  SceneSpec s = one_stratum(30);
  s.seed = 2;
  const Frame f = generate_scene(s);
  const Frame c = coarse_detect(f, 1, 1, NoisyDetector{}, 0.5);
  CHECK(c.detections.size() <= f.detections.size());
  CHECK(c.width_px == f.width_px);

  NoisyDetector drop_all{0.999999, 0.0, 1};
  CHECK(coarse_detect(f, 1, 4, drop_all, 0.5).detections.size() < f.detections.size());

  NoisyDetector noisy{0.2, 0.1, 7};
  const Frame a = coarse_detect(f, 1, 4, noisy, 0.5);
  const Frame b = coarse_detect(f, 1, 4, noisy, 0.5);
  CHECK(a.detections == b.detections);
  for (const auto& d : a.detections) CHECK_NOTHROW(validate_box(d));
}
