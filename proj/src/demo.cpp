#include "vgh/demo.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vgh/benchmark.hpp"
#include "vgh/errors.hpp"
#include "vgh/rng.hpp"

namespace vgh {

using nlohmann::json;

namespace {

constexpr double kHalf = 12.0;       // courtyard half-extent
constexpr double kFenceThick = 0.2;
constexpr double kFenceHeight = 1.0;

struct DemoBox {
  const char* id;
  const char* label;
  const char* description;
  double x, y, sx, sy, h;
};

const DemoBox kBoxes[] = {
    {"crate_red", "red crate", "A bright red shipping crate with stenciled lettering.",
     -8.0, -8.0, 1.0, 1.0, 1.0},
    {"bin_blue", "blue bin", "A squat blue recycling bin with a hinged lid.",
     0.5, -8.5, 0.8, 0.8, 0.9},
    {"kiosk_green", "green kiosk", "A small green ticket kiosk with a shuttered window.",
     8.0, -8.0, 1.2, 1.0, 1.1},
    {"bench_oak", "oak bench", "A low oak storage bench with iron handles.",
     -8.5, -0.5, 1.2, 0.8, 0.9},
    {"fountain_stone", "stone fountain", "A square stone fountain base, drained and capped.",
     0.0, 0.0, 1.2, 1.2, 0.8},
    {"cart_yellow", "yellow cart", "A yellow utility cart loaded with folded tarps.",
     8.5, 0.5, 1.0, 0.8, 1.0},
    {"planter_ivy", "ivy planter", "A concrete planter overflowing with ivy.",
     -8.0, 8.0, 0.9, 0.9, 1.0},
    {"statue_bronze", "bronze statue", "A bronze statue of a seated fox on a plinth.",
     0.5, 8.5, 0.8, 0.8, 1.1},
    {"booth_white", "white booth", "A white information booth with a striped awning.",
     8.0, 8.0, 1.2, 1.2, 1.0},
    {"pillar_gray", "gray pillar", "A gray stone pillar section lying on its base.",
     -4.0, 4.0, 0.9, 1.2, 0.9},
    {"locker_navy", "navy locker", "A navy blue storage locker with a combination dial.",
     4.5, -4.0, 0.8, 1.0, 1.1},
    {"shelf_teal", "teal shelf", "A teal metal shelf unit wrapped in plastic.",
     4.0, 4.5, 1.0, 1.2, 1.0},
};

TriMesh fence_or_box(double x, double y, double sx, double sy, double h, double yaw = 0.0) {
  ObstacleInstance o;
  o.kind = "box";
  o.position = {x, y};
  o.size_x = sx;
  o.size_y = sy;
  o.height = h;
  o.yaw = yaw;
  return obstacle_mesh(o);
}

}  // namespace

TriMesh demo_world_mesh() {
  TriMesh mesh;
  mesh.vertices = {{-kHalf, -kHalf, 0.0},
                   {kHalf, -kHalf, 0.0},
                   {kHalf, kHalf, 0.0},
                   {-kHalf, kHalf, 0.0}};
  mesh.faces = {{0, 1, 2}, {0, 2, 3}};

  double inset = kHalf - 0.5 * kFenceThick;
  mesh.append(fence_or_box(0.0, inset, 2.0 * kHalf, kFenceThick, kFenceHeight));
  mesh.append(fence_or_box(0.0, -inset, 2.0 * kHalf, kFenceThick, kFenceHeight));
  mesh.append(fence_or_box(inset, 0.0, kFenceThick, 2.0 * kHalf - 2.0 * kFenceThick,
                           kFenceHeight));
  mesh.append(fence_or_box(-inset, 0.0, kFenceThick, 2.0 * kHalf - 2.0 * kFenceThick,
                           kFenceHeight));

  for (const DemoBox& b : kBoxes) mesh.append(fence_or_box(b.x, b.y, b.sx, b.sy, b.h));
  return mesh;
}

std::vector<Landmark> demo_world_landmarks() {
  std::vector<Landmark> out;
  for (const DemoBox& b : kBoxes) {
    Landmark lm;
    lm.id = b.id;
    lm.label = b.label;
    lm.description = b.description;
    lm.aabb = {{b.x - 0.5 * b.sx, b.y - 0.5 * b.sy, 0.0},
               {b.x + 0.5 * b.sx, b.y + 0.5 * b.sy, b.h}};
    out.push_back(std::move(lm));
  }
  return out;
}

GridParams demo_grid_params() { return GridParams{}; }

WorldModel make_demo_world() {
  TriMesh mesh = demo_world_mesh();
  GridParams params = demo_grid_params();
  OccupancyGrid grid = build_occupancy_grid(mesh, params);
  return WorldModel(std::move(mesh), GroundFrame{}, std::move(grid), demo_world_landmarks(),
                    params);
}

void write_world_bundle(const WorldModel& world, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_obj(world.mesh(), dir + "/mesh.obj");
  save_landmarks(world.landmarks(), dir + "/landmarks.json");

  const GroundFrame& fr = world.frame();
  const GridParams& gp = world.grid_params();
  const OccupancyGrid& grid = world.grid();
  json j;
  j["frame"]["rotation"] = fr.rotation.m;
  j["frame"]["translation"] = {fr.translation.x, fr.translation.y, fr.translation.z};
  j["grid_params"] = {{"resolution", gp.resolution},
                      {"min_height", gp.min_height},
                      {"max_height", gp.max_height},
                      {"padding", gp.padding}};
  j["grid"] = {{"origin", {grid.origin.x, grid.origin.y}},
               {"nx", grid.nx},
               {"ny", grid.ny},
               {"blocked", grid.blocked_count()}};
  std::ofstream out(dir + "/world.json");
  if (!out) raise(Errc::io_failure, "cannot write " + dir + "/world.json");
  out << j.dump(2) << "\n";
}

WorldModel load_world_bundle(const std::string& dir) {
  std::ifstream in(dir + "/world.json");
  if (!in) raise(Errc::io_failure, "cannot read " + dir + "/world.json");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    raise(Errc::parse_failure, dir + "/world.json: " + e.what());
  }

  GroundFrame frame;
  GridParams params;
  try {
    const json& r = j.at("frame").at("rotation");
    for (size_t i = 0; i < 9; ++i) frame.rotation.m[i] = r.at(i).get<double>();
    const json& t = j.at("frame").at("translation");
    frame.translation = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
    const json& g = j.at("grid_params");
    params.resolution = g.at("resolution").get<double>();
    params.min_height = g.at("min_height").get<double>();
    params.max_height = g.at("max_height").get<double>();
    params.padding = g.at("padding").get<double>();
  } catch (const json::exception& e) {
    raise(Errc::parse_failure, dir + "/world.json: " + e.what());
  }

  TriMesh mesh = load_obj(dir + "/mesh.obj");
  std::vector<Landmark> landmarks = load_landmarks(dir + "/landmarks.json");
  OccupancyGrid grid = build_occupancy_grid(mesh, params);
  return WorldModel(std::move(mesh), frame, std::move(grid), std::move(landmarks), params);
}

namespace {

// Fixture geometry. Five feature-coded blobs on a ring. A two-shell arc of
// wall splats wraps the first blob on its camera-facing side: the inner
// shell is nearly opaque and swallows the blob outright, while the outer
// veil stays below the occlusion alpha threshold, so masked supervision
// still admits pixels whose rendered targets are heavily contaminated. The
// open back side only offers distant views whose visible pixel counts fall
// under the view-selection threshold, which is exactly the regime that
// separates the three training policies.
constexpr int kObjects = 5;
constexpr int kSplatsPerObject = 20;
constexpr double kObjectRing = 2.0;
constexpr double kObjectZ = 0.5;
constexpr double kBlobRadius = 0.42;
constexpr int kViews = 20;
constexpr double kCameraRing = 5.0;
constexpr double kCameraZ = 1.5;
constexpr int kFeatureDim = 8;

// Arc wall around the first blob, azimuth measured from the +x axis.
constexpr double kArcHalfSpanDeg = 150.0;
constexpr double kSolidRadius = 0.55;
constexpr double kSolidZ1 = 0.85;
constexpr double kSolidOpacity = 0.9;
constexpr double kSolidSigma = 0.13;
constexpr double kSolidSpacing = 0.20;
constexpr double kVeilRadius = 0.8;
constexpr double kVeilZ1 = 1.45;
constexpr double kVeilOpacity = 0.05;
constexpr double kVeilSigma = 0.18;
constexpr double kVeilSpacing = 0.30;

Vec3 in_unit_ball(Rng& rng) {
  for (;;) {
    Vec3 p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    if (p.squared_norm() <= 1.0) return p;
  }
}

}  // namespace

SemanticFixture make_semantic_fixture() {
  SemanticFixture fx;
  fx.scene.feature_dim = kFeatureDim;

  const Rgb palette[kObjects] = {
      {220, 60, 60}, {60, 180, 75}, {65, 105, 225}, {235, 200, 50}, {190, 80, 190}};

  Rng rng(0x5ca77e5);
  // Feature codes are separated axes so the trained field starts and stays
  // linearly separable; the pipeline seed then only drives tie-breaking.
  auto coded_feature = [&](int axis) {
    std::vector<double> f(kFeatureDim, 0.0);
    f[static_cast<size_t>(axis)] = 1.0;
    for (double& v : f) v += rng.uniform(-0.03, 0.03);
    return f;
  };

  for (int k = 0; k < kObjects; ++k) {
    double a = 2.0 * kPi * k / kObjects;
    Vec3 center{kObjectRing * std::cos(a), kObjectRing * std::sin(a), kObjectZ};
    for (int i = 0; i < kSplatsPerObject; ++i) {
      Splat s;
      Vec3 off = in_unit_ball(rng);
      s.center = {center.x + kBlobRadius * off.x, center.y + kBlobRadius * off.y,
                  center.z + kBlobRadius * off.z};
      s.radius = 0.15;
      s.opacity = 0.85;
      s.color = palette[k];
      s.feature = coded_feature(k);
      s.gt_instance = k;
      fx.scene.splats.push_back(std::move(s));
    }
  }

  const Vec3 hub{kObjectRing, 0.0, 0.0};
  auto add_arc = [&](double radius, double z1, double opacity, double sigma, double spacing) {
    double half_span = kArcHalfSpanDeg * kPi / 180.0;
    int cols = static_cast<int>(std::floor(2.0 * half_span * radius / spacing)) + 1;
    for (int c = 0; c < cols; ++c) {
      double az = -half_span + spacing * c / radius;
      for (double z = 0.05; z <= z1; z += spacing) {
        Splat s;
        s.center = {hub.x + radius * std::cos(az), hub.y + radius * std::sin(az), z};
        s.radius = sigma;
        s.opacity = opacity;
        s.color = {140, 140, 140};
        s.feature = coded_feature(kObjects);
        s.gt_instance = -1;
        fx.scene.splats.push_back(std::move(s));
      }
    }
  };
  add_arc(kSolidRadius, kSolidZ1, kSolidOpacity, kSolidSigma, kSolidSpacing);
  add_arc(kVeilRadius, kVeilZ1, kVeilOpacity, kVeilSigma, kVeilSpacing);
  fx.scene.validate();

  for (int v = 0; v < kViews; ++v) {
    double a = 2.0 * kPi * v / kViews;
    Vec3 eye{kCameraRing * std::cos(a), kCameraRing * std::sin(a), kCameraZ};
    fx.views.push_back(SplatCamera::look_at(eye, {0.0, 0.0, kObjectZ}, 60.0, 60.0, 64, 48));
  }

  // Ideal per-view masks for the generating groups, wall included as its own
  // group so its features are pushed away from every object's.
  SplatScene grouped = fx.scene;
  std::vector<int> group_ids;
  for (int k = 0; k < kObjects; ++k) group_ids.push_back(k);
  group_ids.push_back(kObjects);
  for (Splat& s : grouped.splats)
    if (s.gt_instance < 0) s.gt_instance = kObjects;
  for (const SplatCamera& cam : fx.views)
    fx.masks.push_back(gt_instance_masks(grouped, cam, group_ids));

  return fx;
}

PipelineConfig fixture_pipeline_config() {
  PipelineConfig cfg;
  cfg.stage1.iterations = 120;
  cfg.stage1.learning_rate = 5e-3;
  cfg.k1 = 6;  // five objects plus the wall
  cfg.k2 = 2;
  cfg.kmeans_iters = 100;
  cfg.delta_vis = 80;
  // The wall arc spans metres while the feature codes are clearly separated,
  // so the position term only tie-breaks; a heavier weight would make the
  // arc's spatial spread worth splitting before the blobs are separated.
  cfg.pos_weight = 0.2;
  return cfg;
}

void save_masks(const std::vector<std::vector<Mask>>& masks, int width, int height,
                const std::string& path) {
  size_t npx = static_cast<size_t>(width) * static_cast<size_t>(height);
  json views = json::array();
  for (const auto& stack : masks) {
    json per_view = json::array();
    for (const Mask& m : stack) {
      if (m.size() != npx) raise(Errc::shape_mismatch, "mask does not match the raster");
      // Run lengths of alternating values, starting with zeros.
      json runs = json::array();
      uint8_t value = 0;
      size_t len = 0;
      for (size_t i = 0; i < npx; ++i) {
        uint8_t bit = m[i] ? 1 : 0;
        if (bit == value) {
          ++len;
        } else {
          runs.push_back(len);
          value = bit;
          len = 1;
        }
      }
      runs.push_back(len);
      per_view.push_back(std::move(runs));
    }
    views.push_back(std::move(per_view));
  }
  json j;
  j["width"] = width;
  j["height"] = height;
  j["views"] = std::move(views);
  std::ofstream out(path);
  if (!out) raise(Errc::io_failure, "cannot write " + path);
  out << j.dump() << "\n";
}

std::vector<std::vector<Mask>> load_masks(const std::string& path, int* width, int* height) {
  std::ifstream in(path);
  if (!in) raise(Errc::io_failure, "cannot read " + path);
  json j;
  try {
    in >> j;
    int w = j.at("width").get<int>();
    int h = j.at("height").get<int>();
    if (w <= 0 || h <= 0) raise(Errc::parse_failure, path + ": bad raster shape");
    size_t npx = static_cast<size_t>(w) * static_cast<size_t>(h);
    std::vector<std::vector<Mask>> out;
    for (const json& stack : j.at("views")) {
      std::vector<Mask> per_view;
      for (const json& runs : stack) {
        Mask m;
        m.reserve(npx);
        uint8_t value = 0;
        for (const json& r : runs) {
          size_t len = r.get<size_t>();
          m.insert(m.end(), len, value);
          value = value ? 0 : 1;
        }
        if (m.size() != npx) raise(Errc::parse_failure, path + ": run lengths mismatch raster");
        per_view.push_back(std::move(m));
      }
      out.push_back(std::move(per_view));
    }
    if (width) *width = w;
    if (height) *height = h;
    return out;
  } catch (const json::exception& e) {
    raise(Errc::parse_failure, path + ": " + e.what());
  }
}

void write_fixture_bundle(const SemanticFixture& fixture, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_splat_scene(fixture.scene, dir + "/splats.json");
  save_cameras(fixture.views, dir + "/cameras.json");
  int w = fixture.views.empty() ? 0 : fixture.views.front().width;
  int h = fixture.views.empty() ? 0 : fixture.views.front().height;
  save_masks(fixture.masks, w, h, dir + "/masks.json");
}

}  // namespace vgh
