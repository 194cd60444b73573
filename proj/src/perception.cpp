#include "vgh/perception.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "vgh/errors.hpp"
#include "vgh/raycast.hpp"
#include "vgh/rng.hpp"

namespace vgh {

using nlohmann::json;

void CameraSpec::validate() const {
  if (width <= 0 || height <= 0 || fx <= 0.0 || fy <= 0.0)
    raise(Errc::invalid_argument, "camera intrinsics must be positive");
}

Mat3 CameraSpec::world_rotation(const AgentPose& pose) const {
  double cy_ = std::cos(pose.yaw), sy = std::sin(pose.yaw);
  double cp = std::cos(pitch), sp = std::sin(pitch);
  Vec3 forward{cy_ * cp, sy * cp, -sp};
  Vec3 right{sy, -cy_, 0.0};
  Vec3 down = forward.cross(right);
  return Mat3::from_rows(right, down, forward);
}

Vec3 CameraSpec::eye_position(const AgentPose& pose) const {
  return {pose.position.x, pose.position.y, eye_height};
}

Vec3 CameraSpec::pixel_ray(int u, int v, const AgentPose& pose) const {
  Vec3 cam_dir{(u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1.0};
  return (world_rotation(pose).transposed() * cam_dir).normalized();
}

CameraSpec::Projection CameraSpec::project(const Vec3& world_point,
                                           const AgentPose& pose) const {
  Vec3 q = world_rotation(pose) * (world_point - eye_position(pose));
  Projection pr;
  pr.z = q.z;
  pr.range = q.norm();
  if (q.z <= 1e-9) return pr;
  pr.u = fx * q.x / q.z + cx;
  pr.v = fy * q.y / q.z + cy;
  pr.in_front = true;
  return pr;
}

namespace {

struct CapsuleHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal;
};

/// Nearest intersection of a unit-direction ray with the capsule of radius r
/// around segment [a, b].
CapsuleHit ray_capsule(const Vec3& o, const Vec3& n, const Vec3& a, const Vec3& b, double r) {
  CapsuleHit hit;
  Vec3 d = b - a;
  double dd = d.squared_norm();
  Vec3 m = o - a;

  auto try_accept = [&](double t) {
    if (t <= 1e-9 || t >= hit.t) return;
    Vec3 p = o + n * t;
    double s = dd > 0.0 ? std::clamp((p - a).dot(d) / dd, 0.0, 1.0) : 0.0;
    Vec3 axis_pt = a + d * s;
    hit.t = t;
    hit.normal = (p - axis_pt) * (1.0 / r);
  };

  if (dd > 0.0) {
    double nd = n.dot(d), md = m.dot(d);
    double A = n.squared_norm() - nd * nd / dd;
    double B = m.dot(n) - md * nd / dd;
    double C = m.squared_norm() - md * md / dd - r * r;
    if (A > 1e-12) {
      double disc = B * B - A * C;
      if (disc >= 0.0) {
        double root = std::sqrt(disc);
        for (double t : {(-B - root) / A, (-B + root) / A}) {
          if (t <= 1e-9) continue;
          double s = (md + t * nd) / dd;
          if (s >= 0.0 && s <= 1.0) try_accept(t);
        }
      }
    }
  }
  for (const Vec3& center : {a, b}) {
    Vec3 mc = o - center;
    double B = mc.dot(n);
    double C = mc.squared_norm() - r * r;
    double disc = B * B - C;
    if (disc < 0.0) continue;
    double root = std::sqrt(disc);
    try_accept(-B - root);
    try_accept(-B + root);
  }
  return hit;
}

Rgb shade(Rgb base, const Vec3& normal) {
  Vec3 light = Vec3{0.35, 0.25, 0.9}.normalized();
  double lambert = 0.55 + 0.45 * std::abs(normal.dot(light));
  auto mul = [&](uint8_t c) { return static_cast<uint8_t>(std::min(255.0, c * lambert)); };
  return {mul(base[0]), mul(base[1]), mul(base[2])};
}

Rgb face_base_color(int face, const Vec3& normal) {
  if (normal.z > 0.9 || normal.z < -0.9) return {168, 172, 162};  // floor-like
  static const Rgb palette[6] = {{188, 142, 96},  {132, 150, 186}, {170, 120, 130},
                                 {120, 168, 140}, {176, 164, 110}, {140, 136, 170}};
  return palette[static_cast<size_t>(face) % 6];
}

Rgb human_color(int id) {
  static const Rgb palette[4] = {{210, 84, 64}, {196, 70, 110}, {222, 120, 60}, {180, 60, 80}};
  return palette[static_cast<size_t>(id < 0 ? 0 : id) % 4];
}

constexpr Rgb kSky = {171, 205, 233};

}  // namespace

EgoObservation render_ego(const MeshBvh& bvh, const std::vector<HumanObstacle>& humans,
                          const AgentPose& pose, const CameraSpec& cam) {
  cam.validate();
  EgoObservation obs;
  obs.width = cam.width;
  obs.height = cam.height;
  size_t npx = static_cast<size_t>(cam.width) * static_cast<size_t>(cam.height);
  obs.color.assign(npx, kSky);
  obs.depth.assign(npx, std::numeric_limits<double>::infinity());
  obs.normal.assign(npx, Vec3{0, 0, 0});
  obs.hit_face.assign(npx, -1);
  obs.human_id.assign(npx, -1);

  Vec3 eye = cam.eye_position(pose);
  const TriMesh* mesh = bvh.empty() ? nullptr : &bvh.mesh();

  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      Vec3 dir = cam.pixel_ray(u, v, pose);
      size_t px = obs.at(u, v);

      RayHit mesh_hit;
      if (mesh) mesh_hit = bvh.raycast(eye, dir);

      CapsuleHit body_hit;
      int body_id = -1;
      for (const HumanObstacle& h : humans) {
        double r = h.shape.radius;
        Vec3 base{h.position.x, h.position.y, 0.0};
        CapsuleHit ch = ray_capsule(eye, dir, base + Vec3{0, 0, r},
                                    base + Vec3{0, 0, h.shape.height - r}, r);
        if (ch.t < body_hit.t) {
          body_hit = ch;
          body_id = h.id;
        }
      }

      if (body_id >= 0 && body_hit.t < mesh_hit.t) {
        obs.depth[px] = body_hit.t;
        obs.normal[px] = body_hit.normal;
        obs.human_id[px] = body_id;
        obs.color[px] = shade(human_color(body_id), body_hit.normal);
      } else if (mesh_hit.valid()) {
        Vec3 n = mesh->face_normal(static_cast<size_t>(mesh_hit.face));
        obs.depth[px] = mesh_hit.t;
        obs.normal[px] = n;
        obs.hit_face[px] = mesh_hit.face;
        obs.color[px] = shade(face_base_color(mesh_hit.face, n), n);
      }
    }
  }
  obs.traversable = traversable_mask(obs);
  // Walkable ground must also lie on the support plane; a flat obstacle top
  // passes the slope test but is not ground. 0.1 m matches the occupancy
  // slab floor.
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      size_t px = obs.at(u, v);
      if (!obs.traversable[px]) continue;
      double hit_z = eye.z + cam.pixel_ray(u, v, pose).z * obs.depth[px];
      if (hit_z > 0.1) obs.traversable[px] = 0;
    }
  }
  return obs;
}

std::vector<uint8_t> traversable_mask(const EgoObservation& obs, double max_slope_deg) {
  double cos_min = std::cos(deg2rad(max_slope_deg));
  std::vector<uint8_t> mask(obs.depth.size(), 0);
  for (size_t px = 0; px < mask.size(); ++px) {
    if (obs.hit_face[px] < 0 || !std::isfinite(obs.depth[px])) continue;
    // Slope test on the unsigned normal, so winding does not matter.
    if (std::abs(obs.normal[px].z) > cos_min) mask[px] = 1;
  }
  return mask;
}

namespace {

std::vector<Vec3> box_surface_samples(const Aabb& box, int per_axis) {
  std::vector<Vec3> pts;
  Vec3 lo = box.min, hi = box.max;
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  for (int i = 0; i < per_axis; ++i) {
    double ti = (i + 0.5) / per_axis;
    for (int j = 0; j < per_axis; ++j) {
      double tj = (j + 0.5) / per_axis;
      pts.push_back({lo.x, lerp(lo.y, hi.y, ti), lerp(lo.z, hi.z, tj)});
      pts.push_back({hi.x, lerp(lo.y, hi.y, ti), lerp(lo.z, hi.z, tj)});
      pts.push_back({lerp(lo.x, hi.x, ti), lo.y, lerp(lo.z, hi.z, tj)});
      pts.push_back({lerp(lo.x, hi.x, ti), hi.y, lerp(lo.z, hi.z, tj)});
      pts.push_back({lerp(lo.x, hi.x, ti), lerp(lo.y, hi.y, tj), lo.z});
      pts.push_back({lerp(lo.x, hi.x, ti), lerp(lo.y, hi.y, tj), hi.z});
    }
  }
  return pts;
}

/// True when the projected sample is inside the frame and nothing renders
/// strictly in front of it (1 cm slack absorbs same-surface float noise).
bool sample_visible(const EgoObservation& obs, const CameraSpec::Projection& pr) {
  if (!pr.in_front) return false;
  int u = static_cast<int>(std::floor(pr.u));
  int v = static_cast<int>(std::floor(pr.v));
  if (u < 0 || u >= obs.width || v < 0 || v >= obs.height) return false;
  return obs.depth[obs.at(u, v)] >= pr.range - 0.01;
}

DetectionBox clamp_box(double min_u, double min_v, double max_u, double max_v, int w, int h) {
  DetectionBox box;
  box.x0 = std::clamp(static_cast<int>(std::floor(min_u)), 0, w - 1);
  box.y0 = std::clamp(static_cast<int>(std::floor(min_v)), 0, h - 1);
  box.x1 = std::clamp(static_cast<int>(std::ceil(max_u)), 0, w - 1);
  box.y1 = std::clamp(static_cast<int>(std::ceil(max_v)), 0, h - 1);
  return box;
}

}  // namespace

std::optional<DetectionBox> detect_goal(const EgoObservation& obs, const Landmark& lm,
                                        const AgentPose& pose, const CameraSpec& cam,
                                        double min_vis, double miss_rate, uint64_t step_seed) {
  if (miss_rate > 0.0) {
    Rng rng(Rng::mix(step_seed, 0x6d697373));
    if (rng.next_double() < miss_rate) return std::nullopt;
  }

  std::vector<Vec3> samples = box_surface_samples(lm.aabb, 4);
  int visible = 0;
  double min_u = 1e30, min_v = 1e30, max_u = -1e30, max_v = -1e30;
  for (const Vec3& p : samples) {
    auto pr = cam.project(p, pose);
    if (!sample_visible(obs, pr)) continue;
    ++visible;
    min_u = std::min(min_u, pr.u);
    min_v = std::min(min_v, pr.v);
    max_u = std::max(max_u, pr.u);
    max_v = std::max(max_v, pr.v);
  }
  if (visible < min_vis * static_cast<double>(samples.size())) return std::nullopt;

  // Extend the box with in-front corner projections so it hulls the full
  // silhouette, not only the visible samples.
  Vec3 lo = lm.aabb.min, hi = lm.aabb.max;
  for (int mask = 0; mask < 8; ++mask) {
    Vec3 corner{(mask & 1) ? hi.x : lo.x, (mask & 2) ? hi.y : lo.y, (mask & 4) ? hi.z : lo.z};
    auto pr = cam.project(corner, pose);
    if (!pr.in_front) continue;
    min_u = std::min(min_u, pr.u);
    min_v = std::min(min_v, pr.v);
    max_u = std::max(max_u, pr.u);
    max_v = std::max(max_v, pr.v);
  }
  DetectionBox box = clamp_box(min_u, min_v, max_u, max_v, obs.width, obs.height);
  box.label = "GOAL";
  return box;
}

std::vector<DetectionBox> detect_humans(const EgoObservation& obs,
                                        const std::vector<HumanObstacle>& humans,
                                        double min_vis) {
  size_t npx = obs.depth.size();
  size_t min_pixels = static_cast<size_t>(min_vis * static_cast<double>(npx)) + 1;

  std::vector<DetectionBox> boxes;
  for (const HumanObstacle& h : humans) {
    size_t count = 0;
    int x0 = obs.width, y0 = obs.height, x1 = -1, y1 = -1;
    for (int v = 0; v < obs.height; ++v)
      for (int u = 0; u < obs.width; ++u) {
        if (obs.human_id[obs.at(u, v)] != h.id) continue;
        ++count;
        x0 = std::min(x0, u);
        y0 = std::min(y0, v);
        x1 = std::max(x1, u);
        y1 = std::max(y1, v);
      }
    if (count < min_pixels) continue;
    DetectionBox box;
    box.x0 = x0;
    box.y0 = y0;
    box.x1 = x1;
    box.y1 = y1;
    box.label = "HUMAN";
    box.agent_id = h.id;
    boxes.push_back(box);
  }
  return boxes;
}

Vec3 backproject(double u, double v, double depth, const CameraSpec& cam,
                 const AgentPose& pose) {
  if (!std::isfinite(depth) || depth <= 0.0)
    raise(Errc::invalid_depth, "backproject requires finite positive depth");
  Vec3 cam_dir{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
  Vec3 dir = (cam.world_rotation(pose).transposed() * cam_dir).normalized();
  return cam.eye_position(pose) + dir * depth;
}

namespace {

void draw_labeled_box(Image& img, const DetectionBox& box, Rgb color) {
  draw_rect(img, box.x0, box.y0, box.x1, box.y1, color, 2);
  int scale = 2;
  int ty = box.y0 - 7 * scale - 3;
  if (ty < 0) ty = box.y0 + 3;
  int tx = std::max(0, std::min(box.x0, img.width - text_width(box.label, scale)));
  draw_text(img, tx + 1, ty + 1, box.label, {0, 0, 0}, scale);
  draw_text(img, tx, ty, box.label, color, scale);
}

}  // namespace

Image compose_prompt_image(const EgoObservation& obs, const std::vector<ArrowOverlay>& arrows,
                           const std::optional<DetectionBox>& goal_box,
                           const std::vector<DetectionBox>& human_boxes) {
  Image img(obs.width, obs.height);
  for (int v = 0; v < obs.height; ++v)
    for (int u = 0; u < obs.width; ++u) img.set(u, v, obs.color[obs.at(u, v)]);

  int anchor_x = obs.width / 2;
  int anchor_y = obs.height - 6;
  const Rgb arrow_color = {255, 221, 51};
  for (const ArrowOverlay& a : arrows) {
    draw_arrow(img, anchor_x, anchor_y, a.u, a.v, arrow_color, 2);
    std::string num = std::to_string(a.index);
    int scale = 2;
    int tx = std::clamp(a.u - text_width(num, scale) / 2, 0, obs.width - text_width(num, scale));
    int ty = std::clamp(a.v - 7 * scale - 4, 0, obs.height - 7 * scale);
    draw_text(img, tx + 1, ty + 1, num, {0, 0, 0}, scale);
    draw_text(img, tx, ty, num, arrow_color, scale);
  }
  if (goal_box) draw_labeled_box(img, *goal_box, {38, 230, 76});
  for (const DetectionBox& hb : human_boxes) draw_labeled_box(img, hb, {236, 48, 41});
  return img;
}

namespace {

void write_bytes(const std::string& path, const void* data, size_t bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::io_failure, "cannot write " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

}  // namespace

void save_observation(const EgoObservation& obs, const CameraSpec& cam,
                      const std::string& prefix) {
  size_t npx = obs.depth.size();
  std::vector<uint8_t> color_flat(npx * 3);
  for (size_t i = 0; i < npx; ++i)
    for (int c = 0; c < 3; ++c) color_flat[i * 3 + static_cast<size_t>(c)] = obs.color[i][c];
  std::vector<double> normal_flat(npx * 3);
  for (size_t i = 0; i < npx; ++i) {
    normal_flat[i * 3 + 0] = obs.normal[i].x;
    normal_flat[i * 3 + 1] = obs.normal[i].y;
    normal_flat[i * 3 + 2] = obs.normal[i].z;
  }

  write_bytes(prefix + ".color.bin", color_flat.data(), color_flat.size());
  write_bytes(prefix + ".depth.bin", obs.depth.data(), npx * sizeof(double));
  write_bytes(prefix + ".normal.bin", normal_flat.data(), normal_flat.size() * sizeof(double));
  write_bytes(prefix + ".traversable.bin", obs.traversable.data(), npx);

  json sidecar;
  sidecar["camera"] = {{"width", cam.width},   {"height", cam.height}, {"fx", cam.fx},
                       {"fy", cam.fy},         {"cx", cam.cx},         {"cy", cam.cy},
                       {"eye_height", cam.eye_height}, {"pitch", cam.pitch}};
  sidecar["arrays"] = {
      {"color", {{"file", prefix + ".color.bin"}, {"shape", {obs.height, obs.width, 3}}, {"dtype", "uint8"}}},
      {"depth", {{"file", prefix + ".depth.bin"}, {"shape", {obs.height, obs.width}}, {"dtype", "float64"}}},
      {"normal", {{"file", prefix + ".normal.bin"}, {"shape", {obs.height, obs.width, 3}}, {"dtype", "float64"}}},
      {"traversable", {{"file", prefix + ".traversable.bin"}, {"shape", {obs.height, obs.width}}, {"dtype", "uint8"}}}};
  std::ofstream out(prefix + ".json");
  if (!out) raise(Errc::io_failure, "cannot write " + prefix + ".json");
  out << sidecar.dump(2) << "\n";
}

}  // namespace vgh
