#include "vgh/splats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vgh/errors.hpp"

namespace vgh {

using nlohmann::json;

void SplatScene::validate() const {
  if (splats.empty()) raise(Errc::empty_scene, "splat scene is empty");
  for (size_t i = 0; i < splats.size(); ++i) {
    const Splat& s = splats[i];
    if (static_cast<int>(s.feature.size()) != feature_dim)
      raise(Errc::shape_mismatch, "splat " + std::to_string(i) + " feature dim mismatch");
    if (!(s.radius > 0.0))
      raise(Errc::invalid_argument, "splat " + std::to_string(i) + " has non-positive radius");
    if (!(s.opacity > 0.0 && s.opacity < 1.0))
      raise(Errc::invalid_argument, "splat " + std::to_string(i) + " opacity outside (0,1)");
  }
}

SplatCamera SplatCamera::look_at(const Vec3& eye, const Vec3& target, double fx, double fy, int w,
                                 int h) {
  Vec3 forward = (target - eye).normalized();
  Vec3 up{0, 0, 1};
  if (std::abs(forward.dot(up)) > 0.999) up = Vec3{0, 1, 0};
  Vec3 right = forward.cross(up).normalized();
  Vec3 down = forward.cross(right);
  SplatCamera cam;
  cam.rotation = Mat3::from_rows(right, down, forward);
  cam.translation = -(cam.rotation * eye);
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = 0.5 * w;
  cam.cy = 0.5 * h;
  cam.width = w;
  cam.height = h;
  return cam;
}

namespace {

struct Projected {
  int splat;
  double z;
  double u, v;
  double sigma_px;
};

std::vector<Projected> project_sorted(const SplatScene& scene, const std::vector<int>* subset,
                                      const SplatCamera& cam) {
  std::vector<Projected> out;
  auto add = [&](int idx) {
    const Splat& s = scene.splats[static_cast<size_t>(idx)];
    Vec3 p = cam.to_camera(s.center);
    if (p.z <= 1e-9) return;
    Projected pr;
    pr.splat = idx;
    pr.z = p.z;
    pr.u = cam.fx * p.x / p.z + cam.cx;
    pr.v = cam.fy * p.y / p.z + cam.cy;
    pr.sigma_px = s.radius * cam.fx / p.z;
    out.push_back(pr);
  };
  if (subset != nullptr) {
    for (int idx : *subset) {
      if (idx < 0 || idx >= static_cast<int>(scene.splats.size()))
        raise(Errc::unknown_cluster, "splat index out of range: " + std::to_string(idx));
      add(idx);
    }
  } else {
    for (int idx = 0; idx < static_cast<int>(scene.splats.size()); ++idx) add(idx);
  }
  std::sort(out.begin(), out.end(), [](const Projected& a, const Projected& b) {
    return a.z != b.z ? a.z < b.z : a.splat < b.splat;
  });
  return out;
}

}  // namespace

std::vector<std::vector<SplatWeight>> render_weights(const SplatScene& scene,
                                                     const SplatCamera& cam,
                                                     const std::vector<int>* subset,
                                                     double cutoff_sigmas) {
  scene.validate();
  const int w = cam.width, h = cam.height;
  std::vector<std::vector<SplatWeight>> weights(static_cast<size_t>(w) * static_cast<size_t>(h));
  std::vector<double> transmit(static_cast<size_t>(w) * static_cast<size_t>(h), 1.0);

  for (const Projected& pr : project_sorted(scene, subset, cam)) {
    const Splat& s = scene.splats[static_cast<size_t>(pr.splat)];
    double reach = cutoff_sigmas * pr.sigma_px;
    int x0 = std::max(0, static_cast<int>(std::ceil(pr.u - reach)));
    int x1 = std::min(w - 1, static_cast<int>(std::floor(pr.u + reach)));
    int y0 = std::max(0, static_cast<int>(std::ceil(pr.v - reach)));
    int y1 = std::min(h - 1, static_cast<int>(std::floor(pr.v + reach)));
    double inv_two_sigma2 = 1.0 / (2.0 * pr.sigma_px * pr.sigma_px);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double du = x - pr.u;
        double dv = y - pr.v;
        double alpha = s.opacity * std::exp(-(du * du + dv * dv) * inv_two_sigma2);
        size_t px = static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x);
        double weight = transmit[px] * alpha;
        weights[px].push_back({pr.splat, weight});
        transmit[px] *= 1.0 - alpha;
      }
  }
  return weights;
}

namespace {

FeatureMap apply_weights(const SplatScene& scene, const SplatCamera& cam,
                         const std::vector<std::vector<SplatWeight>>& weights,
                         const std::vector<int>* subset,
                         const std::vector<std::vector<double>>* features_override) {
  FeatureMap map(cam.width, cam.height, scene.feature_dim);
  // Camera-space depth per splat for the depth blend.
  std::vector<double> zdepth(scene.splats.size(), 0.0);
  for (size_t i = 0; i < scene.splats.size(); ++i)
    zdepth[i] = cam.to_camera(scene.splats[i].center).z;
  // Map splat index -> override row when a subset override is given.
  std::vector<int> override_row;
  if (features_override != nullptr) {
    override_row.assign(scene.splats.size(), -1);
    if (subset != nullptr) {
      for (size_t k = 0; k < subset->size(); ++k)
        override_row[static_cast<size_t>((*subset)[k])] = static_cast<int>(k);
    } else {
      for (size_t k = 0; k < scene.splats.size(); ++k) override_row[k] = static_cast<int>(k);
    }
  }

  const int C = scene.feature_dim;
  for (size_t px = 0; px < weights.size(); ++px) {
    double* f = map.features.data() + px * static_cast<size_t>(C);
    for (const SplatWeight& sw : weights[px]) {
      size_t si = static_cast<size_t>(sw.splat);
      const double* src;
      if (features_override != nullptr) {
        src = (*features_override)[static_cast<size_t>(override_row[si])].data();
      } else {
        src = scene.splats[si].feature.data();
      }
      for (int c = 0; c < C; ++c) f[c] += sw.weight * src[c];
      map.depth[px] += sw.weight * zdepth[si];
      map.alpha[px] += sw.weight;
    }
  }
  return map;
}

}  // namespace

FeatureMap render_feature_map(const SplatScene& scene, const SplatCamera& cam,
                              double cutoff_sigmas) {
  auto weights = render_weights(scene, cam, nullptr, cutoff_sigmas);
  return apply_weights(scene, cam, weights, nullptr, nullptr);
}

FeatureMap render_feature_map_subset(const SplatScene& scene, const std::vector<int>& subset,
                                     const SplatCamera& cam,
                                     const std::vector<std::vector<double>>* features_override,
                                     double cutoff_sigmas) {
  if (features_override != nullptr && features_override->size() != subset.size())
    raise(Errc::shape_mismatch, "feature override size does not match subset");
  auto weights = render_weights(scene, cam, &subset, cutoff_sigmas);
  return apply_weights(scene, cam, weights, &subset, features_override);
}

Image render_color(const SplatScene& scene, const SplatCamera& cam, double cutoff_sigmas) {
  auto weights = render_weights(scene, cam, nullptr, cutoff_sigmas);
  const Rgb bg{25, 25, 28};
  Image img(cam.width, cam.height, bg);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      size_t px = static_cast<size_t>(y) * static_cast<size_t>(cam.width) + static_cast<size_t>(x);
      double r = 0, g = 0, b = 0, acc = 0;
      for (const SplatWeight& sw : weights[px]) {
        const Rgb& c = scene.splats[static_cast<size_t>(sw.splat)].color;
        r += sw.weight * c[0];
        g += sw.weight * c[1];
        b += sw.weight * c[2];
        acc += sw.weight;
      }
      double rest = 1.0 - acc;
      img.set(x, y,
              {static_cast<uint8_t>(std::clamp(r + rest * bg[0], 0.0, 255.0)),
               static_cast<uint8_t>(std::clamp(g + rest * bg[1], 0.0, 255.0)),
               static_cast<uint8_t>(std::clamp(b + rest * bg[2], 0.0, 255.0))});
    }
  return img;
}

SplatScene load_splat_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io_failure, "cannot open splat scene: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    raise(Errc::parse_failure, "splat scene json: " + std::string(e.what()));
  }
  SplatScene scene;
  try {
    scene.feature_dim = doc.at("feature_dim").get<int>();
    for (const json& js : doc.at("splats")) {
      Splat s;
      const json& c = js.at("center");
      s.center = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
      s.radius = js.at("radius").get<double>();
      s.opacity = js.at("opacity").get<double>();
      if (js.contains("color")) {
        const json& col = js.at("color");
        s.color = {col.at(0).get<uint8_t>(), col.at(1).get<uint8_t>(), col.at(2).get<uint8_t>()};
      }
      if (js.contains("feature")) s.feature = js.at("feature").get<std::vector<double>>();
      else s.feature.assign(static_cast<size_t>(scene.feature_dim), 0.0);
      s.gt_instance = js.value("gt_instance", -1);
      scene.splats.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    raise(Errc::parse_failure, "splat record: " + std::string(e.what()));
  }
  scene.validate();
  return scene;
}

void save_splat_scene(const SplatScene& scene, const std::string& path) {
  json splats = json::array();
  for (const Splat& s : scene.splats) {
    splats.push_back({{"center", {s.center.x, s.center.y, s.center.z}},
                      {"radius", s.radius},
                      {"opacity", s.opacity},
                      {"color", {s.color[0], s.color[1], s.color[2]}},
                      {"feature", s.feature},
                      {"gt_instance", s.gt_instance}});
  }
  json doc{{"feature_dim", scene.feature_dim}, {"splats", std::move(splats)}};
  std::ofstream out(path);
  if (!out) raise(Errc::io_failure, "cannot write splat scene: " + path);
  out << doc.dump(2) << '\n';
}

std::vector<SplatCamera> load_cameras(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io_failure, "cannot open camera file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    raise(Errc::parse_failure, "camera json: " + std::string(e.what()));
  }
  std::vector<SplatCamera> cams;
  try {
    for (const json& jc : doc) {
      SplatCamera cam;
      const json& r = jc.at("rotation");
      for (int i = 0; i < 9; ++i) cam.rotation.m[static_cast<size_t>(i)] = r.at(i).get<double>();
      const json& t = jc.at("translation");
      cam.translation = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
      cam.fx = jc.at("fx").get<double>();
      cam.fy = jc.at("fy").get<double>();
      cam.cx = jc.at("cx").get<double>();
      cam.cy = jc.at("cy").get<double>();
      cam.width = jc.at("width").get<int>();
      cam.height = jc.at("height").get<int>();
      cams.push_back(cam);
    }
  } catch (const json::exception& e) {
    raise(Errc::parse_failure, "camera record: " + std::string(e.what()));
  }
  return cams;
}

void save_cameras(const std::vector<SplatCamera>& cams, const std::string& path) {
  json doc = json::array();
  for (const SplatCamera& cam : cams) {
    json r = json::array();
    for (double v : cam.rotation.m) r.push_back(v);
    doc.push_back({{"rotation", std::move(r)},
                   {"translation", {cam.translation.x, cam.translation.y, cam.translation.z}},
                   {"fx", cam.fx},
                   {"fy", cam.fy},
                   {"cx", cam.cx},
                   {"cy", cam.cy},
                   {"width", cam.width},
                   {"height", cam.height}});
  }
  std::ofstream out(path);
  if (!out) raise(Errc::io_failure, "cannot write camera file: " + path);
  out << doc.dump(2) << '\n';
}

}  // namespace vgh
