#pragma once

#include <string>
#include <vector>

#include "vgh/geometry.hpp"
#include "vgh/image.hpp"

namespace vgh {

/// Isotropic Gaussian splat with frozen geometry. Only `feature` is trainable.
struct Splat {
  Vec3 center;
  double radius = 0.05;     // world-space sigma, meters
  double opacity = 0.9;     // in (0, 1)
  Rgb color{200, 200, 200};
  std::vector<double> feature;
  int gt_instance = -1;     // ground-truth instance id for synthetic scenes
};

struct SplatScene {
  std::vector<Splat> splats;
  int feature_dim = 0;

  void validate() const;  // uniform feature dim, radius > 0, opacity in (0,1)
};

/// World-to-camera pinhole. Camera frame: +x right, +y down, +z forward.
struct SplatCamera {
  Mat3 rotation;     // world -> camera
  Vec3 translation;
  double fx = 60.0, fy = 60.0, cx = 32.0, cy = 24.0;
  int width = 64, height = 48;

  static SplatCamera look_at(const Vec3& eye, const Vec3& target, double fx, double fy, int w,
                             int h);
  Vec3 to_camera(const Vec3& p) const { return rotation * p + translation; }
};

/// Dense per-pixel render products. `features` is HxWxC row-major;
/// `depth` is the alpha-weighted blend of splat camera depths (not
/// normalized); `alpha` is the accumulated blending weight.
struct FeatureMap {
  int width = 0, height = 0, channels = 0;
  std::vector<double> features;
  std::vector<double> depth;
  std::vector<double> alpha;

  FeatureMap() = default;
  FeatureMap(int w, int h, int c)
      : width(w), height(h), channels(c),
        features(static_cast<size_t>(w) * static_cast<size_t>(h) * static_cast<size_t>(c), 0.0),
        depth(static_cast<size_t>(w) * static_cast<size_t>(h), 0.0),
        alpha(static_cast<size_t>(w) * static_cast<size_t>(h), 0.0) {}

  size_t pixel(int x, int y) const {
    return static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x);
  }
  double* at(int x, int y) { return features.data() + pixel(x, y) * static_cast<size_t>(channels); }
  const double* at(int x, int y) const {
    return features.data() + pixel(x, y) * static_cast<size_t>(channels);
  }
};

/// Per-pixel blending weight of one splat at one pixel: w_i = T_i * alpha_i.
/// The weights are independent of the feature values, so the rendered map is
/// linear in the features.
struct SplatWeight {
  int splat = -1;
  double weight = 0.0;
};

/// Front-to-back alpha blending of all splats, sorted by camera depth
/// (ties by splat index). Splats behind the camera are skipped. A splat
/// contributes within `cutoff_sigmas` of its projected center.
FeatureMap render_feature_map(const SplatScene& scene, const SplatCamera& cam,
                              double cutoff_sigmas = 4.0);

/// Same blend restricted to a subset of splats, with features replaced by
/// `features_override` when non-null (used for quantized renders).
FeatureMap render_feature_map_subset(const SplatScene& scene, const std::vector<int>& subset,
                                     const SplatCamera& cam,
                                     const std::vector<std::vector<double>>* features_override =
                                         nullptr,
                                     double cutoff_sigmas = 4.0);

/// Per-pixel blending weights per splat, pixel-major. Exposes the linear
/// structure of the renderer for exact gradient computation.
std::vector<std::vector<SplatWeight>> render_weights(const SplatScene& scene,
                                                     const SplatCamera& cam,
                                                     const std::vector<int>* subset = nullptr,
                                                     double cutoff_sigmas = 4.0);

/// RGB render used for annotation views and debugging.
Image render_color(const SplatScene& scene, const SplatCamera& cam, double cutoff_sigmas = 4.0);

SplatScene load_splat_scene(const std::string& path);
void save_splat_scene(const SplatScene& scene, const std::string& path);
std::vector<SplatCamera> load_cameras(const std::string& path);
void save_cameras(const std::vector<SplatCamera>& cams, const std::string& path);

}  // namespace vgh
