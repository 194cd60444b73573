#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vgh/collision.hpp"
#include "vgh/geometry.hpp"
#include "vgh/image.hpp"
#include "vgh/world.hpp"

namespace vgh {

/// Ground-level agent pose: feet at z = 0, yaw 0 = +x, counter-clockwise.
struct AgentPose {
  Vec2 position;
  double yaw = 0.0;
};

struct CameraSpec {
  int width = 320;
  int height = 240;
  double fx = 160.0;  // 90 degree horizontal field of view
  double fy = 160.0;
  double cx = 160.0;
  double cy = 120.0;
  double eye_height = 1.6;   // meters above the ground plane
  double pitch = 0.35;       // radians, downward tilt of the optical axis

  static CameraSpec standard() { return CameraSpec{}; }

  double horizontal_fov() const { return 2.0 * std::atan2(width * 0.5, fx); }
  void validate() const;

  /// World-to-camera rotation rows: right, down, forward.
  Mat3 world_rotation(const AgentPose& pose) const;
  Vec3 eye_position(const AgentPose& pose) const;

  /// Unit world-space direction through the center of pixel (u, v).
  Vec3 pixel_ray(int u, int v, const AgentPose& pose) const;

  /// Projects a world point; returns pixel coordinates and camera-frame
  /// forward depth. in_front is false when the point is at or behind the
  /// image plane (pixel values are then meaningless).
  struct Projection {
    double u = 0.0, v = 0.0;
    double z = 0.0;      // forward depth
    double range = 0.0;  // Euclidean distance from the eye
    bool in_front = false;
  };
  Projection project(const Vec3& world_point, const AgentPose& pose) const;
};

struct DetectionBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive pixel bounds
  std::string label;
  int agent_id = -1;  // pedestrian id for human boxes
};

/// One egocentric frame. Depth is the ray range in meters (+inf for sky),
/// normals are unit face normals (zero for sky), hit_face is the mesh face
/// index (-1 for sky and for pixels covered by another agent's body).
struct EgoObservation {
  int width = 0;
  int height = 0;
  std::vector<Rgb> color;
  std::vector<double> depth;
  std::vector<Vec3> normal;
  std::vector<int> hit_face;
  std::vector<int> human_id;  // -1 where no agent body is seen
  std::vector<uint8_t> traversable;
  std::optional<DetectionBox> goal_box;
  std::vector<DetectionBox> human_boxes;

  size_t at(int u, int v) const {
    return static_cast<size_t>(v) * static_cast<size_t>(width) + static_cast<size_t>(u);
  }
};

/// Simulated pedestrian body for rendering and detection.
struct HumanObstacle {
  int id = 0;
  Vec2 position;
  double heading = 0.0;
  CapsuleSpec shape;
};

/// Raycasts one frame against `bvh` plus analytic capsules for the given
/// humans. Pixel traversability uses the default 15 degree slope bound and
/// additionally requires the hit to lie on the support plane (z <= 0.1 m),
/// so elevated flat surfaces never read as ground.
EgoObservation render_ego(const MeshBvh& bvh, const std::vector<HumanObstacle>& humans,
                          const AgentPose& pose, const CameraSpec& cam);

/// Recomputes the traversability mask: ground-like normal (angle to +z below
/// max_slope) and finite depth on mesh geometry.
std::vector<uint8_t> traversable_mask(const EgoObservation& obs, double max_slope_deg = 15.0);

/// Geometric goal detector standing in for an open-vocabulary model. Samples
/// the landmark box surface, keeps samples whose projected pixel passes a
/// depth-consistency test against obs, and reports the projected box if the
/// visible fraction reaches min_vis. miss_rate > 0 injects deterministic
/// detector failures (seeded by step).
std::optional<DetectionBox> detect_goal(const EgoObservation& obs, const Landmark& lm,
                                        const AgentPose& pose, const CameraSpec& cam,
                                        double min_vis = 0.2, double miss_rate = 0.0,
                                        uint64_t step_seed = 0);

/// Boxes around humans whose bodies are actually visible in obs. min_vis is
/// the minimum visible share of the frame's pixels.
std::vector<DetectionBox> detect_humans(const EgoObservation& obs,
                                        const std::vector<HumanObstacle>& humans,
                                        double min_vis = 0.0005);

/// Inverse pinhole at the pixel center; depth is ray range in meters.
/// Throws Errc::invalid_depth unless depth is finite and positive.
Vec3 backproject(double u, double v, double depth, const CameraSpec& cam,
                 const AgentPose& pose);

/// Numbered arrow overlay endpoint, image coordinates.
struct ArrowOverlay {
  int index = 0;
  int u = 0;
  int v = 0;
};

/// Draws the visual prompt: observation colors, numbered arrows fanning out
/// from the bottom-center anchor, a green labeled goal box, and red labeled
/// human boxes. Pixel-deterministic.
Image compose_prompt_image(const EgoObservation& obs, const std::vector<ArrowOverlay>& arrows,
                           const std::optional<DetectionBox>& goal_box,
                           const std::vector<DetectionBox>& human_boxes);

/// Writes <prefix>.color.bin/.depth.bin/.normal.bin/.traversable.bin plus a
/// <prefix>.json sidecar describing shapes, dtypes, and the camera.
void save_observation(const EgoObservation& obs, const CameraSpec& cam,
                      const std::string& prefix);

}  // namespace vgh
