#pragma once

#include <string>
#include <vector>

#include "vgh/geometry.hpp"

namespace vgh {

struct Waypoints {
  std::vector<Vec2> points;
};

/// Uniform linear interpolation from current to target, endpoints exact.
/// Throws Errc::invalid_argument when count < 2.
Waypoints make_waypoints(const Vec2& current, const Vec2& target, int count);

/// Per-frame reference heading: atan2 of the forward waypoint difference,
/// held through zero-length segments and on the final frame, unwrapped into a
/// continuous sequence. When every waypoint coincides the whole sequence is
/// fallback_heading.
std::vector<double> reference_headings(const Waypoints& w, double fallback_heading);

/// Kinematic clip: per-frame planar root position and heading.
struct Trajectory {
  std::vector<Vec3> root;
  std::vector<double> heading;

  size_t frames() const { return root.size(); }
  void validate() const;
};

/// Straight-line clip through the waypoints with the given headings.
Trajectory trajectory_from_waypoints(const Waypoints& w, const std::vector<double>& headings);

struct PrevPose {
  Vec2 position;
  double heading = 0.0;
};

struct GuidanceConfig {
  double step_size = 0.1;      // metric gradient scale
  int iterations = 20;
  int keyframe_stride = 5;     // every K-th frame plus the last are keyframes
  double lambda_orient = 1.0;
  double lambda_init = 2.0;

  void validate() const;
};

/// Keyframe indices for a clip of `frames` frames: multiples of K above 0,
/// plus the final frame.
std::vector<size_t> keyframe_set(size_t frames, int stride);

struct GuidanceEval {
  double loss = 0.0;
  std::vector<Vec2> grad_position;   // per frame
  std::vector<double> grad_heading;  // per frame
};

/// Composite guidance objective: unsquared keyframe distance to waypoints,
/// absolute heading error at keyframes, and start continuity to prev.
/// Subgradients at kinks are 0. Requires |waypoints| == |headings| == frames.
GuidanceEval guidance_loss(const Trajectory& traj, const Waypoints& w,
                           const std::vector<double>& ref_headings, const PrevPose& prev,
                           const GuidanceConfig& cfg);

/// Fixed-iteration gradient descent on guidance_loss. A step that fails to
/// keep the loss non-increasing is retried once at half scale, then skipped;
/// a non-finite loss raises Errc::diverged. The returned loss never exceeds
/// the initial loss.
Trajectory optimize_trajectory(const Trajectory& init, const Waypoints& w,
                               const std::vector<double>& ref_headings, const PrevPose& prev,
                               const GuidanceConfig& cfg);

/// Meters per second for a locomotion style token. stop_and_wait is 0.
/// Throws Errc::invalid_argument for unknown styles.
double style_speed(const std::string& style);

/// Arc-length parameterized sample of the clip's root polyline; heading is
/// interpolated between frames and the end is clamped.
struct TrajectorySample {
  Vec2 position;
  double yaw = 0.0;
};
TrajectorySample sample_trajectory(const Trajectory& traj, double arc_length);

/// Total root polyline length in the ground plane.
double trajectory_length(const Trajectory& traj);

struct ExecState {
  Vec2 position;
  double yaw = 0.0;
  double arc_s = 0.0;  // progress along the active clip
};

/// Advances the agent along traj by style_speed(style) * dt of arc length.
ExecState execute_step(const ExecState& state, const Trajectory& traj,
                       const std::string& style, double dt);

/// CSV rows: frame,x,y,z,phi.
void save_trajectory_csv(const Trajectory& traj, const std::string& path);

}  // namespace vgh
