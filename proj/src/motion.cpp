#include "vgh/motion.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "vgh/errors.hpp"

namespace vgh {

Waypoints make_waypoints(const Vec2& current, const Vec2& target, int count) {
  if (count < 2) raise(Errc::invalid_argument, "need at least two waypoints");
  Waypoints w;
  w.points.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    double t = static_cast<double>(i) / static_cast<double>(count - 1);
    w.points.push_back({current.x + t * (target.x - current.x),
                        current.y + t * (target.y - current.y)});
  }
  w.points.front() = current;
  w.points.back() = target;
  return w;
}

std::vector<double> reference_headings(const Waypoints& w, double fallback_heading) {
  size_t n = w.points.size();
  if (n < 2) raise(Errc::invalid_argument, "need at least two waypoints");
  std::vector<double> phi(n, fallback_heading);
  bool seen_motion = false;
  double current = fallback_heading;
  for (size_t i = 0; i + 1 < n; ++i) {
    Vec2 d = w.points[i + 1] - w.points[i];
    if (d.norm() > 1e-12) {
      double raw = std::atan2(d.y, d.x);
      if (!seen_motion) {
        current = raw;
        // Degenerate leading segments inherit the first real direction.
        for (size_t k = 0; k < i; ++k) phi[k] = raw;
        seen_motion = true;
      } else {
        // Unwrap: stay within pi of the previous frame.
        current += wrap_angle(raw - current);
      }
    }
    phi[i] = current;
  }
  phi[n - 1] = current;
  return phi;
}

void Trajectory::validate() const {
  if (root.size() != heading.size())
    raise(Errc::shape_mismatch, "trajectory position and heading counts differ");
  if (root.empty()) raise(Errc::invalid_argument, "trajectory has no frames");
  for (const Vec3& p : root)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      raise(Errc::invalid_argument, "trajectory contains non-finite positions");
  for (double h : heading)
    if (!std::isfinite(h)) raise(Errc::invalid_argument, "trajectory contains non-finite heading");
}

Trajectory trajectory_from_waypoints(const Waypoints& w, const std::vector<double>& headings) {
  if (w.points.size() != headings.size())
    raise(Errc::shape_mismatch, "waypoint and heading counts differ");
  Trajectory t;
  for (size_t i = 0; i < w.points.size(); ++i) {
    t.root.push_back({w.points[i].x, w.points[i].y, 0.0});
    t.heading.push_back(headings[i]);
  }
  return t;
}

void GuidanceConfig::validate() const {
  if (step_size < 0.0 || iterations < 0 || keyframe_stride < 1 || lambda_orient < 0.0 ||
      lambda_init < 0.0)
    raise(Errc::invalid_argument, "guidance configuration values must be non-negative");
}

std::vector<size_t> keyframe_set(size_t frames, int stride) {
  std::vector<size_t> keys;
  if (frames == 0) return keys;
  for (size_t i = stride; i < frames; i += static_cast<size_t>(stride)) keys.push_back(i);
  if (keys.empty() || keys.back() != frames - 1) keys.push_back(frames - 1);
  return keys;
}

GuidanceEval guidance_loss(const Trajectory& traj, const Waypoints& w,
                           const std::vector<double>& ref_headings, const PrevPose& prev,
                           const GuidanceConfig& cfg) {
  cfg.validate();
  traj.validate();
  size_t T = traj.frames();
  if (w.points.size() != T || ref_headings.size() != T)
    raise(Errc::shape_mismatch, "waypoints and headings must cover every frame");

  GuidanceEval ev;
  ev.grad_position.assign(T, Vec2{0, 0});
  ev.grad_heading.assign(T, 0.0);

  for (size_t i : keyframe_set(T, cfg.keyframe_stride)) {
    Vec2 d = traj.root[i].xy() - w.points[i];
    double dist = d.norm();
    ev.loss += dist;
    if (dist > 0.0) ev.grad_position[i] += d * (1.0 / dist);

    double herr = traj.heading[i] - ref_headings[i];
    ev.loss += cfg.lambda_orient * std::abs(herr);
    if (herr > 0.0)
      ev.grad_heading[i] += cfg.lambda_orient;
    else if (herr < 0.0)
      ev.grad_heading[i] -= cfg.lambda_orient;
  }

  Vec2 d0 = traj.root[0].xy() - prev.position;
  double dist0 = d0.norm();
  ev.loss += cfg.lambda_init * dist0;
  if (dist0 > 0.0) ev.grad_position[0] += d0 * (cfg.lambda_init / dist0);
  return ev;
}

Trajectory optimize_trajectory(const Trajectory& init, const Waypoints& w,
                               const std::vector<double>& ref_headings, const PrevPose& prev,
                               const GuidanceConfig& cfg) {
  cfg.validate();
  Trajectory traj = init;
  GuidanceEval cur = guidance_loss(traj, w, ref_headings, prev, cfg);
  if (!std::isfinite(cur.loss)) raise(Errc::diverged, "initial guidance loss is not finite");

  for (int it = 0; it < cfg.iterations; ++it) {
    double scale = cfg.step_size;
    for (int attempt = 0; attempt < 2; ++attempt) {
      Trajectory cand = traj;
      for (size_t i = 0; i < cand.frames(); ++i) {
        cand.root[i].x -= scale * cur.grad_position[i].x;
        cand.root[i].y -= scale * cur.grad_position[i].y;
        cand.heading[i] -= scale * cur.grad_heading[i];
      }
      GuidanceEval next = guidance_loss(cand, w, ref_headings, prev, cfg);
      if (!std::isfinite(next.loss)) {
        if (attempt == 1)
          raise(Errc::diverged, "guidance loss became non-finite at iteration " +
                                    std::to_string(it));
        scale *= 0.5;
        continue;
      }
      if (next.loss <= cur.loss) {
        traj = std::move(cand);
        cur = std::move(next);
        break;
      }
      scale *= 0.5;  // one retry at half step, otherwise skip this iteration
    }
  }
  return traj;
}

double style_speed(const std::string& style) {
  if (style == "walk") return 1.2;
  if (style == "run") return 2.5;
  if (style == "slow_walk") return 0.6;
  if (style == "stop_and_wait") return 0.0;
  raise(Errc::invalid_argument, "unknown locomotion style: " + style);
}

double trajectory_length(const Trajectory& traj) {
  double total = 0.0;
  for (size_t i = 0; i + 1 < traj.frames(); ++i)
    total += (traj.root[i + 1].xy() - traj.root[i].xy()).norm();
  return total;
}

TrajectorySample sample_trajectory(const Trajectory& traj, double arc_length) {
  traj.validate();
  TrajectorySample s;
  if (arc_length <= 0.0) {
    s.position = traj.root.front().xy();
    s.yaw = traj.heading.front();
    return s;
  }
  double remaining = arc_length;
  for (size_t i = 0; i + 1 < traj.frames(); ++i) {
    Vec2 a = traj.root[i].xy();
    Vec2 b = traj.root[i + 1].xy();
    double seg = (b - a).norm();
    if (remaining <= seg && seg > 0.0) {
      double t = remaining / seg;
      s.position = a + (b - a) * t;
      s.yaw = traj.heading[i] + t * (traj.heading[i + 1] - traj.heading[i]);
      return s;
    }
    remaining -= seg;
  }
  s.position = traj.root.back().xy();
  s.yaw = traj.heading.back();
  return s;
}

ExecState execute_step(const ExecState& state, const Trajectory& traj,
                       const std::string& style, double dt) {
  if (dt <= 0.0) raise(Errc::invalid_argument, "dt must be positive");
  ExecState next = state;
  double speed = style_speed(style);
  if (speed == 0.0) return next;
  next.arc_s = state.arc_s + speed * dt;
  TrajectorySample s = sample_trajectory(traj, next.arc_s);
  next.position = s.position;
  next.yaw = s.yaw;
  return next;
}

void save_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Errc::io_failure, "cannot write " + path);
  out << "frame,x,y,z,phi\n";
  char buf[160];
  for (size_t i = 0; i < traj.frames(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g\n", i, traj.root[i].x,
                  traj.root[i].y, traj.root[i].z, traj.heading[i]);
    out << buf;
  }
}

}  // namespace vgh
