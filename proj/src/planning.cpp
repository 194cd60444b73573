#include "vgh/planning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

#include "vgh/errors.hpp"

namespace vgh {

using nlohmann::json;

const std::vector<std::string>& recovery_vocabulary() {
  static const std::vector<std::string> vocab = {"turn_left_30", "turn_right_30", "turn_left_90",
                                                 "turn_right_90", "turn_around"};
  return vocab;
}

double recovery_turn_angle(const std::string& token) {
  if (token == "turn_left_30") return deg2rad(30.0);
  if (token == "turn_right_30") return deg2rad(-30.0);
  if (token == "turn_left_90") return deg2rad(90.0);
  if (token == "turn_right_90") return deg2rad(-90.0);
  if (token == "turn_around") return kPi;
  if (token == "stop_and_wait") return 0.0;
  raise(Errc::invalid_action, "unknown recovery token: " + token);
}

const char* status_name(AgentStatus s) {
  switch (s) {
    case AgentStatus::Normal: return "NORMAL";
    case AgentStatus::GoalLost: return "GOAL_LOST";
    case AgentStatus::Stuck: return "STUCK";
  }
  return "NORMAL";
}

void validate_action(const ActionSpace& space, const Decision& decision) {
  bool has_index = decision.action_index > 0;
  bool has_token = !decision.action_token.empty();
  if (has_index == has_token)
    raise(Errc::invalid_action, "decision must pick exactly one of index or token");
  if (has_index) {
    if (decision.action_index > static_cast<int>(space.primitives.size()))
      raise(Errc::invalid_action,
            "action index " + std::to_string(decision.action_index) + " not offered");
    return;
  }
  for (const std::string& t : space.recovery)
    if (t == decision.action_token) return;
  if (space.stop_and_wait && decision.action_token == "stop_and_wait") return;
  raise(Errc::invalid_action, "action token '" + decision.action_token + "' not offered");
}

ActionSpace propose_actions(const EgoObservation& obs, const CameraSpec& cam,
                            const AgentPose& pose, const ProposalConfig& cfg) {
  if (cfg.candidate_count < 1)
    raise(Errc::invalid_argument, "candidate_count must be at least 1");
  ActionSpace space;
  space.recovery = recovery_vocabulary();

  int anchor_x = cam.width / 2;
  int anchor_y = cam.height - 6;

  for (int j = 1; j <= cfg.candidate_count; ++j) {
    int u = static_cast<int>(std::lround((j - 0.5) * cam.width / cfg.candidate_count));
    u = std::clamp(u, 0, cam.width - 1);

    // Contiguous traversable run starting at the bottom row.
    int v = cam.height - 1;
    if (!obs.traversable[obs.at(u, v)]) continue;
    while (v > 0 && obs.traversable[obs.at(u, v - 1)]) --v;

    double depth = obs.depth[obs.at(u, v)];
    if (!std::isfinite(depth)) continue;
    Vec3 target = backproject(u + 0.5, v + 0.5, depth, cam, pose);
    double clearance = (target.xy() - pose.position).norm();
    if (clearance > cfg.max_range) {
      double scale = cfg.max_range / clearance;
      Vec2 capped = pose.position + (target.xy() - pose.position) * scale;
      target = {capped.x, capped.y, target.z * scale};
      clearance = cfg.max_range;
    }
    if (clearance < cfg.delta_safety) continue;

    auto pr = cam.project(target, pose);
    ActionPrimitive prim;
    prim.motion_type = cfg.motion_type;
    prim.target_3d = target;
    prim.path_clearance = clearance;
    prim.pixel_u = pr.in_front ? std::clamp(static_cast<int>(std::floor(pr.u)), 0, cam.width - 1)
                               : u;
    prim.pixel_v = pr.in_front ? std::clamp(static_cast<int>(std::floor(pr.v)), 0, cam.height - 1)
                               : v;
    prim.direction_px = {static_cast<double>(prim.pixel_u - anchor_x),
                         static_cast<double>(prim.pixel_v - anchor_y)};
    space.primitives.push_back(prim);
  }
  for (size_t i = 0; i < space.primitives.size(); ++i)
    space.primitives[i].index = static_cast<int>(i) + 1;
  return space;
}

AgentStatus determine_status(const ActionSpace& space,
                             const std::optional<DetectionBox>& goal_box) {
  if (space.primitives.empty()) return AgentStatus::Stuck;
  return goal_box ? AgentStatus::Normal : AgentStatus::GoalLost;
}

namespace {

std::string fmt1(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string pick_turn_token(double desired_bearing, double yaw) {
  double delta = wrap_angle(desired_bearing - yaw);
  const auto& vocab = recovery_vocabulary();
  std::string best = vocab.front();
  double best_err = std::numeric_limits<double>::infinity();
  for (const std::string& token : vocab) {
    double err = std::abs(wrap_angle(delta - recovery_turn_angle(token)));
    if (err < best_err) {
      best_err = err;
      best = token;
    }
  }
  return best;
}

Decision recovery_decision(const std::string& token, const std::string& why,
                           const Landmark& goal) {
  Decision d;
  d.observation = "No safe forward direction is available from the current view.";
  d.goal_analysis = "Goal '" + goal.label + "' cannot be approached directly this step.";
  d.plan = {"Reorient to open a safe forward path.",
            "Resume moving toward " + goal.label + "."};
  d.thought = why;
  d.action_token = token;
  return d;
}

// Body radius plus the contact threshold plus slack for the curved start of a
// walk; passing closer than this to blocked space risks a capsule contact even
// where the cells themselves are free.
constexpr double kBodyMargin = 0.55;

// Longest stretch the controller walks before the next decision replaces the
// target, so only this much of each candidate segment is actually committed.
constexpr double kCommitDistance = 1.45;

/// Distance from a point to the nearest blocked cell rectangle (out-of-bounds
/// space counts as blocked). Only cells within `limit` matter; beyond that the
/// exact value is irrelevant and `limit` is returned. Blocked cells whose
/// rectangle overlaps `exempt` are ignored: the episode ends on goal proximity
/// well before the body could reach the goal geometry itself, so the goal's
/// own footprint must not repel the final approach.
double blocked_clearance(const OccupancyGrid& grid, const Vec2& p, double limit,
                         const Aabb* exempt = nullptr) {
  int ring = static_cast<int>(std::ceil(limit / grid.resolution)) + 1;
  Cell at = grid.cell_at(p);
  double best = limit;
  for (int dy = -ring; dy <= ring; ++dy)
    for (int dx = -ring; dx <= ring; ++dx) {
      Cell c{at.x + dx, at.y + dy};
      bool solid = !grid.in_bounds(c) || grid.blocked(c);
      if (!solid) continue;
      double x0 = grid.origin.x + c.x * grid.resolution;
      double y0 = grid.origin.y + c.y * grid.resolution;
      double x1 = x0 + grid.resolution;
      double y1 = y0 + grid.resolution;
      if (exempt && grid.in_bounds(c) && x0 < exempt->max.x && x1 > exempt->min.x &&
          y0 < exempt->max.y && y1 > exempt->min.y)
        continue;
      double ddx = std::max({x0 - p.x, 0.0, p.x - x1});
      double ddy = std::max({y0 - p.y, 0.0, p.y - y1});
      best = std::min(best, std::hypot(ddx, ddy));
    }
  return best;
}

}  // namespace

Decision oracle_decide(const OccupancyGrid& grid, const AgentPose& pose, const Landmark& goal,
                       const ActionSpace& space) {
  Vec2 goal_xy = goal.aabb.center().xy();
  auto goal_cell = nearest_free_cell(grid, goal_xy);
  auto start_cell = nearest_free_cell(grid, pose.position);
  if (!goal_cell || !start_cell)
    return greedy_decide(pose, goal, space);
  PathResult direct;
  try {
    direct = astar_cells(grid, *start_cell, *goal_cell);
  } catch (const Error&) {
    // No free path exists from here; steer by straight-line distance instead
    // of killing the episode.
    return greedy_decide(pose, goal, space);
  }

  auto turn_along_path = [&]() {
    size_t ahead = std::min<size_t>(3, direct.cells.size() - 1);
    Vec2 look = ahead == 0 ? goal_xy : grid.cell_center(direct.cells[ahead]);
    double bearing = std::atan2(look.y - pose.position.y, look.x - pose.position.x);
    double err = wrap_angle(bearing - pose.yaw);
    if (std::abs(err) > 0.45) {
      return recovery_decision(
          pick_turn_token(bearing, pose.yaw),
          "No forward candidate is safe; turning toward the planned path.", goal);
    }
    // Already facing the path and still nothing is safe, so small turns would
    // only oscillate between the same two views. Swing toward the side with
    // more room to expose a different escape direction.
    Vec2 left{pose.position.x - 0.8 * std::sin(pose.yaw),
              pose.position.y + 0.8 * std::cos(pose.yaw)};
    Vec2 right{pose.position.x + 0.8 * std::sin(pose.yaw),
               pose.position.y - 0.8 * std::cos(pose.yaw)};
    double cl = blocked_clearance(grid, left, 2.0);
    double cr = blocked_clearance(grid, right, 2.0);
    return recovery_decision(cl >= cr ? "turn_left_90" : "turn_right_90",
                             "Facing the planned path with no safe candidate; "
                             "sidestepping toward open space.",
                             goal);
  };
  if (space.primitives.empty()) return turn_along_path();

  int best_index = -1;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const ActionPrimitive& prim : space.primitives) {
    Vec3 agent{pose.position.x, pose.position.y, 0.0};
    double approach = (prim.target_3d - agent).norm();
    // The committed stretch of the walk must keep body clearance from blocked
    // space; this rejects runs that hug a wall sideways while still allowing
    // distant targets that a later decision will re-evaluate. A stretch that
    // starts tight but strictly recedes from the obstruction stays eligible,
    // otherwise a pocket near a wall could never be walked out of.
    {
      const double probe = kBodyMargin + 0.25;
      Vec2 to = prim.target_3d.xy() - pose.position;
      double dist = to.norm();
      double reach = std::min(dist, kCommitDistance);
      double prev = blocked_clearance(grid, pose.position, probe, &goal.aabb);
      bool unsafe = false;
      for (double s = 0.2; s <= reach + 1e-9 && dist > 1e-9; s += 0.2) {
        Vec2 q = pose.position + to * (std::min(s, reach) / dist);
        double c = blocked_clearance(grid, q, probe, &goal.aabb);
        if (c < kBodyMargin && c < prev + 0.05) {
          unsafe = true;
          break;
        }
        prev = c;
      }
      if (unsafe) continue;
    }
    auto target_cell = nearest_free_cell(grid, prim.target_3d.xy());
    if (!target_cell) continue;
    double remaining;
    try {
      remaining = astar_cells(grid, *target_cell, *goal_cell).length;
    } catch (const Error&) {
      continue;  // this candidate cannot reach the goal at all
    }
    double total = approach + remaining;
    if (total < best_cost) {
      best_cost = total;
      best_index = prim.index;
    }
  }
  // Every candidate is unsafe or disconnected; reorient toward the path.
  if (best_index < 0) return turn_along_path();

  Vec3 centroid = goal.aabb.center();
  double dist = (centroid.xy() - pose.position).norm();
  Decision d;
  d.observation = "Planner view exposes " + std::to_string(space.primitives.size()) +
                  " safe forward directions.";
  d.goal_analysis = "Goal '" + goal.label + "' lies " + fmt1(dist) +
                    " m away; shortest free path length " + fmt1(direct.length) + " m.";
  d.plan = {"Follow the shortest free path toward " + goal.label + ".",
            "Stop once within one meter of " + goal.label + "."};
  d.thought = "Arrow " + std::to_string(best_index) +
              " minimizes approach distance plus remaining shortest-path cost.";
  d.action_index = best_index;
  return d;
}

Decision greedy_decide(const AgentPose& pose, const Landmark& goal, const ActionSpace& space) {
  Vec3 centroid = goal.aabb.center();
  if (space.primitives.empty()) {
    double bearing =
        std::atan2(centroid.y - pose.position.y, centroid.x - pose.position.x);
    return recovery_decision(pick_turn_token(bearing, pose.yaw),
                             "Blocked on all candidates; turning toward the goal bearing.",
                             goal);
  }

  double center = (static_cast<double>(space.primitives.size()) + 1.0) / 2.0;
  int best_index = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  double best_center_gap = std::numeric_limits<double>::infinity();
  for (const ActionPrimitive& prim : space.primitives) {
    double dist = (prim.target_3d - centroid).norm();
    double center_gap = std::abs(static_cast<double>(prim.index) - center);
    if (dist < best_dist ||
        (dist == best_dist && center_gap < best_center_gap)) {
      best_dist = dist;
      best_center_gap = center_gap;
      best_index = prim.index;
    }
  }

  double dist = (centroid.xy() - pose.position).norm();
  Decision d;
  d.observation = "View exposes " + std::to_string(space.primitives.size()) +
                  " safe forward directions.";
  d.goal_analysis =
      "Goal '" + goal.label + "' centroid lies " + fmt1(dist) + " m from the agent.";
  d.plan = {"Head straight toward " + goal.label + ".",
            "Stop once within one meter of " + goal.label + "."};
  d.thought = "Arrow " + std::to_string(best_index) +
              " ends closest to the goal centroid in a straight line.";
  d.action_index = best_index;
  return d;
}

void update_memory(Memory& mem, const Decision& decision, size_t history_cap) {
  mem.previous_plan = decision.plan;
  std::string thought = decision.thought;
  if (thought.size() > 60) thought = thought.substr(0, 57) + "...";
  std::string action = decision.is_recovery() ? decision.action_token
                                              : std::to_string(decision.action_index);
  mem.recent_history.push_back("thought: " + thought + " | action: " + action);
  while (mem.recent_history.size() > history_cap) mem.recent_history.pop_front();
}

std::string decision_to_json(const Decision& decision, int indent) {
  json j;
  j["observation"] = decision.observation;
  j["goal_analysis"] = decision.goal_analysis;
  j["plan"] = decision.plan;
  j["thought"] = decision.thought;
  if (decision.is_recovery())
    j["action"] = decision.action_token;
  else
    j["action"] = decision.action_index;
  return j.dump(indent);
}

std::string memory_to_json(const Memory& memory, int indent) {
  json j;
  j["previous_plan"] = memory.previous_plan;
  j["recent_history"] = std::vector<std::string>(memory.recent_history.begin(),
                                                 memory.recent_history.end());
  return j.dump(indent);
}

}  // namespace vgh
