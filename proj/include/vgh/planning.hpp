#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "vgh/perception.hpp"
#include "vgh/world.hpp"

namespace vgh {

/// One numbered forward-motion candidate shown to the planner.
struct ActionPrimitive {
  int index = 0;               // 1-based, contiguous after pruning
  std::string motion_type = "walk";
  Vec2 direction_px;           // anchor-to-endpoint vector in the prompt image
  int pixel_u = 0;             // endpoint pixel of the overlay arrow
  int pixel_v = 0;
  Vec3 target_3d;              // ground point, z ~ 0
  double path_clearance = 0.0; // meters of visible free ground along this ray
};

/// Recovery turn tokens, in presentation order. turn_left is a positive
/// (counter-clockwise) yaw change.
const std::vector<std::string>& recovery_vocabulary();

/// Signed yaw change in radians for a recovery token; 0 for stop_and_wait.
/// Throws Errc::invalid_action for unknown tokens.
double recovery_turn_angle(const std::string& token);

struct ActionSpace {
  std::vector<ActionPrimitive> primitives;
  std::vector<std::string> recovery;
  bool stop_and_wait = false;  // social navigation extension
};

enum class AgentStatus { Normal, GoalLost, Stuck };

const char* status_name(AgentStatus s);

struct Memory {
  std::vector<std::string> previous_plan;
  std::deque<std::string> recent_history;

  bool empty() const { return previous_plan.empty() && recent_history.empty(); }
};

/// Planner output. Exactly one of action_index (> 0) or action_token is set.
struct Decision {
  std::string observation;
  std::string goal_analysis;
  std::vector<std::string> plan;
  std::string thought;
  int action_index = 0;
  std::string action_token;
  bool fallback = false;  // synthesized after VLM retry exhaustion

  bool is_recovery() const { return action_index == 0; }
};

/// Throws Errc::invalid_action unless the decision picks either a valid
/// primitive index or a token offered by the space.
void validate_action(const ActionSpace& space, const Decision& decision);

struct ProposalConfig {
  int candidate_count = 9;     // columns spread across the field of view
  double delta_safety = 1.5;   // meters, prune shorter candidates
  double max_range = 10.0;     // clearance cap (sensing range)
  std::string motion_type = "walk";
};

/// Builds the discrete action space: candidate_count image columns, each
/// walked bottom-up through contiguous traversable pixels; the farthest such
/// pixel back-projects to target_3d. Candidates with clearance below
/// delta_safety are pruned and survivors re-indexed from 1.
ActionSpace propose_actions(const EgoObservation& obs, const CameraSpec& cam,
                            const AgentPose& pose, const ProposalConfig& cfg = {});

/// STUCK if no primitives; else GOAL_LOST if the goal box is absent; else
/// NORMAL.
AgentStatus determine_status(const ActionSpace& space,
                             const std::optional<DetectionBox>& goal_box);

/// Calibration upper-bound planner: scores every primitive by distance to its
/// target plus the remaining shortest-path cost from the target to the goal,
/// and picks the argmin (ties to the smallest index). When stuck it turns
/// toward the shortest-path direction. Throws Errc::unreachable when the
/// goal cannot be reached from the agent cell.
Decision oracle_decide(const OccupancyGrid& grid, const AgentPose& pose, const Landmark& goal,
                       const ActionSpace& space);

/// Myopic baseline: picks the primitive whose target is closest to the goal
/// centroid (ties prefer the center index). When stuck it turns toward the
/// straight-line goal bearing.
Decision greedy_decide(const AgentPose& pose, const Landmark& goal, const ActionSpace& space);

/// Replaces the stored plan and appends a one-line summary, keeping at most
/// history_cap entries.
void update_memory(Memory& mem, const Decision& decision, size_t history_cap = 5);

/// JSON shapes used by the query payload and transcripts. Field names:
/// observation, goal_analysis, plan, thought, action; previous_plan,
/// recent_history.
std::string decision_to_json(const Decision& decision, int indent = -1);
std::string memory_to_json(const Memory& memory, int indent = -1);

}  // namespace vgh
