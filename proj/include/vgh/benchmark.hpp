#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vgh/collision.hpp"
#include "vgh/motion.hpp"
#include "vgh/perception.hpp"
#include "vgh/planning.hpp"
#include "vgh/vlm_client.hpp"
#include "vgh/world.hpp"

namespace vgh {

enum class TaskLevel { SimNav, ObstNav, SocialNav, MultiGoal };

const char* task_level_name(TaskLevel level);
TaskLevel task_level_from_name(const std::string& name);

/// Parametric blocker dropped onto the optimal path for ObstNav episodes.
struct ObstacleInstance {
  std::string kind;  // "box" or "cylinder"
  Vec2 position;     // ground center
  double size_x = 1.0;  // box extents; cylinders use size_x as diameter
  double size_y = 1.0;
  double height = 1.0;
  double yaw = 0.0;
};

/// Watertight mesh for one obstacle, resting on the ground plane.
TriMesh obstacle_mesh(const ObstacleInstance& o);

/// Shape templates drawn from during ObstNav augmentation (position unset).
std::vector<ObstacleInstance> default_obstacle_catalog();

/// Constant-speed pedestrian: stands at the first waypoint until start_time,
/// walks the polyline, then stands at the last waypoint.
struct PedestrianTrack {
  int id = 0;
  std::vector<Vec2> waypoints;
  double speed = 1.0;       // m/s
  double start_time = 0.0;  // seconds
  CapsuleSpec shape;

  Vec2 position_at(double t) const;
  double heading_at(double t) const;
  double duration() const;  // walking time after start_time
};

struct Scenario {
  TaskLevel level = TaskLevel::SimNav;
  std::string id;
  std::vector<std::string> goals;  // landmark ids, visited in order
  Vec2 start;
  double yaw = 0.0;
  std::vector<ObstacleInstance> obstacles;
  std::vector<PedestrianTrack> pedestrians;
  uint64_t seed = 0;
};

struct ScenarioGenConfig {
  int n_landmarks = 40;  // taken from the front of the world's registry
  int per_landmark = 5;
  double min_distance = 6.0;   // meters, start to first-goal box center
  double max_distance = 15.0;
  double yaw_jitter = 0.5235987755982988;  // +-30 degrees around the goal bearing
  uint64_t seed = 0;
};

struct ScenarioGenReport {
  std::vector<Scenario> scenarios;
  int skipped_landmarks = 0;  // landmarks without enough valid starts
};

/// Samples per_landmark starts per landmark on free, shortest-path-reachable
/// cells inside the distance ring, facing the goal with jittered yaw.
/// Reproducible from cfg.seed alone. Landmarks that cannot host the full
/// quota are skipped and counted. Throws Errc::invalid_argument when the
/// world has fewer than n_landmarks landmarks.
ScenarioGenReport generate_scenarios(const WorldModel& world, TaskLevel level,
                                     const ScenarioGenConfig& cfg = {});

/// Places one catalog obstacle on an interior cell of the optimal path, at
/// least 2 m from both endpoints, and re-checks that a detour exists.
/// Throws Errc::no_detour when no placement leaves the goal reachable.
Scenario augment_obstnav(const Scenario& scenario, const WorldModel& world,
                         const std::vector<ObstacleInstance>& catalog, uint64_t seed);

/// Adds 1..count pedestrian tracks that cross the agent's optimal path at
/// staggered times. Crossing legs that cannot be placed are dropped, so the
/// result may carry fewer pedestrians than requested; never throws for that.
Scenario augment_socialnav(const Scenario& scenario, const WorldModel& world, int count,
                           uint64_t seed);

void save_scenarios(const std::vector<Scenario>& scenarios, const std::string& path);
std::vector<Scenario> load_scenarios(const std::string& path);

struct EpisodeConfig {
  int decide_every = 20;         // simulation steps per planner decision
  double sim_hz = 20.0;
  double success_distance = 1.0;  // meters to the goal box
  int max_decisions = 60;
  std::string motion_style = "walk";
  int trajectory_frames = 40;
  double goal_min_visibility = 0.2;
  double goal_miss_rate = 0.0;
  CameraSpec camera;
  CapsuleSpec body;
  ProposalConfig proposal;
  GuidanceConfig guidance;
  uint64_t seed = 0;
  std::string transcript_dir;  // empty = keep the transcript in memory only
  bool save_images = false;    // write per-decision prompt PNGs next to it
};

struct CollisionEvent {
  int step = 0;  // global simulation step index
  std::string kind;  // "scene" or "human"
};

struct EpisodeResult {
  std::string scenario_id;
  TaskLevel level = TaskLevel::SimNav;
  bool success = false;
  double path_length = 0.0;     // meters actually walked
  double optimal_length = 0.0;  // shortest-path length through all goals
  double optimal_reached_length = 0.0;  // same, truncated to the reached prefix
  int decisions = 0;
  int goals_total = 0;
  int goals_reached = 0;  // prefix count, never regresses
  std::vector<CollisionEvent> collision_events;
  bool planner_error = false;
  std::string error_message;
  std::vector<std::string> transcript;  // canonical JSON, one line per decision

  bool collided() const { return !collision_events.empty(); }
  int first_collision_step() const {
    return collision_events.empty() ? -1 : collision_events.front().step;
  }
};

/// Planner interface driven once per decision window. Implementations must
/// be safe to call from concurrent episodes.
struct DecisionContext {
  int decision = 0;
  AgentStatus status = AgentStatus::Normal;
  AgentPose pose;
  const EgoObservation* observation = nullptr;
  const ActionSpace* space = nullptr;
  const Landmark* goal = nullptr;
  const OccupancyGrid* grid = nullptr;
  const Memory* memory = nullptr;
  const Scenario* scenario = nullptr;
  std::vector<DynamicObstacleInfo> visible_humans;
  const std::vector<uint8_t>* prompt_png = nullptr;  // set when wants_image()
};

class Planner {
 public:
  virtual ~Planner() = default;
  virtual std::string name() const = 0;
  virtual Decision decide(const DecisionContext& ctx) = 0;
  virtual bool wants_image() const { return false; }
};

std::unique_ptr<Planner> make_oracle_planner();
std::unique_ptr<Planner> make_greedy_planner();
std::unique_ptr<Planner> make_vlm_planner(const EndpointConfig& endpoint);

/// Runs one episode: every decide_every steps the agent renders, proposes,
/// decides, optimizes a clip, and walks it; collisions and goal distance are
/// checked every simulation step. Planner failures mark the episode failed
/// and never propagate.
EpisodeResult run_episode(const WorldModel& world, const Scenario& scenario, Planner& planner,
                          const EpisodeConfig& cfg);

struct LevelMetrics {
  double sr = 0.0;
  double spl = 0.0;
  double cr = 0.0;
  double pr = 0.0;
  double ppl = 0.0;
  int episodes = 0;  // per run
};

struct MetricsReport {
  LevelMetrics overall;
  std::vector<std::pair<std::string, LevelMetrics>> per_level;
  int runs = 0;
};

/// Aggregates per-run metrics and averages them across runs.
/// Throws Errc::empty_results when no episodes are present.
MetricsReport compute_metrics(const std::vector<std::vector<EpisodeResult>>& results_by_run);

struct BenchmarkConfig {
  EpisodeConfig episode;
  int runs = 3;
  int jobs = 1;
  uint64_t seed = 0;
};

struct BenchmarkOutcome {
  std::vector<std::vector<EpisodeResult>> results;  // [run][scenario]
  MetricsReport report;
};

/// Runs scenarios x runs, parallel over jobs worker threads. Episode seeds
/// derive from (seed, run, scenario id), and results land in scenario order,
/// so the outcome is independent of scheduling.
BenchmarkOutcome run_benchmark(const WorldModel& world, const std::vector<Scenario>& scenarios,
                               Planner& planner, const BenchmarkConfig& cfg);

std::string episode_to_json(const EpisodeResult& result);
void save_results_jsonl(const std::vector<std::vector<EpisodeResult>>& results_by_run,
                        const std::string& path);
void save_metrics_csv(const MetricsReport& report, const std::string& path);

/// Fixed-width text table: one row per level plus the overall row, with
/// SR/SPL/CR/PR/PPL columns.
std::string metrics_table(const MetricsReport& report);

}  // namespace vgh
