#include "vgh/benchmark.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <thread>

#include <nlohmann/json.hpp>

#include "vgh/errors.hpp"
#include "vgh/raycast.hpp"
#include "vgh/rng.hpp"

namespace vgh {

using nlohmann::json;

const char* task_level_name(TaskLevel level) {
  switch (level) {
    case TaskLevel::SimNav: return "simnav";
    case TaskLevel::ObstNav: return "obstnav";
    case TaskLevel::SocialNav: return "socialnav";
    case TaskLevel::MultiGoal: return "multigoal";
  }
  return "simnav";
}

TaskLevel task_level_from_name(const std::string& name) {
  if (name == "simnav") return TaskLevel::SimNav;
  if (name == "obstnav") return TaskLevel::ObstNav;
  if (name == "socialnav") return TaskLevel::SocialNav;
  if (name == "multigoal") return TaskLevel::MultiGoal;
  raise(Errc::invalid_argument, "unknown task level '" + name + "'");
}

TriMesh obstacle_mesh(const ObstacleInstance& o) {
  if (o.size_x <= 0.0 || o.size_y <= 0.0 || o.height <= 0.0)
    raise(Errc::invalid_argument, "obstacle dimensions must be positive");
  TriMesh m;
  double c = std::cos(o.yaw), s = std::sin(o.yaw);
  auto place = [&](double lx, double ly, double z) {
    m.vertices.push_back({o.position.x + c * lx - s * ly, o.position.y + s * lx + c * ly, z});
  };
  if (o.kind == "cylinder") {
    const int n = 12;
    double r = 0.5 * o.size_x;
    for (int i = 0; i < n; ++i) {
      double a = 2.0 * kPi * i / n;
      place(r * std::cos(a), r * std::sin(a), 0.0);
    }
    for (int i = 0; i < n; ++i) {
      double a = 2.0 * kPi * i / n;
      place(r * std::cos(a), r * std::sin(a), o.height);
    }
    place(0.0, 0.0, 0.0);        // 2n: bottom center
    place(0.0, 0.0, o.height);   // 2n+1: top center
    for (int i = 0; i < n; ++i) {
      int j = (i + 1) % n;
      m.faces.push_back({i, j, n + j});
      m.faces.push_back({i, n + j, n + i});
      m.faces.push_back({2 * n, j, i});
      m.faces.push_back({2 * n + 1, n + i, n + j});
    }
  } else if (o.kind == "box") {
    double hx = 0.5 * o.size_x, hy = 0.5 * o.size_y;
    for (double z : {0.0, o.height}) {
      place(-hx, -hy, z);
      place(hx, -hy, z);
      place(hx, hy, z);
      place(-hx, hy, z);
    }
    auto quad = [&m](int a, int b, int cq, int d) {
      m.faces.push_back({a, b, cq});
      m.faces.push_back({a, cq, d});
    };
    quad(0, 2, 1, 3);  // bottom (never seen; keeps the solid closed)
    quad(4, 5, 6, 7);  // top
    quad(0, 1, 5, 4);
    quad(1, 2, 6, 5);
    quad(2, 3, 7, 6);
    quad(3, 0, 4, 7);
  } else {
    raise(Errc::invalid_argument, "unknown obstacle kind '" + o.kind + "'");
  }
  return m;
}

std::vector<ObstacleInstance> default_obstacle_catalog() {
  std::vector<ObstacleInstance> cat;
  auto add = [&cat](const char* kind, double sx, double sy, double h) {
    ObstacleInstance o;
    o.kind = kind;
    o.size_x = sx;
    o.size_y = sy;
    o.height = h;
    cat.push_back(o);
  };
  add("box", 0.5, 0.5, 1.0);
  add("box", 1.2, 0.4, 1.1);
  add("box", 0.8, 0.8, 0.7);
  add("box", 1.5, 0.3, 1.2);
  add("cylinder", 0.5, 0.5, 0.9);
  add("cylinder", 1.0, 1.0, 0.6);
  return cat;
}

double PedestrianTrack::duration() const {
  if (waypoints.size() < 2 || speed <= 0.0) return 0.0;
  double len = 0.0;
  for (size_t i = 1; i < waypoints.size(); ++i) len += (waypoints[i] - waypoints[i - 1]).norm();
  return len / speed;
}

Vec2 PedestrianTrack::position_at(double t) const {
  if (waypoints.empty()) return {0.0, 0.0};
  double s = std::max(0.0, t - start_time) * std::max(0.0, speed);
  for (size_t i = 1; i < waypoints.size(); ++i) {
    double seg = (waypoints[i] - waypoints[i - 1]).norm();
    if (s <= seg) {
      double f = seg > 0.0 ? s / seg : 0.0;
      return waypoints[i - 1] + (waypoints[i] - waypoints[i - 1]) * f;
    }
    s -= seg;
  }
  return waypoints.back();
}

double PedestrianTrack::heading_at(double t) const {
  if (waypoints.size() < 2) return 0.0;
  double s = std::max(0.0, t - start_time) * std::max(0.0, speed);
  size_t seg_i = waypoints.size() - 1;
  for (size_t i = 1; i < waypoints.size(); ++i) {
    double seg = (waypoints[i] - waypoints[i - 1]).norm();
    if (s <= seg) {
      seg_i = i;
      break;
    }
    s -= seg;
  }
  Vec2 d = waypoints[seg_i] - waypoints[seg_i - 1];
  return std::atan2(d.y, d.x);
}

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string with_level_prefix(const std::string& id, TaskLevel level) {
  std::string rest = id;
  size_t us = id.find('_');
  if (us != std::string::npos) {
    std::string head = id.substr(0, us);
    if (head == "simnav" || head == "obstnav" || head == "socialnav" || head == "multigoal")
      rest = id.substr(us + 1);
  }
  return std::string(task_level_name(level)) + "_" + rest;
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

struct GoalRoute {
  std::vector<double> cumulative;  // optimal length through goal 1..k
  double total = 0.0;
};

/// Shortest-path length through the goal sequence, legs joined at the free
/// cell nearest each goal box center.
GoalRoute route_through_goals(const OccupancyGrid& grid, const Vec2& start,
                              const std::vector<const Landmark*>& goals) {
  GoalRoute route;
  Vec2 cursor = start;
  for (const Landmark* lm : goals) {
    Vec2 c = lm->aabb.center().xy();
    auto goal_cell = nearest_free_cell(grid, c);
    auto start_cell = nearest_free_cell(grid, cursor);
    if (!goal_cell || !start_cell)
      raise(Errc::unreachable, "no free cell near a route endpoint");
    route.total += astar_cells(grid, *start_cell, *goal_cell).length;
    route.cumulative.push_back(route.total);
    cursor = grid.cell_center(*goal_cell);
  }
  return route;
}

}  // namespace

ScenarioGenReport generate_scenarios(const WorldModel& world, TaskLevel level,
                                     const ScenarioGenConfig& cfg) {
  if (cfg.n_landmarks <= 0 || cfg.per_landmark <= 0)
    raise(Errc::invalid_argument, "scenario counts must be positive");
  if (static_cast<int>(world.landmarks().size()) < cfg.n_landmarks)
    raise(Errc::invalid_argument, "world has fewer landmarks than requested");
  if (cfg.min_distance <= 0.0 || cfg.max_distance < cfg.min_distance)
    raise(Errc::invalid_argument, "bad start distance ring");

  const OccupancyGrid& grid = world.grid();
  ScenarioGenReport report;

  for (int li = 0; li < cfg.n_landmarks; ++li) {
    const Landmark& lm = world.landmarks()[static_cast<size_t>(li)];
    Vec2 center = lm.aabb.center().xy();
    auto goal_cell = nearest_free_cell(grid, center);
    if (!goal_cell) {
      ++report.skipped_landmarks;
      continue;
    }

    // Ring of free candidate cells, in raster order for reproducibility.
    std::vector<Cell> candidates;
    for (int y = 0; y < grid.ny; ++y)
      for (int x = 0; x < grid.nx; ++x) {
        Cell cell{x, y};
        if (grid.blocked(cell)) continue;
        double d = (grid.cell_center(cell) - center).norm();
        if (d >= cfg.min_distance && d <= cfg.max_distance) candidates.push_back(cell);
      }

    Rng rng(Rng::mix(cfg.seed, fnv1a(lm.id)));
    std::vector<Scenario> picked;
    while (static_cast<int>(picked.size()) < cfg.per_landmark && !candidates.empty()) {
      size_t at = rng.next_below(candidates.size());
      Cell cell = candidates[at];
      candidates.erase(candidates.begin() + static_cast<long>(at));
      try {
        astar_cells(grid, cell, *goal_cell);
      } catch (const Error&) {
        continue;  // free but disconnected from the goal
      }

      std::vector<std::string> goals{lm.id};
      if (level == TaskLevel::MultiGoal) {
        int chain = 2 + static_cast<int>(rng.next_below(4));  // 2..5 goals
        Cell cursor = *goal_cell;
        for (int j = 1; j < chain; ++j) {
          const Landmark& next =
              world.landmarks()[static_cast<size_t>((li + j) %
                                                    static_cast<int>(world.landmarks().size()))];
          auto next_cell = nearest_free_cell(grid, next.aabb.center().xy());
          if (!next_cell) break;
          try {
            astar_cells(grid, cursor, *next_cell);
          } catch (const Error&) {
            break;
          }
          goals.push_back(next.id);
          cursor = *next_cell;
        }
        if (goals.size() < 2) continue;  // could not build a chain from here
      }

      Vec2 pos = grid.cell_center(cell);
      double bearing = std::atan2(center.y - pos.y, center.x - pos.x);

      Scenario s;
      s.level = level;
      s.id = std::string(task_level_name(level)) + "_" + lm.id + "_" +
             std::to_string(picked.size());
      s.goals = goals;
      s.start = pos;
      s.yaw = wrap_angle(bearing + rng.uniform(-cfg.yaw_jitter, cfg.yaw_jitter));
      s.seed = Rng::mix(cfg.seed, fnv1a(s.id));
      picked.push_back(std::move(s));
    }

    if (static_cast<int>(picked.size()) < cfg.per_landmark) {
      ++report.skipped_landmarks;  // quota not met: drop the landmark entirely
      continue;
    }
    for (Scenario& s : picked) report.scenarios.push_back(std::move(s));
  }
  return report;
}

Scenario augment_obstnav(const Scenario& scenario, const WorldModel& world,
                         const std::vector<ObstacleInstance>& catalog, uint64_t seed) {
  if (catalog.empty()) raise(Errc::invalid_argument, "empty obstacle catalog");
  if (scenario.goals.empty()) raise(Errc::invalid_argument, "scenario has no goals");

  const OccupancyGrid& grid = world.grid();
  const Landmark& goal = world.landmark_by_id(scenario.goals.front());
  auto goal_cell = nearest_free_cell(grid, goal.aabb.center().xy());
  auto start_cell = nearest_free_cell(grid, scenario.start);
  if (!goal_cell || !start_cell) raise(Errc::unreachable, "scenario endpoints not on free cells");
  PathResult path = astar_cells(grid, *start_cell, *goal_cell);

  Vec2 goal_pt = grid.cell_center(*goal_cell);
  std::vector<Cell> interior;
  for (const Cell& c : path.cells) {
    Vec2 p = grid.cell_center(c);
    if ((p - scenario.start).norm() >= 2.0 && (p - goal_pt).norm() >= 2.0) interior.push_back(c);
  }

  Scenario out = scenario;
  out.level = TaskLevel::ObstNav;
  out.id = with_level_prefix(scenario.id, TaskLevel::ObstNav);
  out.seed = Rng::mix(seed, fnv1a(out.id));

  Rng rng(out.seed);
  const int max_attempts = 32;
  for (int attempt = 0; attempt < max_attempts && !interior.empty(); ++attempt) {
    size_t at = rng.next_below(interior.size());
    Cell cell = interior[at];
    interior.erase(interior.begin() + static_cast<long>(at));

    ObstacleInstance inst = catalog[rng.next_below(catalog.size())];
    inst.position = grid.cell_center(cell);
    inst.yaw = rng.uniform(0.0, 2.0 * kPi);

    OccupancyGrid stamped = grid;
    stamp_mesh(stamped, obstacle_mesh(inst), world.grid_params());
    if (stamped.blocked(*start_cell) || stamped.blocked(*goal_cell)) continue;
    try {
      astar_cells(stamped, *start_cell, *goal_cell);
    } catch (const Error&) {
      continue;  // placement seals the only corridor; resample
    }
    out.obstacles = {inst};
    return out;
  }
  raise(Errc::no_detour, "no obstacle placement leaves a detour for " + scenario.id);
}

Scenario augment_socialnav(const Scenario& scenario, const WorldModel& world, int count,
                           uint64_t seed) {
  if (scenario.goals.empty()) raise(Errc::invalid_argument, "scenario has no goals");
  count = std::clamp(count, 1, 3);

  const OccupancyGrid& grid = world.grid();
  const Landmark& goal = world.landmark_by_id(scenario.goals.front());
  auto goal_cell = nearest_free_cell(grid, goal.aabb.center().xy());
  auto start_cell = nearest_free_cell(grid, scenario.start);
  if (!goal_cell || !start_cell) raise(Errc::unreachable, "scenario endpoints not on free cells");
  PathResult path = astar_cells(grid, *start_cell, *goal_cell);

  std::vector<double> cum(path.cells.size(), 0.0);
  for (size_t i = 1; i < path.cells.size(); ++i)
    cum[i] = cum[i - 1] +
             (grid.cell_center(path.cells[i]) - grid.cell_center(path.cells[i - 1])).norm();

  Scenario out = scenario;
  out.level = TaskLevel::SocialNav;
  out.id = with_level_prefix(scenario.id, TaskLevel::SocialNav);
  out.seed = Rng::mix(seed, fnv1a(out.id));

  Rng rng(out.seed);
  double agent_speed = style_speed("walk");
  const double reach = 4.0;       // how far a crossing leg extends to each side
  const double probe = grid.resolution * 0.5;

  auto free_at = [&grid](const Vec2& p) {
    Cell c = grid.cell_at(p);
    return grid.in_bounds(c) && !grid.blocked(c);
  };

  for (int i = 0; i < count; ++i) {
    if (path.cells.size() < 3) break;
    double f = (i + 1.0) / (count + 1.0) + rng.uniform(-0.08, 0.08);
    f = std::clamp(f, 0.1, 0.9);
    double target_s = f * path.length;
    size_t idx = 1;
    while (idx + 1 < path.cells.size() && cum[idx] < target_s) ++idx;

    Vec2 cross = grid.cell_center(path.cells[idx]);
    Vec2 ahead = grid.cell_center(path.cells[std::min(idx + 1, path.cells.size() - 1)]);
    Vec2 behind = grid.cell_center(path.cells[idx - 1]);
    Vec2 dir = ahead - behind;
    double dn = dir.norm();
    if (dn < 1e-9) continue;
    Vec2 perp{-dir.y / dn, dir.x / dn};

    // March outward from the crossing point while the ground stays free.
    auto extend = [&](double sign) {
      double got = 0.0;
      while (got + probe <= reach &&
             free_at(cross + perp * (sign * (got + probe))))
        got += probe;
      return got;
    };
    double left = extend(1.0), right = extend(-1.0);
    // Both arms must be long enough that a walker who finishes the crossing
    // rests well clear of the agent's corridor instead of blocking it.
    if (left < 1.6 || right < 1.6) continue;

    bool from_left = rng.next_below(2) == 0;
    Vec2 a = cross + perp * left;
    Vec2 b = cross - perp * right;
    Vec2 src = from_left ? a : b;
    Vec2 dst = from_left ? b : a;
    if ((src - scenario.start).norm() < 0.5) std::swap(src, dst);
    if ((src - scenario.start).norm() < 0.5) continue;

    PedestrianTrack track;
    track.id = i;
    track.waypoints = {src, dst};
    track.speed = rng.uniform(0.8, 1.3);
    double t_agent = agent_speed > 0.0 ? cum[idx] / agent_speed : 0.0;
    track.start_time = std::max(0.0, t_agent - (src - cross).norm() / track.speed);
    out.pedestrians.push_back(std::move(track));
  }
  return out;
}

namespace {

json scenario_to_json(const Scenario& s) {
  json j;
  j["level"] = task_level_name(s.level);
  j["id"] = s.id;
  j["goals"] = s.goals;
  j["start"] = {s.start.x, s.start.y};
  j["yaw"] = s.yaw;
  j["seed"] = s.seed;
  j["obstacles"] = json::array();
  for (const ObstacleInstance& o : s.obstacles)
    j["obstacles"].push_back({{"kind", o.kind},
                              {"position", {o.position.x, o.position.y}},
                              {"size_x", o.size_x},
                              {"size_y", o.size_y},
                              {"height", o.height},
                              {"yaw", o.yaw}});
  j["pedestrians"] = json::array();
  for (const PedestrianTrack& t : s.pedestrians) {
    json wp = json::array();
    for (const Vec2& w : t.waypoints) wp.push_back({w.x, w.y});
    j["pedestrians"].push_back({{"id", t.id},
                                {"waypoints", wp},
                                {"speed", t.speed},
                                {"start_time", t.start_time},
                                {"radius", t.shape.radius},
                                {"height", t.shape.height}});
  }
  return j;
}

Scenario scenario_from_json(const json& j) {
  Scenario s;
  s.level = task_level_from_name(j.at("level").get<std::string>());
  s.id = j.at("id").get<std::string>();
  s.goals = j.at("goals").get<std::vector<std::string>>();
  s.start = {j.at("start").at(0).get<double>(), j.at("start").at(1).get<double>()};
  s.yaw = j.at("yaw").get<double>();
  s.seed = j.at("seed").get<uint64_t>();
  for (const json& o : j.value("obstacles", json::array())) {
    ObstacleInstance inst;
    inst.kind = o.at("kind").get<std::string>();
    inst.position = {o.at("position").at(0).get<double>(), o.at("position").at(1).get<double>()};
    inst.size_x = o.at("size_x").get<double>();
    inst.size_y = o.at("size_y").get<double>();
    inst.height = o.at("height").get<double>();
    inst.yaw = o.at("yaw").get<double>();
    s.obstacles.push_back(inst);
  }
  for (const json& t : j.value("pedestrians", json::array())) {
    PedestrianTrack track;
    track.id = t.at("id").get<int>();
    for (const json& w : t.at("waypoints"))
      track.waypoints.push_back({w.at(0).get<double>(), w.at(1).get<double>()});
    track.speed = t.at("speed").get<double>();
    track.start_time = t.at("start_time").get<double>();
    track.shape.radius = t.value("radius", track.shape.radius);
    track.shape.height = t.value("height", track.shape.height);
    s.pedestrians.push_back(std::move(track));
  }
  return s;
}

}  // namespace

void save_scenarios(const std::vector<Scenario>& scenarios, const std::string& path) {
  json j;
  j["scenarios"] = json::array();
  for (const Scenario& s : scenarios) j["scenarios"].push_back(scenario_to_json(s));
  std::ofstream out(path);
  if (!out) raise(Errc::io_failure, "cannot write " + path);
  out << j.dump(2) << "\n";
}

std::vector<Scenario> load_scenarios(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io_failure, "cannot read " + path);
  json j;
  try {
    in >> j;
    std::vector<Scenario> out;
    for (const json& sj : j.at("scenarios")) out.push_back(scenario_from_json(sj));
    return out;
  } catch (const json::exception& e) {
    raise(Errc::parse_failure, path + ": " + e.what());
  }
}

namespace {

class OraclePlanner final : public Planner {
 public:
  std::string name() const override { return "oracle"; }
  Decision decide(const DecisionContext& ctx) override {
    // Yield to nearby pedestrians before planning: a crossing track clears the
    // corridor within a couple of pauses, while walking through it is scored
    // as a collision.
    if (ctx.space->stop_and_wait) {
      for (const DynamicObstacleInfo& h : ctx.visible_humans) {
        if (h.distance > 3.0 || h.distance < 1e-9) continue;
        Vec2 rp = h.position - ctx.pose.position;
        // Rate at which the person closes on the (paused) agent; a walker who
        // already passed or who stands still never blocks progress.
        double closing = -(rp.dot(h.velocity)) / h.distance;
        if (closing < 0.2) continue;
        double bearing = std::atan2(rp.y, rp.x);
        double rel = std::abs(wrap_angle(bearing - ctx.pose.yaw));
        if (rel < 1.3) {
          char dist_txt[32];
          std::snprintf(dist_txt, sizeof(dist_txt), "%.1f", h.distance);
          Decision d;
          d.observation = "A pedestrian is crossing within " + std::string(dist_txt) +
                          " m of the walking line.";
          d.goal_analysis = "Goal '" + ctx.goal->label + "' stays put; the person has right of way.";
          d.plan = {"Hold position until the person clears the corridor.",
                    "Resume toward " + ctx.goal->label + "."};
          d.thought = "Waiting is cheaper than a detour and avoids a close pass.";
          d.action_token = "stop_and_wait";
          return d;
        }
      }
    }
    return oracle_decide(*ctx.grid, ctx.pose, *ctx.goal, *ctx.space);
  }
};

class GreedyPlanner final : public Planner {
 public:
  std::string name() const override { return "greedy"; }
  Decision decide(const DecisionContext& ctx) override {
    return greedy_decide(ctx.pose, *ctx.goal, *ctx.space);
  }
};

class VlmPlanner final : public Planner {
 public:
  explicit VlmPlanner(const EndpointConfig& endpoint) : client_(endpoint) {}

  std::string name() const override { return "vlm"; }
  bool wants_image() const override { return true; }

  Decision decide(const DecisionContext& ctx) override {
    PromptContext pc;
    pc.step = ctx.decision;
    pc.status = ctx.status;
    pc.global_goal = ctx.goal->description.empty()
                         ? ctx.goal->label
                         : ctx.goal->label + ": " + ctx.goal->description;
    pc.position = ctx.pose.position;
    pc.yaw = ctx.pose.yaw;
    pc.space = ctx.space;
    pc.memory = ctx.memory;
    pc.obstacles = ctx.visible_humans;
    pc.social = ctx.scenario && ctx.scenario->level == TaskLevel::SocialNav;
    PromptBundle bundle =
        build_request(pc, ctx.prompt_png ? *ctx.prompt_png : std::vector<uint8_t>{});
    return client_.query(bundle, *ctx.space);
  }

 private:
  VlmClient client_;
};

}  // namespace

std::unique_ptr<Planner> make_oracle_planner() { return std::make_unique<OraclePlanner>(); }
std::unique_ptr<Planner> make_greedy_planner() { return std::make_unique<GreedyPlanner>(); }
std::unique_ptr<Planner> make_vlm_planner(const EndpointConfig& endpoint) {
  return std::make_unique<VlmPlanner>(endpoint);
}

namespace {

std::vector<HumanObstacle> humans_at(const std::vector<PedestrianTrack>& tracks, double t) {
  std::vector<HumanObstacle> out;
  out.reserve(tracks.size());
  for (const PedestrianTrack& track : tracks) {
    HumanObstacle h;
    h.id = track.id;
    h.position = track.position_at(t);
    h.heading = track.heading_at(t);
    h.shape = track.shape;
    out.push_back(h);
  }
  return out;
}

json transcript_decision_line(int decision, int step, AgentStatus status, const AgentPose& pose,
                              const std::string& goal_id, bool goal_visible, size_t primitives,
                              const Decision& dec) {
  json j;
  j["type"] = "decision";
  j["decision"] = decision;
  j["step"] = step;
  j["status"] = status_name(status);
  j["position"] = {round3(pose.position.x), round3(pose.position.y)};
  j["yaw"] = round3(pose.yaw);
  j["goal"] = goal_id;
  j["goal_visible"] = goal_visible;
  j["primitives"] = primitives;
  if (dec.is_recovery())
    j["action"] = dec.action_token;
  else
    j["action"] = dec.action_index;
  j["fallback"] = dec.fallback;
  return j;
}

}  // namespace

EpisodeResult run_episode(const WorldModel& world, const Scenario& scenario, Planner& planner,
                          const EpisodeConfig& cfg) {
  EpisodeResult result;
  result.scenario_id = scenario.id;
  result.level = scenario.level;
  result.goals_total = static_cast<int>(scenario.goals.size());

  try {
    if (scenario.goals.empty()) raise(Errc::invalid_argument, "scenario has no goals");
    if (cfg.decide_every <= 0 || cfg.sim_hz <= 0.0)
      raise(Errc::invalid_argument, "bad episode stepping parameters");

    // Episode-local scene when obstacles are placed; otherwise share the
    // world's immutable structures.
    const MeshBvh* bvh = &world.bvh();
    const ProximityIndex* prox = &world.proximity();
    const OccupancyGrid* grid = &world.grid();
    TriMesh merged;
    std::unique_ptr<MeshBvh> local_bvh;
    std::unique_ptr<ProximityIndex> local_prox;
    std::unique_ptr<OccupancyGrid> local_grid;
    if (!scenario.obstacles.empty()) {
      merged = world.mesh();
      auto stamped = std::make_unique<OccupancyGrid>(world.grid());
      for (const ObstacleInstance& o : scenario.obstacles) {
        TriMesh om = obstacle_mesh(o);
        stamp_mesh(*stamped, om, world.grid_params());
        merged.append(om);
      }
      local_bvh = std::make_unique<MeshBvh>(merged);
      TriMesh contact = collision_surface(merged, world.grid_params().min_height);
      local_prox = std::make_unique<ProximityIndex>(
          contact.empty() ? ProximityIndex() : ProximityIndex::build(contact));
      local_grid = std::move(stamped);
      bvh = local_bvh.get();
      prox = local_prox.get();
      grid = local_grid.get();
    }

    std::vector<const Landmark*> goals;
    for (const std::string& gid : scenario.goals) goals.push_back(&world.landmark_by_id(gid));

    std::vector<double> goals_cumulative;  // optimal length through goal 1..k
    try {
      GoalRoute route = route_through_goals(*grid, scenario.start, goals);
      result.optimal_length = route.total;
      goals_cumulative = route.cumulative;
      result.transcript.push_back(
          json{{"type", "route"}, {"optimal_length", round3(route.total)}}.dump());
    } catch (const Error&) {
      // Degenerate scenario: fall back to straight-line chain length so the
      // l > 0 invariant holds even for a failed episode.
      double total = 0.0;
      Vec2 cursor = scenario.start;
      for (const Landmark* lm : goals) {
        Vec2 c = lm->aabb.center().xy();
        total += (c - cursor).norm();
        goals_cumulative.push_back(total);
        cursor = c;
      }
      result.optimal_length = std::max(total, 1e-9);
    }

    AgentPose pose{scenario.start, scenario.yaw};
    Memory memory;
    int goal_index = 0;
    int step = 0;
    bool done = false;

    auto record_goal_progress = [&]() {
      const Landmark* lm = goals[static_cast<size_t>(goal_index)];
      double d = nearest_bbox_distance({pose.position.x, pose.position.y, 0.0}, *lm);
      while (d <= cfg.success_distance) {
        ++goal_index;
        result.goals_reached = goal_index;
        result.optimal_reached_length =
            goals_cumulative.empty()
                ? result.optimal_length
                : goals_cumulative[static_cast<size_t>(goal_index - 1)];
        if (goal_index >= static_cast<int>(goals.size())) {
          result.success = true;
          done = true;
          return;
        }
        lm = goals[static_cast<size_t>(goal_index)];
        d = nearest_bbox_distance({pose.position.x, pose.position.y, 0.0}, *lm);
      }
    };

    auto check_step = [&]() {
      double t = step / cfg.sim_hz;
      AgentBody body = AgentBody::at({pose.position.x, pose.position.y, 0.0}, pose.yaw, cfg.body);
      if (check_scene_collision(body, *prox).colliding) {
        result.collision_events.push_back({step, "scene"});
        result.transcript.push_back(
            json{{"type", "collision"}, {"step", step}, {"kind", "scene"}}.dump());
      }
      for (const PedestrianTrack& track : scenario.pedestrians) {
        Vec2 p = track.position_at(t);
        if (check_human_collision({pose.position.x, pose.position.y, 0.0}, {p.x, p.y, 0.0})) {
          result.collision_events.push_back({step, "human"});
          result.transcript.push_back(
              json{{"type", "collision"}, {"step", step}, {"kind", "human"}}.dump());
          break;
        }
      }
      record_goal_progress();
    };

    record_goal_progress();

    while (!done && result.decisions < cfg.max_decisions) {
      double t_now = step / cfg.sim_hz;
      std::vector<HumanObstacle> humans = humans_at(scenario.pedestrians, t_now);
      EgoObservation obs = render_ego(*bvh, humans, pose, cfg.camera);
      ActionSpace space = propose_actions(obs, cfg.camera, pose, cfg.proposal);
      space.stop_and_wait = scenario.level == TaskLevel::SocialNav;

      const Landmark* goal = goals[static_cast<size_t>(goal_index)];
      obs.goal_box = detect_goal(obs, *goal, pose, cfg.camera, cfg.goal_min_visibility,
                                 cfg.goal_miss_rate,
                                 Rng::mix(cfg.seed, static_cast<uint64_t>(result.decisions)));
      obs.human_boxes = detect_humans(obs, humans);
      AgentStatus status = determine_status(space, obs.goal_box);

      DecisionContext ctx;
      ctx.decision = result.decisions;
      ctx.status = status;
      ctx.pose = pose;
      ctx.observation = &obs;
      ctx.space = &space;
      ctx.goal = goal;
      ctx.grid = grid;
      ctx.memory = &memory;
      ctx.scenario = &scenario;
      for (const DetectionBox& box : obs.human_boxes)
        for (const HumanObstacle& h : humans)
          if (h.id == box.agent_id) {
            double dist = (h.position - pose.position).norm();
            Vec2 vel;
            for (const PedestrianTrack& track : scenario.pedestrians)
              if (track.id == h.id) {
                Vec2 later = track.position_at(t_now + 0.25);
                vel = (later - h.position) * 4.0;
                break;
              }
            ctx.visible_humans.push_back({h.id, h.position, dist, vel});
            break;
          }

      std::vector<uint8_t> png;
      bool want_png = planner.wants_image() || (cfg.save_images && !cfg.transcript_dir.empty());
      if (want_png) {
        std::vector<ArrowOverlay> arrows;
        for (const ActionPrimitive& p : space.primitives)
          arrows.push_back({p.index, p.pixel_u, p.pixel_v});
        Image prompt = compose_prompt_image(obs, arrows, obs.goal_box, obs.human_boxes);
        png = encode_png(prompt);
        if (planner.wants_image()) ctx.prompt_png = &png;
      }

      Decision dec;
      try {
        dec = planner.decide(ctx);
        validate_action(space, dec);
      } catch (const std::exception& e) {
        result.planner_error = true;
        result.error_message = e.what();
        result.transcript.push_back(
            json{{"type", "planner_error"}, {"decision", result.decisions}, {"message", e.what()}}
                .dump());
        break;
      }

      update_memory(memory, dec);
      result.transcript.push_back(transcript_decision_line(result.decisions, step, status, pose,
                                                           goal->id, obs.goal_box.has_value(),
                                                           space.primitives.size(), dec)
                                      .dump());
      if (!cfg.transcript_dir.empty() && cfg.save_images && !png.empty()) {
        std::filesystem::path dir(cfg.transcript_dir);
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        std::ofstream img(dir / (scenario.id + "_d" + std::to_string(result.decisions) + ".png"),
                          std::ios::binary);
        img.write(reinterpret_cast<const char*>(png.data()),
                  static_cast<std::streamsize>(png.size()));
      }

      double dt = 1.0 / cfg.sim_hz;
      if (dec.is_recovery()) {
        double dyaw = recovery_turn_angle(dec.action_token) / cfg.decide_every;
        for (int i = 0; i < cfg.decide_every && !done; ++i) {
          pose.yaw = wrap_angle(pose.yaw + dyaw);
          ++step;
          check_step();
        }
      } else {
        const ActionPrimitive& prim =
            space.primitives[static_cast<size_t>(dec.action_index - 1)];
        Vec2 target = prim.target_3d.xy();
        Waypoints wp = make_waypoints(pose.position, target, cfg.trajectory_frames);
        std::vector<double> ref = reference_headings(wp, pose.yaw);
        Trajectory init;
        init.root.reserve(wp.points.size());
        init.heading.reserve(wp.points.size());
        // Initial guess: straight clip that turns into the path direction
        // over the first 8 frames; the optimizer then pins the keyframes.
        for (size_t i = 0; i < wp.points.size(); ++i) {
          init.root.push_back({wp.points[i].x, wp.points[i].y, 0.0});
          double blend = std::min(1.0, static_cast<double>(i) / 8.0);
          init.heading.push_back(pose.yaw + wrap_angle(ref[i] - pose.yaw) * blend);
        }
        Trajectory traj =
            optimize_trajectory(init, wp, ref, PrevPose{pose.position, pose.yaw}, cfg.guidance);

        ExecState exec{pose.position, pose.yaw, 0.0};
        for (int i = 0; i < cfg.decide_every && !done; ++i) {
          exec = execute_step(exec, traj, cfg.motion_style, dt);
          result.path_length += (exec.position - pose.position).norm();
          pose.position = exec.position;
          pose.yaw = exec.yaw;
          ++step;
          check_step();
        }
      }
      ++result.decisions;
    }

    result.transcript.push_back(json{{"type", "end"},
                                     {"success", result.success},
                                     {"decisions", result.decisions},
                                     {"steps", step},
                                     {"path_length", round3(result.path_length)},
                                     {"goals_reached", result.goals_reached}}
                                    .dump());
  } catch (const std::exception& e) {
    result.success = false;
    result.error_message = e.what();
    if (result.optimal_length <= 0.0) result.optimal_length = 1e-9;
    result.transcript.push_back(
        json{{"type", "episode_error"}, {"message", e.what()}}.dump());
  }

  if (!cfg.transcript_dir.empty()) {
    std::filesystem::path dir(cfg.transcript_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::ofstream out(dir / (scenario.id + ".jsonl"));
    for (const std::string& line : result.transcript) out << line << "\n";
  }
  return result;
}

MetricsReport compute_metrics(const std::vector<std::vector<EpisodeResult>>& results_by_run) {
  size_t total = 0;
  for (const auto& run : results_by_run) total += run.size();
  if (total == 0) raise(Errc::empty_results, "no episode results to aggregate");

  auto level_of = [](const EpisodeResult& r) { return std::string(task_level_name(r.level)); };

  // Stable level order: first appearance across run 0, then later runs.
  std::vector<std::string> level_names;
  for (const auto& run : results_by_run)
    for (const EpisodeResult& r : run) {
      std::string name = level_of(r);
      if (std::find(level_names.begin(), level_names.end(), name) == level_names.end())
        level_names.push_back(name);
    }

  auto metrics_over = [](const std::vector<const EpisodeResult*>& eps) {
    LevelMetrics m;
    m.episodes = static_cast<int>(eps.size());
    if (eps.empty()) return m;
    double n = static_cast<double>(eps.size());
    for (const EpisodeResult* r : eps) {
      double l = r->optimal_length;
      double p = r->path_length;
      if (r->success) {
        m.sr += 1.0;
        m.spl += l / std::max(p, l);
      }
      if (r->collided()) m.cr += 1.0;
      double progress =
          r->goals_total > 0
              ? static_cast<double>(r->goals_reached) / static_cast<double>(r->goals_total)
              : 0.0;
      m.pr += progress;
      double lr = r->optimal_reached_length;
      if (progress > 0.0 && lr > 0.0) m.ppl += progress * lr / std::max(p, lr);
    }
    m.sr /= n;
    m.spl /= n;
    m.cr /= n;
    m.pr /= n;
    m.ppl /= n;
    return m;
  };

  auto average = [&](const std::string* level_filter) {
    LevelMetrics avg;
    int contributing_runs = 0;
    for (const auto& run : results_by_run) {
      std::vector<const EpisodeResult*> eps;
      for (const EpisodeResult& r : run)
        if (!level_filter || level_of(r) == *level_filter) eps.push_back(&r);
      if (eps.empty()) continue;
      LevelMetrics m = metrics_over(eps);
      avg.sr += m.sr;
      avg.spl += m.spl;
      avg.cr += m.cr;
      avg.pr += m.pr;
      avg.ppl += m.ppl;
      avg.episodes = m.episodes;
      ++contributing_runs;
    }
    if (contributing_runs > 0) {
      double n = contributing_runs;
      avg.sr /= n;
      avg.spl /= n;
      avg.cr /= n;
      avg.pr /= n;
      avg.ppl /= n;
    }
    return avg;
  };

  MetricsReport report;
  report.runs = static_cast<int>(results_by_run.size());
  report.overall = average(nullptr);
  for (const std::string& name : level_names)
    report.per_level.emplace_back(name, average(&name));
  return report;
}

BenchmarkOutcome run_benchmark(const WorldModel& world, const std::vector<Scenario>& scenarios,
                               Planner& planner, const BenchmarkConfig& cfg) {
  if (cfg.runs <= 0) raise(Errc::invalid_argument, "runs must be positive");

  BenchmarkOutcome outcome;
  outcome.results.assign(static_cast<size_t>(cfg.runs),
                         std::vector<EpisodeResult>(scenarios.size()));

  size_t tasks = static_cast<size_t>(cfg.runs) * scenarios.size();
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= tasks) return;
      size_t run = i / scenarios.size();
      size_t sc = i % scenarios.size();
      EpisodeConfig ec = cfg.episode;
      ec.seed = Rng::mix(Rng::mix(cfg.seed, run), fnv1a(scenarios[sc].id));
      if (!cfg.episode.transcript_dir.empty())
        ec.transcript_dir = cfg.episode.transcript_dir + "/run" + std::to_string(run);
      outcome.results[run][sc] = run_episode(world, scenarios[sc], planner, ec);
    }
  };

  size_t jobs = static_cast<size_t>(std::max(1, cfg.jobs));
  jobs = std::min(jobs, std::max<size_t>(1, tasks));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (size_t i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  outcome.report = compute_metrics(outcome.results);
  return outcome;
}

namespace {

json episode_json(const EpisodeResult& r) {
  json j;
  j["scenario"] = r.scenario_id;
  j["level"] = task_level_name(r.level);
  j["success"] = r.success;
  j["path_length"] = r.path_length;
  j["optimal_length"] = r.optimal_length;
  j["optimal_reached_length"] = r.optimal_reached_length;
  j["decisions"] = r.decisions;
  j["goals_total"] = r.goals_total;
  j["goals_reached"] = r.goals_reached;
  j["collisions"] = r.collision_events.size();
  j["first_collision_step"] = r.first_collision_step();
  j["planner_error"] = r.planner_error;
  j["error_message"] = r.error_message;
  return j;
}

void append_metrics_row(std::string& out, const std::string& name, const LevelMetrics& m,
                        int runs, bool csv) {
  char buf[256];
  if (csv)
    std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", name.c_str(),
                  m.episodes, runs, m.sr, m.spl, m.cr, m.pr, m.ppl);
  else
    std::snprintf(buf, sizeof(buf), "%-10s %9d %7.3f %7.3f %7.3f %7.3f %7.3f\n", name.c_str(),
                  m.episodes, m.sr, m.spl, m.cr, m.pr, m.ppl);
  out += buf;
}

}  // namespace

std::string episode_to_json(const EpisodeResult& result) { return episode_json(result).dump(); }

void save_results_jsonl(const std::vector<std::vector<EpisodeResult>>& results_by_run,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Errc::io_failure, "cannot write " + path);
  for (size_t run = 0; run < results_by_run.size(); ++run)
    for (const EpisodeResult& r : results_by_run[run]) {
      json j = episode_json(r);
      j["run"] = run;
      out << j.dump() << "\n";
    }
}

void save_metrics_csv(const MetricsReport& report, const std::string& path) {
  std::string out = "level,episodes,runs,sr,spl,cr,pr,ppl\n";
  append_metrics_row(out, "all", report.overall, report.runs, true);
  for (const auto& [name, m] : report.per_level) append_metrics_row(out, name, m, report.runs, true);
  std::ofstream f(path);
  if (!f) raise(Errc::io_failure, "cannot write " + path);
  f << out;
}

std::string metrics_table(const MetricsReport& report) {
  std::string out = "level       episodes      SR     SPL      CR      PR     PPL\n";
  for (const auto& [name, m] : report.per_level)
    append_metrics_row(out, name, m, report.runs, false);
  append_metrics_row(out, "all", report.overall, report.runs, false);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "(averaged over %d run%s)\n", report.runs,
                report.runs == 1 ? "" : "s");
  out += buf;
  return out;
}

}  // namespace vgh
