#include "vgh.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vgh/benchmark.hpp"
#include "vgh/demo.hpp"
#include "vgh/errors.hpp"
#include "vgh/semantic_field.hpp"
#include "vgh/world.hpp"

using nlohmann::json;

struct vgh_world {
  vgh::WorldModel model;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename F>
int guarded(F&& fn) {
  try {
    fn();
    g_last_error.clear();
    return VGH_OK;
  } catch (const vgh::Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code()) + 1;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return VGH_E_INTERNAL;
  }
}

json metrics_json(const vgh::LevelMetrics& m) {
  return json{{"sr", m.sr},   {"spl", m.spl}, {"cr", m.cr},
              {"pr", m.pr},   {"ppl", m.ppl}, {"episodes", m.episodes}};
}

json report_json(const vgh::MetricsReport& report) {
  json j;
  j["runs"] = report.runs;
  j["overall"] = metrics_json(report.overall);
  j["levels"] = json::array();
  for (const auto& [name, m] : report.per_level) {
    json row = metrics_json(m);
    row["level"] = name;
    j["levels"].push_back(std::move(row));
  }
  j["table"] = vgh::metrics_table(report);
  return j;
}

json parse_config(const char* config_json) {
  if (config_json == nullptr || config_json[0] == '\0') return json::object();
  try {
    json j = json::parse(config_json);
    if (!j.is_object()) vgh::raise(vgh::Errc::parse_failure, "config must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    vgh::raise(vgh::Errc::parse_failure, std::string("config: ") + e.what());
  }
}

}  // namespace

extern "C" {

const char* vgh_version(void) { return "0.1.0"; }

const char* vgh_last_error(void) { return g_last_error.c_str(); }

const char* vgh_error_name(int code) {
  if (code == VGH_OK) return "ok";
  if (code >= 1 && code <= VGH_E_EMPTY_RESULTS)
    return vgh::errc_name(static_cast<vgh::Errc>(code - 1));
  return "internal";
}

void vgh_free(char* text) { std::free(text); }

int vgh_demo_bundle(const char* dir) {
  return guarded([&] {
    if (!dir) vgh::raise(vgh::Errc::invalid_argument, "dir is null");
    vgh::write_world_bundle(vgh::make_demo_world(), dir);
  });
}

int vgh_fixture_bundle(const char* dir) {
  return guarded([&] {
    if (!dir) vgh::raise(vgh::Errc::invalid_argument, "dir is null");
    vgh::write_fixture_bundle(vgh::make_semantic_fixture(), dir);
  });
}

int vgh_prepare_bundle(const char* mesh_path, const char* landmarks_path,
                       const char* out_dir) {
  return guarded([&] {
    if (!mesh_path || !landmarks_path || !out_dir)
      vgh::raise(vgh::Errc::invalid_argument, "prepare arguments must be non-null");
    vgh::TriMesh raw = vgh::load_obj(mesh_path);
    auto [frame, aligned] = vgh::align_to_gravity(raw);
    std::vector<vgh::Landmark> landmarks = vgh::load_landmarks(landmarks_path);
    for (vgh::Landmark& lm : landmarks) {
      vgh::Vec3 lo = frame.apply(lm.aabb.min);
      vgh::Vec3 hi = frame.apply(lm.aabb.max);
      lm.aabb.min = {std::min(lo.x, hi.x), std::min(lo.y, hi.y), std::min(lo.z, hi.z)};
      lm.aabb.max = {std::max(lo.x, hi.x), std::max(lo.y, hi.y), std::max(lo.z, hi.z)};
    }
    vgh::GridParams params;
    vgh::OccupancyGrid grid = vgh::build_occupancy_grid(aligned, params);
    vgh::WorldModel world(std::move(aligned), frame, std::move(grid), std::move(landmarks),
                          params);
    vgh::write_world_bundle(world, out_dir);
  });
}

int vgh_world_open(const char* bundle_dir, vgh_world** out) {
  return guarded([&] {
    if (!bundle_dir || !out)
      vgh::raise(vgh::Errc::invalid_argument, "bundle_dir and out must be non-null");
    *out = new vgh_world{vgh::load_world_bundle(bundle_dir)};
  });
}

void vgh_world_close(vgh_world* world) { delete world; }

int vgh_world_stats(const vgh_world* world, char** out_json) {
  return guarded([&] {
    if (!world || !out_json)
      vgh::raise(vgh::Errc::invalid_argument, "world and out_json must be non-null");
    const vgh::WorldModel& m = world->model;
    vgh::Aabb bounds = m.mesh().bounds();
    json j;
    j["mesh"] = {{"vertices", m.mesh().vertices.size()}, {"faces", m.mesh().faces.size()}};
    j["bounds"] = {{bounds.min.x, bounds.min.y, bounds.min.z},
                   {bounds.max.x, bounds.max.y, bounds.max.z}};
    j["grid"] = {{"nx", m.grid().nx},
                 {"ny", m.grid().ny},
                 {"resolution", m.grid().resolution},
                 {"origin", {m.grid().origin.x, m.grid().origin.y}},
                 {"blocked", m.grid().blocked_count()},
                 {"free", m.grid().nx * m.grid().ny - m.grid().blocked_count()}};
    j["landmarks"] = m.landmarks().size();
    *out_json = dup_string(j.dump(2));
  });
}

int vgh_bench_run(const vgh_world* world, const char* config_json, char** out_report_json) {
  return guarded([&] {
    if (!world || !out_report_json)
      vgh::raise(vgh::Errc::invalid_argument, "world and out_report_json must be non-null");
    json cfg = parse_config(config_json);
    const vgh::WorldModel& model = world->model;

    vgh::TaskLevel level = vgh::task_level_from_name(cfg.value("level", "simnav"));
    uint64_t seed = cfg.value("seed", static_cast<uint64_t>(0));

    std::vector<vgh::Scenario> scenarios;
    if (cfg.contains("scenario_file")) {
      scenarios = vgh::load_scenarios(cfg.at("scenario_file").get<std::string>());
    } else {
      vgh::ScenarioGenConfig gen;
      gen.n_landmarks = cfg.value("n_landmarks", static_cast<int>(model.landmarks().size()));
      gen.per_landmark = cfg.value("per_landmark", 5);
      gen.seed = seed;
      bool augmented = level == vgh::TaskLevel::ObstNav || level == vgh::TaskLevel::SocialNav;
      vgh::ScenarioGenReport report =
          vgh::generate_scenarios(model, augmented ? vgh::TaskLevel::SimNav : level, gen);
      scenarios = std::move(report.scenarios);
      if (level == vgh::TaskLevel::ObstNav) {
        auto catalog = vgh::default_obstacle_catalog();
        for (vgh::Scenario& s : scenarios) s = vgh::augment_obstnav(s, model, catalog, seed);
      } else if (level == vgh::TaskLevel::SocialNav) {
        int count = cfg.value("pedestrians", 2);
        for (vgh::Scenario& s : scenarios) s = vgh::augment_socialnav(s, model, count, seed);
      }
    }

    std::unique_ptr<vgh::Planner> planner;
    std::string which = cfg.value("planner", "oracle");
    if (which == "oracle") {
      planner = vgh::make_oracle_planner();
    } else if (which == "greedy") {
      planner = vgh::make_greedy_planner();
    } else if (which == "vlm") {
      vgh::EndpointConfig ep;
      if (cfg.contains("endpoint")) {
        const json& e = cfg.at("endpoint");
        ep.base_url = e.value("base_url", ep.base_url);
        ep.model = e.value("model", ep.model);
        ep.timeout_s = e.value("timeout_s", ep.timeout_s);
        ep.max_retries = e.value("max_retries", ep.max_retries);
        ep.temperature = e.value("temperature", ep.temperature);
        ep.api_key_env = e.value("api_key_env", ep.api_key_env);
      }
      planner = vgh::make_vlm_planner(ep);
    } else {
      vgh::raise(vgh::Errc::invalid_argument, "unknown planner '" + which + "'");
    }

    vgh::BenchmarkConfig bench;
    bench.runs = cfg.value("runs", 3);
    bench.jobs = cfg.value("jobs", 1);
    bench.seed = seed;
    bench.episode.max_decisions = cfg.value("max_decisions", bench.episode.max_decisions);
    bench.episode.decide_every = cfg.value("decide_every", bench.episode.decide_every);
    bench.episode.success_distance =
        cfg.value("success_distance", bench.episode.success_distance);
    bench.episode.goal_miss_rate = cfg.value("goal_miss_rate", bench.episode.goal_miss_rate);
    bench.episode.save_images = cfg.value("save_images", false);

    std::string out_dir = cfg.value("out_dir", "");
    if (!out_dir.empty()) bench.episode.transcript_dir = out_dir + "/transcripts";

    vgh::BenchmarkOutcome outcome = vgh::run_benchmark(model, scenarios, *planner, bench);

    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      vgh::save_scenarios(scenarios, out_dir + "/scenarios.json");
      vgh::save_results_jsonl(outcome.results, out_dir + "/results.jsonl");
      vgh::save_metrics_csv(outcome.report, out_dir + "/metrics.csv");
      std::ofstream table(out_dir + "/metrics.txt");
      table << vgh::metrics_table(outcome.report);
    }

    *out_report_json = dup_string(report_json(outcome.report).dump(2));
  });
}

int vgh_semfield_run(const char* config_json, char** out_report_json) {
  return guarded([&] {
    if (!out_report_json)
      vgh::raise(vgh::Errc::invalid_argument, "out_report_json must be non-null");
    json cfg = parse_config(config_json);

    std::string bundle = cfg.value("bundle", "");
    auto path_of = [&](const char* key, const char* name) {
      if (cfg.contains(key)) return cfg.at(key).get<std::string>();
      if (bundle.empty())
        vgh::raise(vgh::Errc::invalid_argument,
                   std::string("config needs '") + key + "' or 'bundle'");
      return bundle + "/" + name;
    };

    vgh::SplatScene scene = vgh::load_splat_scene(path_of("scene", "splats.json"));
    std::vector<vgh::SplatCamera> cams = vgh::load_cameras(path_of("cameras", "cameras.json"));
    std::vector<std::vector<vgh::Mask>> masks =
        vgh::load_masks(path_of("masks", "masks.json"));
    if (masks.size() != cams.size())
      vgh::raise(vgh::Errc::shape_mismatch, "mask stacks do not match the camera count");

    vgh::PipelineConfig pipe = vgh::fixture_pipeline_config();
    pipe.use_occlusion_masks = cfg.value("use_occlusion_masks", true);
    pipe.use_view_selection = cfg.value("use_view_selection", true);
    pipe.seed = cfg.value("seed", static_cast<uint64_t>(0));
    pipe.k1 = cfg.value("k1", pipe.k1);
    pipe.k2 = cfg.value("k2", pipe.k2);
    pipe.delta_vis = cfg.value("delta_vis", pipe.delta_vis);
    pipe.stage1.iterations = cfg.value("iterations", pipe.stage1.iterations);

    vgh::PipelineResult result = vgh::run_semantic_pipeline(scene, cams, masks, pipe);

    json rep;
    rep["miou"] = result.score.miou;
    rep["macc"] = result.score.macc;
    rep["per_instance_iou"] = result.per_instance_iou;
    rep["labels"] = result.labels;
    rep["stage1_iterations"] = result.stage1_loss.size();
    rep["stage1_final_loss"] =
        result.stage1_loss.empty() ? 0.0 : result.stage1_loss.back();
    rep["use_occlusion_masks"] = pipe.use_occlusion_masks;
    rep["use_view_selection"] = pipe.use_view_selection;

    std::string out_dir = cfg.value("out_dir", "");
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      vgh::save_splat_scene(result.scene, out_dir + "/trained_splats.json");

      json cb;
      cb["k1"] = result.codebook.k1;
      cb["k2"] = result.codebook.k2;
      cb["pos_weight"] = result.codebook.pos_weight;
      cb["root_centroids"] = result.codebook.root_centroids;
      cb["leaf_centroids"] = result.codebook.leaf_centroids;
      cb["root_assign"] = result.codebook.root_assign;
      cb["leaf_assign"] = result.codebook.leaf_assign;
      std::ofstream cbf(out_dir + "/codebook.json");
      cbf << cb.dump() << "\n";

      std::ofstream lf(out_dir + "/labels.json");
      lf << json{{"labels", result.labels}}.dump() << "\n";

      // Predicted per-view masks, one stack entry per distinct label.
      std::vector<int> ids;
      for (int l : result.labels)
        if (std::find(ids.begin(), ids.end(), l) == ids.end()) ids.push_back(l);
      std::sort(ids.begin(), ids.end());
      vgh::SplatScene labeled = result.scene;
      for (size_t i = 0; i < labeled.splats.size(); ++i)
        labeled.splats[i].gt_instance = result.labels[i];
      std::vector<std::vector<vgh::Mask>> pred;
      for (const vgh::SplatCamera& cam : cams)
        pred.push_back(vgh::gt_instance_masks(labeled, cam, ids));
      int w = cams.empty() ? 0 : cams.front().width;
      int h = cams.empty() ? 0 : cams.front().height;
      vgh::save_masks(pred, w, h, out_dir + "/pred_masks.json");

      std::ofstream rf(out_dir + "/report.json");
      rf << rep.dump(2) << "\n";
    }

    *out_report_json = dup_string(rep.dump(2));
  });
}

int vgh_report(const char* results_jsonl_path, char** out_report_json) {
  return guarded([&] {
    if (!results_jsonl_path || !out_report_json)
      vgh::raise(vgh::Errc::invalid_argument, "path and out_report_json must be non-null");
    std::ifstream in(results_jsonl_path);
    if (!in)
      vgh::raise(vgh::Errc::io_failure, std::string("cannot read ") + results_jsonl_path);

    std::vector<std::vector<vgh::EpisodeResult>> by_run;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
        vgh::EpisodeResult r;
        r.scenario_id = j.at("scenario").get<std::string>();
        r.level = vgh::task_level_from_name(j.at("level").get<std::string>());
        r.success = j.at("success").get<bool>();
        r.path_length = j.at("path_length").get<double>();
        r.optimal_length = j.at("optimal_length").get<double>();
        r.optimal_reached_length = j.at("optimal_reached_length").get<double>();
        r.decisions = j.at("decisions").get<int>();
        r.goals_total = j.at("goals_total").get<int>();
        r.goals_reached = j.at("goals_reached").get<int>();
        r.planner_error = j.value("planner_error", false);
        r.error_message = j.value("error_message", "");
        size_t collisions = j.value("collisions", static_cast<size_t>(0));
        int first = j.value("first_collision_step", -1);
        for (size_t c = 0; c < collisions; ++c)
          r.collision_events.push_back({c == 0 ? first : -1, "scene"});
        size_t run = j.value("run", static_cast<size_t>(0));
        if (by_run.size() <= run) by_run.resize(run + 1);
        by_run[run].push_back(std::move(r));
      } catch (const json::exception& e) {
        vgh::raise(vgh::Errc::parse_failure, std::string(results_jsonl_path) + ":" +
                                                 std::to_string(line_no) + ": " + e.what());
      }
    }
    vgh::MetricsReport report = vgh::compute_metrics(by_run);
    *out_report_json = dup_string(report_json(report).dump(2));
  });
}

}  // extern "C"
