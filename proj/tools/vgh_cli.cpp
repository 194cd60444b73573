// Command-line front end. Talks to the library exclusively through the C
// interface in vgh.h; everything else here is argument plumbing.

#include <cstdio>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vgh.h"

using nlohmann::json;

namespace {

// 0 success, 2 usage or input problem, 3 runtime failure.
int exit_code_for(int vgh_code) {
  switch (vgh_code) {
    case VGH_OK:
      return 0;
    case VGH_E_INVALID_ARGUMENT:
    case VGH_E_IO:
    case VGH_E_PARSE:
      return 2;
    default:
      return 3;
  }
}

int fail(const char* verb, int code) {
  std::fprintf(stderr, "vgh: %s: %s (%s)\n", verb, vgh_last_error(), vgh_error_name(code));
  return exit_code_for(code);
}

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { vgh_free(ptr); }
};

struct WorldHandle {
  vgh_world* ptr = nullptr;
  ~WorldHandle() { vgh_world_close(ptr); }
};

struct PrepareArgs {
  bool demo = false;
  std::string mesh, landmarks, out;
};

struct BenchArgs {
  std::string world, out, level = "simnav", planner = "oracle";
  std::string endpoint, model, scenarios;
  int runs = 3, jobs = 1, per_landmark = 5, landmarks = 0, max_decisions = 0, pedestrians = 2;
  uint64_t seed = 0;
  double timeout_s = 0.0;
  bool save_images = false;
};

struct SemfieldArgs {
  std::string bundle, scene, cameras, masks, out;
  bool no_occlusion = false, no_view_selection = false;
  uint64_t seed = 0;
  int k1 = 0, k2 = 0, iterations = 0;
};

struct ReportArgs {
  std::string results, csv;
};

int run_prepare(const PrepareArgs& a) {
  if (a.demo) {
    int rc = vgh_demo_bundle(a.out.c_str());
    if (rc != VGH_OK) return fail("prepare", rc);
    rc = vgh_fixture_bundle((a.out + "/fixture").c_str());
    if (rc != VGH_OK) return fail("prepare", rc);
  } else {
    if (a.mesh.empty() || a.landmarks.empty()) {
      std::fprintf(stderr, "vgh: prepare: --mesh and --landmarks are required without --demo\n");
      return 2;
    }
    int rc = vgh_prepare_bundle(a.mesh.c_str(), a.landmarks.c_str(), a.out.c_str());
    if (rc != VGH_OK) return fail("prepare", rc);
  }

  WorldHandle world;
  int rc = vgh_world_open(a.out.c_str(), &world.ptr);
  if (rc != VGH_OK) return fail("prepare", rc);
  OwnedString stats;
  rc = vgh_world_stats(world.ptr, &stats.ptr);
  if (rc != VGH_OK) return fail("prepare", rc);
  std::printf("wrote %s\n%s\n", a.out.c_str(), stats.ptr);
  return 0;
}

int run_bench(const BenchArgs& a) {
  WorldHandle world;
  int rc = vgh_world_open(a.world.c_str(), &world.ptr);
  if (rc != VGH_OK) return fail("bench", rc);

  json cfg;
  cfg["level"] = a.level;
  cfg["planner"] = a.planner;
  cfg["runs"] = a.runs;
  cfg["jobs"] = a.jobs;
  cfg["seed"] = a.seed;
  cfg["per_landmark"] = a.per_landmark;
  cfg["pedestrians"] = a.pedestrians;
  if (a.landmarks > 0) cfg["n_landmarks"] = a.landmarks;
  if (a.max_decisions > 0) cfg["max_decisions"] = a.max_decisions;
  if (!a.scenarios.empty()) cfg["scenario_file"] = a.scenarios;
  if (a.save_images) cfg["save_images"] = true;
  if (!a.out.empty()) cfg["out_dir"] = a.out;
  if (a.planner == "vlm") {
    json ep;
    if (!a.endpoint.empty()) ep["base_url"] = a.endpoint;
    if (!a.model.empty()) ep["model"] = a.model;
    if (a.timeout_s > 0.0) ep["timeout_s"] = a.timeout_s;
    cfg["endpoint"] = ep;
  }

  OwnedString report;
  rc = vgh_bench_run(world.ptr, cfg.dump().c_str(), &report.ptr);
  if (rc != VGH_OK) return fail("bench", rc);

  json rep = json::parse(report.ptr);
  std::printf("%s", rep.at("table").get<std::string>().c_str());
  if (!a.out.empty()) std::printf("outputs in %s\n", a.out.c_str());
  return 0;
}

int run_semfield(const SemfieldArgs& a) {
  json cfg;
  if (!a.bundle.empty()) cfg["bundle"] = a.bundle;
  if (!a.scene.empty()) cfg["scene"] = a.scene;
  if (!a.cameras.empty()) cfg["cameras"] = a.cameras;
  if (!a.masks.empty()) cfg["masks"] = a.masks;
  cfg["use_occlusion_masks"] = !a.no_occlusion;
  cfg["use_view_selection"] = !a.no_view_selection;
  cfg["seed"] = a.seed;
  if (a.k1 > 0) cfg["k1"] = a.k1;
  if (a.k2 > 0) cfg["k2"] = a.k2;
  if (a.iterations > 0) cfg["iterations"] = a.iterations;
  if (!a.out.empty()) cfg["out_dir"] = a.out;

  OwnedString report;
  int rc = vgh_semfield_run(cfg.dump().c_str(), &report.ptr);
  if (rc != VGH_OK) return fail("semfield", rc);

  json rep = json::parse(report.ptr);
  std::printf("miou %.4f  macc %.4f  (occlusion_masks=%s view_selection=%s)\n",
              rep.at("miou").get<double>(), rep.at("macc").get<double>(),
              a.no_occlusion ? "off" : "on", a.no_view_selection ? "off" : "on");
  if (!a.out.empty()) std::printf("outputs in %s\n", a.out.c_str());
  return 0;
}

int run_report(const ReportArgs& a) {
  OwnedString report;
  int rc = vgh_report(a.results.c_str(), &report.ptr);
  if (rc != VGH_OK) return fail("report", rc);
  json rep = json::parse(report.ptr);
  std::printf("%s", rep.at("table").get<std::string>().c_str());
  if (!a.csv.empty()) {
    std::FILE* f = std::fopen(a.csv.c_str(), "w");
    if (!f) {
      std::fprintf(stderr, "vgh: report: cannot write %s\n", a.csv.c_str());
      return 2;
    }
    std::fprintf(f, "level,episodes,runs,sr,spl,cr,pr,ppl\n");
    auto row = [&](const std::string& name, const json& m) {
      std::fprintf(f, "%s,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", name.c_str(),
                   m.at("episodes").get<int>(), rep.at("runs").get<int>(),
                   m.at("sr").get<double>(), m.at("spl").get<double>(),
                   m.at("cr").get<double>(), m.at("pr").get<double>(),
                   m.at("ppl").get<double>());
    };
    row("all", rep.at("overall"));
    for (const json& lvl : rep.at("levels")) row(lvl.at("level").get<std::string>(), lvl);
    std::fclose(f);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Navigation simulator, benchmark harness, and semantic-field toolkit"};
  app.set_config("--config", "", "TOML-style config file; flags override its values");
  app.set_version_flag("--version", std::string(vgh_version()));
  app.require_subcommand(1);

  PrepareArgs prep;
  CLI::App* prepare = app.add_subcommand("prepare", "Build a world bundle");
  prepare->add_flag("--demo", prep.demo, "Write the built-in courtyard world and fixture");
  prepare->add_option("--mesh", prep.mesh, "Raw mesh (.obj)");
  prepare->add_option("--landmarks", prep.landmarks, "Landmark registry (.json)");
  prepare->add_option("--out", prep.out, "Bundle directory")->required();

  BenchArgs bench;
  CLI::App* bcmd = app.add_subcommand("bench", "Run the navigation benchmark");
  bcmd->add_option("--world", bench.world, "World bundle directory")->required();
  bcmd->add_option("--out", bench.out, "Output directory")->required();
  bcmd->add_option("--level", bench.level, "simnav|obstnav|socialnav|multigoal");
  bcmd->add_option("--planner", bench.planner, "oracle|greedy|vlm");
  bcmd->add_option("--endpoint", bench.endpoint, "VLM endpoint URL, or 'mock'");
  bcmd->add_option("--model", bench.model, "VLM model name");
  bcmd->add_option("--timeout", bench.timeout_s, "VLM request timeout, seconds");
  bcmd->add_option("--runs", bench.runs, "Averaging runs");
  bcmd->add_option("--jobs", bench.jobs, "Parallel episode workers");
  bcmd->add_option("--seed", bench.seed, "Master seed");
  bcmd->add_option("--landmarks", bench.landmarks, "Landmarks to draw (default: all)");
  bcmd->add_option("--per-landmark", bench.per_landmark, "Starts per landmark");
  bcmd->add_option("--scenarios", bench.scenarios, "Load scenarios from file");
  bcmd->add_option("--max-decisions", bench.max_decisions, "Decision budget per episode");
  bcmd->add_option("--pedestrians", bench.pedestrians, "Crossing tracks per socialnav episode");
  bcmd->add_flag("--save-images", bench.save_images, "Write per-decision prompt PNGs");

  SemfieldArgs sem;
  CLI::App* scmd = app.add_subcommand("semfield", "Train and evaluate the semantic field");
  scmd->add_option("--bundle", sem.bundle, "Fixture bundle directory");
  scmd->add_option("--scene", sem.scene, "Splat scene file");
  scmd->add_option("--cameras", sem.cameras, "Camera file");
  scmd->add_option("--masks", sem.masks, "Mask stack file");
  scmd->add_option("--out", sem.out, "Output directory");
  scmd->add_flag("--no-occlusion-masks", sem.no_occlusion,
                 "Supervise full footprints instead of visible pixels");
  scmd->add_flag("--no-view-selection", sem.no_view_selection,
                 "Keep views below the visibility threshold");
  scmd->add_option("--seed", sem.seed, "Pipeline seed");
  scmd->add_option("--k1", sem.k1, "Root codebook size");
  scmd->add_option("--k2", sem.k2, "Leaf codebook size");
  scmd->add_option("--iterations", sem.iterations, "Stage-1 iterations");

  ReportArgs reparg;
  CLI::App* rcmd = app.add_subcommand("report", "Recompute metrics from results.jsonl");
  rcmd->add_option("--results", reparg.results, "results.jsonl path")->required();
  rcmd->add_option("--csv", reparg.csv, "Also write a CSV table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (prepare->parsed()) return run_prepare(prep);
  if (bcmd->parsed()) return run_bench(bench);
  if (scmd->parsed()) return run_semfield(sem);
  if (rcmd->parsed()) return run_report(reparg);
  return 2;
}
