#ifndef VGH_H
#define VGH_H

/* C interface to the navigation simulator and benchmark library.
 *
 * Every function returns 0 on success and a positive error code otherwise;
 * vgh_last_error() holds the failing call's message for the current thread.
 * Strings returned through char** out-parameters are heap-allocated and must
 * be released with vgh_free().
 */

#ifdef __cplusplus
extern "C" {
#endif

enum {
  VGH_OK = 0,
  VGH_E_INVALID_ARGUMENT = 1,
  VGH_E_IO = 2,
  VGH_E_PARSE = 3,
  VGH_E_DEGENERATE_PLANE = 4,
  VGH_E_EMPTY_MESH = 5,
  VGH_E_EMPTY_SCENE = 6,
  VGH_E_UNREACHABLE = 7,
  VGH_E_OUT_OF_BOUNDS = 8,
  VGH_E_EMPTY_MASK = 9,
  VGH_E_TOO_FEW_MASKS = 10,
  VGH_E_SHAPE_MISMATCH = 11,
  VGH_E_UNKNOWN_CLUSTER = 12,
  VGH_E_DIVERGED = 13,
  VGH_E_NO_VISIBLE_VIEW = 14,
  VGH_E_EMPTY_GROUND_TRUTH = 15,
  VGH_E_INVALID_DEPTH = 16,
  VGH_E_INCONSISTENT_CONTEXT = 17,
  VGH_E_MALFORMED_JSON = 18,
  VGH_E_MISSING_KEY = 19,
  VGH_E_INVALID_ACTION = 20,
  VGH_E_TRANSPORT = 21,
  VGH_E_DEGENERATE_SEGMENT = 22,
  VGH_E_NO_DETOUR = 23,
  VGH_E_INSUFFICIENT_FREE_SPACE = 24,
  VGH_E_EMPTY_RESULTS = 25,
  VGH_E_INTERNAL = 100
};

const char* vgh_version(void);

/* Message from the most recent failing call on this thread ("" if none). */
const char* vgh_last_error(void);

/* Stable name for an error code, e.g. "io_failure"; "ok" for 0. */
const char* vgh_error_name(int code);

void vgh_free(char* text);

typedef struct vgh_world vgh_world;

/* Writes the built-in courtyard world bundle (mesh.obj, landmarks.json,
 * world.json) into dir. Idempotent and byte-stable. */
int vgh_demo_bundle(const char* dir);

/* Writes the built-in segmentation fixture (splats.json, cameras.json,
 * masks.json) into dir. */
int vgh_fixture_bundle(const char* dir);

/* Aligns a raw mesh to gravity, ingests the landmark registry, and writes a
 * world bundle into out_dir. */
int vgh_prepare_bundle(const char* mesh_path, const char* landmarks_path,
                       const char* out_dir);

int vgh_world_open(const char* bundle_dir, vgh_world** out);
void vgh_world_close(vgh_world* world);

/* Grid, mesh, and registry statistics as a JSON string. */
int vgh_world_stats(const vgh_world* world, char** out_json);

/* Runs a navigation benchmark over the opened world and returns the metrics
 * report as JSON (fields: runs, overall, levels, table). config_json keys,
 * all optional unless noted:
 *   level            simnav | obstnav | socialnav | multigoal (simnav)
 *   planner          oracle | greedy | vlm (oracle)
 *   endpoint         {base_url, model, timeout_s, max_retries, temperature,
 *                     api_key_env} for the vlm planner ("mock" by default)
 *   runs, jobs, seed 3, 1, 0
 *   n_landmarks      landmarks drawn from the registry (all of them)
 *   per_landmark     starts per landmark (5)
 *   scenario_file    load scenarios from this file instead of generating
 *   pedestrians      crossing tracks per socialnav scenario (2)
 *   max_decisions, decide_every, success_distance, goal_miss_rate
 *   save_images      write per-decision prompt PNGs (false)
 *   out_dir          write scenarios.json, results.jsonl, metrics.csv,
 *                    metrics.txt, and transcripts/run<k>/<id>.jsonl here
 */
int vgh_bench_run(const vgh_world* world, const char* config_json,
                  char** out_report_json);

/* Runs the semantic-field pipeline and returns {"miou", "macc", "labels",
 * ...} as JSON. config_json keys:
 *   bundle                     directory with splats.json/cameras.json/masks.json
 *   scene, cameras, masks      explicit file paths (override bundle)
 *   use_occlusion_masks        default true
 *   use_view_selection         default true
 *   seed, k1, k2, iterations, delta_vis
 *   out_dir                    write trained_splats.json, codebook.json,
 *                              labels.json, pred_masks.json, report.json
 */
int vgh_semfield_run(const char* config_json, char** out_report_json);

/* Recomputes the metrics report from a results.jsonl file produced by
 * vgh_bench_run. */
int vgh_report(const char* results_jsonl_path, char** out_report_json);

#ifdef __cplusplus
}
#endif

#endif /* VGH_H */
