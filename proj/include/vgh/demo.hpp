#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vgh/semantic_field.hpp"
#include "vgh/splats.hpp"
#include "vgh/world.hpp"

namespace vgh {

/// Hand-built 24 x 24 m courtyard used by the navigation suite: flat ground,
/// a 1 m perimeter fence, and twelve labeled box landmarks. Every solid piece
/// stays at or below 1.1 m, so the agent's 1.6 m camera sees over all of it
/// and a glancing brush against a face cannot trip the body-sample collision
/// threshold.
TriMesh demo_world_mesh();
std::vector<Landmark> demo_world_landmarks();

/// Grid parameters the demo bundle is built with.
GridParams demo_grid_params();

/// Ready-to-run model of the courtyard (mesh already gravity-aligned).
WorldModel make_demo_world();

/// Writes mesh.obj, landmarks.json, and world.json (frame + grid parameters
/// and stats) into dir, creating it if needed. Byte-stable across calls.
void write_world_bundle(const WorldModel& world, const std::string& dir);

/// Rebuilds a model from a bundle directory; the grid is reconstructed from
/// the mesh and the stored parameters.
WorldModel load_world_bundle(const std::string& dir);

struct SemanticFixture {
  SplatScene scene;                      // gt_instance set on objects; features zero
  std::vector<SplatCamera> views;
  std::vector<std::vector<Mask>> masks;  // per view: five objects plus the wall
};

/// Synthetic splat arrangement for the segmentation suite: five splat-blob
/// objects in a ring, one soft-edged wall that fully hides the first object
/// from nearby cameras and leaves only thin slivers in a couple of others,
/// and twenty inward-facing cameras. Masks are ideal per-view instance masks
/// derived from the generating groups; the wall carries gt_instance -1 so it
/// is scored as background.
SemanticFixture make_semantic_fixture();

/// Pipeline hyperparameters sized for the fixture (six-root codebook, the
/// default visibility threshold).
PipelineConfig fixture_pipeline_config();

/// Mask-stack file: one JSON object holding raster shape and run-length
/// encoded rows, one stack per view.
void save_masks(const std::vector<std::vector<Mask>>& masks, int width, int height,
                const std::string& path);
std::vector<std::vector<Mask>> load_masks(const std::string& path, int* width = nullptr,
                                          int* height = nullptr);

/// Writes splats.json, cameras.json, and masks.json into dir.
void write_fixture_bundle(const SemanticFixture& fixture, const std::string& dir);

}  // namespace vgh
