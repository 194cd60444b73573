#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vgh/geometry.hpp"
#include "vgh/mesh.hpp"

namespace vgh {

class MeshBvh;
class ProximityIndex;

/// Rigid transform that maps raw mesh coordinates into the gravity-aligned
/// frame: p' = rotation * p + translation. After application the fitted
/// ground plane is z = 0 with normal +z.
struct GroundFrame {
  Mat3 rotation;
  Vec3 translation{0, 0, 0};

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

struct AlignParams {
  double inlier_tol = 0.05;    // meters
  double low_fraction = 0.25;  // share of lowest vertices used as candidates
  int iterations = 256;
  uint64_t seed = 0;
};

/// Fits the dominant ground plane to low-lying vertices with RANSAC and
/// returns the frame plus the aligned mesh. Throws Errc::degenerate_plane
/// when no plane can be fit (all candidates collinear or fewer than 3).
std::pair<GroundFrame, TriMesh> align_to_gravity(const TriMesh& mesh,
                                                 const AlignParams& params = {});

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell& o) const { return x == o.x && y == o.y; }
};

/// Axis-aligned 2D occupancy raster over the mesh footprint. Cell (i, j)
/// spans [origin + (i,j)*resolution, origin + (i+1,j+1)*resolution).
struct OccupancyGrid {
  Vec2 origin;
  double resolution = 0.5;
  int nx = 0;
  int ny = 0;
  std::vector<uint8_t> cells;  // 1 = blocked

  bool in_bounds(const Cell& c) const { return c.x >= 0 && c.x < nx && c.y >= 0 && c.y < ny; }
  bool blocked(const Cell& c) const {
    return cells[static_cast<size_t>(c.y) * static_cast<size_t>(nx) + static_cast<size_t>(c.x)] != 0;
  }
  void set_blocked(const Cell& c, bool b) {
    cells[static_cast<size_t>(c.y) * static_cast<size_t>(nx) + static_cast<size_t>(c.x)] =
        b ? 1 : 0;
  }
  Cell cell_at(const Vec2& p) const {
    return {static_cast<int>(std::floor((p.x - origin.x) / resolution)),
            static_cast<int>(std::floor((p.y - origin.y) / resolution))};
  }
  Vec2 cell_center(const Cell& c) const {
    return {origin.x + (c.x + 0.5) * resolution, origin.y + (c.y + 0.5) * resolution};
  }
  int blocked_count() const;
};

struct GridParams {
  double resolution = 0.5;
  double min_height = 0.1;  // occupancy slab, meters above ground
  double max_height = 2.0;
  double padding = 0.0;     // extra free border around the mesh footprint
};

/// Marks a cell blocked iff some triangle overlaps the open prism
/// cell x [min_height, max_height] with positive measure; grazing contact on
/// a cell boundary does not block. Ground at z = 0 stays free.
OccupancyGrid build_occupancy_grid(const TriMesh& mesh, const GridParams& params = {});

/// Blocks every cell whose prism overlaps `footprint` triangles; used to stamp
/// placed obstacles into a copy of the base grid.
void stamp_mesh(OccupancyGrid& grid, const TriMesh& footprint, const GridParams& params = {});

struct Landmark {
  std::string id;
  std::string label;
  std::string description;
  Aabb aabb;
};

std::vector<Landmark> load_landmarks(const std::string& path);
void save_landmarks(const std::vector<Landmark>& landmarks, const std::string& path);

struct PathResult {
  std::vector<Cell> cells;  // start..goal inclusive
  double length = 0.0;      // meters
};

/// 8-connected A* with octile heuristic. Step costs are resolution and
/// resolution*sqrt(2); a diagonal move requires both adjacent orthogonal
/// cells to be free (no corner cutting). Throws Errc::out_of_bounds when an
/// endpoint is outside or blocked, Errc::unreachable when no path exists.
PathResult astar_shortest_path(const OccupancyGrid& grid, const Vec2& start, const Vec2& goal);

/// Same contract, but endpoints given as cells.
PathResult astar_cells(const OccupancyGrid& grid, const Cell& start, const Cell& goal);

/// Euclidean distance from `pos` to the landmark box (0 inside).
double nearest_bbox_distance(const Vec3& pos, const Landmark& lm);

/// Nearest free cell to a world point, by scanning outward rings. Returns
/// nullopt when the grid has no free cell.
std::optional<Cell> nearest_free_cell(const OccupancyGrid& grid, const Vec2& p);

/// Immutable scene bundle shared by perception, planning, and the benchmark.
/// Acceleration structures are built once in the constructor; afterwards the
/// model is safe to share across episode threads.
class WorldModel {
 public:
  WorldModel(TriMesh aligned_mesh, GroundFrame frame, OccupancyGrid grid,
             std::vector<Landmark> landmarks, const GridParams& grid_params = {});
  ~WorldModel();
  WorldModel(WorldModel&&) noexcept;
  WorldModel& operator=(WorldModel&&) noexcept;

  const TriMesh& mesh() const { return mesh_; }
  const GroundFrame& frame() const { return frame_; }
  const OccupancyGrid& grid() const { return grid_; }
  const GridParams& grid_params() const { return grid_params_; }
  const std::vector<Landmark>& landmarks() const { return landmarks_; }
  const Landmark& landmark_by_id(const std::string& id) const;
  const MeshBvh& bvh() const { return *bvh_; }
  const ProximityIndex& proximity() const { return *proximity_; }

 private:
  TriMesh mesh_;
  GroundFrame frame_;
  OccupancyGrid grid_;
  GridParams grid_params_;
  std::vector<Landmark> landmarks_;
  std::unique_ptr<MeshBvh> bvh_;
  std::unique_ptr<ProximityIndex> proximity_;
};

}  // namespace vgh
