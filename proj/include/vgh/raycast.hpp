#pragma once

#include <limits>
#include <vector>

#include "vgh/mesh.hpp"

namespace vgh {

struct RayHit {
  double t = std::numeric_limits<double>::infinity();  // ray parameter (range for unit dir)
  int face = -1;

  bool valid() const { return face >= 0; }
};

/// Median-split bounding volume hierarchy over mesh triangles. The mesh must
/// outlive the index. Traversal order is fixed, so the nearest hit (smallest
/// t, ties broken by lowest face index) is deterministic.
class MeshBvh {
 public:
  MeshBvh() = default;
  explicit MeshBvh(const TriMesh& mesh);

  /// Nearest intersection with t > t_min. `dir` need not be unit length;
  /// t is in units of |dir|.
  RayHit raycast(const Vec3& origin, const Vec3& dir, double t_min = 1e-9) const;

  const TriMesh& mesh() const { return *mesh_; }
  bool empty() const { return nodes_.empty(); }

 private:
  struct Node {
    Aabb box;
    int left = -1;    // internal: child index; leaf: first triangle
    int count = 0;    // leaf triangle count; 0 for internal nodes
    int right = -1;
  };

  int build(std::vector<int>& tris, int begin, int end);

  const TriMesh* mesh_ = nullptr;
  std::vector<Node> nodes_;
  std::vector<int> order_;      // triangle indices grouped by leaf
  std::vector<Vec3> centroids_;
};

/// Moller-Trumbore. Returns infinity when the ray misses.
double ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                    const Vec3& c);

}  // namespace vgh
