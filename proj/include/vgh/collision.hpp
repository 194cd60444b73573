#pragma once

#include <cstdint>
#include <vector>

#include "vgh/geometry.hpp"
#include "vgh/mesh.hpp"

namespace vgh {

struct CapsuleSpec {
  double radius = 0.3;   // meters
  double height = 1.7;   // total height, axis vertical from z=0
  int sample_count = 64;
};

/// Rigid stand-in body: fixed surface samples of a vertical capsule placed at
/// `root` (ground point) with the given heading. Every sample lies exactly at
/// `radius` from the capsule axis segment.
struct AgentBody {
  Vec3 root;
  double heading = 0.0;
  CapsuleSpec spec;
  std::vector<Vec3> samples;  // world-space

  static AgentBody at(const Vec3& root, double heading, const CapsuleSpec& spec = {});
};

/// Triangles relevant for body-scene contact: faces whose highest vertex
/// clears `ground_clearance`. Drops the support plane so standing on the
/// floor never reads as contact; walls keep their near-floor parts because
/// filtering is per whole face.
TriMesh collision_surface(const TriMesh& mesh, double ground_clearance = 0.1);

/// Exact nearest-neighbor index over points sampled uniformly by area on the
/// mesh surface. Queries return the same distance a brute-force scan over the
/// identical sample set would.
class ProximityIndex {
 public:
  ProximityIndex() = default;

  static ProximityIndex build(const TriMesh& mesh, double density = 100.0,
                              uint64_t seed = 0x5eed);

  /// Builds directly from a point set (used by tests and merged scenes).
  static ProximityIndex from_points(std::vector<Vec3> points);

  double nearest_distance(const Vec3& query) const;
  size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }
  bool empty() const { return points_.empty(); }

 private:
  struct Node {
    int axis = 0;
    int point = -1;     // index into points_
    int left = -1;
    int right = -1;
  };

  int build_node(std::vector<int>& idx, int begin, int end, int depth);
  void search(int node, const Vec3& q, double& best) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

struct SceneCollisionResult {
  bool colliding = false;
  int violating = 0;      // samples with distance < threshold
  int sample_count = 0;
};

/// Scene collision iff the fraction of body samples closer than `threshold`
/// to the scene surface strictly exceeds `fraction`.
SceneCollisionResult check_scene_collision(const AgentBody& body, const ProximityIndex& index,
                                           double threshold = 0.05, double fraction = 0.10);

/// Human-human collision iff root distance is strictly below `min_distance`.
bool check_human_collision(const Vec3& root_a, const Vec3& root_b, double min_distance = 0.5);

}  // namespace vgh
