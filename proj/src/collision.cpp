#include "vgh/collision.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vgh/errors.hpp"
#include "vgh/rng.hpp"

namespace vgh {

AgentBody AgentBody::at(const Vec3& root, double heading, const CapsuleSpec& spec) {
  if (spec.sample_count < 4 || spec.radius <= 0.0 || spec.height <= 2.0 * spec.radius)
    raise(Errc::invalid_argument, "invalid capsule spec");

  AgentBody body;
  body.root = root;
  body.heading = heading;
  body.spec = spec;

  const double r = spec.radius;
  const double cyl = spec.height - 2.0 * r;
  const double arc = kPi * r + cyl;  // pole-to-pole profile length

  int rows = std::max(2, (spec.sample_count + 7) / 8);
  int base = spec.sample_count / rows;
  int extra = spec.sample_count % rows;

  for (int j = 0; j < rows; ++j) {
    int count = base + (j < extra ? 1 : 0);
    double s = (j + 0.5) / rows * arc;
    // Profile point (rho, z): distance from axis and height.
    double rho, z;
    if (s < 0.5 * kPi * r) {
      double phi = s / r;  // 0 at bottom pole
      rho = r * std::sin(phi);
      z = r - r * std::cos(phi);
    } else if (s < 0.5 * kPi * r + cyl) {
      rho = r;
      z = r + (s - 0.5 * kPi * r);
    } else {
      double phi = (s - 0.5 * kPi * r - cyl) / r;  // 0 at equator, pi/2 at top pole
      rho = r * std::cos(phi);
      z = spec.height - r + r * std::sin(phi);
    }
    for (int i = 0; i < count; ++i) {
      double theta = heading + 2.0 * kPi * (i + 0.5 * (j % 2)) / count;
      body.samples.push_back(
          {root.x + rho * std::cos(theta), root.y + rho * std::sin(theta), root.z + z});
    }
  }
  return body;
}

TriMesh collision_surface(const TriMesh& mesh, double ground_clearance) {
  TriMesh out;
  out.vertices = mesh.vertices;
  for (const auto& f : mesh.faces) {
    double top = std::max({mesh.vertices[static_cast<size_t>(f[0])].z,
                           mesh.vertices[static_cast<size_t>(f[1])].z,
                           mesh.vertices[static_cast<size_t>(f[2])].z});
    if (top > ground_clearance) out.faces.push_back(f);
  }
  return out;
}

ProximityIndex ProximityIndex::build(const TriMesh& mesh, double density, uint64_t seed) {
  if (mesh.empty()) raise(Errc::empty_mesh, "proximity index of empty mesh");
  Rng rng(seed);
  std::vector<Vec3> pts;
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    double area = mesh.face_area(f);
    int n = std::max(1, static_cast<int>(std::lround(area * density)));
    Vec3 a = mesh.face_vertex(f, 0);
    Vec3 ab = mesh.face_vertex(f, 1) - a;
    Vec3 ac = mesh.face_vertex(f, 2) - a;
    for (int i = 0; i < n; ++i) {
      double u = rng.next_double();
      double v = rng.next_double();
      if (u + v > 1.0) { u = 1.0 - u; v = 1.0 - v; }
      pts.push_back(a + ab * u + ac * v);
    }
  }
  return from_points(std::move(pts));
}

ProximityIndex ProximityIndex::from_points(std::vector<Vec3> points) {
  ProximityIndex idx;
  idx.points_ = std::move(points);
  if (idx.points_.empty()) return idx;
  std::vector<int> order(idx.points_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  idx.nodes_.reserve(idx.points_.size());
  idx.root_ = idx.build_node(order, 0, static_cast<int>(order.size()), 0);
  return idx;
}

int ProximityIndex::build_node(std::vector<int>& idx, int begin, int end, int depth) {
  if (begin >= end) return -1;
  int axis = depth % 3;
  int mid = (begin + end) / 2;
  auto key = [&](int i) {
    const Vec3& p = points_[static_cast<size_t>(i)];
    return axis == 0 ? p.x : axis == 1 ? p.y : p.z;
  };
  std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end,
                   [&](int a, int b) { return key(a) != key(b) ? key(a) < key(b) : a < b; });
  Node node;
  node.axis = axis;
  node.point = idx[static_cast<size_t>(mid)];
  int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  int left = build_node(idx, begin, mid, depth + 1);
  int right = build_node(idx, mid + 1, end, depth + 1);
  nodes_[static_cast<size_t>(self)].left = left;
  nodes_[static_cast<size_t>(self)].right = right;
  return self;
}

void ProximityIndex::search(int node, const Vec3& q, double& best) const {
  if (node < 0) return;
  const Node& n = nodes_[static_cast<size_t>(node)];
  const Vec3& p = points_[static_cast<size_t>(n.point)];
  double d2 = (q - p).squared_norm();
  if (d2 < best) best = d2;
  double qa = n.axis == 0 ? q.x : n.axis == 1 ? q.y : q.z;
  double pa = n.axis == 0 ? p.x : n.axis == 1 ? p.y : p.z;
  double diff = qa - pa;
  int near = diff < 0.0 ? n.left : n.right;
  int far = diff < 0.0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff < best) search(far, q, best);
}

double ProximityIndex::nearest_distance(const Vec3& query) const {
  if (root_ < 0) return std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  search(root_, query, best);
  return std::sqrt(best);
}

SceneCollisionResult check_scene_collision(const AgentBody& body, const ProximityIndex& index,
                                           double threshold, double fraction) {
  SceneCollisionResult result;
  result.sample_count = static_cast<int>(body.samples.size());
  for (const Vec3& s : body.samples)
    if (index.nearest_distance(s) < threshold) ++result.violating;
  result.colliding =
      static_cast<double>(result.violating) / static_cast<double>(result.sample_count) > fraction;
  return result;
}

bool check_human_collision(const Vec3& root_a, const Vec3& root_b, double min_distance) {
  return (root_a - root_b).norm() < min_distance;
}

}  // namespace vgh
