#include "vgh/raycast.hpp"

#include <algorithm>
#include <cmath>

namespace vgh {

double ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                    const Vec3& c) {
  constexpr double kEps = 1e-12;
  const double inf = std::numeric_limits<double>::infinity();
  Vec3 ab = b - a;
  Vec3 ac = c - a;
  Vec3 pvec = dir.cross(ac);
  double det = ab.dot(pvec);
  if (std::abs(det) < kEps) return inf;
  double inv_det = 1.0 / det;
  Vec3 tvec = origin - a;
  double u = tvec.dot(pvec) * inv_det;
  if (u < 0.0 || u > 1.0) return inf;
  Vec3 qvec = tvec.cross(ab);
  double v = dir.dot(qvec) * inv_det;
  if (v < 0.0 || u + v > 1.0) return inf;
  double t = ac.dot(qvec) * inv_det;
  return t > 0.0 ? t : inf;
}

MeshBvh::MeshBvh(const TriMesh& mesh) : mesh_(&mesh) {
  int n = static_cast<int>(mesh.faces.size());
  if (n == 0) return;
  centroids_.resize(static_cast<size_t>(n));
  for (int f = 0; f < n; ++f) {
    size_t sf = static_cast<size_t>(f);
    centroids_[sf] = (mesh.face_vertex(sf, 0) + mesh.face_vertex(sf, 1) +
                      mesh.face_vertex(sf, 2)) * (1.0 / 3.0);
  }
  std::vector<int> tris(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) tris[static_cast<size_t>(i)] = i;
  nodes_.reserve(static_cast<size_t>(2 * n));
  build(tris, 0, n);
}

int MeshBvh::build(std::vector<int>& tris, int begin, int end) {
  Node node;
  node.box = Aabb{mesh_->face_vertex(static_cast<size_t>(tris[static_cast<size_t>(begin)]), 0),
                  mesh_->face_vertex(static_cast<size_t>(tris[static_cast<size_t>(begin)]), 0)};
  for (int i = begin; i < end; ++i) {
    size_t f = static_cast<size_t>(tris[static_cast<size_t>(i)]);
    for (int c = 0; c < 3; ++c) node.box.expand(mesh_->face_vertex(f, c));
  }

  int count = end - begin;
  int index = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (count <= 4) {
    nodes_[static_cast<size_t>(index)].left = static_cast<int>(order_.size());
    nodes_[static_cast<size_t>(index)].count = count;
    // Deterministic leaf order keeps tie-breaking stable.
    std::sort(tris.begin() + begin, tris.begin() + end);
    for (int i = begin; i < end; ++i) order_.push_back(tris[static_cast<size_t>(i)]);
    return index;
  }

  Vec3 ext = node.box.extent();
  int axis = 0;
  if (ext.y > ext.x) axis = 1;
  if (ext.z > (axis == 0 ? ext.x : ext.y)) axis = 2;
  int mid = begin + count / 2;
  std::nth_element(tris.begin() + begin, tris.begin() + mid, tris.begin() + end,
                   [&](int lhs, int rhs) {
                     const Vec3& cl = centroids_[static_cast<size_t>(lhs)];
                     const Vec3& cr = centroids_[static_cast<size_t>(rhs)];
                     double a = axis == 0 ? cl.x : axis == 1 ? cl.y : cl.z;
                     double b = axis == 0 ? cr.x : axis == 1 ? cr.y : cr.z;
                     if (a != b) return a < b;
                     return lhs < rhs;
                   });
  int left = build(tris, begin, mid);
  int right = build(tris, mid, end);
  nodes_[static_cast<size_t>(index)].left = left;
  nodes_[static_cast<size_t>(index)].right = right;
  return index;
}

namespace {

bool ray_box(const Vec3& origin, const Vec3& inv_dir, const Aabb& box, double t_max) {
  double t0 = 0.0, t1 = t_max;
  const double o[3] = {origin.x, origin.y, origin.z};
  const double inv[3] = {inv_dir.x, inv_dir.y, inv_dir.z};
  const double lo[3] = {box.min.x, box.min.y, box.min.z};
  const double hi[3] = {box.max.x, box.max.y, box.max.z};
  for (int a = 0; a < 3; ++a) {
    double ta = (lo[a] - o[a]) * inv[a];
    double tb = (hi[a] - o[a]) * inv[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

RayHit MeshBvh::raycast(const Vec3& origin, const Vec3& dir, double t_min) const {
  RayHit best;
  if (nodes_.empty()) return best;
  Vec3 inv{1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z};

  int stack[64];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[static_cast<size_t>(stack[--top])];
    if (!ray_box(origin, inv, node.box, best.t)) continue;
    if (node.count > 0) {
      for (int i = 0; i < node.count; ++i) {
        int face = order_[static_cast<size_t>(node.left + i)];
        size_t f = static_cast<size_t>(face);
        double t = ray_triangle(origin, dir, mesh_->face_vertex(f, 0),
                                mesh_->face_vertex(f, 1), mesh_->face_vertex(f, 2));
        if (t > t_min && (t < best.t || (t == best.t && face < best.face))) {
          best.t = t;
          best.face = face;
        }
      }
    } else {
      stack[top++] = node.right;
      stack[top++] = node.left;
    }
  }
  return best;
}

}  // namespace vgh
