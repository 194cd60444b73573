#pragma once

#include <array>
#include <string>
#include <vector>

#include "vgh/geometry.hpp"

namespace vgh {

/// Indexed triangle soup. Faces store 0-based vertex indices.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  bool empty() const { return faces.empty(); }

  Vec3 face_vertex(size_t face, int corner) const {
    return vertices[static_cast<size_t>(faces[face][corner])];
  }

  Vec3 face_normal(size_t face) const;
  double face_area(size_t face) const;
  Aabb bounds() const;

  /// Throws on out-of-range indices, non-finite coordinates, or a face that
  /// repeats a vertex.
  void validate() const;

  void append(const TriMesh& other);
  TriMesh transformed(const Mat3& rotation, const Vec3& translation) const;
};

/// Reads the `v`/`f` subset of Wavefront OBJ. Face entries may carry
/// `/texture/normal` suffixes, which are ignored; only triangles are accepted.
TriMesh load_obj(const std::string& path);

void save_obj(const TriMesh& mesh, const std::string& path);

}  // namespace vgh
