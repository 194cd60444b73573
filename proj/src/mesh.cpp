#include "vgh/mesh.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vgh/errors.hpp"

namespace vgh {

Vec3 TriMesh::face_normal(size_t face) const {
  Vec3 a = face_vertex(face, 0);
  Vec3 b = face_vertex(face, 1);
  Vec3 c = face_vertex(face, 2);
  return (b - a).cross(c - a).normalized();
}

double TriMesh::face_area(size_t face) const {
  Vec3 a = face_vertex(face, 0);
  Vec3 b = face_vertex(face, 1);
  Vec3 c = face_vertex(face, 2);
  return 0.5 * (b - a).cross(c - a).norm();
}

Aabb TriMesh::bounds() const {
  if (vertices.empty()) raise(Errc::empty_mesh, "bounds of empty mesh");
  Aabb box{vertices[0], vertices[0]};
  for (const Vec3& v : vertices) box.expand(v);
  return box;
}

void TriMesh::validate() const {
  if (faces.empty()) raise(Errc::empty_mesh, "mesh has no faces");
  for (const Vec3& v : vertices) {
    if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z))
      raise(Errc::parse_failure, "mesh vertex has non-finite coordinate");
  }
  int n = static_cast<int>(vertices.size());
  for (size_t f = 0; f < faces.size(); ++f) {
    const auto& face = faces[f];
    for (int c = 0; c < 3; ++c) {
      if (face[c] < 0 || face[c] >= n)
        raise(Errc::parse_failure,
              "face " + std::to_string(f) + " references vertex " + std::to_string(face[c]) +
                  " outside [0, " + std::to_string(n) + ")");
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
      raise(Errc::parse_failure, "face " + std::to_string(f) + " repeats a vertex");
  }
}

void TriMesh::append(const TriMesh& other) {
  int base = static_cast<int>(vertices.size());
  vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
  for (const auto& f : other.faces)
    faces.push_back({f[0] + base, f[1] + base, f[2] + base});
}

TriMesh TriMesh::transformed(const Mat3& rotation, const Vec3& translation) const {
  TriMesh out;
  out.faces = faces;
  out.vertices.reserve(vertices.size());
  for (const Vec3& v : vertices) out.vertices.push_back(rotation * v + translation);
  return out;
}

namespace {

// "3", "3/1", "3//2", "3/1/2" all resolve to vertex index 3.
int parse_face_index(const std::string& token, size_t line_no) {
  size_t slash = token.find('/');
  std::string head = slash == std::string::npos ? token : token.substr(0, slash);
  try {
    size_t used = 0;
    int idx = std::stoi(head, &used);
    if (used != head.size()) throw std::invalid_argument(head);
    return idx;
  } catch (const std::exception&) {
    raise(Errc::parse_failure,
          "line " + std::to_string(line_no) + ": bad face index '" + token + "'");
  }
}

}  // namespace

TriMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io_failure, "cannot open mesh file: " + path);

  TriMesh mesh;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x >> v.y >> v.z))
        raise(Errc::parse_failure, "line " + std::to_string(line_no) + ": bad vertex record");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) idx.push_back(parse_face_index(tok, line_no));
      if (idx.size() != 3)
        raise(Errc::parse_failure,
              "line " + std::to_string(line_no) + ": only triangle faces are supported");
      // OBJ indices are 1-based; negative indices count from the end.
      std::array<int, 3> face;
      for (int c = 0; c < 3; ++c) {
        int i = idx[static_cast<size_t>(c)];
        face[static_cast<size_t>(c)] =
            i > 0 ? i - 1 : static_cast<int>(mesh.vertices.size()) + i;
      }
      mesh.faces.push_back(face);
    }
    // Other record types (vn, vt, usemtl, o, g, s) are ignored.
  }
  mesh.validate();
  return mesh;
}

void save_obj(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Errc::io_failure, "cannot write mesh file: " + path);
  char buf[128];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x, v.y, v.z);
    out << buf;
  }
  for (const auto& f : mesh.faces)
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) raise(Errc::io_failure, "write failed: " + path);
}

}  // namespace vgh
