#include "vgh/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <queue>

#include <nlohmann/json.hpp>

#include "vgh/collision.hpp"
#include "vgh/errors.hpp"
#include "vgh/raycast.hpp"
#include "vgh/rng.hpp"

namespace vgh {

using nlohmann::json;

namespace {

struct Plane {
  Vec3 normal;  // unit
  double offset;  // p . normal = offset for points on the plane

  double distance(const Vec3& p) const { return std::abs(p.dot(normal) - offset); }
};

/// Smallest-eigenvalue eigenvector of a symmetric 3x3 matrix via cyclic
/// Jacobi rotations.
Vec3 smallest_eigenvector(const Mat3& sym) {
  double a[3][3] = {{sym.m[0], sym.m[1], sym.m[2]},
                    {sym.m[3], sym.m[4], sym.m[5]},
                    {sym.m[6], sym.m[7], sym.m[8]}};
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int sweep = 0; sweep < 32; ++sweep) {
    double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if (off < 1e-24) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(a[p][q]) < 1e-30) continue;
        double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < 3; ++k) {
          double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (a[i][i] < a[best][best]) best = i;
  return Vec3{v[0][best], v[1][best], v[2][best]}.normalized();
}

Plane fit_plane(const std::vector<Vec3>& pts) {
  Vec3 centroid{0, 0, 0};
  for (const Vec3& p : pts) centroid += p;
  centroid = centroid * (1.0 / static_cast<double>(pts.size()));
  Mat3 cov;
  cov.m.fill(0.0);
  for (const Vec3& p : pts) {
    Vec3 d = p - centroid;
    cov.m[0] += d.x * d.x; cov.m[1] += d.x * d.y; cov.m[2] += d.x * d.z;
    cov.m[4] += d.y * d.y; cov.m[5] += d.y * d.z; cov.m[8] += d.z * d.z;
  }
  cov.m[3] = cov.m[1]; cov.m[6] = cov.m[2]; cov.m[7] = cov.m[5];
  Vec3 n = smallest_eigenvector(cov);
  return Plane{n, centroid.dot(n)};
}

}  // namespace

std::pair<GroundFrame, TriMesh> align_to_gravity(const TriMesh& mesh, const AlignParams& params) {
  mesh.validate();
  const size_t n = mesh.vertices.size();

  // Low-lying candidates: lowest `low_fraction` of vertices by current z.
  std::vector<int> by_z(n);
  for (size_t i = 0; i < n; ++i) by_z[i] = static_cast<int>(i);
  std::sort(by_z.begin(), by_z.end(), [&](int a, int b) {
    double za = mesh.vertices[static_cast<size_t>(a)].z;
    double zb = mesh.vertices[static_cast<size_t>(b)].z;
    return za != zb ? za < zb : a < b;
  });
  size_t n_cand = std::max<size_t>(3, static_cast<size_t>(std::ceil(params.low_fraction * n)));
  n_cand = std::min(n_cand, n);
  if (n_cand < 3) raise(Errc::degenerate_plane, "fewer than 3 ground candidates");
  std::vector<Vec3> cand;
  cand.reserve(n_cand);
  for (size_t i = 0; i < n_cand; ++i) cand.push_back(mesh.vertices[static_cast<size_t>(by_z[i])]);

  Rng rng(Rng::mix(params.seed, 0x67726176));
  int best_inliers = -1;
  Plane best_plane{{0, 0, 1}, 0};
  for (int it = 0; it < params.iterations; ++it) {
    size_t i = rng.next_below(cand.size());
    size_t j = rng.next_below(cand.size());
    size_t k = rng.next_below(cand.size());
    if (i == j || j == k || i == k) continue;
    Vec3 a = cand[i], b = cand[j], c = cand[k];
    Vec3 normal = (b - a).cross(c - a);
    if (normal.norm() < 1e-12) continue;
    Plane plane{normal.normalized(), 0};
    plane.offset = a.dot(plane.normal);
    int inliers = 0;
    for (const Vec3& p : cand)
      if (plane.distance(p) <= params.inlier_tol) ++inliers;
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best_plane = plane;
    }
  }
  if (best_inliers < 3) raise(Errc::degenerate_plane, "ransac found no supporting plane");

  std::vector<Vec3> inlier_pts;
  for (const Vec3& p : cand)
    if (best_plane.distance(p) <= params.inlier_tol) inlier_pts.push_back(p);
  Plane refined = fit_plane(inlier_pts);
  if (!std::isfinite(refined.normal.norm()) || refined.normal.norm() < 0.5)
    raise(Errc::degenerate_plane, "plane refinement failed");

  // Orient the normal so the scene lies above the ground plane.
  Vec3 centroid{0, 0, 0};
  for (const Vec3& p : mesh.vertices) centroid += p;
  centroid = centroid * (1.0 / static_cast<double>(n));
  if ((centroid.dot(refined.normal) - refined.offset) < 0.0) {
    refined.normal = -refined.normal;
    refined.offset = -refined.offset;
  }

  GroundFrame frame;
  frame.rotation = rotation_between(refined.normal, Vec3{0, 0, 1});
  Vec3 on_plane = refined.normal * refined.offset;  // a point on the plane
  frame.translation = Vec3{0, 0, -(frame.rotation * on_plane).z};

  return {frame, mesh.transformed(frame.rotation, frame.translation)};
}

int OccupancyGrid::blocked_count() const {
  int n = 0;
  for (uint8_t c : cells) n += c != 0 ? 1 : 0;
  return n;
}

namespace {

/// Separating axis test between a triangle and an axis-aligned box where
/// grazing contact counts as separation, so a cell is blocked only by
/// positive-measure overlap with the open box.
bool tri_box_overlap_open(const Vec3& center, const Vec3& half, Vec3 a, Vec3 b, Vec3 c) {
  a = a - center;
  b = b - center;
  c = c - center;

  // Box face normals.
  if (std::max({a.x, b.x, c.x}) <= -half.x || std::min({a.x, b.x, c.x}) >= half.x) return false;
  if (std::max({a.y, b.y, c.y}) <= -half.y || std::min({a.y, b.y, c.y}) >= half.y) return false;
  if (std::max({a.z, b.z, c.z}) <= -half.z || std::min({a.z, b.z, c.z}) >= half.z) return false;

  // Triangle plane.
  Vec3 n = (b - a).cross(c - a);
  double r = half.x * std::abs(n.x) + half.y * std::abs(n.y) + half.z * std::abs(n.z);
  double d = a.dot(n);
  if (std::abs(d) >= r) return false;

  // Nine edge cross products.
  const Vec3 edges[3] = {b - a, c - b, a - c};
  const Vec3 verts[3] = {a, b, c};
  for (int e = 0; e < 3; ++e) {
    const Vec3& f = edges[e];
    const Vec3 axes[3] = {{0, -f.z, f.y}, {f.z, 0, -f.x}, {-f.y, f.x, 0}};
    for (const Vec3& axis : axes) {
      // Axis-aligned edges yield zero cross products; with the open-overlap
      // comparisons below a zero axis would always read as separating.
      if (axis.dot(axis) < 1e-18) continue;
      double ra = half.x * std::abs(axis.x) + half.y * std::abs(axis.y) + half.z * std::abs(axis.z);
      double p0 = verts[0].dot(axis), p1 = verts[1].dot(axis), p2 = verts[2].dot(axis);
      double lo = std::min({p0, p1, p2});
      double hi = std::max({p0, p1, p2});
      if (lo >= ra || hi <= -ra) return false;
    }
  }
  return true;
}

void rasterize_mesh(OccupancyGrid& grid, const TriMesh& mesh, const GridParams& params) {
  const double zc = 0.5 * (params.min_height + params.max_height);
  const double hz = 0.5 * (params.max_height - params.min_height);
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    Vec3 a = mesh.face_vertex(f, 0);
    Vec3 b = mesh.face_vertex(f, 1);
    Vec3 c = mesh.face_vertex(f, 2);
    double zmin = std::min({a.z, b.z, c.z});
    double zmax = std::max({a.z, b.z, c.z});
    if (zmax <= params.min_height || zmin >= params.max_height) continue;
    double xmin = std::min({a.x, b.x, c.x}), xmax = std::max({a.x, b.x, c.x});
    double ymin = std::min({a.y, b.y, c.y}), ymax = std::max({a.y, b.y, c.y});
    int i0 = std::max(0, static_cast<int>(std::floor((xmin - grid.origin.x) / grid.resolution)));
    int i1 = std::min(grid.nx - 1,
                      static_cast<int>(std::floor((xmax - grid.origin.x) / grid.resolution)));
    int j0 = std::max(0, static_cast<int>(std::floor((ymin - grid.origin.y) / grid.resolution)));
    int j1 = std::min(grid.ny - 1,
                      static_cast<int>(std::floor((ymax - grid.origin.y) / grid.resolution)));
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) {
        Cell cell{i, j};
        if (grid.blocked(cell)) continue;
        Vec3 center{grid.origin.x + (i + 0.5) * grid.resolution,
                    grid.origin.y + (j + 0.5) * grid.resolution, zc};
        Vec3 half{0.5 * grid.resolution, 0.5 * grid.resolution, hz};
        if (tri_box_overlap_open(center, half, a, b, c)) grid.set_blocked(cell, true);
      }
  }
}

}  // namespace

OccupancyGrid build_occupancy_grid(const TriMesh& mesh, const GridParams& params) {
  mesh.validate();
  if (params.resolution <= 0.0 || params.max_height <= params.min_height)
    raise(Errc::invalid_argument, "invalid grid parameters");
  Aabb box = mesh.bounds();
  OccupancyGrid grid;
  grid.resolution = params.resolution;
  grid.origin = {box.min.x - params.padding, box.min.y - params.padding};
  double wx = box.max.x + params.padding - grid.origin.x;
  double wy = box.max.y + params.padding - grid.origin.y;
  grid.nx = std::max(1, static_cast<int>(std::ceil(wx / params.resolution)));
  grid.ny = std::max(1, static_cast<int>(std::ceil(wy / params.resolution)));
  grid.cells.assign(static_cast<size_t>(grid.nx) * static_cast<size_t>(grid.ny), 0);
  rasterize_mesh(grid, mesh, params);
  return grid;
}

void stamp_mesh(OccupancyGrid& grid, const TriMesh& footprint, const GridParams& params) {
  rasterize_mesh(grid, footprint, params);
}

std::vector<Landmark> load_landmarks(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io_failure, "cannot open landmark file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    raise(Errc::parse_failure, "landmark json: " + std::string(e.what()));
  }
  if (!doc.is_array()) raise(Errc::parse_failure, "landmark file must hold an array");
  std::vector<Landmark> out;
  for (const json& item : doc) {
    Landmark lm;
    try {
      lm.id = item.at("id").get<std::string>();
      lm.label = item.at("label").get<std::string>();
      lm.description = item.value("description", std::string());
      const json& aabb = item.at("aabb");
      const json& lo = aabb.at("min");
      const json& hi = aabb.at("max");
      lm.aabb.min = {lo.at(0).get<double>(), lo.at(1).get<double>(), lo.at(2).get<double>()};
      lm.aabb.max = {hi.at(0).get<double>(), hi.at(1).get<double>(), hi.at(2).get<double>()};
    } catch (const json::exception& e) {
      raise(Errc::parse_failure, "landmark record: " + std::string(e.what()));
    }
    if (lm.aabb.min.x > lm.aabb.max.x || lm.aabb.min.y > lm.aabb.max.y ||
        lm.aabb.min.z > lm.aabb.max.z)
      raise(Errc::parse_failure, "landmark '" + lm.id + "' has inverted aabb");
    for (const Landmark& prev : out)
      if (prev.id == lm.id) raise(Errc::parse_failure, "duplicate landmark id '" + lm.id + "'");
    out.push_back(std::move(lm));
  }
  return out;
}

void save_landmarks(const std::vector<Landmark>& landmarks, const std::string& path) {
  json doc = json::array();
  for (const Landmark& lm : landmarks) {
    doc.push_back({{"id", lm.id},
                   {"label", lm.label},
                   {"description", lm.description},
                   {"aabb",
                    {{"min", {lm.aabb.min.x, lm.aabb.min.y, lm.aabb.min.z}},
                     {"max", {lm.aabb.max.x, lm.aabb.max.y, lm.aabb.max.z}}}}});
  }
  std::ofstream out(path);
  if (!out) raise(Errc::io_failure, "cannot write landmark file: " + path);
  out << doc.dump(2) << '\n';
}

namespace {

// Path costs are a + b*sqrt(2) in units of resolution, with integer step
// counts (a straight, b diagonal). Comparing the integer forms directly keeps
// the search exactly optimal; no floating-point accumulation is involved.
struct StepCost {
  int64_t straight = 0;
  int64_t diagonal = 0;

  StepCost plus(int ds, int dd) const { return {straight + ds, diagonal + dd}; }
};

// a1 + b1*sqrt(2) < a2 + b2*sqrt(2), exactly.
bool cost_less(const StepCost& l, const StepCost& r) {
  int64_t a = l.straight - r.straight;   // compare a < -b*sqrt2 rearranged below
  int64_t b = r.diagonal - l.diagonal;   // l < r  <=>  a < b*sqrt(2)
  if (b == 0) return a < 0;
  if (b > 0) {
    if (a < 0) return true;
    return a * a < 2 * b * b;
  }
  if (a >= 0) return false;
  return a * a > 2 * b * b;
}

double cost_value(const StepCost& c, double resolution) {
  return resolution *
         (static_cast<double>(c.straight) + std::sqrt(2.0) * static_cast<double>(c.diagonal));
}

}  // namespace

PathResult astar_cells(const OccupancyGrid& grid, const Cell& start, const Cell& goal) {
  if (!grid.in_bounds(start) || grid.blocked(start))
    raise(Errc::out_of_bounds, "path start outside free space");
  if (!grid.in_bounds(goal) || grid.blocked(goal))
    raise(Errc::out_of_bounds, "path goal outside free space");

  const size_t total = static_cast<size_t>(grid.nx) * static_cast<size_t>(grid.ny);
  auto id = [&](const Cell& c) {
    return static_cast<size_t>(c.y) * static_cast<size_t>(grid.nx) + static_cast<size_t>(c.x);
  };
  auto heuristic = [&](const Cell& c) {
    int dx = std::abs(c.x - goal.x);
    int dy = std::abs(c.y - goal.y);
    return StepCost{dx > dy ? dx - dy : dy - dx, std::min(dx, dy)};
  };

  // Sentinel must exceed any real cost in BOTH coordinates so that cost_less
  // takes its sign-based early exit; squaring sentinel-sized values overflows.
  std::vector<StepCost> g(total, StepCost{INT64_MAX / 4, INT64_MAX / 4});
  std::vector<int32_t> parent(total, -1);
  std::vector<uint8_t> closed(total, 0);

  struct Entry {
    StepCost f;
    size_t cell;
  };
  auto entry_greater = [](const Entry& a, const Entry& b) {
    if (cost_less(a.f, b.f)) return false;
    if (cost_less(b.f, a.f)) return true;
    return a.cell > b.cell;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(entry_greater)> open(entry_greater);

  g[id(start)] = StepCost{0, 0};
  open.push({heuristic(start), id(start)});

  const int dxs[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  const int dys[8] = {0, 0, 1, -1, 1, -1, 1, -1};

  bool found = false;
  while (!open.empty()) {
    Entry top = open.top();
    open.pop();
    if (closed[top.cell]) continue;
    closed[top.cell] = 1;
    Cell c{static_cast<int>(top.cell % static_cast<size_t>(grid.nx)),
           static_cast<int>(top.cell / static_cast<size_t>(grid.nx))};
    if (c == goal) {
      found = true;
      break;
    }
    for (int k = 0; k < 8; ++k) {
      Cell nb{c.x + dxs[k], c.y + dys[k]};
      if (!grid.in_bounds(nb) || grid.blocked(nb)) continue;
      bool diag = dxs[k] != 0 && dys[k] != 0;
      if (diag) {
        // Both orthogonal cells flanking the diagonal must be free.
        if (grid.blocked({c.x + dxs[k], c.y}) || grid.blocked({c.x, c.y + dys[k]})) continue;
      }
      StepCost cand = g[top.cell].plus(diag ? 0 : 1, diag ? 1 : 0);
      size_t nid = id(nb);
      if (cost_less(cand, g[nid])) {
        g[nid] = cand;
        parent[nid] = static_cast<int32_t>(top.cell);
        StepCost h = heuristic(nb);
        open.push({StepCost{cand.straight + h.straight, cand.diagonal + h.diagonal}, nid});
      }
    }
  }

  if (!found) raise(Errc::unreachable, "no path between start and goal");

  PathResult result;
  result.length = cost_value(g[id(goal)], grid.resolution);
  size_t cur = id(goal);
  std::vector<Cell> rev;
  for (;;) {
    rev.push_back({static_cast<int>(cur % static_cast<size_t>(grid.nx)),
                   static_cast<int>(cur / static_cast<size_t>(grid.nx))});
    if (rev.back() == start) break;
    cur = static_cast<size_t>(parent[cur]);
  }
  result.cells.assign(rev.rbegin(), rev.rend());
  return result;
}

PathResult astar_shortest_path(const OccupancyGrid& grid, const Vec2& start, const Vec2& goal) {
  return astar_cells(grid, grid.cell_at(start), grid.cell_at(goal));
}

double nearest_bbox_distance(const Vec3& pos, const Landmark& lm) {
  return point_aabb_distance(pos, lm.aabb);
}

std::optional<Cell> nearest_free_cell(const OccupancyGrid& grid, const Vec2& p) {
  Cell c0 = grid.cell_at(p);
  c0.x = std::clamp(c0.x, 0, grid.nx - 1);
  c0.y = std::clamp(c0.y, 0, grid.ny - 1);
  int max_r = std::max(grid.nx, grid.ny);
  double best_d = std::numeric_limits<double>::infinity();
  std::optional<Cell> best;
  for (int r = 0; r <= max_r; ++r) {
    // Once a candidate exists, no farther ring can beat it.
    if (best && (r - 1) * grid.resolution > best_d) break;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
        Cell c{c0.x + dx, c0.y + dy};
        if (!grid.in_bounds(c) || grid.blocked(c)) continue;
        Vec2 ctr = grid.cell_center(c);
        double d = (ctr - p).norm();
        if (d < best_d || (d == best_d && best && (c.y < best->y || (c.y == best->y && c.x < best->x)))) {
          best_d = d;
          best = c;
        }
      }
  }
  return best;
}

WorldModel::WorldModel(TriMesh aligned_mesh, GroundFrame frame, OccupancyGrid grid,
                       std::vector<Landmark> landmarks, const GridParams& grid_params)
    : mesh_(std::move(aligned_mesh)),
      frame_(frame),
      grid_(std::move(grid)),
      grid_params_(grid_params),
      landmarks_(std::move(landmarks)) {
  mesh_.validate();
  bvh_ = std::make_unique<MeshBvh>(mesh_);
  TriMesh contact = collision_surface(mesh_, grid_params_.min_height);
  proximity_ = std::make_unique<ProximityIndex>(
      contact.empty() ? ProximityIndex() : ProximityIndex::build(contact));
}

WorldModel::~WorldModel() = default;
WorldModel::WorldModel(WorldModel&&) noexcept = default;
WorldModel& WorldModel::operator=(WorldModel&&) noexcept = default;

const Landmark& WorldModel::landmark_by_id(const std::string& id) const {
  for (const Landmark& lm : landmarks_)
    if (lm.id == id) return lm;
  raise(Errc::invalid_argument, "unknown landmark id '" + id + "'");
}

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::io_failure: return "io_failure";
    case Errc::parse_failure: return "parse_failure";
    case Errc::degenerate_plane: return "degenerate_plane";
    case Errc::empty_mesh: return "empty_mesh";
    case Errc::empty_scene: return "empty_scene";
    case Errc::unreachable: return "unreachable";
    case Errc::out_of_bounds: return "out_of_bounds";
    case Errc::empty_mask: return "empty_mask";
    case Errc::too_few_masks: return "too_few_masks";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::unknown_cluster: return "unknown_cluster";
    case Errc::diverged: return "diverged";
    case Errc::no_visible_view: return "no_visible_view";
    case Errc::empty_ground_truth: return "empty_ground_truth";
    case Errc::invalid_depth: return "invalid_depth";
    case Errc::inconsistent_context: return "inconsistent_context";
    case Errc::malformed_json: return "malformed_json";
    case Errc::missing_key: return "missing_key";
    case Errc::invalid_action: return "invalid_action";
    case Errc::transport: return "transport";
    case Errc::degenerate_segment: return "degenerate_segment";
    case Errc::no_detour: return "no_detour";
    case Errc::insufficient_free_space: return "insufficient_free_space";
    case Errc::empty_results: return "empty_results";
  }
  return "unknown";
}

}  // namespace vgh
