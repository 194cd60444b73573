#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace vgh {

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a <= -kPi) a += 2.0 * kPi;
  return a;
}

struct Vec2 {
  double x = 0.0, y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  double squared_norm() const { return x * x + y * y + z * z; }
  Vec3 normalized() const {
    double n = norm();
    return n > 0.0 ? Vec3{x / n, y / n, z / n} : Vec3{0, 0, 0};
  }
  Vec2 xy() const { return {x, y}; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

/// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return Mat3{}; }

  static Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    return Mat3{{r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z}};
  }

  /// Rotation by `angle` radians about unit `axis` (Rodrigues).
  static Mat3 axis_angle(const Vec3& axis, double angle) {
    double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    double x = axis.x, y = axis.y, z = axis.z;
    return Mat3{{t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
                 t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
                 t * x * z - s * y, t * y * z + s * x, t * z * z + c}};
  }

  static Mat3 rotation_z(double yaw) { return axis_angle({0, 0, 1}, yaw); }
  static Mat3 rotation_x(double a) { return axis_angle({1, 0, 0}, a); }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * o.m[k * 3 + j];
        r.m[i * 3 + j] = s;
      }
    return r;
  }

  Mat3 transposed() const {
    return Mat3{{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
  }
};

/// Minimal rotation taking unit vector `from` onto unit vector `to`.
inline Mat3 rotation_between(const Vec3& from, const Vec3& to) {
  Vec3 axis = from.cross(to);
  double s = axis.norm();
  double c = std::clamp(from.dot(to), -1.0, 1.0);
  if (s < 1e-12) {
    if (c > 0.0) return Mat3::identity();
    // Antiparallel: rotate pi about any axis orthogonal to `from`.
    Vec3 ortho = std::abs(from.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 a = from.cross(ortho).normalized();
    return Mat3::axis_angle(a, kPi);
  }
  return Mat3::axis_angle(axis * (1.0 / s), std::atan2(s, c));
}

struct Aabb {
  Vec3 min{0, 0, 0};
  Vec3 max{0, 0, 0};

  Vec3 center() const { return (min + max) * 0.5; }
  Vec3 extent() const { return max - min; }
  bool contains(const Vec3& p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y &&
           p.z >= min.z && p.z <= max.z;
  }
  void expand(const Vec3& p) {
    min.x = std::min(min.x, p.x); min.y = std::min(min.y, p.y); min.z = std::min(min.z, p.z);
    max.x = std::max(max.x, p.x); max.y = std::max(max.y, p.y); max.z = std::max(max.z, p.z);
  }
};

/// Distance from `p` to the closest point of `box` (0 inside).
inline double point_aabb_distance(const Vec3& p, const Aabb& box) {
  Vec3 q{std::clamp(p.x, box.min.x, box.max.x),
         std::clamp(p.y, box.min.y, box.max.y),
         std::clamp(p.z, box.min.z, box.max.z)};
  return (p - q).norm();
}

/// Distance from point to segment [a, b].
inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  Vec3 ab = b - a;
  double len2 = ab.squared_norm();
  if (len2 <= 0.0) return (p - a).norm();
  double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + ab * t)).norm();
}

}  // namespace vgh
