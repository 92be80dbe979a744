#pragma once

// Planar geometry shared by the scene, sensor and BEV code: vectors, rigid
// poses, oriented boxes and the segment/ray intersection tests that define
// ground-truth visibility.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>

namespace slimcomm {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
  constexpr Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr Vec2& operator-=(Vec2 o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  constexpr bool operator==(const Vec2&) const = default;
};

constexpr Vec2 operator*(double s, Vec2 v) { return v * s; }

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }

/// Left-hand perpendicular (counter-clockwise quarter turn).
constexpr Vec2 perp(Vec2 v) { return {-v.y, v.x}; }

inline Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

inline bool is_finite(Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); }

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

/// Rigid 2-D pose: maps body-frame coordinates into the parent (world) frame.
struct Pose2 {
  Vec2 position;
  double yaw = 0.0;

  Vec2 to_world(Vec2 local) const { return position + rotate(local, yaw); }
  Vec2 to_local(Vec2 world) const { return rotate(world - position, -yaw); }
  Vec2 direction_to_local(Vec2 world_dir) const { return rotate(world_dir, -yaw); }

  bool operator==(const Pose2&) const = default;
};

/// Oriented rectangle; `length` runs along the heading, `width` across it.
struct OrientedBox {
  Vec2 center;
  double yaw = 0.0;
  double length = 1.0;
  double width = 1.0;

  Vec2 to_local(Vec2 p) const { return rotate(p - center, -yaw); }

  bool contains(Vec2 p, double margin = 0.0) const {
    const Vec2 q = to_local(p);
    return std::abs(q.x) <= length / 2.0 + margin && std::abs(q.y) <= width / 2.0 + margin;
  }

  std::array<Vec2, 4> corners() const {
    const double hl = length / 2.0;
    const double hw = width / 2.0;
    return {center + rotate({hl, hw}, yaw), center + rotate({-hl, hw}, yaw),
            center + rotate({-hl, -hw}, yaw), center + rotate({hl, -hw}, yaw)};
  }

  /// Euclidean distance from p to the box boundary (inside or outside).
  double boundary_distance(Vec2 p) const {
    const Vec2 q = to_local(p);
    const double dx = std::abs(q.x) - length / 2.0;
    const double dy = std::abs(q.y) - width / 2.0;
    if (dx <= 0.0 && dy <= 0.0) return std::min(-dx, -dy);
    return std::hypot(std::max(dx, 0.0), std::max(dy, 0.0));
  }
};

/// Entry parameter t in [0, 1] at which segment a->b first touches the box,
/// or nullopt when it misses. Liang-Barsky clipping in the box frame.
inline std::optional<double> segment_box_entry(Vec2 a, Vec2 b, const OrientedBox& box) {
  const Vec2 p = box.to_local(a);
  const Vec2 d = box.to_local(b) - p;
  double t0 = 0.0;
  double t1 = 1.0;
  const std::array<double, 2> origin{p.x, p.y};
  const std::array<double, 2> delta{d.x, d.y};
  const std::array<double, 2> half{box.length / 2.0, box.width / 2.0};
  for (int axis = 0; axis < 2; ++axis) {
    if (std::abs(delta[axis]) < 1e-15) {
      if (std::abs(origin[axis]) > half[axis]) return std::nullopt;
      continue;
    }
    double ta = (-half[axis] - origin[axis]) / delta[axis];
    double tb = (half[axis] - origin[axis]) / delta[axis];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return t0;
}

inline bool segment_intersects_box(Vec2 a, Vec2 b, const OrientedBox& box) {
  return segment_box_entry(a, b, box).has_value();
}

/// Distance along a unit ray to the first boundary crossing of the box, for
/// rays that start outside it. Rays starting inside return nullopt.
inline std::optional<double> ray_box_distance(Vec2 origin, Vec2 unit_dir, const OrientedBox& box,
                                              double max_range) {
  if (box.contains(origin)) return std::nullopt;
  const auto t = segment_box_entry(origin, origin + unit_dir * max_range, box);
  if (!t) return std::nullopt;
  return *t * max_range;
}

/// Separating-axis overlap test for two oriented boxes, inflated by `margin`.
inline bool boxes_overlap(const OrientedBox& a, const OrientedBox& b, double margin = 0.0) {
  const auto project = [](const OrientedBox& box, Vec2 axis, double pad) {
    const double c = dot(box.center, axis);
    const Vec2 ax = rotate({1.0, 0.0}, box.yaw);
    const Vec2 ay = perp(ax);
    const double r = (box.length / 2.0 + pad) * std::abs(dot(ax, axis)) +
                     (box.width / 2.0 + pad) * std::abs(dot(ay, axis));
    return std::pair{c - r, c + r};
  };
  const std::array<Vec2, 4> axes{rotate({1.0, 0.0}, a.yaw), rotate({0.0, 1.0}, a.yaw),
                                 rotate({1.0, 0.0}, b.yaw), rotate({0.0, 1.0}, b.yaw)};
  for (const Vec2& axis : axes) {
    const auto [amin, amax] = project(a, axis, margin / 2.0);
    const auto [bmin, bmax] = project(b, axis, margin / 2.0);
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

}  // namespace slimcomm
