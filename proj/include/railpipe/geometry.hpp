#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "railpipe/types.hpp"

namespace railpipe {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline bool operator==(Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

// Cross products whose magnitude falls below this are treated as collinear
// by the polygon clipper: the vertex counts as inside and no intersection
// vertex is synthesized.
inline constexpr double kClipEps = 1e-9;

// Unions smaller than this area/volume are degenerate; IoU is reported as 0
// rather than dividing by ~0.
inline constexpr double kDegenerateUnionEps = 1e-12;

// BEV footprint corners, counter-clockwise. At yaw 0 the first corner is
// (+length/2, +width/2) relative to the center.
inline std::array<Vec2, 4> bev_corners(const Box3D& box) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double hl = 0.5 * box.length;
  const double hw = 0.5 * box.width;
  const std::array<Vec2, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Vec2, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {box.cx + c * local[i].x - s * local[i].y,
              box.cy + s * local[i].x + c * local[i].y};
  }
  return out;
}

// Shoelace area of a simple polygon. The sum starts at the lexicographically
// smallest vertex so that the value does not depend on which vertex the
// caller happened to list first; clipping identical polygons then yields
// bit-identical areas and an IoU of exactly 1.
inline double polygon_area(const std::vector<Vec2>& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return 0.0;
  std::size_t start = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (poly[i].x < poly[start].x ||
        (poly[i].x == poly[start].x && poly[i].y < poly[start].y)) {
      start = i;
    }
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2& p = poly[(start + k) % n];
    const Vec2& q = poly[(start + k + 1) % n];
    acc += cross(p, q);
  }
  return 0.5 * std::abs(acc);
}

// Sutherland-Hodgman clip of a convex subject polygon against a convex
// counter-clockwise quad.
inline std::vector<Vec2> clip_polygon(std::vector<Vec2> subject,
                                      const std::array<Vec2, 4>& clip) {
  std::vector<Vec2> out;
  out.reserve(8);
  for (std::size_t e = 0; e < 4 && !subject.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 ab = clip[(e + 1) % 4] - a;
    out.clear();
    const std::size_t n = subject.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 s = subject[i];
      const Vec2 t = subject[(i + 1) % n];
      const double ds = cross(ab, s - a);
      const double dt = cross(ab, t - a);
      const bool s_in = ds >= -kClipEps;
      const bool t_in = dt >= -kClipEps;
      if (s_in != t_in) {
        const double u = ds / (ds - dt);
        out.push_back({s.x + u * (t.x - s.x), s.y + u * (t.y - s.y)});
      }
      if (t_in) out.push_back(t);
    }
    subject = out;
  }
  return subject;
}

inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  std::vector<Vec2> subject(ca.begin(), ca.end());
  return polygon_area(clip_polygon(std::move(subject), cb));
}

// BEV IoU of the two yaw-rotated footprints. All three areas go through the
// same polygon path so identical boxes divide identical doubles.
inline double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection_area(a, b);
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const double area_a = polygon_area({ca.begin(), ca.end()});
  const double area_b = polygon_area({cb.begin(), cb.end()});
  const double uni = area_a + area_b - inter;
  if (uni < kDegenerateUnionEps) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// 3D IoU: BEV intersection area times vertical overlap over the volume
// union. Volumes are computed from the same BEV polygon areas.
inline double iou_3d(const Box3D& a, const Box3D& b) {
  const double dz =
      std::max(0.0, std::min(a.z_max(), b.z_max()) -
                        std::max(a.z_min(), b.z_min()));
  if (dz == 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dz;
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const double vol_a = polygon_area({ca.begin(), ca.end()}) * a.height;
  const double vol_b = polygon_area({cb.begin(), cb.end()}) * b.height;
  const double uni = vol_a + vol_b - inter;
  if (uni < kDegenerateUnionEps) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// Closed-box membership: points exactly on a face count as inside, so
// min-point label filtering is deterministic.
inline bool point_in_box(double px, double py, double pz, const Box3D& box) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double dx = px - box.cx;
  const double dy = py - box.cy;
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * box.length && std::abs(ly) <= 0.5 * box.width &&
         std::abs(pz - box.cz) <= 0.5 * box.height;
}

inline std::vector<std::size_t> points_in_box(const PointCloud& cloud,
                                              const Box3D& box) {
  std::vector<std::size_t> idx;
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double hl = 0.5 * box.length;
  const double hw = 0.5 * box.width;
  const double hh = 0.5 * box.height;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double dx = cloud.x[i] - box.cx;
    const double dy = cloud.y[i] - box.cy;
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    if (std::abs(lx) <= hl && std::abs(ly) <= hw &&
        std::abs(cloud.z[i] - box.cz) <= hh) {
      idx.push_back(i);
    }
  }
  return idx;
}

inline std::size_t count_points_in_box(const PointCloud& cloud,
                                       const Box3D& box) {
  return points_in_box(cloud, box).size();
}

// Horizontal (x, y) translation; z, yaw, dims and channels are untouched.
inline PointCloud translated(PointCloud cloud, Vec2 v) {
  for (auto& px : cloud.x) px += v.x;
  for (auto& py : cloud.y) py += v.y;
  return cloud;
}

inline Box3D translated(const Box3D& box, Vec2 v) {
  Box3D out = box;
  out.cx += v.x;
  out.cy += v.y;
  return out;
}

inline LabeledBox translated(LabeledBox label, Vec2 v) {
  label.box = translated(label.box, v);
  return label;
}

}  // namespace railpipe
