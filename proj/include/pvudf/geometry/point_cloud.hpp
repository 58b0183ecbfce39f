#pragma once

#include <vector>

#include "pvudf/geometry/vec3.hpp"

namespace pvudf {

using PointCloud = std::vector<Vec3>;

struct BoundingBox {
  Vec3 lo;
  Vec3 hi;
  Vec3 center() const { return (lo + hi) * 0.5; }
  Vec3 extent() const { return hi - lo; }
  double diagonal() const { return norm(hi - lo); }
};

BoundingBox bounding_box(const PointCloud& cloud);

/// Maps world coordinates into the normalized frame: (p - center) * scale.
struct NormalizationTransform {
  Vec3 center;
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
  Vec3 invert(const Vec3& q) const { return q / scale + center; }
  PointCloud apply(const PointCloud& cloud) const;
  PointCloud invert(const PointCloud& cloud) const;
};

/// Centres the bounding box at the origin and scales uniformly so the longest
/// side spans `fill` (default: the whole [-0.5, 0.5] cube). A cloud with zero
/// extent maps to the origin with scale 1. Throws on empty or non-finite input.
struct NormalizedCloud {
  PointCloud cloud;
  NormalizationTransform transform;
};
NormalizedCloud normalize_to_unit_cube(const PointCloud& cloud, double fill = 1.0);

bool inside_unit_cube(const Vec3& p, double tolerance = 1e-9);

}  // namespace pvudf
