#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "pvudf/geometry/point_cloud.hpp"

namespace pvudf {

struct Sphere {
  Vec3 center;
  double radius = 1.0;
};

/// Rectangle spanned by orthonormal in-plane axes around `origin`.
struct PlanePatch {
  Vec3 origin;
  Vec3 u_axis{1.0, 0.0, 0.0};
  Vec3 v_axis{0.0, 1.0, 0.0};
  double half_u = 1.0;
  double half_v = 1.0;
};

/// The half of a sphere whose outward directions n satisfy dot(n, axis) >= 0.
struct OpenHemisphere {
  Vec3 center;
  double radius = 1.0;
  Vec3 axis{0.0, 0.0, 1.0};
};

/// Surface of an axis-aligned box (all six faces).
struct BoxShell {
  Vec3 center;
  Vec3 half_extents{1.0, 1.0, 1.0};
};

using AnalyticShape = std::variant<Sphere, PlanePatch, OpenHemisphere, BoxShell>;

/// Throws std::invalid_argument for non-positive sizes or non-unit axes.
void validate(const AnalyticShape& shape);
std::string describe(const AnalyticShape& shape);

/// Exact unsigned distance from p to the shape's surface.
double oracle_ud(const AnalyticShape& shape, const Vec3& p);

struct Projection {
  Vec3 point;
  /// p lies on the cut locus; `point` is the lexicographically lowest of the
  /// equidistant nearest points.
  bool ambiguous = false;
};

/// Nearest surface point to p.
Projection oracle_project(const AnalyticShape& shape, const Vec3& p);

/// Area-uniform surface samples, deterministic for a given seed.
PointCloud sample_surface(const AnalyticShape& shape, std::size_t count, std::uint64_t seed);

struct QuerySample {
  Vec3 position;
  double target_ud = 0.0;
};

/// Training queries: surface samples displaced by isotropic Gaussian noise whose
/// standard deviation is delta / 3 or delta / 10 with equal probability, with the
/// exact unsigned distance as target.
std::vector<QuerySample> sample_queries(const AnalyticShape& shape, std::size_t count,
                                        double delta, std::uint64_t seed);

/// The same surface expressed in the frame produced by `transform`.
AnalyticShape transformed(const AnalyticShape& shape, const NormalizationTransform& transform);

/// Tight axis-aligned bounds of the surface.
BoundingBox analytic_bounds(const AnalyticShape& shape);

double surface_area(const AnalyticShape& shape);

}  // namespace pvudf
