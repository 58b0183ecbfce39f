#include "pvudf/geometry/point_cloud.hpp"

#include <algorithm>
#include <stdexcept>

namespace pvudf {

BoundingBox bounding_box(const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("bounding box of an empty cloud");
  BoundingBox box{cloud.front(), cloud.front()};
  for (const Vec3& p : cloud) {
    for (int a = 0; a < 3; ++a) {
      box.lo[a] = std::min(box.lo[a], p[a]);
      box.hi[a] = std::max(box.hi[a], p[a]);
    }
  }
  return box;
}

PointCloud NormalizationTransform::apply(const PointCloud& cloud) const {
  PointCloud out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud) out.push_back(apply(p));
  return out;
}

PointCloud NormalizationTransform::invert(const PointCloud& cloud) const {
  PointCloud out;
  out.reserve(cloud.size());
  for (const Vec3& q : cloud) out.push_back(invert(q));
  return out;
}

NormalizedCloud normalize_to_unit_cube(const PointCloud& cloud, double fill) {
  if (cloud.empty()) throw std::invalid_argument("normalize: empty input");
  if (!(fill > 0.0 && fill <= 1.0)) throw std::invalid_argument("normalize: fill must be in (0, 1]");
  for (const Vec3& p : cloud) {
    if (!is_finite(p)) throw std::invalid_argument("normalize: non-finite coordinate");
  }
  const BoundingBox box = bounding_box(cloud);
  const Vec3 extent = box.extent();
  const double longest = std::max({extent.x, extent.y, extent.z});
  NormalizedCloud result;
  result.transform.center = box.center();
  result.transform.scale = longest > 0.0 ? fill / longest : 1.0;
  result.cloud = result.transform.apply(cloud);
  return result;
}

bool inside_unit_cube(const Vec3& p, double tolerance) {
  const double limit = 0.5 + tolerance;
  return std::abs(p.x) <= limit && std::abs(p.y) <= limit && std::abs(p.z) <= limit;
}

}  // namespace pvudf
