#include "pvudf/geometry/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pvudf {

KdTree::KdTree(PointCloud points, std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
  if (points_.empty()) throw std::invalid_argument("nearest neighbour index over an empty cloud");
  if (points_.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("point cloud too large for the spatial index");
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
  build(0, static_cast<std::uint32_t>(points_.size()));
  ordered_.reserve(points_.size());
  for (std::uint32_t i : order_) ordered_.push_back(points_[i]);
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    const Vec3& p = points_[order_[i]];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const Vec3 extent = hi - lo;
  int axis = 0;
  if (extent.y > extent[axis]) axis = 1;
  if (extent.z > extent[axis]) axis = 2;
  if (extent[axis] == 0.0) return id;  // all points coincide

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::int32_t index, const Vec3& query, Neighbor& best) const {
  const Node& node = nodes_[static_cast<std::size_t>(index)];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const double d2 = distance_squared(query, ordered_[i]);
      if (d2 < best.distance_squared) {
        best.distance_squared = d2;
        best.index = order_[i];
      }
    }
    return;
  }
  const double diff = query[node.axis] - node.split;
  const std::int32_t near = diff < 0.0 ? node.left : node.right;
  const std::int32_t far = diff < 0.0 ? node.right : node.left;
  search(near, query, best);
  if (!(diff * diff > best.distance_squared)) search(far, query, best);
}

KdTree::Neighbor KdTree::nearest(const Vec3& query) const {
  Neighbor best{0, std::numeric_limits<double>::infinity()};
  search(0, query, best);
  return best;
}

std::vector<double> nearest_distance(const PointCloud& from, const KdTree& to) {
  std::vector<double> out;
  out.reserve(from.size());
  for (const Vec3& p : from) out.push_back(std::sqrt(to.nearest(p).distance_squared));
  return out;
}

std::vector<double> nearest_distance(const PointCloud& from, const PointCloud& to) {
  if (to.empty()) throw std::invalid_argument("nearest_distance: target cloud is empty");
  return nearest_distance(from, KdTree(to));
}

}  // namespace pvudf
