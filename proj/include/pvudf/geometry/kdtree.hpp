#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pvudf/geometry/point_cloud.hpp"

namespace pvudf {

/// Static 3-d tree for exact nearest-neighbour queries.
///
/// Pruning only discards a subtree when its splitting-plane distance squared
/// is strictly larger than the best squared distance found, so the returned
/// distance is bit-identical to an exhaustive scan using distance_squared().
class KdTree {
 public:
  struct Neighbor {
    std::size_t index = 0;
    double distance_squared = 0.0;
  };

  explicit KdTree(PointCloud points, std::size_t leaf_size = 12);

  Neighbor nearest(const Vec3& query) const;
  std::size_t size() const { return points_.size(); }
  const PointCloud& points() const { return points_; }

 private:
  struct Node {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::int32_t left = -1;  // -1 marks a leaf
    std::int32_t right = -1;
    int axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& query, Neighbor& best) const;

  PointCloud points_;
  std::vector<std::uint32_t> order_;
  std::vector<Vec3> ordered_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

/// Distance from each point of `from` to its nearest neighbour in `to`.
std::vector<double> nearest_distance(const PointCloud& from, const PointCloud& to);
std::vector<double> nearest_distance(const PointCloud& from, const KdTree& to);

}  // namespace pvudf
