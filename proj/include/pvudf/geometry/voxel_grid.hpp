#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "pvudf/geometry/point_cloud.hpp"

namespace pvudf {

/// Dense M x M x M x C grid over the normalized cube [-0.5, 0.5]^3.
/// Layout is channel-major, then x, y, z (z fastest).
struct VoxelGrid {
  std::size_t resolution = 0;
  std::size_t channels = 1;
  std::vector<double> data;

  VoxelGrid() = default;
  VoxelGrid(std::size_t resolution, std::size_t channels);

  static BoundingBox extent() { return {{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}}; }

  std::size_t volume() const { return resolution * resolution * resolution; }
  std::size_t index(std::size_t c, std::size_t ix, std::size_t iy, std::size_t iz) const {
    return ((c * resolution + ix) * resolution + iy) * resolution + iz;
  }
  double at(std::size_t c, std::size_t ix, std::size_t iy, std::size_t iz) const {
    return data[index(c, ix, iy, iz)];
  }
  std::size_t occupied_count() const;

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;
};

/// floor((x + 0.5) * M), clamped to [0, M - 1].
std::size_t cell_coordinate(double x, std::size_t resolution);
std::array<std::size_t, 3> cell_of(const Vec3& p, std::size_t resolution);
/// Flat (ix * M + iy) * M + iz index of the cell containing p.
std::size_t flat_cell(const Vec3& p, std::size_t resolution);

/// Occupancy grid (C = 1, values in {0, 1}). Requires M >= 2 and a cloud
/// inside the normalized cube (1e-9 tolerance).
VoxelGrid voxelize(const PointCloud& cloud, std::size_t resolution);

/// Position of lattice node (ix, iy, iz) under the align-corners sampling
/// convention: i / (M - 1) - 0.5 per axis.
Vec3 lattice_node(std::size_t ix, std::size_t iy, std::size_t iz, std::size_t resolution);

}  // namespace pvudf
