#include "pvudf/geometry/voxel_grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pvudf {

VoxelGrid::VoxelGrid(std::size_t resolution_, std::size_t channels_)
    : resolution(resolution_),
      channels(channels_),
      data(resolution_ * resolution_ * resolution_ * channels_, 0.0) {}

std::size_t VoxelGrid::occupied_count() const {
  return static_cast<std::size_t>(
      std::count_if(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(volume()),
                    [](double v) { return v != 0.0; }));
}

std::size_t cell_coordinate(double x, std::size_t resolution) {
  const double cell = std::floor((x + 0.5) * static_cast<double>(resolution));
  if (cell <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(cell), resolution - 1);
}

std::array<std::size_t, 3> cell_of(const Vec3& p, std::size_t resolution) {
  return {cell_coordinate(p.x, resolution), cell_coordinate(p.y, resolution),
          cell_coordinate(p.z, resolution)};
}

std::size_t flat_cell(const Vec3& p, std::size_t resolution) {
  const auto c = cell_of(p, resolution);
  return (c[0] * resolution + c[1]) * resolution + c[2];
}

VoxelGrid voxelize(const PointCloud& cloud, std::size_t resolution) {
  if (resolution < 2) throw std::invalid_argument("voxelize: resolution must be at least 2");
  VoxelGrid grid(resolution, 1);
  for (const Vec3& p : cloud) {
    if (!is_finite(p) || !inside_unit_cube(p)) {
      throw std::invalid_argument("voxelize: point (" + std::to_string(p.x) + ", " +
                                  std::to_string(p.y) + ", " + std::to_string(p.z) +
                                  ") lies outside the normalized cube");
    }
    grid.data[flat_cell(p, resolution)] = 1.0;
  }
  return grid;
}

Vec3 lattice_node(std::size_t ix, std::size_t iy, std::size_t iz, std::size_t resolution) {
  const double step = 1.0 / static_cast<double>(resolution - 1);
  return {static_cast<double>(ix) * step - 0.5, static_cast<double>(iy) * step - 0.5,
          static_cast<double>(iz) * step - 0.5};
}

}  // namespace pvudf
