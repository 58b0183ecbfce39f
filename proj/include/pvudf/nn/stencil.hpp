#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>

namespace pvudf::nn {

/// Trilinear stencil of one coordinate on a G^3 align-corners lattice over
/// [-0.5, 0.5]^3. Coordinates outside the cube are clamped to its faces.
struct Stencil {
  std::size_t base[3];
  double t[3];
  bool clamped[3];

  /// Flat lattice index (ix * G + iy) * G + iz of corner 0..7 (bit 2 = x, bit 0 = z).
  std::size_t node(int corner, std::size_t g) const {
    const std::size_t ix = base[0] + ((corner >> 2) & 1);
    const std::size_t iy = base[1] + ((corner >> 1) & 1);
    const std::size_t iz = base[2] + (corner & 1);
    return (ix * g + iy) * g + iz;
  }

  double weight(int corner) const {
    const double wx = (corner >> 2) & 1 ? t[0] : 1.0 - t[0];
    const double wy = (corner >> 1) & 1 ? t[1] : 1.0 - t[1];
    const double wz = corner & 1 ? t[2] : 1.0 - t[2];
    return wx * wy * wz;
  }

  /// d weight(corner) / d t[axis].
  double weight_slope(int corner, int axis) const {
    double w = 1.0;
    for (int other = 0; other < 3; ++other) {
      const bool upper = (corner >> (2 - other)) & 1;
      if (other == axis) {
        w *= upper ? 1.0 : -1.0;
      } else {
        w *= upper ? t[other] : 1.0 - t[other];
      }
    }
    return w;
  }
};

inline Stencil make_stencil(const double* p, std::size_t g) {
  Stencil s{};
  const double scale = static_cast<double>(g - 1);
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(p[a])) throw std::domain_error("grid_sample: non-finite coordinate");
    double x = p[a];
    s.clamped[a] = x < -0.5 || x > 0.5;
    x = std::clamp(x, -0.5, 0.5);
    const double u = (x + 0.5) * scale;
    const double cell = std::min(std::floor(u), scale - 1.0);
    s.base[a] = static_cast<std::size_t>(cell);
    s.t[a] = u - cell;
  }
  return s;
}

}  // namespace pvudf::nn
