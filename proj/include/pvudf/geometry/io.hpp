#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "pvudf/geometry/point_cloud.hpp"

namespace pvudf {

/// ASCII "x y z" per line. Blank lines and lines starting with '#' are
/// skipped; extra columns are ignored.
PointCloud read_xyz(const std::filesystem::path& path);
void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);

enum class PlyEncoding { ascii, binary_little_endian };

/// Reads the x/y/z properties of the "vertex" element from ASCII or binary
/// (either endianness) PLY; other properties and elements are skipped.
PointCloud read_ply(const std::filesystem::path& path);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud,
               PlyEncoding encoding = PlyEncoding::binary_little_endian);

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
};

/// Wavefront OBJ vertices and faces; polygons are fan-triangulated.
TriangleMesh read_obj(const std::filesystem::path& path);

/// Area-weighted uniform samples on the mesh surface.
PointCloud sample_mesh(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);

/// Dispatches on extension: .xyz/.txt, .ply, or .obj (sampled with
/// `obj_samples` points).
PointCloud read_point_cloud(const std::filesystem::path& path, std::size_t obj_samples = 100000,
                            std::uint64_t seed = 0);
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace pvudf
