#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "pvudf/geometry/io.hpp"
#include "pvudf/geometry/kdtree.hpp"
#include "pvudf/geometry/shapes.hpp"
#include "pvudf/geometry/voxel_grid.hpp"
#include "testing.hpp"

using namespace pvudf;
using pvudf::testing::random_cloud;

namespace {

const std::vector<AnalyticShape> kShapes{
    Sphere{{0.1, -0.2, 0.3}, 0.7},
    PlanePatch{{0, 0, 0.1}, {1, 0, 0}, {0, 1, 0}, 0.4, 0.2},
    OpenHemisphere{{0, 0, 0}, 1.0, {0, 0, 1}},
    OpenHemisphere{{0.2, 0, 0}, 0.5, {0, 1, 0}},
    BoxShell{{0, 0.1, 0}, {0.3, 0.2, 0.4}},
};

double brute_force_nearest(const PointCloud& cloud, const Vec3& q) {
  double best = INFINITY;
  for (const Vec3& p : cloud) best = std::min(best, distance_squared(p, q));
  return std::sqrt(best);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pvudf_geometry_" + name);
}

}  // namespace

TEST_CASE("normalize_to_unit_cube") {
  auto two = normalize_to_unit_cube({{0, 0, 0}, {2, 0, 0}});
  CHECK(two.transform.scale == 0.5);
  CHECK(two.transform.center == Vec3{1, 0, 0});
  CHECK(two.cloud[0] == Vec3{-0.5, 0, 0});
  CHECK(two.cloud[1] == Vec3{0.5, 0, 0});

  auto single = normalize_to_unit_cube({{5, 5, 5}});
  CHECK(single.cloud[0] == Vec3{0, 0, 0});
  CHECK(single.transform.scale == 1.0);

  std::mt19937_64 rng(1);
  PointCloud cloud = random_cloud(100, rng, 7.0);
  for (Vec3& p : cloud) p = Vec3{p.x, 0.3 * p.y, 2.0 * p.z} + Vec3{4, -1, 9};
  auto n = normalize_to_unit_cube(cloud, 0.8);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(inside_unit_cube(n.cloud[i]));
    CHECK(norm(n.transform.invert(n.cloud[i]) - cloud[i]) < 1e-12);
  }
  const BoundingBox box = bounding_box(n.cloud);
  CHECK(box.extent().z == doctest::Approx(0.8).epsilon(1e-12));

  CHECK_THROWS_WITH(normalize_to_unit_cube({}), doctest::Contains("empty input"));
  CHECK_THROWS(normalize_to_unit_cube({{0, NAN, 0}}));
}

TEST_CASE("voxelize") {
  VoxelGrid one = voxelize({{0, 0, 0}}, 2);
  CHECK(one.occupied_count() == 1);
  CHECK(one.at(0, 1, 1, 1) == 1.0);
  CHECK(voxelize({{0.5, -0.5, 0.5}}, 4).at(0, 3, 0, 3) == 1.0);

  std::mt19937_64 rng(2);
  const PointCloud cloud = random_cloud(10000, rng);
  const VoxelGrid grid = voxelize(cloud, 32);
  std::vector<double> oracle(32 * 32 * 32, 0.0);
  for (const Vec3& p : cloud) {
    auto bin = [](double x) { return std::min<long>(31, std::max<long>(0, long(std::floor((x + 0.5) * 32)))); };
    oracle[(bin(p.x) * 32 + bin(p.y)) * 32 + bin(p.z)] = 1.0;
  }
  CHECK(grid.data == oracle);
  for (const Vec3& p : cloud) CHECK(grid.data[flat_cell(p, 32)] == 1.0);
  for (double v : grid.data) CHECK((v == 0.0 || v == 1.0));

  CHECK_THROWS(voxelize({{0.6, 0, 0}}, 8));
  CHECK_NOTHROW(voxelize({{0.5 + 1e-10, 0, 0}}, 8));
  CHECK_THROWS(voxelize({{0, 0, 0}}, 1));
  CHECK(lattice_node(0, 3, 1, 4).y == doctest::Approx(0.5));
}

TEST_CASE("oracle distances") {
  CHECK(oracle_ud(Sphere{{0, 0, 0}, 1}, {0, 0, 0}) == 1.0);
  CHECK(oracle_ud(Sphere{{0, 0, 0}, 1}, {2, 0, 0}) == 1.0);
  const OpenHemisphere hemi{{0, 0, 0}, 1.0, {0, 0, 1}};
  CHECK(oracle_ud(hemi, {0, 0, -1}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

  // dense-sampling oracle for the rim case
  const PointCloud dense = sample_surface(hemi, 200000, 3);
  CHECK(brute_force_nearest(dense, {0, 0, -1}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-4));
  const Projection rim = oracle_project(hemi, {0, 0, -1});
  CHECK(rim.ambiguous);
  CHECK(std::abs(rim.point.z) < 1e-15);
  CHECK(norm(rim.point) == doctest::Approx(1.0));
  CHECK(norm(rim.point - Vec3{0, 0, -1}) == doctest::Approx(std::sqrt(2.0)));

  CHECK(oracle_project(Sphere{{0, 0, 0}, 1}, {2, 0, 0}).point == Vec3{1, 0, 0});
  const PlanePatch plane{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, 1.0, 1.0};
  const Projection foot = oracle_project(plane, {0.2, 0.3, 0.7});
  CHECK(norm(foot.point - Vec3{0.2, 0.3, 0.0}) < 1e-15);
}

TEST_CASE("oracle properties on every shape") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (const AnalyticShape& shape : kShapes) {
    CAPTURE(describe(shape));
    const PointCloud dense = sample_surface(shape, 100000, 5);
    for (int i = 0; i < 200; ++i) {
      const Vec3 p{u(rng), u(rng), u(rng)};
      const Vec3 q{u(rng), u(rng), u(rng)};
      const double dp = oracle_ud(shape, p);
      CHECK(std::abs(dp - oracle_ud(shape, q)) <= norm(p - q) + 1e-12);
      const Projection proj = oracle_project(shape, p);
      CHECK(oracle_ud(shape, proj.point) < 1e-9);
      CHECK(std::abs(norm(p - proj.point) - dp) < 1e-9);
      CHECK(brute_force_nearest(dense, p) >= dp - 1e-12);
      CHECK(brute_force_nearest(dense, p) - dp < 0.03);
      if (!proj.ambiguous && dp > 1e-3) {
        const double h = 1e-6;
        Vec3 g;
        for (int a = 0; a < 3; ++a) {
          Vec3 e{};
          (a == 0 ? e.x : a == 1 ? e.y : e.z) = h;
          (a == 0 ? g.x : a == 1 ? g.y : g.z) = (oracle_ud(shape, p + e) - oracle_ud(shape, p - e)) / (2 * h);
        }
        CHECK(std::abs(norm(g) - 1.0) < 1e-5);
      }
    }
  }
}

TEST_CASE("sample_surface") {
  const PointCloud sphere = sample_surface(Sphere{{0, 0, 0}, 1}, 4096, 1);
  for (const Vec3& p : sphere) CHECK(oracle_ud(Sphere{{0, 0, 0}, 1}, p) < 1e-9);
  const PointCloud hemi = sample_surface(OpenHemisphere{{0, 0, 0}, 1, {0, 0, 1}}, 4096, 1);
  for (const Vec3& p : hemi) CHECK(p.z >= -1e-9);
  const PointCloud many = sample_surface(Sphere{{0, 0, 0}, 1}, 10000, 2);
  Vec3 mean{};
  for (const Vec3& p : many) mean = mean + p / 10000.0;
  // each coordinate has variance 1/3, so the mean has std 0.0058 per axis
  CHECK(norm(mean) < 0.02);
  CHECK(sample_surface(Sphere{{0, 0, 0}, 1}, 10, 9) == sample_surface(Sphere{{0, 0, 0}, 1}, 10, 9));
  CHECK(sample_surface(Sphere{{0, 0, 0}, 1}, 10, 9) != sample_surface(Sphere{{0, 0, 0}, 1}, 10, 8));

  // box faces are hit in proportion to their area
  const BoxShell box{{0, 0, 0}, {0.1, 0.2, 0.4}};
  const PointCloud b = sample_surface(box, 40000, 3);
  std::size_t on_z = 0;
  for (const Vec3& p : b) on_z += std::abs(std::abs(p.z) - 0.4) < 1e-12;
  const double expected = 2 * 0.2 * 0.4 / (2 * (0.2 * 0.4 + 0.2 * 0.8 + 0.4 * 0.8));
  CHECK(double(on_z) / b.size() == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("sample_queries") {
  // sphere at the size it has in the normalized training frame
  const Sphere s{{0, 0, 0}, 0.4};
  const auto queries = sample_queries(s, 1000, 0.1, 7);
  CHECK(queries.size() == 1000);
  const PointCloud dense = sample_surface(s, 100000, 8);
  const KdTree tree(dense);
  double mean_gap = 0.0;
  for (const QuerySample& q : queries) {
    CHECK(q.target_ud >= 0.0);
    CHECK(q.target_ud == doctest::Approx(oracle_ud(s, q.position)).epsilon(1e-12));
    const double sampled = std::sqrt(tree.nearest(q.position).distance_squared);
    CHECK(sampled >= q.target_ud - 1e-12);
    mean_gap += (sampled - q.target_ud) / queries.size();
  }
  CHECK(mean_gap < 2e-3);
  CHECK(oracle_ud(Sphere{{0, 0, 0}, 1}, {2, 0, 0}) == 1.0);
  CHECK_THROWS(sample_queries(s, 0, 0.1, 1));
  CHECK_THROWS(sample_queries(s, 10, 0.0, 1));
}

TEST_CASE("transformed shapes follow the normalization") {
  const NormalizationTransform t{{1, 2, 3}, 0.25};
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-2, 2);
  for (const AnalyticShape& shape : kShapes) {
    const AnalyticShape moved = transformed(shape, t);
    for (int i = 0; i < 50; ++i) {
      const Vec3 p{u(rng), u(rng), u(rng)};
      CHECK(oracle_ud(moved, t.apply(p)) == doctest::Approx(oracle_ud(shape, p) * 0.25).epsilon(1e-12));
    }
  }
}

TEST_CASE("invalid shapes") {
  CHECK_THROWS(validate(Sphere{{0, 0, 0}, 0.0}));
  CHECK_THROWS(validate(OpenHemisphere{{0, 0, 0}, 1.0, {0, 0, 2}}));
  CHECK_THROWS(validate(PlanePatch{{0, 0, 0}, {1, 0, 0}, {1, 0, 0}, 1, 1}));
  CHECK_THROWS(validate(BoxShell{{0, 0, 0}, {1, -1, 1}}));
}

TEST_CASE("nearest_distance") {
  std::mt19937_64 rng(9);
  const PointCloud a = random_cloud(512, rng);
  CHECK(nearest_distance(a, a) == std::vector<double>(512, 0.0));
  CHECK(nearest_distance({{0, 0, 0}}, {{3, 4, 0}}) == std::vector<double>{5.0});
  for (std::size_t n : {1, 2, 13, 512, 2048}) {
    const PointCloud from = random_cloud(n, rng);
    const PointCloud to = random_cloud(n, rng);
    const auto fast = nearest_distance(from, to);
    for (std::size_t i = 0; i < n; ++i) CHECK(fast[i] == brute_force_nearest(to, from[i]));
  }
  // duplicates and collinear points exercise ties and degenerate splits
  PointCloud line;
  for (int i = 0; i < 300; ++i) line.push_back({double(i % 7), 0, 0});
  const PointCloud probes = random_cloud(200, rng, 4.0);
  const auto fast = nearest_distance(probes, line);
  for (std::size_t i = 0; i < probes.size(); ++i) CHECK(fast[i] == brute_force_nearest(line, probes[i]));
  CHECK_THROWS(nearest_distance(a, PointCloud{}));
}

TEST_CASE("point cloud files") {
  std::mt19937_64 rng(10);
  const PointCloud cloud = random_cloud(257, rng, 3.0);
  SUBCASE("xyz") {
    const auto path = temp_path("cloud.xyz");
    write_xyz(path, cloud);
    CHECK(read_xyz(path) == cloud);
    std::ofstream(path) << "# comment\n1 2 3 0.5\n\n4 5 6\n";
    CHECK(read_xyz(path) == PointCloud{{1, 2, 3}, {4, 5, 6}});
    std::ofstream(path) << "1 2\n";
    CHECK_THROWS(read_xyz(path));
    std::filesystem::remove(path);
  }
  SUBCASE("ply") {
    const auto path = temp_path("cloud.ply");
    for (PlyEncoding enc : {PlyEncoding::ascii, PlyEncoding::binary_little_endian}) {
      write_ply(path, cloud, enc);
      CHECK(read_ply(path) == cloud);
    }
    std::ofstream(path) << "ply\nformat ascii 1.0\nelement vertex 2\nproperty float y\n"
                           "property uchar red\nproperty float x\nproperty float z\n"
                           "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
                           "1 255 2 3\n4 0 5 6\n";
    CHECK(read_ply(path) == PointCloud{{2, 1, 3}, {5, 4, 6}});
    std::filesystem::remove(path);
  }
  SUBCASE("obj") {
    const auto path = temp_path("quad.obj");
    std::ofstream(path) << "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n";
    const TriangleMesh mesh = read_obj(path);
    CHECK(mesh.vertices.size() == 4);
    CHECK(mesh.triangles.size() == 2);
    const PointCloud s = sample_mesh(mesh, 5000, 1);
    for (const Vec3& p : s) {
      CHECK(p.z == 0.0);
      CHECK((p.x >= 0 && p.x <= 1 && p.y >= 0 && p.y <= 1));
    }
    CHECK(read_point_cloud(path, 100).size() == 100);
    std::ofstream(path) << "v 0 0 0\nf 1 2 3\n";
    CHECK_THROWS(read_obj(path));
    std::filesystem::remove(path);
  }
}
