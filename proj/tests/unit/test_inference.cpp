#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "pvudf/geometry/kdtree.hpp"
#include "pvudf/inference/inference.hpp"
#include "testing.hpp"

using namespace pvudf;
using namespace pvudf::testing;

namespace {

class ConstantField : public DistanceField {
 public:
  ConstantField(double value, Vec3 gradient) : value_(value), gradient_(gradient) {}
  std::vector<double> values(std::span<const Vec3> points) const override {
    return std::vector<double>(points.size(), value_);
  }
  std::vector<FieldSample> samples(std::span<const Vec3> points) const override {
    return std::vector<FieldSample>(points.size(), FieldSample{value_, gradient_});
  }

 private:
  double value_;
  Vec3 gradient_;
};

InferenceConfig small_inference(std::size_t resolution) {
  InferenceConfig c;
  c.resolution = resolution;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("inference config") {
  InferenceConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(InferenceConfig::from_fields(c.to_fields()) == c);
  CHECK(c.replicas(3000) == 67);
  CHECK(c.replicas(300000) == 1);
  CHECK_THROWS(c.replicas(0));
  for (auto mutate : std::vector<void (*)(InferenceConfig&)>{
           [](InferenceConfig& x) { x.projections = 0; }, [](InferenceConfig& x) { x.threshold = 0.0; },
           [](InferenceConfig& x) { x.resolution = 0; },
           [](InferenceConfig& x) { x.jitter_low = 0.2; }, [](InferenceConfig& x) { x.delta = -1; },
           [](InferenceConfig& x) { x.threshold = NAN; }}) {
    InferenceConfig bad;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
  CHECK_THROWS(parse_seeding("grid"));
  CHECK_THROWS(InferenceConfig::from_fields({{"resolutoin", "10"}}));
}

TEST_CASE("jitter seeding") {
  std::mt19937_64 rng(3);
  const PointCloud input = random_cloud(300, rng, 0.4);

  SUBCASE("zero jitter copies the input") {
    InferenceConfig c = small_inference(1000);
    c.jitter_low = c.jitter_high = 0.0;
    const PointCloud seeds = seed_points(input, c);
    REQUIRE(seeds.size() == 7 * 300);
    for (std::size_t i = 0; i < seeds.size(); ++i) CHECK(seeds[i] == input[i % 300]);
  }
  SUBCASE("one shared vector per replica within the bounds") {
    InferenceConfig c = small_inference(150);
    const PointCloud seeds = seed_points(input, c);
    REQUIRE(seeds.size() == 300);
    const Vec3 j = seeds[0] - input[0];
    for (double v : {j.x, j.y, j.z}) CHECK((v >= -0.1 && v < 0.1));
    for (std::size_t i = 0; i < 300; ++i) {
      CHECK(norm(seeds[i] - input[i] - j) < 1e-15);
    }
  }
  SUBCASE("jitter is uniform") {
    const PointCloud single{{0.0, 0.0, 0.0}};
    InferenceConfig c = small_inference(50000);
    const PointCloud seeds = seed_points(single, c);
    REQUIRE(seeds.size() == 100000);
    for (int axis = 0; axis < 3; ++axis) {
      std::vector<double> bins(20, 0.0);
      double mean = 0.0;
      for (const Vec3& s : seeds) {
        const double v = axis == 0 ? s.x : axis == 1 ? s.y : s.z;
        REQUIRE((v >= -0.1 && v < 0.1));
        mean += v;
        bins[static_cast<std::size_t>((v + 0.1) / 0.2 * 20)] += 1.0;
      }
      mean /= 1e5;
      CHECK(std::abs(mean) < 5 * 0.2 / std::sqrt(12.0 * 1e5));
      double chi2 = 0.0;
      for (double b : bins) chi2 += (b - 5000.0) * (b - 5000.0) / 5000.0;
      CHECK(chi2 < 45.3);  // p = 0.001 at 19 dof
    }
  }
  SUBCASE("bounding box seeding") {
    InferenceConfig c = small_inference(3000);
    c.seeding = Seeding::bbox;
    const PointCloud seeds = seed_points(input, c);
    CHECK(seeds.size() == 20 * 300);
    const BoundingBox box = bounding_box(input);
    for (const Vec3& s : seeds) {
      CHECK((s.x >= box.lo.x && s.x <= box.hi.x && s.y >= box.lo.y && s.y <= box.hi.y &&
             s.z >= box.lo.z && s.z <= box.hi.z));
    }
  }
}

TEST_CASE("oracle projection lands in one step") {
  std::mt19937_64 rng(4);
  const std::vector<AnalyticShape> shapes{Sphere{{0.05, 0.0, -0.02}, 0.4},
                                          PlanePatch{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, 0.5, 0.5}};
  for (const AnalyticShape& shape : shapes) {
    const OracleField field(shape);
    PointCloud points = random_cloud(2000, rng, 0.3);
    points = project_points(field, points, 1);
    for (const Vec3& p : points) CHECK(oracle_ud(shape, p) < 1e-9);
  }
}

TEST_CASE("projection statistics and the gradient floor") {
  const PointCloud points{{0.1, 0.2, 0.3}, {0.0, 0.0, 0.0}};
  ProjectionStats stats;
  const PointCloud moved = project_points(ConstantField(0.2, {0, 0, 0}), points, 3, &stats);
  CHECK(moved == points);
  CHECK(stats.skipped == 6);
  CHECK(stats.mean_residual.size() == 4);

  ProjectionStats tiny;
  project_points(ConstantField(0.2, {1e-9, 0, 0}), points, 2, &tiny);
  CHECK(tiny.skipped == 4);

  ProjectionStats ok;
  const PointCloud shifted = project_points(ConstantField(0.2, {0, 0, 2e-8}), points, 1, &ok);
  CHECK(ok.skipped == 0);
  CHECK(shifted[0].z == doctest::Approx(0.1));
}

TEST_CASE("oracle reconstruction") {
  SUBCASE("sphere") {
    const Sphere sphere{{0, 0, 0}, 0.4};
    const PointCloud input = sample_surface(sphere, 3000, 1);
    InferenceConfig c = small_inference(10000);
    c.threshold = 1e-3;
    const Reconstruction r = reconstruct(OracleField(sphere), input, c);
    CHECK(r.points.size() <= 10000);
    CHECK(r.points.size() > 9900);
    CHECK(r.report.seeds == 7 * 3000);
    CHECK(r.report.first_survivors + r.report.first_rejected == r.report.seeds);
    CHECK(r.report.final_survivors == r.points.size());
    for (const Vec3& p : r.points) CHECK(oracle_ud(sphere, p) < 1e-3);
    const KdTree tree(r.points);
    double worst = 0.0;
    for (const Vec3& g : sample_surface(sphere, 20000, 2)) {
      worst = std::max(worst, std::sqrt(tree.nearest(g).distance_squared));
    }
    CHECK(worst < 0.05);
  }
  SUBCASE("open hemisphere stays open") {
    const OpenHemisphere hemi{{0, 0, 0}, 0.4, {0, 0, 1}};
    const PointCloud input = sample_surface(hemi, 3000, 1);
    const Reconstruction r = reconstruct(OracleField(hemi), input, small_inference(10000));
    std::size_t below = 0;
    for (const Vec3& p : r.points) below += p.z < -1e-6;
    CHECK(below == 0);
  }
  SUBCASE("single output point") {
    const Sphere sphere{{0, 0, 0}, 0.4};
    const Reconstruction r =
        reconstruct(OracleField(sphere), sample_surface(sphere, 100, 1), small_inference(1));
    CHECK(r.points.size() == 1);
    CHECK(r.report.resampled == 1);
  }
  SUBCASE("no surface") {
    const PointCloud input{{0, 0, 0}, {0.1, 0, 0}};
    CHECK_THROWS_WITH(reconstruct(ConstantField(1.0, {1, 0, 0}), input, small_inference(10)),
                      doctest::Contains("no surface found"));
    CHECK_THROWS(reconstruct(ConstantField(0.0, {1, 0, 0}), {}, small_inference(10)));
  }
}

TEST_CASE("learned field reconstruction is deterministic") {
  const UdfModel model(small_model(), 6);
  const Sphere sphere{{0, 0, 0}, 0.4};
  const PointCloud input = sample_surface(sphere, 500, 1);
  const LatentPointVoxel latent = model.build_latent(input);
  InferenceConfig c = small_inference(2000);
  c.threshold = 1.0;
  const Reconstruction a = reconstruct(LearnedField(model, latent, 1), input, c);
  const Reconstruction b = reconstruct(LearnedField(model, latent, 1), input, c);
  CHECK(a.points == b.points);
  CHECK(a.points.size() <= 2000);

  const LearnedField threaded(model, latent, 3);
  const LearnedField serial(model, latent, 1);
  const std::vector<double> v1 = serial.values(a.points), v3 = threaded.values(a.points);
  CHECK(v1 == v3);
  const auto s1 = serial.samples(a.points), s3 = threaded.samples(a.points);
  for (std::size_t i = 0; i < s1.size(); ++i) {
    CHECK(s1[i].value == s3[i].value);
    CHECK(s1[i].gradient == s3[i].gradient);
  }
  c.threads = 3;
  CHECK(reconstruct(LearnedField(model, latent, 3), input, c).points == a.points);

  const std::vector<double> tape = model.udf(latent, std::span(a.points).first(200));
  for (std::size_t i = 0; i < 200; ++i) CHECK(v1[i] == doctest::Approx(tape[i]).epsilon(1e-12));
}
