#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pvudf/config/fields.hpp"
#include "pvudf/geometry/shapes.hpp"
#include "pvudf/model/decoder.hpp"
#include "pvudf/model/folded.hpp"

namespace pvudf {

enum class Seeding { jitter, bbox };

struct InferenceConfig {
  std::size_t projections = 5;      // np, per phase
  double threshold = 0.01;          // T
  std::size_t resolution = 100000;  // R, output point count
  double jitter_low = -0.1;         // a
  double jitter_high = 0.1;         // b
  double delta = 0.1;               // displacement std is delta / 3
  Seeding seeding = Seeding::jitter;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
  /// Jitter replicas m, chosen so |X| * m >= 2R.
  std::size_t replicas(std::size_t input_size) const;

  fields::Fields to_fields() const;
  static InferenceConfig from_fields(const fields::Fields& entries);

  friend bool operator==(const InferenceConfig&, const InferenceConfig&) = default;
};

std::string seeding_name(Seeding seeding);
Seeding parse_seeding(const std::string& name);

/// An unsigned distance field that can be evaluated with its spatial gradient.
class DistanceField {
 public:
  virtual ~DistanceField() = default;
  virtual std::vector<double> values(std::span<const Vec3> points) const = 0;
  virtual std::vector<FieldSample> samples(std::span<const Vec3> points) const = 0;
};

/// The trained network on one latent, evaluated through a FoldedDecoder.
/// Evaluation is split over `threads` workers in contiguous blocks, which
/// leaves every value bit-identical.
class LearnedField : public DistanceField {
 public:
  LearnedField(const UdfModel& model, const LatentPointVoxel& latent, std::size_t threads = 1);
  std::vector<double> values(std::span<const Vec3> points) const override;
  std::vector<FieldSample> samples(std::span<const Vec3> points) const override;

 private:
  FoldedDecoder decoder_;
  std::size_t threads_;
};

/// Exact distance to an analytic surface. The gradient is the unit vector
/// away from the nearest surface point, and zero on the surface itself.
class OracleField : public DistanceField {
 public:
  explicit OracleField(AnalyticShape shape) : shape_(std::move(shape)) {}
  std::vector<double> values(std::span<const Vec3> points) const override;
  std::vector<FieldSample> samples(std::span<const Vec3> points) const override;

 private:
  AnalyticShape shape_;
};

/// Jittered copies of the input (m shared jitter vectors drawn from U(a, b)^3),
/// or as many points uniform in the input bounding box.
PointCloud seed_points(const PointCloud& input, const InferenceConfig& config);

struct ProjectionStats {
  std::size_t skipped = 0;            // updates skipped for a vanishing gradient
  std::vector<double> mean_residual;  // mean |f| before each step and after the last
  std::vector<double> final_values;   // f at the returned points
};

constexpr double kGradientFloor = 1e-8;

/// np steps of p <- p - f(p) grad f(p) / |grad f(p)|.
PointCloud project_points(const DistanceField& field, PointCloud points, std::size_t steps,
                          ProjectionStats* stats = nullptr);

struct ReconstructionReport {
  std::size_t seeds = 0;
  std::size_t first_survivors = 0;
  std::size_t first_rejected = 0;
  std::size_t resampled = 0;
  std::size_t final_survivors = 0;
  std::size_t final_rejected = 0;
  std::size_t skipped_updates = 0;
  ProjectionStats first_phase;
  ProjectionStats second_phase;
};

struct Reconstruction {
  PointCloud points;
  ReconstructionReport report;
};

/// Surface point inference: seed, project, filter f < T, draw R points with
/// replacement, displace each by N(0, delta / 3), project, filter again.
/// Throws std::runtime_error ("no surface found") if nothing survives a filter.
Reconstruction reconstruct(const DistanceField& field, const PointCloud& input,
                           const InferenceConfig& config);

}  // namespace pvudf
