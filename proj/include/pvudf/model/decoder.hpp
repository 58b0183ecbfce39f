#pragma once

#include <array>
#include <span>
#include <vector>

#include "pvudf/model/encoder.hpp"

namespace pvudf {

/// p, p + d e_x, p - d e_x, p + d e_y, p - d e_y, p + d e_z, p - d e_z.
std::array<Vec3, 7> neighborhood_points(const Vec3& p, double d);

/// Decoder input for coords[K x 3]: the global feature followed by each grid
/// and the occupancy sampled at the 7 neighborhood points -> [K x W].
nn::Var sample_features(const ModelConfig& config, const LatentVars& latent, nn::Var coords);

/// Dense ReLU layers and a softplus head: features[K x W] -> [K x 1], all >= 0.
nn::Var decode(Weights& weights, const ModelConfig& config, nn::Var features);

/// decode(sample_features(latent, coords)).
nn::Var udf_forward(Weights& weights, const ModelConfig& config, const LatentVars& latent,
                    nn::Var coords);

struct FieldSample {
  double value = 0.0;
  Vec3 gradient;
};

/// Frozen evaluation in chunks of `chunk` points; each chunk is independent,
/// so results do not depend on the chunk size.
std::vector<double> evaluate_udf(const ModelConfig& config, const nn::ParameterStore& params,
                                 const LatentPointVoxel& latent, std::span<const Vec3> points,
                                 std::size_t chunk = 256);
std::vector<FieldSample> evaluate_udf_gradient(const ModelConfig& config,
                                               const nn::ParameterStore& params,
                                               const LatentPointVoxel& latent,
                                               std::span<const Vec3> points,
                                               std::size_t chunk = 256);

/// A trained network bound to frozen parameters. Evaluation is const and
/// may run concurrently from several threads.
class UdfModel {
 public:
  explicit UdfModel(ModelConfig config, std::uint64_t seed = 0);
  UdfModel(ModelConfig config, nn::ParameterStore parameters);

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }

  LatentPointVoxel build_latent(const PointCloud& normalized_cloud) const;

  std::vector<double> udf(const LatentPointVoxel& latent, std::span<const Vec3> points) const;
  double udf(const LatentPointVoxel& latent, const Vec3& p) const;

  /// Field values and exact spatial gradients. Throws on a non-finite gradient.
  std::vector<FieldSample> udf_with_gradient(const LatentPointVoxel& latent,
                                             std::span<const Vec3> points) const;
  Vec3 udf_gradient(const LatentPointVoxel& latent, const Vec3& p) const;

 private:
  ModelConfig config_;
  nn::ParameterStore params_;
};

}  // namespace pvudf
