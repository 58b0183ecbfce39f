#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pvudf/geometry/point_cloud.hpp"
#include "pvudf/geometry/voxel_grid.hpp"
#include "pvudf/model/architecture.hpp"

namespace pvudf {

/// Latent bundle of one shape: global point feature, convolutional feature
/// grids at decreasing resolution, and the raw occupancy grid.
struct LatentPointVoxel {
  nn::Tensor global_feature;              // [1 x F']
  std::vector<nn::Tensor> feature_grids;  // channels-last [1 x G x G x G x C] per stage
  VoxelGrid occupancy;

  /// Number of latent components: global feature, each grid, occupancy.
  std::size_t component_count() const { return feature_grids.size() + 2; }
  std::size_t grid_resolution(std::size_t stage) const;
};

struct PointFeatures {
  nn::Var per_point;  // [N x F] output of the last ReLU layer
  nn::Var global;     // [1 x F'] max-pool of the final layer
};

/// Point encoder over a cloud placed on the weights' tape as a constant.
PointFeatures encode_points(Weights& weights, const ModelConfig& config, const PointCloud& cloud);

/// [1 x (1 + F) x M x M x M]: occupancy channel plus the per-cell mean of
/// the features of the points falling in each cell.
nn::Var fuse_point_voxel(const VoxelGrid& occupancy, const PointCloud& cloud, nn::Var per_point);

/// Strided conv + batchnorm + ReLU stages over fused[B x (1 + F) x M^3].
/// Returns one [B x C x G x G x G] grid per stage.
std::vector<nn::Var> encode_voxels(Weights& weights, const ModelConfig& config, nn::Var fused,
                                   nn::Mode mode);

/// Latent variables of one shape on a tape, as consumed by the decoder.
/// Grids are channels-last and may hold a batch; `batch_index` selects the shape.
struct LatentVars {
  nn::Var global;                // [1 x F']
  std::vector<nn::Var> grids;    // [B x G^3 x C]
  nn::Var occupancy;             // [1 x M^3 x 1]
  std::size_t batch_index = 0;
};

/// Encodes several normalized clouds in one batch (batchnorm statistics are
/// shared across the batch in train mode). Clouds are encoded in canonical
/// lexicographic point order, which makes the result independent of input order.
std::vector<LatentVars> encode_batch(Weights& weights, const ModelConfig& config,
                                     std::span<const PointCloud> clouds, nn::Mode mode);

/// Frozen eval-mode latent of one normalized cloud.
LatentPointVoxel build_latent(const ModelConfig& config, const nn::ParameterStore& params,
                              const PointCloud& cloud);

/// Places a frozen latent on a tape without copying.
LatentVars latent_vars(nn::Tape& tape, const LatentPointVoxel& latent);

}  // namespace pvudf
