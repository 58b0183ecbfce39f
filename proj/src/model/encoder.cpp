#include "pvudf/model/encoder.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace pvudf {

std::size_t LatentPointVoxel::grid_resolution(std::size_t stage) const {
  return feature_grids.at(stage).dim(1);
}

PointFeatures encode_points(Weights& weights, const ModelConfig& config, const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("encode_points: empty cloud");
  nn::Tensor input({cloud.size(), 3});
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    input[3 * i] = cloud[i].x;
    input[3 * i + 1] = cloud[i].y;
    input[3 * i + 2] = cloud[i].z;
  }
  nn::Var h = weights.tape().constant(std::move(input));
  PointFeatures out;
  const std::size_t layers = config.point_layers();
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string p = "point." + std::to_string(i);
    h = nn::dense(h, weights.get(p + ".weight"), weights.get(p + ".bias"));
    if (i + 1 < layers) {
      h = nn::relu(h);
      out.per_point = h;
    }
  }
  out.global = nn::max_rows(h);
  return out;
}

nn::Var fuse_point_voxel(const VoxelGrid& occupancy, const PointCloud& cloud, nn::Var per_point) {
  const nn::Shape& shape = per_point.shape();
  if (shape.size() != 2 || shape[0] != cloud.size()) {
    throw std::invalid_argument("fuse_point_voxel: " + std::to_string(cloud.size()) +
                                " points but features of shape " + nn::to_string(shape));
  }
  if (occupancy.channels != 1 || occupancy.resolution < 2 ||
      occupancy.data.size() != occupancy.volume()) {
    throw std::invalid_argument("fuse_point_voxel: malformed occupancy grid");
  }
  std::vector<std::size_t> cells(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!inside_unit_cube(cloud[i])) {
      throw std::invalid_argument("fuse_point_voxel: point " + std::to_string(i) +
                                  " lies outside the grid extent");
    }
    cells[i] = flat_cell(cloud[i], occupancy.resolution);
  }
  std::vector<char> hit(occupancy.volume(), 0);
  for (std::size_t c : cells) hit[c] = 1;
  for (std::size_t i = 0; i < hit.size(); ++i) {
    if ((occupancy.data[i] != 0.0) != (hit[i] != 0)) {
      throw std::invalid_argument("fuse_point_voxel: occupancy grid of resolution " +
                                  std::to_string(occupancy.resolution) +
                                  " was not built from this cloud");
    }
  }
  return nn::scatter_mean(per_point, cells, occupancy.resolution);
}

std::vector<nn::Var> encode_voxels(Weights& weights, const ModelConfig& config, nn::Var fused,
                                   nn::Mode mode) {
  const nn::Shape& shape = fused.shape();
  const std::size_t m = config.resolution;
  if (shape.size() != 5 || shape[1] != config.fused_channels() || shape[2] != m || shape[3] != m ||
      shape[4] != m) {
    throw std::invalid_argument("encode_voxels: expected [B x " +
                                std::to_string(config.fused_channels()) + " x " + std::to_string(m) +
                                "^3], got " + nn::to_string(shape));
  }
  std::vector<nn::Var> grids;
  nn::Var h = fused;
  for (std::size_t i = 0; i < config.voxel_stages(); ++i) {
    const std::string p = "voxel." + std::to_string(i);
    nn::Conv3dGeometry geometry{3, config.voxel_strides[i], 1};
    h = nn::conv3d(h, weights.get(p + ".conv.weight"), weights.get(p + ".conv.bias"), geometry);
    h = weights.batchnorm(h, p + ".bn", mode);
    h = nn::relu(h);
    grids.push_back(h);
  }
  return grids;
}

std::vector<LatentVars> encode_batch(Weights& weights, const ModelConfig& config,
                                     std::span<const PointCloud> clouds, nn::Mode mode) {
  if (clouds.empty()) throw std::invalid_argument("encode_batch: no clouds");
  nn::Tape& tape = weights.tape();
  std::vector<LatentVars> out(clouds.size());
  std::vector<nn::Var> fused;
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    PointCloud canonical = clouds[b];
    std::sort(canonical.begin(), canonical.end());
    VoxelGrid occupancy = voxelize(canonical, config.resolution);
    PointFeatures features = encode_points(weights, config, canonical);
    fused.push_back(fuse_point_voxel(occupancy, canonical, features.per_point));
    out[b].global = features.global;
    out[b].occupancy =
        tape.constant(nn::Tensor({1, occupancy.volume(), 1}, std::move(occupancy.data)));
    out[b].batch_index = b;
  }
  nn::Var stacked = fused.size() == 1 ? fused[0] : nn::concat_batch(fused);
  for (nn::Var grid : encode_voxels(weights, config, stacked, mode)) {
    nn::Var cl = nn::channels_last(grid);
    for (LatentVars& latent : out) latent.grids.push_back(cl);
  }
  return out;
}

LatentPointVoxel build_latent(const ModelConfig& config, const nn::ParameterStore& params,
                              const PointCloud& cloud) {
  nn::Tape tape;
  Weights weights = Weights::frozen(tape, params);
  const std::vector<LatentVars> vars =
      encode_batch(weights, config, std::span<const PointCloud>(&cloud, 1), nn::Mode::eval);
  const LatentVars& v = vars.front();

  LatentPointVoxel latent;
  latent.global_feature = v.global.value();
  const std::vector<std::size_t> res = config.grid_resolutions();
  for (std::size_t s = 0; s < v.grids.size(); ++s) {
    const nn::Tensor& g = v.grids[s].value();
    latent.feature_grids.push_back(g.reshaped({1, res[s], res[s], res[s], g.dim(2)}));
  }
  latent.occupancy.resolution = config.resolution;
  latent.occupancy.channels = 1;
  latent.occupancy.data = v.occupancy.value().storage();
  return latent;
}

LatentVars latent_vars(nn::Tape& tape, const LatentPointVoxel& latent) {
  LatentVars v;
  v.global = tape.constant_ref(latent.global_feature);
  for (const nn::Tensor& g : latent.feature_grids) {
    if (g.rank() != 5 || g.dim(0) != 1) {
      throw std::invalid_argument("latent: feature grids must be [1 x G x G x G x C], got " +
                                  nn::to_string(g.shape()));
    }
    v.grids.push_back(tape.constant_ref(g));
  }
  const VoxelGrid& occ = latent.occupancy;
  v.occupancy = tape.constant(nn::Tensor({1, occ.volume(), 1}, occ.data));
  return v;
}

}  // namespace pvudf
