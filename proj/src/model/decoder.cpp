#include "pvudf/model/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pvudf {

std::array<Vec3, 7> neighborhood_points(const Vec3& p, double d) {
  return {p,
          p + Vec3{d, 0, 0}, p - Vec3{d, 0, 0},
          p + Vec3{0, d, 0}, p - Vec3{0, d, 0},
          p + Vec3{0, 0, d}, p - Vec3{0, 0, d}};
}

nn::Var sample_features(const ModelConfig& config, const LatentVars& latent, nn::Var coords) {
  if (latent.grids.size() != config.voxel_stages()) {
    throw std::invalid_argument("sample_features: latent has " + std::to_string(latent.grids.size()) +
                                " grids, architecture expects " +
                                std::to_string(config.voxel_stages()));
  }
  if (latent.global.shape() != nn::Shape{1, config.global_width()}) {
    throw std::invalid_argument("sample_features: global feature " +
                                nn::to_string(latent.global.shape()) + " does not match width " +
                                std::to_string(config.global_width()));
  }
  const std::size_t m = config.resolution;
  if (latent.occupancy.shape() != nn::Shape{1, m * m * m, 1}) {
    throw std::invalid_argument("sample_features: occupancy " + nn::to_string(latent.occupancy.shape()) +
                                " does not match resolution " + std::to_string(m));
  }
  const std::size_t count = coords.shape().at(0);
  nn::Var points = nn::neighborhood(coords, config.neighborhood_distance());

  std::vector<nn::Var> parts{nn::broadcast_rows(latent.global, count)};
  const std::vector<std::size_t> res = config.grid_resolutions();
  for (std::size_t s = 0; s < latent.grids.size(); ++s) {
    const nn::Shape& shape = latent.grids[s].shape();
    const std::size_t channels = shape.back();
    const std::size_t volume = shape.size() == 5 ? shape[1] * shape[2] * shape[3] : shape.at(1);
    if (channels != config.voxel_channels[s] || volume != res[s] * res[s] * res[s]) {
      throw std::invalid_argument("sample_features: grid " + std::to_string(s) + " has shape " +
                                  nn::to_string(shape) + ", expected " + std::to_string(res[s]) +
                                  "^3 x " + std::to_string(config.voxel_channels[s]));
    }
    nn::Var sampled = nn::grid_sample_channels_last(latent.grids[s], latent.batch_index, points);
    parts.push_back(nn::reshape(sampled, {count, 7 * channels}));
  }
  nn::Var occ = nn::grid_sample_channels_last(latent.occupancy, 0, points);
  parts.push_back(nn::reshape(occ, {count, 7}));
  return nn::concat_columns(parts);
}

nn::Var decode(Weights& weights, const ModelConfig& config, nn::Var features) {
  const nn::Shape& shape = features.shape();
  if (shape.size() != 2 || shape[1] != config.feature_width()) {
    throw std::invalid_argument("decode: features " + nn::to_string(shape) +
                                " do not match decoder input width " +
                                std::to_string(config.feature_width()));
  }
  nn::Var h = features;
  const std::size_t layers = config.decoder_widths.size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string p = "decoder." + std::to_string(i);
    h = nn::dense(h, weights.get(p + ".weight"), weights.get(p + ".bias"));
    h = i + 1 < layers ? nn::relu(h) : nn::softplus(h);
  }
  return h;
}

nn::Var udf_forward(Weights& weights, const ModelConfig& config, const LatentVars& latent,
                    nn::Var coords) {
  return decode(weights, config, sample_features(config, latent, coords));
}

namespace {

nn::Tensor coordinate_block(std::span<const Vec3> points) {
  nn::Tensor t({points.size(), 3});
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!is_finite(points[i])) {
      throw std::domain_error("udf: non-finite query point at index " + std::to_string(i));
    }
    t[3 * i] = points[i].x;
    t[3 * i + 1] = points[i].y;
    t[3 * i + 2] = points[i].z;
  }
  return t;
}

}  // namespace

UdfModel::UdfModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(initialize_parameters(config_, seed)) {}

UdfModel::UdfModel(ModelConfig config, nn::ParameterStore parameters)
    : config_(std::move(config)), params_(std::move(parameters)) {
  config_.validate();
  check_parameters(config_, params_);
}

LatentPointVoxel UdfModel::build_latent(const PointCloud& normalized_cloud) const {
  return pvudf::build_latent(config_, params_, normalized_cloud);
}

std::vector<double> evaluate_udf(const ModelConfig& config, const nn::ParameterStore& params,
                                 const LatentPointVoxel& latent, std::span<const Vec3> points,
                                 std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("evaluate_udf: chunk size must be positive");
  std::vector<double> out;
  out.reserve(points.size());
  for (std::size_t start = 0; start < points.size(); start += chunk) {
    const auto block = points.subspan(start, std::min(chunk, points.size() - start));
    nn::Tape tape;
    Weights weights = Weights::frozen(tape, params);
    const LatentVars vars = latent_vars(tape, latent);
    nn::Var y = udf_forward(weights, config, vars, tape.constant(coordinate_block(block)));
    out.insert(out.end(), y.value().values().begin(), y.value().values().end());
  }
  return out;
}

std::vector<FieldSample> evaluate_udf_gradient(const ModelConfig& config,
                                               const nn::ParameterStore& params,
                                               const LatentPointVoxel& latent,
                                               std::span<const Vec3> points, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("evaluate_udf_gradient: chunk size must be positive");
  std::vector<FieldSample> out;
  out.reserve(points.size());
  for (std::size_t start = 0; start < points.size(); start += chunk) {
    const auto block = points.subspan(start, std::min(chunk, points.size() - start));
    nn::Tape tape;
    Weights weights = Weights::frozen(tape, params);
    const LatentVars vars = latent_vars(tape, latent);
    nn::Var coords = tape.input(coordinate_block(block));
    nn::Var y = udf_forward(weights, config, vars, coords);
    const nn::Tensor values = y.value();
    tape.backward(nn::sum(y));
    const nn::Tensor& g = tape.grad(coords);
    for (std::size_t i = 0; i < block.size(); ++i) {
      const Vec3 grad{g[3 * i], g[3 * i + 1], g[3 * i + 2]};
      if (!is_finite(grad)) {
        throw std::domain_error("udf_gradient: non-finite gradient at index " +
                                std::to_string(start + i));
      }
      out.push_back({values[i], grad});
    }
  }
  return out;
}

std::vector<double> UdfModel::udf(const LatentPointVoxel& latent,
                                  std::span<const Vec3> points) const {
  return evaluate_udf(config_, params_, latent, points);
}

double UdfModel::udf(const LatentPointVoxel& latent, const Vec3& p) const {
  return udf(latent, std::span<const Vec3>(&p, 1)).front();
}

std::vector<FieldSample> UdfModel::udf_with_gradient(const LatentPointVoxel& latent,
                                                     std::span<const Vec3> points) const {
  return evaluate_udf_gradient(config_, params_, latent, points);
}

Vec3 UdfModel::udf_gradient(const LatentPointVoxel& latent, const Vec3& p) const {
  return udf_with_gradient(latent, std::span<const Vec3>(&p, 1)).front().gradient;
}

}  // namespace pvudf
