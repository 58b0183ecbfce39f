#include "pvudf/model/folded.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pvudf/nn/stencil.hpp"
#include "pvudf/simd/kernels.hpp"

namespace pvudf {
namespace {

constexpr std::size_t kChunk = 64;
constexpr std::size_t kOffsets = 7;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

FoldedDecoder::FoldedDecoder(const ModelConfig& config, const nn::ParameterStore& params,
                             const LatentPointVoxel& latent)
    : distance_(config.neighborhood_distance()) {
  check_parameters(config, params);
  if (latent.feature_grids.size() != config.voxel_stages()) {
    throw std::invalid_argument("folded decoder: latent has " +
                                std::to_string(latent.feature_grids.size()) +
                                " grids, architecture expects " +
                                std::to_string(config.voxel_stages()));
  }
  if (latent.global_feature.shape() != nn::Shape{1, config.global_width()}) {
    throw std::invalid_argument("folded decoder: global feature does not match the architecture");
  }
  if (latent.occupancy.resolution != config.resolution || latent.occupancy.channels != 1) {
    throw std::invalid_argument("folded decoder: occupancy does not match the architecture");
  }

  const nn::Tensor& w0 = params.at("decoder.0.weight").value;
  const nn::Tensor& b0 = params.at("decoder.0.bias").value;
  width_ = w0.dim(1);
  const std::size_t h = width_;

  base_.assign(b0.values().begin(), b0.values().end());
  simd::gemm(1, h, config.global_width(), latent.global_feature.data(), config.global_width(),
             w0.data(), h, base_.data(), h, true);

  std::size_t row = config.global_width();
  const std::vector<std::size_t> res = config.grid_resolutions();
  for (std::size_t s = 0; s < latent.feature_grids.size(); ++s) {
    const nn::Tensor& g = latent.feature_grids[s];
    const std::size_t c = config.voxel_channels[s];
    if (g.shape() != nn::Shape{1, res[s], res[s], res[s], c}) {
      throw std::invalid_argument("folded decoder: grid " + std::to_string(s) + " has shape " +
                                  nn::to_string(g.shape()));
    }
    Grid grid;
    grid.extent = res[s];
    const std::size_t volume = res[s] * res[s] * res[s];
    grid.folded.assign(kOffsets * volume * h, 0.0);
    for (std::size_t k = 0; k < kOffsets; ++k) {
      simd::gemm(volume, h, c, g.data(), c, w0.data() + (row + k * c) * h, h,
                 grid.folded.data() + k * volume * h, h, false);
    }
    row += kOffsets * c;
    grids_.push_back(std::move(grid));
  }
  occupancy_extent_ = latent.occupancy.resolution;
  occupancy_ = latent.occupancy.data;
  occupancy_weight_.assign(w0.data() + row * h, w0.data() + (row + kOffsets) * h);

  for (std::size_t i = 1; i <= config.decoder_widths.size(); ++i) {
    const std::string p = "decoder." + std::to_string(i);
    const nn::Tensor& w = params.at(p + ".weight").value;
    const nn::Tensor& b = params.at(p + ".bias").value;
    Layer layer;
    layer.in = w.dim(0);
    layer.out = w.dim(1);
    layer.weight = w.storage();
    layer.transpose.resize(w.size());
    for (std::size_t r = 0; r < layer.in; ++r) {
      for (std::size_t o = 0; o < layer.out; ++o) layer.transpose[o * layer.in + r] = w[r * layer.out + o];
    }
    layer.bias = b.storage();
    layers_.push_back(std::move(layer));
  }
}

std::size_t FoldedDecoder::folded_bytes() const {
  std::size_t n = 0;
  for (const Grid& g : grids_) n += g.folded.size();
  return n * sizeof(double);
}

std::vector<double> FoldedDecoder::values(std::span<const Vec3> points) const {
  std::vector<double> out(points.size());
  run(points, out.data(), nullptr);
  return out;
}

std::vector<FieldSample> FoldedDecoder::samples(std::span<const Vec3> points) const {
  std::vector<FieldSample> out(points.size());
  run(points, nullptr, out.data());
  return out;
}

void FoldedDecoder::run(std::span<const Vec3> points, double* values, FieldSample* samples) const {
  const std::size_t h = width_;
  std::vector<nn::Stencil> stencils;
  std::vector<std::vector<double>> acts(layers_.size() + 1);
  std::vector<double> grad_out, grad_in;

  for (std::size_t start = 0; start < points.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, points.size() - start);
    const Vec3* block = points.data() + start;

    // First layer by gathering folded rows.
    std::vector<double>& a0 = acts[0];
    a0.resize(count * h);
    for (std::size_t i = 0; i < count; ++i) {
      if (!is_finite(block[i])) {
        throw std::domain_error("udf: non-finite query point at index " + std::to_string(start + i));
      }
      double* out = a0.data() + i * h;
      std::copy(base_.begin(), base_.end(), out);
      const std::array<Vec3, 7> nb = neighborhood_points(block[i], distance_);
      for (const Grid& grid : grids_) {
        const std::size_t volume = grid.extent * grid.extent * grid.extent;
        for (std::size_t k = 0; k < kOffsets; ++k) {
          const double q[3] = {nb[k].x, nb[k].y, nb[k].z};
          const nn::Stencil s = nn::make_stencil(q, grid.extent);
          const double* f = grid.folded.data() + k * volume * h;
          double weights[8];
          const double* rows[8];
          for (int corner = 0; corner < 8; ++corner) {
            weights[corner] = s.weight(corner);
            rows[corner] = f + s.node(corner, grid.extent) * h;
          }
          simd::axpy8(h, weights, rows, out);
        }
      }
      for (std::size_t k = 0; k < kOffsets; ++k) {
        const double q[3] = {nb[k].x, nb[k].y, nb[k].z};
        const nn::Stencil s = nn::make_stencil(q, occupancy_extent_);
        double occ = 0.0;
        for (int corner = 0; corner < 8; ++corner) {
          occ += s.weight(corner) * occupancy_[s.node(corner, occupancy_extent_)];
        }
        simd::axpy(h, occ, occupancy_weight_.data() + k * h, out);
      }
    }

    // Remaining layers: ReLU on the input, dense, softplus on the last output.
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      std::vector<double> x(acts[l]);
      for (double& v : x) v = std::max(v, 0.0);
      std::vector<double>& y = acts[l + 1];
      y.resize(count * layer.out);
      for (std::size_t i = 0; i < count; ++i) {
        std::copy(layer.bias.begin(), layer.bias.end(), y.begin() + i * layer.out);
      }
      simd::gemm(count, layer.out, layer.in, x.data(), layer.in, layer.weight.data(), layer.out,
                 y.data(), layer.out, true);
    }
    const std::vector<double>& logits = acts.back();
    for (std::size_t i = 0; i < count; ++i) {
      const double f = softplus(logits[i]);
      if (values) values[start + i] = f;
      if (samples) samples[start + i].value = f;
    }
    if (!samples) continue;

    // Backward to the first-layer pre-activations.
    grad_out.assign(count, 0.0);
    for (std::size_t i = 0; i < count; ++i) grad_out[i] = sigmoid(logits[i]);
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const Layer& layer = layers_[l];
      grad_in.assign(count * layer.in, 0.0);
      simd::gemm(count, layer.in, layer.out, grad_out.data(), layer.out, layer.transpose.data(),
                 layer.in, grad_in.data(), layer.in, false);
      const std::vector<double>& pre = acts[l];
      for (std::size_t j = 0; j < grad_in.size(); ++j) {
        if (!(pre[j] > 0.0)) grad_in[j] = 0.0;
      }
      grad_out.swap(grad_in);
    }

    // Spatial gradient through the stencils.
    for (std::size_t i = 0; i < count; ++i) {
      const double* g1 = grad_out.data() + i * h;
      const std::array<Vec3, 7> nb = neighborhood_points(block[i], distance_);
      double grad[3] = {0.0, 0.0, 0.0};
      auto accumulate = [&](const nn::Stencil& s, std::size_t extent, const double* corner_dot) {
        const double scale = static_cast<double>(extent - 1);
        for (int a = 0; a < 3; ++a) {
          if (s.clamped[a]) continue;
          double d = 0.0;
          for (int corner = 0; corner < 8; ++corner) d += s.weight_slope(corner, a) * corner_dot[corner];
          grad[a] += d * scale;
        }
      };
      for (const Grid& grid : grids_) {
        const std::size_t volume = grid.extent * grid.extent * grid.extent;
        for (std::size_t k = 0; k < kOffsets; ++k) {
          const double q[3] = {nb[k].x, nb[k].y, nb[k].z};
          const nn::Stencil s = nn::make_stencil(q, grid.extent);
          const double* f = grid.folded.data() + k * volume * h;
          const double* rows[8];
          for (int corner = 0; corner < 8; ++corner) rows[corner] = f + s.node(corner, grid.extent) * h;
          double corner_dot[8];
          simd::dot8(h, rows, g1, corner_dot);
          accumulate(s, grid.extent, corner_dot);
        }
      }
      for (std::size_t k = 0; k < kOffsets; ++k) {
        const double q[3] = {nb[k].x, nb[k].y, nb[k].z};
        const nn::Stencil s = nn::make_stencil(q, occupancy_extent_);
        const double w = simd::dot(h, g1, occupancy_weight_.data() + k * h);
        double corner_dot[8];
        for (int corner = 0; corner < 8; ++corner) {
          corner_dot[corner] = w * occupancy_[s.node(corner, occupancy_extent_)];
        }
        accumulate(s, occupancy_extent_, corner_dot);
      }
      const Vec3 gradient{grad[0], grad[1], grad[2]};
      if (!is_finite(gradient)) {
        throw std::domain_error("udf_gradient: non-finite gradient at index " +
                                std::to_string(start + i));
      }
      samples[start + i].gradient = gradient;
    }
  }
}

}  // namespace pvudf
