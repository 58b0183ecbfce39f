#pragma once

// Differentiable operators over Tape variables. Every op checks shapes and
// rejects non-finite forward values.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pvudf/nn/tape.hpp"

namespace pvudf::nn {

/// x[B x I] * w[I x O] + b[O]
Var dense(Var x, Var w, Var b);

/// max(0, x); subgradient 0 at 0.
Var relu(Var x);

/// log(1 + exp(x)), computed stably.
Var softplus(Var x);

enum class Mode { train, eval };

struct BatchNormBuffers {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
};

constexpr double kBatchNormMomentum = 0.1;
constexpr double kBatchNormEps = 1e-5;

/// Per-channel normalization of x[B x C x ...] with learnable gamma[C], beta[C].
///
/// Train mode normalizes with the biased batch variance over B * spatial
/// values per channel (at least two required) and updates the running
/// statistics with momentum 0.1, storing the unbiased variance. Eval mode uses
/// the running statistics and leaves them untouched.
Var batchnorm(Var x, Var gamma, Var beta, BatchNormBuffers buffers, Mode mode);

/// Eval-mode batchnorm against read-only running statistics.
Var batchnorm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                   const Tensor& running_var);

struct Conv3dGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
};

/// Output extent along one axis, or throws with the computed value.
std::size_t conv_output_extent(std::size_t input, const Conv3dGeometry& geometry);

/// Cross-correlation of x[B x C x D x H x W] with w[O x C x k x k x k] plus b[O], zero padding.
Var conv3d(Var x, Var w, Var b, const Conv3dGeometry& geometry);

/// Trilinear sampling of grid[C x G x G x G] at coords[K x 3] -> [K x C].
///
/// Align-corners convention over the cube [-0.5, 0.5]^3: grid node i along an
/// axis sits at i / (G - 1) - 0.5, so a coordinate x maps to the continuous
/// index (x + 0.5) * (G - 1). Coordinates outside the cube are clamped to its
/// faces and receive zero gradient along the clamped axis. Differentiable with
/// respect to both the grid values and the coordinates.
Var grid_sample(Var grid, Var coords);

/// Same as grid_sample for a channels-last batch grid[B x G x G x G x C],
/// sampling batch entry `batch`.
Var grid_sample_channels_last(Var grid, std::size_t batch, Var coords);

/// x[B x C x S...] -> [B x S x C] where S is the product of trailing dims.
Var channels_last(Var x);

/// Column-wise max over rows: x[N x F] -> [1 x F]. Ties route to the first row.
Var max_rows(Var x);

/// Concatenate [r x c_i] tensors along columns.
Var concat_columns(std::span<const Var> parts);

/// Stack tensors of identical shape [1 x ...] along the leading axis.
Var concat_batch(std::span<const Var> parts);

/// Repeat a [1 x F] row K times.
Var broadcast_rows(Var x, std::size_t rows);

/// Same values, new shape.
Var reshape(Var x, Shape shape);

/// Element-wise sum of tensors of equal shape.
Var add(std::span<const Var> parts);

/// Sum of all elements -> [1].
Var sum(Var x);

/// coords[K x 3] -> [7K x 3]: for each row the centre followed by +x, -x, +y, -y, +z, -z
/// offsets at distance `distance`.
Var neighborhood(Var coords, double distance);

/// Scatter-mean of per-point features into occupied cells.
///
/// `cells[n]` is the flat cell index of point n in an M^3 grid. Output is
/// [1 x (1 + F) x M x M x M]: channel 0 is occupancy, channels 1..F the mean
/// feature of the points in each cell (zero for empty cells).
Var scatter_mean(Var features, std::span<const std::size_t> cells, std::size_t resolution);

/// sum_i | min(pred_i, delta) - min(target_i, delta) |
Var clamped_l1(Var pred, std::span<const double> target, double delta);

}  // namespace pvudf::nn
