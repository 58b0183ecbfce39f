#pragma once

#include <span>
#include <vector>

#include "pvudf/model/decoder.hpp"

namespace pvudf {

/// Frozen decoder on one latent with the first dense layer folded into the
/// feature grids.
///
/// Trilinear sampling and the first layer are both linear, so each grid is
/// multiplied by the slice of the first-layer weight that reads it, once per
/// neighborhood offset. A query then gathers first-layer pre-activations
/// directly instead of forming the full decoder input. Results agree with
/// udf_forward up to floating-point reassociation.
class FoldedDecoder {
 public:
  FoldedDecoder(const ModelConfig& config, const nn::ParameterStore& params,
                const LatentPointVoxel& latent);

  std::vector<double> values(std::span<const Vec3> points) const;
  /// Values with exact spatial gradients. Throws on a non-finite gradient.
  std::vector<FieldSample> samples(std::span<const Vec3> points) const;

  /// Bytes held by the folded grids.
  std::size_t folded_bytes() const;

 private:
  struct Grid {
    std::size_t extent = 0;
    std::vector<double> folded;  // [7 x G^3 x H]
  };
  struct Layer {
    std::size_t in = 0, out = 0;
    std::vector<double> weight;     // [in x out]
    std::vector<double> transpose;  // [out x in]
    std::vector<double> bias;
  };

  void run(std::span<const Vec3> points, double* values, FieldSample* samples) const;

  std::size_t width_ = 0;
  double distance_ = 0.0;
  std::vector<double> base_;  // first-layer bias plus the global feature's contribution
  std::vector<Grid> grids_;
  std::size_t occupancy_extent_ = 0;
  std::vector<double> occupancy_;
  std::vector<double> occupancy_weight_;  // [7 x H]
  std::vector<Layer> layers_;             // layers after the first
};

}  // namespace pvudf
