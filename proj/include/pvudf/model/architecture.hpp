#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pvudf/nn/ops.hpp"
#include "pvudf/nn/parameters.hpp"
#include "pvudf/nn/tape.hpp"

namespace pvudf {

/// Architecture hyperparameters shared by the encoders and the decoder.
struct ModelConfig {
  std::size_t resolution = 32;                            // M
  std::vector<std::size_t> point_widths{32, 64, 128};     // point encoder, input width 3
  std::vector<std::size_t> voxel_channels{32, 64, 64, 128};
  std::vector<std::size_t> voxel_strides{2, 2, 2, 2};
  std::vector<std::size_t> decoder_widths{256, 256};      // hidden layers, output width 1
  double neighborhood = 0.0;                              // d; 0 selects one voxel, 1 / M

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  std::size_t point_layers() const { return point_widths.size(); }
  std::size_t per_point_width() const { return point_widths[point_widths.size() - 2]; }
  std::size_t global_width() const { return point_widths.back(); }
  std::size_t fused_channels() const { return 1 + per_point_width(); }
  std::size_t voxel_stages() const { return voxel_channels.size(); }
  /// Extent of every feature grid, strictly decreasing.
  std::vector<std::size_t> grid_resolutions() const;
  /// Width of the concatenated decoder input.
  std::size_t feature_width() const;
  double neighborhood_distance() const;

  /// Textual key/value form used by config files and checkpoint headers.
  std::map<std::string, std::string> to_fields() const;
  static ModelConfig from_fields(const std::map<std::string, std::string>& fields);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Softplus output of a freshly initialized decoder: half the default clamp
/// distance, so the clamped loss has gradient from the first step.
constexpr double kInitialDistance = 0.05;

/// Fresh parameters and batchnorm buffers for `config`, seeded.
nn::ParameterStore initialize_parameters(const ModelConfig& config, std::uint64_t seed);

/// Throws unless `store` holds exactly the parameters and buffers `config` expects.
void check_parameters(const ModelConfig& config, const nn::ParameterStore& store);

/// Resolves parameter names to tape variables, once per tape.
class Weights {
 public:
  /// Parameters enter the tape as trainable leaves.
  static Weights trainable(nn::Tape& tape, nn::ParameterStore& store);
  /// Parameters enter the tape as constants and batchnorm always runs in eval mode.
  static Weights frozen(nn::Tape& tape, const nn::ParameterStore& store);

  nn::Tape& tape() const { return *tape_; }
  bool is_frozen() const { return mutable_store_ == nullptr; }

  nn::Var get(const std::string& name);
  nn::Var batchnorm(nn::Var x, const std::string& prefix, nn::Mode mode);

 private:
  Weights(nn::Tape& tape, nn::ParameterStore* mutable_store, const nn::ParameterStore& store)
      : tape_(&tape), mutable_store_(mutable_store), store_(&store) {}

  nn::Tape* tape_;
  nn::ParameterStore* mutable_store_;
  const nn::ParameterStore* store_;
  std::map<std::string, nn::Var> cache_;
};

}  // namespace pvudf
