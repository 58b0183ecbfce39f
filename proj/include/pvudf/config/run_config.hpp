#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvudf/config/fields.hpp"
#include "pvudf/inference/inference.hpp"
#include "pvudf/training/training.hpp"

namespace pvudf {

/// Raised for malformed or invalid configuration, as opposed to runtime failures.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One [shape] section: an analytic surface (sphere, hemisphere, plane, box)
/// or `type = samples` with a `path` to a point cloud or mesh file.
struct ShapeSpec {
  std::string name;
  std::string type;
  fields::Fields params;

  friend bool operator==(const ShapeSpec&, const ShapeSpec&) = default;
};

/// Builds the analytic shape of a spec; throws ConfigError for `samples` or bad parameters.
AnalyticShape analytic_shape(const ShapeSpec& spec);
/// Loads the surface of a spec (file-backed specs read their samples).
TrainingShape training_shape(const ShapeSpec& spec, std::uint64_t seed);
/// "sphere radius=1 center=0,0,0" -> spec.
ShapeSpec parse_shape_spec(const std::string& text);

struct MetricsConfig {
  std::vector<double> thresholds{0.5, 1.0};  // percent of the bounding-box diagonal
  double diagonal = 0.0;                     // 0: diagonal of the reference cloud's bounding box

  friend bool operator==(const MetricsConfig&, const MetricsConfig&) = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  InferenceConfig inference;
  MetricsConfig metrics;
  std::filesystem::path output_dir = "run";
  std::vector<ShapeSpec> shapes;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// INI-style text: [model], [train], [inference], [metrics], [output] and
/// repeatable [shape] sections of `key = value` lines; `#` starts a comment.
/// Unknown sections or keys are errors.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical text form; parse_run_config(dump_run_config(c)) == c.
std::string dump_run_config(const RunConfig& config);

}  // namespace pvudf
