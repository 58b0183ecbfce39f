#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pvudf/config/fields.hpp"
#include "pvudf/geometry/kdtree.hpp"
#include "pvudf/geometry/shapes.hpp"
#include "pvudf/model/decoder.hpp"
#include "pvudf/nn/checkpoint.hpp"

namespace pvudf {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  double delta = 0.1;                    // clamp distance, normalized units
  std::size_t batch_shapes = 1;          // B
  std::size_t queries_per_shape = 2048;  // Q
  std::size_t epochs = 300;
  std::size_t batches_per_epoch = 0;     // 0: one pass over the shapes
  double learning_rate = 1e-3;
  double final_learning_rate = 1e-5;     // cosine floor
  LrSchedule schedule = LrSchedule::cosine;
  std::uint64_t seed = 0;
  double validation_fraction = 0.25;     // held-out queries per shape, relative to Q
  std::size_t input_points = 3000;       // N
  double fill = 0.8;                     // normalized extent of the input bounding box

  void validate() const;
  std::size_t batches_in_epoch(std::size_t shape_count) const;
  std::size_t validation_queries() const;
  double learning_rate_at(std::size_t step, std::size_t total_steps) const;

  fields::Fields to_fields() const;
  static TrainConfig from_fields(const fields::Fields& entries);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// A training surface in world coordinates: analytic, or dense surface samples.
struct TrainingShape {
  std::string name;
  std::variant<AnalyticShape, PointCloud> surface;
};

/// A shape moved into the frame normalized by its own input cloud.
class PreparedShape {
 public:
  PreparedShape(const TrainingShape& shape, std::size_t index, const TrainConfig& config);

  const std::string& name() const { return name_; }
  /// Normalized input cloud X_i.
  const PointCloud& input() const { return input_; }
  const NormalizationTransform& transform() const { return transform_; }
  /// Near-surface queries with exact (analytic) or nearest-sample targets.
  std::vector<QuerySample> queries(std::size_t count, double delta, std::uint64_t seed) const;
  std::string fingerprint() const { return fingerprint_; }

 private:
  std::string name_;
  PointCloud input_;
  NormalizationTransform transform_;
  std::variant<AnalyticShape, PointCloud> surface_;  // normalized frame
  std::shared_ptr<const KdTree> index_;
  std::string fingerprint_;
};

struct TrainingExample {
  PointCloud cloud;  // normalized
  std::vector<QuerySample> queries;
};

/// sum_i | min(pred_i, delta) - min(target_i, delta) |
double clamped_loss(std::span<const double> pred, std::span<const double> target, double delta);

/// One forward, backward, and Adam update over a mini-batch. Returns the
/// summed clamped loss of the batch before the update.
double train_step(const ModelConfig& model, nn::ParameterStore& params,
                  std::span<const TrainingExample> batch, double delta, const nn::AdamConfig& adam);

/// Mean clamped loss per query in eval mode; leaves batchnorm statistics untouched.
double validation_loss(const ModelConfig& model, const nn::ParameterStore& params,
                       std::span<const TrainingExample> examples, double delta);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;       // mean clamped loss per query
  double validation_loss = 0.0;  // mean clamped loss per query
  double wall_time = 0.0;        // seconds since this run started
};

struct TrainState {
  nn::ParameterStore params;
  std::size_t epoch = 0;  // completed epochs
  double best_validation = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
};

struct FitOptions {
  std::filesystem::path output_dir;  // last.ckpt, best.ckpt, train_log.csv; empty: write nothing
  bool resume = false;               // continue from output_dir/last.ckpt
  std::size_t stop_after = 0;        // end this run after this many epochs (0: run to completion)
  std::function<void(const EpochRecord&)> on_epoch;
};

TrainState fit(const ModelConfig& model, const TrainConfig& config,
               std::span<const TrainingShape> dataset, const FitOptions& options = {});

/// Identifies the dataset in checkpoints so a resume cannot silently switch data.
std::string dataset_fingerprint(std::span<const PreparedShape> shapes);

nn::Checkpoint make_checkpoint(const ModelConfig& model, const TrainConfig& config,
                               const TrainState& state, const std::string& dataset);

/// Restores the model stored in a checkpoint (parameters and architecture).
UdfModel load_model(const std::filesystem::path& path);

}  // namespace pvudf
