#include "pvudf/training/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "pvudf/random.hpp"

namespace pvudf {
namespace {

constexpr std::uint64_t kStreamInput = 0x11;
constexpr std::uint64_t kStreamQueries = 0x22;
constexpr std::uint64_t kStreamValidation = 0x33;
constexpr std::uint64_t kStreamShuffle = 0x44;

[[noreturn]] void config_error(const std::string& detail) {
  throw std::invalid_argument("train config: " + detail);
}

std::string schedule_name(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }

std::uint64_t hash_cloud(const PointCloud& cloud) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Vec3& p : cloud) {
    for (double v : {p.x, p.y, p.z}) {
      h ^= std::bit_cast<std::uint64_t>(v);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

nn::Tensor query_block(const std::vector<QuerySample>& queries) {
  nn::Tensor t({queries.size(), 3});
  for (std::size_t i = 0; i < queries.size(); ++i) {
    t[3 * i] = queries[i].position.x;
    t[3 * i + 1] = queries[i].position.y;
    t[3 * i + 2] = queries[i].position.z;
  }
  return t;
}

std::vector<double> targets_of(const std::vector<QuerySample>& queries) {
  std::vector<double> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) out[i] = queries[i].target_ud;
  return out;
}

const char* kLogHeader = "epoch,train_loss,val_loss,wall_time";

void write_log(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write training log " + path.string());
  out << kLogHeader << "\n";
  for (const EpochRecord& r : history) {
    out << r.epoch << "," << fields::format(r.train_loss) << "," << fields::format(r.validation_loss)
        << "," << fields::format(r.wall_time) << "\n";
  }
}

std::vector<EpochRecord> read_log(const std::filesystem::path& path, std::size_t up_to_epoch) {
  std::vector<EpochRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream row(line);
    std::string cell[4];
    for (auto& c : cell) std::getline(row, c, ',');
    EpochRecord r;
    r.epoch = fields::to_size("training log", cell[0]);
    if (r.epoch > up_to_epoch) break;
    r.train_loss = fields::to_real("training log", cell[1]);
    r.validation_loss = fields::to_real("training log", cell[2]);
    r.wall_time = fields::to_real("training log", cell[3]);
    out.push_back(r);
  }
  return out;
}

fields::Fields prefixed(const std::string& prefix, const fields::Fields& in) {
  fields::Fields out;
  for (const auto& [k, v] : in) out[prefix + k] = v;
  return out;
}

fields::Fields strip(const std::string& prefix, const fields::Fields& in) {
  fields::Fields out;
  for (const auto& [k, v] : in) {
    if (k.rfind(prefix, 0) == 0) out[k.substr(prefix.size())] = v;
  }
  return out;
}

double parse_extended(const std::string& text) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  return fields::to_real("checkpoint header", text);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(delta > 0.0) || !std::isfinite(delta)) config_error("delta must be positive");
  if (batch_shapes < 1) config_error("batch_shapes must be at least 1");
  if (queries_per_shape < 1) config_error("queries_per_shape must be at least 1");
  if (epochs < 1) config_error("epochs must be at least 1");
  if (!(learning_rate > 0.0) || !(final_learning_rate >= 0.0) || final_learning_rate > learning_rate) {
    config_error("learning rates must satisfy 0 <= final_learning_rate <= learning_rate, learning_rate > 0");
  }
  if (!(validation_fraction > 0.0) || validation_fraction > 1.0) {
    config_error("validation_fraction must lie in (0, 1]");
  }
  if (input_points < 1) config_error("input_points must be at least 1");
  if (!(fill > 0.0) || fill > 1.0) config_error("fill must lie in (0, 1]");
}

std::size_t TrainConfig::batches_in_epoch(std::size_t shape_count) const {
  if (batches_per_epoch > 0) return batches_per_epoch;
  return (shape_count + batch_shapes - 1) / batch_shapes;
}

std::size_t TrainConfig::validation_queries() const {
  return std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(queries_per_shape))));
}

double TrainConfig::learning_rate_at(std::size_t step, std::size_t total_steps) const {
  if (schedule == LrSchedule::constant || total_steps <= 1) return learning_rate;
  const double t = static_cast<double>(std::min(step, total_steps - 1)) / static_cast<double>(total_steps - 1);
  return final_learning_rate +
         0.5 * (learning_rate - final_learning_rate) * (1.0 + std::cos(std::numbers::pi * t));
}

fields::Fields TrainConfig::to_fields() const {
  return {{"delta", fields::format(delta)},
          {"batch_shapes", std::to_string(batch_shapes)},
          {"queries_per_shape", std::to_string(queries_per_shape)},
          {"epochs", std::to_string(epochs)},
          {"batches_per_epoch", std::to_string(batches_per_epoch)},
          {"learning_rate", fields::format(learning_rate)},
          {"final_learning_rate", fields::format(final_learning_rate)},
          {"schedule", schedule_name(schedule)},
          {"seed", std::to_string(seed)},
          {"validation_fraction", fields::format(validation_fraction)},
          {"input_points", std::to_string(input_points)},
          {"fill", fields::format(fill)}};
}

TrainConfig TrainConfig::from_fields(const fields::Fields& entries) {
  TrainConfig c;
  for (const auto& [key, value] : entries) {
    const std::string ctx = "train config: " + key;
    if (key == "delta") c.delta = fields::to_real(ctx, value);
    else if (key == "batch_shapes") c.batch_shapes = fields::to_size(ctx, value);
    else if (key == "queries_per_shape") c.queries_per_shape = fields::to_size(ctx, value);
    else if (key == "epochs") c.epochs = fields::to_size(ctx, value);
    else if (key == "batches_per_epoch") c.batches_per_epoch = fields::to_size(ctx, value);
    else if (key == "learning_rate") c.learning_rate = fields::to_real(ctx, value);
    else if (key == "final_learning_rate") c.final_learning_rate = fields::to_real(ctx, value);
    else if (key == "schedule") {
      const std::string v = fields::trim(value);
      if (v == "cosine") c.schedule = LrSchedule::cosine;
      else if (v == "constant") c.schedule = LrSchedule::constant;
      else config_error("schedule must be cosine or constant, got '" + value + "'");
    } else if (key == "seed") c.seed = fields::to_u64(ctx, value);
    else if (key == "validation_fraction") c.validation_fraction = fields::to_real(ctx, value);
    else if (key == "input_points") c.input_points = fields::to_size(ctx, value);
    else if (key == "fill") c.fill = fields::to_real(ctx, value);
    else config_error("unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

PreparedShape::PreparedShape(const TrainingShape& shape, std::size_t index, const TrainConfig& config)
    : name_(shape.name) {
  const std::uint64_t input_seed = derive_seed(config.seed, {kStreamInput, index});
  PointCloud raw;
  if (const auto* analytic = std::get_if<AnalyticShape>(&shape.surface)) {
    raw = sample_surface(*analytic, config.input_points, input_seed);
    const NormalizedCloud n = normalize_to_unit_cube(raw, config.fill);
    input_ = n.cloud;
    transform_ = n.transform;
    surface_ = transformed(*analytic, transform_);
    fingerprint_ = describe(*analytic);
  } else {
    const PointCloud& dense = std::get<PointCloud>(shape.surface);
    if (dense.size() < config.input_points) {
      throw std::invalid_argument("training shape '" + shape.name + "' has " +
                                  std::to_string(dense.size()) + " surface samples, fewer than " +
                                  std::to_string(config.input_points) + " input points");
    }
    Rng rng(input_seed);
    std::sample(dense.begin(), dense.end(), std::back_inserter(raw), config.input_points, rng);
    const NormalizedCloud n = normalize_to_unit_cube(raw, config.fill);
    input_ = n.cloud;
    transform_ = n.transform;
    PointCloud moved = transform_.apply(dense);
    index_ = std::make_shared<const KdTree>(moved);
    surface_ = std::move(moved);
    fingerprint_ = "samples(" + std::to_string(dense.size()) + "," + std::to_string(hash_cloud(dense)) + ")";
  }
}

std::vector<QuerySample> PreparedShape::queries(std::size_t count, double delta,
                                                std::uint64_t seed) const {
  if (const auto* analytic = std::get_if<AnalyticShape>(&surface_)) {
    return sample_queries(*analytic, count, delta, seed);
  }
  if (count == 0) throw std::invalid_argument("queries: need at least one query");
  const PointCloud& samples = std::get<PointCloud>(surface_);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution wide(0.5);
  std::vector<QuerySample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Vec3 s = samples[pick(rng)];
    const double sigma = wide(rng) ? delta / 3.0 : delta / 10.0;
    const double ox = normal(rng);
    const double oy = normal(rng);
    const double oz = normal(rng);
    const Vec3 p = s + Vec3{ox, oy, oz} * sigma;
    out.push_back({p, std::sqrt(index_->nearest(p).distance_squared)});
  }
  return out;
}

double clamped_loss(std::span<const double> pred, std::span<const double> target, double delta) {
  if (pred.size() != target.size()) {
    throw std::invalid_argument("clamped_loss: " + std::to_string(pred.size()) + " predictions but " +
                                std::to_string(target.size()) + " targets");
  }
  if (!(delta > 0.0)) throw std::invalid_argument("clamped_loss: delta must be positive");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target[i] < 0.0) throw std::invalid_argument("clamped_loss: negative target");
    total += std::abs(std::min(pred[i], delta) - std::min(target[i], delta));
  }
  return total;
}

double train_step(const ModelConfig& model, nn::ParameterStore& params,
                  std::span<const TrainingExample> batch, double delta, const nn::AdamConfig& adam) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::vector<PointCloud> clouds;
  for (const TrainingExample& ex : batch) {
    if (ex.queries.empty()) throw std::invalid_argument("train_step: example without queries");
    clouds.push_back(ex.cloud);
  }
  nn::Tape tape;
  Weights weights = Weights::trainable(tape, params);
  const std::vector<LatentVars> latents = encode_batch(weights, model, clouds, nn::Mode::train);
  std::vector<nn::Var> losses;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    nn::Var coords = tape.constant(query_block(batch[b].queries));
    nn::Var pred = udf_forward(weights, model, latents[b], coords);
    losses.push_back(nn::clamped_l1(pred, targets_of(batch[b].queries), delta));
  }
  nn::Var total = losses.size() == 1 ? losses.front() : nn::add(losses);
  const double loss = total.value()[0];
  if (!std::isfinite(loss)) throw std::domain_error("train_step: non-finite loss");
  tape.backward(total);
  nn::adam_step(params, adam);
  return loss;
}

double validation_loss(const ModelConfig& model, const nn::ParameterStore& params,
                       std::span<const TrainingExample> examples, double delta) {
  double total = 0.0;
  std::size_t count = 0;
  for (const TrainingExample& ex : examples) {
    const LatentPointVoxel latent = build_latent(model, params, ex.cloud);
    std::vector<Vec3> points(ex.queries.size());
    for (std::size_t i = 0; i < points.size(); ++i) points[i] = ex.queries[i].position;
    const std::vector<double> pred = evaluate_udf(model, params, latent, points);
    total += clamped_loss(pred, targets_of(ex.queries), delta);
    count += ex.queries.size();
  }
  if (count == 0) throw std::invalid_argument("validation_loss: no queries");
  return total / static_cast<double>(count);
}

std::string dataset_fingerprint(std::span<const PreparedShape> shapes) {
  std::string out;
  for (const PreparedShape& s : shapes) out += (out.empty() ? "" : ";") + s.fingerprint();
  return out;
}

nn::Checkpoint make_checkpoint(const ModelConfig& model, const TrainConfig& config,
                               const TrainState& state, const std::string& dataset) {
  nn::Checkpoint ck;
  ck.header = prefixed("model.", model.to_fields());
  for (auto& [k, v] : prefixed("train.", config.to_fields())) ck.header[k] = v;
  ck.header["state.epoch"] = std::to_string(state.epoch);
  ck.header["state.best_validation"] = fields::format(state.best_validation);
  ck.header["state.best_epoch"] = std::to_string(state.best_epoch);
  ck.header["dataset"] = dataset;
  ck.store = state.params;
  return ck;
}

UdfModel load_model(const std::filesystem::path& path) {
  nn::Checkpoint ck = nn::load_checkpoint(path);
  ModelConfig config = ModelConfig::from_fields(strip("model.", ck.header));
  return UdfModel(std::move(config), std::move(ck.store));
}

TrainState fit(const ModelConfig& model, const TrainConfig& config,
               std::span<const TrainingShape> dataset, const FitOptions& options) {
  model.validate();
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("fit: dataset has no shapes");
  const auto started = std::chrono::steady_clock::now();

  std::vector<PreparedShape> shapes;
  for (std::size_t i = 0; i < dataset.size(); ++i) shapes.emplace_back(dataset[i], i, config);
  const std::string fingerprint = dataset_fingerprint(shapes);

  std::vector<TrainingExample> validation;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    validation.push_back({shapes[i].input(),
                          shapes[i].queries(config.validation_queries(), config.delta,
                                            derive_seed(config.seed, {kStreamValidation, i}))});
  }

  const bool writes = !options.output_dir.empty();
  const auto last_path = options.output_dir / "last.ckpt";
  const auto best_path = options.output_dir / "best.ckpt";
  const auto log_path = options.output_dir / "train_log.csv";
  if (writes) std::filesystem::create_directories(options.output_dir);

  TrainState state;
  if (options.resume) {
    if (!writes) throw std::invalid_argument("fit: resume needs an output directory");
    nn::Checkpoint ck = nn::load_checkpoint(last_path);
    if (ModelConfig::from_fields(strip("model.", ck.header)) != model) {
      throw std::invalid_argument("resume: checkpoint architecture differs from the configuration");
    }
    TrainConfig stored = TrainConfig::from_fields(strip("train.", ck.header));
    stored.epochs = config.epochs;
    if (stored != config) throw std::invalid_argument("resume: checkpoint training settings differ");
    if (ck.header["dataset"] != fingerprint) throw std::invalid_argument("resume: dataset differs");
    check_parameters(model, ck.store);
    state.params = std::move(ck.store);
    state.epoch = fields::to_size("checkpoint header", ck.header["state.epoch"]);
    state.best_validation = parse_extended(ck.header["state.best_validation"]);
    state.best_epoch = fields::to_size("checkpoint header", ck.header["state.best_epoch"]);
    state.history = read_log(log_path, state.epoch);
  } else {
    state.params = initialize_parameters(model, config.seed);
  }

  const std::size_t batches = config.batches_in_epoch(shapes.size());
  const std::size_t total_steps = config.epochs * batches;
  std::size_t ran = 0;
  const double earlier_wall = state.history.empty() ? 0.0 : state.history.back().wall_time;
  while (state.epoch < config.epochs && (options.stop_after == 0 || ran < options.stop_after)) {
    const std::size_t epoch = state.epoch + 1;
    Rng shuffle_rng = make_rng(config.seed, {kStreamShuffle, epoch});
    std::vector<std::size_t> order;
    double epoch_loss = 0.0;
    std::size_t epoch_queries = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<TrainingExample> batch;
      for (std::size_t k = 0; k < config.batch_shapes; ++k) {
        if (order.empty()) {
          order.resize(shapes.size());
          for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
          std::shuffle(order.begin(), order.end(), shuffle_rng);
          std::reverse(order.begin(), order.end());
        }
        const std::size_t s = order.back();
        order.pop_back();
        batch.push_back({shapes[s].input(),
                         shapes[s].queries(config.queries_per_shape, config.delta,
                                           derive_seed(config.seed, {kStreamQueries, epoch, b, k}))});
      }
      nn::AdamConfig adam;
      adam.lr = config.learning_rate_at((epoch - 1) * batches + b, total_steps);
      double loss = 0.0;
      try {
        loss = train_step(model, state.params, batch, config.delta, adam);
      } catch (const std::domain_error& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(b) + ": " + e.what());
      }
      epoch_loss += loss;
      epoch_queries += config.batch_shapes * config.queries_per_shape;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = epoch_loss / static_cast<double>(epoch_queries);
    record.validation_loss = validation_loss(model, state.params, validation, config.delta);
    record.wall_time = earlier_wall + std::chrono::duration<double>(
                                          std::chrono::steady_clock::now() - started).count();
    state.epoch = epoch;
    state.history.push_back(record);
    const bool improved = record.validation_loss < state.best_validation;
    if (improved) {
      state.best_validation = record.validation_loss;
      state.best_epoch = epoch;
    }
    if (writes) {
      write_log(log_path, state.history);
      const nn::Checkpoint ck = make_checkpoint(model, config, state, fingerprint);
      if (improved) nn::save_checkpoint(best_path, ck);
      nn::save_checkpoint(last_path, ck);
    }
    if (options.on_epoch) options.on_epoch(record);
    ++ran;
  }
  return state;
}

}  // namespace pvudf
