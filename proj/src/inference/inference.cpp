#include "pvudf/inference/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "pvudf/random.hpp"

namespace pvudf {
namespace {

constexpr std::uint64_t kStreamJitter = 0x51;
constexpr std::uint64_t kStreamResample = 0x52;

[[noreturn]] void config_error(const std::string& detail) {
  throw std::invalid_argument("inference config: " + detail);
}

template <typename Result, typename Eval>
std::vector<Result> run_blocks(std::span<const Vec3> points, std::size_t threads, Eval eval) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, points.size() / 256 + 1));
  if (workers == 1) return eval(points);
  std::vector<std::vector<Result>> parts(workers);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t per = (points.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(points.size(), w * per);
    const std::size_t end = std::min(points.size(), begin + per);
    pool.emplace_back([&, w, begin, end] {
      try {
        parts[w] = eval(points.subspan(begin, end - begin));
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<Result> out;
  out.reserve(points.size());
  for (auto& part : parts) out.insert(out.end(), part.begin(), part.end());
  return out;
}

PointCloud filter_below(const PointCloud& points, const std::vector<double>& f, double threshold) {
  PointCloud kept;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (f[i] < threshold) kept.push_back(points[i]);
  }
  return kept;
}

double mean_abs(const std::vector<FieldSample>& samples) {
  double s = 0.0;
  for (const FieldSample& x : samples) s += std::abs(x.value);
  return samples.empty() ? 0.0 : s / static_cast<double>(samples.size());
}

}  // namespace

void InferenceConfig::validate() const {
  if (projections < 1) config_error("projections (np) must be at least 1");
  if (!(threshold > 0.0) || !std::isfinite(threshold)) config_error("threshold (T) must be positive");
  if (resolution < 1) config_error("resolution (R) must be at least 1");
  if (!std::isfinite(jitter_low) || !std::isfinite(jitter_high) || jitter_low > jitter_high) {
    config_error("jitter bounds must be finite with low <= high");
  }
  if (!(delta > 0.0) || !std::isfinite(delta)) config_error("delta must be positive");
  if (threads < 1) config_error("threads must be at least 1");
}

std::size_t InferenceConfig::replicas(std::size_t input_size) const {
  if (input_size == 0) throw std::invalid_argument("inference: empty input cloud");
  return std::max<std::size_t>(1, (2 * resolution + input_size - 1) / input_size);
}

std::string seeding_name(Seeding seeding) { return seeding == Seeding::jitter ? "jitter" : "bbox"; }

Seeding parse_seeding(const std::string& name) {
  if (name == "jitter") return Seeding::jitter;
  if (name == "bbox") return Seeding::bbox;
  throw std::invalid_argument("seeding must be jitter or bbox, got '" + name + "'");
}

fields::Fields InferenceConfig::to_fields() const {
  return {{"projections", std::to_string(projections)},
          {"threshold", fields::format(threshold)},
          {"resolution", std::to_string(resolution)},
          {"jitter_low", fields::format(jitter_low)},
          {"jitter_high", fields::format(jitter_high)},
          {"delta", fields::format(delta)},
          {"seeding", seeding_name(seeding)},
          {"seed", std::to_string(seed)},
          {"threads", std::to_string(threads)}};
}

InferenceConfig InferenceConfig::from_fields(const fields::Fields& entries) {
  InferenceConfig c;
  for (const auto& [key, value] : entries) {
    const std::string ctx = "inference config: " + key;
    if (key == "projections") c.projections = fields::to_size(ctx, value);
    else if (key == "threshold") c.threshold = fields::to_real(ctx, value);
    else if (key == "resolution") c.resolution = fields::to_size(ctx, value);
    else if (key == "jitter_low") c.jitter_low = fields::to_real(ctx, value);
    else if (key == "jitter_high") c.jitter_high = fields::to_real(ctx, value);
    else if (key == "delta") c.delta = fields::to_real(ctx, value);
    else if (key == "seeding") c.seeding = parse_seeding(fields::trim(value));
    else if (key == "seed") c.seed = fields::to_u64(ctx, value);
    else if (key == "threads") c.threads = fields::to_size(ctx, value);
    else config_error("unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

LearnedField::LearnedField(const UdfModel& model, const LatentPointVoxel& latent, std::size_t threads)
    : decoder_(model.config(), model.parameters(), latent),
      threads_(std::max<std::size_t>(1, threads)) {}

std::vector<double> LearnedField::values(std::span<const Vec3> points) const {
  return run_blocks<double>(points, threads_,
                            [&](std::span<const Vec3> block) { return decoder_.values(block); });
}

std::vector<FieldSample> LearnedField::samples(std::span<const Vec3> points) const {
  return run_blocks<FieldSample>(points, threads_, [&](std::span<const Vec3> block) {
    return decoder_.samples(block);
  });
}

std::vector<double> OracleField::values(std::span<const Vec3> points) const {
  std::vector<double> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = oracle_ud(shape_, points[i]);
  return out;
}

std::vector<FieldSample> OracleField::samples(std::span<const Vec3> points) const {
  std::vector<FieldSample> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 away = points[i] - oracle_project(shape_, points[i]).point;
    const double d = norm(away);
    out[i].value = oracle_ud(shape_, points[i]);
    out[i].gradient = d > 0.0 ? away / d : Vec3{};
  }
  return out;
}

PointCloud seed_points(const PointCloud& input, const InferenceConfig& config) {
  config.validate();
  const std::size_t m = config.replicas(input.size());
  Rng rng = make_rng(config.seed, {kStreamJitter});
  PointCloud seeds;
  seeds.reserve(m * input.size());
  if (config.seeding == Seeding::jitter) {
    std::uniform_real_distribution<double> jitter(config.jitter_low, config.jitter_high);
    for (std::size_t r = 0; r < m; ++r) {
      const double jx = config.jitter_low == config.jitter_high ? config.jitter_low : jitter(rng);
      const double jy = config.jitter_low == config.jitter_high ? config.jitter_low : jitter(rng);
      const double jz = config.jitter_low == config.jitter_high ? config.jitter_low : jitter(rng);
      const Vec3 j{jx, jy, jz};
      for (const Vec3& x : input) seeds.push_back(x + j);
    }
  } else {
    const BoundingBox box = bounding_box(input);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < m * input.size(); ++i) {
      const double tx = u(rng);
      const double ty = u(rng);
      const double tz = u(rng);
      seeds.push_back({box.lo.x + tx * (box.hi.x - box.lo.x), box.lo.y + ty * (box.hi.y - box.lo.y),
                       box.lo.z + tz * (box.hi.z - box.lo.z)});
    }
  }
  return seeds;
}

PointCloud project_points(const DistanceField& field, PointCloud points, std::size_t steps,
                          ProjectionStats* stats) {
  for (std::size_t step = 0; step < steps; ++step) {
    const std::vector<FieldSample> s = field.samples(points);
    if (stats) stats->mean_residual.push_back(mean_abs(s));
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double g = norm(s[i].gradient);
      if (!(g >= kGradientFloor)) {
        if (stats) ++stats->skipped;
        continue;
      }
      points[i] = points[i] - s[i].gradient * (s[i].value / g);
    }
  }
  if (stats) {
    stats->final_values = field.values(points);
    double sum = 0.0;
    for (double v : stats->final_values) sum += std::abs(v);
    stats->mean_residual.push_back(points.empty() ? 0.0 : sum / static_cast<double>(points.size()));
  }
  return points;
}

Reconstruction reconstruct(const DistanceField& field, const PointCloud& input,
                           const InferenceConfig& config) {
  config.validate();
  if (input.empty()) throw std::invalid_argument("reconstruct: empty input cloud");
  Reconstruction out;
  ReconstructionReport& r = out.report;

  PointCloud points = seed_points(input, config);
  r.seeds = points.size();
  points = project_points(field, std::move(points), config.projections, &r.first_phase);
  PointCloud survivors = filter_below(points, r.first_phase.final_values, config.threshold);
  r.first_survivors = survivors.size();
  r.first_rejected = r.seeds - survivors.size();
  if (survivors.empty()) {
    throw std::runtime_error("no surface found: 0 of " + std::to_string(r.seeds) +
                             " seeds passed the first filter (T = " +
                             fields::format(config.threshold) + ")");
  }

  Rng rng = make_rng(config.seed, {kStreamResample});
  std::uniform_int_distribution<std::size_t> pick(0, survivors.size() - 1);
  std::normal_distribution<double> displacement(0.0, config.delta / 3.0);
  PointCloud drawn;
  drawn.reserve(config.resolution);
  for (std::size_t i = 0; i < config.resolution; ++i) {
    const Vec3 base = survivors[pick(rng)];
    const double dx = displacement(rng);
    const double dy = displacement(rng);
    const double dz = displacement(rng);
    drawn.push_back(base + Vec3{dx, dy, dz});
  }
  r.resampled = drawn.size();
  drawn = project_points(field, std::move(drawn), config.projections, &r.second_phase);
  out.points = filter_below(drawn, r.second_phase.final_values, config.threshold);
  r.final_survivors = out.points.size();
  r.final_rejected = r.resampled - out.points.size();
  r.skipped_updates = r.first_phase.skipped + r.second_phase.skipped;
  if (out.points.empty()) {
    throw std::runtime_error("no surface found: " + std::to_string(r.first_survivors) +
                             " seeds passed the first filter but none of the " +
                             std::to_string(r.resampled) + " resampled points passed the second");
  }
  return out;
}

}  // namespace pvudf
