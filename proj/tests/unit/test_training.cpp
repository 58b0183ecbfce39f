#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "pvudf/training/training.hpp"
#include "testing.hpp"

using namespace pvudf;
using namespace pvudf::testing;

namespace {

TrainConfig tiny_train() {
  TrainConfig c;
  c.queries_per_shape = 64;
  c.epochs = 4;
  c.input_points = 200;
  c.seed = 5;
  return c;
}

std::vector<TrainingShape> toy_dataset() {
  return {{"sphere", AnalyticShape{Sphere{{0, 0, 0}, 1.0}}},
          {"hemisphere", AnalyticShape{OpenHemisphere{{0, 0, 0}, 1.0, {0, 0, 1}}}}};
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pvudf_training_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("clamped_loss by hand") {
  const std::vector<double> same{0.01, 0.2, 0.0};
  CHECK(clamped_loss(same, same, 0.1) == 0.0);
  CHECK(clamped_loss(std::vector<double>{0.5}, std::vector<double>{0.2}, 0.1) == 0.0);
  CHECK(clamped_loss(std::vector<double>{0.05, 0.5}, std::vector<double>{0.0, 0.0}, 0.1) ==
        doctest::Approx(0.15).epsilon(1e-15));
  CHECK_THROWS(clamped_loss(std::vector<double>{0.1}, std::vector<double>{0.1, 0.2}, 0.1));
  CHECK_THROWS(clamped_loss(std::vector<double>{0.1}, std::vector<double>{-0.1}, 0.1));
  CHECK_THROWS(clamped_loss(std::vector<double>{0.1}, std::vector<double>{0.1}, 0.0));
}

TEST_CASE("clamped_loss properties") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  for (int trial = 0; trial < 100; ++trial) {
    const double delta = 0.05 + 0.1 * (trial % 3);
    std::vector<double> pred(50), target(50);
    for (auto& v : pred) v = u(rng);
    for (auto& v : target) v = u(rng);
    const double loss = clamped_loss(pred, target, delta);
    CHECK(loss >= 0.0);
    CHECK(loss <= 50 * delta);

    std::vector<std::size_t> perm(50);
    for (std::size_t i = 0; i < 50; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> p2(50), t2(50);
    for (std::size_t i = 0; i < 50; ++i) {
      p2[i] = pred[perm[i]];
      t2[i] = target[perm[i]];
    }
    CHECK(clamped_loss(p2, t2, delta) == doctest::Approx(loss).epsilon(1e-14));

    std::vector<double> clamped(50);
    for (std::size_t i = 0; i < 50; ++i) clamped[i] = target[i] >= delta ? delta + u(rng) : target[i];
    CHECK(clamped_loss(clamped, target, delta) == 0.0);

    nn::Tape tape;
    nn::Var p = tape.input(nn::Tensor({50}, pred));
    tape.backward(nn::clamped_l1(p, target, delta));
    for (double g : tape.grad(p).values()) CHECK((g == -1.0 || g == 0.0 || g == 1.0));
  }
}

TEST_CASE("train config") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(TrainConfig::from_fields(c.to_fields()) == c);
  CHECK(c.validation_queries() == 512);
  CHECK(c.batches_in_epoch(3) == 3);
  c.batch_shapes = 2;
  CHECK(c.batches_in_epoch(3) == 2);
  CHECK(c.learning_rate_at(0, 100) == doctest::Approx(1e-3));
  CHECK(c.learning_rate_at(99, 100) == doctest::Approx(1e-5));
  CHECK(c.learning_rate_at(50, 101) == doctest::Approx(0.5 * (1e-3 + 1e-5)));
  c.schedule = LrSchedule::constant;
  CHECK(c.learning_rate_at(77, 100) == 1e-3);
  for (auto mutate : std::vector<void (*)(TrainConfig&)>{
           [](TrainConfig& t) { t.delta = 0.0; }, [](TrainConfig& t) { t.queries_per_shape = 0; },
           [](TrainConfig& t) { t.batch_shapes = 0; }, [](TrainConfig& t) { t.fill = 1.5; },
           [](TrainConfig& t) { t.validation_fraction = 0.0; },
           [](TrainConfig& t) { t.learning_rate = -1.0; }}) {
    TrainConfig bad;
    mutate(bad);
    CHECK_THROWS(bad.validate());
  }
  CHECK_THROWS(TrainConfig::from_fields({{"epochs", "ten"}}));
  CHECK_THROWS(TrainConfig::from_fields({{"epoch", "10"}}));
}

TEST_CASE("prepared shapes") {
  const TrainConfig cfg = tiny_train();
  const PreparedShape analytic(toy_dataset()[1], 0, cfg);
  CHECK(analytic.input().size() == 200);
  const BoundingBox box = bounding_box(analytic.input());
  CHECK(std::max({box.extent().x, box.extent().y, box.extent().z}) == doctest::Approx(0.8));
  for (const Vec3& p : analytic.input()) CHECK(inside_unit_cube(p));
  const AnalyticShape frame = transformed(AnalyticShape{OpenHemisphere{{0, 0, 0}, 1.0, {0, 0, 1}}}, analytic.transform());
  for (const QuerySample& q : analytic.queries(100, 0.1, 3)) {
    CHECK(q.target_ud == doctest::Approx(oracle_ud(frame, q.position)).epsilon(1e-12));
  }
  CHECK(analytic.queries(10, 0.1, 3).front().position == analytic.queries(10, 0.1, 3).front().position);

  const PointCloud dense = sample_surface(Sphere{{2, 0, 0}, 0.5}, 5000, 4);
  const PreparedShape sampled({"cloud", dense}, 1, cfg);
  CHECK(sampled.input().size() == 200);
  const KdTree tree(sampled.transform().apply(dense));
  for (const QuerySample& q : sampled.queries(100, 0.1, 5)) {
    CHECK(q.target_ud == std::sqrt(tree.nearest(q.position).distance_squared));
  }
  CHECK_THROWS(PreparedShape({"small", PointCloud(10, Vec3{})}, 0, cfg));
  CHECK(analytic.fingerprint() != sampled.fingerprint());
}

TEST_CASE("train_step") {
  const ModelConfig model = small_model();
  const TrainConfig cfg = tiny_train();
  const PreparedShape shape(toy_dataset()[0], 0, cfg);
  const std::vector<TrainingExample> batch{{shape.input(), shape.queries(128, 0.1, 1)}};

  SUBCASE("overfits a frozen batch") {
    nn::ParameterStore params = initialize_parameters(model, 2);
    std::vector<double> trace;
    for (int i = 0; i < 50; ++i) trace.push_back(train_step(model, params, batch, 0.1, {1e-3}));
    CHECK(std::isfinite(trace.back()));
    CHECK(trace.back() < 0.5 * trace.front());
  }
  SUBCASE("identical runs give identical traces") {
    auto run = [&] {
      nn::ParameterStore params = initialize_parameters(model, 3);
      std::vector<double> trace;
      for (int i = 0; i < 5; ++i) trace.push_back(train_step(model, params, batch, 0.1, {1e-3}));
      return std::make_pair(trace, params);
    };
    const auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
  }
  SUBCASE("empty query set") {
    nn::ParameterStore params = initialize_parameters(model, 2);
    const std::vector<TrainingExample> empty{{shape.input(), {}}};
    CHECK_THROWS(train_step(model, params, empty, 0.1, {}));
    CHECK_THROWS(train_step(model, params, {}, 0.1, {}));
  }
  SUBCASE("validation runs batchnorm in eval mode") {
    nn::ParameterStore params = initialize_parameters(model, 2);
    train_step(model, params, batch, 0.1, {});
    const nn::ParameterStore before = params;
    const double v = validation_loss(model, params, batch, 0.1);
    CHECK(params == before);
    CHECK(v == validation_loss(model, params, batch, 0.1));
    CHECK(v <= 0.1);
  }
}

TEST_CASE("fit writes checkpoints and a log") {
  const auto dir = fresh_dir("fit");
  FitOptions options;
  options.output_dir = dir;
  std::vector<EpochRecord> seen;
  options.on_epoch = [&](const EpochRecord& r) { seen.push_back(r); };
  const auto data = toy_dataset();
  const TrainState state = fit(small_model(), tiny_train(), data, options);
  CHECK(state.epoch == 4);
  CHECK(seen.size() == 4);
  CHECK(std::filesystem::exists(dir / "best.ckpt"));
  CHECK(std::filesystem::exists(dir / "last.ckpt"));

  std::ifstream log(dir / "train_log.csv");
  std::string line;
  std::getline(log, line);
  CHECK(line == "epoch,train_loss,val_loss,wall_time");
  std::size_t rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 4);

  const UdfModel best = load_model(dir / "best.ckpt");
  CHECK(best.config() == small_model());
  const nn::Checkpoint last = nn::load_checkpoint(dir / "last.ckpt");
  CHECK(last.store == state.params);
  CHECK(last.header.at("state.best_epoch") == std::to_string(state.best_epoch));
  CHECK(state.best_validation == std::min_element(seen.begin(), seen.end(), [](auto& a, auto& b) {
                                   return a.validation_loss < b.validation_loss;
                                 })->validation_loss);
  std::filesystem::remove_all(dir);
}

TEST_CASE("resuming reproduces an uninterrupted run") {
  const auto data = toy_dataset();
  const TrainConfig cfg = tiny_train();
  const auto straight = fresh_dir("straight");
  const auto resumed = fresh_dir("resumed");
  FitOptions a;
  a.output_dir = straight;
  const TrainState full = fit(small_model(), cfg, data, a);

  FitOptions b;
  b.output_dir = resumed;
  b.stop_after = 2;
  CHECK(fit(small_model(), cfg, data, b).epoch == 2);
  b.resume = true;
  b.stop_after = 0;
  const TrainState rest = fit(small_model(), cfg, data, b);
  CHECK(rest.epoch == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(rest.history[i].train_loss == full.history[i].train_loss);
    CHECK(rest.history[i].validation_loss == full.history[i].validation_loss);
  }
  CHECK(file_bytes(straight / "last.ckpt") == file_bytes(resumed / "last.ckpt"));
  CHECK(file_bytes(straight / "best.ckpt") == file_bytes(resumed / "best.ckpt"));

  SUBCASE("mismatched settings are refused") {
    TrainConfig other = cfg;
    other.delta = 0.2;
    CHECK_THROWS_WITH(fit(small_model(), other, data, b), doctest::Contains("settings"));
    ModelConfig wider = small_model();
    wider.decoder_widths = {32, 16};
    CHECK_THROWS_WITH(fit(wider, cfg, data, b), doctest::Contains("architecture"));
    const std::vector<TrainingShape> one{data[0]};
    CHECK_THROWS_WITH(fit(small_model(), cfg, one, b), doctest::Contains("dataset"));
  }
  std::filesystem::remove_all(straight);
  std::filesystem::remove_all(resumed);
}
