#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "pvudf/config/run_config.hpp"
#include "pvudf/geometry/io.hpp"
#include "pvudf/metrics/metrics.hpp"
#include "pvudf/random.hpp"

namespace {

using namespace pvudf;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

template <typename F>
auto config_step(F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

struct SynthArgs {
  std::string shape;
  std::string config;
  std::size_t points = 3000;
  std::size_t dense = 100000;
  std::uint64_t seed = 0;
  std::string out;
  std::string gt;
  std::string out_dir;
};

int cmd_synth(const SynthArgs& a) {
  std::vector<ShapeSpec> specs;
  if (!a.shape.empty()) {
    specs.push_back(parse_shape_spec(a.shape));
  } else {
    specs = load_run_config(a.config).shapes;
    if (specs.empty()) throw ConfigError("config has no [shape] sections");
  }
  if (a.points < 1 || a.dense < 1) throw ConfigError("--points and --dense must be positive");
  if (!a.shape.empty() && a.out.empty()) throw ConfigError("--shape needs --out");
  if (a.shape.empty() && a.out_dir.empty()) throw ConfigError("--config needs --out-dir");

  for (std::size_t i = 0; i < specs.size(); ++i) {
    const AnalyticShape shape = analytic_shape(specs[i]);
    const PointCloud input = sample_surface(shape, a.points, derive_seed(a.seed, {1, i}));
    const PointCloud dense = sample_surface(shape, a.dense, derive_seed(a.seed, {2, i}));
    std::filesystem::path in_path = a.out, gt_path = a.gt;
    if (a.shape.empty()) {
      std::filesystem::create_directories(a.out_dir);
      in_path = std::filesystem::path(a.out_dir) / (specs[i].name + "_input.xyz");
      gt_path = std::filesystem::path(a.out_dir) / (specs[i].name + "_gt.xyz");
    }
    write_point_cloud(in_path, input);
    std::cout << specs[i].name << ": " << input.size() << " input points -> " << in_path.string() << "\n";
    if (!gt_path.empty()) {
      write_point_cloud(gt_path, dense);
      std::cout << specs[i].name << ": " << dense.size() << " reference points -> " << gt_path.string()
                << "\n";
    }
  }
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string out_dir;
  bool resume = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::size_t stop_after = 0;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig run = load_run_config(a.config);
  if (!a.out_dir.empty()) run.output_dir = a.out_dir;
  if (a.seed) run.train.seed = *a.seed;
  if (a.epochs) {
    run.train.epochs = *a.epochs;
    config_step([&] { run.train.validate(); return 0; });
  }
  if (run.shapes.empty()) throw ConfigError("config has no [shape] sections to train on");

  std::vector<TrainingShape> data;
  for (std::size_t i = 0; i < run.shapes.size(); ++i) {
    data.push_back(training_shape(run.shapes[i], derive_seed(run.train.seed, {3, i})));
  }
  std::filesystem::create_directories(run.output_dir);
  {
    std::ofstream dump(run.output_dir / "config.cfg");
    dump << dump_run_config(run);
  }
  FitOptions options;
  options.output_dir = run.output_dir;
  options.resume = a.resume;
  options.stop_after = a.stop_after;
  if (!a.quiet) {
    options.on_epoch = [&](const EpochRecord& r) {
      std::cout << "epoch " << r.epoch << "/" << run.train.epochs << "  train " << r.train_loss
                << "  val " << r.validation_loss << "  " << std::fixed << std::setprecision(1)
                << r.wall_time << "s" << std::defaultfloat << std::setprecision(6)
                << std::endl;
    };
  }
  const TrainState state = fit(run.model, run.train, data, options);
  std::cout << "best validation loss " << state.best_validation << " at epoch " << state.best_epoch
            << "; checkpoints in " << run.output_dir.string() << "\n";
  return 0;
}

struct ReconstructArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::string config;
  std::string stats;
  std::optional<std::size_t> np;
  std::optional<double> threshold;
  std::optional<std::size_t> resolution;
  std::vector<double> jitter;
  std::optional<std::string> seeding;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  InferenceConfig ic = a.config.empty() ? InferenceConfig{} : load_run_config(a.config).inference;
  if (a.np) ic.projections = *a.np;
  if (a.threshold) ic.threshold = *a.threshold;
  if (a.resolution) ic.resolution = *a.resolution;
  if (!a.jitter.empty()) {
    if (a.jitter.size() != 2) throw ConfigError("--jitter expects a,b");
    ic.jitter_low = a.jitter[0];
    ic.jitter_high = a.jitter[1];
  }
  if (a.seeding) ic.seeding = config_step([&] { return parse_seeding(*a.seeding); });
  if (a.seed) ic.seed = *a.seed;
  ic.threads = a.threads;
  config_step([&] { ic.validate(); return 0; });

  const nn::Checkpoint ck = nn::load_checkpoint(a.checkpoint);
  double fill = TrainConfig{}.fill;
  if (auto it = ck.header.find("train.fill"); it != ck.header.end()) {
    fill = fields::to_real("checkpoint train.fill", it->second);
  }
  const UdfModel model = load_model(a.checkpoint);
  const NormalizedCloud input = normalize_to_unit_cube(read_point_cloud(a.input), fill);
  const LatentPointVoxel latent = model.build_latent(input.cloud);
  const LearnedField field(model, latent, ic.threads);
  const Reconstruction rec = reconstruct(field, input.cloud, ic);
  write_point_cloud(a.out, input.transform.invert(rec.points));

  const ReconstructionReport& r = rec.report;
  const std::vector<std::pair<std::string, std::string>> rows{
      {"seeding", seeding_name(ic.seeding)},
      {"seeds", std::to_string(r.seeds)},
      {"first_filter_survivors", std::to_string(r.first_survivors)},
      {"first_filter_rejected", std::to_string(r.first_rejected)},
      {"resampled", std::to_string(r.resampled)},
      {"final_filter_survivors", std::to_string(r.final_survivors)},
      {"final_filter_rejected", std::to_string(r.final_rejected)},
      {"skipped_updates", std::to_string(r.skipped_updates)},
      {"first_phase_final_residual", fields::format(r.first_phase.mean_residual.back())},
      {"second_phase_final_residual", fields::format(r.second_phase.mean_residual.back())}};
  for (const auto& [k, v] : rows) std::cout << k << ": " << v << "\n";
  std::cout << "wrote " << rec.points.size() << " points to " << a.out << "\n";
  if (!a.stats.empty()) {
    std::ofstream out(a.stats);
    if (!out) throw std::runtime_error("cannot write " + a.stats);
    out << "statistic,value\n";
    for (const auto& [k, v] : rows) out << k << "," << v << "\n";
  }
  return 0;
}

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::vector<double> thresholds{0.5, 1.0};
  double diagonal = 0.0;
  std::string csv;
  std::string name = "shape";
};

int cmd_eval(const EvalArgs& a) {
  for (double t : a.thresholds) {
    if (!(t > 0.0)) throw ConfigError("--thresholds must be positive percentages");
  }
  if (a.diagonal < 0.0) throw ConfigError("--diagonal must be non-negative");
  const PointCloud pred = read_point_cloud(a.pred);
  const PointCloud gt = read_point_cloud(a.gt);
  if (gt.empty()) throw std::runtime_error("reference cloud is empty");
  const double diagonal = a.diagonal > 0.0 ? a.diagonal : bounding_box(gt).diagonal();
  const EvalReport report = evaluate(pred, gt, a.thresholds, diagonal);
  std::cout << "points: " << report.chamfer.predicted << " predicted, " << report.chamfer.reference
            << " reference\n";
  std::cout << "chamfer_l2: " << fields::format(report.chamfer.mean()) << " ("
            << format_score(report.chamfer.mean() * 1e4) << " x1e-4)\n";
  for (std::size_t i = 0; i < report.threshold_percent.size(); ++i) {
    std::cout << "d = " << fields::format(report.threshold_percent[i]) << "%: precision "
              << format_score(report.rates.precision[i]) << "  recall "
              << format_score(report.rates.recall[i]) << "  f_score " << format_score(report.f_scores[i])
              << "\n";
  }
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw std::runtime_error("cannot write " + a.csv);
    write_report_csv(out, a.name, report);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-voxel unsigned distance field training and surface reconstruction"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Sample input and reference clouds from analytic shapes");
  s->add_option("--shape", synth.shape, "Shape spec, e.g. \"hemisphere radius=1 axis=0,0,1\"");
  s->add_option("--config", synth.config, "Take shapes from a config file")->check(CLI::ExistingFile);
  s->add_option("-N,--points", synth.points, "Input points per shape");
  s->add_option("--dense", synth.dense, "Reference points per shape");
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--out", synth.out, "Input cloud path (with --shape)");
  s->add_option("--gt", synth.gt, "Reference cloud path (with --shape)");
  s->add_option("--out-dir", synth.out_dir, "Output directory (with --config)");
  s->require_option(1, 0);

  TrainArgs train;
  std::uint64_t train_seed = 0;
  std::size_t train_epochs = 0;
  std::size_t train_threads = 1;
  auto* t = app.add_subcommand("train", "Train a model on the shapes of a config");
  t->add_option("--config", train.config, "Run config")->required()->check(CLI::ExistingFile);
  t->add_option("--out", train.out_dir, "Output directory (overrides [output] dir)");
  t->add_flag("--resume", train.resume, "Continue from <out>/last.ckpt");
  auto* seed_opt = t->add_option("--seed", train_seed, "Override [train] seed");
  auto* epochs_opt = t->add_option("--epochs", train_epochs, "Override [train] epochs");
  t->add_option("--stop-after", train.stop_after, "Stop this run after N epochs");
  t->add_option("--threads", train_threads, "Worker cap (training runs on one thread)")
      ->check(CLI::PositiveNumber);
  t->add_flag("--quiet", train.quiet, "No per-epoch output");

  ReconstructArgs rec;
  std::size_t rec_np = 0, rec_resolution = 0;
  double rec_threshold = 0.0;
  std::string rec_seeding;
  std::uint64_t rec_seed = 0;
  auto* r = app.add_subcommand("reconstruct", "Extract a dense surface point cloud");
  r->add_option("--checkpoint", rec.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  r->add_option("--input", rec.input, "Input point cloud (.xyz, .ply, .obj)")->required()->check(CLI::ExistingFile);
  r->add_option("--out", rec.out, "Output cloud (.xyz or .ply)")->required();
  r->add_option("--config", rec.config, "Take [inference] settings from a config")->check(CLI::ExistingFile);
  auto* np_opt = r->add_option("--np", rec_np, "Projection steps per phase");
  auto* thr_opt = r->add_option("--threshold", rec_threshold, "Filter threshold T");
  auto* res_opt = r->add_option("--resolution", rec_resolution, "Output point count R");
  r->add_option("--jitter", rec.jitter, "Jitter bounds a,b")->delimiter(',')->expected(2);
  auto* seeding_opt = r->add_option("--seeding", rec_seeding, "jitter or bbox")
                          ->check(CLI::IsMember({"jitter", "bbox"}));
  auto* rseed_opt = r->add_option("--seed", rec_seed, "Random seed");
  r->add_option("--threads", rec.threads, "Worker threads")->check(CLI::PositiveNumber);
  r->add_option("--stats", rec.stats, "Write filter statistics as CSV");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Chamfer-L2, precision, recall, and F-score");
  e->add_option("--pred", ev.pred, "Reconstructed cloud")->required()->check(CLI::ExistingFile);
  e->add_option("--gt", ev.gt, "Reference cloud")->required()->check(CLI::ExistingFile);
  e->add_option("--thresholds", ev.thresholds, "Thresholds in percent of the diagonal")->delimiter(',');
  e->add_option("--diagonal", ev.diagonal, "Diagonal for thresholds (default: reference bounding box)");
  e->add_option("--csv", ev.csv, "Write the report as CSV");
  e->add_option("--name", ev.name, "Shape name in the CSV");

  std::string config_path;
  auto* c = app.add_subcommand("config", "Validate a config and print its canonical form");
  c->add_option("config", config_path, "Run config")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) {
      if (*seed_opt) train.seed = train_seed;
      if (*epochs_opt) train.epochs = train_epochs;
      return cmd_train(train);
    }
    if (*r) {
      if (*np_opt) rec.np = rec_np;
      if (*thr_opt) rec.threshold = rec_threshold;
      if (*res_opt) rec.resolution = rec_resolution;
      if (*seeding_opt) rec.seeding = rec_seeding;
      if (*rseed_opt) rec.seed = rec_seed;
      return cmd_reconstruct(rec);
    }
    if (*e) return cmd_eval(ev);
    if (*c) {
      std::cout << dump_run_config(load_run_config(config_path));
      return 0;
    }
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
