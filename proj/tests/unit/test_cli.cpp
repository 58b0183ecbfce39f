#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pvudf/config/run_config.hpp"
#include "pvudf/geometry/io.hpp"

using namespace pvudf;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "pvudf_cli_test";

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const fs::path log = kWork / "stdout.txt";
  const std::string cmd = std::string("\"") + PVUDF_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  r.out.assign(std::istreambuf_iterator<char>(in), {});
  return r;
}

std::string bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

std::string path(const std::string& name) { return (kWork / name).string(); }

const char* kTinyConfig = R"([model]
resolution = 8
point_widths = 8,12,16
voxel_channels = 6,10
voxel_strides = 2,2
decoder_widths = 16,16

[train]
epochs = 2
queries_per_shape = 64
input_points = 300
seed = 3

[inference]
resolution = 500
projections = 2

[shape]
name = ball
type = sphere
radius = 1
)";

struct Workspace {
  Workspace() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

}  // namespace

TEST_CASE("config text") {
  const RunConfig c = parse_run_config(kTinyConfig);
  CHECK(c.model.resolution == 8);
  CHECK(c.train.epochs == 2);
  CHECK(c.inference.resolution == 500);
  REQUIRE(c.shapes.size() == 1);
  CHECK(c.shapes[0].type == "sphere");
  const std::string dumped = dump_run_config(c);
  CHECK(parse_run_config(dumped) == c);
  CHECK(dump_run_config(parse_run_config(dumped)) == dumped);
  CHECK(parse_run_config("# nothing\n\n") == RunConfig{});

  CHECK_THROWS_WITH_AS(parse_run_config("[train]\n\n[bogus]\n"), doctest::Contains("line 3"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("epochs = 3\n"), doctest::Contains("line 1"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("[train]\nepochs 3\n"), doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("[train]\nepochs = 3\nepochs = 4\n"),
                       doctest::Contains("duplicate"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[train]\nepoch = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[train]\nepochs = three\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[model]\nresolution = 7\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[shape]\ntype = sphere\nradius = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[shape]\ntype = torus\n"), ConfigError);
}

TEST_CASE("shape specs") {
  const ShapeSpec s = parse_shape_spec("hemisphere radius=2 axis=0,1,0");
  CHECK(s.type == "hemisphere");
  const auto hemi = std::get<OpenHemisphere>(analytic_shape(s));
  CHECK(hemi.radius == 2.0);
  CHECK(hemi.axis == Vec3{0, 1, 0});
  CHECK_THROWS_AS(analytic_shape(parse_shape_spec("sphere size=2")), ConfigError);
  CHECK_THROWS_AS(parse_shape_spec("sphere radius"), ConfigError);
  CHECK_THROWS_AS(parse_shape_spec(""), ConfigError);
}

TEST_CASE("cli synth and eval") {
  Workspace ws;
  REQUIRE(cli("synth --shape \"hemisphere radius=1\" -N 300 --dense 2000 --seed 4 --out " +
              path("a.xyz") + " --gt " + path("gt.xyz")).code == 0);
  REQUIRE(cli("synth --shape \"hemisphere radius=1\" -N 300 --dense 2000 --seed 4 --out " +
              path("b.xyz") + " --gt " + path("gt_b.xyz")).code == 0);
  REQUIRE(cli("synth --shape \"hemisphere radius=1\" -N 300 --seed 5 --out " + path("c.xyz")).code == 0);
  const PointCloud a = read_point_cloud(path("a.xyz"));
  CHECK(a.size() == 300);
  CHECK(bytes(path("a.xyz")) == bytes(path("b.xyz")));
  CHECK(bytes(path("a.xyz")) != bytes(path("c.xyz")));
  const OpenHemisphere hemi{{0, 0, 0}, 1.0, {0, 0, 1}};
  for (const Vec3& p : a) CHECK(oracle_ud(hemi, p) < 1e-12);

  const Run same = cli("eval --pred " + path("gt.xyz") + " --gt " + path("gt.xyz") + " --csv " + path("m.csv"));
  CHECK(same.code == 0);
  CHECK(same.out.find("chamfer_l2: 0 ") != std::string::npos);
  CHECK(bytes(path("m.csv")).find(",f_score,1,1.000") != std::string::npos);

  write(kWork / "cfg.cfg", kTinyConfig);
  CHECK(cli("synth --config " + path("cfg.cfg") + " -N 100 --dense 100 --out-dir " + path("set")).code == 0);
  CHECK(fs::exists(kWork / "set" / "ball_input.xyz"));
  CHECK(fs::exists(kWork / "set" / "ball_gt.xyz"));
}

TEST_CASE("cli exit codes") {
  Workspace ws;
  CHECK(cli("").code == 2);
  CHECK(cli("synth --bogus").code == 2);
  CHECK(cli("synth --shape \"torus r=1\" --out " + path("x.xyz")).code == 2);
  CHECK(cli("train --config " + path("missing.cfg")).code == 2);
  write(kWork / "bad.cfg", "[train]\nepochs = -1\n");
  const Run bad = cli("config " + path("bad.cfg"));
  CHECK(bad.code == 2);
  CHECK(bad.out.find("epochs") != std::string::npos);
  write(kWork / "good.cfg", kTinyConfig);
  const Run good = cli("config " + path("good.cfg"));
  CHECK(good.code == 0);
  CHECK(parse_run_config(good.out) == parse_run_config(kTinyConfig));

  write(kWork / "junk.ckpt", "not a checkpoint");
  write(kWork / "in.xyz", "0 0 0\n1 1 1\n");
  CHECK(cli("reconstruct --checkpoint " + path("junk.ckpt") + " --input " + path("in.xyz") + " --out " +
            path("o.xyz")).code == 3);
  write(kWork / "broken.xyz", "0 0\n");
  CHECK(cli("eval --pred " + path("broken.xyz") + " --gt " + path("in.xyz")).code == 3);
}

TEST_CASE("cli train and reconstruct are reproducible") {
  Workspace ws;
  write(kWork / "cfg.cfg", kTinyConfig);
  REQUIRE(cli("synth --shape \"sphere radius=1\" -N 300 --dense 1000 --out " + path("in.xyz") + " --gt " +
              path("gt.xyz")).code == 0);
  const Run first = cli("train --config " + path("cfg.cfg") + " --out " + path("r1"));
  REQUIRE(first.code == 0);
  CHECK(first.out.find("epoch 2/2") != std::string::npos);
  REQUIRE(cli("train --quiet --config " + path("cfg.cfg") + " --out " + path("r2")).code == 0);
  CHECK(bytes(kWork / "r1" / "last.ckpt") == bytes(kWork / "r2" / "last.ckpt"));
  CHECK(bytes(kWork / "r1" / "best.ckpt") == bytes(kWork / "r2" / "best.ckpt"));
  const RunConfig dumped = parse_run_config(bytes(kWork / "r1" / "config.cfg"));
  CHECK(dumped.model == parse_run_config(kTinyConfig).model);
  CHECK(dumped.train == parse_run_config(kTinyConfig).train);

  const std::string rec = "reconstruct --checkpoint " + path("r1/best.ckpt") + " --input " + path("in.xyz") +
                          " --config " + path("cfg.cfg") + " --threshold 1 --out ";
  const Run one = cli(rec + path("o1.xyz") + " --stats " + path("s.csv"));
  REQUIRE(one.code == 0);
  REQUIRE(cli(rec + path("o2.xyz") + " --threads 2").code == 0);
  CHECK(bytes(path("o1.xyz")) == bytes(path("o2.xyz")));
  const PointCloud out = read_point_cloud(path("o1.xyz"));
  CHECK(out.size() <= 500);
  CHECK(out.size() > 0);
  CHECK(fs::exists(kWork / "s.csv"));
  fs::remove_all(kWork);
}
