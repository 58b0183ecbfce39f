#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "pvudf/nn/checkpoint.hpp"
#include "pvudf/nn/ops.hpp"
#include "pvudf/simd/kernels.hpp"
#include "testing.hpp"

using namespace pvudf;
using namespace pvudf::nn;
using pvudf::testing::check_gradients;
using pvudf::testing::random_tensor;
using pvudf::testing::sum_of_weighted;

namespace {

// Direct 6-loop cross-correlation with zero padding, accumulating bias first,
// then channels and kernel offsets in (c, kd, kh, kw) order.
Tensor naive_conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                    std::size_t pad) {
  const std::size_t batch = x.dim(0), cin = x.dim(1), d = x.dim(2), k = w.dim(2), cout = w.dim(0);
  const std::size_t od = (d + 2 * pad - k) / stride + 1;
  Tensor y({batch, cout, od, od, od});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < od; ++i)
        for (std::size_t j = 0; j < od; ++j)
          for (std::size_t l = 0; l < od; ++l) {
            double acc = b[o];
            for (std::size_t c = 0; c < cin; ++c)
              for (std::size_t a = 0; a < k; ++a)
                for (std::size_t e = 0; e < k; ++e)
                  for (std::size_t f = 0; f < k; ++f) {
                    const long xi = long(i * stride + a) - long(pad);
                    const long xj = long(j * stride + e) - long(pad);
                    const long xl = long(l * stride + f) - long(pad);
                    double v = 0.0;
                    if (xi >= 0 && xj >= 0 && xl >= 0 && xi < long(d) && xj < long(d) && xl < long(d)) {
                      v = x[(((n * cin + c) * d + xi) * d + xj) * d + xl];
                    }
                    acc += w[(((o * cin + c) * k + a) * k + e) * k + f] * v;
                  }
            y[(((n * cout + o) * od + i) * od + j) * od + l] = acc;
          }
  return y;
}

}  // namespace

TEST_CASE("dense") {
  Tape t;
  Var x = t.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var eye = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  CHECK(dense(x, eye, t.constant(Tensor({2}))).value() == x.value());
  Var y = dense(t.constant(Tensor({1, 1}, {2})), t.constant(Tensor({1, 1}, {3})),
                t.constant(Tensor({1}, {1})));
  CHECK(y.value()[0] == 7.0);
  CHECK_THROWS_WITH_AS(dense(x, t.constant(Tensor({3, 2})), t.constant(Tensor({2}))),
                       doctest::Contains("[2 x 2]"), std::invalid_argument);

  std::mt19937_64 rng(7);
  const Tensor weights = random_tensor({4, 3}, rng);
  auto check = check_gradients(
      [&](Tape&, std::vector<Var>& v) { return sum_of_weighted(dense(v[0], v[1], v[2]), weights); },
      {random_tensor({4, 5}, rng), random_tensor({5, 3}, rng), random_tensor({3}, rng)});
  CHECK(check.worst < 1e-6);
}

TEST_CASE("relu") {
  Tape t;
  Var x = t.input(Tensor({3}, {-1, 0, 2}));
  Var y = relu(x);
  CHECK(y.value() == Tensor({3}, {0, 0, 2}));
  t.backward(sum(y));
  CHECK(t.grad(x) == Tensor({3}, {0, 0, 1}));

  Tape t2;
  Var neg = t2.input(Tensor({4}, -0.5));
  Var r = relu(neg);
  t2.backward(sum(r));
  CHECK(r.value() == Tensor({4}, 0.0));
  CHECK(t2.grad(neg) == Tensor({4}, 0.0));

  std::mt19937_64 rng(8);
  Tensor x0 = random_tensor({50}, rng);
  for (double& v : x0.values()) {
    if (std::abs(v) < 1e-3) v = 0.5;
  }
  Tape t3;
  Var xv = t3.input(x0);
  t3.backward(sum(relu(xv)));
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(t3.grad(xv)[i] == (x0[i] > 0 ? 1.0 : 0.0));
}

TEST_CASE("softplus is positive and stable") {
  Tape t;
  Var y = softplus(t.constant(Tensor({4}, {0.0, -800.0, 800.0, 1.0})));
  CHECK(y.value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(y.value()[1] >= 0.0);
  CHECK(y.value()[2] == 800.0);
  CHECK(y.value()[3] == doctest::Approx(std::log1p(std::exp(1.0))));
  std::mt19937_64 rng(9);
  auto check = check_gradients([](Tape&, std::vector<Var>& v) { return sum(softplus(v[0])); },
                               {random_tensor({20}, rng, -5, 5)});
  CHECK(check.worst < 1e-6);
}

TEST_CASE("batchnorm") {
  std::mt19937_64 rng(10);
  const Tensor x0 = random_tensor({3, 4, 2, 2, 2}, rng, -2, 3);
  Tensor mean({4}, 0.0), var({4}, 1.0);

  SUBCASE("train mode normalizes each channel") {
    Tape t;
    Var y = batchnorm(t.constant(x0), t.constant(Tensor({4}, 1.0)), t.constant(Tensor({4}, 0.0)),
                      {&mean, &var}, Mode::train);
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0, s2 = 0;
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t k = 0; k < 8; ++k) {
          const double v = y.value()[(b * 4 + c) * 8 + k];
          s += v;
          s2 += v * v;
        }
      CHECK(std::abs(s / 24) < 1e-5);
      CHECK(s2 / 24 == doctest::Approx(1.0).epsilon(1e-5));
    }
    // running statistics moved by momentum 0.1 towards the batch statistics
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0;
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t k = 0; k < 8; ++k) s += x0[(b * 4 + c) * 8 + k];
      CHECK(mean[c] == doctest::Approx(kBatchNormMomentum * s / 24));
    }
  }

  SUBCASE("eval mode with unit statistics is the identity") {
    Tape t;
    Var y = batchnorm(t.constant(x0), t.constant(Tensor({4}, 1.0)), t.constant(Tensor({4}, 0.0)),
                      {&mean, &var}, Mode::eval);
    for (std::size_t i = 0; i < x0.size(); ++i) {
      CHECK(y.value()[i] == doctest::Approx(x0[i] / std::sqrt(1.0 + kBatchNormEps)).epsilon(1e-15));
    }
    CHECK(mean == Tensor({4}, 0.0));
    CHECK(var == Tensor({4}, 1.0));
  }

  SUBCASE("a single value per channel is rejected in train mode") {
    Tape t;
    CHECK_THROWS_AS(batchnorm(t.constant(Tensor({1, 4})), t.constant(Tensor({4}, 1.0)),
                              t.constant(Tensor({4}, 0.0)), {&mean, &var}, Mode::train),
                    std::invalid_argument);
  }

  SUBCASE("gradients") {
    const Tensor weights = random_tensor(x0.shape(), rng);
    for (Mode mode : {Mode::train, Mode::eval}) {
      Tensor m2({4}, 0.1), v2({4}, 1.3);
      auto check = check_gradients(
          [&](Tape&, std::vector<Var>& v) {
            Tensor m = m2, s = v2;  // keep the statistics fixed across evaluations
            return sum_of_weighted(batchnorm(v[0], v[1], v[2], {&m, &s}, mode), weights);
          },
          {x0, random_tensor({4}, rng, 0.5, 1.5), random_tensor({4}, rng)});
      CHECK(check.worst < 1e-5);
    }
  }
}

TEST_CASE("conv3d") {
  std::mt19937_64 rng(11);
  SUBCASE("unit 1x1x1 kernel is the identity") {
    Tape t;
    const Tensor x0 = random_tensor({1, 1, 3, 3, 3}, rng);
    Var y = conv3d(t.constant(x0), t.constant(Tensor({1, 1, 1, 1, 1}, 1.0)),
                   t.constant(Tensor({1})), {1, 1, 0});
    CHECK(y.value() == x0);
  }
  SUBCASE("all-ones kernel on a one-hot input") {
    Tensor x0({1, 1, 4, 4, 4});
    x0[(1 * 4 + 2) * 4 + 1] = 1.0;
    Tape t;
    Var y = conv3d(t.constant(x0), t.constant(Tensor({1, 1, 3, 3, 3}, 1.0)), t.constant(Tensor({1})),
                   {3, 1, 1});
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) {
          const bool near = std::abs(i - 1) <= 1 && std::abs(j - 2) <= 1 && std::abs(k - 1) <= 1;
          CHECK(y.value()[(i * 4 + j) * 4 + k] == (near ? 1.0 : 0.0));
        }
  }
  SUBCASE("matches the naive loop exactly") {
    simd::ScopedBackend scalar(simd::Backend::scalar);
    for (auto [cin, cout, d, stride] : {std::array<std::size_t, 4>{1, 1, 4, 1}, {3, 2, 5, 2}, {4, 3, 6, 2}}) {
      const Tensor x0 = random_tensor({2, cin, d, d, d}, rng);
      const Tensor w0 = random_tensor({cout, cin, 3, 3, 3}, rng);
      const Tensor b0 = random_tensor({cout}, rng);
      Tape t;
      Var y = conv3d(t.constant(x0), t.constant(w0), t.constant(b0), {3, stride, 1});
      CHECK(y.value() == naive_conv3d(x0, w0, b0, stride, 1));
    }
  }
  SUBCASE("vectorized backend stays within rounding of the naive loop") {
    const Tensor x0 = random_tensor({1, 5, 8, 8, 8}, rng);
    const Tensor w0 = random_tensor({7, 5, 3, 3, 3}, rng);
    const Tensor b0 = random_tensor({7}, rng);
    Tape t;
    Var y = conv3d(t.constant(x0), t.constant(w0), t.constant(b0), {3, 2, 1});
    const Tensor ref = naive_conv3d(x0, w0, b0, 2, 1);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.value()[i] - ref[i]) < 1e-10);
  }
  SUBCASE("gradients") {
    const Tensor weights = random_tensor({2, 2, 2, 2, 2}, rng);
    auto check = check_gradients(
        [&](Tape&, std::vector<Var>& v) { return sum_of_weighted(conv3d(v[0], v[1], v[2], {3, 2, 1}), weights); },
        {random_tensor({2, 3, 4, 4, 4}, rng), random_tensor({2, 3, 3, 3, 3}, rng),
         random_tensor({2}, rng)});
    CHECK(check.worst < 1e-6);
  }
  SUBCASE("invalid geometry reports the computed extent") {
    CHECK_THROWS_WITH_AS(conv_output_extent(2, {5, 1, 0}), doctest::Contains("-2"),
                         std::invalid_argument);
    CHECK_THROWS_AS(conv_output_extent(8, {4, 1, 1}), std::invalid_argument);
    CHECK(conv_output_extent(32, {3, 2, 1}) == 16);
  }
}

TEST_CASE("grid_sample") {
  std::mt19937_64 rng(12);
  SUBCASE("constant grid") {
    Tape t;
    Var coords = t.input(random_tensor({20, 3}, rng, -0.6, 0.6));
    Var y = grid_sample(t.constant(Tensor({2, 4, 4, 4}, 3.25)), coords);
    for (double v : y.value().values()) CHECK(v == doctest::Approx(3.25).epsilon(1e-15));
    t.backward(sum(y));
    for (double g : t.grad(coords).values()) CHECK(std::abs(g) < 1e-12);
  }
  SUBCASE("linear field is reproduced exactly") {
    const std::size_t g = 5;
    Tensor grid({1, g, g, g});
    for (std::size_t i = 0; i < g; ++i)
      for (std::size_t j = 0; j < g; ++j)
        for (std::size_t k = 0; k < g; ++k) grid[(i * g + j) * g + k] = double(i) / double(g - 1) - 0.5;
    Tape t;
    const Tensor c0 = random_tensor({50, 3}, rng, -0.5, 0.5);
    Var coords = t.input(c0);
    Var y = grid_sample(t.constant(grid), coords);
    for (std::size_t k = 0; k < 50; ++k) CHECK(y.value()[k] == doctest::Approx(c0[3 * k]).epsilon(1e-14));
    t.backward(sum(y));
    for (std::size_t k = 0; k < 50; ++k) {
      CHECK(t.grad(coords)[3 * k] == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(std::abs(t.grad(coords)[3 * k + 1]) < 1e-12);
    }
  }
  SUBCASE("clamped axes carry no gradient") {
    Tape t;
    Var coords = t.input(Tensor({1, 3}, {0.7, 0.1, -0.9}));
    t.backward(sum(grid_sample(t.constant(random_tensor({1, 3, 3, 3}, rng)), coords)));
    CHECK(t.grad(coords)[0] == 0.0);
    CHECK(t.grad(coords)[2] == 0.0);
  }
  SUBCASE("non-finite coordinates are rejected") {
    Tape t;
    CHECK_THROWS_AS(grid_sample(t.constant(Tensor({1, 2, 2, 2})), t.constant(Tensor({1, 3}, NAN))),
                    std::domain_error);
  }
  SUBCASE("gradients for grid values and coordinates") {
    const Tensor weights = random_tensor({6, 3}, rng);
    auto check = check_gradients(
        [&](Tape&, std::vector<Var>& v) { return sum_of_weighted(grid_sample(v[0], v[1]), weights); },
        {random_tensor({3, 4, 4, 4}, rng), random_tensor({6, 3}, rng, -0.45, 0.45)});
    CHECK(check.worst < 1e-5);
  }
}

TEST_CASE("scatter_mean and neighborhood") {
  Tape t;
  Var f = t.input(Tensor({3, 2}, {1, 2, 3, 4, 10, 20}));
  const std::vector<std::size_t> cells{5, 5, 0};
  Var y = scatter_mean(f, cells, 2);
  CHECK(y.value()[5] == 1.0);
  CHECK(y.value()[0] == 1.0);
  CHECK(y.value()[1] == 0.0);
  CHECK(y.value()[8 + 5] == 2.0);
  CHECK(y.value()[16 + 5] == 3.0);
  CHECK(y.value()[8 + 0] == 10.0);

  Var n = neighborhood(t.constant(Tensor({1, 3}, {0, 0, 0})), 0.1);
  const std::vector<double> expected{0, 0, 0, 0.1, 0, 0, -0.1, 0, 0, 0, 0.1, 0, 0, -0.1, 0, 0, 0, 0.1, 0, 0, -0.1};
  CHECK(n.value() == Tensor({7, 3}, expected));
}

TEST_CASE("clamped_l1") {
  Tape t;
  Var p = t.input(Tensor({3}, {0.05, 0.5, 0.02}));
  Var y = clamped_l1(p, std::vector<double>{0.0, 0.0, 0.08}, 0.1);
  CHECK(y.value()[0] == doctest::Approx(0.05 + 0.1 + 0.06));
  t.backward(y);
  CHECK(t.grad(p) == Tensor({3}, {1.0, 0.0, -1.0}));
}

TEST_CASE("tape rules") {
  Tape t;
  Var x = t.input(Tensor({1}, {1.0}));
  Var y = sum(x);
  t.backward(y);
  CHECK_THROWS_AS(t.backward(y), std::logic_error);
  CHECK_THROWS_AS(t.record(Tensor({1}), false, nullptr), std::logic_error);

  Tape t2;
  CHECK_THROWS_AS(t2.record(Tensor({1}, {INFINITY}), false, nullptr), std::domain_error);
  Var big = t2.constant(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(t2.backward(big), std::invalid_argument);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterStore store;
    store.add("w", Tensor({2}, {1.0, -2.0}));
    Tape t;
    Var w = t.parameter(store, "w");
    t.backward(sum(dense(reshape(w, {1, 2}), t.constant(Tensor({2, 1})), t.constant(Tensor({1})))));
    adam_step(store, {});
    CHECK(store.at("w").value == Tensor({2}, {1.0, -2.0}));
    CHECK(store.step() == 1);
  }
  SUBCASE("first step with a constant unit gradient moves by lr") {
    ParameterStore store;
    store.add("x", Tensor({1}, {0.0}));
    Tape t;
    t.backward(sum(t.parameter(store, "x")));
    adam_step(store, {0.1});
    // m = 0.1, v = 0.001; bias-corrected m/(sqrt(v)+eps) = 1/(1 + 1e-8)
    CHECK(store.at("x").value[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(store.at("x").grad == Tensor({1}, {0.0}));
  }
  SUBCASE("missing gradient is an error") {
    ParameterStore store;
    store.add("x", Tensor({1}, {0.0}));
    CHECK_THROWS_AS(adam_step(store, {}), std::logic_error);
  }
  SUBCASE("quadratic bowl") {
    ParameterStore store;
    store.add("x", Tensor({3}, {1.0, -2.0, 0.5}));
    for (int step = 0; step < 500; ++step) {
      Tape t;
      Var x = t.parameter(store, "x");
      Var row = reshape(x, {1, 3});
      Var col = reshape(x, {3, 1});
      t.backward(sum(dense(row, col, t.constant(Tensor({1})))));
      adam_step(store, {0.05});
    }
    for (double v : store.at("x").value.values()) CHECK(std::abs(v) < 1e-3);
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  std::mt19937_64 rng(13);
  Checkpoint ck;
  ck.header = {{"model.resolution", "32"}, {"note", "with spaces = and equals"}};
  ck.store.add("a.weight", random_tensor({3, 4}, rng)).first_moment = random_tensor({3, 4}, rng);
  ck.store.at("a.weight").second_moment = random_tensor({3, 4}, rng, 0, 1);
  ck.store.add("b", Tensor({1}, {std::nextafter(1.0, 2.0)}));
  ck.store.add_buffer("bn.running_var", Tensor({2}, {1e-300, -0.0}));
  ck.store.set_step(12345);
  const auto path = std::filesystem::temp_directory_path() / "pvudf_test_ckpt.bin";
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.header == ck.header);
  CHECK(back.store == ck.store);
  CHECK(std::signbit(back.store.buffer("bn.running_var")[1]));

  SUBCASE("corruption is detected") {
    const auto bad = std::filesystem::temp_directory_path() / "pvudf_test_ckpt_bad.bin";
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(bad, std::ios::binary) << bytes.substr(0, bytes.size() - 5);
    CHECK_THROWS(load_checkpoint(bad));
    std::ofstream(bad, std::ios::binary) << "NOTACKPT" << bytes.substr(8);
    CHECK_THROWS(load_checkpoint(bad));
    std::filesystem::remove(bad);
  }
  std::filesystem::remove(path);
}
