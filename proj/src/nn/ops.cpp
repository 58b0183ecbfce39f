#include "pvudf/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include "pvudf/nn/stencil.hpp"
#include "pvudf/simd/kernels.hpp"

namespace pvudf::nn {
namespace {

Tape& common_tape(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw std::invalid_argument("op given an unset variable");
    if (tape && &v.tape() != tape) throw std::invalid_argument("op inputs live on different tapes");
    tape = &v.tape();
  }
  return *tape;
}

Tape& common_tape(std::span<const Var> vars) {
  if (vars.empty()) throw std::invalid_argument("op needs at least one input");
  Tape* tape = &vars.front().tape();
  for (const Var& v : vars) {
    if (&v.tape() != tape) throw std::invalid_argument("op inputs live on different tapes");
  }
  return *tape;
}

bool any_requires_grad(std::initializer_list<Var> vars) {
  return std::any_of(vars.begin(), vars.end(), [](const Var& v) { return v.requires_grad(); });
}

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

std::vector<double> transpose(const double* src, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kTile = 32;
  std::vector<double> out(rows * cols);
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    const std::size_t r1 = std::min(rows, r0 + kTile);
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = src[r * cols + c];
      }
    }
  }
  return out;
}

struct ConvShape {
  std::size_t batch, in_channels, out_channels, kernel;
  std::size_t in[3], out[3];
  std::size_t stride, padding;
  std::size_t patch() const { return in_channels * kernel * kernel * kernel; }
  std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
};

// cols[(c, kd, kh, kw) x (od, oh, ow)]
void im2col(const ConvShape& s, const double* x, double* cols) {
  const std::size_t k = s.kernel;
  const std::size_t plane = s.out_volume();
  std::size_t row = 0;
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    const double* xc = x + c * s.in_volume();
    for (std::size_t kd = 0; kd < k; ++kd) {
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw, ++row) {
          double* dst = cols + row * plane;
          std::size_t col = 0;
          for (std::size_t od = 0; od < s.out[0]; ++od) {
            const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * s.stride + kd) -
                                      static_cast<std::ptrdiff_t>(s.padding);
            const bool d_ok = id >= 0 && id < static_cast<std::ptrdiff_t>(s.in[0]);
            for (std::size_t oh = 0; oh < s.out[1]; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s.stride + kh) -
                                        static_cast<std::ptrdiff_t>(s.padding);
              const bool h_ok = d_ok && ih >= 0 && ih < static_cast<std::ptrdiff_t>(s.in[1]);
              for (std::size_t ow = 0; ow < s.out[2]; ++ow, ++col) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s.stride + kw) -
                                          static_cast<std::ptrdiff_t>(s.padding);
                dst[col] = (h_ok && iw >= 0 && iw < static_cast<std::ptrdiff_t>(s.in[2]))
                               ? xc[(static_cast<std::size_t>(id) * s.in[1] +
                                     static_cast<std::size_t>(ih)) * s.in[2] +
                                    static_cast<std::size_t>(iw)]
                               : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvShape& s, const double* cols, double* gx) {
  const std::size_t k = s.kernel;
  const std::size_t plane = s.out_volume();
  std::size_t row = 0;
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    double* gc = gx + c * s.in_volume();
    for (std::size_t kd = 0; kd < k; ++kd) {
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw, ++row) {
          const double* src = cols + row * plane;
          std::size_t col = 0;
          for (std::size_t od = 0; od < s.out[0]; ++od) {
            const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * s.stride + kd) -
                                      static_cast<std::ptrdiff_t>(s.padding);
            for (std::size_t oh = 0; oh < s.out[1]; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s.stride + kh) -
                                        static_cast<std::ptrdiff_t>(s.padding);
              for (std::size_t ow = 0; ow < s.out[2]; ++ow, ++col) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s.stride + kw) -
                                          static_cast<std::ptrdiff_t>(s.padding);
                if (id < 0 || id >= static_cast<std::ptrdiff_t>(s.in[0]) || ih < 0 ||
                    ih >= static_cast<std::ptrdiff_t>(s.in[1]) || iw < 0 ||
                    iw >= static_cast<std::ptrdiff_t>(s.in[2])) {
                  continue;
                }
                gc[(static_cast<std::size_t>(id) * s.in[1] + static_cast<std::size_t>(ih)) *
                       s.in[2] +
                   static_cast<std::size_t>(iw)] += src[col];
              }
            }
          }
        }
      }
    }
  }
}

std::size_t lattice_extent(const Shape& shape, const char* op) {
  // [B x G x G x G x C] or [B x S x C] with S = G^3
  std::size_t volume = 0;
  if (shape.size() == 5) {
    if (shape[1] != shape[2] || shape[1] != shape[3]) shape_error(op, "grid must be cubic");
    volume = shape[1] * shape[2] * shape[3];
  } else if (shape.size() == 3) {
    volume = shape[1];
  } else {
    shape_error(op, "expected a [B x G x G x G x C] grid, got " + to_string(shape));
  }
  const auto g = static_cast<std::size_t>(std::llround(std::cbrt(static_cast<double>(volume))));
  if (g * g * g != volume) shape_error(op, "grid volume is not a cube");
  if (g < 2) shape_error(op, "grid extent must be at least 2");
  return g;
}

}  // namespace

Var dense(Var x, Var w, Var b) {
  Tape& tape = common_tape({x, w, b});
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != wv.dim(0) ||
      bv.dim(0) != wv.dim(1)) {
    shape_error("dense", "input " + to_string(xv.shape()) + " incompatible with weight " +
                             to_string(wv.shape()) + " and bias " + to_string(bv.shape()));
  }
  const std::size_t rows = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
  Tensor y({rows, out});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(bv.data(), out, y.data() + r * out);
  simd::gemm(rows, out, in, xv.data(), in, wv.data(), out, y.data(), out, true);

  const std::size_t self = tape.size();
  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  return tape.record(std::move(y), any_requires_grad({x, w, b}),
                     [=](Tape& t) {
                       const Tensor& gy = t.grad(self);
                       if (t.requires_grad(xi)) {
                         const auto wt = transpose(t.value(wi).data(), in, out);
                         simd::gemm(rows, in, out, gy.data(), out, wt.data(), in,
                                    t.grad(xi).data(), in, true);
                       }
                       if (t.requires_grad(wi)) {
                         const auto xt = transpose(t.value(xi).data(), rows, in);
                         simd::gemm(in, out, rows, xt.data(), rows, gy.data(), out,
                                    t.grad(wi).data(), out, true);
                       }
                       if (t.requires_grad(bi)) {
                         double* gb = t.grad(bi).data();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t o = 0; o < out; ++o) gb[o] += gy[r * out + o];
                         }
                       }
                     });
}

Var relu(Var x) {
  Tape& tape = common_tape({x});
  Tensor y = x.value();
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t self = tape.size(), xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [=](Tape& t) {
    const Tensor& xv = t.value(xi);
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += gy[i];
    }
  });
}

Var softplus(Var x) {
  Tape& tape = common_tape({x});
  Tensor y = x.value();
  for (double& v : y.values()) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  const std::size_t self = tape.size(), xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [=](Tape& t) {
    const Tensor& xv = t.value(xi);
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double sigmoid = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      gx[i] += gy[i] * sigmoid;
    }
  });
}

Var batchnorm(Var x, Var gamma, Var beta, BatchNormBuffers buffers, Mode mode) {
  Tape& tape = common_tape({x, gamma, beta});
  const Tensor& xv = x.value();
  if (xv.rank() < 2) shape_error("batchnorm", "expected [B x C x ...], got " + to_string(xv.shape()));
  const std::size_t batch = xv.dim(0), channels = xv.dim(1);
  const std::size_t spatial = xv.size() / (batch * channels);
  const std::size_t count = batch * spatial;
  if (gamma.value().size() != channels || beta.value().size() != channels) {
    shape_error("batchnorm", "scale/shift size does not match " + std::to_string(channels) +
                                 " channels");
  }
  if (!buffers.running_mean || !buffers.running_var ||
      buffers.running_mean->size() != channels || buffers.running_var->size() != channels) {
    shape_error("batchnorm", "running statistics missing or mis-sized");
  }
  const double* g = gamma.value().data();
  const double* bt = beta.value().data();
  auto at = [=](std::size_t b, std::size_t c) { return (b * channels + c) * spatial; };

  Tensor y(xv.shape());
  const std::size_t self = tape.size();
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  const bool needs_grad = any_requires_grad({x, gamma, beta});

  if (mode == Mode::train) {
    if (count < 2) {
      throw std::invalid_argument(
          "batchnorm: train mode needs at least two values per channel; got batch " +
          std::to_string(batch) + " with spatial size " + std::to_string(spatial));
    }
    std::vector<double> mean(channels, 0.0), inv_std(channels, 0.0);
    Tensor normalized(xv.shape());
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* row = xv.data() + at(b, c);
        for (std::size_t i = 0; i < spatial; ++i) s += row[i];
      }
      const double mu = s / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* row = xv.data() + at(b, c);
        for (std::size_t i = 0; i < spatial; ++i) sq += (row[i] - mu) * (row[i] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + kBatchNormEps);
      for (std::size_t b = 0; b < batch; ++b) {
        const double* row = xv.data() + at(b, c);
        double* nrow = normalized.data() + at(b, c);
        double* yrow = y.data() + at(b, c);
        for (std::size_t i = 0; i < spatial; ++i) {
          nrow[i] = (row[i] - mu) * inv_std[c];
          yrow[i] = g[c] * nrow[i] + bt[c];
        }
      }
      double& rm = (*buffers.running_mean)[c];
      double& rv = (*buffers.running_var)[c];
      rm = (1.0 - kBatchNormMomentum) * rm + kBatchNormMomentum * mu;
      rv = (1.0 - kBatchNormMomentum) * rv +
           kBatchNormMomentum * var * static_cast<double>(count) / static_cast<double>(count - 1);
    }
    return tape.record(
        std::move(y), needs_grad,
        [=, normalized = std::move(normalized), inv_std = std::move(inv_std)](Tape& t) {
          const Tensor& gy = t.grad(self);
          const double* gv = t.value(gi).data();
          for (std::size_t c = 0; c < channels; ++c) {
            double sum_dy = 0.0, sum_dy_n = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
              const double* grow = gy.data() + at(b, c);
              const double* nrow = normalized.data() + at(b, c);
              for (std::size_t i = 0; i < spatial; ++i) {
                sum_dy += grow[i];
                sum_dy_n += grow[i] * nrow[i];
              }
            }
            if (t.requires_grad(xi)) {
              double* gx = t.grad(xi).data();
              const double n = static_cast<double>(count);
              const double k = gv[c] * inv_std[c] / n;
              for (std::size_t b = 0; b < batch; ++b) {
                const double* grow = gy.data() + at(b, c);
                const double* nrow = normalized.data() + at(b, c);
                double* gxrow = gx + at(b, c);
                for (std::size_t i = 0; i < spatial; ++i) {
                  gxrow[i] += k * (n * grow[i] - sum_dy - nrow[i] * sum_dy_n);
                }
              }
            }
            if (t.requires_grad(gi)) t.grad(gi)[c] += sum_dy_n;
            if (t.requires_grad(bi)) t.grad(bi)[c] += sum_dy;
          }
        });
  }

  return batchnorm_eval(x, gamma, beta, *buffers.running_mean, *buffers.running_var);
}

Var batchnorm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                   const Tensor& running_var) {
  Tape& tape = common_tape({x, gamma, beta});
  const Tensor& xv = x.value();
  if (xv.rank() < 2) shape_error("batchnorm", "expected [B x C x ...], got " + to_string(xv.shape()));
  const std::size_t batch = xv.dim(0), channels = xv.dim(1);
  const std::size_t spatial = xv.size() / (batch * channels);
  if (gamma.value().size() != channels || beta.value().size() != channels ||
      running_mean.size() != channels || running_var.size() != channels) {
    shape_error("batchnorm", "parameters do not match " + std::to_string(channels) + " channels");
  }
  const double* g = gamma.value().data();
  const double* bt = beta.value().data();
  auto at = [=](std::size_t b, std::size_t c) { return (b * channels + c) * spatial; };
  Tensor y(xv.shape());
  const std::size_t self = tape.size();
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  const bool needs_grad = any_requires_grad({x, gamma, beta});
  std::vector<double> mean(running_mean.values().begin(), running_mean.values().end());
  std::vector<double> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    inv_std[c] = 1.0 / std::sqrt(running_var[c] + kBatchNormEps);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* row = xv.data() + at(b, c);
      double* yrow = y.data() + at(b, c);
      for (std::size_t i = 0; i < spatial; ++i) {
        yrow[i] = g[c] * ((row[i] - mean[c]) * inv_std[c]) + bt[c];
      }
    }
  }
  return tape.record(std::move(y), needs_grad,
                     [=, mean = std::move(mean), inv_std = std::move(inv_std)](Tape& t) {
                       const Tensor& gy = t.grad(self);
                       const Tensor& xv2 = t.value(xi);
                       const double* gv = t.value(gi).data();
                       for (std::size_t c = 0; c < channels; ++c) {
                         double sum_dy = 0.0, sum_dy_n = 0.0;
                         for (std::size_t b = 0; b < batch; ++b) {
                           for (std::size_t i = 0; i < spatial; ++i) {
                             const std::size_t idx = at(b, c) + i;
                             sum_dy += gy[idx];
                             sum_dy_n += gy[idx] * (xv2[idx] - mean[c]) * inv_std[c];
                             if (t.requires_grad(xi)) t.grad(xi)[idx] += gy[idx] * gv[c] * inv_std[c];
                           }
                         }
                         if (t.requires_grad(gi)) t.grad(gi)[c] += sum_dy_n;
                         if (t.requires_grad(bi)) t.grad(bi)[c] += sum_dy;
                       }
                     });
}

std::size_t conv_output_extent(std::size_t input, const Conv3dGeometry& geometry) {
  if (geometry.kernel == 0 || geometry.kernel % 2 == 0) {
    throw std::invalid_argument("conv3d: kernel size must be odd, got " +
                                std::to_string(geometry.kernel));
  }
  if (geometry.stride == 0) throw std::invalid_argument("conv3d: stride must be positive");
  const auto span = static_cast<long long>(input + 2 * geometry.padding) -
                    static_cast<long long>(geometry.kernel);
  const auto stride = static_cast<long long>(geometry.stride);
  const long long floor_div = span >= 0 ? span / stride : -((-span + stride - 1) / stride);
  const long long extent = floor_div + 1;
  if (extent <= 0) {
    throw std::invalid_argument("conv3d: invalid geometry: input " + std::to_string(input) +
                                ", kernel " + std::to_string(geometry.kernel) + ", stride " +
                                std::to_string(geometry.stride) + ", padding " +
                                std::to_string(geometry.padding) + " gives output extent " +
                                std::to_string(extent));
  }
  return static_cast<std::size_t>(extent);
}

Var conv3d(Var x, Var w, Var b, const Conv3dGeometry& geometry) {
  Tape& tape = common_tape({x, w, b});
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 5) shape_error("conv3d", "input must be [B x C x D x H x W], got " + to_string(xv.shape()));
  if (wv.rank() != 5 || wv.dim(1) != xv.dim(1) || wv.dim(2) != geometry.kernel ||
      wv.dim(3) != geometry.kernel || wv.dim(4) != geometry.kernel) {
    shape_error("conv3d", "weight " + to_string(wv.shape()) + " does not match input " +
                              to_string(xv.shape()) + " and kernel " +
                              std::to_string(geometry.kernel));
  }
  if (b.value().rank() != 1 || b.value().dim(0) != wv.dim(0)) {
    shape_error("conv3d", "bias " + to_string(b.value().shape()) + " does not match " +
                              std::to_string(wv.dim(0)) + " output channels");
  }
  ConvShape s{};
  s.batch = xv.dim(0);
  s.in_channels = xv.dim(1);
  s.out_channels = wv.dim(0);
  s.kernel = geometry.kernel;
  s.stride = geometry.stride;
  s.padding = geometry.padding;
  for (int a = 0; a < 3; ++a) {
    s.in[a] = xv.dim(2 + a);
    s.out[a] = conv_output_extent(s.in[a], geometry);
  }
  const std::size_t patch = s.patch(), plane = s.out_volume();
  Tensor y({s.batch, s.out_channels, s.out[0], s.out[1], s.out[2]});
  std::vector<double> cols(patch * plane);
  for (std::size_t bi = 0; bi < s.batch; ++bi) {
    im2col(s, xv.data() + bi * s.in_channels * s.in_volume(), cols.data());
    double* yb = y.data() + bi * s.out_channels * plane;
    for (std::size_t o = 0; o < s.out_channels; ++o) std::fill_n(yb + o * plane, plane, b.value()[o]);
    simd::gemm(s.out_channels, plane, patch, wv.data(), patch, cols.data(), plane, yb, plane, true);
  }

  const std::size_t self = tape.size(), xi = x.id(), wi = w.id(), bid = b.id();
  return tape.record(std::move(y), any_requires_grad({x, w, b}), [=](Tape& t) {
    const Tensor& gy = t.grad(self);
    const Tensor& xin = t.value(xi);
    std::vector<double> buffer(patch * plane);
    std::vector<double> wt;
    if (t.requires_grad(xi)) wt = transpose(t.value(wi).data(), s.out_channels, patch);
    for (std::size_t bi = 0; bi < s.batch; ++bi) {
      const double* gyb = gy.data() + bi * s.out_channels * plane;
      if (t.requires_grad(wi)) {
        im2col(s, xin.data() + bi * s.in_channels * s.in_volume(), buffer.data());
        const auto cols_t = transpose(buffer.data(), patch, plane);
        simd::gemm(s.out_channels, patch, plane, gyb, plane, cols_t.data(), patch,
                   t.grad(wi).data(), patch, true);
      }
      if (t.requires_grad(bid)) {
        double* gb = t.grad(bid).data();
        for (std::size_t o = 0; o < s.out_channels; ++o) {
          for (std::size_t i = 0; i < plane; ++i) gb[o] += gyb[o * plane + i];
        }
      }
      if (t.requires_grad(xi)) {
        simd::gemm(patch, plane, s.out_channels, wt.data(), s.out_channels, gyb, plane,
                   buffer.data(), plane, false);
        col2im_add(s, buffer.data(), t.grad(xi).data() + bi * s.in_channels * s.in_volume());
      }
    }
  });
}

Var grid_sample_channels_last(Var grid, std::size_t batch, Var coords) {
  Tape& tape = common_tape({grid, coords});
  const Tensor& gv = grid.value();
  const Tensor& cv = coords.value();
  const std::size_t g = lattice_extent(gv.shape(), "grid_sample");
  const std::size_t channels = gv.shape().back();
  if (batch >= gv.dim(0)) shape_error("grid_sample", "batch index out of range");
  if (cv.rank() != 2 || cv.dim(1) != 3) {
    shape_error("grid_sample", "coordinates must be [K x 3], got " + to_string(cv.shape()));
  }
  const std::size_t count = cv.dim(0);
  const std::size_t batch_offset = batch * g * g * g;
  auto row_of = [=](const Stencil& s, int corner) {
    return (batch_offset + s.node(corner, g)) * channels;
  };

  Tensor y({count, channels});
  for (std::size_t k = 0; k < count; ++k) {
    const Stencil s = make_stencil(cv.data() + 3 * k, g);
    double* out = y.data() + k * channels;
    for (int corner = 0; corner < 8; ++corner) {
      simd::axpy(channels, s.weight(corner), gv.data() + row_of(s, corner), out);
    }
  }

  const std::size_t self = tape.size(), gi = grid.id(), ci = coords.id();
  return tape.record(std::move(y), any_requires_grad({grid, coords}), [=](Tape& t) {
    const Tensor& gy = t.grad(self);
    const Tensor& grid_values = t.value(gi);
    const Tensor& coord_values = t.value(ci);
    const double scale = static_cast<double>(g - 1);
    for (std::size_t k = 0; k < count; ++k) {
      const Stencil s = make_stencil(coord_values.data() + 3 * k, g);
      const double* gk = gy.data() + k * channels;
      if (t.requires_grad(gi)) {
        double* gg = t.grad(gi).data();
        for (int corner = 0; corner < 8; ++corner) {
          simd::axpy(channels, s.weight(corner), gk, gg + row_of(s, corner));
        }
      }
      if (t.requires_grad(ci)) {
        double corner_dot[8];
        for (int corner = 0; corner < 8; ++corner) {
          corner_dot[corner] = simd::dot(channels, gk, grid_values.data() + row_of(s, corner));
        }
        double* gc = t.grad(ci).data() + 3 * k;
        for (int a = 0; a < 3; ++a) {
          if (s.clamped[a]) continue;
          double d = 0.0;
          for (int corner = 0; corner < 8; ++corner) d += s.weight_slope(corner, a) * corner_dot[corner];
          gc[a] += d * scale;
        }
      }
    }
  });
}

Var grid_sample(Var grid, Var coords) {
  const Shape& shape = grid.value().shape();
  if (shape.size() != 4 || shape[1] != shape[2] || shape[1] != shape[3]) {
    shape_error("grid_sample", "grid must be [C x G x G x G], got " + to_string(shape));
  }
  const std::size_t channels = shape[0], g = shape[1];
  Var batched = reshape(grid, {1, channels, g * g * g});
  return grid_sample_channels_last(channels_last(batched), 0, coords);
}

Var channels_last(Var x) {
  Tape& tape = common_tape({x});
  const Tensor& xv = x.value();
  if (xv.rank() < 2) shape_error("channels_last", "expected [B x C x ...], got " + to_string(xv.shape()));
  const std::size_t batch = xv.dim(0), channels = xv.dim(1);
  const std::size_t spatial = xv.size() / (batch * channels);
  Tensor y({batch, spatial, channels});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = xv.data() + b * channels * spatial;
    double* dst = y.data() + b * channels * spatial;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t s = 0; s < spatial; ++s) dst[s * channels + c] = src[c * spatial + s];
    }
  }
  const std::size_t self = tape.size(), xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [=](Tape& t) {
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* src = gy.data() + b * channels * spatial;
      double* dst = gx.data() + b * channels * spatial;
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t s = 0; s < spatial; ++s) dst[c * spatial + s] += src[s * channels + c];
      }
    }
  });
}

Var max_rows(Var x) {
  Tape& tape = common_tape({x});
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.dim(0) == 0) shape_error("max_rows", "expected non-empty [N x F], got " + to_string(xv.shape()));
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor y({1, cols});
  std::vector<std::size_t> arg(cols, 0);
  for (std::size_t c = 0; c < cols; ++c) y[c] = xv[c];
  for (std::size_t r = 1; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (xv[r * cols + c] > y[c]) {
        y[c] = xv[r * cols + c];
        arg[c] = r;
      }
    }
  }
  const std::size_t self = tape.size(), xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [=, arg = std::move(arg)](Tape& t) {
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t c = 0; c < cols; ++c) gx[arg[c] * cols + c] += gy[c];
  });
}

Var concat_columns(std::span<const Var> parts) {
  Tape& tape = common_tape(parts);
  const std::size_t rows = parts.front().value().rank() == 2 ? parts.front().value().dim(0) : 0;
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  bool needs_grad = false;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != 2 || v.dim(0) != rows) {
      shape_error("concat_columns", "part " + to_string(v.shape()) + " does not have " +
                                        std::to_string(rows) + " rows");
    }
    widths.push_back(v.dim(1));
    ids.push_back(p.id());
    total += v.dim(1);
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor y({rows, total});
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double* src = parts[i].value().data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src + r * widths[i], widths[i], y.data() + r * total + offset);
    }
    offset += widths[i];
  }
  const std::size_t self = tape.size();
  return tape.record(std::move(y), needs_grad, [=](Tape& t) {
    const Tensor& gy = t.grad(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.requires_grad(ids[i])) {
        double* gx = t.grad(ids[i]).data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* src = gy.data() + r * total + off;
          for (std::size_t c = 0; c < widths[i]; ++c) gx[r * widths[i] + c] += src[c];
        }
      }
      off += widths[i];
    }
  });
}

Var concat_batch(std::span<const Var> parts) {
  Tape& tape = common_tape(parts);
  const Shape& first = parts.front().value().shape();
  if (first.empty() || first[0] != 1) shape_error("concat_batch", "parts must have leading extent 1");
  std::vector<std::size_t> ids;
  bool needs_grad = false;
  for (const Var& p : parts) {
    if (p.value().shape() != first) {
      shape_error("concat_batch", "shape " + to_string(p.value().shape()) + " differs from " +
                                      to_string(first));
    }
    ids.push_back(p.id());
    needs_grad = needs_grad || p.requires_grad();
  }
  Shape shape = first;
  shape[0] = parts.size();
  const std::size_t each = element_count(first);
  Tensor y(shape);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy_n(parts[i].value().data(), each, y.data() + i * each);
  }
  const std::size_t self = tape.size();
  return tape.record(std::move(y), needs_grad, [=](Tape& t) {
    const Tensor& gy = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.requires_grad(ids[i])) continue;
      double* gx = t.grad(ids[i]).data();
      for (std::size_t j = 0; j < each; ++j) gx[j] += gy[i * each + j];
    }
  });
}

Var broadcast_rows(Var x, std::size_t rows) {
  Tape& tape = common_tape({x});
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.dim(0) != 1) shape_error("broadcast_rows", "expected [1 x F], got " + to_string(xv.shape()));
  const std::size_t cols = xv.dim(1);
  Tensor y({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data(), cols, y.data() + r * cols);
  const std::size_t self = tape.size(), xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [=](Tape& t) {
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[c] += gy[r * cols + c];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tape& tape = common_tape({x});
  if (element_count(shape) != x.value().size()) {
    shape_error("reshape", "cannot view " + to_string(x.value().shape()) + " as " + to_string(shape));
  }
  Tensor y = x.value().reshaped(std::move(shape));
  const std::size_t self = tape.size(), xi = x.id();
  return tape.record(std::move(y), x.requires_grad(), [=](Tape& t) {
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var add(std::span<const Var> parts) {
  Tape& tape = common_tape(parts);
  Tensor y = parts.front().value();
  std::vector<std::size_t> ids{parts.front().id()};
  bool needs_grad = parts.front().requires_grad();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Tensor& v = parts[i].value();
    if (v.shape() != y.shape()) shape_error("add", to_string(v.shape()) + " vs " + to_string(y.shape()));
    for (std::size_t j = 0; j < v.size(); ++j) y[j] += v[j];
    ids.push_back(parts[i].id());
    needs_grad = needs_grad || parts[i].requires_grad();
  }
  const std::size_t self = tape.size();
  return tape.record(std::move(y), needs_grad, [=](Tape& t) {
    const Tensor& gy = t.grad(self);
    for (std::size_t id : ids) {
      if (!t.requires_grad(id)) continue;
      Tensor& gx = t.grad(id);
      for (std::size_t j = 0; j < gy.size(); ++j) gx[j] += gy[j];
    }
  });
}

Var sum(Var x) {
  Tape& tape = common_tape({x});
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const std::size_t self = tape.size(), xi = x.id();
  return tape.record(Tensor({1}, {total}), x.requires_grad(), [=](Tape& t) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(xi).values()) v += g;
  });
}

Var neighborhood(Var coords, double distance) {
  Tape& tape = common_tape({coords});
  const Tensor& cv = coords.value();
  if (cv.rank() != 2 || cv.dim(1) != 3) {
    shape_error("neighborhood", "coordinates must be [K x 3], got " + to_string(cv.shape()));
  }
  const std::size_t count = cv.dim(0);
  Tensor y({7 * count, 3});
  for (std::size_t k = 0; k < count; ++k) {
    const double* p = cv.data() + 3 * k;
    double* out = y.data() + 21 * k;
    for (int o = 0; o < 7; ++o) std::copy_n(p, 3, out + 3 * o);
    for (int axis = 0; axis < 3; ++axis) {
      out[3 * (1 + 2 * axis) + axis] += distance;
      out[3 * (2 + 2 * axis) + axis] -= distance;
    }
  }
  const std::size_t self = tape.size(), xi = coords.id();
  return tape.record(std::move(y), coords.requires_grad(), [=](Tape& t) {
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t k = 0; k < count; ++k) {
      for (int o = 0; o < 7; ++o) {
        for (int a = 0; a < 3; ++a) gx[3 * k + a] += gy[21 * k + 3 * o + a];
      }
    }
  });
}

Var scatter_mean(Var features, std::span<const std::size_t> cells, std::size_t resolution) {
  Tape& tape = common_tape({features});
  const Tensor& fv = features.value();
  if (fv.rank() != 2 || fv.dim(0) != cells.size()) {
    shape_error("scatter_mean", "features " + to_string(fv.shape()) + " not aligned with " +
                                    std::to_string(cells.size()) + " cell indices");
  }
  const std::size_t volume = resolution * resolution * resolution;
  const std::size_t width = fv.dim(1);
  std::vector<std::size_t> counts(volume, 0);
  for (std::size_t cell : cells) {
    if (cell >= volume) shape_error("scatter_mean", "cell index outside the " + std::to_string(resolution) + "^3 grid");
    ++counts[cell];
  }
  Tensor y({1, 1 + width, resolution, resolution, resolution});
  for (std::size_t n = 0; n < cells.size(); ++n) {
    for (std::size_t f = 0; f < width; ++f) y[(1 + f) * volume + cells[n]] += fv[n * width + f];
  }
  for (std::size_t cell = 0; cell < volume; ++cell) {
    if (counts[cell] == 0) continue;
    y[cell] = 1.0;
    const double inv = 1.0 / static_cast<double>(counts[cell]);
    for (std::size_t f = 0; f < width; ++f) y[(1 + f) * volume + cell] *= inv;
  }
  const std::size_t self = tape.size(), fi = features.id();
  std::vector<std::size_t> cell_copy(cells.begin(), cells.end());
  return tape.record(std::move(y), features.requires_grad(),
                     [=, cells = std::move(cell_copy), counts = std::move(counts)](Tape& t) {
                       const Tensor& gy = t.grad(self);
                       Tensor& gx = t.grad(fi);
                       for (std::size_t n = 0; n < cells.size(); ++n) {
                         const double inv = 1.0 / static_cast<double>(counts[cells[n]]);
                         for (std::size_t f = 0; f < width; ++f) {
                           gx[n * width + f] += gy[(1 + f) * volume + cells[n]] * inv;
                         }
                       }
                     });
}

Var clamped_l1(Var pred, std::span<const double> target, double delta) {
  Tape& tape = common_tape({pred});
  const Tensor& pv = pred.value();
  if (pv.size() != target.size()) {
    throw std::invalid_argument("clamped_l1: " + std::to_string(pv.size()) + " predictions vs " +
                                std::to_string(target.size()) + " targets");
  }
  double total = 0.0;
  std::vector<double> slope(pv.size(), 0.0);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double diff = std::min(pv[i], delta) - std::min(target[i], delta);
    total += std::abs(diff);
    if (pv[i] < delta) slope[i] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
  }
  const std::size_t self = tape.size(), pi = pred.id();
  return tape.record(Tensor({1}, {total}), pred.requires_grad(),
                     [=, slope = std::move(slope)](Tape& t) {
                       const double g = t.grad(self)[0];
                       Tensor& gp = t.grad(pi);
                       for (std::size_t i = 0; i < slope.size(); ++i) gp[i] += g * slope[i];
                     });
}

}  // namespace pvudf::nn
