#include "pvudf/model/architecture.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "pvudf/config/fields.hpp"
#include "pvudf/random.hpp"

namespace pvudf {
namespace {

[[noreturn]] void config_error(const std::string& detail) {
  throw std::invalid_argument("model config: " + detail);
}

void check_positive(const std::string& key, const std::vector<std::size_t>& values) {
  for (std::size_t v : values) {
    if (v == 0) config_error(key + " entries must be positive");
  }
}

nn::Tensor uniform(nn::Shape shape, double bound, Rng& rng) {
  nn::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

struct Expected {
  std::map<std::string, nn::Shape> params;
  std::map<std::string, nn::Shape> buffers;
};

Expected expected_layout(const ModelConfig& c) {
  Expected e;
  std::size_t in = 3;
  for (std::size_t i = 0; i < c.point_widths.size(); ++i) {
    const std::string p = "point." + std::to_string(i);
    e.params[p + ".weight"] = {in, c.point_widths[i]};
    e.params[p + ".bias"] = {c.point_widths[i]};
    in = c.point_widths[i];
  }
  in = c.fused_channels();
  for (std::size_t i = 0; i < c.voxel_channels.size(); ++i) {
    const std::string p = "voxel." + std::to_string(i);
    const std::size_t out = c.voxel_channels[i];
    e.params[p + ".conv.weight"] = {out, in, 3, 3, 3};
    e.params[p + ".conv.bias"] = {out};
    e.params[p + ".bn.gamma"] = {out};
    e.params[p + ".bn.beta"] = {out};
    e.buffers[p + ".bn.running_mean"] = {out};
    e.buffers[p + ".bn.running_var"] = {out};
    in = out;
  }
  in = c.feature_width();
  for (std::size_t i = 0; i <= c.decoder_widths.size(); ++i) {
    const std::string p = "decoder." + std::to_string(i);
    const std::size_t out = i < c.decoder_widths.size() ? c.decoder_widths[i] : 1;
    e.params[p + ".weight"] = {in, out};
    e.params[p + ".bias"] = {out};
    in = out;
  }
  return e;
}

}  // namespace

void ModelConfig::validate() const {
  if (resolution < 2) config_error("resolution must be at least 2, got " + std::to_string(resolution));
  if (point_widths.size() < 2) config_error("point encoder needs at least two layers");
  check_positive("point_widths", point_widths);
  if (voxel_channels.empty()) config_error("voxel encoder needs at least one stage");
  check_positive("voxel_channels", voxel_channels);
  if (voxel_strides.size() != voxel_channels.size()) {
    config_error("voxel_strides has " + std::to_string(voxel_strides.size()) +
                 " entries but voxel_channels has " + std::to_string(voxel_channels.size()));
  }
  std::size_t extent = resolution;
  std::size_t cumulative = 1;
  for (std::size_t i = 0; i < voxel_strides.size(); ++i) {
    const std::size_t s = voxel_strides[i];
    if (s < 2) config_error("voxel stride " + std::to_string(i) + " must be at least 2 so grids shrink");
    cumulative *= s;
    if (extent % s != 0) {
      config_error("resolution " + std::to_string(resolution) +
                   " is not divisible by the cumulative voxel stride " + std::to_string(cumulative) +
                   " at stage " + std::to_string(i));
    }
    extent /= s;
  }
  if (extent < 2) {
    config_error("coarsest grid would be " + std::to_string(extent) + "^3; it must be at least 2^3");
  }
  check_positive("decoder_widths", decoder_widths);
  if (!std::isfinite(neighborhood) || neighborhood < 0.0) {
    config_error("neighborhood must be finite and non-negative (0 selects 1/M)");
  }
}

std::vector<std::size_t> ModelConfig::grid_resolutions() const {
  std::vector<std::size_t> out;
  std::size_t extent = resolution;
  for (std::size_t s : voxel_strides) {
    extent /= s;
    out.push_back(extent);
  }
  return out;
}

std::size_t ModelConfig::feature_width() const {
  std::size_t sampled = 1;  // occupancy
  for (std::size_t c : voxel_channels) sampled += c;
  return global_width() + 7 * sampled;
}

double ModelConfig::neighborhood_distance() const {
  return neighborhood > 0.0 ? neighborhood : 1.0 / static_cast<double>(resolution);
}

std::map<std::string, std::string> ModelConfig::to_fields() const {
  return {{"resolution", std::to_string(resolution)},
          {"point_widths", fields::format(point_widths)},
          {"voxel_channels", fields::format(voxel_channels)},
          {"voxel_strides", fields::format(voxel_strides)},
          {"decoder_widths", fields::format(decoder_widths)},
          {"neighborhood", fields::format(neighborhood)}};
}

ModelConfig ModelConfig::from_fields(const std::map<std::string, std::string>& entries) {
  ModelConfig c;
  for (const auto& [key, value] : entries) {
    const std::string ctx = "model config: " + key;
    if (key == "resolution") {
      c.resolution = fields::to_size(ctx, value);
    } else if (key == "point_widths") {
      c.point_widths = fields::to_size_list(ctx, value);
    } else if (key == "voxel_channels") {
      c.voxel_channels = fields::to_size_list(ctx, value);
    } else if (key == "voxel_strides") {
      c.voxel_strides = fields::to_size_list(ctx, value);
    } else if (key == "decoder_widths") {
      c.decoder_widths = fields::to_size_list(ctx, value);
    } else if (key == "neighborhood") {
      c.neighborhood = fields::to_real(ctx, value);
    } else {
      config_error("unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

nn::ParameterStore initialize_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  nn::ParameterStore store;
  Rng rng = make_rng(seed, {0x1417});

  std::size_t in = 3;
  for (std::size_t i = 0; i < config.point_widths.size(); ++i) {
    const std::string p = "point." + std::to_string(i);
    const std::size_t out = config.point_widths[i];
    const bool last = i + 1 == config.point_widths.size();
    const double bound = std::sqrt((last ? 3.0 : 6.0) / static_cast<double>(in));
    store.add(p + ".weight", uniform({in, out}, bound, rng));
    store.add(p + ".bias", nn::Tensor({out}));
    in = out;
  }

  in = config.fused_channels();
  for (std::size_t i = 0; i < config.voxel_channels.size(); ++i) {
    const std::string p = "voxel." + std::to_string(i);
    const std::size_t out = config.voxel_channels[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(in * 27));
    store.add(p + ".conv.weight", uniform({out, in, 3, 3, 3}, bound, rng));
    store.add(p + ".conv.bias", nn::Tensor({out}));
    store.add(p + ".bn.gamma", nn::Tensor({out}, 1.0));
    store.add(p + ".bn.beta", nn::Tensor({out}));
    store.add_buffer(p + ".bn.running_mean", nn::Tensor({out}));
    store.add_buffer(p + ".bn.running_var", nn::Tensor({out}, 1.0));
    in = out;
  }

  in = config.feature_width();
  for (std::size_t i = 0; i <= config.decoder_widths.size(); ++i) {
    const std::string p = "decoder." + std::to_string(i);
    const bool last = i == config.decoder_widths.size();
    const std::size_t out = last ? 1 : config.decoder_widths[i];
    const double bound = last ? 0.1 * std::sqrt(3.0 / static_cast<double>(in))
                              : std::sqrt(6.0 / static_cast<double>(in));
    store.add(p + ".weight", uniform({in, out}, bound, rng));
    store.add(p + ".bias", nn::Tensor({out}, last ? std::log(std::expm1(kInitialDistance)) : 0.0));
    in = out;
  }
  return store;
}

void check_parameters(const ModelConfig& config, const nn::ParameterStore& store) {
  const Expected e = expected_layout(config);
  auto fail = [](const std::string& detail) {
    throw std::invalid_argument("parameters do not match the architecture: " + detail);
  };
  if (store.parameters().size() != e.params.size()) {
    fail("expected " + std::to_string(e.params.size()) + " parameters, found " +
         std::to_string(store.parameters().size()));
  }
  if (store.buffers().size() != e.buffers.size()) {
    fail("expected " + std::to_string(e.buffers.size()) + " buffers, found " +
         std::to_string(store.buffers().size()));
  }
  for (const auto& [name, shape] : e.params) {
    if (!store.contains(name)) fail("missing parameter " + name);
    const auto& have = store.at(name).value.shape();
    if (have != shape) fail(name + " has shape " + nn::to_string(have) + ", expected " + nn::to_string(shape));
  }
  for (const auto& [name, shape] : e.buffers) {
    if (!store.buffers().count(name)) fail("missing buffer " + name);
    const auto& have = store.buffer(name).shape();
    if (have != shape) fail(name + " has shape " + nn::to_string(have) + ", expected " + nn::to_string(shape));
  }
}

Weights Weights::trainable(nn::Tape& tape, nn::ParameterStore& store) {
  return Weights(tape, &store, store);
}

Weights Weights::frozen(nn::Tape& tape, const nn::ParameterStore& store) {
  return Weights(tape, nullptr, store);
}

nn::Var Weights::get(const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  nn::Var v = mutable_store_ ? tape_->parameter(*mutable_store_, name)
                             : tape_->constant_ref(store_->at(name).value);
  cache_.emplace(name, v);
  return v;
}

nn::Var Weights::batchnorm(nn::Var x, const std::string& prefix, nn::Mode mode) {
  nn::Var gamma = get(prefix + ".gamma");
  nn::Var beta = get(prefix + ".beta");
  if (mode == nn::Mode::train) {
    if (!mutable_store_) throw std::logic_error("batchnorm: frozen weights cannot run in train mode");
    return nn::batchnorm(x, gamma, beta,
                         {&mutable_store_->buffer(prefix + ".running_mean"),
                          &mutable_store_->buffer(prefix + ".running_var")},
                         nn::Mode::train);
  }
  return nn::batchnorm_eval(x, gamma, beta, store_->buffer(prefix + ".running_mean"),
                            store_->buffer(prefix + ".running_var"));
}

}  // namespace pvudf
