#include "pvudf/config/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "pvudf/geometry/io.hpp"

namespace pvudf {
namespace {

Vec3 to_vec3(const std::string& context, const std::string& text) {
  const std::vector<double> v = fields::to_real_list(context, text);
  if (v.size() != 3) throw ConfigError(context + ": expected three comma-separated numbers");
  return {v[0], v[1], v[2]};
}

class ParamReader {
 public:
  explicit ParamReader(const ShapeSpec& spec) : spec_(spec) {}

  double real(const std::string& key, double fallback) {
    used_.push_back(key);
    auto it = spec_.params.find(key);
    return it == spec_.params.end() ? fallback : fields::to_real(context(key), it->second);
  }
  Vec3 vec(const std::string& key, Vec3 fallback) {
    used_.push_back(key);
    auto it = spec_.params.find(key);
    return it == spec_.params.end() ? fallback : to_vec3(context(key), it->second);
  }
  std::string text(const std::string& key) {
    used_.push_back(key);
    auto it = spec_.params.find(key);
    if (it == spec_.params.end()) throw ConfigError(context(key) + ": required");
    return it->second;
  }
  std::size_t size(const std::string& key, std::size_t fallback) {
    used_.push_back(key);
    auto it = spec_.params.find(key);
    return it == spec_.params.end() ? fallback : fields::to_size(context(key), it->second);
  }
  void finish() const {
    for (const auto& [key, value] : spec_.params) {
      if (std::find(used_.begin(), used_.end(), key) == used_.end()) {
        throw ConfigError("shape '" + spec_.name + "': unknown key '" + key + "' for type " + spec_.type);
      }
    }
  }

 private:
  std::string context(const std::string& key) const { return "shape '" + spec_.name + "': " + key; }
  const ShapeSpec& spec_;
  std::vector<std::string> used_;
};

template <typename F>
auto as_config_error(F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void check_samples_spec(const ShapeSpec& spec) {
  ParamReader r(spec);
  r.text("path");
  r.size("samples", 100000);
  r.finish();
}

void validate_shape(const ShapeSpec& spec) {
  if (spec.type == "samples") {
    check_samples_spec(spec);
  } else {
    analytic_shape(spec);
  }
}

void write_section(std::ostream& out, const std::string& name, const fields::Fields& entries) {
  out << "[" << name << "]\n";
  for (const auto& [k, v] : entries) out << k << " = " << v << "\n";
  out << "\n";
}

}  // namespace

AnalyticShape analytic_shape(const ShapeSpec& spec) {
  return as_config_error([&]() -> AnalyticShape {
    ParamReader r(spec);
    AnalyticShape shape;
    if (spec.type == "sphere") {
      shape = Sphere{r.vec("center", {}), r.real("radius", 1.0)};
    } else if (spec.type == "hemisphere") {
      shape = OpenHemisphere{r.vec("center", {}), r.real("radius", 1.0), r.vec("axis", {0, 0, 1})};
    } else if (spec.type == "plane") {
      shape = PlanePatch{r.vec("origin", {}), r.vec("u_axis", {1, 0, 0}), r.vec("v_axis", {0, 1, 0}),
                         r.real("half_u", 1.0), r.real("half_v", 1.0)};
    } else if (spec.type == "box") {
      shape = BoxShell{r.vec("center", {}), r.vec("half_extents", {1, 1, 1})};
    } else if (spec.type == "samples") {
      throw ConfigError("shape '" + spec.name + "' is file-backed, not analytic");
    } else {
      throw ConfigError("shape '" + spec.name + "': unknown type '" + spec.type +
                        "' (expected sphere, hemisphere, plane, box, or samples)");
    }
    r.finish();
    validate(shape);
    return shape;
  });
}

TrainingShape training_shape(const ShapeSpec& spec, std::uint64_t seed) {
  if (spec.type != "samples") return {spec.name, analytic_shape(spec)};
  check_samples_spec(spec);
  ParamReader r(spec);
  const std::filesystem::path path = r.text("path");
  return {spec.name, read_point_cloud(path, r.size("samples", 100000), seed)};
}

ShapeSpec parse_shape_spec(const std::string& text) {
  std::istringstream in(text);
  ShapeSpec spec;
  if (!(in >> spec.type)) throw ConfigError("shape spec is empty");
  spec.name = spec.type;
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("shape spec: expected key=value, got '" + token + "'");
    }
    const std::string key = token.substr(0, eq);
    if (key == "name") {
      spec.name = token.substr(eq + 1);
    } else if (!spec.params.emplace(key, token.substr(eq + 1)).second) {
      throw ConfigError("shape spec: duplicate key '" + key + "'");
    }
  }
  validate_shape(spec);
  return spec;
}

RunConfig parse_run_config(const std::string& text) {
  fields::Fields model, train, inference, metrics, output;
  std::vector<ShapeSpec> shapes;
  fields::Fields* current = nullptr;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  auto where = [&] { return "config line " + std::to_string(line_no) + ": "; };

  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw.substr(0, raw.find('#'));
    line = fields::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where() + "malformed section header '" + line + "'");
      section = fields::trim(line.substr(1, line.size() - 2));
      if (section == "model") current = &model;
      else if (section == "train") current = &train;
      else if (section == "inference") current = &inference;
      else if (section == "metrics") current = &metrics;
      else if (section == "output") current = &output;
      else if (section == "shape") {
        shapes.emplace_back();
        current = &shapes.back().params;
      } else {
        throw ConfigError(where() + "unknown section [" + section + "]");
      }
      continue;
    }
    if (!current) throw ConfigError(where() + "key outside of any section");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where() + "expected key = value");
    const std::string key = fields::trim(line.substr(0, eq));
    const std::string value = fields::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where() + "empty key");
    if (section == "shape" && (key == "name" || key == "type")) {
      std::string& slot = key == "name" ? shapes.back().name : shapes.back().type;
      if (!slot.empty()) throw ConfigError(where() + "duplicate key '" + key + "'");
      slot = value;
      continue;
    }
    if (!current->emplace(key, value).second) throw ConfigError(where() + "duplicate key '" + key + "'");
  }

  RunConfig c;
  as_config_error([&] {
    c.model = ModelConfig::from_fields(model);
    c.train = TrainConfig::from_fields(train);
    c.inference = InferenceConfig::from_fields(inference);
    return 0;
  });
  for (const auto& [key, value] : metrics) {
    const std::string ctx = "metrics: " + key;
    if (key == "thresholds") {
      c.metrics.thresholds = as_config_error([&] { return fields::to_real_list(ctx, value); });
      for (double t : c.metrics.thresholds) {
        if (!(t > 0.0)) throw ConfigError(ctx + ": thresholds must be positive");
      }
    } else if (key == "diagonal") {
      c.metrics.diagonal = as_config_error([&] { return fields::to_real(ctx, value); });
      if (c.metrics.diagonal < 0.0) throw ConfigError(ctx + ": must be non-negative");
    } else {
      throw ConfigError("metrics: unknown key '" + key + "'");
    }
  }
  for (const auto& [key, value] : output) {
    if (key == "dir") {
      if (value.empty()) throw ConfigError("output: dir must not be empty");
      c.output_dir = value;
    } else {
      throw ConfigError("output: unknown key '" + key + "'");
    }
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    ShapeSpec& s = shapes[i];
    if (s.type.empty()) throw ConfigError("shape " + std::to_string(i + 1) + ": missing type");
    if (s.name.empty()) s.name = s.type + std::to_string(i + 1);
    for (std::size_t j = 0; j < i; ++j) {
      if (shapes[j].name == s.name) throw ConfigError("duplicate shape name '" + s.name + "'");
    }
    validate_shape(s);
  }
  c.shapes = std::move(shapes);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str());
}

std::string dump_run_config(const RunConfig& c) {
  std::ostringstream out;
  write_section(out, "model", c.model.to_fields());
  write_section(out, "train", c.train.to_fields());
  write_section(out, "inference", c.inference.to_fields());
  write_section(out, "metrics", {{"thresholds", fields::format(c.metrics.thresholds)},
                                 {"diagonal", fields::format(c.metrics.diagonal)}});
  write_section(out, "output", {{"dir", c.output_dir.string()}});
  for (const ShapeSpec& s : c.shapes) {
    out << "[shape]\nname = " << s.name << "\ntype = " << s.type << "\n";
    for (const auto& [k, v] : s.params) out << k << " = " << v << "\n";
    out << "\n";
  }
  return out.str();
}

}  // namespace pvudf
