#include "pvudf/geometry/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "pvudf/random.hpp"

namespace pvudf {
namespace {

std::runtime_error io_error(const std::filesystem::path& path, const std::string& what) {
  return std::runtime_error(path.string() + ": " + what);
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw io_error(path, "cannot open for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw io_error(path, "cannot open for writing");
  return out;
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

// Shortest decimal that round-trips exactly.
std::string format_double(double v) {
  char buffer[32];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, v);
  return std::string(buffer, result.ptr);
}

enum class PlyType { int8, uint8, int16, uint16, int32, uint32, float32, float64 };

PlyType parse_ply_type(const std::string& name, const std::filesystem::path& path) {
  if (name == "char" || name == "int8") return PlyType::int8;
  if (name == "uchar" || name == "uint8") return PlyType::uint8;
  if (name == "short" || name == "int16") return PlyType::int16;
  if (name == "ushort" || name == "uint16") return PlyType::uint16;
  if (name == "int" || name == "int32") return PlyType::int32;
  if (name == "uint" || name == "uint32") return PlyType::uint32;
  if (name == "float" || name == "float32") return PlyType::float32;
  if (name == "double" || name == "float64") return PlyType::float64;
  throw io_error(path, "unknown PLY scalar type '" + name + "'");
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::int8: case PlyType::uint8: return 1;
    case PlyType::int16: case PlyType::uint16: return 2;
    case PlyType::int32: case PlyType::uint32: case PlyType::float32: return 4;
    case PlyType::float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::float32;
  bool is_list = false;
  PlyType count_type = PlyType::uint8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

template <class T>
T load_scalar(const char* bytes, bool swap) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, bytes, sizeof(T));
  if (swap) std::reverse(tmp, tmp + sizeof(T));
  T value;
  std::memcpy(&value, tmp, sizeof(T));
  return value;
}

double decode(PlyType t, const char* bytes, bool swap) {
  switch (t) {
    case PlyType::int8: return load_scalar<std::int8_t>(bytes, swap);
    case PlyType::uint8: return load_scalar<std::uint8_t>(bytes, swap);
    case PlyType::int16: return load_scalar<std::int16_t>(bytes, swap);
    case PlyType::uint16: return load_scalar<std::uint16_t>(bytes, swap);
    case PlyType::int32: return load_scalar<std::int32_t>(bytes, swap);
    case PlyType::uint32: return load_scalar<std::uint32_t>(bytes, swap);
    case PlyType::float32: return load_scalar<float>(bytes, swap);
    case PlyType::float64: return load_scalar<double>(bytes, swap);
  }
  return 0.0;
}

}  // namespace

PointCloud read_xyz(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  PointCloud cloud;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    Vec3 p;
    if (!(fields >> p.x >> p.y >> p.z)) {
      throw io_error(path, "line " + std::to_string(line_number) + ": expected three coordinates");
    }
    cloud.push_back(p);
  }
  return cloud;
}

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out = open_out(path);
  for (const Vec3& p : cloud) {
    out << format_double(p.x) << ' ' << format_double(p.y) << ' ' << format_double(p.z) << '\n';
  }
  if (!out) throw io_error(path, "write failed");
}

PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, std::ios::in | std::ios::binary);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw io_error(path, "missing 'ply' magic");

  std::string format;
  std::vector<PlyElement> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream words(line);
    std::string keyword;
    words >> keyword;
    if (keyword == "format") {
      words >> format;
    } else if (keyword == "element") {
      PlyElement e;
      words >> e.name >> e.count;
      elements.push_back(e);
    } else if (keyword == "property") {
      if (elements.empty()) throw io_error(path, "property before any element");
      PlyProperty prop;
      std::string type;
      words >> type;
      if (type == "list") {
        std::string count_type, item_type;
        words >> count_type >> item_type >> prop.name;
        prop.is_list = true;
        prop.count_type = parse_ply_type(count_type, path);
        prop.type = parse_ply_type(item_type, path);
      } else {
        prop.type = parse_ply_type(type, path);
        words >> prop.name;
      }
      elements.back().properties.push_back(prop);
    } else if (keyword == "end_header") {
      break;
    }
  }
  const bool ascii = format == "ascii";
  const bool little = format == "binary_little_endian";
  if (!ascii && !little && format != "binary_big_endian") throw io_error(path, "unsupported PLY format '" + format + "'");
  const bool swap = !ascii && (little != (std::endian::native == std::endian::little));

  PointCloud cloud;
  for (const PlyElement& element : elements) {
    const bool is_vertex = element.name == "vertex";
    int slot[3] = {-1, -1, -1};
    if (is_vertex) {
      for (std::size_t i = 0; i < element.properties.size(); ++i) {
        const std::string& n = element.properties[i].name;
        if (n == "x") slot[0] = static_cast<int>(i);
        if (n == "y") slot[1] = static_cast<int>(i);
        if (n == "z") slot[2] = static_cast<int>(i);
      }
      if (slot[0] < 0 || slot[1] < 0 || slot[2] < 0) throw io_error(path, "vertex element lacks x/y/z");
      cloud.reserve(element.count);
    }
    for (std::size_t row = 0; row < element.count; ++row) {
      Vec3 p;
      if (ascii) {
        if (!std::getline(in, line)) throw io_error(path, "truncated ASCII body");
        std::istringstream values(line);
        for (std::size_t i = 0; i < element.properties.size(); ++i) {
          const PlyProperty& prop = element.properties[i];
          double v = 0.0;
          if (prop.is_list) {
            std::size_t n = 0;
            values >> n;
            for (std::size_t j = 0; j < n; ++j) values >> v;
          } else {
            values >> v;
          }
          if (!values) throw io_error(path, "malformed ASCII row");
          for (int a = 0; a < 3; ++a) {
            if (static_cast<int>(i) == slot[a]) p[a] = v;
          }
        }
      } else {
        for (std::size_t i = 0; i < element.properties.size(); ++i) {
          const PlyProperty& prop = element.properties[i];
          char bytes[8];
          if (prop.is_list) {
            if (!in.read(bytes, static_cast<std::streamsize>(ply_size(prop.count_type)))) {
              throw io_error(path, "truncated binary body");
            }
            const auto n = static_cast<std::size_t>(decode(prop.count_type, bytes, swap));
            in.ignore(static_cast<std::streamsize>(n * ply_size(prop.type)));
            continue;
          }
          if (!in.read(bytes, static_cast<std::streamsize>(ply_size(prop.type)))) {
            throw io_error(path, "truncated binary body");
          }
          for (int a = 0; a < 3; ++a) {
            if (static_cast<int>(i) == slot[a]) p[a] = decode(prop.type, bytes, swap);
          }
        }
      }
      if (is_vertex) cloud.push_back(p);
    }
    if (is_vertex) break;
  }
  return cloud;
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud, PlyEncoding encoding) {
  std::ofstream out = open_out(path, std::ios::out | std::ios::binary);
  out << "ply\nformat "
      << (encoding == PlyEncoding::ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\nend_header\n";
  if (encoding == PlyEncoding::ascii) {
    for (const Vec3& p : cloud) {
      out << format_double(p.x) << ' ' << format_double(p.y) << ' ' << format_double(p.z) << '\n';
    }
  } else {
    for (const Vec3& p : cloud) {
      for (int a = 0; a < 3; ++a) {
        char bytes[8];
        const double v = p[a];
        std::memcpy(bytes, &v, 8);
        if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + 8);
        out.write(bytes, 8);
      }
    }
  }
  if (!out) throw io_error(path, "write failed");
}

TriangleMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  TriangleMesh mesh;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    std::istringstream words(line);
    std::string keyword;
    words >> keyword;
    if (keyword == "v") {
      Vec3 p;
      if (!(words >> p.x >> p.y >> p.z)) {
        throw io_error(path, "line " + std::to_string(line_number) + ": malformed vertex");
      }
      mesh.vertices.push_back(p);
    } else if (keyword == "f") {
      std::vector<std::uint32_t> face;
      std::string token;
      while (words >> token) {
        const long long index = std::stoll(token.substr(0, token.find('/')));
        const long long resolved =
            index < 0 ? static_cast<long long>(mesh.vertices.size()) + index : index - 1;
        if (resolved < 0 || resolved >= static_cast<long long>(mesh.vertices.size())) {
          throw io_error(path, "line " + std::to_string(line_number) + ": face index out of range");
        }
        face.push_back(static_cast<std::uint32_t>(resolved));
      }
      for (std::size_t i = 1; i + 1 < face.size(); ++i) {
        mesh.triangles.push_back({face[0], face[i], face[i + 1]});
      }
    }
  }
  return mesh;
}

PointCloud sample_mesh(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
  if (mesh.triangles.empty()) throw std::invalid_argument("sample_mesh: mesh has no triangles");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    total += 0.5 * norm(cross(mesh.vertices[t[1]] - a, mesh.vertices[t[2]] - a));
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw std::invalid_argument("sample_mesh: mesh has zero area");
  Rng rng = make_rng(seed, {0x0b1});
  std::uniform_real_distribution<double> pick(0.0, total);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud cloud;
  cloud.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double r = pick(rng);
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
    const auto& t = mesh.triangles[std::min<std::size_t>(
        static_cast<std::size_t>(it - cumulative.begin()), mesh.triangles.size() - 1)];
    double u = unit(rng);
    double v = unit(rng);
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3& a = mesh.vertices[t[0]];
    cloud.push_back(a + (mesh.vertices[t[1]] - a) * u + (mesh.vertices[t[2]] - a) * v);
  }
  return cloud;
}

PointCloud read_point_cloud(const std::filesystem::path& path, std::size_t obj_samples,
                            std::uint64_t seed) {
  const std::string ext = lower_extension(path);
  if (ext == ".ply") return read_ply(path);
  if (ext == ".obj") return sample_mesh(read_obj(path), obj_samples, seed);
  return read_xyz(path);
}

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  if (lower_extension(path) == ".ply") {
    write_ply(path, cloud);
  } else {
    write_xyz(path, cloud);
  }
}

}  // namespace pvudf
