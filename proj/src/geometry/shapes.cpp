#include "pvudf/geometry/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "pvudf/random.hpp"

namespace pvudf {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

constexpr double kUnitTolerance = 1e-9;

bool is_unit(const Vec3& v) { return std::abs(norm(v) - 1.0) < kUnitTolerance; }

Vec3 plane_normal(const PlanePatch& p) { return cross(p.u_axis, p.v_axis); }

// Lexicographically lowest point of the unit circle orthogonal to `axis`.
Vec3 lowest_on_circle(const Vec3& axis) {
  const Vec3 basis[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (const Vec3& e : basis) {
    const Vec3 in_plane = e - axis * dot(e, axis);
    const double length = norm(in_plane);
    if (length > 1e-12) return -in_plane / length;
  }
  return {};
}

Vec3 random_direction(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    const Vec3 v{normal(rng), normal(rng), normal(rng)};
    const double length = norm(v);
    if (length > 1e-12) return v / length;
  }
}

Vec3 sample_point(const AnalyticShape& shape, Rng& rng) {
  return std::visit(
      Overloaded{
          [&](const Sphere& s) { return s.center + random_direction(rng) * s.radius; },
          [&](const OpenHemisphere& h) {
            Vec3 n = random_direction(rng);
            const double s = dot(n, h.axis);
            if (s < 0.0) n -= h.axis * (2.0 * s);
            return h.center + n * h.radius;
          },
          [&](const PlanePatch& p) {
            std::uniform_real_distribution<double> u(-p.half_u, p.half_u);
            std::uniform_real_distribution<double> v(-p.half_v, p.half_v);
            const double a = u(rng);
            const double b = v(rng);
            return p.origin + p.u_axis * a + p.v_axis * b;
          },
          [&](const BoxShell& b) {
            const Vec3& h = b.half_extents;
            const double areas[3] = {h.y * h.z, h.x * h.z, h.x * h.y};
            std::uniform_real_distribution<double> pick(0.0, 2.0 * (areas[0] + areas[1] + areas[2]));
            double r = pick(rng);
            int face = 0;
            for (; face < 5; ++face) {
              if (r < areas[face / 2]) break;
              r -= areas[face / 2];
            }
            const int axis = face / 2;
            std::uniform_real_distribution<double> unit(-1.0, 1.0);
            Vec3 local;
            for (int a = 0; a < 3; ++a) {
              if (a != axis) local[a] = unit(rng) * h[a];
            }
            local[axis] = (face % 2 == 0 ? 1.0 : -1.0) * h[axis];
            return b.center + local;
          }},
      shape);
}

}  // namespace

void validate(const AnalyticShape& shape) {
  std::visit(Overloaded{[](const Sphere& s) {
                          if (!(s.radius > 0.0)) throw std::invalid_argument("sphere radius must be positive");
                        },
                        [](const OpenHemisphere& h) {
                          if (!(h.radius > 0.0)) throw std::invalid_argument("hemisphere radius must be positive");
                          if (!is_unit(h.axis)) throw std::invalid_argument("hemisphere axis must be unit length");
                        },
                        [](const PlanePatch& p) {
                          if (!(p.half_u > 0.0 && p.half_v > 0.0)) {
                            throw std::invalid_argument("plane half-extents must be positive");
                          }
                          if (!is_unit(p.u_axis) || !is_unit(p.v_axis) ||
                              std::abs(dot(p.u_axis, p.v_axis)) > kUnitTolerance) {
                            throw std::invalid_argument("plane axes must be orthonormal");
                          }
                        },
                        [](const BoxShell& b) {
                          const Vec3& h = b.half_extents;
                          if (!(h.x > 0.0 && h.y > 0.0 && h.z > 0.0)) {
                            throw std::invalid_argument("box half-extents must be positive");
                          }
                        }},
             shape);
}

std::string describe(const AnalyticShape& shape) {
  std::ostringstream out;
  out.precision(17);
  auto v = [&](const Vec3& p) { out << "(" << p.x << ", " << p.y << ", " << p.z << ")"; };
  std::visit(Overloaded{[&](const Sphere& s) { out << "sphere center="; v(s.center); out << " radius=" << s.radius; },
                        [&](const OpenHemisphere& h) {
                          out << "hemisphere center="; v(h.center);
                          out << " radius=" << h.radius << " axis="; v(h.axis);
                        },
                        [&](const PlanePatch& p) {
                          out << "plane origin="; v(p.origin);
                          out << " u="; v(p.u_axis);
                          out << " v="; v(p.v_axis);
                          out << " half=" << p.half_u << "x" << p.half_v;
                        },
                        [&](const BoxShell& b) { out << "box center="; v(b.center); out << " half="; v(b.half_extents); }},
             shape);
  return out.str();
}

double oracle_ud(const AnalyticShape& shape, const Vec3& p) {
  return std::visit(
      Overloaded{
          [&](const Sphere& s) { return std::abs(distance(p, s.center) - s.radius); },
          [&](const OpenHemisphere& h) {
            const Vec3 q = p - h.center;
            const double height = dot(q, h.axis);
            if (height >= 0.0) return std::abs(norm(q) - h.radius);
            const double radial = norm(q - h.axis * height);
            return std::sqrt((radial - h.radius) * (radial - h.radius) + height * height);
          },
          [&](const PlanePatch& pl) {
            const Vec3 q = p - pl.origin;
            const double du = std::max(std::abs(dot(q, pl.u_axis)) - pl.half_u, 0.0);
            const double dv = std::max(std::abs(dot(q, pl.v_axis)) - pl.half_v, 0.0);
            const double dn = dot(q, plane_normal(pl));
            return std::sqrt(du * du + dv * dv + dn * dn);
          },
          [&](const BoxShell& b) {
            const Vec3 q = p - b.center;
            Vec3 outside;
            double inside = std::numeric_limits<double>::infinity();
            for (int a = 0; a < 3; ++a) {
              outside[a] = std::max(std::abs(q[a]) - b.half_extents[a], 0.0);
              inside = std::min(inside, b.half_extents[a] - std::abs(q[a]));
            }
            const double out = norm(outside);
            return out > 0.0 ? out : inside;
          }},
      shape);
}

Projection oracle_project(const AnalyticShape& shape, const Vec3& p) {
  return std::visit(
      Overloaded{
          [&](const Sphere& s) {
            const Vec3 q = p - s.center;
            const double length = norm(q);
            if (length == 0.0) return Projection{s.center + Vec3{-s.radius, 0.0, 0.0}, true};
            return Projection{s.center + q * (s.radius / length), false};
          },
          [&](const OpenHemisphere& h) {
            const Vec3 q = p - h.center;
            const double length = norm(q);
            if (length == 0.0) {
              // Every surface point is equidistant; take the lowest one on the cap.
              const Vec3 west{-1.0, 0.0, 0.0};
              const Vec3 n = dot(west, h.axis) >= 0.0 ? west : lowest_on_circle(h.axis);
              return Projection{h.center + n * h.radius, true};
            }
            const double height = dot(q, h.axis);
            if (height >= 0.0) return Projection{h.center + q * (h.radius / length), false};
            const Vec3 radial = q - h.axis * height;
            const double radial_length = norm(radial);
            if (radial_length == 0.0) {
              return Projection{h.center + lowest_on_circle(h.axis) * h.radius, true};
            }
            return Projection{h.center + radial * (h.radius / radial_length), false};
          },
          [&](const PlanePatch& pl) {
            const Vec3 q = p - pl.origin;
            const double u = std::clamp(dot(q, pl.u_axis), -pl.half_u, pl.half_u);
            const double v = std::clamp(dot(q, pl.v_axis), -pl.half_v, pl.half_v);
            return Projection{pl.origin + pl.u_axis * u + pl.v_axis * v, false};
          },
          [&](const BoxShell& b) {
            const Vec3 q = p - b.center;
            const Vec3& h = b.half_extents;
            bool outside = false;
            Vec3 clamped;
            for (int a = 0; a < 3; ++a) {
              clamped[a] = std::clamp(q[a], -h[a], h[a]);
              outside = outside || std::abs(q[a]) > h[a];
            }
            if (outside) return Projection{b.center + clamped, false};
            double best = std::numeric_limits<double>::infinity();
            for (int a = 0; a < 3; ++a) best = std::min(best, h[a] - std::abs(q[a]));
            std::vector<Vec3> candidates;
            for (int a = 0; a < 3; ++a) {
              if (h[a] - std::abs(q[a]) != best) continue;
              for (double sign : {-1.0, 1.0}) {
                if (q[a] != 0.0 && (sign > 0.0) != (q[a] > 0.0)) continue;
                Vec3 c = q;
                c[a] = sign * h[a];
                candidates.push_back(c);
              }
            }
            std::sort(candidates.begin(), candidates.end());
            candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
            return Projection{b.center + candidates.front(), candidates.size() > 1};
          }},
      shape);
}

PointCloud sample_surface(const AnalyticShape& shape, std::size_t count, std::uint64_t seed) {
  validate(shape);
  Rng rng = make_rng(seed, {0x5a3f});
  PointCloud cloud;
  cloud.reserve(count);
  for (std::size_t i = 0; i < count; ++i) cloud.push_back(sample_point(shape, rng));
  return cloud;
}

std::vector<QuerySample> sample_queries(const AnalyticShape& shape, std::size_t count,
                                        double delta, std::uint64_t seed) {
  validate(shape);
  if (count == 0) throw std::invalid_argument("sample_queries: need at least one query");
  if (!(delta > 0.0)) throw std::invalid_argument("sample_queries: delta must be positive");
  Rng rng = make_rng(seed, {0x9e71});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution wide(0.5);
  std::vector<QuerySample> queries;
  queries.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Vec3 s = sample_point(shape, rng);
    const double sigma = wide(rng) ? delta / 3.0 : delta / 10.0;
    const double ox = normal(rng);
    const double oy = normal(rng);
    const double oz = normal(rng);
    const Vec3 p = s + Vec3{ox, oy, oz} * sigma;
    queries.push_back({p, oracle_ud(shape, p)});
  }
  return queries;
}

AnalyticShape transformed(const AnalyticShape& shape, const NormalizationTransform& t) {
  return std::visit(
      Overloaded{[&](const Sphere& s) -> AnalyticShape { return Sphere{t.apply(s.center), s.radius * t.scale}; },
                 [&](const OpenHemisphere& h) -> AnalyticShape {
                   return OpenHemisphere{t.apply(h.center), h.radius * t.scale, h.axis};
                 },
                 [&](const PlanePatch& p) -> AnalyticShape {
                   return PlanePatch{t.apply(p.origin), p.u_axis, p.v_axis, p.half_u * t.scale,
                                     p.half_v * t.scale};
                 },
                 [&](const BoxShell& b) -> AnalyticShape {
                   return BoxShell{t.apply(b.center), b.half_extents * t.scale};
                 }},
      shape);
}

BoundingBox analytic_bounds(const AnalyticShape& shape) {
  return std::visit(
      Overloaded{
          [](const Sphere& s) {
            const Vec3 r{s.radius, s.radius, s.radius};
            return BoundingBox{s.center - r, s.center + r};
          },
          [](const OpenHemisphere& h) {
            BoundingBox box;
            for (int a = 0; a < 3; ++a) {
              Vec3 e;
              e[a] = 1.0;
              // Support of the cap along +e and -e.
              auto support = [&](double sign) {
                const double along = sign * dot(e, h.axis);
                return along >= 0.0 ? 1.0 : std::sqrt(std::max(0.0, 1.0 - along * along));
              };
              box.hi[a] = h.center[a] + h.radius * support(1.0);
              box.lo[a] = h.center[a] - h.radius * support(-1.0);
            }
            return box;
          },
          [](const PlanePatch& p) {
            PointCloud corners;
            for (double su : {-1.0, 1.0}) {
              for (double sv : {-1.0, 1.0}) {
                corners.push_back(p.origin + p.u_axis * (su * p.half_u) + p.v_axis * (sv * p.half_v));
              }
            }
            return bounding_box(corners);
          },
          [](const BoxShell& b) { return BoundingBox{b.center - b.half_extents, b.center + b.half_extents}; }},
      shape);
}

double surface_area(const AnalyticShape& shape) {
  constexpr double pi = std::numbers::pi;
  return std::visit(Overloaded{[](const Sphere& s) { return 4.0 * pi * s.radius * s.radius; },
                               [](const OpenHemisphere& h) { return 2.0 * pi * h.radius * h.radius; },
                               [](const PlanePatch& p) { return 4.0 * p.half_u * p.half_v; },
                               [](const BoxShell& b) {
                                 const Vec3& h = b.half_extents;
                                 return 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z);
                               }},
                    shape);
}

}  // namespace pvudf
