#include "segloc/hull.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <utility>

namespace segloc {

namespace {

using Face = ConvexHull::Face;

std::optional<Face> oriented_face(const std::vector<Eigen::Vector3d>& pts, int a, int b, int c) {
  const Eigen::Vector3d n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
  const double len = n.norm();
  if (!(len > 0.0)) return std::nullopt;
  Face f{{a, b, c}, n / len, 0.0};
  f.offset = f.normal.dot(pts[a]);
  return f;
}

std::optional<std::array<int, 4>> initial_simplex(const std::vector<Eigen::Vector3d>& pts, double eps) {
  const int n = static_cast<int>(pts.size());
  int i0 = 0;
  for (int i = 1; i < n; ++i) {
    if (pts[i].x() < pts[i0].x()) i0 = i;
  }
  int i1 = i0;
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = (pts[i] - pts[i0]).norm();
    if (d > best) best = d, i1 = i;
  }
  if (best <= eps) return std::nullopt;
  const Eigen::Vector3d axis = (pts[i1] - pts[i0]).normalized();
  int i2 = i0;
  best = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = (pts[i] - pts[i0]).cross(axis).norm();
    if (d > best) best = d, i2 = i;
  }
  if (best <= eps) return std::nullopt;
  const Eigen::Vector3d plane_n = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalized();
  int i3 = i0;
  best = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = std::abs(plane_n.dot(pts[i] - pts[i0]));
    if (d > best) best = d, i3 = i;
  }
  if (best <= eps) return std::nullopt;
  return std::array{i0, i1, i2, i3};
}

// Incremental hull, farthest points first. Fails (nullopt) when rounding
// produces an inconsistent mesh or leaves an input point outside by more
// than the tolerance; the caller then retries on perturbed input.
std::optional<std::vector<Face>> incremental_hull(const std::vector<Eigen::Vector3d>& pts,
                                                  const std::array<int, 4>& simplex, double eps, double tolerance) {
  const int n = static_cast<int>(pts.size());
  const Eigen::Vector3d interior = (pts[simplex[0]] + pts[simplex[1]] + pts[simplex[2]] + pts[simplex[3]]) / 4.0;
  std::vector<Face> faces;
  std::vector<char> alive;
  std::unordered_map<std::uint64_t, int> edge_face;  // directed edge (a, b) -> face holding it
  auto edge_key = [](int a, int b) { return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b); };
  auto add_face = [&](Face f) {
    const int id = static_cast<int>(faces.size());
    for (int e = 0; e < 3; ++e) edge_face[edge_key(f.v[e], f.v[(e + 1) % 3])] = id;
    faces.push_back(f);
    alive.push_back(1);
  };
  const auto [i0, i1, i2, i3] = simplex;
  for (const auto& tri : {std::array{i0, i1, i2}, std::array{i0, i1, i3}, std::array{i0, i2, i3},
                          std::array{i1, i2, i3}}) {
    auto f = oriented_face(pts, tri[0], tri[1], tri[2]);
    if (!f) return std::nullopt;
    if (f->normal.dot(interior) > f->offset) {
      std::swap(f->v[1], f->v[2]);
      f->normal = -f->normal;
      f->offset = -f->offset;
    }
    add_face(*f);
  }

  std::vector<int> order;
  order.reserve(pts.size());
  for (int i = 0; i < n; ++i) {
    if (i != i0 && i != i1 && i != i2 && i != i3) order.push_back(i);
  }
  std::vector<double> dist(pts.size());
  for (int i : order) dist[i] = (pts[i] - interior).squaredNorm();
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist[a] > dist[b]; });

  std::vector<int> visible, stack;
  std::vector<char> is_visible;
  std::vector<std::pair<int, int>> horizon;
  for (int p : order) {
    int seed_face = -1;
    double best_d = eps;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      if (!alive[f]) continue;
      const double d = faces[f].normal.dot(pts[p]) - faces[f].offset;
      if (d > best_d) best_d = d, seed_face = static_cast<int>(f);
    }
    if (seed_face < 0) continue;

    is_visible.assign(faces.size(), 0);
    visible.clear();
    stack.assign(1, seed_face);
    is_visible[seed_face] = 1;
    while (!stack.empty()) {
      const int f = stack.back();
      stack.pop_back();
      visible.push_back(f);
      for (int e = 0; e < 3; ++e) {
        const auto it = edge_face.find(edge_key(faces[f].v[(e + 1) % 3], faces[f].v[e]));
        if (it == edge_face.end()) return std::nullopt;
        const int g = it->second;
        if (is_visible[g]) continue;
        if (faces[g].normal.dot(pts[p]) - faces[g].offset > eps) {
          is_visible[g] = 1;
          stack.push_back(g);
        }
      }
    }
    horizon.clear();
    for (int f : visible) {
      for (int e = 0; e < 3; ++e) {
        const int a = faces[f].v[e], b = faces[f].v[(e + 1) % 3];
        if (!is_visible[edge_face.at(edge_key(b, a))]) horizon.emplace_back(a, b);
      }
    }
    for (int f : visible) {
      alive[f] = 0;
      for (int e = 0; e < 3; ++e) edge_face.erase(edge_key(faces[f].v[e], faces[f].v[(e + 1) % 3]));
    }
    for (const auto& [a, b] : horizon) {
      const auto f = oriented_face(pts, a, b, p);
      if (!f || f->normal.dot(interior) > f->offset) return std::nullopt;
      add_face(*f);
    }
  }

  std::vector<Face> kept;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    if (!alive[f]) continue;
    for (int e = 0; e < 3; ++e) {
      if (!edge_face.count(edge_key(faces[f].v[(e + 1) % 3], faces[f].v[e]))) return std::nullopt;
    }
    kept.push_back(faces[f]);
  }
  for (const auto& x : pts) {
    for (const auto& f : kept) {
      if (f.normal.dot(x) - f.offset > tolerance) return std::nullopt;
    }
  }
  return kept;
}

}  // namespace

ConvexHull ConvexHull::build(std::span<const Eigen::Vector3d> points) {
  ConvexHull hull;
  hull.vertices_.assign(points.begin(), points.end());
  if (points.empty()) return hull;
  hull.min_ = hull.max_ = points.front();
  for (const auto& p : points) {
    hull.min_ = hull.min_.cwiseMin(p);
    hull.max_ = hull.max_.cwiseMax(p);
  }
  if (points.size() < 4) return hull;
  const double extent = (hull.max_ - hull.min_).norm();
  if (!(extent > 0.0)) return hull;

  // Work relative to the box center to keep plane offsets small.
  const Eigen::Vector3d center = 0.5 * (hull.min_ + hull.max_);
  std::vector<Eigen::Vector3d> local(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) local[i] = points[i] - center;
  // Inputs are often single-precision; flatness is judged at that level.
  if (!initial_simplex(local, 1e-7 * extent)) return hull;

  const double eps = 1e-11 * extent;
  const double tolerance = 1e-9 * extent;
  std::vector<Eigen::Vector3d> joggled = local;
  std::optional<std::vector<Face>> faces;
  for (int attempt = 0; attempt < 8 && !faces; ++attempt) {
    if (attempt > 0) {
      // Perturbation grows tenfold per retry, starting well above eps.
      const double amplitude = 1e-9 * std::pow(10.0, attempt - 1) * extent;
      std::mt19937_64 rng(static_cast<std::uint64_t>(attempt));
      std::uniform_real_distribution<double> jog(-amplitude, amplitude);
      for (std::size_t i = 0; i < local.size(); ++i) {
        joggled[i] = local[i] + Eigen::Vector3d(jog(rng), jog(rng), jog(rng));
      }
      hull.tolerance_ = tolerance + 2.0 * amplitude;
    } else {
      hull.tolerance_ = tolerance;
    }
    if (const auto simplex = initial_simplex(joggled, eps)) {
      faces = incremental_hull(joggled, *simplex, eps, tolerance);
    }
  }
  if (!faces) throw std::runtime_error("ConvexHull::build: no consistent hull after perturbation retries");
  for (auto& f : *faces) f.offset += f.normal.dot(center);
  for (std::size_t i = 0; i < points.size(); ++i) hull.vertices_[i] = joggled[i] + center;
  hull.faces_ = std::move(*faces);
  // Lattice-like inputs give many nearly coplanar triangles. A plane is
  // dropped when a kept one agrees with it to within merge over the whole
  // bounding box; the containment tolerance absorbs the difference.
  const double merge = 1e-6 * extent;
  hull.tolerance_ += merge;
  for (const auto& f : hull.faces_) {
    const bool dup = std::any_of(hull.planes_.begin(), hull.planes_.end(), [&](const Eigen::Vector4d& q) {
      return (q.head<3>() - f.normal).norm() * extent + std::abs(q[3] - f.offset) <= merge;
    });
    if (!dup) hull.planes_.emplace_back(f.normal.x(), f.normal.y(), f.normal.z(), f.offset);
  }
  return hull;
}

bool ConvexHull::contains(const Eigen::Vector3d& x) const {
  if (faces_.empty()) return false;
  for (int d = 0; d < 3; ++d) {
    if (x[d] < min_[d] - tolerance_ || x[d] > max_[d] + tolerance_) return false;
  }
  for (const auto& q : planes_) {
    if (q[0] * x.x() + q[1] * x.y() + q[2] * x.z() > q[3] + tolerance_) return false;
  }
  return true;
}

double ConvexHull::volume() const {
  if (faces_.empty()) return 0.0;
  Eigen::Vector3d o = Eigen::Vector3d::Zero();
  for (const auto& f : faces_) o += vertices_[f.v[0]];
  o /= static_cast<double>(faces_.size());
  double vol = 0.0;
  for (const auto& f : faces_) {
    const Eigen::Vector3d a = vertices_[f.v[0]] - o, b = vertices_[f.v[1]] - o, c = vertices_[f.v[2]] - o;
    vol += std::abs(a.dot(b.cross(c))) / 6.0;
  }
  return vol;
}

}  // namespace segloc
