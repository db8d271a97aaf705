#pragma once

// Independent oracles and fixtures shared by the unit and acceptance tests.
// Nothing here calls the code under test for the quantity being checked.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "segloc/core.hpp"
#include "segloc/descriptor.hpp"
#include "segloc/localize.hpp"
#include "segloc/localmap.hpp"

namespace segloc::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("segloc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline EnrichedPoint point(double x, double y, double z, double h = 0.0, ClassId c = 0, bool color = true,
                           bool cls = true) {
  EnrichedPoint p;
  p.x = x, p.y = y, p.z = z;
  p.h = h, p.s = 0.5, p.v = 0.5;
  p.c = c;
  p.color_valid = color;
  p.class_valid = cls;
  return p;
}

inline ClassTable small_classes(std::size_t n = 4) {
  std::vector<ClassEntry> e;
  for (std::size_t i = 0; i < n; ++i) e.push_back({static_cast<ClassId>(i), "c" + std::to_string(i), false, false});
  return ClassTable(e);
}

/// Augmented pair distance written out directly.
inline double oracle_pair_distance(const EnrichedPoint& a, const EnrichedPoint& b, double t_h, double p_h,
                                   double p_c) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  double fh = 0.0, fc = 0.0;
  if (a.color_valid && b.color_valid) {
    const double raw = std::abs(a.h - b.h);
    if (std::min(raw, 1.0 - raw) > t_h) fh = p_h;
  }
  if (a.class_valid && b.class_valid && a.c != b.c) fc = p_c;
  return std::sqrt(dx * dx + dy * dy + dz * dz + fh * fh + fc * fc);
}

/// Connected components over all pairs with distance < d (union-find on a
/// dense O(n^2) scan). Returns groups as sorted index lists, sorted.
inline std::vector<std::vector<std::size_t>> single_linkage(const std::vector<EnrichedPoint>& pts,
                                                             const SegmentationParams& sp) {
  std::vector<std::size_t> parent(pts.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      if (oracle_pair_distance(pts[i], pts[j], sp.t_h, sp.p_h, sp.p_c) < sp.d_segment) {
        parent[find(i)] = find(j);
      }
    }
  }
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < pts.size(); ++i) groups[find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [root, g] : groups) out.push_back(std::move(g));
  std::sort(out.begin(), out.end());
  return out;
}

/// Partition of a LocalMap expressed as sorted groups of sorted keys.
inline std::set<std::vector<VoxelKey>> key_partition(const LocalMap& map) {
  std::set<std::vector<VoxelKey>> out;
  for (const auto& [id, keys] : map.partition()) out.insert(keys);
  return out;
}

/// Brute-force k-NN: full sort by (distance, id), distances in double.
inline std::vector<std::pair<std::uint64_t, double>> brute_knn(const Descriptor& q, const TargetMap& map,
                                                               std::size_t k) {
  std::vector<std::pair<double, std::uint64_t>> all;
  for (const auto& e : map.entries) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double d = static_cast<double>(q.values[i]) - static_cast<double>(e.descriptor.values[i]);
      s += d * d;
    }
    all.emplace_back(std::sqrt(s), e.segment_id);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::pair<std::uint64_t, double>> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.emplace_back(all[i].second, all[i].first);
  return out;
}

/// Random clustered scene with exactly one point per voxel of the given
/// size: a few blobs with sparse gaps, mixed hues and classes.
inline std::vector<EnrichedPoint> segmentation_scene(std::mt19937_64& rng, std::size_t max_voxels,
                                                     double voxel_size = 0.1) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> blobs(2, 8);
  std::set<std::tuple<int, int, int>> used;
  std::vector<EnrichedPoint> out;
  const int n_blobs = blobs(rng);
  for (int b = 0; b < n_blobs && out.size() < max_voxels; ++b) {
    const Eigen::Vector3d center(u(rng) * 6.0, u(rng) * 6.0, u(rng) * 2.0);
    const Eigen::Vector3d half(0.2 + u(rng), 0.2 + u(rng), 0.2 + u(rng));
    const double density = 0.15 + 0.5 * u(rng);
    const double hue = u(rng) < 0.3 ? 0.95 + 0.05 * u(rng) * 0.99 : u(rng) * 0.99;
    const ClassId cls = static_cast<ClassId>(u(rng) * 3.0);
    const std::size_t budget = static_cast<std::size_t>(8.0 * half.prod() / std::pow(voxel_size, 3) * density);
    for (std::size_t i = 0; i < budget && out.size() < max_voxels; ++i) {
      const Eigen::Vector3d p = center + Eigen::Vector3d((2 * u(rng) - 1) * half.x(), (2 * u(rng) - 1) * half.y(),
                                                         (2 * u(rng) - 1) * half.z());
      const auto key = std::make_tuple(static_cast<int>(std::floor(p.x() / voxel_size)),
                                       static_cast<int>(std::floor(p.y() / voxel_size)),
                                       static_cast<int>(std::floor(p.z() / voxel_size)));
      if (!used.insert(key).second) continue;
      const double h = std::fmod(hue + 0.04 * (u(rng) - 0.5) + (u(rng) < 0.05 ? 0.5 : 0.0) + 1.0, 1.0);
      const ClassId c = u(rng) < 0.08 ? static_cast<ClassId>((cls + 1) % 3) : cls;
      out.push_back(point(p.x(), p.y(), p.z(), std::min(h, 0.999999), c, u(rng) > 0.05, u(rng) > 0.05));
    }
  }
  return out;
}

struct PartitionCheck {
  bool equal = false;
  std::size_t voxels = 0;
  std::size_t incremental_segments = 0;
  std::size_t oracle_segments = 0;
};

/// Streams the scene into a LocalMap in a random order split over n_frames
/// frames, then compares the incremental partition with single_linkage over
/// the map's own voxel representatives.
inline PartitionCheck incremental_vs_oracle(const std::vector<EnrichedPoint>& scene, std::size_t n_frames,
                                            const SegmentationParams& sp, std::mt19937_64& rng) {
  LocalMapParams mp;
  mp.radius = 1000.0;
  mp.filter_dynamic = false;
  LocalMap map(mp, sp, small_classes());
  std::vector<std::size_t> order(scene.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t per = std::max<std::size_t>(1, (scene.size() + n_frames - 1) / n_frames);
  for (std::size_t start = 0; start < order.size(); start += per) {
    PointCloudFrame f;
    for (std::size_t i = start; i < std::min(order.size(), start + per); ++i) f.points.push_back(scene[order[i]]);
    map.grow_segments(map.insert_frame(f));
  }

  std::vector<VoxelKey> keys;
  for (const auto& [id, members] : map.partition()) keys.insert(keys.end(), members.begin(), members.end());
  std::sort(keys.begin(), keys.end());
  std::vector<EnrichedPoint> reps;
  for (const auto& k : keys) reps.push_back(map.voxel(k)->representative());
  const auto groups = single_linkage(reps, sp);
  std::set<std::vector<VoxelKey>> oracle;
  for (const auto& g : groups) {
    std::vector<VoxelKey> ks;
    for (auto i : g) ks.push_back(keys[i]);
    std::sort(ks.begin(), ks.end());
    oracle.insert(ks);
  }
  const auto incremental = key_partition(map);
  return {incremental == oracle && keys.size() == map.voxel_count(), keys.size(), incremental.size(), oracle.size()};
}

inline Eigen::Quaterniond random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}

inline Pose random_pose(std::mt19937_64& rng, double t_range = 10.0) {
  std::uniform_real_distribution<double> u(-t_range, t_range);
  return Pose(Eigen::Vector3d(u(rng), u(rng), u(rng)), random_rotation(rng));
}

/// Rotation of a vector by a quaternion via the explicit matrix formula.
inline Eigen::Vector3d rotate_by_matrix(const Eigen::Quaterniond& q, const Eigen::Vector3d& v) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r * v;
}

/// Candidates for RANSAC trials: n_good consistent with truth (plus noise),
/// n_bad with uniformly random targets. Query and target ids are distinct.
inline std::vector<MatchCandidate> ransac_scene(const Pose& truth, std::size_t n_good, std::size_t n_bad,
                                                double noise, std::mt19937_64& rng, double extent = 20.0) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::normal_distribution<double> g(0.0, noise);
  std::vector<MatchCandidate> out;
  for (std::size_t i = 0; i < n_good + n_bad; ++i) {
    MatchCandidate c;
    c.query_id = i + 1;
    c.target_id = 1000 + i;
    c.query_centroid = Eigen::Vector3d(u(rng), u(rng), u(rng) * 0.25);
    if (i < n_good) {
      c.target_centroid = transform_point(truth, c.query_centroid) + Eigen::Vector3d(g(rng), g(rng), g(rng));
    } else {
      c.target_centroid = Eigen::Vector3d(u(rng), u(rng), u(rng) * 0.25);
    }
    c.distance = 0.0;
    out.push_back(c);
  }
  return out;
}

inline double rotation_error_deg(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  const double d = std::abs(a.dot(b));
  return 2.0 * std::acos(std::min(1.0, d)) * 180.0 / 3.14159265358979323846;
}

}  // namespace segloc::testing
