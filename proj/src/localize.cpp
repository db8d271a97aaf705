#include "segloc/localize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "binary_io.hpp"

namespace segloc {

void TargetMap::validate() const {
  std::set<std::uint64_t> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.segment_id).second) throw std::invalid_argument("target map: duplicate segment id");
    if (e.descriptor.size() != dim) throw std::invalid_argument("target map: descriptor dimension mismatch");
  }
}

TargetMap build_target_map(std::span<const SegmentObservation> observations, std::span<const Descriptor> descriptors,
                           const DescriptorBackend& backend) {
  if (observations.size() != descriptors.size()) throw std::invalid_argument("build_target_map: size mismatch");
  TargetMap map;
  map.dim = static_cast<std::uint16_t>(backend.dim());
  map.class_table_hash = backend.classes().hash();
  map.backend_hash = backend.hash();
  std::set<std::uint64_t> seen;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto& obs = observations[i];
    if (!obs.is_final) continue;
    if (!seen.insert(obs.segment_id).second) {
      throw std::invalid_argument("build_target_map: duplicate final observation for segment " +
                                  std::to_string(obs.segment_id));
    }
    TargetMapEntry e;
    e.segment_id = obs.segment_id;
    e.centroid = obs.centroid.cast<float>();
    e.descriptor = descriptors[i];
    map.entries.push_back(std::move(e));
  }
  std::sort(map.entries.begin(), map.entries.end(),
            [](const auto& a, const auto& b) { return a.segment_id < b.segment_id; });
  map.validate();
  return map;
}

TargetMap build_target_map(std::span<const SegmentObservation> observations, const DescriptorBackend& backend,
                           std::uint64_t seed, std::size_t n_sub) {
  std::vector<SegmentObservation> finals;
  std::set<std::uint64_t> seen;
  for (const auto& o : observations) {
    if (!o.is_final) continue;
    if (!seen.insert(o.segment_id).second) {
      throw std::invalid_argument("build_target_map: duplicate final observation for segment " +
                                  std::to_string(o.segment_id));
    }
    finals.push_back(o);
  }
  const auto descriptors = describe_batch(backend, finals, seed, n_sub);
  return build_target_map(finals, descriptors, backend);
}

namespace {
constexpr char kMapMagic[5] = "SSMM";
constexpr std::uint16_t kMapVersion = 1;
constexpr std::size_t kMapHeaderBytes = 4 + 2 + 2 + 8 + 8 + 4;
}  // namespace

std::size_t map_file_size(std::size_t entries, std::size_t dim) {
  return kMapHeaderBytes + entries * (8 + 3 * 4 + dim * 4);
}

void save_map(const TargetMap& map, const std::filesystem::path& path) {
  map.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write map file " + path.string());
  detail::write_magic(out, kMapMagic);
  detail::write_le<std::uint16_t>(out, kMapVersion);
  detail::write_le<std::uint16_t>(out, map.dim);
  detail::write_le<std::uint64_t>(out, map.class_table_hash);
  detail::write_le<std::uint64_t>(out, map.backend_hash);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.entries.size()));
  for (const auto& e : map.entries) {
    detail::write_le<std::uint64_t>(out, e.segment_id);
    for (int i = 0; i < 3; ++i) detail::write_le<float>(out, e.centroid[i]);
    for (float v : e.descriptor.values) detail::write_le<float>(out, v);
  }
  if (!out) throw DataError("failed writing map file " + path.string());
}

TargetMap load_map(const std::filesystem::path& path, std::uint16_t expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MapLoadError(MapLoadErrorKind::kIo, "cannot open map file " + path.string());
  if (!detail::read_magic(in, kMapMagic)) throw MapLoadError(MapLoadErrorKind::kBadMagic, "map file: bad magic");
  try {
    const auto version = detail::read_le<std::uint16_t>(in, "version");
    if (version != kMapVersion) {
      throw MapLoadError(MapLoadErrorKind::kBadVersion, "map file: unsupported version " + std::to_string(version));
    }
    TargetMap map;
    map.dim = detail::read_le<std::uint16_t>(in, "dimension");
    if (expected_dim != 0 && map.dim != expected_dim) {
      throw MapLoadError(MapLoadErrorKind::kBadDimension, "map file: descriptor dimension " +
                                                              std::to_string(map.dim) + ", expected " +
                                                              std::to_string(expected_dim));
    }
    map.class_table_hash = detail::read_le<std::uint64_t>(in, "class-table hash");
    map.backend_hash = detail::read_le<std::uint64_t>(in, "backend hash");
    const auto count = detail::read_le<std::uint32_t>(in, "entry count");
    map.entries.reserve(std::min<std::uint32_t>(count, 1u << 20));
    for (std::uint32_t i = 0; i < count; ++i) {
      TargetMapEntry e;
      e.segment_id = detail::read_le<std::uint64_t>(in, "entry id");
      for (int k = 0; k < 3; ++k) e.centroid[k] = detail::read_le<float>(in, "centroid");
      e.descriptor.values.resize(map.dim);
      for (auto& v : e.descriptor.values) v = detail::read_le<float>(in, "descriptor");
      map.entries.push_back(std::move(e));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw MapLoadError(MapLoadErrorKind::kTruncated, "map file: trailing bytes after entries");
    }
    try {
      map.validate();
    } catch (const std::invalid_argument& e) {
      throw MapLoadError(MapLoadErrorKind::kBadDimension, std::string("map file: ") + e.what());
    }
    return map;
  } catch (const MapLoadError&) {
    throw;
  } catch (const DataError& e) {
    throw MapLoadError(MapLoadErrorKind::kTruncated, std::string("map file: ") + e.what());
  }
}

namespace {

std::vector<MatchCandidate> select_nearest(const std::vector<double>& dist, const TargetMap& map, std::size_t k,
                                           std::uint64_t query_id, const Eigen::Vector3d& query_centroid) {
  std::vector<std::size_t> idx(dist.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t take = std::min(k, idx.size());
  auto less = [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return map.entries[a].segment_id < map.entries[b].segment_id;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), less);
  std::vector<MatchCandidate> out;
  out.reserve(take);
  for (std::size_t r = 0; r < take; ++r) {
    const auto& e = map.entries[idx[r]];
    out.push_back({query_id, query_centroid, e.segment_id, e.centroid.cast<double>(), dist[idx[r]]});
  }
  return out;
}

}  // namespace

std::vector<MatchCandidate> knn(const Descriptor& query, const TargetMap& map, std::size_t k, std::uint64_t query_id,
                                const Eigen::Vector3d& query_centroid) {
  if (query.size() != map.dim) throw std::invalid_argument("knn: descriptor dimension mismatch");
  std::vector<double> dist(map.entries.size());
  const auto n = static_cast<std::int64_t>(dist.size());
#pragma omp parallel for schedule(static) if (n > 512)
  for (std::int64_t i = 0; i < n; ++i) {
    dist[static_cast<std::size_t>(i)] = descriptor_distance(query, map.entries[static_cast<std::size_t>(i)].descriptor);
  }
  return select_nearest(dist, map, k, query_id, query_centroid);
}

std::vector<MatchCandidate> knn_serial(const Descriptor& query, const TargetMap& map, std::size_t k,
                                       std::uint64_t query_id, const Eigen::Vector3d& query_centroid) {
  if (query.size() != map.dim) throw std::invalid_argument("knn: descriptor dimension mismatch");
  std::vector<double> dist;
  dist.reserve(map.entries.size());
  for (const auto& e : map.entries) dist.push_back(descriptor_distance(query, e.descriptor));
  return select_nearest(dist, map, k, query_id, query_centroid);
}

std::optional<Pose> try_rigid_align(std::span<const PointPair> pairs) {
  if (pairs.size() < 3) return std::nullopt;
  Eigen::Vector3d q_mean = Eigen::Vector3d::Zero(), p_mean = Eigen::Vector3d::Zero();
  for (const auto& [q, p] : pairs) {
    q_mean += q;
    p_mean += p;
  }
  q_mean /= static_cast<double>(pairs.size());
  p_mean /= static_cast<double>(pairs.size());
  Eigen::Matrix3d cross = Eigen::Matrix3d::Zero(), source_cov = Eigen::Matrix3d::Zero();
  for (const auto& [q, p] : pairs) {
    const Eigen::Vector3d dq = q - q_mean;
    cross += dq * (p - p_mean).transpose();
    source_cov += dq * dq.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(source_cov, Eigen::EigenvaluesOnly);
  const double largest = es.eigenvalues()(2);
  if (!(largest > 0.0) || es.eigenvalues()(1) <= 1e-10 * largest) return std::nullopt;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
  if ((v * u.transpose()).determinant() < 0.0) fix(2, 2) = -1.0;
  const Eigen::Matrix3d rot = v * fix * u.transpose();
  Pose out;
  out.rotation = Eigen::Quaterniond(rot).normalized();
  out.translation = p_mean - out.rotation * q_mean;
  return out;
}

Pose rigid_align(std::span<const PointPair> pairs) {
  if (pairs.size() < 3) throw std::invalid_argument("rigid_align: need at least 3 pairs");
  auto pose = try_rigid_align(pairs);
  if (!pose) throw std::invalid_argument("rigid_align: degenerate (collinear) source points");
  return *pose;
}

void RansacParams::validate() const {
  if (min_inliers < 3) throw std::invalid_argument("RansacParams: min_inliers must be at least 3");
  if (!(max_centroid_dist > 0.0)) throw std::invalid_argument("RansacParams: max_centroid_dist must be positive");
}

std::vector<std::size_t> find_inliers(std::span<const MatchCandidate> candidates, const Pose& pose, double max_dist) {
  std::map<std::uint64_t, std::pair<double, std::size_t>> best;  // query id -> (dist, index)
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const double d = (transform_point(pose, c.query_centroid) - c.target_centroid).norm();
    if (!(d <= max_dist)) continue;
    auto [it, inserted] = best.try_emplace(c.query_id, d, i);
    if (!inserted && d < it->second.first) it->second = {d, i};
  }
  std::vector<std::size_t> out;
  out.reserve(best.size());
  for (const auto& [id, v] : best) out.push_back(v.second);
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

// Counter-based generator; one per iteration, cheap to seed.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t state) : state_(state) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

}  // namespace

namespace {

// Cumulative sampling weights: a candidate of descriptor rank r within its
// query segment gets weight 1 / (r + 1).
std::vector<double> rank_weights(std::span<const MatchCandidate> candidates) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (candidates[a].query_id != candidates[b].query_id) return candidates[a].query_id < candidates[b].query_id;
    return candidates[a].distance < candidates[b].distance;
  });
  std::vector<double> w(candidates.size());
  std::size_t rank = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    rank = (i > 0 && candidates[order[i]].query_id == candidates[order[i - 1]].query_id) ? rank + 1 : 0;
    w[order[i]] = 1.0 / static_cast<double>(rank + 1);
  }
  std::partial_sum(w.begin(), w.end(), w.begin());
  return w;
}

std::optional<std::array<std::size_t, 3>> draw_sample(std::span<const MatchCandidate> candidates,
                                                      const std::vector<double>& cumulative, std::uint64_t seed,
                                                      std::size_t iteration) {
  if (candidates.size() < 3) return std::nullopt;
  SplitMix64 rng(mix_seed(seed, iteration));
  std::uniform_real_distribution<double> u(0.0, cumulative.back());
  auto pick = [&] {
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u(rng));
    return std::min(static_cast<std::size_t>(it - cumulative.begin()), candidates.size() - 1);
  };
  std::array<std::size_t, 3> s{};
  constexpr int kAttempts = 16;
  auto compatible = [&](std::size_t a, std::size_t b) {
    return candidates[a].query_id != candidates[b].query_id && candidates[a].target_id != candidates[b].target_id;
  };
  s[0] = pick();
  for (int slot = 1; slot < 3; ++slot) {
    bool found = false;
    for (int a = 0; a < kAttempts && !found; ++a) {
      const std::size_t c = pick();
      found = true;
      for (int prev = 0; prev < slot; ++prev) found = found && compatible(c, s[prev]);
      if (found) s[slot] = c;
    }
    if (!found) return std::nullopt;
  }
  return s;
}

}  // namespace

std::optional<std::array<std::size_t, 3>> ransac_sample(std::span<const MatchCandidate> candidates,
                                                        std::uint64_t seed, std::size_t iteration) {
  if (candidates.size() < 3) return std::nullopt;
  return draw_sample(candidates, rank_weights(candidates), seed, iteration);
}

namespace {

struct Hypothesis {
  std::size_t inliers = 0;
  std::size_t iteration = std::numeric_limits<std::size_t>::max();

  bool better_than(const Hypothesis& o) const {
    return inliers > o.inliers || (inliers == o.inliers && iteration < o.iteration);
  }
};

struct CandidateIndex {
  std::vector<std::uint32_t> query_slot;  // dense query index per candidate
  std::size_t queries = 0;
  std::vector<double> cumulative;
};

CandidateIndex index_queries(std::span<const MatchCandidate> candidates) {
  CandidateIndex ci;
  std::map<std::uint64_t, std::uint32_t> slots;
  ci.query_slot.reserve(candidates.size());
  for (const auto& c : candidates) {
    auto [it, inserted] = slots.try_emplace(c.query_id, static_cast<std::uint32_t>(slots.size()));
    ci.query_slot.push_back(it->second);
  }
  ci.queries = slots.size();
  ci.cumulative = rank_weights(candidates);
  return ci;
}

std::optional<Pose> hypothesis_pose(std::span<const MatchCandidate> candidates, const std::array<std::size_t, 3>& s) {
  const std::array<PointPair, 3> pairs{PointPair{candidates[s[0]].query_centroid, candidates[s[0]].target_centroid},
                                       PointPair{candidates[s[1]].query_centroid, candidates[s[1]].target_centroid},
                                       PointPair{candidates[s[2]].query_centroid, candidates[s[2]].target_centroid}};
  return try_rigid_align(pairs);
}

/// Number of query segments with at least one candidate within max_dist.
std::size_t count_inliers(std::span<const MatchCandidate> candidates, const CandidateIndex& ci, const Pose& pose,
                          double max_dist, std::vector<char>& seen) {
  seen.assign(ci.queries, 0);
  const double max_d2 = max_dist * max_dist;
  const Eigen::Matrix3d rot = pose.rotation_matrix();
  std::size_t count = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto slot = ci.query_slot[i];
    if (seen[slot]) continue;
    const Eigen::Vector3d r = rot * candidates[i].query_centroid + pose.translation - candidates[i].target_centroid;
    if (r.squaredNorm() <= max_d2) {
      seen[slot] = 1;
      ++count;
    }
  }
  return count;
}

// A rigid motion preserves pairwise distances, so a sample whose three
// correspondences can all be inliers of one transform has side lengths that
// differ by at most 2 * max_dist between the two frames.
bool distances_consistent(std::span<const MatchCandidate> candidates, const std::array<std::size_t, 3>& s,
                          double max_dist) {
  for (int a = 0; a < 3; ++a) {
    const auto& ca = candidates[s[a]];
    const auto& cb = candidates[s[(a + 1) % 3]];
    const double dq = (ca.query_centroid - cb.query_centroid).norm();
    const double dp = (ca.target_centroid - cb.target_centroid).norm();
    if (std::abs(dq - dp) > 2.0 * max_dist) return false;
  }
  return true;
}

Hypothesis evaluate_iteration(std::span<const MatchCandidate> candidates, const CandidateIndex& ci,
                              const RansacParams& params, std::size_t iteration, std::vector<char>& seen) {
  Hypothesis h;
  const auto sample = draw_sample(candidates, ci.cumulative, params.seed, iteration);
  if (!sample || !distances_consistent(candidates, *sample, params.max_centroid_dist)) return h;
  const auto pose = hypothesis_pose(candidates, *sample);
  if (!pose) return h;
  h.inliers = count_inliers(candidates, ci, *pose, params.max_centroid_dist, seen);
  h.iteration = iteration;
  return h;
}

std::optional<LocalizationResult> finish(std::span<const MatchCandidate> candidates, const CandidateIndex& ci,
                                         const RansacParams& params, const Hypothesis& best) {
  if (best.inliers < params.min_inliers) return std::nullopt;
  const auto sample = draw_sample(candidates, ci.cumulative, params.seed, best.iteration);
  Pose pose = *hypothesis_pose(candidates, *sample);
  std::vector<std::size_t> inliers = find_inliers(candidates, pose, params.max_centroid_dist);

  // Refit on all inliers; accept a refit only if it keeps at least as many.
  for (int round = 0; round < 5; ++round) {
    std::vector<PointPair> pairs;
    pairs.reserve(inliers.size());
    for (auto i : inliers) pairs.emplace_back(candidates[i].query_centroid, candidates[i].target_centroid);
    const auto refit = try_rigid_align(pairs);
    if (!refit) break;
    auto refit_inliers = find_inliers(candidates, *refit, params.max_centroid_dist);
    if (refit_inliers.size() < inliers.size()) break;
    const bool same = refit_inliers == inliers;
    pose = *refit;
    inliers = std::move(refit_inliers);
    if (same) break;
  }
  if (inliers.size() < params.min_inliers) return std::nullopt;

  LocalizationResult res;
  res.transform = pose;
  for (auto i : inliers) res.inliers.push_back(candidates[i]);
  res.inlier_count = inliers.size();
  return res;
}

}  // namespace

std::optional<LocalizationResult> ransac_verify(std::span<const MatchCandidate> candidates,
                                                const RansacParams& params) {
  params.validate();
  if (candidates.size() < params.min_inliers) return std::nullopt;
  const CandidateIndex ci = index_queries(candidates);
  if (ci.queries < params.min_inliers) return std::nullopt;

  Hypothesis best;
  const auto iterations = static_cast<std::int64_t>(params.max_iterations);
#pragma omp parallel
  {
    Hypothesis local;
    std::vector<char> seen;
#pragma omp for schedule(static) nowait
    for (std::int64_t it = 0; it < iterations; ++it) {
      const Hypothesis h = evaluate_iteration(candidates, ci, params, static_cast<std::size_t>(it), seen);
      if (h.better_than(local)) local = h;
    }
#pragma omp critical(segloc_ransac_reduce)
    {
      if (local.better_than(best)) best = local;
    }
  }
  return finish(candidates, ci, params, best);
}

std::optional<LocalizationResult> ransac_verify_serial(std::span<const MatchCandidate> candidates,
                                                       const RansacParams& params) {
  params.validate();
  if (candidates.size() < params.min_inliers) return std::nullopt;
  const CandidateIndex ci = index_queries(candidates);
  if (ci.queries < params.min_inliers) return std::nullopt;
  Hypothesis best;
  std::vector<char> seen;
  for (std::size_t it = 0; it < params.max_iterations; ++it) {
    const Hypothesis h = evaluate_iteration(candidates, ci, params, it, seen);
    if (h.better_than(best)) best = h;
  }
  return finish(candidates, ci, params, best);
}

std::optional<LocalizationResult> localize_step(std::span<const LocalSegment> local, const TargetMap& map,
                                                std::size_t k, const RansacParams& params,
                                                std::uint64_t backend_hash) {
  if (backend_hash != map.backend_hash) {
    throw std::invalid_argument("localize_step: descriptor backend does not match the map");
  }
  if (local.empty() || map.empty()) return std::nullopt;
  std::vector<MatchCandidate> candidates;
  candidates.reserve(local.size() * k);
  for (const auto& seg : local) {
    auto c = knn(seg.descriptor, map, k, seg.segment_id, seg.centroid);
    candidates.insert(candidates.end(), c.begin(), c.end());
  }
  return ransac_verify(candidates, params);
}

}  // namespace segloc
