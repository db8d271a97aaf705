#include "segloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "segloc/hull.hpp"

namespace segloc {

namespace {

constexpr std::size_t kIoUChunk = 1024;

struct Sampler {
  const ConvexHull* a;
  const ConvexHull* b;
  Eigen::Vector3d lo, hi;
};

std::pair<std::size_t, std::size_t> sample_chunk(const Sampler& h, std::uint64_t seed, std::size_t chunk,
                                                 std::size_t n) {
  std::mt19937_64 rng(mix_seed(seed, chunk));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t in_union = 0, in_both = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector3d x;
    for (int d = 0; d < 3; ++d) x[d] = h.lo[d] + u(rng) * (h.hi[d] - h.lo[d]);
    const bool ia = h.a->contains(x), ib = h.b->contains(x);
    in_union += ia || ib;
    in_both += ia && ib;
  }
  return {in_union, in_both};
}

bool same_point_set(std::span<const Eigen::Vector3d> a, std::span<const Eigen::Vector3d> b) {
  auto key = [](const Eigen::Vector3d& p) { return std::array{p.x(), p.y(), p.z()}; };
  std::vector<std::array<double, 3>> ka, kb;
  for (const auto& p : a) ka.push_back(key(p));
  for (const auto& p : b) kb.push_back(key(p));
  std::sort(ka.begin(), ka.end());
  std::sort(kb.begin(), kb.end());
  ka.erase(std::unique(ka.begin(), ka.end()), ka.end());
  kb.erase(std::unique(kb.begin(), kb.end()), kb.end());
  return ka == kb;
}

// Resolves the degenerate cases; returns nothing when sampling is needed.
std::optional<IoUEstimate> prepare(std::span<const Eigen::Vector3d> a, std::span<const Eigen::Vector3d> b,
                                   const ConvexHull& ha, const ConvexHull& hb, Sampler& s) {
  if (ha.degenerate() || hb.degenerate()) {
    IoUEstimate e;
    e.degenerate = true;
    e.iou = ha.degenerate() && hb.degenerate() && !a.empty() && same_point_set(a, b) ? 1.0 : 0.0;
    return e;
  }
  s = {&ha, &hb, ha.min_corner().cwiseMin(hb.min_corner()), ha.max_corner().cwiseMax(hb.max_corner())};
  return std::nullopt;
}

IoUEstimate finish(std::size_t in_union, std::size_t in_both) {
  IoUEstimate e;
  e.union_hits = in_union;
  e.intersection_hits = in_both;
  if (in_union == 0) return e;
  const double p = static_cast<double>(in_both) / static_cast<double>(in_union);
  e.iou = p;
  e.std_error = std::sqrt(p * (1.0 - p) / static_cast<double>(in_union));
  return e;
}

IoUEstimate sample_serial(const Sampler& s, std::size_t n_samples, std::uint64_t seed) {
  std::size_t in_union = 0, in_both = 0;
  for (std::size_t c = 0; c * kIoUChunk < n_samples; ++c) {
    const auto [u, i] = sample_chunk(s, seed, c, std::min(kIoUChunk, n_samples - c * kIoUChunk));
    in_union += u;
    in_both += i;
  }
  return finish(in_union, in_both);
}

double rank_statistic(std::vector<std::size_t> ranks, double q) {
  std::sort(ranks.begin(), ranks.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(ranks.size()))) - 1;
  return static_cast<double>(ranks[std::min(idx, ranks.size() - 1)]);
}

}  // namespace

IoUEstimate hull_iou(std::span<const Eigen::Vector3d> a, std::span<const Eigen::Vector3d> b, std::size_t n_samples,
                     std::uint64_t seed) {
  const ConvexHull ha = ConvexHull::build(a), hb = ConvexHull::build(b);
  Sampler s;
  if (auto e = prepare(a, b, ha, hb, s)) return *e;
  const std::size_t chunks = (n_samples + kIoUChunk - 1) / kIoUChunk;
  std::size_t in_union = 0, in_both = 0;
#pragma omp parallel for schedule(static) reduction(+ : in_union, in_both)
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t n = std::min(kIoUChunk, n_samples - c * kIoUChunk);
    const auto [u, i] = sample_chunk(s, seed, c, n);
    in_union += u;
    in_both += i;
  }
  return finish(in_union, in_both);
}

IoUEstimate hull_iou_serial(std::span<const Eigen::Vector3d> a, std::span<const Eigen::Vector3d> b,
                            std::size_t n_samples, std::uint64_t seed) {
  const ConvexHull ha = ConvexHull::build(a), hb = ConvexHull::build(b);
  Sampler s;
  if (auto e = prepare(a, b, ha, hb, s)) return *e;
  return sample_serial(s, n_samples, seed);
}

std::vector<Eigen::Vector3d> positions(const SegmentObservation& obs) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(obs.points.size());
  for (const auto& p : obs.points) out.push_back(p.position());
  return out;
}

static std::vector<SegmentPair> pair_segments_impl(std::span<const SegmentObservation> run_a,
                                                   std::span<const SegmentObservation> run_b, double gate,
                                                   std::size_t n_samples, std::uint64_t seed, bool parallel) {
  std::vector<std::pair<std::size_t, std::size_t>> gated;
  for (std::size_t i = 0; i < run_a.size(); ++i) {
    for (std::size_t j = 0; j < run_b.size(); ++j) {
      if ((run_a[i].centroid - run_b[j].centroid).norm() <= gate) gated.emplace_back(i, j);
    }
  }
  // One hull per segment that takes part in any gated pair.
  std::vector<std::vector<Eigen::Vector3d>> pts_a(run_a.size()), pts_b(run_b.size());
  std::vector<ConvexHull> hull_a(run_a.size()), hull_b(run_b.size());
  std::vector<char> need_a(run_a.size(), 0), need_b(run_b.size(), 0);
  for (const auto& [i, j] : gated) need_a[i] = need_b[j] = 1;
  const auto n_a = static_cast<std::int64_t>(run_a.size()), n_all = n_a + static_cast<std::int64_t>(run_b.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::int64_t k = 0; k < n_all; ++k) {
    if (k < n_a) {
      if (!need_a[k]) continue;
      pts_a[k] = positions(run_a[k]);
      hull_a[k] = ConvexHull::build(pts_a[k]);
    } else {
      const auto j = static_cast<std::size_t>(k - n_a);
      if (!need_b[j]) continue;
      pts_b[j] = positions(run_b[j]);
      hull_b[j] = ConvexHull::build(pts_b[j]);
    }
  }

  std::vector<SegmentPair> scored(gated.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::size_t g = 0; g < gated.size(); ++g) {
    const auto [i, j] = gated[g];
    const std::uint64_t pair_seed = mix_seed(mix_seed(seed, run_a[i].segment_id), run_b[j].segment_id);
    Sampler s;
    auto e = prepare(pts_a[i], pts_b[j], hull_a[i], hull_b[j], s);
    scored[g] = {run_a[i].segment_id, run_b[j].segment_id, e ? *e : sample_serial(s, n_samples, pair_seed)};
  }
  std::stable_sort(scored.begin(), scored.end(), [](const SegmentPair& x, const SegmentPair& y) {
    if (x.estimate.iou != y.estimate.iou) return x.estimate.iou > y.estimate.iou;
    return std::pair(x.a_id, x.b_id) < std::pair(y.a_id, y.b_id);
  });
  std::vector<SegmentPair> out;
  std::vector<std::uint64_t> used_a, used_b;
  for (const auto& p : scored) {
    if (std::find(used_a.begin(), used_a.end(), p.a_id) != used_a.end()) continue;
    if (std::find(used_b.begin(), used_b.end(), p.b_id) != used_b.end()) continue;
    used_a.push_back(p.a_id);
    used_b.push_back(p.b_id);
    out.push_back(p);
  }
  return out;
}

std::vector<SegmentPair> pair_segments(std::span<const SegmentObservation> run_a,
                                       std::span<const SegmentObservation> run_b, double gate,
                                       std::size_t n_samples, std::uint64_t seed) {
  return pair_segments_impl(run_a, run_b, gate, n_samples, seed, true);
}

std::vector<SegmentPair> pair_segments_serial(std::span<const SegmentObservation> run_a,
                                              std::span<const SegmentObservation> run_b, double gate,
                                              std::size_t n_samples, std::uint64_t seed) {
  return pair_segments_impl(run_a, run_b, gate, n_samples, seed, false);
}

Histogram make_histogram(std::span<const double> values, double lo, double hi, double bin_width) {
  if (!(bin_width > 0.0) || !(hi > lo)) throw std::invalid_argument("make_histogram: bad range");
  Histogram h;
  h.lo = lo;
  h.bin_width = bin_width;
  const auto bins = static_cast<std::size_t>(std::ceil((hi - lo) / bin_width - 1e-9));
  h.counts.assign(bins, 0);
  for (double v : values) {
    const double f = std::floor((v - lo) / bin_width);
    const auto idx = static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(bins - 1)));
    ++h.counts[idx];
  }
  return h;
}

IoUReport make_iou_report(std::vector<SegmentPair> pairs, double bin_width, double threshold) {
  IoUReport r;
  r.threshold = threshold;
  std::vector<double> values;
  for (const auto& p : pairs) {
    values.push_back(p.estimate.iou);
    (p.estimate.iou >= threshold ? r.n_at_or_above : r.n_below)++;
  }
  r.histogram = make_histogram(values, 0.0, 1.0, bin_width);
  r.pairs = std::move(pairs);
  return r;
}

double RetrievalCurve::recall_at(std::size_t k) const {
  if (k == 0) return 0.0;
  std::size_t total = 0, hit = 0;
  for (const auto& e : entries) {
    if (!e.rank) continue;
    ++total;
    hit += *e.rank <= k;
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

std::optional<std::size_t> retrieval_rank(const Descriptor& query, const TargetMap& map, std::uint64_t true_id) {
  const auto it = std::find_if(map.entries.begin(), map.entries.end(),
                               [&](const TargetMapEntry& e) { return e.segment_id == true_id; });
  if (it == map.entries.end()) return std::nullopt;
  const double d_true = descriptor_distance(query, it->descriptor);
  std::size_t ahead = 0;
  for (const auto& e : map.entries) {
    const double d = descriptor_distance(query, e.descriptor);
    ahead += d < d_true || (d == d_true && e.segment_id < true_id);
  }
  return ahead + 1;
}

std::size_t completeness_bucket(double completeness) {
  const double c = std::clamp(completeness, 0.0, 1.0);
  const auto b = static_cast<long>(std::ceil(c * 10.0 - 1e-12)) - 1;
  return static_cast<std::size_t>(std::clamp(b, 0L, 9L));
}

static RetrievalCurve retrieval_curve_impl(std::span<const RetrievalQuery> queries,
                                           std::span<const Descriptor> descriptors, const TargetMap& map, std::size_t k_max, bool parallel) {
  if (queries.size() != descriptors.size()) throw std::invalid_argument("retrieval_curve: size mismatch");
  RetrievalCurve curve;
  curve.k_max = k_max;
  curve.entries.resize(queries.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    auto& e = curve.entries[i];
    e.query_segment_id = q.observation.segment_id;
    e.observation_index = q.observation.observation_index;
    e.true_id = q.true_id;
    e.completeness = q.final_point_count
                         ? static_cast<double>(q.observation.point_count()) / static_cast<double>(q.final_point_count)
                         : 0.0;
    e.rank = retrieval_rank(descriptors[i], map, q.true_id);
  }
  std::vector<std::vector<std::size_t>> per_bucket(10);
  for (const auto& e : curve.entries) {
    if (!e.rank) {
      ++curve.not_in_map;
      continue;
    }
    per_bucket[completeness_bucket(e.completeness)].push_back(*e.rank);
  }
  for (std::size_t b = 0; b < 10; ++b) {
    RetrievalBucket bucket;
    bucket.lo = static_cast<double>(b) / 10.0;
    bucket.hi = static_cast<double>(b + 1) / 10.0;
    const auto& ranks = per_bucket[b];
    bucket.count = ranks.size();
    if (!ranks.empty()) {
      double sum = 0.0;
      for (auto r : ranks) sum += static_cast<double>(r);
      bucket.mean_rank = sum / static_cast<double>(ranks.size());
      bucket.median_rank = static_cast<std::size_t>(rank_statistic(ranks, 0.5));
      bucket.p90_rank = static_cast<std::size_t>(rank_statistic(ranks, 0.9));
    }
    curve.buckets.push_back(bucket);
  }
  for (std::size_t k = 1; k <= k_max; ++k) curve.recall.push_back(curve.recall_at(k));
  return curve;
}

RetrievalCurve retrieval_curve(std::span<const RetrievalQuery> queries, std::span<const Descriptor> descriptors,
                               const TargetMap& map, std::size_t k_max) {
  return retrieval_curve_impl(queries, descriptors, map, k_max, true);
}

RetrievalCurve retrieval_curve_serial(std::span<const RetrievalQuery> queries, std::span<const Descriptor> descriptors,
                                      const TargetMap& map, std::size_t k_max) {
  return retrieval_curve_impl(queries, descriptors, map, k_max, false);
}

RetrievalCurve retrieval_curve(std::span<const RetrievalQuery> queries, const TargetMap& map,
                               const DescriptorBackend& backend, std::size_t k_max, std::uint64_t seed,
                               std::size_t n_sub) {
  std::vector<SegmentObservation> obs;
  obs.reserve(queries.size());
  for (const auto& q : queries) obs.push_back(q.observation);
  const auto descriptors = describe_batch(backend, obs, seed, n_sub);
  return retrieval_curve(queries, descriptors, map, k_max);
}

std::optional<Pose> interpolate_pose(std::span<const StampedPose> track, double t) {
  if (track.empty() || t < track.front().timestamp || t > track.back().timestamp) return std::nullopt;
  const auto it = std::lower_bound(track.begin(), track.end(), t,
                                   [](const StampedPose& s, double x) { return s.timestamp < x; });
  if (it->timestamp == t) return it->pose;
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double w = (t - a.timestamp) / (b.timestamp - a.timestamp);
  return Pose((1.0 - w) * a.pose.translation + w * b.pose.translation, a.pose.rotation.slerp(w, b.pose.rotation));
}

std::size_t AccuracyReport::count_within(double translation, double rotation_deg) const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const AccuracyEntry& e) {
    return e.translation_error < translation && e.rotation_error < rotation_deg;
  }));
}

AccuracyReport accuracy_report(std::span<const LocalizationResult> results,
                               std::span<const StampedPose> ground_truth) {
  AccuracyReport r;
  for (const auto& res : results) {
    const auto truth = interpolate_pose(ground_truth, res.timestamp);
    if (!truth) {
      ++r.dropped;
      continue;
    }
    const Pose estimate = compose(res.transform, res.robot_pose_local);
    AccuracyEntry e;
    e.timestamp = res.timestamp;
    e.translation_error = (estimate.translation - truth->translation).norm();
    e.rotation_error = rotation_angle_between(estimate.rotation, truth->rotation) * 180.0 / std::numbers::pi;
    r.n_below_1m += e.translation_error < 1.0;
    r.n_below_5m += e.translation_error < 5.0;
    r.entries.push_back(e);
  }
  std::vector<double> errors;
  for (const auto& e : r.entries) errors.push_back(e.translation_error);
  std::sort(errors.begin(), errors.end());
  for (std::size_t i = 0; i < errors.size(); ++i) {
    r.cumulative.emplace_back(errors[i], static_cast<double>(i + 1) / static_cast<double>(errors.size()));
  }
  return r;
}

}  // namespace segloc
