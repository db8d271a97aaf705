#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "segloc/core.hpp"
#include "segloc/descriptor.hpp"
#include "segloc/localize.hpp"
#include "segloc/localmap.hpp"

namespace segloc {

inline constexpr std::size_t kDefaultIoUSamples = 20000;
inline constexpr double kConsistentIoU = 0.33;
inline constexpr double kDefaultPairingGate = 2.0;

struct IoUEstimate {
  double iou = 0.0;
  double std_error = 0.0;
  bool degenerate = false;
  std::size_t union_hits = 0;
  std::size_t intersection_hits = 0;
};

/// Monte-Carlo IoU of the convex hulls of a and b, sampled uniformly in the
/// bounding box of both. Samples are drawn in fixed-size chunks with
/// per-chunk seeds, so the result does not depend on the thread count.
IoUEstimate hull_iou(std::span<const Eigen::Vector3d> a, std::span<const Eigen::Vector3d> b,
                     std::size_t n_samples = kDefaultIoUSamples, std::uint64_t seed = 1);
/// Serial reference of hull_iou.
IoUEstimate hull_iou_serial(std::span<const Eigen::Vector3d> a, std::span<const Eigen::Vector3d> b,
                            std::size_t n_samples = kDefaultIoUSamples, std::uint64_t seed = 1);

std::vector<Eigen::Vector3d> positions(const SegmentObservation& obs);

struct SegmentPair {
  std::uint64_t a_id = 0;
  std::uint64_t b_id = 0;
  IoUEstimate estimate;
};

/// Greedy maximum-IoU matching of segments whose centroids lie within gate.
std::vector<SegmentPair> pair_segments(std::span<const SegmentObservation> run_a,
                                       std::span<const SegmentObservation> run_b,
                                       double gate = kDefaultPairingGate,
                                       std::size_t n_samples = kDefaultIoUSamples, std::uint64_t seed = 1);
/// Serial reference of pair_segments.
std::vector<SegmentPair> pair_segments_serial(std::span<const SegmentObservation> run_a,
                                              std::span<const SegmentObservation> run_b,
                                              double gate = kDefaultPairingGate,
                                              std::size_t n_samples = kDefaultIoUSamples, std::uint64_t seed = 1);

struct Histogram {
  double lo = 0.0;
  double bin_width = 0.1;
  std::vector<std::size_t> counts;
};

/// Values outside [lo, hi] are clamped into the edge bins; hi lands in the
/// last bin.
Histogram make_histogram(std::span<const double> values, double lo, double hi, double bin_width);

struct IoUReport {
  std::vector<SegmentPair> pairs;
  Histogram histogram;  // over [0, 1]
  std::size_t n_at_or_above = 0;
  std::size_t n_below = 0;
  double threshold = kConsistentIoU;
};

IoUReport make_iou_report(std::vector<SegmentPair> pairs, double bin_width = 0.1, double threshold = kConsistentIoU);

struct RetrievalQuery {
  SegmentObservation observation;
  std::uint64_t true_id = 0;  // segment id of the matching map entry
  std::size_t final_point_count = 0;
};

struct RetrievalEntry {
  std::uint64_t query_segment_id = 0;
  std::uint32_t observation_index = 0;
  std::uint64_t true_id = 0;
  double completeness = 0.0;
  std::optional<std::size_t> rank;  // none: true id not in map
};

struct RetrievalBucket {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double mean_rank = 0.0;
  std::size_t median_rank = 0;
  std::size_t p90_rank = 0;
};

struct RetrievalCurve {
  std::vector<RetrievalEntry> entries;
  std::vector<RetrievalBucket> buckets;  // ten 10% completeness buckets
  std::size_t not_in_map = 0;
  std::size_t k_max = 0;
  std::vector<double> recall;  // recall[k-1] for k = 1..k_max

  double recall_at(std::size_t k) const;
};

/// 1 + number of entries strictly ahead of the true entry under
/// (distance, id) ordering; none when true_id is not in the map.
std::optional<std::size_t> retrieval_rank(const Descriptor& query, const TargetMap& map, std::uint64_t true_id);

/// Completeness bucket in [0, 9] for a ratio in (0, 1]; values above 1 land
/// in the last bucket.
std::size_t completeness_bucket(double completeness);

RetrievalCurve retrieval_curve(std::span<const RetrievalQuery> queries, std::span<const Descriptor> descriptors,
                               const TargetMap& map, std::size_t k_max);
/// Serial reference of retrieval_curve.
RetrievalCurve retrieval_curve_serial(std::span<const RetrievalQuery> queries, std::span<const Descriptor> descriptors,
                                      const TargetMap& map, std::size_t k_max);
RetrievalCurve retrieval_curve(std::span<const RetrievalQuery> queries, const TargetMap& map,
                               const DescriptorBackend& backend, std::size_t k_max, std::uint64_t seed,
                               std::size_t n_sub = kDefaultSubsample);

/// Linear in translation, spherical in rotation. Requires timestamps sorted
/// ascending; none outside [first, last].
std::optional<Pose> interpolate_pose(std::span<const StampedPose> track, double t);

struct AccuracyEntry {
  double timestamp = 0.0;
  double translation_error = 0.0;  // meters
  double rotation_error = 0.0;     // degrees
};

struct AccuracyReport {
  std::vector<AccuracyEntry> entries;
  std::size_t n_below_1m = 0;
  std::size_t n_below_5m = 0;
  std::size_t dropped = 0;  // timestamps outside the ground-truth range
  std::vector<std::pair<double, double>> cumulative;  // (translation error, fraction <= error)

  std::size_t count_within(double translation, double rotation_deg) const;
};

/// Robot pose estimate = transform * robot_pose_local, compared with the
/// interpolated ground truth.
AccuracyReport accuracy_report(std::span<const LocalizationResult> results,
                               std::span<const StampedPose> ground_truth);

}  // namespace segloc
