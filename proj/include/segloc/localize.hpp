#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "segloc/core.hpp"
#include "segloc/descriptor.hpp"
#include "segloc/localmap.hpp"

namespace segloc {

struct TargetMapEntry {
  std::uint64_t segment_id = 0;
  Eigen::Vector3f centroid = Eigen::Vector3f::Zero();  // world frame
  Descriptor descriptor;

  friend bool operator==(const TargetMapEntry&, const TargetMapEntry&) = default;
};

struct TargetMap {
  std::uint16_t dim = 0;
  std::uint64_t class_table_hash = 0;
  std::uint64_t backend_hash = 0;
  std::vector<TargetMapEntry> entries;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
  void validate() const;
  friend bool operator==(const TargetMap&, const TargetMap&) = default;
};

/// One entry per segment from its final observation. Throws
/// std::invalid_argument on two finals for one segment id.
TargetMap build_target_map(std::span<const SegmentObservation> observations, const DescriptorBackend& backend,
                           std::uint64_t seed, std::size_t n_sub = kDefaultSubsample);
/// Same, with descriptors already computed (parallel to observations).
TargetMap build_target_map(std::span<const SegmentObservation> observations, std::span<const Descriptor> descriptors,
                           const DescriptorBackend& backend);

// Map file: "SSMM", u16 version, u16 D, u64 class-table hash, u64 backend
// hash, u32 entry count; entries: u64 id, 3 x f32 centroid, D x f32.
void save_map(const TargetMap& map, const std::filesystem::path& path);

enum class MapLoadErrorKind { kIo, kBadMagic, kBadVersion, kBadDimension, kTruncated };

class MapLoadError : public DataError {
 public:
  MapLoadError(MapLoadErrorKind kind, const std::string& what) : DataError(what), kind_(kind) {}
  MapLoadErrorKind kind() const { return kind_; }

 private:
  MapLoadErrorKind kind_;
};

/// expected_dim = 0 accepts any dimension.
TargetMap load_map(const std::filesystem::path& path, std::uint16_t expected_dim = 0);
std::size_t map_file_size(std::size_t entries, std::size_t dim);

struct MatchCandidate {
  std::uint64_t query_id = 0;
  Eigen::Vector3d query_centroid = Eigen::Vector3d::Zero();
  std::uint64_t target_id = 0;
  Eigen::Vector3d target_centroid = Eigen::Vector3d::Zero();
  double distance = 0.0;
};

/// The k nearest map entries by descriptor distance, ties to the smaller
/// segment id. Distances are computed in an OpenMP loop.
std::vector<MatchCandidate> knn(const Descriptor& query, const TargetMap& map, std::size_t k,
                                std::uint64_t query_id = 0, const Eigen::Vector3d& query_centroid = Eigen::Vector3d::Zero());
/// Serial reference of knn.
std::vector<MatchCandidate> knn_serial(const Descriptor& query, const TargetMap& map, std::size_t k,
                                       std::uint64_t query_id = 0,
                                       const Eigen::Vector3d& query_centroid = Eigen::Vector3d::Zero());

using PointPair = std::pair<Eigen::Vector3d, Eigen::Vector3d>;  // (source q, target p)

/// Least-squares R, t minimizing sum |R q + t - p|^2. Throws
/// std::invalid_argument on fewer than 3 pairs or collinear sources.
Pose rigid_align(std::span<const PointPair> pairs);
std::optional<Pose> try_rigid_align(std::span<const PointPair> pairs);

struct RansacParams {
  std::size_t min_inliers = 6;
  double max_centroid_dist = 0.4;
  std::size_t max_iterations = 2000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LocalizationResult {
  Pose transform;  // target <- local
  std::vector<MatchCandidate> inliers;
  double timestamp = 0.0;
  std::size_t inlier_count = 0;
  Pose robot_pose_local;  // robot pose in the local frame at timestamp
};

/// Indices of inlier candidates under pose: within max_dist, closest one
/// per query segment. Sorted by candidate index.
std::vector<std::size_t> find_inliers(std::span<const MatchCandidate> candidates, const Pose& pose, double max_dist);

/// Indices of the 3-candidate minimal sample for an iteration, or nothing
/// when no valid sample (distinct queries and targets) is found. Candidates
/// are drawn with weight 1 / (r + 1) for descriptor rank r within their query.
std::optional<std::array<std::size_t, 3>> ransac_sample(std::span<const MatchCandidate> candidates,
                                                        std::uint64_t seed, std::size_t iteration);

/// Samples whose pairwise centroid distances disagree between the frames by
/// more than 2 * max_centroid_dist are discarded before alignment.
std::optional<LocalizationResult> ransac_verify(std::span<const MatchCandidate> candidates, const RansacParams& params);
/// Serial reference of ransac_verify.
std::optional<LocalizationResult> ransac_verify_serial(std::span<const MatchCandidate> candidates,
                                                       const RansacParams& params);

struct LocalSegment {
  std::uint64_t segment_id = 0;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  Descriptor descriptor;
};

/// k-NN per local segment, pooled candidates, RANSAC. Throws
/// std::invalid_argument when backend_hash differs from the map's.
std::optional<LocalizationResult> localize_step(std::span<const LocalSegment> local, const TargetMap& map,
                                                std::size_t k, const RansacParams& params,
                                                std::uint64_t backend_hash);

}  // namespace segloc
