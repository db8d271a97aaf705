#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "segloc/core.hpp"

namespace segloc {

struct SegmentationParams {
  double d_segment = 0.3;
  double t_h = 0.1;
  double p_h = 0.05;
  double p_c = 0.15;
  std::size_t min_segment_points = 100;

  void validate() const;
  /// Non-fatal issues, e.g. penalties that make the constraint hard.
  std::vector<std::string> warnings() const;
};

struct LocalMapParams {
  double radius = 50.0;
  double voxel_size = 0.1;
  bool filter_dynamic = true;

  void validate() const;
};

struct VoxelKey {
  std::int32_t x = 0, y = 0, z = 0;
  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;
  friend auto operator<=>(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(k.x);
    h = h * 0x9E3779B185EBCA87ULL ^ static_cast<std::uint32_t>(k.y);
    h = h * 0xC2B2AE3D27D4EB4FULL ^ static_cast<std::uint32_t>(k.z);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

/// Running HSV average. Hue is averaged on the circle.
struct ColorMean {
  double cos_sum = 0.0, sin_sum = 0.0;
  double s_sum = 0.0, v_sum = 0.0;
  std::uint32_t count = 0;
  double last_h = 0.0;

  void add(double h, double s, double v);
  double h() const;
  double s() const { return count ? s_sum / count : 0.0; }
  double v() const { return count ? v_sum / count : 0.0; }
};

struct Voxel {
  VoxelKey key;
  ColorMean color;
  std::vector<std::pair<ClassId, std::uint32_t>> class_counts;  // sorted by id
  std::optional<std::uint64_t> segment_id;
  Eigen::Vector3d position_sum = Eigen::Vector3d::Zero();
  std::uint32_t point_count = 0;

  Eigen::Vector3d centroid() const { return position_sum / static_cast<double>(point_count); }
  void add_class(ClassId c);
  /// Centroid with fused color and majority class.
  EnrichedPoint representative() const;
};

std::optional<ClassId> majority_class(const Voxel& v);

double f_h(double delta_h, const SegmentationParams& params);
double f_c(ClassId c1, ClassId c2, const SegmentationParams& params);
/// Augmented distance; missing color or class on either side adds no penalty.
double pair_distance(const EnrichedPoint& p1, const EnrichedPoint& p2, const SegmentationParams& params);

struct SegmentObservation {
  std::uint64_t segment_id = 0;
  std::uint32_t observation_index = 0;
  double timestamp = 0.0;
  std::vector<EnrichedPoint> points;  // world frame
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  bool is_final = false;
  bool is_partial_eviction = false;

  std::size_t point_count() const { return points.size(); }
  void update_centroid();
};

struct SegmentationDelta {
  std::vector<std::uint64_t> created;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> merged;  // (survivor, absorbed)
  std::vector<std::uint64_t> grown;
};

/// Robot-following cylindrical voxel grid with incremental segmentation.
/// Single writer: call insert_frame, grow_segments and recenter in stream order.
class LocalMap {
 public:
  LocalMap(LocalMapParams map_params, SegmentationParams seg_params, ClassTable classes);

  VoxelKey key_of(const Eigen::Vector3d& world) const;

  /// Fuses the frame (transformed by frame.pose) into the grid and returns
  /// the keys of voxels that became active with this frame.
  std::vector<VoxelKey> insert_frame(const PointCloudFrame& frame);

  /// Single-linkage growth over newly active voxels.
  SegmentationDelta grow_segments(const std::vector<VoxelKey>& new_voxels);

  /// Evicts voxels farther than the radius (x,y only) from center and emits
  /// observations: finals for fully evicted segments, the evicted part of
  /// partially evicted ones, and snapshots of segments that grew.
  std::vector<SegmentObservation> recenter(const Eigen::Vector3d& center, double timestamp);

  /// Finalizes every live eligible segment and clears the map.
  std::vector<SegmentObservation> flush(double timestamp);

  /// Latest state of every live eligible segment, not recorded as emitted.
  std::vector<SegmentObservation> current_observations(double timestamp) const;

  const Voxel* voxel(const VoxelKey& key) const;
  std::size_t voxel_count() const { return voxels_.size(); }
  std::size_t segment_count() const { return segments_.size(); }
  /// segment id -> sorted member keys
  std::map<std::uint64_t, std::vector<VoxelKey>> partition() const;

  const LocalMapParams& map_params() const { return map_params_; }
  const SegmentationParams& segmentation_params() const { return seg_params_; }
  const ClassTable& classes() const { return classes_; }

 private:
  struct Segment {
    std::uint64_t id = 0;
    std::vector<VoxelKey> members;
    std::size_t last_emitted_count = 0;
    std::uint32_t next_observation = 0;
  };

  SegmentObservation make_observation(const Segment& seg, const std::vector<VoxelKey>& keys,
                                      double timestamp) const;
  void merge_into(Segment& survivor, std::uint64_t absorbed_id);

  LocalMapParams map_params_;
  SegmentationParams seg_params_;
  ClassTable classes_;
  std::unordered_map<VoxelKey, Voxel, VoxelKeyHash> voxels_;
  std::map<std::uint64_t, Segment> segments_;
  std::uint64_t next_segment_id_ = 1;
  int search_cells_ = 1;
};

}  // namespace segloc
