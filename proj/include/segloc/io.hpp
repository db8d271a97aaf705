#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segloc/core.hpp"
#include "segloc/enrichment.hpp"
#include "segloc/localmap.hpp"

namespace segloc {

// Cloud file: "SSMC", u16 version, u32 count; per point x,y,z,h,s,v as f32,
// class u16, flags u8 (bit 0 color valid, bit 1 class valid).
void write_cloud(const std::filesystem::path& path, const std::vector<EnrichedPoint>& points);
std::vector<EnrichedPoint> read_cloud(const std::filesystem::path& path);

// Ground-truth object ids, one per cloud point: "SSMG", u16 version, u32
// count, u32 ids. Object id 0 means no object.
void write_object_ids(const std::filesystem::path& path, const std::vector<std::uint32_t>& ids);
std::vector<std::uint32_t> read_object_ids(const std::filesystem::path& path);

// Pose text: one "timestamp tx ty tz qw qx qy qz" line per pose.
void write_poses(const std::filesystem::path& path, const std::vector<StampedPose>& poses);
std::vector<StampedPose> read_poses(const std::filesystem::path& path);

// Class table text: one "id name dynamic ground" line per class (flags 0/1).
void write_class_table(const std::filesystem::path& path, const ClassTable& table);
ClassTable read_class_table(const std::filesystem::path& path);
ClassTable parse_class_table(const std::string& text);

// Binary PPM (P6, 8-bit) for color and PGM (P5, 16-bit) for labels.
void write_image(const std::filesystem::path& color_path, const std::filesystem::path& label_path,
                 const LabeledImage& image);
LabeledImage read_image(const std::filesystem::path& color_path, const std::filesystem::path& label_path);

/// An observation with the ground-truth object it belongs to (0 unknown).
struct LabeledObservation {
  SegmentObservation observation;
  std::uint64_t object_id = 0;
};

// Observation file: "SSMO", u16 version, u32 count; per observation u64
// segment id, u32 index, f64 timestamp, u8 flags (bit 0 final, bit 1
// partial eviction), u64 object id, u32 point count, point records as in
// the cloud file.
void write_observations(const std::filesystem::path& path, const std::vector<LabeledObservation>& observations);
std::vector<LabeledObservation> read_observations(const std::filesystem::path& path);

struct FrameEntry {
  double timestamp = 0.0;
  std::filesystem::path cloud;
  std::optional<std::filesystem::path> object_ids;
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> images;  // per camera: color, labels
};

/// manifest.txt in the dataset root:
///   classes <file>
///   poses <file>
///   [calibration <file>]
///   [ground_truth <file>]      true poses in the map frame
///   frame <timestamp> <cloud> <ids|-> [<color> <labels>]...
/// Paths are relative to the root.
struct DatasetManifest {
  std::filesystem::path root;
  std::filesystem::path classes;
  std::filesystem::path poses;
  std::optional<std::filesystem::path> calibration;
  std::optional<std::filesystem::path> ground_truth;
  std::vector<FrameEntry> frames;

  std::filesystem::path resolve(const std::filesystem::path& p) const { return root / p; }
};

void write_manifest(const DatasetManifest& manifest);
/// Reads <root>/manifest.txt and checks that every file exists, the pose
/// file matches the frame list, and timestamps strictly increase.
DatasetManifest read_manifest(const std::filesystem::path& root);

/// Everything needed to stream a dataset.
struct Dataset {
  DatasetManifest manifest;
  ClassTable classes;
  std::vector<PinholeCamera> cameras;
  std::vector<StampedPose> poses;
  std::vector<StampedPose> ground_truth;  // empty when absent
};

Dataset open_dataset(const std::filesystem::path& root);
PointCloudFrame load_frame(const Dataset& data, std::size_t index);
std::vector<CameraView> load_views(const Dataset& data, std::size_t index);

}  // namespace segloc
