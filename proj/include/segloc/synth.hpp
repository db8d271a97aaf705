#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segloc/core.hpp"
#include "segloc/enrichment.hpp"
#include "segloc/io.hpp"

namespace segloc {

enum class PrimitiveKind { kBox, kCylinder, kPlane };

/// Solid in its own frame: a box centered at the origin with full extents
/// size; a vertical cylinder with radius size.x and height size.z, base at
/// z = 0; a rectangle in z = 0 with extents size.x by size.y.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kBox;
  Pose pose;  // world <- primitive
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  ClassId cls = 0;
  Hsv color;
  double color_noise = 0.0;  // sigma applied to h, s and v
  std::uint32_t object_id = 0;  // assigned from list order when 0

  void validate() const;
};

struct SensorModel {
  double h_fov_deg = 270.0;  // centered on the sensor x axis
  double v_min_deg = -15.0;
  double v_max_deg = 15.0;
  double h_res_deg = 1.0;
  double v_res_deg = 1.0;
  double max_range = 30.0;
  double range_noise = 0.0;

  void validate() const;
  std::size_t columns() const;
  std::size_t rows() const;
};

struct SceneSpec {
  ClassTable classes;
  std::vector<Primitive> primitives;
  std::vector<Eigen::Vector3d> waypoints;
  double speed = 2.0;  // m/s
  double rate = 2.0;   // frames per second
  bool closed_loop = false;
  bool reverse = false;  // traverse the waypoints backwards
  SensorModel sensor;
  double label_noise = 0.0;
  std::uint64_t seed = 1;
  std::vector<PinholeCamera> cameras;  // when set, images are rendered and clouds left unenriched
  Pose frame_offset;  // dataset frame <- ground-truth frame
  double start_time = 0.0;

  void validate() const;
};

struct RayHit {
  double range = 0.0;
  std::size_t primitive = 0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

/// Nearest intersection of the ray with any primitive within max_range.
std::optional<RayHit> cast_ray(const std::vector<Primitive>& primitives, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& direction, double max_range);

/// Sensor poses along the trajectory at the configured rate; heading follows
/// the direction of travel.
std::vector<StampedPose> trajectory_poses(const SceneSpec& spec);

struct SyntheticScan {
  std::vector<EnrichedPoint> points;  // sensor frame, enriched with true values
  std::vector<std::uint32_t> object_ids;
};

/// One scan from a sensor at pose (world <- sensor). Columns are cast in an
/// OpenMP loop, each with its own random stream.
SyntheticScan scan(const SceneSpec& spec, const Pose& pose, std::uint64_t seed);
/// Serial reference of scan.
SyntheticScan scan_serial(const SceneSpec& spec, const Pose& pose, std::uint64_t seed);

/// Camera image by casting one ray per pixel; misses are black with label 0.
LabeledImage render_image(const SceneSpec& spec, const Pose& sensor_pose, const PinholeCamera& camera,
                          std::uint64_t seed);
/// Serial reference of render_image.
LabeledImage render_image_serial(const SceneSpec& spec, const Pose& sensor_pose, const PinholeCamera& camera,
                                 std::uint64_t seed);

/// Writes a full dataset under out and returns its manifest. Poses are
/// written in the dataset frame; ground truth in the scene frame.
DatasetManifest generate_dataset(const SceneSpec& spec, const std::filesystem::path& out);

/// Scene spec text. Lines:
///   class <id> <name> <dynamic 0/1> <ground 0/1>
///   box|cylinder|plane <x> <y> <z> <yaw_deg> <sx> <sy> <sz> <class> <h> <s> <v> [color_noise]
///   waypoint <x> <y> <z>
///   speed|rate|label_noise|seed|h_fov|v_min|v_max|h_res|v_res|max_range|range_noise <value>
///   closed_loop|reverse <0/1>
///   offset <tx> <ty> <tz> <yaw_deg>
///   camera <name> <fx> <fy> <cx> <cy> <width> <height> <tx> <ty> <tz> <qw> <qx> <qy> <qz>
SceneSpec parse_scene_spec(const std::string& text);
SceneSpec read_scene_spec(const std::filesystem::path& path);

/// Classes used by the built-in scenes: 0 ground, 1 building, 2 tree,
/// 3 pole, 4 sign, 5 car (dynamic), 6 bench, 7 hedge, 8 bin, 9 kiosk.
ClassTable default_classes();

struct LoopSceneParams {
  double width = 60.0;   // loop extents, meters
  double height = 40.0;
  std::size_t objects = 90;
  double corridor = 3.0;  // object-free half-width around the path
  double spread = 10.0;   // objects placed up to corridor + spread from the path
  std::uint64_t seed = 7;
};

/// Rectangular loop with a ground plane and randomized objects on both sides.
SceneSpec loop_scene(const LoopSceneParams& params);

struct ObjectSetParams {
  std::size_t objects = 240;
  std::size_t views = 6;  // observations per object, progressively accumulated
  double voxel_size = 0.1;
  double label_noise = 0.02;
  double color_noise = 0.02;
  std::uint64_t seed = 11;
};

/// Observations of isolated objects seen from a sensor sweeping around
/// them. Each object gets views observations whose points (voxel
/// representatives) accumulate; the last one is final. Segment ids equal
/// object ids. Sensor heading and object pose are randomized per object.
std::vector<LabeledObservation> synthesize_object_observations(const ObjectSetParams& params,
                                                               std::uint32_t first_object_id = 1);
/// Serial reference of synthesize_object_observations.
std::vector<LabeledObservation> synthesize_object_observations_serial(const ObjectSetParams& params,
                                                                      std::uint32_t first_object_id = 1);

}  // namespace segloc
