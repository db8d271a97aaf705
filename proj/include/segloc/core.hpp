#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace segloc {

using ClassId = std::uint16_t;

/// Thrown when input data (files, streams, parameters read from disk) is
/// malformed or inconsistent. Precondition violations by callers use
/// std::invalid_argument instead.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A 3D point with fused HSV color and a semantic class label.
struct EnrichedPoint {
  double x = 0.0, y = 0.0, z = 0.0;
  double h = 0.0, s = 0.0, v = 0.0;
  ClassId c = 0;
  bool color_valid = false;
  bool class_valid = false;

  Eigen::Vector3d position() const { return {x, y, z}; }
  void set_position(const Eigen::Vector3d& p) {
    x = p.x();
    y = p.y();
    z = p.z();
  }
};

/// Rigid transform stored as translation + unit quaternion.
struct Pose {
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();

  Pose() = default;
  Pose(const Eigen::Vector3d& t, const Eigen::Quaterniond& q);

  static Pose identity() { return {}; }
  static Pose from_yaw(double yaw, const Eigen::Vector3d& t = Eigen::Vector3d::Zero());

  Eigen::Matrix3d rotation_matrix() const { return rotation.toRotationMatrix(); }
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);
Eigen::Vector3d transform_point(const Pose& p, const Eigen::Vector3d& pt);

/// Geodesic angle between the two rotations, radians.
double rotation_angle_between(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b);

/// Shortest distance between two hues on the unit circle, in [0, 0.5].
double hue_difference(double h1, double h2);

struct StampedPose {
  double timestamp = 0.0;
  Pose pose;
};

struct PointCloudFrame {
  double timestamp = 0.0;
  Pose pose;  // world <- sensor
  std::vector<EnrichedPoint> points;
};

struct ClassEntry {
  ClassId id = 0;
  std::string name;
  bool is_dynamic = false;
  bool is_ground = false;
};

class ClassTable {
 public:
  ClassTable() = default;
  explicit ClassTable(std::vector<ClassEntry> entries);

  const std::vector<ClassEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const ClassEntry* find(ClassId id) const;
  bool contains(ClassId id) const { return find(id) != nullptr; }
  bool is_dynamic(ClassId id) const;
  bool is_ground(ClassId id) const;

  /// Dense index of a class id in [0, size()); used for histogram layouts.
  std::optional<std::size_t> index_of(ClassId id) const;

  /// FNV-1a over the canonical text serialization.
  std::uint64_t hash() const;

 private:
  std::vector<ClassEntry> entries_;
};

/// 64-bit FNV-1a; shared by the table and backend fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Deterministic per-stream seed derivation (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace segloc
