#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segloc/core.hpp"

namespace segloc {

struct PinholeCamera {
  std::string name;
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  Pose extrinsic;  // camera <- sensor

  /// Throws std::invalid_argument when intrinsics are inconsistent.
  void validate() const;
};

/// Per-pixel RGB in [0,1] plus the class id from an external segmenter.
struct LabeledImage {
  int width = 0, height = 0;
  std::vector<std::array<float, 3>> color;  // row-major
  std::vector<ClassId> labels;              // row-major

  LabeledImage() = default;
  LabeledImage(int w, int h);

  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
};

struct Hsv {
  double h = 0.0, s = 0.0, v = 0.0;
};

Hsv rgb_to_hsv(double r, double g, double b);
std::array<double, 3> hsv_to_rgb(const Hsv& hsv);

struct Pixel {
  double u = 0.0, v = 0.0;
};

std::optional<Pixel> project_point(const PinholeCamera& cam, const Eigen::Vector3d& pt_sensor);

struct CameraView {
  PinholeCamera camera;
  LabeledImage image;
};

/// Colors and labels each point from the first camera (in list order) that
/// sees it. Points seen by no camera keep both validity flags false.
PointCloudFrame enrich_cloud(const PointCloudFrame& frame, const std::vector<CameraView>& cameras);

enum class GroundStatus { kRemoved, kNoGround, kDegenerate };

struct GroundRemovalResult {
  PointCloudFrame frame;
  GroundStatus status = GroundStatus::kNoGround;
  Eigen::Vector4d plane = Eigen::Vector4d::Zero();  // n.x + d = 0, |n| = 1
};

/// Fits a plane to ground-labeled points and drops them together with every
/// point closer than proximity_eps to that plane.
GroundRemovalResult remove_ground(const PointCloudFrame& frame, const ClassTable& classes,
                                  double proximity_eps);

// Calibration text format, one block per camera in priority order:
//   camera <name>
//   <fx> <fy> <cx> <cy> <width> <height>
//   extrinsic <tx> <ty> <tz> <qw> <qx> <qy> <qz>
std::vector<PinholeCamera> read_calibration(const std::filesystem::path& path);
std::vector<PinholeCamera> parse_calibration(const std::string& text);
void write_calibration(const std::filesystem::path& path, const std::vector<PinholeCamera>& cams);

}  // namespace segloc
