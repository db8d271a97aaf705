#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace segloc {

/// 3D convex hull as triangles with outward planes. Built incrementally;
/// collinear or coplanar inputs produce a degenerate hull of zero volume.
class ConvexHull {
 public:
  struct Face {
    std::array<int, 3> v;
    Eigen::Vector3d normal;  // unit, outward
    double offset = 0.0;     // normal . x <= offset inside
  };

  static ConvexHull build(std::span<const Eigen::Vector3d> points);

  bool degenerate() const { return faces_.empty(); }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<Eigen::Vector3d>& vertices() const { return vertices_; }
  /// Inside test against the distinct face planes, with the build tolerance.
  bool contains(const Eigen::Vector3d& x) const;
  std::size_t plane_count() const { return planes_.size(); }
  double volume() const;
  Eigen::Vector3d min_corner() const { return min_; }
  Eigen::Vector3d max_corner() const { return max_; }

 private:
  std::vector<Eigen::Vector3d> vertices_;
  std::vector<Face> faces_;
  std::vector<Eigen::Vector4d> planes_;  // coplanar faces merged: (normal, offset)
  Eigen::Vector3d min_ = Eigen::Vector3d::Zero(), max_ = Eigen::Vector3d::Zero();
  double tolerance_ = 0.0;
};

}  // namespace segloc
