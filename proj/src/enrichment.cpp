#include "segloc/enrichment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace segloc {

void PinholeCamera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("camera: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera: image size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw std::invalid_argument("camera: principal point outside image");
  }
}

LabeledImage::LabeledImage(int w, int h)
    : width(w), height(h),
      color(static_cast<std::size_t>(w) * h, {0.f, 0.f, 0.f}),
      labels(static_cast<std::size_t>(w) * h, 0) {}

Hsv rgb_to_hsv(double r, double g, double b) {
  auto in_range = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_range(r) || !in_range(g) || !in_range(b)) {
    throw std::invalid_argument("rgb_to_hsv: component outside [0,1]");
  }
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0.0 ? delta / mx : 0.0;
  if (delta <= 0.0 || out.s == 0.0) {
    out.h = 0.0;
    return out;
  }
  double h6;
  if (mx == r) {
    h6 = (g - b) / delta;
  } else if (mx == g) {
    h6 = 2.0 + (b - r) / delta;
  } else {
    h6 = 4.0 + (r - g) / delta;
  }
  double h = h6 / 6.0;
  if (h < 0.0) h += 1.0;
  if (h >= 1.0) h -= 1.0;
  out.h = h;
  return out;
}

std::array<double, 3> hsv_to_rgb(const Hsv& hsv) {
  const double h6 = hsv.h * 6.0;
  const double c = hsv.v * hsv.s;
  const double x = c * (1.0 - std::abs(std::fmod(h6, 2.0) - 1.0));
  const double m = hsv.v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(std::floor(h6)) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  return {r + m, g + m, b + m};
}

std::optional<Pixel> project_point(const PinholeCamera& cam, const Eigen::Vector3d& pt_sensor) {
  const Eigen::Vector3d pc = transform_point(cam.extrinsic, pt_sensor);
  if (!(pc.z() > 0.0)) return std::nullopt;
  const double u = cam.fx * pc.x() / pc.z() + cam.cx;
  const double v = cam.fy * pc.y() / pc.z() + cam.cy;
  if (!(u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height)) return std::nullopt;
  return Pixel{u, v};
}

PointCloudFrame enrich_cloud(const PointCloudFrame& frame, const std::vector<CameraView>& cameras) {
  for (const auto& view : cameras) {
    if (view.image.width != view.camera.width || view.image.height != view.camera.height) {
      throw std::invalid_argument("enrich_cloud: image size does not match camera " + view.camera.name);
    }
  }
  PointCloudFrame out = frame;
  for (auto& p : out.points) {
    p.color_valid = false;
    p.class_valid = false;
    for (const auto& view : cameras) {
      const auto px = project_point(view.camera, p.position());
      if (!px) continue;
      const int u = std::min(static_cast<int>(px->u), view.image.width - 1);
      const int v = std::min(static_cast<int>(px->v), view.image.height - 1);
      const std::size_t idx = view.image.index(u, v);
      const auto& rgb = view.image.color[idx];
      const Hsv hsv = rgb_to_hsv(std::clamp<double>(rgb[0], 0.0, 1.0),
                                 std::clamp<double>(rgb[1], 0.0, 1.0),
                                 std::clamp<double>(rgb[2], 0.0, 1.0));
      p.h = hsv.h;
      p.s = hsv.s;
      p.v = hsv.v;
      p.c = view.image.labels[idx];
      p.color_valid = true;
      p.class_valid = true;
      break;
    }
  }
  return out;
}

GroundRemovalResult remove_ground(const PointCloudFrame& frame, const ClassTable& classes,
                                  double proximity_eps) {
  GroundRemovalResult result;
  result.frame = frame;

  std::vector<Eigen::Vector3d> ground;
  for (const auto& p : frame.points) {
    if (p.class_valid && classes.is_ground(p.c)) ground.push_back(p.position());
  }
  if (ground.size() < 3) {
    result.status = GroundStatus::kNoGround;
    return result;
  }

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& g : ground) mean += g;
  mean /= static_cast<double>(ground.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& g : ground) cov += (g - mean) * (g - mean).transpose();
  cov /= static_cast<double>(ground.size());

  // Eigenvalues ascending: the smallest axis is the plane normal, and a
  // vanishing middle eigenvalue means the ground points are collinear.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  const Eigen::Vector3d ev = es.eigenvalues();
  const double scale = std::max(ev(2), 1e-300);
  if (ev(1) <= 1e-10 * scale || ev(2) <= 0.0) {
    result.status = GroundStatus::kDegenerate;
    return result;
  }
  Eigen::Vector3d n = es.eigenvectors().col(0).normalized();
  if (n.z() < 0.0) n = -n;
  const double d = -n.dot(mean);
  result.plane << n, d;

  result.frame.points.clear();
  for (const auto& p : frame.points) {
    if (p.class_valid && classes.is_ground(p.c)) continue;
    if (std::abs(n.dot(p.position()) + d) < proximity_eps) continue;
    result.frame.points.push_back(p);
  }
  result.status = GroundStatus::kRemoved;
  return result;
}

std::vector<PinholeCamera> parse_calibration(const std::string& text) {
  std::vector<PinholeCamera> cams;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  enum { kCamera, kIntrinsics, kExtrinsic } expect = kCamera;
  auto fail = [&](const std::string& msg) {
    throw DataError("calibration line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    if (expect == kCamera) {
      std::string kw, name;
      if (!(ls >> kw >> name) || kw != "camera") fail("expected 'camera <name>'");
      cams.emplace_back();
      cams.back().name = name;
      expect = kIntrinsics;
    } else if (expect == kIntrinsics) {
      auto& c = cams.back();
      if (!(ls >> c.fx >> c.fy >> c.cx >> c.cy >> c.width >> c.height)) {
        fail("expected 'fx fy cx cy width height'");
      }
      expect = kExtrinsic;
    } else {
      std::string kw;
      double tx, ty, tz, qw, qx, qy, qz;
      if (!(ls >> kw >> tx >> ty >> tz >> qw >> qx >> qy >> qz) || kw != "extrinsic") {
        fail("expected 'extrinsic tx ty tz qw qx qy qz'");
      }
      const Eigen::Quaterniond q(qw, qx, qy, qz);
      if (q.norm() < 1e-12) fail("zero quaternion");
      cams.back().extrinsic = Pose({tx, ty, tz}, q);
      try {
        cams.back().validate();
      } catch (const std::invalid_argument& e) {
        fail(e.what());
      }
      expect = kCamera;
    }
  }
  if (expect != kCamera) throw DataError("calibration: truncated camera block");
  return cams;
}

std::vector<PinholeCamera> read_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open calibration file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_calibration(ss.str());
}

void write_calibration(const std::filesystem::path& path, const std::vector<PinholeCamera>& cams) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write calibration file " + path.string());
  out << std::setprecision(17);
  for (const auto& c : cams) {
    const auto& q = c.extrinsic.rotation;
    const auto& t = c.extrinsic.translation;
    out << "camera " << c.name << '\n'
        << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy << ' ' << c.width << ' ' << c.height << '\n'
        << "extrinsic " << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.w() << ' ' << q.x() << ' '
        << q.y() << ' ' << q.z() << '\n';
  }
}

}  // namespace segloc
