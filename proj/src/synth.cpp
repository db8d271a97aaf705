#include "segloc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "segloc/localmap.hpp"

namespace segloc {

namespace fs = std::filesystem;

namespace {

constexpr double kRayEps = 1e-9;
constexpr double kDeg = std::numbers::pi / 180.0;

std::optional<double> intersect_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& half) {
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (std::abs(o[a]) > half[a]) return std::nullopt;
      continue;
    }
    double ta = (-half[a] - o[a]) / d[a], tb = (half[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t1 < kRayEps) return std::nullopt;
  return t0 > kRayEps ? t0 : t1;
}

std::optional<double> intersect_cylinder(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double r, double h) {
  std::optional<double> best;
  auto consider = [&](double t) {
    if (t > kRayEps && (!best || t < *best)) best = t;
  };
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-15) {
    const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
    const double c = o.x() * o.x() + o.y() * o.y() - r * r;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double s = std::sqrt(disc);
      for (double t : {(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)}) {
        const double z = o.z() + t * d.z();
        if (z >= 0.0 && z <= h) consider(t);
      }
    }
  }
  if (std::abs(d.z()) > 1e-15) {
    for (double zc : {0.0, h}) {
      const double t = (zc - o.z()) / d.z();
      const double x = o.x() + t * d.x(), y = o.y() + t * d.y();
      if (x * x + y * y <= r * r) consider(t);
    }
  }
  return best;
}

std::optional<double> intersect_rect(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double sx, double sy) {
  if (std::abs(d.z()) < 1e-15) return std::nullopt;
  const double t = -o.z() / d.z();
  if (t <= kRayEps) return std::nullopt;
  const double x = o.x() + t * d.x(), y = o.y() + t * d.y();
  if (std::abs(x) > sx / 2 || std::abs(y) > sy / 2) return std::nullopt;
  return t;
}

double wrap_hue(double h) {
  h -= std::floor(h);
  return h < 1.0 ? h : 0.0;
}

EnrichedPoint shade(const Primitive& prim, const ClassTable& classes, double label_noise, std::mt19937_64& rng) {
  EnrichedPoint p;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double sigma = prim.color_noise;
  p.h = wrap_hue(prim.color.h + sigma * noise(rng));
  p.s = std::clamp(prim.color.s + sigma * noise(rng), 0.0, 1.0);
  p.v = std::clamp(prim.color.v + sigma * noise(rng), 0.0, 1.0);
  p.c = prim.cls;
  const double draw = u(rng);
  if (label_noise > 0.0 && classes.size() > 1 && draw < label_noise) {
    std::uniform_int_distribution<std::size_t> pick(0, classes.size() - 2);
    std::size_t idx = pick(rng);
    if (classes.entries()[idx].id == prim.cls) idx = classes.size() - 1;
    p.c = classes.entries()[idx].id;
  }
  p.color_valid = true;
  p.class_valid = true;
  return p;
}

void scan_column(const SceneSpec& spec, const Pose& pose, std::uint64_t seed, std::size_t column,
                 SyntheticScan& out) {
  const auto& s = spec.sensor;
  std::mt19937_64 rng(mix_seed(seed, column));
  std::normal_distribution<double> range_noise(0.0, 1.0);
  const double az = (-s.h_fov_deg / 2 + (static_cast<double>(column) + 0.5) * s.h_res_deg) * kDeg;
  const Eigen::Matrix3d r = pose.rotation_matrix();
  for (std::size_t row = 0; row < s.rows(); ++row) {
    const double el = (s.v_min_deg + (static_cast<double>(row) + 0.5) * s.v_res_deg) * kDeg;
    const Eigen::Vector3d dir_s(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    const auto hit = cast_ray(spec.primitives, pose.translation, r * dir_s, s.max_range);
    if (!hit) continue;
    double range = hit->range;
    if (s.range_noise > 0.0) range = std::max(0.0, range + s.range_noise * range_noise(rng));
    const auto& prim = spec.primitives[hit->primitive];
    EnrichedPoint p = shade(prim, spec.classes, spec.label_noise, rng);
    p.set_position(range * dir_s);
    out.points.push_back(p);
    out.object_ids.push_back(prim.object_id);
  }
}

std::vector<Primitive> with_object_ids(std::vector<Primitive> prims) {
  for (std::size_t i = 0; i < prims.size(); ++i) {
    if (prims[i].object_id == 0) prims[i].object_id = static_cast<std::uint32_t>(i + 1);
  }
  return prims;
}

Pose yaw_pose(double x, double y, double z, double yaw_deg) {
  return Pose::from_yaw(yaw_deg * kDeg, Eigen::Vector3d(x, y, z));
}

struct ClassLook {
  double h, s, v;
};

ClassLook look(ClassId c) {
  switch (c) {
    case 0: return {0.10, 0.10, 0.45};
    case 1: return {0.06, 0.45, 0.70};
    case 2: return {0.30, 0.70, 0.45};
    case 3: return {0.60, 0.10, 0.60};
    case 4: return {0.00, 0.85, 0.80};
    case 5: return {0.65, 0.70, 0.60};
    case 6: return {0.09, 0.55, 0.45};
    case 7: return {0.27, 0.80, 0.35};
    case 8: return {0.55, 0.70, 0.50};
    case 9: return {0.15, 0.60, 0.85};
    default: return {0.0, 0.0, 0.5};
  }
}

Primitive make(PrimitiveKind kind, const Pose& base, const Eigen::Vector3d& offset, double yaw,
               const Eigen::Vector3d& size, ClassId cls, const Hsv& color, std::uint32_t id) {
  Primitive p;
  p.kind = kind;
  p.pose = compose(base, Pose::from_yaw(yaw, offset));
  p.size = size;
  p.cls = cls;
  p.color = color;
  p.object_id = id;
  return p;
}

// An object resting on z = 0 of base. Kinds: building, tree, pole, sign,
// bench, hedge, bin, kiosk, and (when allowed) car.
std::vector<Primitive> random_object(std::mt19937_64& rng, std::uint32_t id, const Pose& base, bool allow_dynamic,
                                     double color_noise, double* footprint) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double a, double b) { return a + (b - a) * u(rng); };
  const int kinds = allow_dynamic ? 9 : 8;
  const int kind = static_cast<int>(u(rng) * kinds);
  auto tint = [&](ClassId c) {
    const auto l = look(c);
    Hsv hsv{wrap_hue(l.h + range(-0.04, 0.04)), std::clamp(l.s + range(-0.1, 0.1), 0.0, 1.0),
            std::clamp(l.v + range(-0.15, 0.15), 0.0, 1.0)};
    return hsv;
  };
  std::vector<Primitive> out;
  const double yaw = range(0.0, 2.0 * std::numbers::pi);
  using K = PrimitiveKind;
  switch (kind) {
    case 0: {  // building block
      const Eigen::Vector3d s(range(3.0, 7.0), range(3.0, 6.0), range(3.0, 6.0));
      out.push_back(make(K::kBox, base, {0, 0, s.z() / 2}, yaw, s, 1, tint(1), id));
      *footprint = s.head<2>().norm() / 2;
      break;
    }
    case 1: {  // tree
      const double trunk_h = range(1.5, 2.5), r = range(0.15, 0.3);
      const Eigen::Vector3d canopy(range(1.5, 3.0), range(1.5, 3.0), range(1.5, 2.5));
      out.push_back(make(K::kCylinder, base, Eigen::Vector3d::Zero(), 0.0, {r, r, trunk_h}, 2, tint(6), id));
      out.push_back(make(K::kBox, base, {0, 0, trunk_h + canopy.z() / 2}, yaw, canopy, 2, tint(2), id));
      *footprint = canopy.head<2>().norm() / 2;
      break;
    }
    case 2: {  // pole
      const double r = range(0.15, 0.3);
      out.push_back(make(K::kCylinder, base, Eigen::Vector3d::Zero(), 0.0, {r, r, range(3.0, 5.0)}, 3, tint(3), id));
      *footprint = r;
      break;
    }
    case 3: {  // sign: post and plate
      const double h = range(2.0, 3.0);
      const Eigen::Vector3d plate(range(0.8, 1.6), 0.1, range(0.6, 1.2));
      out.push_back(make(K::kCylinder, base, Eigen::Vector3d::Zero(), 0.0, {0.08, 0.08, h}, 4, tint(3), id));
      out.push_back(make(K::kBox, base, {0, 0, h + plate.z() / 2}, yaw, plate, 4, tint(4), id));
      *footprint = plate.x() / 2;
      break;
    }
    case 4: {  // bench
      const Eigen::Vector3d s(range(1.5, 2.5), range(0.5, 0.8), range(0.6, 1.0));
      out.push_back(make(K::kBox, base, {0, 0, s.z() / 2}, yaw, s, 6, tint(6), id));
      *footprint = s.head<2>().norm() / 2;
      break;
    }
    case 5: {  // hedge
      const Eigen::Vector3d s(range(3.0, 6.0), range(0.8, 1.2), range(1.0, 1.8));
      out.push_back(make(K::kBox, base, {0, 0, s.z() / 2}, yaw, s, 7, tint(7), id));
      *footprint = s.head<2>().norm() / 2;
      break;
    }
    case 6: {  // bin
      const double r = range(0.35, 0.6);
      out.push_back(make(K::kCylinder, base, Eigen::Vector3d::Zero(), 0.0, {r, r, range(1.0, 1.6)}, 8, tint(8), id));
      *footprint = r;
      break;
    }
    case 7: {  // kiosk with a roof
      const Eigen::Vector3d s(range(2.0, 3.0), range(2.0, 3.0), range(2.2, 3.0));
      const Eigen::Vector3d roof(s.x() + 0.6, s.y() + 0.6, 0.3);
      out.push_back(make(K::kBox, base, {0, 0, s.z() / 2}, yaw, s, 9, tint(9), id));
      out.push_back(make(K::kBox, base, {0, 0, s.z() + roof.z() / 2}, yaw, roof, 9, tint(1), id));
      *footprint = roof.head<2>().norm() / 2;
      break;
    }
    default: {  // parked car
      const Eigen::Vector3d s(range(3.8, 4.8), range(1.7, 2.0), range(1.4, 1.7));
      Hsv paint{u(rng), range(0.3, 0.9), range(0.3, 0.9)};
      out.push_back(make(K::kBox, base, {0, 0, s.z() / 2}, yaw, s, 5, paint, id));
      *footprint = s.head<2>().norm() / 2;
      break;
    }
  }
  for (auto& p : out) p.color_noise = color_noise;
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void Primitive::validate() const {
  bool ok = size.x() > 0 && size.y() > 0 && size.z() > 0;
  if (kind == PrimitiveKind::kPlane) ok = size.x() > 0 && size.y() > 0;
  if (kind == PrimitiveKind::kCylinder) ok = size.x() > 0 && size.z() > 0;
  if (!ok) throw std::invalid_argument("primitive dimensions must be positive");
  if (!(color.h >= 0.0 && color.h < 1.0 && color.s >= 0.0 && color.s <= 1.0 && color.v >= 0.0 && color.v <= 1.0)) {
    throw std::invalid_argument("primitive color outside HSV range");
  }
  if (!(color_noise >= 0.0)) throw std::invalid_argument("color noise must be >= 0");
}

void SensorModel::validate() const {
  if (!(h_fov_deg > 0.0 && h_fov_deg <= 360.0)) throw std::invalid_argument("h_fov must be in (0, 360]");
  if (!(v_max_deg > v_min_deg && v_min_deg >= -90.0 && v_max_deg <= 90.0)) {
    throw std::invalid_argument("vertical field of view must be a non-empty range in [-90, 90]");
  }
  if (!(h_res_deg > 0.0 && v_res_deg > 0.0)) throw std::invalid_argument("angular resolution must be positive");
  if (!(max_range > 0.0)) throw std::invalid_argument("max_range must be positive");
  if (!(range_noise >= 0.0)) throw std::invalid_argument("range_noise must be >= 0");
}

std::size_t SensorModel::columns() const {
  return static_cast<std::size_t>(std::max(1.0, std::round(h_fov_deg / h_res_deg)));
}

std::size_t SensorModel::rows() const {
  return static_cast<std::size_t>(std::max(1.0, std::round((v_max_deg - v_min_deg) / v_res_deg)));
}

void SceneSpec::validate() const {
  if (classes.empty()) throw std::invalid_argument("scene needs a class table");
  for (const auto& p : primitives) {
    p.validate();
    if (!classes.contains(p.cls)) throw std::invalid_argument("primitive class not in class table");
  }
  if (waypoints.size() < 2) throw std::invalid_argument("trajectory needs at least 2 waypoints");
  if (!(speed > 0.0 && rate > 0.0)) throw std::invalid_argument("speed and rate must be positive");
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) throw std::invalid_argument("label_noise must be in [0,1]");
  sensor.validate();
  for (const auto& c : cameras) c.validate();
}

std::optional<RayHit> cast_ray(const std::vector<Primitive>& primitives, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& direction, double max_range) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    const auto& p = primitives[i];
    const Eigen::Matrix3d rt = p.pose.rotation_matrix().transpose();
    const Eigen::Vector3d o = rt * (origin - p.pose.translation);
    const Eigen::Vector3d d = rt * direction;
    std::optional<double> t;
    switch (p.kind) {
      case PrimitiveKind::kBox: t = intersect_box(o, d, p.size / 2); break;
      case PrimitiveKind::kCylinder: t = intersect_cylinder(o, d, p.size.x(), p.size.z()); break;
      case PrimitiveKind::kPlane: t = intersect_rect(o, d, p.size.x(), p.size.y()); break;
    }
    if (t && *t <= max_range && (!best || *t < best->range)) best = RayHit{*t, i, origin + *t * direction};
  }
  return best;
}

std::vector<StampedPose> trajectory_poses(const SceneSpec& spec) {
  std::vector<Eigen::Vector3d> pts = spec.waypoints;
  if (spec.reverse) std::reverse(pts.begin(), pts.end());
  if (spec.closed_loop) pts.push_back(pts.front());
  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < pts.size(); ++i) cum.push_back(cum.back() + (pts[i] - pts[i - 1]).norm());
  const double step = spec.speed / spec.rate;
  std::vector<StampedPose> out;
  std::size_t seg = 0;
  for (std::size_t i = 0;; ++i) {
    const double s = static_cast<double>(i) * step;
    if (s > cum.back() + 1e-9) break;
    while (seg + 2 < pts.size() && s >= cum[seg + 1]) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double w = len > 0 ? std::clamp((s - cum[seg]) / len, 0.0, 1.0) : 0.0;
    const Eigen::Vector3d pos = pts[seg] + w * (pts[seg + 1] - pts[seg]);
    const Eigen::Vector3d dir = pts[seg + 1] - pts[seg];
    const double yaw = std::atan2(dir.y(), dir.x());
    out.push_back({spec.start_time + static_cast<double>(i) / spec.rate, Pose::from_yaw(yaw, pos)});
  }
  return out;
}

SyntheticScan scan(const SceneSpec& spec, const Pose& pose, std::uint64_t seed) {
  const std::size_t cols = spec.sensor.columns();
  std::vector<SyntheticScan> parts(cols);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::size_t c = 0; c < cols; ++c) scan_column(spec, pose, seed, c, parts[c]);
  SyntheticScan out;
  for (auto& p : parts) {
    out.points.insert(out.points.end(), p.points.begin(), p.points.end());
    out.object_ids.insert(out.object_ids.end(), p.object_ids.begin(), p.object_ids.end());
  }
  return out;
}

SyntheticScan scan_serial(const SceneSpec& spec, const Pose& pose, std::uint64_t seed) {
  SyntheticScan out;
  for (std::size_t c = 0; c < spec.sensor.columns(); ++c) scan_column(spec, pose, seed, c, out);
  return out;
}

static LabeledImage render_image_impl(const SceneSpec& spec, const Pose& sensor_pose, const PinholeCamera& camera,
                                      std::uint64_t seed, bool parallel) {
  LabeledImage img(camera.width, camera.height);
  const Pose world_cam = compose(sensor_pose, inverse(camera.extrinsic));
  const Eigen::Matrix3d r = world_cam.rotation_matrix();
#pragma omp parallel for schedule(dynamic, 4) if (parallel)
  for (int v = 0; v < camera.height; ++v) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(v)));
    for (int u = 0; u < camera.width; ++u) {
      const Eigen::Vector3d d_cam((u + 0.5 - camera.cx) / camera.fx, (v + 0.5 - camera.cy) / camera.fy, 1.0);
      const auto hit = cast_ray(spec.primitives, world_cam.translation, (r * d_cam).normalized(),
                                spec.sensor.max_range * 2);
      const auto idx = img.index(u, v);
      if (!hit) {
        img.color[idx] = {0.0f, 0.0f, 0.0f};
        img.labels[idx] = 0;
        continue;
      }
      const EnrichedPoint p = shade(spec.primitives[hit->primitive], spec.classes, spec.label_noise, rng);
      const auto rgb = hsv_to_rgb({p.h, p.s, p.v});
      img.color[idx] = {static_cast<float>(rgb[0]), static_cast<float>(rgb[1]), static_cast<float>(rgb[2])};
      img.labels[idx] = p.c;
    }
  }
  return img;
}

LabeledImage render_image(const SceneSpec& spec, const Pose& sensor_pose, const PinholeCamera& camera,
                          std::uint64_t seed) {
  return render_image_impl(spec, sensor_pose, camera, seed, true);
}

LabeledImage render_image_serial(const SceneSpec& spec, const Pose& sensor_pose, const PinholeCamera& camera,
                                 std::uint64_t seed) {
  return render_image_impl(spec, sensor_pose, camera, seed, false);
}

DatasetManifest generate_dataset(const SceneSpec& input, const fs::path& out) {
  SceneSpec spec = input;
  spec.primitives = with_object_ids(spec.primitives);
  spec.validate();
  std::error_code ec;
  fs::create_directories(out / "clouds", ec);
  if (ec) throw DataError("cannot create dataset directory " + out.string() + ": " + ec.message());
  if (!spec.cameras.empty()) fs::create_directories(out / "images", ec);

  DatasetManifest m;
  m.root = out;
  m.classes = "classes.txt";
  m.poses = "poses.txt";
  m.ground_truth = "ground_truth.txt";
  write_class_table(out / m.classes, spec.classes);
  if (!spec.cameras.empty()) {
    m.calibration = "calibration.txt";
    write_calibration(out / *m.calibration, spec.cameras);
  }
  const auto truth = trajectory_poses(spec);
  std::vector<StampedPose> poses;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::uint64_t frame_seed = mix_seed(spec.seed, i);
    auto result = scan(spec, truth[i].pose, frame_seed);
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i;
    FrameEntry f;
    f.timestamp = truth[i].timestamp;
    f.cloud = "clouds/" + name.str() + ".ssmc";
    f.object_ids = "clouds/" + name.str() + ".ids";
    if (!spec.cameras.empty()) {
      for (auto& p : result.points) p.color_valid = p.class_valid = false, p.h = p.s = p.v = 0.0, p.c = 0;
      for (std::size_t c = 0; c < spec.cameras.size(); ++c) {
        const auto img = render_image(spec, truth[i].pose, spec.cameras[c], mix_seed(frame_seed, 1000 + c));
        const std::string stem = "images/" + name.str() + "_" + std::to_string(c);
        write_image(out / (stem + ".ppm"), out / (stem + ".pgm"), img);
        f.images.emplace_back(stem + ".ppm", stem + ".pgm");
      }
    }
    write_cloud(out / f.cloud, result.points);
    write_object_ids(out / *f.object_ids, result.object_ids);
    poses.push_back({truth[i].timestamp, compose(spec.frame_offset, truth[i].pose)});
    m.frames.push_back(std::move(f));
  }
  write_poses(out / m.poses, poses);
  write_poses(out / *m.ground_truth, truth);
  write_manifest(m);
  return m;
}

SceneSpec parse_scene_spec(const std::string& text) {
  SceneSpec spec;
  std::vector<ClassEntry> classes;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    auto fail = [&](const std::string& msg) {
      throw DataError("scene spec line " + std::to_string(n) + ": " + msg);
    };
    auto done = [&] {
      std::string extra;
      if (!ss || (ss >> extra)) fail("malformed '" + key + "' line");
    };
    if (key == "class") {
      ClassEntry e;
      long id = -1;
      int dyn = 0, ground = 0;
      ss >> id >> e.name >> dyn >> ground;
      done();
      if (id < 0 || id > 65535) fail("class id out of range");
      e.id = static_cast<ClassId>(id);
      e.is_dynamic = dyn != 0;
      e.is_ground = ground != 0;
      classes.push_back(e);
    } else if (key == "box" || key == "cylinder" || key == "plane") {
      Primitive p;
      p.kind = key == "box" ? PrimitiveKind::kBox : key == "cylinder" ? PrimitiveKind::kCylinder : PrimitiveKind::kPlane;
      double x, y, z, yaw, h, s, v;
      long cls = -1;
      ss >> x >> y >> z >> yaw >> p.size.x() >> p.size.y() >> p.size.z() >> cls >> h >> s >> v;
      if (!ss) fail("malformed primitive");
      double noise = 0.0;
      if (ss >> noise) p.color_noise = noise;
      else ss.clear();
      done();
      if (cls < 0 || cls > 65535) fail("class id out of range");
      p.pose = yaw_pose(x, y, z, yaw);
      p.cls = static_cast<ClassId>(cls);
      p.color = {h, s, v};
      spec.primitives.push_back(p);
    } else if (key == "waypoint") {
      Eigen::Vector3d w;
      ss >> w.x() >> w.y() >> w.z();
      done();
      spec.waypoints.push_back(w);
    } else if (key == "offset") {
      double x, y, z, yaw;
      ss >> x >> y >> z >> yaw;
      done();
      spec.frame_offset = yaw_pose(x, y, z, yaw);
    } else if (key == "camera") {
      PinholeCamera c;
      double t[3], q[4];
      ss >> c.name >> c.fx >> c.fy >> c.cx >> c.cy >> c.width >> c.height >> t[0] >> t[1] >> t[2] >> q[0] >> q[1] >>
          q[2] >> q[3];
      done();
      c.extrinsic = Pose({t[0], t[1], t[2]}, Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized());
      spec.cameras.push_back(c);
    } else if (key == "closed_loop" || key == "reverse") {
      int flag = 0;
      ss >> flag;
      done();
      (key == "closed_loop" ? spec.closed_loop : spec.reverse) = flag != 0;
    } else {
      static const std::map<std::string, double SceneSpec::*> scene_values = {
          {"speed", &SceneSpec::speed}, {"rate", &SceneSpec::rate}, {"label_noise", &SceneSpec::label_noise}};
      static const std::map<std::string, double SensorModel::*> sensor_values = {
          {"h_fov", &SensorModel::h_fov_deg},     {"v_min", &SensorModel::v_min_deg},
          {"v_max", &SensorModel::v_max_deg},     {"h_res", &SensorModel::h_res_deg},
          {"v_res", &SensorModel::v_res_deg},     {"max_range", &SensorModel::max_range},
          {"range_noise", &SensorModel::range_noise}};
      if (key == "seed") {
        ss >> spec.seed;
        done();
      } else if (auto it = scene_values.find(key); it != scene_values.end()) {
        ss >> spec.*(it->second);
        done();
      } else if (auto jt = sensor_values.find(key); jt != sensor_values.end()) {
        ss >> spec.sensor.*(jt->second);
        done();
      } else {
        fail("unknown entry '" + key + "'");
      }
    }
  }
  try {
    spec.classes = classes.empty() ? default_classes() : ClassTable(classes);
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("scene spec: ") + e.what());
  }
  return spec;
}

SceneSpec read_scene_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene_spec(ss.str());
}

ClassTable default_classes() {
  return ClassTable({{0, "ground", false, true},
                     {1, "building", false, false},
                     {2, "tree", false, false},
                     {3, "pole", false, false},
                     {4, "sign", false, false},
                     {5, "car", true, false},
                     {6, "bench", false, false},
                     {7, "hedge", false, false},
                     {8, "bin", false, false},
                     {9, "kiosk", false, false}});
}

SceneSpec loop_scene(const LoopSceneParams& params) {
  SceneSpec spec;
  spec.classes = default_classes();
  spec.seed = params.seed;
  spec.closed_loop = true;
  const double w = params.width, h = params.height, margin = params.corridor + params.spread + 5.0;
  spec.waypoints = {{0, 0, 1.8}, {w, 0, 1.8}, {w, h, 1.8}, {0, h, 1.8}};
  Primitive ground;
  ground.kind = PrimitiveKind::kPlane;
  ground.pose = Pose({w / 2, h / 2, 0.0}, Eigen::Quaterniond::Identity());
  ground.size = {w + 2 * margin, h + 2 * margin, 0.0};
  ground.cls = 0;
  ground.color = {look(0).h, look(0).s, look(0).v};
  ground.color_noise = 0.02;
  ground.object_id = 1;
  spec.primitives.push_back(ground);

  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double perimeter = 2 * (w + h);
  std::vector<std::pair<Eigen::Vector2d, double>> placed;
  std::uint32_t next_id = 2;
  std::size_t attempts = 0;
  while (next_id - 2 < params.objects && attempts++ < params.objects * 200) {
    double s = u(rng) * perimeter;
    Eigen::Vector2d on, normal;
    if (s < w) on = {s, 0}, normal = {0, -1};
    else if ((s -= w) < h) on = {w, s}, normal = {1, 0};
    else if ((s -= h) < w) on = {w - s, h}, normal = {0, 1};
    else s -= w, on = {0, h - s}, normal = {-1, 0};
    const bool outside = u(rng) < 0.5;
    std::mt19937_64 object_rng(mix_seed(params.seed, 1000 + attempts));
    double footprint = 0.0;
    // Draw the object at the origin first to learn its footprint.
    auto probe = random_object(object_rng, next_id, Pose(), true, 0.02, &footprint);
    const double lateral = params.corridor + footprint + u(rng) * params.spread;
    const Eigen::Vector2d c = on + (outside ? 1.0 : -1.0) * lateral * normal;
    // The opposite sides of the loop must stay clear of the corridor too.
    const double dx = std::min(std::abs(c.x()), std::abs(c.x() - w));
    const double dy = std::min(std::abs(c.y()), std::abs(c.y() - h));
    const bool inside_x = c.x() > 0 && c.x() < w, inside_y = c.y() > 0 && c.y() < h;
    if ((inside_y && dx < params.corridor + footprint) || (inside_x && dy < params.corridor + footprint)) continue;
    if (!inside_x && !inside_y && std::hypot(dx, dy) < params.corridor + footprint) continue;
    bool clear = true;
    for (const auto& [pc, pr] : placed) {
      if ((pc - c).norm() < pr + footprint + 1.0) clear = false;
    }
    if (!clear) continue;
    placed.emplace_back(c, footprint);
    const Pose base({c.x(), c.y(), 0.0}, Eigen::Quaterniond::Identity());
    for (auto p : probe) {
      p.pose = compose(base, p.pose);
      spec.primitives.push_back(p);
    }
    ++next_id;
  }
  return spec;
}

static std::vector<LabeledObservation> synthesize_object_observations_impl(const ObjectSetParams& params,
                                                                           std::uint32_t first_object_id, bool parallel) {
  if (params.views == 0) throw std::invalid_argument("synthesize_object_observations: views must be positive");
  const ClassTable classes = default_classes();
  std::vector<std::vector<LabeledObservation>> per_object(params.objects);
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::size_t i = 0; i < params.objects; ++i) {
    const auto id = static_cast<std::uint32_t>(first_object_id + i);
    std::mt19937_64 rng(mix_seed(params.seed, id));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double footprint = 0.0;
    SceneSpec scene;
    scene.classes = classes;
    scene.label_noise = params.label_noise;
    scene.primitives = random_object(rng, id, Pose(), false, params.color_noise, &footprint);
    scene.sensor.h_res_deg = 0.5;
    scene.sensor.v_res_deg = 0.5;
    scene.sensor.v_min_deg = -20.0;
    scene.sensor.v_max_deg = 20.0;
    // Drive past the object along a line at a random heading.
    const double heading = u(rng) * 2.0 * std::numbers::pi;
    const double lateral = footprint + 3.0 + 5.0 * u(rng);
    const double half_len = lateral + 4.0;
    const Eigen::Vector2d dir(std::cos(heading), std::sin(heading)), side(-dir.y(), dir.x());
    std::map<VoxelKey, Voxel> voxels;
    auto key_of = [&](const Eigen::Vector3d& p) {
      return VoxelKey{static_cast<std::int32_t>(std::floor(p.x() / params.voxel_size)),
                      static_cast<std::int32_t>(std::floor(p.y() / params.voxel_size)),
                      static_cast<std::int32_t>(std::floor(p.z() / params.voxel_size))};
    };
    for (std::size_t v = 0; v < params.views; ++v) {
      const double along = params.views == 1 ? 0.0
                                             : -half_len + 2.0 * half_len * static_cast<double>(v) /
                                                               static_cast<double>(params.views - 1);
      const Eigen::Vector2d pos = -lateral * side + along * dir;
      const Pose pose = Pose::from_yaw(heading, Eigen::Vector3d(pos.x(), pos.y(), 1.8));
      const auto result = scan_serial(scene, pose, mix_seed(rng(), v));
      for (const auto& p : result.points) {
        const Eigen::Vector3d w = transform_point(pose, p.position());
        auto& vox = voxels[key_of(w)];
        vox.key = key_of(w);
        vox.position_sum += w;
        ++vox.point_count;
        vox.color.add(p.h, p.s, p.v);
        vox.add_class(p.c);
      }
      LabeledObservation lo;
      lo.object_id = id;
      auto& obs = lo.observation;
      obs.segment_id = id;
      obs.observation_index = static_cast<std::uint32_t>(v);
      obs.timestamp = static_cast<double>(v);
      obs.is_final = v + 1 == params.views;
      for (const auto& [k, vox] : voxels) obs.points.push_back(vox.representative());
      if (obs.points.empty()) continue;
      obs.update_centroid();
      per_object[i].push_back(std::move(lo));
    }
    if (!per_object[i].empty()) per_object[i].back().observation.is_final = true;
  }
  std::vector<LabeledObservation> out;
  for (auto& v : per_object) {
    for (auto& o : v) out.push_back(std::move(o));
  }
  return out;
}

std::vector<LabeledObservation> synthesize_object_observations(const ObjectSetParams& params,
                                                               std::uint32_t first_object_id) {
  return synthesize_object_observations_impl(params, first_object_id, true);
}

std::vector<LabeledObservation> synthesize_object_observations_serial(const ObjectSetParams& params,
                                                                      std::uint32_t first_object_id) {
  return synthesize_object_observations_impl(params, first_object_id, false);
}

}  // namespace segloc
