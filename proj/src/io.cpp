#include "segloc/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "binary_io.hpp"

namespace segloc {

namespace fs = std::filesystem;

namespace {

constexpr char kCloudMagic[5] = "SSMC";
constexpr char kIdsMagic[5] = "SSMG";
constexpr char kObservationMagic[5] = "SSMO";
constexpr std::uint16_t kFormatVersion = 1;
constexpr std::uint8_t kColorValid = 1;
constexpr std::uint8_t kClassValid = 2;

std::ofstream open_out(const fs::path& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

void expect_header(std::istream& in, const char (&magic)[5], const fs::path& path) {
  if (!detail::read_magic(in, magic)) throw DataError(path.string() + ": bad magic, expected " + magic);
  const auto version = detail::read_le<std::uint16_t>(in, "version");
  if (version != kFormatVersion) throw DataError(path.string() + ": unsupported version " + std::to_string(version));
}

void expect_end(std::istream& in, const fs::path& path) {
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(path.string() + ": trailing bytes");
}

// Hue must stay below 1 after narrowing.
float hue_to_float(double h) {
  const auto f = static_cast<float>(h);
  return f < 1.0f ? f : std::nextafter(1.0f, 0.0f);
}

void write_point(std::ostream& out, const EnrichedPoint& p) {
  detail::write_le<float>(out, static_cast<float>(p.x));
  detail::write_le<float>(out, static_cast<float>(p.y));
  detail::write_le<float>(out, static_cast<float>(p.z));
  detail::write_le<float>(out, hue_to_float(p.h));
  detail::write_le<float>(out, static_cast<float>(p.s));
  detail::write_le<float>(out, static_cast<float>(p.v));
  detail::write_le<std::uint16_t>(out, p.c);
  detail::write_le<std::uint8_t>(out, (p.color_valid ? kColorValid : 0) | (p.class_valid ? kClassValid : 0));
}

EnrichedPoint read_point(std::istream& in) {
  EnrichedPoint p;
  p.x = detail::read_le<float>(in, "point");
  p.y = detail::read_le<float>(in, "point");
  p.z = detail::read_le<float>(in, "point");
  p.h = detail::read_le<float>(in, "point");
  p.s = detail::read_le<float>(in, "point");
  p.v = detail::read_le<float>(in, "point");
  p.c = detail::read_le<std::uint16_t>(in, "point");
  const auto flags = detail::read_le<std::uint8_t>(in, "point");
  p.color_valid = flags & kColorValid;
  p.class_valid = flags & kClassValid;
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) throw DataError("non-finite point");
  if (p.color_valid && !(p.h >= 0.0 && p.h < 1.0 && p.s >= 0.0 && p.s <= 1.0 && p.v >= 0.0 && p.v <= 1.0)) {
    throw DataError("point color outside HSV range");
  }
  return p;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Lines with comments and blanks removed, paired with 1-based line numbers.
std::vector<std::pair<int, std::string>> content_lines(std::istream& in) {
  std::vector<std::pair<int, std::string>> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (!line.empty()) out.emplace_back(n, line);
  }
  return out;
}

void skip_pnm_space(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

struct PnmHeader {
  int width = 0, height = 0, maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const char* magic, const fs::path& path) {
  std::string m(2, '\0');
  if (!in.read(m.data(), 2) || m != magic) throw DataError(path.string() + ": expected " + magic + " image");
  PnmHeader h;
  skip_pnm_space(in);
  in >> h.width;
  skip_pnm_space(in);
  in >> h.height;
  skip_pnm_space(in);
  in >> h.maxval;
  if (!in || in.get() == EOF || h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
    throw DataError(path.string() + ": bad image header");
  }
  return h;
}

}  // namespace

void write_cloud(const fs::path& path, const std::vector<EnrichedPoint>& points) {
  auto out = open_out(path, true);
  detail::write_magic(out, kCloudMagic);
  detail::write_le<std::uint16_t>(out, kFormatVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(points.size()));
  for (const auto& p : points) write_point(out, p);
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<EnrichedPoint> read_cloud(const fs::path& path) {
  auto in = open_in(path, true);
  expect_header(in, kCloudMagic, path);
  const auto count = detail::read_le<std::uint32_t>(in, "point count");
  std::vector<EnrichedPoint> points;
  points.reserve(std::min<std::uint32_t>(count, 1u << 24));
  try {
    for (std::uint32_t i = 0; i < count; ++i) points.push_back(read_point(in));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  expect_end(in, path);
  return points;
}

void write_object_ids(const fs::path& path, const std::vector<std::uint32_t>& ids) {
  auto out = open_out(path, true);
  detail::write_magic(out, kIdsMagic);
  detail::write_le<std::uint16_t>(out, kFormatVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ids.size()));
  for (auto id : ids) detail::write_le<std::uint32_t>(out, id);
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<std::uint32_t> read_object_ids(const fs::path& path) {
  auto in = open_in(path, true);
  expect_header(in, kIdsMagic, path);
  const auto count = detail::read_le<std::uint32_t>(in, "id count");
  std::vector<std::uint32_t> ids(count);
  for (auto& id : ids) id = detail::read_le<std::uint32_t>(in, "object id");
  expect_end(in, path);
  return ids;
}

void write_poses(const fs::path& path, const std::vector<StampedPose>& poses) {
  auto out = open_out(path, false);
  out << std::setprecision(17);
  for (const auto& s : poses) {
    const auto& t = s.pose.translation;
    const auto& q = s.pose.rotation;
    out << s.timestamp << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.w() << ' ' << q.x() << ' '
        << q.y() << ' ' << q.z() << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<StampedPose> read_poses(const fs::path& path) {
  auto in = open_in(path, false);
  std::vector<StampedPose> poses;
  for (const auto& [n, line] : content_lines(in)) {
    std::istringstream ss(line);
    double v[8];
    for (double& x : v) ss >> x;
    std::string extra;
    if (!ss || (ss >> extra)) throw DataError(path.string() + ":" + std::to_string(n) + ": expected 8 numbers");
    const Eigen::Quaterniond q(v[4], v[5], v[6], v[7]);
    if (std::abs(q.norm() - 1.0) > 1e-6) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": quaternion is not unit length");
    }
    poses.push_back({v[0], Pose({v[1], v[2], v[3]}, q)});
  }
  return poses;
}

void write_class_table(const fs::path& path, const ClassTable& table) {
  auto out = open_out(path, false);
  out << "# id name dynamic ground\n";
  for (const auto& e : table.entries()) {
    out << e.id << ' ' << e.name << ' ' << (e.is_dynamic ? 1 : 0) << ' ' << (e.is_ground ? 1 : 0) << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

ClassTable parse_class_table(const std::string& text) {
  std::istringstream in(text);
  std::vector<ClassEntry> entries;
  for (const auto& [n, line] : content_lines(in)) {
    std::istringstream ss(line);
    long id = -1;
    int dyn = -1, ground = -1;
    ClassEntry e;
    ss >> id >> e.name >> dyn >> ground;
    std::string extra;
    if (!ss || (ss >> extra) || id < 0 || id > 65535 || dyn < 0 || dyn > 1 || ground < 0 || ground > 1) {
      throw DataError("class table line " + std::to_string(n) + ": expected 'id name dynamic ground'");
    }
    e.id = static_cast<ClassId>(id);
    e.is_dynamic = dyn;
    e.is_ground = ground;
    entries.push_back(e);
  }
  try {
    return ClassTable(std::move(entries));
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("class table: ") + e.what());
  }
}

ClassTable read_class_table(const fs::path& path) {
  auto in = open_in(path, false);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_class_table(ss.str());
}

void write_image(const fs::path& color_path, const fs::path& label_path, const LabeledImage& image) {
  auto color = open_out(color_path, true);
  color << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (const auto& px : image.color) {
    for (float c : px) color.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(c, 0.0f, 1.0f) * 255.0f))));
  }
  auto labels = open_out(label_path, true);
  labels << "P5\n" << image.width << ' ' << image.height << "\n65535\n";
  for (ClassId l : image.labels) {
    labels.put(static_cast<char>(l >> 8));
    labels.put(static_cast<char>(l & 0xFF));
  }
  if (!color || !labels) throw DataError("failed writing image " + color_path.string());
}

LabeledImage read_image(const fs::path& color_path, const fs::path& label_path) {
  auto color = open_in(color_path, true);
  const auto ch = read_pnm_header(color, "P6", color_path);
  if (ch.maxval > 255) throw DataError(color_path.string() + ": only 8-bit color images are supported");
  LabeledImage img(ch.width, ch.height);
  std::vector<unsigned char> buf(static_cast<std::size_t>(ch.width) * ch.height * 3);
  if (!color.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw DataError(color_path.string() + ": truncated pixel data");
  }
  for (std::size_t i = 0; i < img.color.size(); ++i) {
    for (int c = 0; c < 3; ++c) img.color[i][c] = static_cast<float>(buf[i * 3 + c]) / static_cast<float>(ch.maxval);
  }
  auto labels = open_in(label_path, true);
  const auto lh = read_pnm_header(labels, "P5", label_path);
  if (lh.width != ch.width || lh.height != ch.height) {
    throw DataError(label_path.string() + ": label image size differs from color image");
  }
  const int bytes = lh.maxval > 255 ? 2 : 1;
  std::vector<unsigned char> lbuf(img.labels.size() * bytes);
  if (!labels.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size()))) {
    throw DataError(label_path.string() + ": truncated label data");
  }
  for (std::size_t i = 0; i < img.labels.size(); ++i) {
    img.labels[i] = bytes == 2 ? static_cast<ClassId>(lbuf[2 * i] << 8 | lbuf[2 * i + 1]) : lbuf[i];
  }
  return img;
}

void write_observations(const fs::path& path, const std::vector<LabeledObservation>& observations) {
  auto out = open_out(path, true);
  detail::write_magic(out, kObservationMagic);
  detail::write_le<std::uint16_t>(out, kFormatVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(observations.size()));
  for (const auto& lo : observations) {
    const auto& o = lo.observation;
    detail::write_le<std::uint64_t>(out, o.segment_id);
    detail::write_le<std::uint32_t>(out, o.observation_index);
    detail::write_le<double>(out, o.timestamp);
    detail::write_le<std::uint8_t>(out, (o.is_final ? 1 : 0) | (o.is_partial_eviction ? 2 : 0));
    detail::write_le<std::uint64_t>(out, lo.object_id);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(o.points.size()));
    for (const auto& p : o.points) write_point(out, p);
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<LabeledObservation> read_observations(const fs::path& path) {
  auto in = open_in(path, true);
  expect_header(in, kObservationMagic, path);
  const auto count = detail::read_le<std::uint32_t>(in, "observation count");
  std::vector<LabeledObservation> out;
  try {
    for (std::uint32_t i = 0; i < count; ++i) {
      LabeledObservation lo;
      auto& o = lo.observation;
      o.segment_id = detail::read_le<std::uint64_t>(in, "segment id");
      o.observation_index = detail::read_le<std::uint32_t>(in, "observation index");
      o.timestamp = detail::read_le<double>(in, "timestamp");
      const auto flags = detail::read_le<std::uint8_t>(in, "flags");
      o.is_final = flags & 1;
      o.is_partial_eviction = flags & 2;
      lo.object_id = detail::read_le<std::uint64_t>(in, "object id");
      const auto n = detail::read_le<std::uint32_t>(in, "point count");
      o.points.reserve(std::min<std::uint32_t>(n, 1u << 22));
      for (std::uint32_t k = 0; k < n; ++k) o.points.push_back(read_point(in));
      o.update_centroid();
      out.push_back(std::move(lo));
    }
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  expect_end(in, path);
  return out;
}

void write_manifest(const DatasetManifest& m) {
  auto out = open_out(m.root / "manifest.txt", false);
  out << std::setprecision(17);
  out << "classes " << m.classes.generic_string() << '\n';
  out << "poses " << m.poses.generic_string() << '\n';
  if (m.calibration) out << "calibration " << m.calibration->generic_string() << '\n';
  if (m.ground_truth) out << "ground_truth " << m.ground_truth->generic_string() << '\n';
  for (const auto& f : m.frames) {
    out << "frame " << f.timestamp << ' ' << f.cloud.generic_string() << ' '
        << (f.object_ids ? f.object_ids->generic_string() : "-");
    for (const auto& [c, l] : f.images) out << ' ' << c.generic_string() << ' ' << l.generic_string();
    out << '\n';
  }
  if (!out) throw DataError("failed writing manifest in " + m.root.string());
}

DatasetManifest read_manifest(const fs::path& root) {
  const fs::path file = root / "manifest.txt";
  auto in = open_in(file, false);
  DatasetManifest m;
  m.root = root;
  auto fail = [&](int n, const std::string& msg) {
    throw DataError(file.string() + ":" + std::to_string(n) + ": " + msg);
  };
  bool have_classes = false, have_poses = false;
  for (const auto& [n, line] : content_lines(in)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "classes" || key == "poses" || key == "calibration" || key == "ground_truth") {
      std::string p;
      if (!(ss >> p)) fail(n, "missing path");
      if (key == "classes") m.classes = p, have_classes = true;
      if (key == "poses") m.poses = p, have_poses = true;
      if (key == "calibration") m.calibration = p;
      if (key == "ground_truth") m.ground_truth = p;
    } else if (key == "frame") {
      FrameEntry f;
      std::string cloud, ids;
      if (!(ss >> f.timestamp >> cloud >> ids)) fail(n, "expected 'frame <timestamp> <cloud> <ids|->'");
      f.cloud = cloud;
      if (ids != "-") f.object_ids = ids;
      std::string c, l;
      while (ss >> c) {
        if (!(ss >> l)) fail(n, "image entries come in color/label pairs");
        f.images.emplace_back(c, l);
      }
      if (!m.frames.empty() && !(f.timestamp > m.frames.back().timestamp)) {
        fail(n, "frame timestamps must be strictly increasing");
      }
      m.frames.push_back(std::move(f));
    } else {
      fail(n, "unknown entry '" + key + "'");
    }
  }
  if (!have_classes || !have_poses) throw DataError(file.string() + ": classes and poses entries are required");
  std::vector<fs::path> files{m.classes, m.poses};
  if (m.calibration) files.push_back(*m.calibration);
  if (m.ground_truth) files.push_back(*m.ground_truth);
  for (const auto& f : m.frames) {
    files.push_back(f.cloud);
    if (f.object_ids) files.push_back(*f.object_ids);
    for (const auto& [c, l] : f.images) files.push_back(c), files.push_back(l);
  }
  for (const auto& f : files) {
    if (!fs::exists(m.resolve(f))) throw DataError("dataset file missing: " + m.resolve(f).string());
  }
  return m;
}

Dataset open_dataset(const fs::path& root) {
  Dataset d;
  d.manifest = read_manifest(root);
  const auto& m = d.manifest;
  d.classes = read_class_table(m.resolve(m.classes));
  if (m.calibration) d.cameras = read_calibration(m.resolve(*m.calibration));
  d.poses = read_poses(m.resolve(m.poses));
  if (m.ground_truth) d.ground_truth = read_poses(m.resolve(*m.ground_truth));
  if (d.poses.size() != m.frames.size()) {
    throw DataError("pose file has " + std::to_string(d.poses.size()) + " poses for " +
                    std::to_string(m.frames.size()) + " frames");
  }
  for (std::size_t i = 0; i < d.poses.size(); ++i) {
    if (std::abs(d.poses[i].timestamp - m.frames[i].timestamp) > 1e-9) {
      throw DataError("pose " + std::to_string(i) + " timestamp does not match its frame");
    }
  }
  for (std::size_t i = 1; i < d.ground_truth.size(); ++i) {
    if (!(d.ground_truth[i].timestamp > d.ground_truth[i - 1].timestamp)) {
      throw DataError("ground-truth timestamps must be strictly increasing");
    }
  }
  for (const auto& f : m.frames) {
    if (!f.images.empty() && f.images.size() != d.cameras.size()) {
      throw DataError("frame at " + std::to_string(f.timestamp) + " lists " + std::to_string(f.images.size()) +
                      " images for " + std::to_string(d.cameras.size()) + " cameras");
    }
  }
  return d;
}

PointCloudFrame load_frame(const Dataset& data, std::size_t index) {
  PointCloudFrame frame;
  frame.timestamp = data.manifest.frames.at(index).timestamp;
  frame.pose = data.poses.at(index).pose;
  frame.points = read_cloud(data.manifest.resolve(data.manifest.frames[index].cloud));
  return frame;
}

std::vector<CameraView> load_views(const Dataset& data, std::size_t index) {
  std::vector<CameraView> views;
  const auto& f = data.manifest.frames.at(index);
  for (std::size_t c = 0; c < f.images.size(); ++c) {
    auto img = read_image(data.manifest.resolve(f.images[c].first), data.manifest.resolve(f.images[c].second));
    if (img.width != data.cameras[c].width || img.height != data.cameras[c].height) {
      throw DataError("image size does not match camera " + data.cameras[c].name);
    }
    views.push_back({data.cameras[c], std::move(img)});
  }
  return views;
}

}  // namespace segloc
