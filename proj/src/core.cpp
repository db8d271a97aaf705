#include "segloc/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace segloc {

Pose::Pose(const Eigen::Vector3d& t, const Eigen::Quaterniond& q)
    : translation(t), rotation(q.normalized()) {}

Pose Pose::from_yaw(double yaw, const Eigen::Vector3d& t) {
  return {t, Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()))};
}

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.translation = a.rotation * b.translation + a.translation;
  out.rotation = (a.rotation * b.rotation).normalized();
  return out;
}

Pose inverse(const Pose& p) {
  Pose out;
  out.rotation = p.rotation.conjugate().normalized();
  out.translation = -(out.rotation * p.translation);
  return out;
}

Eigen::Vector3d transform_point(const Pose& p, const Eigen::Vector3d& pt) {
  return p.rotation * pt + p.translation;
}

double rotation_angle_between(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  // atan2 form stays accurate for tiny angles where acos(|dot|) does not.
  const Eigen::Quaterniond d = a.conjugate() * b;
  const double vec = d.vec().norm();
  return 2.0 * std::atan2(vec, std::abs(d.w()));
}

double hue_difference(double h1, double h2) {
  if (!(h1 >= 0.0 && h1 < 1.0) || !(h2 >= 0.0 && h2 < 1.0)) {
    throw std::invalid_argument("hue_difference: hue outside [0,1)");
  }
  const double d = std::abs(h1 - h2);
  return std::min(d, 1.0 - d);
}

ClassTable::ClassTable(std::vector<ClassEntry> entries) : entries_(std::move(entries)) {
  std::set<ClassId> seen;
  for (const auto& e : entries_) {
    if (!seen.insert(e.id).second) {
      throw std::invalid_argument("ClassTable: duplicate class id " + std::to_string(e.id));
    }
  }
}

const ClassEntry* ClassTable::find(ClassId id) const {
  for (const auto& e : entries_) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

bool ClassTable::is_dynamic(ClassId id) const {
  const auto* e = find(id);
  return e != nullptr && e->is_dynamic;
}

bool ClassTable::is_ground(ClassId id) const {
  const auto* e = find(id);
  return e != nullptr && e->is_ground;
}

std::optional<std::size_t> ClassTable::index_of(ClassId id) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id == id) return i;
  }
  return std::nullopt;
}

std::uint64_t ClassTable::hash() const {
  std::ostringstream os;
  for (const auto& e : entries_) {
    os << e.id << ' ' << e.name << ' ' << e.is_dynamic << ' ' << e.is_ground << '\n';
  }
  const std::string s = os.str();
  return fnv1a64(s.data(), s.size());
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace segloc
