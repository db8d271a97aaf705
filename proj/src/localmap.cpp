#include "segloc/localmap.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace segloc {

void SegmentationParams::validate() const {
  if (!(d_segment > 0.0)) throw std::invalid_argument("d_segment must be positive");
  if (!(t_h >= 0.0 && t_h <= 0.5)) throw std::invalid_argument("t_h must lie in [0, 0.5]");
  if (!(p_h >= 0.0)) throw std::invalid_argument("p_h must be non-negative");
  if (!(p_c >= 0.0)) throw std::invalid_argument("p_c must be non-negative");
}

std::vector<std::string> SegmentationParams::warnings() const {
  std::vector<std::string> out;
  if (p_h >= d_segment) out.emplace_back("p_h >= d_segment: color differences always split segments");
  if (p_c >= d_segment) out.emplace_back("p_c >= d_segment: class differences always split segments");
  return out;
}

void LocalMapParams::validate() const {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("voxel_size must be positive");
  if (!(radius > voxel_size)) throw std::invalid_argument("radius must exceed voxel_size");
}

void ColorMean::add(double h, double s, double v) {
  const double a = 2.0 * std::numbers::pi * h;
  cos_sum += std::cos(a);
  sin_sum += std::sin(a);
  s_sum += s;
  v_sum += v;
  last_h = h;
  ++count;
}

double ColorMean::h() const {
  if (count == 0) return 0.0;
  if (std::hypot(cos_sum, sin_sum) < 1e-12 * count) return last_h;
  double h = std::atan2(sin_sum, cos_sum) / (2.0 * std::numbers::pi);
  if (h < 0.0) h += 1.0;
  if (h >= 1.0) h -= 1.0;
  return h;
}

void Voxel::add_class(ClassId c) {
  auto it = std::lower_bound(class_counts.begin(), class_counts.end(), c,
                             [](const auto& e, ClassId id) { return e.first < id; });
  if (it != class_counts.end() && it->first == c) {
    ++it->second;
  } else {
    class_counts.insert(it, {c, 1u});
  }
}

EnrichedPoint Voxel::representative() const {
  EnrichedPoint p;
  p.set_position(centroid());
  if (color.count > 0) {
    p.h = color.h();
    p.s = color.s();
    p.v = color.v();
    p.color_valid = true;
  }
  if (auto c = majority_class(*this)) {
    p.c = *c;
    p.class_valid = true;
  }
  return p;
}

std::optional<ClassId> majority_class(const Voxel& v) {
  std::optional<ClassId> best;
  std::uint32_t best_count = 0;
  // class_counts is sorted by id, so strict '>' keeps the smallest id on ties.
  for (const auto& [id, count] : v.class_counts) {
    if (count > best_count) {
      best = id;
      best_count = count;
    }
  }
  return best;
}

double f_h(double delta_h, const SegmentationParams& params) {
  const double effective = std::min(delta_h, 1.0 - delta_h);
  return effective > params.t_h ? params.p_h : 0.0;
}

double f_c(ClassId c1, ClassId c2, const SegmentationParams& params) {
  return c1 == c2 ? 0.0 : params.p_c;
}

double pair_distance(const EnrichedPoint& p1, const EnrichedPoint& p2, const SegmentationParams& params) {
  const double dx = p1.x - p2.x, dy = p1.y - p2.y, dz = p1.z - p2.z;
  double d2 = dx * dx + dy * dy + dz * dz;
  if (p1.color_valid && p2.color_valid) {
    const double fh = f_h(std::abs(p1.h - p2.h), params);
    d2 += fh * fh;
  }
  if (p1.class_valid && p2.class_valid) {
    const double fc = f_c(p1.c, p2.c, params);
    d2 += fc * fc;
  }
  return std::sqrt(d2);
}

void SegmentObservation::update_centroid() {
  centroid.setZero();
  if (points.empty()) return;
  for (const auto& p : points) centroid += p.position();
  centroid /= static_cast<double>(points.size());
}

LocalMap::LocalMap(LocalMapParams map_params, SegmentationParams seg_params, ClassTable classes)
    : map_params_(map_params), seg_params_(seg_params), classes_(std::move(classes)) {
  map_params_.validate();
  seg_params_.validate();
  // Centroids sit anywhere inside their cell, so cells up to
  // floor(d/size)+1 apart can still hold a pair closer than d.
  search_cells_ = static_cast<int>(std::floor(seg_params_.d_segment / map_params_.voxel_size)) + 1;
}

VoxelKey LocalMap::key_of(const Eigen::Vector3d& world) const {
  const double inv = 1.0 / map_params_.voxel_size;
  return {static_cast<std::int32_t>(std::floor(world.x() * inv)),
          static_cast<std::int32_t>(std::floor(world.y() * inv)),
          static_cast<std::int32_t>(std::floor(world.z() * inv))};
}

std::vector<VoxelKey> LocalMap::insert_frame(const PointCloudFrame& frame) {
  std::vector<VoxelKey> activated;
  for (const auto& p : frame.points) {
    if (map_params_.filter_dynamic && p.class_valid && classes_.is_dynamic(p.c)) continue;
    const Eigen::Vector3d w = transform_point(frame.pose, p.position());
    const VoxelKey key = key_of(w);
    auto [it, inserted] = voxels_.try_emplace(key);
    Voxel& v = it->second;
    if (inserted) {
      v.key = key;
      activated.push_back(key);
    }
    v.position_sum += w;
    ++v.point_count;
    if (p.color_valid) v.color.add(p.h, p.s, p.v);
    if (p.class_valid) v.add_class(p.c);
  }
  return activated;
}

void LocalMap::merge_into(Segment& survivor, std::uint64_t absorbed_id) {
  auto it = segments_.find(absorbed_id);
  if (it == segments_.end()) return;
  for (const auto& k : it->second.members) {
    voxels_.at(k).segment_id = survivor.id;
    survivor.members.push_back(k);
  }
  segments_.erase(it);
}

SegmentationDelta LocalMap::grow_segments(const std::vector<VoxelKey>& new_voxels) {
  SegmentationDelta delta;
  std::set<std::uint64_t> created, grown;
  const int r = search_cells_;
  for (const auto& key : new_voxels) {
    auto vit = voxels_.find(key);
    if (vit == voxels_.end() || vit->second.segment_id) continue;
    const EnrichedPoint rep = vit->second.representative();

    std::vector<std::uint64_t> linked;
    for (int dx = -r; dx <= r; ++dx) {
      for (int dy = -r; dy <= r; ++dy) {
        for (int dz = -r; dz <= r; ++dz) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          auto nit = voxels_.find({key.x + dx, key.y + dy, key.z + dz});
          if (nit == voxels_.end() || !nit->second.segment_id) continue;
          const std::uint64_t sid = *nit->second.segment_id;
          if (std::find(linked.begin(), linked.end(), sid) != linked.end()) continue;
          if (pair_distance(rep, nit->second.representative(), seg_params_) < seg_params_.d_segment) {
            linked.push_back(sid);
          }
        }
      }
    }

    if (linked.empty()) {
      Segment seg;
      seg.id = next_segment_id_++;
      seg.members.push_back(key);
      vit->second.segment_id = seg.id;
      created.insert(seg.id);
      segments_.emplace(seg.id, std::move(seg));
      continue;
    }
    std::sort(linked.begin(), linked.end());
    Segment& survivor = segments_.at(linked.front());
    for (std::size_t i = 1; i < linked.size(); ++i) {
      merge_into(survivor, linked[i]);
      delta.merged.emplace_back(survivor.id, linked[i]);
      created.erase(linked[i]);
      grown.erase(linked[i]);
    }
    survivor.members.push_back(key);
    vit->second.segment_id = survivor.id;
    if (!created.count(survivor.id)) grown.insert(survivor.id);
  }
  delta.created.assign(created.begin(), created.end());
  delta.grown.assign(grown.begin(), grown.end());
  return delta;
}

SegmentObservation LocalMap::make_observation(const Segment& seg, const std::vector<VoxelKey>& keys,
                                              double timestamp) const {
  std::vector<VoxelKey> sorted = keys;
  std::sort(sorted.begin(), sorted.end());
  SegmentObservation obs;
  obs.segment_id = seg.id;
  obs.observation_index = seg.next_observation;
  obs.timestamp = timestamp;
  obs.points.reserve(sorted.size());
  for (const auto& k : sorted) obs.points.push_back(voxels_.at(k).representative());
  obs.update_centroid();
  return obs;
}

std::vector<SegmentObservation> LocalMap::recenter(const Eigen::Vector3d& center, double timestamp) {
  std::vector<SegmentObservation> out;
  const double r2 = map_params_.radius * map_params_.radius;
  auto outside = [&](const Voxel& v) {
    const Eigen::Vector3d c = v.centroid();
    const double dx = c.x() - center.x(), dy = c.y() - center.y();
    return dx * dx + dy * dy > r2;
  };

  std::vector<std::uint64_t> finished;
  for (auto& [id, seg] : segments_) {
    std::vector<VoxelKey> evicted, kept;
    for (const auto& k : seg.members) (outside(voxels_.at(k)) ? evicted : kept).push_back(k);
    if (evicted.empty()) continue;
    const bool eligible = seg.members.size() >= seg_params_.min_segment_points;
    if (kept.empty()) {
      if (eligible) {
        auto obs = make_observation(seg, seg.members, timestamp);
        obs.is_final = true;
        out.push_back(std::move(obs));
      }
      finished.push_back(id);
    } else {
      if (evicted.size() >= seg_params_.min_segment_points) {
        auto obs = make_observation(seg, evicted, timestamp);
        obs.is_partial_eviction = true;
        out.push_back(std::move(obs));
        ++seg.next_observation;
      }
      seg.members = std::move(kept);
      seg.last_emitted_count = seg.members.size();
    }
  }
  for (auto id : finished) segments_.erase(id);
  for (auto it = voxels_.begin(); it != voxels_.end();) {
    it = outside(it->second) ? voxels_.erase(it) : std::next(it);
  }

  for (auto& [id, seg] : segments_) {
    const std::size_t n = seg.members.size();
    if (n >= seg_params_.min_segment_points && n > seg.last_emitted_count) {
      out.push_back(make_observation(seg, seg.members, timestamp));
      ++seg.next_observation;
      seg.last_emitted_count = n;
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.segment_id < b.segment_id;
  });
  return out;
}

std::vector<SegmentObservation> LocalMap::flush(double timestamp) {
  std::vector<SegmentObservation> out;
  for (auto& [id, seg] : segments_) {
    if (seg.members.size() < seg_params_.min_segment_points) continue;
    auto obs = make_observation(seg, seg.members, timestamp);
    obs.is_final = true;
    out.push_back(std::move(obs));
  }
  segments_.clear();
  voxels_.clear();
  return out;
}

std::vector<SegmentObservation> LocalMap::current_observations(double timestamp) const {
  std::vector<SegmentObservation> out;
  for (const auto& [id, seg] : segments_) {
    if (seg.members.size() < seg_params_.min_segment_points) continue;
    out.push_back(make_observation(seg, seg.members, timestamp));
  }
  return out;
}

const Voxel* LocalMap::voxel(const VoxelKey& key) const {
  auto it = voxels_.find(key);
  return it == voxels_.end() ? nullptr : &it->second;
}

std::map<std::uint64_t, std::vector<VoxelKey>> LocalMap::partition() const {
  std::map<std::uint64_t, std::vector<VoxelKey>> out;
  for (const auto& [id, seg] : segments_) {
    auto keys = seg.members;
    std::sort(keys.begin(), keys.end());
    out.emplace(id, std::move(keys));
  }
  return out;
}

}  // namespace segloc
