#include "segloc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <unordered_map>

#include "segloc/enrichment.hpp"
#include "segloc/localmap.hpp"
#include "segloc/trainable.hpp"

namespace segloc {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Ground-truth object counts per voxel, kept apart from the local map so
// that the mapping path never sees them.
class ObjectTracker {
 public:
  void add(const VoxelKey& key, std::uint32_t object) {
    auto& counts = voxels_[key];
    auto it = std::find_if(counts.begin(), counts.end(), [&](const auto& c) { return c.first == object; });
    if (it == counts.end()) counts.emplace_back(object, 1);
    else ++it->second;
  }

  std::uint64_t majority(const SegmentObservation& obs, const LocalMap& map) const {
    std::map<std::uint32_t, std::uint64_t> total;
    for (const auto& p : obs.points) {
      const auto it = voxels_.find(map.key_of(p.position()));
      if (it == voxels_.end()) continue;
      for (const auto& [id, n] : it->second) total[id] += n;
    }
    std::uint64_t best = 0, best_n = 0;
    for (const auto& [id, n] : total) {
      if (n > best_n) best = id, best_n = n;
    }
    return best;
  }

 private:
  std::unordered_map<VoxelKey, std::vector<std::pair<std::uint32_t, std::uint32_t>>, VoxelKeyHash> voxels_;
};

bool needs_enrichment(const PointCloudFrame& frame) {
  return std::any_of(frame.points.begin(), frame.points.end(),
                     [](const EnrichedPoint& p) { return !p.color_valid && !p.class_valid; });
}

}  // namespace

ClassTable effective_classes(const ClassTable& table, const PipelineConfig& config) {
  if (config.extra_dynamic_classes.empty()) return table;
  auto entries = table.entries();
  for (auto& e : entries) {
    if (std::find(config.extra_dynamic_classes.begin(), config.extra_dynamic_classes.end(), e.id) !=
        config.extra_dynamic_classes.end()) {
      e.is_dynamic = true;
    }
  }
  return ClassTable(std::move(entries));
}

std::unique_ptr<DescriptorBackend> make_backend(const PipelineConfig& config, const ClassTable& classes) {
  if (!config.backend_file.empty()) return load_backend(config.backend_file, classes);
  switch (config.backend) {
    case BackendChoice::kHandCrafted: return std::make_unique<HandCraftedBackend>(classes);
    case BackendChoice::kTrainable:
    case BackendChoice::kTrainableLinear: {
      TrainableArchitecture arch = config.architecture;
      arch.linear = config.backend == BackendChoice::kTrainableLinear;
      return std::make_unique<TrainableBackend>(classes, arch, config.seed);
    }
  }
  throw std::invalid_argument("make_backend: unknown backend");
}

RunArtifacts run_pipeline(const Dataset& data, const PipelineConfig& config, const DescriptorBackend& backend,
                          const RunOptions& options) {
  config.validate();
  if (backend.classes().hash() != data.classes.hash()) {
    throw DataError("descriptor backend was built for a different class table than the dataset");
  }
  if (options.mode == RunMode::kLocalize) {
    if (!options.map) throw std::invalid_argument("run_pipeline: localize mode needs a map");
    if (options.map->class_table_hash != data.classes.hash()) {
      throw DataError("map was built with a different class table");
    }
    if (options.map->dim != backend.dim() || options.map->backend_hash != backend.hash()) {
      throw DataError("map was built with a different descriptor backend");
    }
  }
  for (const auto& f : data.manifest.frames) {
    if (!f.images.empty() && data.cameras.empty()) throw DataError("frames list images but there is no calibration");
  }

  RunArtifacts out;
  out.map.dim = static_cast<std::uint16_t>(backend.dim());
  out.map.class_table_hash = backend.classes().hash();
  out.map.backend_hash = backend.hash();
  const std::uint64_t backend_hash = backend.hash();

  LocalMap local(config.local_map, config.segmentation, effective_classes(data.classes, config));
  ObjectTracker tracker;
  std::vector<LabeledObservation> finals;
  TargetMap session_map = out.map;  // loop-closure target, grows with finals

  auto absorb = [&](std::vector<SegmentObservation>&& emitted) {
    std::vector<SegmentObservation> new_finals;
    for (auto& obs : emitted) {
      LabeledObservation lo{obs, tracker.majority(obs, local)};
      if (obs.is_final) {
        finals.push_back(lo);
        new_finals.push_back(std::move(obs));
      }
      if (options.keep_observations) out.observations.push_back(std::move(lo));
    }
    return new_finals;
  };
  auto grow_session_map = [&](const std::vector<SegmentObservation>& new_finals) {
    if (options.mode != RunMode::kLoopClose || new_finals.empty()) return;
    const auto d = describe_batch(backend, new_finals, config.seed, config.n_sub);
    for (std::size_t i = 0; i < new_finals.size(); ++i) {
      session_map.entries.push_back({new_finals[i].segment_id, new_finals[i].centroid.cast<float>(), d[i]});
    }
  };

  const std::size_t n_frames =
      options.max_frames ? std::min(options.max_frames, data.manifest.frames.size()) : data.manifest.frames.size();
  for (std::size_t i = 0; i < n_frames; ++i) {
    const auto t_start = Clock::now();
    FrameTiming timing;
    PointCloudFrame frame = load_frame(data, i);
    timing.timestamp = frame.timestamp;
    timing.points = frame.points.size();

    auto t0 = Clock::now();
    if (!data.manifest.frames[i].images.empty() && needs_enrichment(frame)) {
      frame = enrich_cloud(frame, load_views(data, i));
    }
    if (const auto& ids = data.manifest.frames[i].object_ids) {
      const auto objects = read_object_ids(data.manifest.resolve(*ids));
      if (objects.size() != frame.points.size()) throw DataError("object id sidecar does not match its cloud");
      for (std::size_t k = 0; k < objects.size(); ++k) {
        tracker.add(local.key_of(transform_point(frame.pose, frame.points[k].position())), objects[k]);
      }
    }
    if (config.remove_ground) {
      auto ground = remove_ground(frame, data.classes, config.ground_eps);
      if (ground.status == GroundStatus::kDegenerate) {
        out.warnings.push_back("frame " + std::to_string(i) + ": degenerate ground points, nothing removed");
      }
      frame = std::move(ground.frame);
    }
    timing.enrich_ms = ms_since(t0);

    t0 = Clock::now();
    const auto keys = local.insert_frame(frame);
    local.grow_segments(keys);
    out.peak_voxels = std::max(out.peak_voxels, local.voxel_count());
    auto new_finals = absorb(local.recenter(frame.pose.translation, frame.timestamp));
    timing.segment_ms = ms_since(t0);
    timing.voxels = local.voxel_count();
    timing.segments = local.segment_count();

    const bool localizing = options.mode != RunMode::kBuildMap;
    if (localizing && i >= config.warmup_frames && (i - config.warmup_frames) % config.localize_every == 0) {
      ++out.localization_attempts;
      t0 = Clock::now();
      grow_session_map(new_finals);
      new_finals.clear();
      const auto current = local.current_observations(frame.timestamp);
      const auto descriptors = describe_batch(backend, current, config.seed, config.n_sub);
      timing.describe_ms = ms_since(t0);
      t0 = Clock::now();
      std::vector<LocalSegment> segments;
      for (std::size_t k = 0; k < current.size(); ++k) {
        segments.push_back({current[k].segment_id, current[k].centroid, descriptors[k]});
      }
      RansacParams ransac = config.ransac;
      ransac.seed = mix_seed(config.ransac.seed, i);
      const TargetMap& target = options.mode == RunMode::kLocalize ? *options.map : session_map;
      if (auto result = localize_step(segments, target, config.k, ransac, backend_hash)) {
        result->timestamp = frame.timestamp;
        result->robot_pose_local = frame.pose;
        out.localizations.push_back(std::move(*result));
      }
      timing.localize_ms = ms_since(t0);
    }
    grow_session_map(new_finals);
    timing.total_ms = ms_since(t_start);
    out.timings.push_back(timing);
  }

  if (options.mode != RunMode::kLocalize && n_frames > 0) {
    const double t_end = data.manifest.frames[n_frames - 1].timestamp;
    absorb(local.flush(t_end));
  }
  std::sort(finals.begin(), finals.end(), [](const LabeledObservation& a, const LabeledObservation& b) {
    return a.observation.segment_id < b.observation.segment_id;
  });
  if (options.mode != RunMode::kLocalize) {
    std::vector<SegmentObservation> obs;
    for (const auto& f : finals) obs.push_back(f.observation);
    const auto descriptors = describe_batch(backend, obs, config.seed, config.n_sub);
    out.map = build_target_map(obs, descriptors, backend);
  }
  if (!options.keep_observations) out.observations = std::move(finals);
  return out;
}

}  // namespace segloc
