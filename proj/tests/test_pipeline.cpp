#include <gtest/gtest.h>
#include <omp.h>

#include <map>
#include <set>

#include "segloc/eval.hpp"
#include "segloc/io.hpp"
#include "segloc/pipeline.hpp"
#include "segloc/synth.hpp"
#include "support.hpp"

using namespace segloc;

namespace {

struct Loop {
  std::filesystem::path dir;
  Dataset data;
};

Loop make_loop(const std::string& name) {
  const auto dir = segloc::testing::temp_dir(name);
  generate_dataset(loop_scene({}), dir);
  return {dir, open_dataset(dir)};
}

const Loop& shared_loop() {
  static const Loop loop = make_loop("pipeline_loop");
  return loop;
}

/// Objects whose true surface points cover at least min_points voxels over
/// the run, ignoring ground and dynamic classes.
std::size_t observable_objects(const Dataset& data, const PipelineConfig& config) {
  const auto classes = effective_classes(data.classes, config);
  const double vs = config.local_map.voxel_size;
  std::map<std::uint32_t, std::set<std::tuple<long, long, long>>> voxels;
  for (std::size_t i = 0; i < data.manifest.frames.size(); ++i) {
    const auto cloud = read_cloud(data.manifest.resolve(data.manifest.frames[i].cloud));
    const auto ids = read_object_ids(data.manifest.resolve(*data.manifest.frames[i].object_ids));
    for (std::size_t j = 0; j < cloud.size(); ++j) {
      const auto& p = cloud[j];
      if (ids[j] == 0 || (p.class_valid && (classes.is_ground(p.c) || classes.is_dynamic(p.c)))) continue;
      const Eigen::Vector3d w = transform_point(data.poses[i].pose, p.position());
      voxels[ids[j]].insert({static_cast<long>(std::floor(w.x() / vs)), static_cast<long>(std::floor(w.y() / vs)),
                             static_cast<long>(std::floor(w.z() / vs))});
    }
  }
  std::size_t n = 0;
  for (const auto& [id, keys] : voxels) n += keys.size() >= config.segmentation.min_segment_points;
  return n;
}

}  // namespace

TEST(Pipeline, MapEntriesMatchObservableObjects) {
  const auto& loop = shared_loop();
  PipelineConfig config;
  const auto backend = make_backend(config, loop.data.classes);
  const auto run = run_pipeline(loop.data, config, *backend, {});
  const auto expect = static_cast<double>(observable_objects(loop.data, config));
  ASSERT_GT(expect, 10.0);
  EXPECT_NEAR(static_cast<double>(run.map.size()), expect, 0.1 * expect);
  EXPECT_EQ(run.timings.size(), loop.data.manifest.frames.size());
  std::set<std::uint64_t> ids;
  for (const auto& e : run.map.entries) EXPECT_TRUE(ids.insert(e.segment_id).second);
  for (const auto& o : run.observations) EXPECT_TRUE(o.observation.is_final);
}

TEST(Pipeline, SelfLocalization) {
  const auto& loop = shared_loop();
  PipelineConfig config;
  const auto backend = make_backend(config, loop.data.classes);
  const auto built = run_pipeline(loop.data, config, *backend, {});
  RunOptions opts;
  opts.mode = RunMode::kLocalize;
  opts.map = &built.map;
  const auto run = run_pipeline(loop.data, config, *backend, opts);
  const double attempts = static_cast<double>(run.localization_attempts);
  ASSERT_EQ(run.localization_attempts, loop.data.manifest.frames.size() - config.warmup_frames);
  for (const auto& r : run.localizations) EXPECT_GE(r.inlier_count, config.ransac.min_inliers);

  // Mid-run segments are partial views of their final map entries, so their
  // centroids sit up to a few decimeters off and bias the fit.
  const auto report = accuracy_report(run.localizations, loop.data.ground_truth);
  const double coarse = static_cast<double>(report.count_within(1.0, 5.0)) / attempts;
  const double fine = static_cast<double>(report.count_within(0.2, 360.0)) / attempts;
  RecordProperty("within_1m", std::to_string(coarse));
  RecordProperty("within_0_2m", std::to_string(fine));
  EXPECT_GE(coarse, 0.9);
  EXPECT_GE(fine, 0.75);

  // On the last frame every local segment equals its final observation.
  ASSERT_FALSE(run.localizations.empty());
  const auto& last = run.localizations.back();
  EXPECT_DOUBLE_EQ(last.timestamp, loop.data.manifest.frames.back().timestamp);
  EXPECT_LT(last.transform.translation.norm(), 1e-6);
  EXPECT_LT(report.entries.back().rotation_error, 1e-4);
}

TEST(Pipeline, DeterministicAcrossRunsAndThreads) {
  const auto& loop = shared_loop();
  PipelineConfig config;
  const auto backend = make_backend(config, loop.data.classes);
  RunOptions opts;
  opts.keep_observations = true;
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one = run_pipeline(loop.data, config, *backend, opts);
  omp_set_num_threads(4);
  const auto four = run_pipeline(loop.data, config, *backend, opts);
  const auto again = run_pipeline(loop.data, config, *backend, opts);
  omp_set_num_threads(saved);
  EXPECT_EQ(one.map, four.map);
  EXPECT_EQ(four.map, again.map);
  ASSERT_EQ(one.observations.size(), four.observations.size());
  for (std::size_t i = 0; i < one.observations.size(); ++i) {
    EXPECT_EQ(one.observations[i].observation.segment_id, four.observations[i].observation.segment_id);
    EXPECT_EQ(one.observations[i].object_id, four.observations[i].object_id);
    EXPECT_EQ(one.observations[i].observation.points.size(), four.observations[i].observation.points.size());
  }
}

TEST(Pipeline, LocalMapStaysBounded) {
  const auto& loop = shared_loop();
  PipelineConfig config;
  config.local_map.radius = 10.0;
  const auto backend = make_backend(config, loop.data.classes);
  const auto run = run_pipeline(loop.data, config, *backend, {});
  std::size_t first_half = 0;
  for (std::size_t i = 0; i < run.timings.size() / 2; ++i) first_half = std::max(first_half, run.timings[i].voxels);
  EXPECT_GT(first_half, 0u);
  // A second lap over the same scene must not grow the resident state.
  EXPECT_LT(run.peak_voxels, 2 * first_half);
}

TEST(Pipeline, EmptyDataset) {
  const auto dir = segloc::testing::temp_dir("empty_dataset");
  write_class_table(dir / "classes.txt", default_classes());
  write_poses(dir / "poses.txt", {});
  DatasetManifest m;
  m.root = dir;
  m.classes = "classes.txt";
  m.poses = "poses.txt";
  write_manifest(m);
  const auto data = open_dataset(dir);
  PipelineConfig config;
  const auto backend = make_backend(config, data.classes);
  const auto run = run_pipeline(data, config, *backend, {});
  EXPECT_TRUE(run.map.empty());
  EXPECT_TRUE(run.observations.empty());
  EXPECT_TRUE(run.localizations.empty());
}

TEST(Pipeline, RejectsMismatchedBackendAndMap) {
  const auto& loop = shared_loop();
  PipelineConfig config;
  const auto other = make_backend(config, segloc::testing::small_classes());
  EXPECT_THROW(run_pipeline(loop.data, config, *other, {}), DataError);

  const auto backend = make_backend(config, loop.data.classes);
  TargetMap map;
  map.dim = static_cast<std::uint16_t>(backend->dim());
  map.class_table_hash = loop.data.classes.hash() + 1;
  map.backend_hash = backend->hash();
  RunOptions opts;
  opts.mode = RunMode::kLocalize;
  opts.map = &map;
  EXPECT_THROW(run_pipeline(loop.data, config, *backend, opts), DataError);
}
