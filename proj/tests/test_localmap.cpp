#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "segloc/localmap.hpp"
#include "support.hpp"

using namespace segloc;
using segloc::testing::point;

namespace {

SegmentationParams seg(std::size_t min_points = 1) {
  SegmentationParams sp;
  sp.min_segment_points = min_points;
  return sp;
}

LocalMap make_map(SegmentationParams sp = seg(), double radius = 50.0, bool filter = true) {
  LocalMapParams mp;
  mp.radius = radius;
  mp.filter_dynamic = filter;
  return LocalMap(mp, sp, ClassTable({{0, "a", false, false}, {1, "b", false, false}, {2, "car", true, false}}));
}

/// Solid box of points on a 0.1 m lattice, one per voxel (offset to cell centers).
std::vector<EnrichedPoint> box(double x0, double x1, double y0, double y1, double z0, double z1, double h,
                               ClassId c) {
  std::vector<EnrichedPoint> out;
  for (double x = x0; x < x1 - 1e-9; x += 0.1) {
    for (double y = y0; y < y1 - 1e-9; y += 0.1) {
      for (double z = z0; z < z1 - 1e-9; z += 0.1) out.push_back(point(x + 0.05, y + 0.05, z + 0.05, h, c));
    }
  }
  return out;
}

std::size_t run(LocalMap& map, const std::vector<EnrichedPoint>& pts) {
  PointCloudFrame f;
  f.points = pts;
  map.grow_segments(map.insert_frame(f));
  return map.segment_count();
}

}  // namespace

TEST(PenaltyFunctions, HueExamples) {
  const auto sp = seg();
  EXPECT_EQ(f_h(0.05, sp), 0.0);
  EXPECT_EQ(f_h(0.95, sp), 0.0);
  EXPECT_EQ(f_h(0.5, sp), 0.05);
  EXPECT_EQ(f_h(0.1, sp), 0.0);  // threshold is strict
}

TEST(PenaltyFunctions, ClassExamples) {
  const auto sp = seg();
  EXPECT_EQ(f_c(3, 3, sp), 0.0);
  EXPECT_EQ(f_c(3, 7, sp), 0.15);
  auto a = point(0, 0, 0, 0, 3), b = point(0, 0, 0, 0, 7);
  b.class_valid = false;
  EXPECT_EQ(pair_distance(a, b, sp), 0.0);
}

TEST(PairDistance, Examples) {
  const auto sp = seg();
  EXPECT_NEAR(pair_distance(point(0, 0, 0, 0.2, 1), point(0.25, 0, 0, 0.2, 2), sp), std::sqrt(0.085), 1e-12);
  EXPECT_NEAR(pair_distance(point(0, 0, 0, 0.1, 1), point(0.28, 0, 0, 0.6, 2), sp), std::sqrt(0.1034), 1e-12);
  EXPECT_NEAR(pair_distance(point(0, 0, 0, 0.1, 1), point(0, 0.1, 0, 0.6, 1), sp), std::sqrt(0.0125), 1e-12);
}

TEST(PairDistance, MatchesOracleOnRandomPairs) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto sp = seg();
  for (int i = 0; i < 5000; ++i) {
    const auto a = point(u(rng), u(rng), u(rng), u(rng) * 0.999, static_cast<ClassId>(u(rng) * 3), u(rng) > 0.2,
                         u(rng) > 0.2);
    const auto b = point(u(rng), u(rng), u(rng), u(rng) * 0.999, static_cast<ClassId>(u(rng) * 3), u(rng) > 0.2,
                         u(rng) > 0.2);
    EXPECT_NEAR(pair_distance(a, b, sp), segloc::testing::oracle_pair_distance(a, b, sp.t_h, sp.p_h, sp.p_c), 1e-12);
    EXPECT_EQ(pair_distance(a, b, sp), pair_distance(b, a, sp));
  }
}

TEST(Params, ValidateAndWarn) {
  auto sp = seg();
  EXPECT_NO_THROW(sp.validate());
  EXPECT_TRUE(sp.warnings().empty());
  sp.p_c = 0.4;
  EXPECT_EQ(sp.warnings().size(), 1u);
  sp.d_segment = 0;
  EXPECT_THROW(sp.validate(), std::invalid_argument);
  LocalMapParams mp;
  mp.voxel_size = -1;
  EXPECT_THROW(mp.validate(), std::invalid_argument);
}

TEST(Voxel, FusesColorAndVotesClass) {
  auto map = make_map();
  PointCloudFrame f;
  auto a = point(0.01, 0.01, 0.01, 0.3, 1), b = point(0.03, 0.05, 0.07, 0.3, 1), c = point(0.05, 0.05, 0.05, 0.3, 0);
  a.v = 0.2, b.v = 0.4, c.v = 0.3;
  f.points = {a, b, c};
  map.insert_frame(f);
  ASSERT_EQ(map.voxel_count(), 1u);
  const Voxel* v = map.voxel({0, 0, 0});
  ASSERT_NE(v, nullptr);
  EXPECT_EQ(v->point_count, 3u);
  EXPECT_NEAR(v->color.v(), 0.3, 1e-12);
  EXPECT_NEAR(v->color.h(), 0.3, 1e-12);
  EXPECT_EQ(majority_class(*v), 1);
  EXPECT_LT((v->centroid() - Eigen::Vector3d(0.03, 0.11 / 3, 0.13 / 3)).norm(), 1e-12);
}

TEST(Voxel, MajorityTiesAndEmpty) {
  Voxel v;
  EXPECT_FALSE(majority_class(v).has_value());
  v.add_class(5);
  v.add_class(2);
  EXPECT_EQ(majority_class(v), 2);
  v.add_class(5);
  EXPECT_EQ(majority_class(v), 5);
  v.add_class(2);
  EXPECT_EQ(majority_class(v), 2);
  EXPECT_FALSE(v.representative().color_valid);
}

TEST(Voxel, CircularHueMean) {
  ColorMean m;
  m.add(0.95, 0, 0);
  m.add(0.05, 0, 0);
  const double h = m.h();
  EXPECT_NEAR(std::min(h, 1.0 - h), 0.0, 1e-12);
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    ColorMean c;
    double cs = 0, sn = 0;
    const double base = u(rng);
    for (int i = 0; i < 10; ++i) {
      const double x = std::fmod(base + 0.2 * (u(rng) - 0.5) + 1.0, 1.0);
      c.add(x, 0, 0);
      cs += std::cos(2 * std::numbers::pi * x);
      sn += std::sin(2 * std::numbers::pi * x);
    }
    double expect = std::atan2(sn, cs) / (2 * std::numbers::pi);
    if (expect < 0) expect += 1;
    EXPECT_NEAR(hue_difference(c.h(), std::min(expect, 0.9999999999)), 0.0, 1e-9);
    EXPECT_GE(c.h(), 0.0);
    EXPECT_LT(c.h(), 1.0);
  }
}

TEST(InsertFrame, DropsDynamicClassesAndAppliesPose) {
  auto map = make_map();
  PointCloudFrame f;
  f.pose = Pose({10, 0, 0}, Eigen::Quaterniond::Identity());
  f.points = {point(0.05, 0.05, 0.05, 0, 0), point(1.05, 0.05, 0.05, 0, 2)};
  const auto keys = map.insert_frame(f);
  ASSERT_EQ(keys.size(), 1u);
  EXPECT_EQ(keys[0], (VoxelKey{100, 0, 0}));

  auto keep = make_map(seg(), 50.0, false);
  EXPECT_EQ(keep.insert_frame(f).size(), 2u);
}

TEST(GrowSegments, CloseBoxesJoin) {
  auto map = make_map();
  auto pts = box(0, 1, 0, 1, 0, 1, 0.2, 0);
  const auto other = box(1.1, 2.1, 0, 1, 0, 1, 0.2, 1);  // gap 0.2, class penalty -> 0.25
  pts.insert(pts.end(), other.begin(), other.end());
  EXPECT_EQ(run(map, pts), 1u);
}

TEST(GrowSegments, SemanticSplitAtGap) {
  auto pts = box(0, 1, 0, 1, 0, 1, 0.1, 0);
  const auto other = box(1.17, 2.17, 0, 1, 0, 1, 0.6, 1);  // nearest gap 0.27
  pts.insert(pts.end(), other.begin(), other.end());

  auto with = make_map();
  EXPECT_EQ(run(with, pts), 2u);

  auto sp = seg();
  sp.p_c = sp.p_h = 0.0;
  auto without = make_map(sp);
  EXPECT_EQ(run(without, pts), 1u);
}

TEST(GrowSegments, IsolatedVoxelIsSingleton) {
  auto map = make_map();
  auto pts = box(0, 1, 0, 1, 0, 1, 0.2, 0);
  pts.push_back(point(5.05, 5.05, 5.05, 0.2, 0));
  EXPECT_EQ(run(map, pts), 2u);
  const auto part = map.partition();
  std::size_t singles = 0;
  for (const auto& [id, keys] : part) singles += keys.size() == 1;
  EXPECT_EQ(singles, 1u);
}

TEST(GrowSegments, MergeKeepsSmallestId) {
  auto map = make_map();
  run(map, {point(0.05, 0.05, 0.05)});
  run(map, {point(0.45, 0.05, 0.05)});
  ASSERT_EQ(map.segment_count(), 2u);
  PointCloudFrame f;
  f.points = {point(0.25, 0.05, 0.05)};
  const auto delta = map.grow_segments(map.insert_frame(f));
  ASSERT_EQ(delta.merged.size(), 1u);
  EXPECT_EQ(delta.merged[0], std::make_pair(std::uint64_t{1}, std::uint64_t{2}));
  ASSERT_EQ(map.segment_count(), 1u);
  EXPECT_EQ(map.partition().begin()->first, 1u);
}

TEST(GrowSegments, IncrementalEqualsBatchOracle) {
  std::mt19937_64 rng(25);
  const auto sp = seg();
  for (int scene = 0; scene < 12; ++scene) {
    const auto pts = segloc::testing::segmentation_scene(rng, 1500);
    const auto check = segloc::testing::incremental_vs_oracle(pts, 1 + scene % 7, sp, rng);
    EXPECT_TRUE(check.equal) << "scene " << scene << ": " << check.incremental_segments << " vs "
                             << check.oracle_segments;
    EXPECT_EQ(check.voxels, pts.size());
  }
}

TEST(GrowSegments, ZeroPenaltiesIsEuclideanClustering) {
  std::mt19937_64 rng(27);
  auto sp = seg();
  sp.p_h = sp.p_c = 0.0;
  for (int scene = 0; scene < 5; ++scene) {
    auto pts = segloc::testing::segmentation_scene(rng, 1000);
    auto map = make_map(sp, 1000.0, false);
    run(map, pts);
    // Strip all semantics: the partition must not change.
    for (auto& p : pts) p.color_valid = p.class_valid = false;
    auto plain = make_map(sp, 1000.0, false);
    run(plain, pts);
    EXPECT_EQ(segloc::testing::key_partition(map), segloc::testing::key_partition(plain));
  }
}

TEST(Recenter, NothingOutsideRadius) {
  auto map = make_map(seg(10), 5.0);
  run(map, box(0, 1, 0, 1, 0, 1, 0.2, 0));
  auto first = map.recenter({0, 0, 0}, 1.0);
  ASSERT_EQ(first.size(), 1u);  // growth snapshot
  EXPECT_FALSE(first[0].is_final);
  EXPECT_TRUE(map.recenter({0, 0, 0}, 2.0).empty());
  EXPECT_EQ(map.voxel_count(), 1000u);
}

TEST(Recenter, FullEvictionEmitsFinal) {
  auto map = make_map(seg(10), 5.0);
  run(map, box(0, 1, 0, 1, 0, 1, 0.2, 0));
  map.recenter({0, 0, 0}, 1.0);
  const auto out = map.recenter({20, 0, 0}, 2.0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].is_final);
  EXPECT_EQ(out[0].point_count(), 1000u);
  EXPECT_EQ(out[0].observation_index, 1u);
  EXPECT_EQ(map.voxel_count(), 0u);
  EXPECT_EQ(map.segment_count(), 0u);
}

TEST(Recenter, PartialEvictionEmitsEvictedPart) {
  auto map = make_map(seg(10), 5.0);
  run(map, box(0, 4, 0, 0.5, 0, 0.5, 0.2, 0));  // 40 x 5 x 5 voxels
  map.recenter({0, 0, 0}, 1.0);
  const auto out = map.recenter({7.0, 0.25, 0}, 2.0);  // evicts x < 2.0
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].is_partial_eviction);
  EXPECT_FALSE(out[0].is_final);
  EXPECT_EQ(out[0].point_count(), 500u);
  EXPECT_EQ(map.voxel_count(), 500u);
  const auto rest = map.flush(3.0);
  ASSERT_EQ(rest.size(), 1u);
  EXPECT_EQ(rest[0].point_count(), 500u);
  EXPECT_TRUE(rest[0].is_final);
}

TEST(Recenter, SmallSegmentsAreNotEmitted) {
  auto map = make_map(seg(100), 5.0);
  run(map, box(0, 0.3, 0, 0.3, 0, 0.3, 0.2, 0));
  EXPECT_TRUE(map.recenter({0, 0, 0}, 1.0).empty());
  EXPECT_TRUE(map.recenter({50, 0, 0}, 2.0).empty());
  EXPECT_EQ(map.segment_count(), 0u);
}

TEST(Recenter, ObservationsGrowAndCentroidIsMean) {
  auto map = make_map(seg(5), 50.0);
  std::map<std::uint64_t, std::size_t> last;
  for (int step = 0; step < 10; ++step) {
    run(map, box(0, 0.2 * (step + 1), 0, 0.5, 0, 0.5, 0.2, 0));
    for (const auto& obs : map.recenter({0, 0, 0}, step)) {
      EXPECT_GE(obs.point_count(), last[obs.segment_id]);
      last[obs.segment_id] = obs.point_count();
      Eigen::Vector3d mean = Eigen::Vector3d::Zero();
      for (const auto& p : obs.points) mean += p.position();
      mean /= static_cast<double>(obs.points.size());
      EXPECT_LT((mean - obs.centroid).norm(), 1e-12);
    }
  }
  EXPECT_EQ(last.size(), 1u);
  EXPECT_EQ(last.begin()->second, 500u);
}
