#include <gtest/gtest.h>

#include <fstream>
#include <numbers>
#include <random>

#include "segloc/localize.hpp"
#include "support.hpp"

using namespace segloc;
using segloc::testing::random_pose;
using segloc::testing::ransac_scene;
using segloc::testing::rotation_error_deg;

namespace {

TargetMap random_map(std::size_t n, std::size_t dim, std::mt19937_64& rng, int levels = 0) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::uniform_int_distribution<int> q(0, std::max(levels, 1));
  TargetMap map;
  map.dim = static_cast<std::uint16_t>(dim);
  for (std::size_t i = 0; i < n; ++i) {
    TargetMapEntry e;
    e.segment_id = 10 * (n - i);  // ids not in scan order
    e.centroid = Eigen::Vector3f(u(rng), u(rng), u(rng)) * 50.0f;
    e.descriptor.values.resize(dim);
    // Coarse values create exact ties.
    for (auto& v : e.descriptor.values) v = levels ? static_cast<float>(q(rng)) : u(rng);
    map.entries.push_back(std::move(e));
  }
  return map;
}

Descriptor random_descriptor(std::size_t dim, std::mt19937_64& rng, int levels = 0) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::uniform_int_distribution<int> q(0, std::max(levels, 1));
  Descriptor d;
  for (std::size_t i = 0; i < dim; ++i) d.values.push_back(levels ? static_cast<float>(q(rng)) : u(rng));
  return d;
}

SegmentObservation obs(std::uint64_t id, std::uint32_t index, bool final, double x) {
  SegmentObservation o;
  o.segment_id = id;
  o.observation_index = index;
  o.is_final = final;
  for (int i = 0; i < 20; ++i) o.points.push_back(segloc::testing::point(x + 0.01 * i, 0, 0, 0.1, 1));
  o.update_centroid();
  return o;
}

}  // namespace

TEST(Knn, ExactMatchFirst) {
  std::mt19937_64 rng(1);
  const auto map = random_map(50, 8, rng);
  const auto r = knn(map.entries[17].descriptor, map, 5);
  ASSERT_EQ(r.size(), 5u);
  EXPECT_EQ(r[0].target_id, map.entries[17].segment_id);
  EXPECT_EQ(r[0].distance, 0.0);
}

TEST(Knn, LargeKReturnsWholeMap) {
  std::mt19937_64 rng(2);
  const auto map = random_map(7, 4, rng);
  const auto r = knn(random_descriptor(4, rng), map, 100);
  ASSERT_EQ(r.size(), 7u);
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_LE(r[i - 1].distance, r[i].distance);
}

TEST(Knn, EqualsBruteForceWithTies) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int levels = trial % 2 ? 1 : 0;
    const auto map = random_map(200, 6, rng, levels);
    const auto q = random_descriptor(6, rng, levels);
    const auto expect = segloc::testing::brute_knn(q, map, 16);
    const auto got = knn(q, map, 16);
    ASSERT_EQ(got.size(), expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].target_id, expect[i].first);
      EXPECT_EQ(got[i].distance, expect[i].second);
    }
    const auto serial = knn_serial(q, map, 16);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(serial[i].target_id, got[i].target_id);
  }
}

TEST(RigidAlign, IdentityAndKnownTransform) {
  std::vector<PointPair> same{{{0, 0, 0}, {0, 0, 0}}, {{1, 0, 0}, {1, 0, 0}}, {{0, 1, 0}, {0, 1, 0}},
                              {{0, 0, 1}, {0, 0, 1}}};
  const Pose id = rigid_align(same);
  EXPECT_LT(id.translation.norm(), 1e-12);
  EXPECT_LT(rotation_angle_between(id.rotation, Eigen::Quaterniond::Identity()), 1e-12);

  const Pose truth = Pose::from_yaw(std::numbers::pi / 2, {1, 2, 3});
  std::vector<PointPair> pairs;
  for (const auto& [q, p] : same) pairs.push_back({q, transform_point(truth, q)});
  const Pose got = rigid_align(pairs);
  EXPECT_LT((got.translation - truth.translation).norm(), 1e-9);
  EXPECT_LT(rotation_angle_between(got.rotation, truth.rotation), 1e-9);
}

TEST(RigidAlign, NoisyPairs) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-10, 10);
  std::normal_distribution<double> g(0, 0.01);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose truth = random_pose(rng);
    std::vector<PointPair> pairs;
    for (int i = 0; i < 100; ++i) {
      const Eigen::Vector3d q(u(rng), u(rng), u(rng));
      pairs.push_back({q, transform_point(truth, q) + Eigen::Vector3d(g(rng), g(rng), g(rng))});
    }
    const Pose got = rigid_align(pairs);
    EXPECT_LT((got.translation - truth.translation).norm(), 0.01);
    EXPECT_LT(rotation_error_deg(got.rotation, truth.rotation), 0.2);
    EXPECT_NEAR(got.rotation.toRotationMatrix().determinant(), 1.0, 1e-9);
  }
}

TEST(RigidAlign, RejectsDegenerate) {
  std::vector<PointPair> two{{{0, 0, 0}, {0, 0, 0}}, {{1, 0, 0}, {1, 0, 0}}};
  EXPECT_THROW(rigid_align(two), std::invalid_argument);
  std::vector<PointPair> line{{{0, 0, 0}, {0, 0, 0}}, {{1, 0, 0}, {1, 0, 0}}, {{2, 0, 0}, {2, 0, 0}}};
  EXPECT_THROW(rigid_align(line), std::invalid_argument);
  EXPECT_FALSE(try_rigid_align(line).has_value());
}

TEST(RigidAlign, ReflectionCorrected) {
  // Mirrored targets: the best proper rotation still has determinant +1.
  std::vector<PointPair> pairs{{{1, 0, 0}, {-1, 0, 0}}, {{0, 1, 0}, {0, 1, 0}}, {{0, 0, 1}, {0, 0, 1}},
                               {{1, 1, 1}, {-1, 1, 1}}};
  EXPECT_NEAR(rigid_align(pairs).rotation.toRotationMatrix().determinant(), 1.0, 1e-9);
}

TEST(Ransac, OutlierFree) {
  std::mt19937_64 rng(5);
  const Pose truth = random_pose(rng);
  const auto cands = ransac_scene(truth, 30, 0, 0.0, rng);
  const auto r = ransac_verify(cands, RansacParams{});
  ASSERT_TRUE(r);
  EXPECT_EQ(r->inlier_count, 30u);
  EXPECT_LT((r->transform.translation - truth.translation).norm(), 1e-9);
  EXPECT_LT(rotation_angle_between(r->transform.rotation, truth.rotation), 1e-9);
}

TEST(Ransac, TooFewConsistent) {
  std::mt19937_64 rng(6);
  const auto cands = ransac_scene(random_pose(rng), 5, 0, 0.0, rng);
  EXPECT_FALSE(ransac_verify(cands, RansacParams{}).has_value());
  EXPECT_FALSE(ransac_verify({}, RansacParams{}).has_value());
}

TEST(Ransac, RobustToOutliers) {
  std::mt19937_64 rng(7);
  int ok = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Pose truth = random_pose(rng);
    const auto cands = ransac_scene(truth, 10, 20, 0.05, rng);
    RansacParams p;
    p.seed = trial + 1;
    const auto r = ransac_verify(cands, p);
    if (!r) continue;
    std::set<std::uint64_t> inl;
    for (const auto& c : r->inliers) inl.insert(c.query_id);
    bool superset = true;
    for (std::uint64_t q = 1; q <= 10; ++q) superset &= inl.count(q) > 0;
    ok += superset && (r->transform.translation - truth.translation).norm() < 0.1 &&
          rotation_error_deg(r->transform.rotation, truth.rotation) < 1.0;
  }
  EXPECT_GE(ok, 19);
}

TEST(Ransac, InliersSatisfyPredicateAndSerialMatches) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto cands = ransac_scene(random_pose(rng), 12, 30, 0.1, rng);
    // Some queries matched to several targets.
    for (std::size_t i = 0; i < 10; ++i) {
      auto dup = cands[i];
      dup.target_id += 5000;
      dup.target_centroid += Eigen::Vector3d(0.2, 0, 0);
      cands.push_back(dup);
    }
    RansacParams p;
    p.seed = trial;
    p.max_iterations = 500;
    const auto r = ransac_verify(cands, p);
    const auto s = ransac_verify_serial(cands, p);
    ASSERT_EQ(r.has_value(), s.has_value());
    if (!r) continue;
    EXPECT_EQ(r->inlier_count, s->inlier_count);
    EXPECT_EQ(r->transform.translation, s->transform.translation);
    EXPECT_GE(r->inlier_count, p.min_inliers);
    std::set<std::uint64_t> queries;
    for (const auto& c : r->inliers) {
      EXPECT_LE((transform_point(r->transform, c.query_centroid) - c.target_centroid).norm(), p.max_centroid_dist);
      EXPECT_TRUE(queries.insert(c.query_id).second);
    }
  }
}

TEST(Ransac, DeterministicUnderSeed) {
  std::mt19937_64 rng(9);
  const auto cands = ransac_scene(random_pose(rng), 10, 20, 0.05, rng);
  RansacParams p;
  p.seed = 42;
  const auto a = ransac_verify(cands, p), b = ransac_verify(cands, p);
  ASSERT_EQ(a.has_value(), b.has_value());
  if (a) {
    EXPECT_EQ(a->transform.translation, b->transform.translation);
    EXPECT_EQ(a->transform.rotation.coeffs(), b->transform.rotation.coeffs());
  }
  EXPECT_EQ(ransac_sample(cands, 42, 7), ransac_sample(cands, 42, 7));
}

TEST(Ransac, SampleHasDistinctSegments) {
  std::mt19937_64 rng(10);
  auto cands = ransac_scene(random_pose(rng), 4, 4, 0.0, rng);
  for (auto& c : cands) c.query_id = c.query_id % 3;
  for (std::size_t it = 0; it < 200; ++it) {
    const auto s = ransac_sample(cands, 1, it);
    if (!s) continue;
    std::set<std::uint64_t> q, t;
    for (auto i : *s) {
      q.insert(cands[i].query_id);
      t.insert(cands[i].target_id);
    }
    EXPECT_EQ(q.size(), 3u);
    EXPECT_EQ(t.size(), 3u);
  }
  std::vector<MatchCandidate> one_query(5, cands[0]);
  EXPECT_FALSE(ransac_sample(one_query, 1, 0).has_value());
}

TEST(Ransac, InlierCountMonotoneInCandidates) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose pose = random_pose(rng);
    auto cands = ransac_scene(pose, 8, 15, 0.2, rng);
    const auto base = find_inliers(cands, pose, 0.4).size();
    auto extra = ransac_scene(pose, 3, 3, 0.2, rng);
    for (auto& c : extra) c.query_id += 500 * (trial % 2);  // new or repeated queries
    cands.insert(cands.end(), extra.begin(), extra.end());
    EXPECT_GE(find_inliers(cands, pose, 0.4).size(), base);
  }
}

TEST(Ransac, ParamsValidate) {
  RansacParams p;
  p.min_inliers = 2;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(TargetMap, KeepsFinalObservationOnly) {
  HandCraftedBackend b(segloc::testing::small_classes());
  std::vector<SegmentObservation> o{obs(1, 0, false, 0), obs(1, 1, false, 1), obs(1, 2, true, 2),
                                    obs(2, 0, true, 5)};
  const auto map = build_target_map(o, b, 1);
  ASSERT_EQ(map.size(), 2u);
  EXPECT_EQ(map.entries[0].segment_id, 1u);
  EXPECT_NEAR(map.entries[0].centroid.x(), o[2].centroid.x(), 1e-6);
  EXPECT_EQ(map.entries[0].descriptor, describe(b, o[2], observation_seed(1, o[2])));
  EXPECT_EQ(map.backend_hash, b.hash());

  EXPECT_TRUE(build_target_map(std::vector<SegmentObservation>{}, b, 1).empty());
  o.push_back(obs(2, 3, true, 6));
  EXPECT_THROW(build_target_map(o, b, 1), std::invalid_argument);
}

TEST(TargetMap, FileRoundTripAndSize) {
  std::mt19937_64 rng(12);
  auto map = random_map(2006, 64, rng);
  map.class_table_hash = 0x1234;
  map.backend_hash = 0xabcdef;
  const auto dir = segloc::testing::temp_dir("map");
  save_map(map, dir / "m.map");
  EXPECT_EQ(std::filesystem::file_size(dir / "m.map"), 28u + 2006u * 276u);
  EXPECT_EQ(map_file_size(2006, 64), 28u + 2006u * 276u);
  EXPECT_EQ(load_map(dir / "m.map"), map);

  try {
    load_map(dir / "m.map", 32);
    FAIL();
  } catch (const MapLoadError& e) {
    EXPECT_EQ(e.kind(), MapLoadErrorKind::kBadDimension);
  }
  std::filesystem::resize_file(dir / "m.map", 1000);
  try {
    load_map(dir / "m.map");
    FAIL();
  } catch (const MapLoadError& e) {
    EXPECT_EQ(e.kind(), MapLoadErrorKind::kTruncated);
  }
  std::ofstream(dir / "bad.map") << "XXXX";
  try {
    load_map(dir / "bad.map");
    FAIL();
  } catch (const MapLoadError& e) {
    EXPECT_EQ(e.kind(), MapLoadErrorKind::kBadMagic);
  }
  EXPECT_THROW(load_map(dir / "missing.map"), MapLoadError);
}

TEST(LocalizeStep, SubsetRecoversIdentity) {
  HandCraftedBackend b(segloc::testing::small_classes());
  std::mt19937_64 rng(13);
  auto map = random_map(60, 8, rng);
  map.backend_hash = b.hash();
  std::vector<LocalSegment> local;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& e = map.entries[i * 3];
    local.push_back({i + 1, e.centroid.cast<double>(), e.descriptor});
  }
  const auto r = localize_step(local, map, 4, RansacParams{}, b.hash());
  ASSERT_TRUE(r);
  EXPECT_EQ(r->inlier_count, 20u);
  EXPECT_LT(r->transform.translation.norm(), 1e-4);
  EXPECT_FALSE(localize_step({}, map, 4, RansacParams{}, b.hash()).has_value());
  EXPECT_THROW(localize_step(local, map, 4, RansacParams{}, b.hash() + 1), std::invalid_argument);
}
