#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "segloc/enrichment.hpp"
#include "support.hpp"

using namespace segloc;
using segloc::testing::point;

namespace {

PinholeCamera camera(double fx = 100, double cx = 50, int w = 100, int h = 100) {
  PinholeCamera c;
  c.name = "cam";
  c.fx = c.fy = fx;
  c.cx = cx;
  c.cy = cx;
  c.width = w;
  c.height = h;
  return c;
}

LabeledImage solid(int w, int h, std::array<float, 3> rgb, ClassId label) {
  LabeledImage img(w, h);
  std::fill(img.color.begin(), img.color.end(), rgb);
  std::fill(img.labels.begin(), img.labels.end(), label);
  return img;
}

ClassTable ground_table() {
  return ClassTable({{0, "ground", false, true}, {1, "box", false, false}, {2, "car", true, false}});
}

}  // namespace

TEST(RgbToHsv, Examples) {
  auto red = rgb_to_hsv(1, 0, 0);
  EXPECT_EQ(red.h, 0.0);
  EXPECT_EQ(red.s, 1.0);
  EXPECT_EQ(red.v, 1.0);
  auto gray = rgb_to_hsv(0.5, 0.5, 0.5);
  EXPECT_EQ(gray.h, 0.0);
  EXPECT_EQ(gray.s, 0.0);
  EXPECT_EQ(gray.v, 0.5);
  auto green = rgb_to_hsv(0, 1, 0);
  EXPECT_NEAR(green.h, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(green.s, 1.0);
  EXPECT_EQ(green.v, 1.0);
}

TEST(RgbToHsv, RejectsOutOfRange) {
  EXPECT_THROW(rgb_to_hsv(1.1, 0, 0), std::invalid_argument);
  EXPECT_THROW(rgb_to_hsv(0, -0.01, 0), std::invalid_argument);
}

TEST(RgbToHsv, RoundTripThroughInverse) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    const double r = u(rng), g = u(rng), b = u(rng);
    const Hsv hsv = rgb_to_hsv(r, g, b);
    EXPECT_GE(hsv.h, 0.0);
    EXPECT_LT(hsv.h, 1.0);
    if (hsv.s <= 0.0) continue;
    const auto back = hsv_to_rgb(hsv);
    EXPECT_NEAR(back[0], r, 1e-6);
    EXPECT_NEAR(back[1], g, 1e-6);
    EXPECT_NEAR(back[2], b, 1e-6);
  }
}

TEST(ProjectPoint, Examples) {
  const auto cam = camera();
  const auto axis = project_point(cam, {0, 0, 1});
  ASSERT_TRUE(axis);
  EXPECT_EQ(axis->u, 50.0);
  EXPECT_EQ(axis->v, 50.0);
  EXPECT_FALSE(project_point(cam, {0, 0, -1}));
  const auto off = project_point(cam, {0.1, 0, 1});
  ASSERT_TRUE(off);
  EXPECT_NEAR(off->u, 60.0, 1e-12);
  EXPECT_NEAR(off->v, 50.0, 1e-12);
}

TEST(ProjectPoint, OutsideImageAndExtrinsic) {
  auto cam = camera();
  EXPECT_FALSE(project_point(cam, {0.6, 0, 1}));  // u = 110
  EXPECT_FALSE(project_point(cam, {0, 0, 0}));
  cam.extrinsic = Pose({0, 0, 1}, Eigen::Quaterniond::Identity());
  const auto px = project_point(cam, {0.1, 0, 1});  // depth 2 in the camera
  ASSERT_TRUE(px);
  EXPECT_NEAR(px->u, 55.0, 1e-12);
}

TEST(Camera, Validate) {
  auto c = camera();
  EXPECT_NO_THROW(c.validate());
  c.cx = 100;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = camera();
  c.fx = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(EnrichCloud, PriorityAndVisibility) {
  const auto cam1 = camera();
  auto cam2 = camera();
  cam2.name = "cam2";
  auto cam3 = camera();
  cam3.extrinsic = Pose({0, 0, 0}, Eigen::Quaterniond(Eigen::AngleAxisd(std::numbers::pi, Eigen::Vector3d::UnitX())));
  std::vector<CameraView> views{{cam1, solid(100, 100, {1, 0, 0}, 3)},
                                {cam2, solid(100, 100, {0, 1, 0}, 4)},
                                {cam3, solid(100, 100, {0, 0, 1}, 5)}};
  PointCloudFrame f;
  f.points = {point(0, 0, 2, 0, 0, false, false),    // cameras 1 and 2 see it
              point(0, 0, -2, 0, 0, false, false),   // only camera 3
              point(50, 0, 0.1, 0, 0, false, false)};  // nobody
  const auto out = enrich_cloud(f, views);
  ASSERT_EQ(out.points.size(), 3u);
  EXPECT_TRUE(out.points[0].class_valid);
  EXPECT_EQ(out.points[0].c, 3);  // first camera wins
  EXPECT_EQ(out.points[0].h, 0.0);
  EXPECT_EQ(out.points[1].c, 5);
  EXPECT_NEAR(out.points[1].h, 2.0 / 3.0, 1e-6);
  EXPECT_FALSE(out.points[2].color_valid);
  EXPECT_FALSE(out.points[2].class_valid);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(out.points[i].position(), f.points[i].position());
  }
}

TEST(EnrichCloud, NeverChangesCountOrGeometry) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-5, 5);
  PointCloudFrame f;
  for (int i = 0; i < 500; ++i) f.points.push_back(point(u(rng), u(rng), u(rng), 0, 0, false, false));
  const auto out = enrich_cloud(f, {{camera(), solid(100, 100, {0.2f, 0.4f, 0.6f}, 1)}});
  ASSERT_EQ(out.points.size(), f.points.size());
  for (std::size_t i = 0; i < f.points.size(); ++i) {
    EXPECT_EQ(out.points[i].position(), f.points[i].position());
    EXPECT_EQ(out.points[i].color_valid, out.points[i].class_valid);
    EXPECT_EQ(out.points[i].class_valid, project_point(camera(), f.points[i].position()).has_value());
  }
}

TEST(EnrichCloud, RejectsMismatchedImage) {
  EXPECT_THROW(enrich_cloud(PointCloudFrame{}, {{camera(), solid(10, 10, {0, 0, 0}, 0)}}), std::invalid_argument);
}

TEST(RemoveGround, FlatGroundAndBox) {
  PointCloudFrame f;
  for (int i = -10; i <= 10; ++i) {
    for (int j = -10; j <= 10; ++j) f.points.push_back(point(i * 0.2, j * 0.2, 0.0, 0, 0));
  }
  std::size_t box = 0;
  for (double z = 0.5; z <= 1.5 + 1e-9; z += 0.1) {
    for (double x = 0; x <= 0.5; x += 0.1) {
      f.points.push_back(point(x, 0.3, z, 0, 1));
      ++box;
    }
  }
  const auto r = remove_ground(f, ground_table(), 0.1);
  EXPECT_EQ(r.status, GroundStatus::kRemoved);
  EXPECT_EQ(r.frame.points.size(), box);
  for (const auto& p : r.frame.points) EXPECT_EQ(p.c, 1);
  EXPECT_NEAR(r.plane.head<3>().dot(Eigen::Vector3d::UnitZ()), 1.0, 1e-12);
}

TEST(RemoveGround, NoGroundIsPassThrough) {
  PointCloudFrame f;
  f.points = {point(0, 0, 0, 0, 1), point(1, 0, 0, 0, 1), point(0, 1, 0, 0, 1), point(0, 0, 0.05, 0, 1)};
  const auto r = remove_ground(f, ground_table(), 0.1);
  EXPECT_EQ(r.status, GroundStatus::kNoGround);
  EXPECT_EQ(r.frame.points.size(), f.points.size());
}

TEST(RemoveGround, CollinearGroundIsDegenerate) {
  PointCloudFrame f;
  for (int i = 0; i < 10; ++i) f.points.push_back(point(i, 0, 0, 0, 0));
  f.points.push_back(point(0, 1, 0.5, 0, 1));
  const auto r = remove_ground(f, ground_table(), 0.1);
  EXPECT_EQ(r.status, GroundStatus::kDegenerate);
  EXPECT_EQ(r.frame.points.size(), f.points.size());
}

TEST(RemoveGround, TiltedPlane) {
  // 10 degrees of pitch: z = tan(10 deg) * x.
  const double slope = std::tan(10.0 * std::numbers::pi / 180.0);
  const Eigen::Vector3d normal = Eigen::Vector3d(-slope, 0, 1).normalized();
  PointCloudFrame f;
  for (int i = -20; i <= 20; ++i) {
    for (int j = -20; j <= 20; ++j) f.points.push_back(point(i * 0.25, j * 0.25, slope * i * 0.25, 0, 0));
  }
  std::vector<Eigen::Vector3d> above, near;
  for (int i = -5; i <= 5; ++i) {
    const Eigen::Vector3d on_plane(i * 0.5, 0.7, slope * i * 0.5);
    above.push_back(on_plane + 0.5 * normal);
    near.push_back(on_plane + 0.05 * normal);
  }
  for (const auto& a : above) f.points.push_back(point(a.x(), a.y(), a.z(), 0, 1));
  for (const auto& n : near) f.points.push_back(point(n.x(), n.y(), n.z(), 0, 1));
  const auto r = remove_ground(f, ground_table(), 0.1);
  ASSERT_EQ(r.status, GroundStatus::kRemoved);
  ASSERT_EQ(r.frame.points.size(), above.size());
  for (std::size_t i = 0; i < above.size(); ++i) EXPECT_EQ(r.frame.points[i].position(), above[i]);
}

TEST(RemoveGround, OutputIsSubsetWithoutGroundLabels) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3);
  std::uniform_int_distribution<int> cls(0, 2);
  PointCloudFrame f;
  for (int i = 0; i < 2000; ++i) {
    const ClassId c = static_cast<ClassId>(cls(rng));
    f.points.push_back(point(u(rng), u(rng), c == 0 ? 0.02 * u(rng) : std::abs(u(rng)), 0, c));
  }
  const auto r = remove_ground(f, ground_table(), 0.1);
  std::size_t j = 0;
  for (const auto& p : r.frame.points) {
    EXPECT_NE(p.c, 0);
    while (j < f.points.size() && f.points[j].position() != p.position()) ++j;
    ASSERT_LT(j, f.points.size());
  }
}

TEST(Calibration, RoundTripAndErrors) {
  auto c = camera();
  c.name = "front";
  c.extrinsic = Pose({0.1, 0.2, 0.3}, Eigen::Quaterniond(0.5, 0.5, -0.5, 0.5));
  const auto dir = segloc::testing::temp_dir("calib");
  write_calibration(dir / "calib.txt", {c, camera()});
  const auto back = read_calibration(dir / "calib.txt");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "front");
  EXPECT_EQ(back[0].fx, c.fx);
  EXPECT_LT((back[0].extrinsic.translation - c.extrinsic.translation).norm(), 1e-12);
  EXPECT_THROW(parse_calibration("camera a\n1 1 0 0 10\n"), DataError);
  EXPECT_THROW(parse_calibration("camera a\n1 1 20 0 10 10\nextrinsic 0 0 0 1 0 0 0\n"), DataError);
}
