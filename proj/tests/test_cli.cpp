#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "segloc/io.hpp"
#include "segloc/localize.hpp"
#include "segloc/synth.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int status = -1;
  std::string out;
};

// Runs the CLI and captures stdout, or stderr when want_stderr is set.
Result run(const std::string& args, bool want_stderr = false) {
  const std::string cmd =
      std::string(SEGLOC_CLI) + " " + args + (want_stderr ? " 2>&1 >/dev/null" : " 2>/dev/null");
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

const char* kSpec =
    "class 0 ground 0 1\nclass 1 building 0 0\nclass 2 pole 0 0\n"
    "plane 5 0 0 0 40 30 0 0 0.3 0.4 0.5 0.01\n"
    "box 6 5 1.5 20 3 2 3 1 0.05 0.6 0.7 0.02\n"
    "box 12 -5 1 0 2 2 2 1 0.1 0.5 0.6 0.02\n"
    "cylinder 3 -4 0 0 0.3 0 4 2 0.6 0.3 0.5 0.02\n"
    "waypoint 0 0 1.8\nwaypoint 15 0 1.8\nspeed 3\nseed 5\n";

}  // namespace

TEST(Cli, SynthThenBuildMap) {
  const auto dir = segloc::testing::temp_dir("cli_chain");
  std::ofstream(dir / "s.cfg") << kSpec;
  const auto synth = run("synth --spec " + (dir / "s.cfg").string() + " --out " + (dir / "d").string());
  ASSERT_EQ(synth.status, 0);
  const auto build =
      run("--json build-map --data " + (dir / "d").string() + " --out " + (dir / "m.map").string());
  ASSERT_EQ(build.status, 0);
  const auto summary = nlohmann::json::parse(build.out);
  EXPECT_TRUE(summary.is_object());
  const auto map = segloc::load_map(dir / "m.map");
  EXPECT_EQ(summary.at("map_entries").get<std::size_t>(), map.size());
  EXPECT_GT(map.size(), 0u);
}

TEST(Cli, UnknownFlagIsUsageError) {
  const auto r = run("build-map --no-such-flag", true);
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("Usage"), std::string::npos);
  EXPECT_EQ(run("").status, 1);
}

TEST(Cli, EvalLocWithoutGroundTruthIsDataError) {
  const auto dir = segloc::testing::temp_dir("cli_evalloc");
  std::ofstream(dir / "r.csv") << "timestamp,tx,ty,tz,qw,qx,qy,qz,inliers\n";
  const auto r = run("eval-loc --results " + (dir / "r.csv").string() + " --out " + (dir / "a.csv").string(), true);
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("ground-truth"), std::string::npos);
}

TEST(Cli, MissingDatasetIsDataError) {
  const auto dir = segloc::testing::temp_dir("cli_missing");
  EXPECT_EQ(run("build-map --data " + (dir / "nothing").string() + " --out " + (dir / "m.map").string()).status, 2);
}

TEST(Cli, EmptyDatasetSucceeds) {
  const auto dir = segloc::testing::temp_dir("cli_empty");
  segloc::write_class_table(dir / "classes.txt", segloc::default_classes());
  segloc::write_poses(dir / "poses.txt", {});
  segloc::DatasetManifest m;
  m.root = dir;
  m.classes = "classes.txt";
  m.poses = "poses.txt";
  segloc::write_manifest(m);
  const auto r = run("--json build-map --data " + dir.string() + " --out " + (dir / "m.map").string());
  ASSERT_EQ(r.status, 0);
  EXPECT_TRUE(segloc::load_map(dir / "m.map").empty());
  EXPECT_EQ(fs::file_size(dir / "m.map"), 28u);
}
