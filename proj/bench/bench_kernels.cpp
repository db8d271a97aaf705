// Each OpenMP kernel against its serial reference. Run with
// OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <random>

#include "segloc/descriptor.hpp"
#include "segloc/eval.hpp"
#include "segloc/localize.hpp"
#include "segloc/synth.hpp"
#include "segloc/trainable.hpp"
#include "segloc/training.hpp"
#include "support.hpp"

using namespace segloc;

namespace {

struct Fixture {
  std::vector<SegmentObservation> finals, partials;
  std::vector<std::uint64_t> ids;
  HandCraftedBackend backend{default_classes()};
  TargetMap map;
  std::vector<Descriptor> partial_descs;
  std::vector<RetrievalQuery> queries;

  Fixture() {
    ObjectSetParams p;
    p.objects = 120;
    p.views = 3;
    for (const auto& o : synthesize_object_observations(p)) {
      (o.observation.is_final ? finals : partials).push_back(o.observation);
      if (!o.observation.is_final) ids.push_back(o.object_id);
    }
    map = build_target_map(finals, backend, 1);
    partial_descs = describe_batch(backend, partials, 1);
    for (std::size_t i = 0; i < partials.size(); ++i) queries.push_back({partials[i], ids[i], 0});
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

TargetMap random_map(std::size_t n) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> g;
  TargetMap map;
  map.dim = 64;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(64);
    for (auto& x : v) x = g(rng);
    map.entries.push_back({i + 1, Eigen::Vector3f::Zero(), Descriptor(v)});
  }
  return map;
}

template <auto Fn>
void bm_describe_batch(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(Fn(f.backend, f.partials, 1, kDefaultSubsample));
}

template <auto Fn>
void bm_knn(benchmark::State& state) {
  const auto map = random_map(static_cast<std::size_t>(state.range(0)));
  const auto query = map.entries.front().descriptor;
  for (auto _ : state) benchmark::DoNotOptimize(Fn(query, map, 16, 0, Eigen::Vector3d::Zero()));
}

template <auto Fn>
void bm_ransac(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const auto cands = segloc::testing::ransac_scene(Pose::from_yaw(0.7, {3, -2, 0}), 20, 200, 0.05, rng);
  RansacParams p;
  p.max_iterations = 20000;
  p.min_inliers = 100;  // above the 20 true matches, so every iteration runs
  for (auto _ : state) benchmark::DoNotOptimize(Fn(cands, p));
}

template <auto Fn>
void bm_hull_iou(benchmark::State& state) {
  const auto& f = fixture();
  const auto a = positions(f.finals[0]), b = positions(f.partials[0]);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b, 200000, 1));
}

template <auto Fn>
void bm_pair_segments(benchmark::State& state) {
  const auto& f = fixture();
  std::vector<SegmentObservation> moved = f.finals;
  for (auto& o : moved) {
    for (auto& pt : o.points) pt.x += 0.05;
  }
  for (auto _ : state) benchmark::DoNotOptimize(Fn(f.finals, moved, 100.0, 2000, 1));
}

template <auto Fn>
void bm_retrieval(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(Fn(f.queries, f.partial_descs, f.map, 16));
}

template <auto Fn>
void bm_scan(benchmark::State& state) {
  const auto spec = loop_scene({});
  const auto pose = trajectory_poses(spec)[20].pose;
  for (auto _ : state) benchmark::DoNotOptimize(Fn(spec, pose, 1));
}

template <auto Fn>
void bm_render(benchmark::State& state) {
  const auto spec = loop_scene({});
  const auto pose = trajectory_poses(spec)[20].pose;
  PinholeCamera cam;
  cam.fx = cam.fy = 300;
  cam.cx = 160, cam.cy = 120;
  cam.width = 320, cam.height = 240;
  Eigen::Matrix3d r;
  r << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  cam.extrinsic = Pose({0, 0, 0}, Eigen::Quaterniond(r));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(spec, pose, cam, 1));
}

template <auto Fn>
void bm_object_observations(benchmark::State& state) {
  ObjectSetParams p;
  p.objects = 24;
  p.views = 3;
  for (auto _ : state) benchmark::DoNotOptimize(Fn(p, 1));
}

template <auto Fn>
void bm_train(benchmark::State& state) {
  const auto& f = fixture();
  const auto classes = default_classes();
  TrainableBackend initial(classes, TrainableArchitecture{}, 1);
  auto triplets = make_triplets(f.partials, f.ids, 1);
  triplets.resize(std::min<std::size_t>(triplets.size(), 64));
  TrainParams p;
  p.epochs = 1;
  for (const auto& e : classes.entries()) p.augmentation.label_pool.push_back(e.id);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(initial, triplets, p));
}

}  // namespace

BENCHMARK(bm_describe_batch<describe_batch>)->Name("describe_batch/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_describe_batch<describe_batch_serial>)->Name("describe_batch/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_knn<knn>)->Name("knn/parallel")->Arg(2000)->Arg(50000);
BENCHMARK(bm_knn<knn_serial>)->Name("knn/serial")->Arg(2000)->Arg(50000);
BENCHMARK(bm_ransac<ransac_verify>)->Name("ransac_verify/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_ransac<ransac_verify_serial>)->Name("ransac_verify/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_hull_iou<hull_iou>)->Name("hull_iou/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_hull_iou<hull_iou_serial>)->Name("hull_iou/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_pair_segments<pair_segments>)->Name("pair_segments/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_pair_segments<pair_segments_serial>)->Name("pair_segments/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_retrieval<static_cast<RetrievalCurve (*)(std::span<const RetrievalQuery>, std::span<const Descriptor>,
                                                      const TargetMap&, std::size_t)>(retrieval_curve)>)
    ->Name("retrieval_curve/parallel");
BENCHMARK(bm_retrieval<retrieval_curve_serial>)->Name("retrieval_curve/serial");
BENCHMARK(bm_scan<scan>)->Name("scan/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_scan<scan_serial>)->Name("scan/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_render<render_image>)->Name("render_image/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_render<render_image_serial>)->Name("render_image/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_object_observations<synthesize_object_observations>)
    ->Name("synthesize_object_observations/parallel")
    ->Unit(benchmark::kMillisecond);
BENCHMARK(bm_object_observations<synthesize_object_observations_serial>)
    ->Name("synthesize_object_observations/serial")
    ->Unit(benchmark::kMillisecond);
BENCHMARK(bm_train<train>)->Name("train/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_train<train_serial>)->Name("train/serial")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
