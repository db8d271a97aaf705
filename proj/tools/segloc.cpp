// Command-line front end: dataset synthesis, mapping, localization,
// training and evaluation reports.

#include <omp.h>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "segloc/config.hpp"
#include "segloc/enrichment.hpp"
#include "segloc/eval.hpp"
#include "segloc/io.hpp"
#include "segloc/localize.hpp"
#include "segloc/pipeline.hpp"
#include "segloc/report.hpp"
#include "segloc/synth.hpp"
#include "segloc/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace segloc;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

struct Globals {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool json = false;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

PipelineConfig load_config(const Globals& g) {
  PipelineConfig c = g.config_file.empty() ? PipelineConfig{} : read_config(g.config_file);
  if (g.seed) c.set_seed(*g.seed);
  return c;
}

void emit(const Globals& g, const json& summary) {
  if (g.json) std::cout << summary.dump(2) << "\n";
  else
    for (const auto& [k, v] : summary.items()) std::cout << k << ": " << v.dump() << "\n";
}

std::vector<SegmentObservation> finals_of(const std::vector<LabeledObservation>& obs) {
  std::vector<SegmentObservation> out;
  for (const auto& o : obs) {
    if (o.observation.is_final) out.push_back(o.observation);
  }
  return out;
}

std::unique_ptr<DescriptorBackend> backend_for(const PipelineConfig& config, const ClassTable& classes,
                                               const std::string& override_file) {
  PipelineConfig c = config;
  if (!override_file.empty()) c.backend_file = override_file;
  return make_backend(c, classes);
}

int cmd_synth(const Globals& g, const std::string& spec_file, bool loop, bool reverse, std::size_t loop_objects,
              std::vector<double> offset, std::size_t objects, std::size_t views, const std::string& out) {
  const std::uint64_t seed = g.seed.value_or(1);
  if (objects > 0) {
    ObjectSetParams p;
    p.objects = objects;
    p.views = views;
    p.seed = seed;
    const auto obs = synthesize_object_observations(p);
    write_observations(out, obs);
    emit(g, {{"observations", obs.size()}, {"objects", objects}, {"out", out}});
    return 0;
  }
  SceneSpec spec;
  if (loop) {
    LoopSceneParams p;
    p.objects = loop_objects;
    p.seed = seed;
    spec = loop_scene(p);
    spec.reverse = reverse;
    spec.seed = mix_seed(seed, reverse ? 2 : 1);
  } else {
    if (spec_file.empty()) throw UsageError("synth needs --spec, --loop or --objects");
    spec = read_scene_spec(spec_file);
    if (reverse) spec.reverse = true;
    if (g.seed) spec.seed = seed;
  }
  if (!offset.empty()) {
    if (offset.size() != 4) throw UsageError("--offset takes x,y,z,yaw_deg");
    spec.frame_offset =
        Pose::from_yaw(offset[3] * std::numbers::pi / 180.0, Eigen::Vector3d(offset[0], offset[1], offset[2]));
  }
  const auto m = generate_dataset(spec, out);
  emit(g, {{"frames", m.frames.size()}, {"primitives", spec.primitives.size()}, {"out", out}});
  return 0;
}

int cmd_enrich(const Globals& g, const std::string& data_dir, const std::string& out, bool ground) {
  const auto config = load_config(g);
  const Dataset data = open_dataset(data_dir);
  fs::create_directories(fs::path(out) / "clouds");
  DatasetManifest m = data.manifest;
  m.root = out;
  m.calibration.reset();
  std::size_t removed = 0;
  for (std::size_t i = 0; i < data.manifest.frames.size(); ++i) {
    PointCloudFrame frame = load_frame(data, i);
    if (!data.manifest.frames[i].images.empty()) frame = enrich_cloud(frame, load_views(data, i));
    if (ground) {
      const auto before = frame.points.size();
      frame = remove_ground(frame, data.classes, config.ground_eps).frame;
      removed += before - frame.points.size();
      m.frames[i].object_ids.reset();
    }
    auto& f = m.frames[i];
    f.images.clear();
    write_cloud(m.resolve(f.cloud), frame.points);
    if (f.object_ids) fs::copy_file(data.manifest.resolve(*f.object_ids), m.resolve(*f.object_ids),
                                    fs::copy_options::overwrite_existing);
  }
  fs::copy_file(data.manifest.resolve(data.manifest.classes), m.resolve(m.classes), fs::copy_options::overwrite_existing);
  fs::copy_file(data.manifest.resolve(data.manifest.poses), m.resolve(m.poses), fs::copy_options::overwrite_existing);
  if (m.ground_truth) {
    fs::copy_file(data.manifest.resolve(*m.ground_truth), m.resolve(*m.ground_truth),
                  fs::copy_options::overwrite_existing);
  }
  write_manifest(m);
  emit(g, {{"frames", m.frames.size()}, {"ground_points_removed", removed}, {"out", out}});
  return 0;
}

json run_summary(const RunArtifacts& a) {
  std::vector<double> totals;
  for (const auto& t : a.timings) totals.push_back(t.total_ms);
  std::sort(totals.begin(), totals.end());
  const double median = totals.empty() ? 0.0 : totals[totals.size() / 2];
  return {{"frames", a.timings.size()},
          {"map_entries", a.map.size()},
          {"observations", a.observations.size()},
          {"localizations", a.localizations.size()},
          {"localization_attempts", a.localization_attempts},
          {"median_frame_ms", median},
          {"peak_voxels", a.peak_voxels},
          {"warnings", a.warnings.size()}};
}

int cmd_build_map(const Globals& g, const std::string& data_dir, const std::string& out, const std::string& backend_file,
                  const std::string& obs_out, bool all_obs, const std::string& timing_out) {
  const auto config = load_config(g);
  const Dataset data = open_dataset(data_dir);
  const auto backend = backend_for(config, data.classes, backend_file);
  RunOptions opts;
  opts.mode = RunMode::kBuildMap;
  opts.keep_observations = all_obs;
  const auto run = run_pipeline(data, config, *backend, opts);
  save_map(run.map, out);
  if (!obs_out.empty()) write_observations(obs_out, run.observations);
  if (!timing_out.empty()) write_text(timing_out, timing_csv(run.timings));
  auto s = run_summary(run);
  s["map"] = out;
  s["map_bytes"] = fs::file_size(out);
  emit(g, s);
  return 0;
}

int cmd_localize(const Globals& g, const std::string& data_dir, const std::string& map_file, const std::string& out,
                 const std::string& backend_file, bool loop_close, const std::string& timing_out) {
  const auto config = load_config(g);
  const Dataset data = open_dataset(data_dir);
  const auto backend = backend_for(config, data.classes, backend_file);
  std::optional<TargetMap> map;
  RunOptions opts;
  opts.mode = loop_close ? RunMode::kLoopClose : RunMode::kLocalize;
  if (!loop_close) {
    if (map_file.empty()) throw UsageError("localize needs --map (or --loop-close)");
    map = load_map(map_file);
    opts.map = &*map;
  }
  const auto run = run_pipeline(data, config, *backend, opts);
  write_text(out, localization_csv(run.localizations));
  if (!timing_out.empty()) write_text(timing_out, timing_csv(run.timings));
  auto s = run_summary(run);
  s["results"] = out;
  emit(g, s);
  return 0;
}

int cmd_train(const Globals& g, const std::string& obs_file, const std::string& out, bool linear) {
  const auto config = load_config(g);
  const auto labeled = read_observations(obs_file);
  std::vector<SegmentObservation> obs;
  std::vector<std::uint64_t> ids;
  for (const auto& o : labeled) {
    if (o.object_id == 0) continue;
    obs.push_back(o.observation);
    ids.push_back(o.object_id);
  }
  if (obs.empty()) throw DataError("no observations with ground-truth object ids in " + obs_file);
  const ClassTable classes = default_classes();
  TrainableArchitecture arch = config.architecture;
  arch.linear = linear || config.backend == BackendChoice::kTrainableLinear;
  const TrainableBackend initial(classes, arch, config.seed);
  TrainParams params = config.training;
  params.n_sub = config.n_sub;
  if (params.augmentation.label_pool.empty()) {
    for (const auto& e : classes.entries()) params.augmentation.label_pool.push_back(e.id);
  }
  const auto triplets = make_triplets(obs, ids, config.seed);
  const auto result = train(initial, triplets, params);
  save_backend(result.backend, out);
  emit(g, {{"triplets", triplets.size()}, {"epoch_loss", result.epoch_loss}, {"out", out}});
  return 0;
}

int cmd_eval_iou(const Globals& g, const std::string& a, const std::string& b, const std::string& out,
                 const std::string& svg) {
  const auto config = load_config(g);
  const auto fa = finals_of(read_observations(a)), fb = finals_of(read_observations(b));
  auto report = make_iou_report(pair_segments(fa, fb, config.pairing_gate, config.iou_samples, config.seed), 0.1,
                                config.iou_threshold);
  write_text(out, iou_csv(report));
  if (!svg.empty()) write_text(svg, svg_iou_histogram(report));
  double mean = 0.0;
  for (const auto& p : report.pairs) mean += p.estimate.iou;
  if (!report.pairs.empty()) mean /= static_cast<double>(report.pairs.size());
  emit(g, {{"pairs", report.pairs.size()},
           {"at_or_above_threshold", report.n_at_or_above},
           {"below_threshold", report.n_below},
           {"mean_iou", mean}});
  return 0;
}

int cmd_eval_retrieval(const Globals& g, const std::string& obs_file, const std::string& map_file,
                       const std::string& backend_file, const std::string& out, const std::string& buckets_out,
                       const std::string& svg, std::size_t k_max) {
  const auto config = load_config(g);
  const auto labeled = read_observations(obs_file);
  const ClassTable classes = default_classes();
  const auto backend = backend_for(config, classes, backend_file);
  TargetMap map;
  if (map_file.empty()) {
    map = build_target_map(finals_of(labeled), *backend, config.seed, config.n_sub);
  } else {
    map = load_map(map_file);
    if (map.backend_hash != backend->hash()) throw DataError("map was built with a different descriptor backend");
  }
  std::map<std::uint64_t, std::size_t> final_count;
  for (const auto& o : labeled) {
    if (o.observation.is_final) final_count[o.observation.segment_id] = o.observation.point_count();
  }
  std::vector<RetrievalQuery> queries;
  for (const auto& o : labeled) {
    if (o.observation.is_final) continue;
    const auto it = final_count.find(o.observation.segment_id);
    queries.push_back({o.observation, o.observation.segment_id, it == final_count.end() ? 0 : it->second});
  }
  const auto curve = retrieval_curve(queries, map, *backend, k_max, config.seed, config.n_sub);
  write_text(out, retrieval_csv(curve));
  if (!buckets_out.empty()) write_text(buckets_out, retrieval_buckets_csv(curve));
  if (!svg.empty()) write_text(svg, svg_retrieval(curve));
  emit(g, {{"queries", queries.size()},
           {"not_in_map", curve.not_in_map},
           {"map_entries", map.size()},
           {"recall_at_1", curve.recall_at(1)},
           {"recall_at_k", curve.recall_at(k_max)}});
  return 0;
}

int cmd_eval_loc(const Globals& g, const std::string& results, const std::string& gt_file, const std::string& data_dir,
                 const std::string& out, const std::string& svg, std::size_t attempts) {
  std::vector<StampedPose> gt;
  if (!gt_file.empty()) {
    if (!fs::exists(gt_file)) throw DataError("ground-truth file not found: " + gt_file);
    gt = read_poses(gt_file);
  } else if (!data_dir.empty()) {
    gt = open_dataset(data_dir).ground_truth;
  }
  if (gt.empty()) throw DataError("eval-loc needs ground-truth poses (--ground-truth or a dataset with ground_truth)");
  const auto res = parse_localization_csv(read_text(results));
  const auto report = accuracy_report(res, gt);
  write_text(out, accuracy_csv(report));
  if (!svg.empty()) write_text(svg, svg_accuracy(report));
  json s = {{"localizations", report.entries.size()},
            {"below_1m", report.n_below_1m},
            {"below_5m", report.n_below_5m},
            {"within_1m_5deg", report.count_within(1.0, 5.0)},
            {"dropped", report.dropped}};
  if (attempts > 0) {
    s["attempts"] = attempts;
    s["fraction_within_1m_5deg"] = static_cast<double>(report.count_within(1.0, 5.0)) / static_cast<double>(attempts);
  }
  emit(g, s);
  return 0;
}

int cmd_plot(const Globals& g, const std::string& kind, const std::string& csv, const std::string& out) {
  const auto [header, rows] = parse_csv(read_text(csv));
  auto col = [&, &header = header](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("csv has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::string svg;
  if (kind == "iou") {
    const auto c = col("iou");
    std::vector<SegmentPair> pairs;
    for (const auto& r : rows) pairs.push_back({0, 0, {std::stod(r.at(c)), 0.0, false, 0, 0}});
    svg = svg_iou_histogram(make_iou_report(pairs));
  } else if (kind == "retrieval") {
    const auto cc = col("completeness"), cr = col("rank");
    RetrievalCurve curve;
    std::vector<RetrievalEntry> entries;
    for (const auto& r : rows) {
      RetrievalEntry e;
      e.completeness = std::stod(r.at(cc));
      if (r.at(cr) != "not_in_map") e.rank = std::stoul(r.at(cr));
      entries.push_back(e);
    }
    std::vector<std::vector<std::size_t>> per(10);
    for (const auto& e : entries) {
      if (e.rank) per[completeness_bucket(e.completeness)].push_back(*e.rank);
    }
    for (std::size_t b = 0; b < 10; ++b) {
      RetrievalBucket bucket{b / 10.0, (b + 1) / 10.0, per[b].size(), 0.0, 0, 0};
      if (!per[b].empty()) {
        std::sort(per[b].begin(), per[b].end());
        double sum = 0;
        for (auto r : per[b]) sum += static_cast<double>(r);
        bucket.mean_rank = sum / static_cast<double>(per[b].size());
        bucket.median_rank = per[b][(per[b].size() + 1) / 2 - 1];
        bucket.p90_rank = per[b][static_cast<std::size_t>(std::ceil(0.9 * per[b].size())) - 1];
      }
      curve.buckets.push_back(bucket);
    }
    svg = svg_retrieval(curve);
  } else if (kind == "accuracy") {
    const auto c = col("translation_error_m");
    AccuracyReport report;
    std::vector<double> errors;
    for (const auto& r : rows) errors.push_back(std::stod(r.at(c)));
    std::sort(errors.begin(), errors.end());
    for (std::size_t i = 0; i < errors.size(); ++i) {
      report.cumulative.emplace_back(errors[i], static_cast<double>(i + 1) / static_cast<double>(errors.size()));
    }
    svg = svg_accuracy(report);
  } else {
    throw UsageError("plot --kind must be iou, retrieval or accuracy");
  }
  write_text(out, svg);
  emit(g, {{"out", out}, {"rows", rows.size()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segloc: semantic segment mapping and localization toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_file, "Pipeline config file (key = value)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random component");
  app.add_option("--threads", g.threads, "Worker threads (0: OpenMP default)")->check(CLI::NonNegativeNumber);
  app.add_flag("--json", g.json, "Print a JSON summary on standard output");

  std::string spec, out, data, map, backend, obs, a, b, svg, timing, gt, results, buckets, kind, csv;
  bool loop = false, reverse = false, all_obs = false, loop_close = false, linear = false, ground = false;
  std::size_t loop_objects = 90, objects = 0, views = 6, k_max = 16, attempts = 0;
  std::vector<double> offset;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset or object observation set");
  synth->add_option("--spec", spec, "Scene spec file");
  synth->add_flag("--loop", loop, "Use the built-in loop scene");
  synth->add_flag("--reverse", reverse, "Traverse the trajectory backwards");
  synth->add_option("--loop-objects", loop_objects, "Objects in the loop scene");
  synth->add_option("--offset", offset, "Dataset frame offset x,y,z,yaw_deg")->delimiter(',');
  synth->add_option("--objects", objects, "Write an observation set of this many isolated objects instead");
  synth->add_option("--views", views, "Observations per object");
  synth->add_option("--out", out, "Output dataset directory or observation file")->required();

  auto* enrich = app.add_subcommand("enrich", "Back-project images onto clouds and write an enriched dataset");
  enrich->add_option("--data", data, "Dataset directory")->required();
  enrich->add_option("--out", out, "Output dataset directory")->required();
  enrich->add_flag("--remove-ground", ground, "Also remove the ground plane");

  auto* build = app.add_subcommand("build-map", "Run the pipeline and write the target map");
  build->add_option("--data", data, "Dataset directory")->required();
  build->add_option("--out", out, "Map file")->required();
  build->add_option("--backend", backend, "Descriptor backend file");
  build->add_option("--observations", obs, "Also write observations to this file");
  build->add_flag("--all-observations", all_obs, "Keep every observation, not only finals");
  build->add_option("--timing", timing, "Per-frame timing CSV");

  auto* localize = app.add_subcommand("localize", "Localize a dataset against a map");
  localize->add_option("--data", data, "Dataset directory")->required();
  localize->add_option("--map", map, "Map file");
  localize->add_option("--out", out, "Localization results CSV")->required();
  localize->add_option("--backend", backend, "Descriptor backend file");
  localize->add_flag("--loop-close", loop_close, "Match against the map built during this run");
  localize->add_option("--timing", timing, "Per-frame timing CSV");

  auto* trainc = app.add_subcommand("train", "Train the descriptor backend with the triplet loss");
  trainc->add_option("--observations", obs, "Observation file with object ids")->required();
  trainc->add_option("--out", out, "Backend file")->required();
  trainc->add_flag("--linear", linear, "Identity activations");

  auto* eval_iou = app.add_subcommand("eval-iou", "Pair the final segments of two runs by hull IoU");
  eval_iou->add_option("--a", a, "Observation file of run A")->required();
  eval_iou->add_option("--b", b, "Observation file of run B")->required();
  eval_iou->add_option("--out", out, "Pair CSV")->required();
  eval_iou->add_option("--svg", svg, "Histogram SVG");

  auto* eval_ret = app.add_subcommand("eval-retrieval", "Rank of the correct map entry per observation");
  eval_ret->add_option("--observations", obs, "Observation file")->required();
  eval_ret->add_option("--map", map, "Map file (default: built from the finals)");
  eval_ret->add_option("--backend", backend, "Descriptor backend file");
  eval_ret->add_option("--out", out, "Per-query CSV")->required();
  eval_ret->add_option("--buckets", buckets, "Per-bucket CSV");
  eval_ret->add_option("--svg", svg, "Rank-vs-completeness SVG");
  eval_ret->add_option("--k-max", k_max, "Largest k for recall");

  auto* eval_loc = app.add_subcommand("eval-loc", "Localization accuracy against ground truth");
  eval_loc->add_option("--results", results, "Localization results CSV")->required();
  eval_loc->add_option("--ground-truth", gt, "Ground-truth pose file");
  eval_loc->add_option("--data", data, "Dataset directory providing ground truth");
  eval_loc->add_option("--out", out, "Accuracy CSV")->required();
  eval_loc->add_option("--svg", svg, "Cumulative accuracy SVG");
  eval_loc->add_option("--attempts", attempts, "Localization attempts, for the success fraction");

  auto* plot = app.add_subcommand("plot", "Render a report CSV as SVG");
  plot->add_option("--kind", kind, "iou, retrieval or accuracy")->required();
  plot->add_option("--csv", csv, "Report CSV")->required();
  plot->add_option("--out", out, "SVG file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsageError;
  }
  if (*seed_opt) g.seed = seed;
  if (g.threads > 0) omp_set_num_threads(g.threads);

  try {
    if (*synth) return cmd_synth(g, spec, loop, reverse, loop_objects, offset, objects, views, out);
    if (*enrich) return cmd_enrich(g, data, out, ground);
    if (*build) return cmd_build_map(g, data, out, backend, obs, all_obs, timing);
    if (*localize) return cmd_localize(g, data, map, out, backend, loop_close, timing);
    if (*trainc) return cmd_train(g, obs, out, linear);
    if (*eval_iou) return cmd_eval_iou(g, a, b, out, svg);
    if (*eval_ret) return cmd_eval_retrieval(g, obs, map, backend, out, buckets, svg, k_max);
    if (*eval_loc) return cmd_eval_loc(g, results, gt, data, out, svg, attempts);
    if (*plot) return cmd_plot(g, kind, csv, out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kUsageError;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsageError;
}
