#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segloc/core.hpp"
#include "segloc/eval.hpp"
#include "segloc/localize.hpp"
#include "segloc/localmap.hpp"
#include "segloc/training.hpp"

namespace segloc {

enum class BackendChoice { kHandCrafted, kTrainable, kTrainableLinear };

struct PipelineConfig {
  SegmentationParams segmentation;
  LocalMapParams local_map;
  std::vector<ClassId> extra_dynamic_classes;  // marked dynamic on top of the class table

  bool remove_ground = true;
  double ground_eps = 0.1;

  BackendChoice backend = BackendChoice::kHandCrafted;
  std::string backend_file;  // SSMD file; overrides backend when set
  TrainableArchitecture architecture;
  std::size_t n_sub = kDefaultSubsample;
  TrainParams training;

  std::size_t k = 16;
  RansacParams ransac;
  std::size_t warmup_frames = 10;
  std::size_t localize_every = 1;

  std::size_t iou_samples = kDefaultIoUSamples;
  double pairing_gate = kDefaultPairingGate;
  double iou_threshold = kConsistentIoU;

  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
  /// Applies the seed to every seeded component.
  void set_seed(std::uint64_t s);
};

/// Flat "key = value" text; '#' starts a comment. Unknown keys and values
/// that fail validation throw DataError with the line number.
PipelineConfig parse_config(const std::string& text);
PipelineConfig read_config(const std::filesystem::path& path);
/// Every key with its current value, in parse_config syntax.
std::string format_config(const PipelineConfig& config);

std::vector<std::string> config_keys();

}  // namespace segloc
