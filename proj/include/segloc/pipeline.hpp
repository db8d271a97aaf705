#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "segloc/config.hpp"
#include "segloc/descriptor.hpp"
#include "segloc/io.hpp"
#include "segloc/localize.hpp"

namespace segloc {

enum class RunMode { kBuildMap, kLocalize, kLoopClose };

struct RunOptions {
  RunMode mode = RunMode::kBuildMap;
  const TargetMap* map = nullptr;  // required in localize mode
  bool keep_observations = false;  // keep every emitted observation, not only finals
  std::size_t max_frames = 0;      // 0: all
};

struct FrameTiming {
  double timestamp = 0.0;
  std::size_t points = 0;
  std::size_t voxels = 0;
  std::size_t segments = 0;
  double enrich_ms = 0.0;
  double segment_ms = 0.0;
  double describe_ms = 0.0;
  double localize_ms = 0.0;
  double total_ms = 0.0;
};

struct RunArtifacts {
  std::vector<LabeledObservation> observations;  // finals, plus everything else with keep_observations
  TargetMap map;                                 // finals of this run
  std::vector<LocalizationResult> localizations;
  std::size_t localization_attempts = 0;  // steps after warm-up
  std::vector<FrameTiming> timings;
  std::vector<std::string> warnings;
  std::size_t peak_voxels = 0;
};

/// Backend chosen by the config: the backend file when set, otherwise a
/// fresh backend of the configured kind seeded from config.seed.
std::unique_ptr<DescriptorBackend> make_backend(const PipelineConfig& config, const ClassTable& classes);

/// Streams the dataset through enrichment, ground removal, the local map,
/// description and, depending on the mode, localization. Throws DataError
/// when the class table, calibration or map disagree with the run.
RunArtifacts run_pipeline(const Dataset& data, const PipelineConfig& config, const DescriptorBackend& backend,
                          const RunOptions& options);

/// Class table with the configured extra dynamic classes marked.
ClassTable effective_classes(const ClassTable& table, const PipelineConfig& config);

}  // namespace segloc
