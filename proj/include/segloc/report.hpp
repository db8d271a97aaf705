#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "segloc/eval.hpp"
#include "segloc/localize.hpp"
#include "segloc/pipeline.hpp"

namespace segloc {

// CSV reports. Numbers are written with 17 significant digits so files
// round-trip and identical runs produce identical bytes.
//   iou:          a_id,b_id,iou,std_error,degenerate
//   retrieval:    query_segment_id,observation_index,true_id,completeness,rank   (rank "not_in_map" when absent)
//   buckets:      completeness_lo,completeness_hi,count,mean_rank,median_rank,p90_rank
//   localization: timestamp,inliers,tx,ty,tz,qw,qx,qy,qz,px,py,pz,pqw,pqx,pqy,pqz
//                 (transform target<-local, then the robot pose in the local frame)
//   accuracy:     timestamp,translation_error_m,rotation_error_deg
//   timing:       timestamp,points,voxels,segments,enrich_ms,segment_ms,describe_ms,localize_ms,total_ms
std::string iou_csv(const IoUReport& report);
std::string retrieval_csv(const RetrievalCurve& curve);
std::string retrieval_buckets_csv(const RetrievalCurve& curve);
std::string localization_csv(const std::vector<LocalizationResult>& results);
std::vector<LocalizationResult> parse_localization_csv(const std::string& text);
std::string accuracy_csv(const AccuracyReport& report);
std::string timing_csv(const std::vector<FrameTiming>& timings);

/// Parses a CSV with a header row into (header, rows).
std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>> parse_csv(const std::string& text);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Standalone SVG documents.
std::string svg_histogram(const Histogram& histogram, const std::string& title, const std::string& x_label);
std::string svg_lines(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                      const std::string& y_label, bool steps = false);

std::string svg_iou_histogram(const IoUReport& report);
/// Mean and 90th-percentile rank per completeness bucket.
std::string svg_retrieval(const RetrievalCurve& curve);
/// Fraction of localizations with translation error below x.
std::string svg_accuracy(const AccuracyReport& report);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace segloc
