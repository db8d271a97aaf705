#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "segloc/core.hpp"
#include "segloc/localmap.hpp"

namespace segloc {

inline constexpr std::size_t kDefaultSubsample = 2048;
inline constexpr int kGridCells = 27;

struct Descriptor {
  std::vector<float> values;

  Descriptor() = default;
  explicit Descriptor(std::vector<float> v) : values(std::move(v)) {}
  std::size_t size() const { return values.size(); }
  friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

/// Euclidean distance, accumulated in double. Throws on dimension mismatch.
double descriptor_distance(const Descriptor& a, const Descriptor& b);

/// Points centered on their centroid and scaled into the unit ball.
struct NormalizedSegment {
  std::vector<EnrichedPoint> points;
  double scale = 1.0;
};

/// 3x3x3 cells over [-1,1]^3, each holding a class histogram over the
/// dense class index of a ClassTable. Layout: (cell * num_classes + class),
/// cell = ix * 9 + iy * 3 + iz.
struct SemanticGrid {
  std::size_t num_classes = 0;
  std::vector<double> cells;

  double at(int cell, std::size_t cls) const { return cells[cell * num_classes + cls]; }
};

/// Cell index of a normalized coordinate; a value exactly on a partition
/// plane belongs to the higher cell.
int grid_axis_index(double coord);

std::vector<EnrichedPoint> subsample(const SegmentObservation& obs, std::size_t n_sub, std::uint64_t seed);
NormalizedSegment normalize(const std::vector<EnrichedPoint>& points);
SemanticGrid semantic_grid(const NormalizedSegment& seg, const ClassTable& classes);

enum class BackendKind : std::uint8_t {
  kHandCrafted = 1,
  kTrainable = 2,
  kTrainableLinear = 3,
};

class DescriptorBackend {
 public:
  virtual ~DescriptorBackend() = default;

  virtual BackendKind kind() const = 0;
  virtual std::size_t dim() const = 0;
  virtual Descriptor forward(const NormalizedSegment& seg, const SemanticGrid& grid) const = 0;
  /// Flat parameter vector as serialized (float32-representable values).
  virtual std::vector<float> serialized_parameters() const = 0;

  const ClassTable& classes() const { return classes_; }
  std::size_t num_classes() const { return classes_.size(); }

  /// Fingerprint over kind, dimensions and parameters.
  std::uint64_t hash() const;

 protected:
  explicit DescriptorBackend(ClassTable classes) : classes_(std::move(classes)) {}

 private:
  ClassTable classes_;
};

/// Deterministic features: 7 eigenvalue moments, an 8-bin saturation-weighted
/// hue histogram, the flattened semantic grid and the normalization scale.
class HandCraftedBackend final : public DescriptorBackend {
 public:
  static constexpr std::size_t kGeometryOffset = 0;
  static constexpr std::size_t kGeometrySize = 7;
  static constexpr std::size_t kHueOffset = 7;
  static constexpr std::size_t kHueBins = 8;
  static constexpr std::size_t kSemanticOffset = 15;

  explicit HandCraftedBackend(ClassTable classes) : DescriptorBackend(std::move(classes)) {}

  BackendKind kind() const override { return BackendKind::kHandCrafted; }
  std::size_t dim() const override { return kSemanticOffset + kGridCells * num_classes() + 1; }
  Descriptor forward(const NormalizedSegment& seg, const SemanticGrid& grid) const override;
  std::vector<float> serialized_parameters() const override { return {}; }
};

/// Sorted covariance eigenvalues plus linearity, planarity, scattering and
/// omnivariance of a normalized segment.
std::array<double, 7> eigen_features(const NormalizedSegment& seg);

/// Seed used for an observation inside batch description; stable across
/// batch composition and thread count.
std::uint64_t observation_seed(std::uint64_t base_seed, const SegmentObservation& obs);

Descriptor describe(const DescriptorBackend& backend, const SegmentObservation& obs, std::uint64_t seed,
                    std::size_t n_sub = kDefaultSubsample);

/// OpenMP fan-out over observations; each uses observation_seed(seed, obs).
std::vector<Descriptor> describe_batch(const DescriptorBackend& backend,
                                       std::span<const SegmentObservation> observations,
                                       std::uint64_t seed, std::size_t n_sub = kDefaultSubsample);
/// Serial reference of describe_batch.
std::vector<Descriptor> describe_batch_serial(const DescriptorBackend& backend,
                                              std::span<const SegmentObservation> observations,
                                              std::uint64_t seed, std::size_t n_sub = kDefaultSubsample);

/// max(m + sigma * d_ap - d_an, 0)
double triplet_loss_from_distances(double d_ap, double d_an, double sigma, double margin);
double triplet_loss(const Descriptor& anchor, const Descriptor& positive, const Descriptor& negative,
                    std::size_t n_anchor, std::size_t n_positive, double margin);

// Backend file: "SSMD", u16 version, u8 kind, u16 D, u16 C, u64 parameter
// count, parameters as little-endian float32.
void save_backend(const DescriptorBackend& backend, const std::filesystem::path& path);
std::unique_ptr<DescriptorBackend> load_backend(const std::filesystem::path& path, const ClassTable& classes);

}  // namespace segloc
