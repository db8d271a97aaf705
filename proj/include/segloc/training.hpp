#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "segloc/descriptor.hpp"
#include "segloc/trainable.hpp"

namespace segloc {

/// Each step fires with its probability; all zero means identity.
struct AugmentParams {
  double rotation_prob = 1.0;  // yaw about the vertical axis through the centroid
  double jitter_prob = 0.5;
  double jitter_sigma = 0.01;  // meters
  double scale_prob = 0.5;
  double scale_range = 0.1;  // factor drawn from [1 - r, 1 + r]
  double dropout_prob = 0.5;
  double dropout_ratio = 0.2;  // per-point drop probability
  double cut_prob = 0.2;
  double cut_max_fraction = 0.3;  // share removed by a vertical half-space cut
  double hue_shift_prob = 0.5;
  double hue_shift_max = 0.05;
  double label_noise_prob = 0.2;
  double label_noise_fraction = 0.05;
  std::vector<ClassId> label_pool;  // replacement labels for corruption

  static AugmentParams none();
};

SegmentObservation augment(const SegmentObservation& obs, const AugmentParams& params, std::uint64_t seed);

struct TrainingTriplet {
  std::shared_ptr<const SegmentObservation> anchor, positive, negative;
  std::uint64_t anchor_id = 0, positive_id = 0, negative_id = 0;  // ground-truth object ids

  void validate() const;
};

/// One triplet per observation: a positive with the same ground-truth id
/// (the anchor itself when the id has a single observation) and a random
/// negative with a different id.
std::vector<TrainingTriplet> make_triplets(const std::vector<SegmentObservation>& observations,
                                           const std::vector<std::uint64_t>& gt_ids, std::uint64_t seed);

struct TrainParams {
  double margin = 0.4;
  double learning_rate = 1e-3;
  int epochs = 20;
  std::size_t batch_size = 16;
  std::size_t n_sub = kDefaultSubsample;
  std::uint64_t seed = 1;
  bool use_augmentation = true;
  AugmentParams augmentation;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

struct TrainResult {
  TrainableBackend backend;
  std::vector<double> epoch_loss;  // mean triplet loss per epoch
};

/// Adam on the mean triplet loss. Throws std::runtime_error on non-finite
/// loss or gradient.
TrainResult train(const TrainableBackend& initial, const std::vector<TrainingTriplet>& triplets,
                  const TrainParams& params);
/// Serial reference of train.
TrainResult train_serial(const TrainableBackend& initial, const std::vector<TrainingTriplet>& triplets,
                         const TrainParams& params);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  double loss = 0.0;
  double hinge_argument = 0.0;  // m + sigma * d_ap - d_an
  bool near_kink = false;
  std::size_t probed = 0;
  bool all_analytic_zero = false;
};

/// Central finite differences on a random parameter subset against the
/// analytic gradient of the triplet loss. Inputs are not augmented.
GradientCheckResult check_gradients(const TrainableBackend& backend, const TrainingTriplet& triplet,
                                    double epsilon, double margin, std::size_t n_probe, std::uint64_t seed,
                                    std::size_t n_sub = 128);

}  // namespace segloc
