#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "segloc/descriptor.hpp"

namespace segloc {

struct TrainableArchitecture {
  int point_hidden1 = 32;
  int point_hidden2 = 64;
  int grid_hidden = 32;
  int output_dim = 64;
  bool linear = false;  // identity activations everywhere
};

/// Shared per-point MLP over (x,y,z,h,s,v) pooled by coordinate-wise max,
/// concatenated with a dense layer over the semantic grid and the scale,
/// followed by a dense head.
class TrainableBackend final : public DescriptorBackend {
 public:
  /// Activations kept from a forward pass for backpropagation.
  struct Cache {
    Eigen::MatrixXd input;  // 6 x N
    Eigen::MatrixXd a1, z1;  // H1 x N
    Eigen::MatrixXd a2;      // H2 x N
    std::vector<int> argmax;  // H2
    Eigen::VectorXd grid_in, grid_a;
    Eigen::VectorXd feature;  // H2 + G + 1
    Eigen::VectorXd output;   // D
  };

  TrainableBackend(ClassTable classes, TrainableArchitecture arch, std::uint64_t seed);
  /// Rebuilds from a serialized parameter vector (architecture header first).
  TrainableBackend(ClassTable classes, bool linear, std::size_t output_dim, const std::vector<float>& serialized);

  BackendKind kind() const override {
    return arch_.linear ? BackendKind::kTrainableLinear : BackendKind::kTrainable;
  }
  std::size_t dim() const override { return static_cast<std::size_t>(arch_.output_dim); }
  Descriptor forward(const NormalizedSegment& seg, const SemanticGrid& grid) const override;
  std::vector<float> serialized_parameters() const override;

  Eigen::VectorXd forward_cached(const NormalizedSegment& seg, const SemanticGrid& grid, Cache& cache) const;
  /// Accumulates dLoss/dParams into grad given dLoss/dOutput.
  void backward(const Cache& cache, const Eigen::VectorXd& grad_output, Eigen::VectorXd& grad) const;

  const TrainableArchitecture& architecture() const { return arch_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& mutable_parameters() { return params_; }
  /// Rounds every parameter to the nearest float32.
  void quantize();

 private:
  struct Layout {
    std::size_t w1, b1, w2, b2, wg, bg, wh, bh, total;
  };
  Layout layout() const;
  std::size_t grid_inputs() const { return kGridCells * num_classes(); }
  std::size_t feature_size() const {
    return static_cast<std::size_t>(arch_.point_hidden2 + arch_.grid_hidden + 1);
  }

  TrainableArchitecture arch_;
  Eigen::VectorXd params_;
};

}  // namespace segloc
