#include "segloc/trainable.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace segloc {

namespace {

constexpr std::size_t kArchitectureHeader = 3;

Eigen::MatrixXd activate(const Eigen::MatrixXd& a, bool linear) {
  return linear ? a : Eigen::MatrixXd(a.cwiseMax(0.0));
}

double activation_grad(double a, bool linear) { return linear || a > 0.0 ? 1.0 : 0.0; }

}  // namespace

TrainableBackend::Layout TrainableBackend::layout() const {
  const std::size_t h1 = arch_.point_hidden1, h2 = arch_.point_hidden2, g = arch_.grid_hidden;
  const std::size_t d = arch_.output_dim, gi = grid_inputs(), f = feature_size();
  Layout l{};
  l.w1 = 0;
  l.b1 = l.w1 + h1 * 6;
  l.w2 = l.b1 + h1;
  l.b2 = l.w2 + h2 * h1;
  l.wg = l.b2 + h2;
  l.bg = l.wg + g * gi;
  l.wh = l.bg + g;
  l.bh = l.wh + d * f;
  l.total = l.bh + d;
  return l;
}

TrainableBackend::TrainableBackend(ClassTable classes, TrainableArchitecture arch, std::uint64_t seed)
    : DescriptorBackend(std::move(classes)), arch_(arch) {
  if (arch_.point_hidden1 <= 0 || arch_.point_hidden2 <= 0 || arch_.grid_hidden <= 0 || arch_.output_dim <= 0) {
    throw std::invalid_argument("TrainableBackend: layer widths must be positive");
  }
  if (num_classes() == 0) throw std::invalid_argument("TrainableBackend: empty class table");
  const Layout l = layout();
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l.total));
  std::mt19937_64 rng(seed);
  const double gain = arch_.linear ? 1.0 : 2.0;
  auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in, double g) {
    std::normal_distribution<double> dist(0.0, std::sqrt(g / static_cast<double>(fan_in)));
    for (std::size_t i = 0; i < count; ++i) params_[offset + i] = static_cast<float>(dist(rng));
  };
  fill(l.w1, l.b1 - l.w1, 6, gain);
  fill(l.w2, l.b2 - l.w2, arch_.point_hidden1, gain);
  fill(l.wg, l.bg - l.wg, grid_inputs(), gain);
  fill(l.wh, l.bh - l.wh, feature_size(), 1.0);
}

TrainableBackend::TrainableBackend(ClassTable classes, bool linear, std::size_t output_dim,
                                   const std::vector<float>& serialized)
    : DescriptorBackend(std::move(classes)) {
  if (serialized.size() < kArchitectureHeader) throw std::invalid_argument("trainable parameters: missing header");
  auto width = [&](std::size_t i) {
    const float w = serialized[i];
    if (!(w >= 1.0f && w <= 65535.0f) || w != std::floor(w)) {
      throw std::invalid_argument("trainable parameters: bad layer width");
    }
    return static_cast<int>(w);
  };
  arch_.point_hidden1 = width(0);
  arch_.point_hidden2 = width(1);
  arch_.grid_hidden = width(2);
  arch_.output_dim = static_cast<int>(output_dim);
  arch_.linear = linear;
  if (output_dim == 0) throw std::invalid_argument("trainable parameters: zero output dimension");
  const Layout l = layout();
  if (serialized.size() != kArchitectureHeader + l.total) {
    throw std::invalid_argument("trainable parameters: count does not match architecture");
  }
  params_.resize(static_cast<Eigen::Index>(l.total));
  for (std::size_t i = 0; i < l.total; ++i) params_[i] = serialized[kArchitectureHeader + i];
}

std::vector<float> TrainableBackend::serialized_parameters() const {
  std::vector<float> out;
  out.reserve(kArchitectureHeader + params_.size());
  out.push_back(static_cast<float>(arch_.point_hidden1));
  out.push_back(static_cast<float>(arch_.point_hidden2));
  out.push_back(static_cast<float>(arch_.grid_hidden));
  for (Eigen::Index i = 0; i < params_.size(); ++i) out.push_back(static_cast<float>(params_[i]));
  return out;
}

void TrainableBackend::quantize() {
  for (Eigen::Index i = 0; i < params_.size(); ++i) params_[i] = static_cast<float>(params_[i]);
}

Eigen::VectorXd TrainableBackend::forward_cached(const NormalizedSegment& seg, const SemanticGrid& grid,
                                                 Cache& cache) const {
  if (seg.points.empty()) throw std::invalid_argument("forward: empty segment");
  if (grid.num_classes != num_classes()) throw std::invalid_argument("semantic grid class count mismatch");
  const Layout l = layout();
  const int h1 = arch_.point_hidden1, h2 = arch_.point_hidden2, g = arch_.grid_hidden, d = arch_.output_dim;
  const auto gi = static_cast<Eigen::Index>(grid_inputs());
  const auto f = static_cast<Eigen::Index>(feature_size());
  const double* p = params_.data();
  Eigen::Map<const Eigen::MatrixXd> w1(p + l.w1, h1, 6);
  Eigen::Map<const Eigen::VectorXd> b1(p + l.b1, h1);
  Eigen::Map<const Eigen::MatrixXd> w2(p + l.w2, h2, h1);
  Eigen::Map<const Eigen::VectorXd> b2(p + l.b2, h2);
  Eigen::Map<const Eigen::MatrixXd> wg(p + l.wg, g, gi);
  Eigen::Map<const Eigen::VectorXd> bg(p + l.bg, g);
  Eigen::Map<const Eigen::MatrixXd> wh(p + l.wh, d, f);
  Eigen::Map<const Eigen::VectorXd> bh(p + l.bh, d);

  const auto n = static_cast<Eigen::Index>(seg.points.size());
  cache.input.resize(6, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& pt = seg.points[static_cast<std::size_t>(i)];
    cache.input.col(i) << pt.x, pt.y, pt.z, pt.color_valid ? pt.h : 0.0, pt.color_valid ? pt.s : 0.0,
        pt.color_valid ? pt.v : 0.0;
  }
  cache.a1.noalias() = w1 * cache.input;
  cache.a1.colwise() += b1;
  cache.z1 = activate(cache.a1, arch_.linear);
  cache.a2.noalias() = w2 * cache.z1;
  cache.a2.colwise() += b2;

  cache.feature.resize(f);
  cache.argmax.assign(static_cast<std::size_t>(h2), 0);
  for (int j = 0; j < h2; ++j) {
    Eigen::Index best = 0;
    cache.a2.row(j).maxCoeff(&best);
    cache.argmax[static_cast<std::size_t>(j)] = static_cast<int>(best);
    const double a = cache.a2(j, best);
    cache.feature[j] = arch_.linear ? a : std::max(a, 0.0);
  }
  cache.grid_in = Eigen::Map<const Eigen::VectorXd>(grid.cells.data(), gi);
  cache.grid_a.noalias() = wg * cache.grid_in;
  cache.grid_a += bg;
  cache.feature.segment(h2, g) = activate(cache.grid_a, arch_.linear);
  cache.feature[f - 1] = seg.scale;
  cache.output.noalias() = wh * cache.feature;
  cache.output += bh;
  return cache.output;
}

void TrainableBackend::backward(const Cache& cache, const Eigen::VectorXd& grad_output, Eigen::VectorXd& grad) const {
  const Layout l = layout();
  const int h1 = arch_.point_hidden1, h2 = arch_.point_hidden2, g = arch_.grid_hidden, d = arch_.output_dim;
  const auto gi = static_cast<Eigen::Index>(grid_inputs());
  const auto f = static_cast<Eigen::Index>(feature_size());
  if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());
  const double* p = params_.data();
  double* gp = grad.data();
  Eigen::Map<const Eigen::MatrixXd> w2(p + l.w2, h2, h1);
  Eigen::Map<const Eigen::MatrixXd> wh(p + l.wh, d, f);
  Eigen::Map<Eigen::MatrixXd> dw1(gp + l.w1, h1, 6);
  Eigen::Map<Eigen::VectorXd> db1(gp + l.b1, h1);
  Eigen::Map<Eigen::MatrixXd> dw2(gp + l.w2, h2, h1);
  Eigen::Map<Eigen::VectorXd> db2(gp + l.b2, h2);
  Eigen::Map<Eigen::MatrixXd> dwg(gp + l.wg, g, gi);
  Eigen::Map<Eigen::VectorXd> dbg(gp + l.bg, g);
  Eigen::Map<Eigen::MatrixXd> dwh(gp + l.wh, d, f);
  Eigen::Map<Eigen::VectorXd> dbh(gp + l.bh, d);

  dwh.noalias() += grad_output * cache.feature.transpose();
  dbh += grad_output;
  const Eigen::VectorXd grad_feature = wh.transpose() * grad_output;

  Eigen::VectorXd grad_grid_a = grad_feature.segment(h2, g);
  for (int k = 0; k < g; ++k) grad_grid_a[k] *= activation_grad(cache.grid_a[k], arch_.linear);
  dwg.noalias() += grad_grid_a * cache.grid_in.transpose();
  dbg += grad_grid_a;

  // Max pooling routes each unit's gradient to its argmax point; group the
  // units by point so every contributing point is backpropagated once.
  std::vector<std::pair<int, int>> routes;  // (point, unit)
  routes.reserve(static_cast<std::size_t>(h2));
  for (int j = 0; j < h2; ++j) {
    const int i = cache.argmax[static_cast<std::size_t>(j)];
    const double gj = grad_feature[j] * activation_grad(cache.a2(j, i), arch_.linear);
    if (gj != 0.0) routes.emplace_back(i, j);
  }
  std::sort(routes.begin(), routes.end());
  Eigen::VectorXd grad_a2(h2);
  for (std::size_t r = 0; r < routes.size();) {
    const int i = routes[r].first;
    grad_a2.setZero();
    for (; r < routes.size() && routes[r].first == i; ++r) {
      const int j = routes[r].second;
      grad_a2[j] = grad_feature[j] * activation_grad(cache.a2(j, i), arch_.linear);
    }
    dw2.noalias() += grad_a2 * cache.z1.col(i).transpose();
    db2 += grad_a2;
    Eigen::VectorXd grad_a1 = w2.transpose() * grad_a2;
    for (int k = 0; k < h1; ++k) grad_a1[k] *= activation_grad(cache.a1(k, i), arch_.linear);
    dw1.noalias() += grad_a1 * cache.input.col(i).transpose();
    db1 += grad_a1;
  }
}

Descriptor TrainableBackend::forward(const NormalizedSegment& seg, const SemanticGrid& grid) const {
  Cache cache;
  const Eigen::VectorXd out = forward_cached(seg, grid, cache);
  std::vector<float> values(static_cast<std::size_t>(out.size()));
  for (Eigen::Index i = 0; i < out.size(); ++i) values[static_cast<std::size_t>(i)] = static_cast<float>(out[i]);
  return Descriptor(std::move(values));
}

}  // namespace segloc
