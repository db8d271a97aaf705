#include "segloc/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace segloc {

AugmentParams AugmentParams::none() {
  AugmentParams p;
  p.rotation_prob = p.jitter_prob = p.scale_prob = p.dropout_prob = 0.0;
  p.cut_prob = p.hue_shift_prob = p.label_noise_prob = 0.0;
  return p;
}

SegmentObservation augment(const SegmentObservation& obs, const AugmentParams& params, std::uint64_t seed) {
  SegmentObservation out = obs;
  if (out.points.empty()) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto fires = [&](double prob) { return prob > 0.0 && unit(rng) < prob; };
  bool moved = false;

  if (fires(params.rotation_prob)) {
    const double yaw = 2.0 * std::numbers::pi * unit(rng);
    const Eigen::Matrix3d rot = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    const Eigen::Vector3d c = obs.centroid;
    for (auto& p : out.points) p.set_position(rot * (p.position() - c) + c);
    moved = true;
  }
  if (fires(params.jitter_prob)) {
    std::normal_distribution<double> noise(0.0, params.jitter_sigma);
    for (auto& p : out.points) p.set_position(p.position() + Eigen::Vector3d(noise(rng), noise(rng), noise(rng)));
    moved = true;
  }
  if (fires(params.scale_prob)) {
    const double factor = 1.0 + params.scale_range * (2.0 * unit(rng) - 1.0);
    const Eigen::Vector3d c = obs.centroid;
    for (auto& p : out.points) p.set_position((p.position() - c) * factor + c);
    moved = true;
  }
  if (fires(params.dropout_prob)) {
    std::vector<EnrichedPoint> kept;
    kept.reserve(out.points.size());
    for (const auto& p : out.points) {
      if (unit(rng) >= params.dropout_ratio) kept.push_back(p);
    }
    if (kept.empty()) kept.push_back(out.points.front());
    out.points = std::move(kept);
    moved = true;
  }
  if (fires(params.cut_prob)) {
    const double angle = 2.0 * std::numbers::pi * unit(rng);
    const Eigen::Vector3d dir(std::cos(angle), std::sin(angle), 0.0);
    const double fraction = params.cut_max_fraction * unit(rng);
    std::vector<double> proj;
    proj.reserve(out.points.size());
    for (const auto& p : out.points) proj.push_back(dir.dot(p.position()));
    std::vector<double> sorted = proj;
    const auto keep_n = std::max<std::size_t>(
        1, out.points.size() - static_cast<std::size_t>(fraction * static_cast<double>(out.points.size())));
    std::nth_element(sorted.begin(), sorted.begin() + (keep_n - 1), sorted.end());
    const double limit = sorted[keep_n - 1];
    std::vector<EnrichedPoint> kept;
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      if (proj[i] <= limit) kept.push_back(out.points[i]);
    }
    out.points = std::move(kept);
    moved = true;
  }
  if (fires(params.hue_shift_prob)) {
    const double shift = params.hue_shift_max * (2.0 * unit(rng) - 1.0);
    for (auto& p : out.points) {
      if (!p.color_valid) continue;
      double h = p.h + shift;
      h -= std::floor(h);
      p.h = h >= 1.0 ? 0.0 : h;
    }
  }
  if (fires(params.label_noise_prob) && !params.label_pool.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, params.label_pool.size() - 1);
    for (auto& p : out.points) {
      if (p.class_valid && unit(rng) < params.label_noise_fraction) p.c = params.label_pool[pick(rng)];
    }
  }
  if (moved) out.update_centroid();
  return out;
}

void TrainingTriplet::validate() const {
  if (!anchor || !positive || !negative) throw std::invalid_argument("triplet: missing observation");
  if (anchor_id != positive_id) throw std::invalid_argument("triplet: anchor and positive ids differ");
  if (anchor_id == negative_id) throw std::invalid_argument("triplet: negative shares the anchor id");
}

std::vector<TrainingTriplet> make_triplets(const std::vector<SegmentObservation>& observations,
                                           const std::vector<std::uint64_t>& gt_ids, std::uint64_t seed) {
  if (observations.size() != gt_ids.size()) throw std::invalid_argument("make_triplets: size mismatch");
  std::vector<std::shared_ptr<const SegmentObservation>> pool;
  pool.reserve(observations.size());
  for (const auto& o : observations) pool.push_back(std::make_shared<const SegmentObservation>(o));
  std::map<std::uint64_t, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < gt_ids.size(); ++i) by_id[gt_ids[i]].push_back(i);
  if (by_id.size() < 2) throw std::invalid_argument("make_triplets: need at least two ground-truth ids");

  std::mt19937_64 rng(seed);
  std::vector<TrainingTriplet> out;
  out.reserve(observations.size());
  std::uniform_int_distribution<std::size_t> any(0, observations.size() - 1);
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto& same = by_id[gt_ids[i]];
    std::size_t pos = i;
    if (same.size() > 1) {
      std::uniform_int_distribution<std::size_t> pick(0, same.size() - 2);
      pos = same[pick(rng)];
      if (pos == i) pos = same.back();
    }
    std::size_t neg = any(rng);
    while (gt_ids[neg] == gt_ids[i]) neg = any(rng);
    TrainingTriplet t;
    t.anchor = pool[i];
    t.positive = pool[pos];
    t.negative = pool[neg];
    t.anchor_id = t.positive_id = gt_ids[i];
    t.negative_id = gt_ids[neg];
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

struct PreparedInput {
  NormalizedSegment segment;
  SemanticGrid grid;
  std::size_t point_count = 0;
};

PreparedInput prepare(const SegmentObservation& obs, const ClassTable& classes, std::size_t n_sub,
                      std::uint64_t seed) {
  PreparedInput in;
  in.segment = normalize(subsample(obs, n_sub, seed));
  in.grid = semantic_grid(in.segment, classes);
  in.point_count = obs.point_count();
  return in;
}

struct LossEval {
  double loss = 0.0;
  double hinge = 0.0;
};

/// Triplet loss; adds its parameter gradient to grad when grad != nullptr.
LossEval loss_and_gradient(const TrainableBackend& backend, const PreparedInput& a, const PreparedInput& p,
                           const PreparedInput& n, double margin, Eigen::VectorXd* grad) {
  TrainableBackend::Cache ca, cp, cn;
  const Eigen::VectorXd da = backend.forward_cached(a.segment, a.grid, ca);
  const Eigen::VectorXd dp = backend.forward_cached(p.segment, p.grid, cp);
  const Eigen::VectorXd dn = backend.forward_cached(n.segment, n.grid, cn);
  const double sigma = static_cast<double>(p.point_count) / static_cast<double>(a.point_count);
  const Eigen::VectorXd ap = da - dp, an = da - dn;
  const double d_ap = ap.norm(), d_an = an.norm();
  LossEval ev;
  ev.hinge = margin + sigma * d_ap - d_an;
  ev.loss = std::max(ev.hinge, 0.0);
  if (grad == nullptr || ev.hinge <= 0.0) return ev;

  const Eigen::VectorXd u_ap = d_ap > 1e-12 ? Eigen::VectorXd(ap / d_ap) : Eigen::VectorXd::Zero(ap.size());
  const Eigen::VectorXd u_an = d_an > 1e-12 ? Eigen::VectorXd(an / d_an) : Eigen::VectorXd::Zero(an.size());
  backend.backward(ca, sigma * u_ap - u_an, *grad);
  backend.backward(cp, -sigma * u_ap, *grad);
  backend.backward(cn, u_an, *grad);
  return ev;
}

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

static TrainResult train_impl(const TrainableBackend& initial, const std::vector<TrainingTriplet>& triplets,
                              const TrainParams& params, bool parallel) {
  if (triplets.empty()) throw std::invalid_argument("train: no triplets");
  if (params.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  for (const auto& t : triplets) t.validate();

  TrainResult result{initial, {}};
  TrainableBackend& backend = result.backend;
  const auto n_params = static_cast<Eigen::Index>(backend.parameter_count());
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n_params), m2 = Eigen::VectorXd::Zero(n_params);
  std::int64_t step = 0;
  const AugmentParams aug = params.use_augmentation ? params.augmentation : AugmentParams::none();

  std::vector<std::size_t> order(triplets.size());
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix_seed(params.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;

    for (std::size_t start = 0; start < order.size(); start += params.batch_size) {
      const std::size_t count = std::min(params.batch_size, order.size() - start);
      std::vector<Eigen::VectorXd> grads(count, Eigen::VectorXd::Zero(n_params));
      std::vector<double> losses(count, 0.0);

#pragma omp parallel for schedule(dynamic) if (parallel)
      for (std::int64_t b = 0; b < static_cast<std::int64_t>(count); ++b) {
        const std::size_t ti = order[start + static_cast<std::size_t>(b)];
        const auto& t = triplets[ti];
        const std::uint64_t base = mix_seed(mix_seed(params.seed, static_cast<std::uint64_t>(epoch) + 1000), ti);
        auto make = [&](const SegmentObservation& obs, std::uint64_t role) {
          const auto s = mix_seed(base, role);
          return prepare(augment(obs, aug, s), backend.classes(), params.n_sub, mix_seed(s, 7));
        };
        const PreparedInput a = make(*t.anchor, 1), p = make(*t.positive, 2), n = make(*t.negative, 3);
        losses[static_cast<std::size_t>(b)] =
            loss_and_gradient(backend, a, p, n, params.margin, &grads[static_cast<std::size_t>(b)]).loss;
      }

      Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_params);
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < count; ++b) {
        grad += grads[b];
        batch_loss += losses[b];
      }
      grad /= static_cast<double>(count);
      if (!std::isfinite(batch_loss) || !all_finite(grad)) {
        std::ostringstream os;
        os << "train: non-finite loss or gradient at epoch " << epoch << ", batch starting at " << start
           << " (batch loss " << batch_loss << ")";
        throw std::runtime_error(os.str());
      }
      epoch_loss += batch_loss;

      if (params.learning_rate == 0.0) continue;
      ++step;
      m1 = params.beta1 * m1 + (1.0 - params.beta1) * grad;
      m2 = params.beta2 * m2 + (1.0 - params.beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(params.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(params.beta2, static_cast<double>(step));
      auto& w = backend.mutable_parameters();
      for (Eigen::Index i = 0; i < n_params; ++i) {
        w[i] -= params.learning_rate * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + params.adam_epsilon);
      }
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(triplets.size()));
  }
  backend.quantize();
  return result;
}

TrainResult train(const TrainableBackend& initial, const std::vector<TrainingTriplet>& triplets,
                  const TrainParams& params) {
  return train_impl(initial, triplets, params, true);
}

TrainResult train_serial(const TrainableBackend& initial, const std::vector<TrainingTriplet>& triplets,
                         const TrainParams& params) {
  return train_impl(initial, triplets, params, false);
}

GradientCheckResult check_gradients(const TrainableBackend& backend, const TrainingTriplet& triplet,
                                    double epsilon, double margin, std::size_t n_probe, std::uint64_t seed,
                                    std::size_t n_sub) {
  triplet.validate();
  const auto& classes = backend.classes();
  const PreparedInput a = prepare(*triplet.anchor, classes, n_sub, mix_seed(seed, 1));
  const PreparedInput p = prepare(*triplet.positive, classes, n_sub, mix_seed(seed, 2));
  const PreparedInput n = prepare(*triplet.negative, classes, n_sub, mix_seed(seed, 3));

  GradientCheckResult res;
  Eigen::VectorXd analytic = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(backend.parameter_count()));
  const LossEval ev = loss_and_gradient(backend, a, p, n, margin, &analytic);
  res.loss = ev.loss;
  res.hinge_argument = ev.hinge;
  res.near_kink = std::abs(ev.hinge) < 1e-4;
  res.all_analytic_zero = analytic.isZero(0.0);

  std::vector<std::size_t> idx(backend.parameter_count());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(n_probe, idx.size()));

  TrainableBackend probe = backend;
  for (std::size_t i : idx) {
    auto& w = probe.mutable_parameters();
    const double saved = w[static_cast<Eigen::Index>(i)];
    w[static_cast<Eigen::Index>(i)] = saved + epsilon;
    const double up = loss_and_gradient(probe, a, p, n, margin, nullptr).loss;
    w[static_cast<Eigen::Index>(i)] = saved - epsilon;
    const double down = loss_and_gradient(probe, a, p, n, margin, nullptr).loss;
    w[static_cast<Eigen::Index>(i)] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double an = analytic[static_cast<Eigen::Index>(i)];
    const double abs_err = std::abs(an - numeric);
    const double rel_err = abs_err / std::max({std::abs(an), std::abs(numeric), 1e-6});
    res.max_absolute_error = std::max(res.max_absolute_error, abs_err);
    res.max_relative_error = std::max(res.max_relative_error, rel_err);
    ++res.probed;
  }
  return res;
}

}  // namespace segloc
