#include "segloc/descriptor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

#include "binary_io.hpp"
#include "segloc/trainable.hpp"

namespace segloc {

double descriptor_distance(const Descriptor& a, const Descriptor& b) {
  if (a.size() != b.size()) throw std::invalid_argument("descriptor_distance: dimension mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.values[i]) - static_cast<double>(b.values[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

int grid_axis_index(double coord) {
  constexpr double kThird = 1.0 / 3.0;
  if (coord < -kThird) return 0;
  if (coord < kThird) return 1;
  return 2;
}

std::vector<EnrichedPoint> subsample(const SegmentObservation& obs, std::size_t n_sub, std::uint64_t seed) {
  if (obs.points.empty()) throw std::invalid_argument("subsample: empty observation");
  if (n_sub == 0) throw std::invalid_argument("subsample: n_sub must be positive");
  std::mt19937_64 rng(seed);
  const std::size_t n = obs.points.size();
  std::vector<EnrichedPoint> out;
  out.reserve(n_sub);
  if (n >= n_sub) {
    // Partial Fisher-Yates: the first n_sub slots become the sample.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n_sub; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.push_back(obs.points[idx[i]]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < n_sub; ++i) out.push_back(obs.points[pick(rng)]);
  }
  return out;
}

NormalizedSegment normalize(const std::vector<EnrichedPoint>& points) {
  if (points.empty()) throw std::invalid_argument("normalize: no points");
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : points) centroid += p.position();
  centroid /= static_cast<double>(points.size());

  NormalizedSegment seg;
  seg.points = points;
  double max_norm = 0.0;
  for (auto& p : seg.points) {
    const Eigen::Vector3d c = p.position() - centroid;
    p.set_position(c);
    max_norm = std::max(max_norm, c.norm());
  }
  if (max_norm < 1e-12) {
    for (auto& p : seg.points) p.set_position(Eigen::Vector3d::Zero());
    seg.scale = 1.0;
    return seg;
  }
  for (auto& p : seg.points) p.set_position(p.position() / max_norm);
  seg.scale = max_norm;
  return seg;
}

SemanticGrid semantic_grid(const NormalizedSegment& seg, const ClassTable& classes) {
  SemanticGrid grid;
  grid.num_classes = classes.size();
  grid.cells.assign(kGridCells * grid.num_classes, 0.0);
  if (grid.num_classes == 0) return grid;
  std::array<double, kGridCells> mass{};
  for (const auto& p : seg.points) {
    if (!p.class_valid) continue;
    const auto cls = classes.index_of(p.c);
    if (!cls) continue;
    const int cell = grid_axis_index(p.x) * 9 + grid_axis_index(p.y) * 3 + grid_axis_index(p.z);
    grid.cells[cell * grid.num_classes + *cls] += 1.0;
    mass[cell] += 1.0;
  }
  for (int cell = 0; cell < kGridCells; ++cell) {
    if (mass[cell] == 0.0) continue;
    for (std::size_t c = 0; c < grid.num_classes; ++c) grid.cells[cell * grid.num_classes + c] /= mass[cell];
  }
  return grid;
}

std::uint64_t DescriptorBackend::hash() const {
  struct Header {
    std::uint8_t kind;
    std::uint64_t dim;
    std::uint64_t classes;
  } header{static_cast<std::uint8_t>(kind()), dim(), num_classes()};
  std::uint64_t h = fnv1a64(&header.kind, 1);
  h = fnv1a64(&header.dim, sizeof(header.dim), h);
  h = fnv1a64(&header.classes, sizeof(header.classes), h);
  const auto params = serialized_parameters();
  if (!params.empty()) h = fnv1a64(params.data(), params.size() * sizeof(float), h);
  return h;
}

std::array<double, 7> eigen_features(const NormalizedSegment& seg) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : seg.points) mean += p.position();
  mean /= static_cast<double>(seg.points.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : seg.points) {
    const Eigen::Vector3d d = p.position() - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(seg.points.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov, Eigen::EigenvaluesOnly);
  const double l1 = std::max(es.eigenvalues()(2), 0.0);
  const double l2 = std::max(es.eigenvalues()(1), 0.0);
  const double l3 = std::max(es.eigenvalues()(0), 0.0);
  std::array<double, 7> f{l1, l2, l3, 0.0, 0.0, 0.0, std::cbrt(l1 * l2 * l3)};
  if (l1 > 0.0) {
    f[3] = (l1 - l2) / l1;
    f[4] = (l2 - l3) / l1;
    f[5] = l3 / l1;
  }
  return f;
}

Descriptor HandCraftedBackend::forward(const NormalizedSegment& seg, const SemanticGrid& grid) const {
  if (grid.num_classes != num_classes()) throw std::invalid_argument("semantic grid class count mismatch");
  std::vector<float> out(dim(), 0.0f);
  const auto geom = eigen_features(seg);
  for (std::size_t i = 0; i < kGeometrySize; ++i) out[kGeometryOffset + i] = static_cast<float>(geom[i]);

  std::array<double, kHueBins> hue{};
  double weight = 0.0;
  for (const auto& p : seg.points) {
    if (!p.color_valid) continue;
    const auto bin = std::min<std::size_t>(static_cast<std::size_t>(p.h * kHueBins), kHueBins - 1);
    hue[bin] += p.s;
    weight += p.s;
  }
  for (std::size_t i = 0; i < kHueBins; ++i) {
    out[kHueOffset + i] = weight > 0.0 ? static_cast<float>(hue[i] / weight) : 0.0f;
  }
  for (std::size_t i = 0; i < grid.cells.size(); ++i) out[kSemanticOffset + i] = static_cast<float>(grid.cells[i]);
  out.back() = static_cast<float>(seg.scale);
  return Descriptor(std::move(out));
}

std::uint64_t observation_seed(std::uint64_t base_seed, const SegmentObservation& obs) {
  return mix_seed(mix_seed(base_seed, obs.segment_id), obs.observation_index);
}

Descriptor describe(const DescriptorBackend& backend, const SegmentObservation& obs, std::uint64_t seed,
                    std::size_t n_sub) {
  if (obs.points.empty()) throw std::invalid_argument("describe: empty observation");
  const NormalizedSegment seg = normalize(subsample(obs, n_sub, seed));
  const SemanticGrid grid = semantic_grid(seg, backend.classes());
  return backend.forward(seg, grid);
}

std::vector<Descriptor> describe_batch(const DescriptorBackend& backend,
                                       std::span<const SegmentObservation> observations,
                                       std::uint64_t seed, std::size_t n_sub) {
  std::vector<Descriptor> out(observations.size());
  const auto n = static_cast<std::int64_t>(observations.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& obs = observations[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = describe(backend, obs, observation_seed(seed, obs), n_sub);
  }
  return out;
}

std::vector<Descriptor> describe_batch_serial(const DescriptorBackend& backend,
                                              std::span<const SegmentObservation> observations,
                                              std::uint64_t seed, std::size_t n_sub) {
  std::vector<Descriptor> out;
  out.reserve(observations.size());
  for (const auto& obs : observations) out.push_back(describe(backend, obs, observation_seed(seed, obs), n_sub));
  return out;
}

double triplet_loss_from_distances(double d_ap, double d_an, double sigma, double margin) {
  return std::max(margin + sigma * d_ap - d_an, 0.0);
}

double triplet_loss(const Descriptor& anchor, const Descriptor& positive, const Descriptor& negative,
                    std::size_t n_anchor, std::size_t n_positive, double margin) {
  if (n_anchor == 0) throw std::invalid_argument("triplet_loss: anchor has no points");
  const double sigma = static_cast<double>(n_positive) / static_cast<double>(n_anchor);
  return triplet_loss_from_distances(descriptor_distance(anchor, positive), descriptor_distance(anchor, negative),
                                     sigma, margin);
}

namespace {
constexpr char kBackendMagic[5] = "SSMD";
constexpr std::uint16_t kBackendVersion = 1;
}  // namespace

void save_backend(const DescriptorBackend& backend, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write backend file " + path.string());
  const auto params = backend.serialized_parameters();
  detail::write_magic(out, kBackendMagic);
  detail::write_le<std::uint16_t>(out, kBackendVersion);
  detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(backend.kind()));
  detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(backend.dim()));
  detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(backend.num_classes()));
  detail::write_le<std::uint64_t>(out, params.size());
  for (float p : params) detail::write_le<float>(out, p);
  if (!out) throw DataError("failed writing backend file " + path.string());
}

std::unique_ptr<DescriptorBackend> load_backend(const std::filesystem::path& path, const ClassTable& classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open backend file " + path.string());
  if (!detail::read_magic(in, kBackendMagic)) throw DataError("backend file: bad magic");
  const auto version = detail::read_le<std::uint16_t>(in, "version");
  if (version != kBackendVersion) throw DataError("backend file: unsupported version " + std::to_string(version));
  const auto kind = static_cast<BackendKind>(detail::read_le<std::uint8_t>(in, "kind"));
  const auto dim = detail::read_le<std::uint16_t>(in, "dimension");
  const auto num_classes = detail::read_le<std::uint16_t>(in, "class count");
  const auto count = detail::read_le<std::uint64_t>(in, "parameter count");
  if (num_classes != classes.size()) {
    throw DataError("backend file: class count " + std::to_string(num_classes) + " does not match class table (" +
                    std::to_string(classes.size()) + ")");
  }
  if (count > (std::uint64_t{1} << 32)) throw DataError("backend file: implausible parameter count");
  std::vector<float> params(count);
  for (auto& p : params) p = detail::read_le<float>(in, "parameters");
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("backend file: trailing bytes");

  switch (kind) {
    case BackendKind::kHandCrafted: {
      auto backend = std::make_unique<HandCraftedBackend>(classes);
      if (count != 0 || dim != backend->dim()) throw DataError("backend file: hand-crafted header inconsistent");
      return backend;
    }
    case BackendKind::kTrainable:
    case BackendKind::kTrainableLinear:
      try {
        return std::make_unique<TrainableBackend>(classes, kind == BackendKind::kTrainableLinear, dim, params);
      } catch (const std::invalid_argument& e) {
        throw DataError(std::string("backend file: ") + e.what());
      }
  }
  throw DataError("backend file: unknown backend kind");
}

}  // namespace segloc
