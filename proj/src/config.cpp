#include "segloc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace segloc {

namespace {

double to_double(const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument("expected a number, got '" + v + "'");
  return x;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  }
  return x;
}

int to_int(const std::string& v) {
  const auto x = to_u64(v);
  if (x > 1u << 20) throw std::invalid_argument("value too large: " + v);
  return static_cast<int>(x);
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

std::string fmt(double x) {
  std::ostringstream ss;
  ss << std::setprecision(17) << x;
  return ss.str();
}

std::string fmt(bool b) { return b ? "true" : "false"; }

struct Key {
  std::string name;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

#define SEGLOC_DOUBLE(key, field) \
  Key{key, [](PipelineConfig& c, const std::string& v) { c.field = to_double(v); }, \
      [](const PipelineConfig& c) { return fmt(static_cast<double>(c.field)); }}
#define SEGLOC_SIZE(key, field) \
  Key{key, [](PipelineConfig& c, const std::string& v) { c.field = to_u64(v); }, \
      [](const PipelineConfig& c) { return std::to_string(c.field); }}
#define SEGLOC_INT(key, field) \
  Key{key, [](PipelineConfig& c, const std::string& v) { c.field = to_int(v); }, \
      [](const PipelineConfig& c) { return std::to_string(c.field); }}
#define SEGLOC_BOOL(key, field) \
  Key{key, [](PipelineConfig& c, const std::string& v) { c.field = to_bool(v); }, \
      [](const PipelineConfig& c) { return fmt(c.field); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      SEGLOC_DOUBLE("d_segment", segmentation.d_segment),
      SEGLOC_DOUBLE("t_h", segmentation.t_h),
      SEGLOC_DOUBLE("p_h", segmentation.p_h),
      SEGLOC_DOUBLE("p_c", segmentation.p_c),
      SEGLOC_SIZE("min_segment_points", segmentation.min_segment_points),
      SEGLOC_DOUBLE("radius", local_map.radius),
      SEGLOC_DOUBLE("voxel_size", local_map.voxel_size),
      SEGLOC_BOOL("filter_dynamic", local_map.filter_dynamic),
      Key{"dynamic_classes",
          [](PipelineConfig& c, const std::string& v) {
            c.extra_dynamic_classes.clear();
            std::istringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) {
              const auto id = to_u64(item);
              if (id > 65535) throw std::invalid_argument("class id out of range: " + item);
              c.extra_dynamic_classes.push_back(static_cast<ClassId>(id));
            }
          },
          [](const PipelineConfig& c) {
            std::string s;
            for (auto id : c.extra_dynamic_classes) s += (s.empty() ? "" : ",") + std::to_string(id);
            return s;
          }},
      SEGLOC_BOOL("remove_ground", remove_ground),
      SEGLOC_DOUBLE("ground_eps", ground_eps),
      Key{"backend",
          [](PipelineConfig& c, const std::string& v) {
            if (v == "handcrafted") c.backend = BackendChoice::kHandCrafted;
            else if (v == "trainable") c.backend = BackendChoice::kTrainable;
            else if (v == "trainable-linear") c.backend = BackendChoice::kTrainableLinear;
            else throw std::invalid_argument("backend must be handcrafted, trainable or trainable-linear");
          },
          [](const PipelineConfig& c) -> std::string {
            switch (c.backend) {
              case BackendChoice::kHandCrafted: return "handcrafted";
              case BackendChoice::kTrainable: return "trainable";
              case BackendChoice::kTrainableLinear: return "trainable-linear";
            }
            return "";
          }},
      Key{"backend_file", [](PipelineConfig& c, const std::string& v) { c.backend_file = v; },
          [](const PipelineConfig& c) { return c.backend_file; }},
      SEGLOC_INT("descriptor_dim", architecture.output_dim),
      SEGLOC_INT("point_hidden1", architecture.point_hidden1),
      SEGLOC_INT("point_hidden2", architecture.point_hidden2),
      SEGLOC_INT("grid_hidden", architecture.grid_hidden),
      SEGLOC_SIZE("n_sub", n_sub),
      SEGLOC_DOUBLE("margin", training.margin),
      SEGLOC_DOUBLE("learning_rate", training.learning_rate),
      SEGLOC_INT("epochs", training.epochs),
      SEGLOC_SIZE("batch_size", training.batch_size),
      SEGLOC_BOOL("augment", training.use_augmentation),
      SEGLOC_SIZE("k", k),
      SEGLOC_SIZE("min_inliers", ransac.min_inliers),
      SEGLOC_DOUBLE("max_centroid_dist", ransac.max_centroid_dist),
      SEGLOC_SIZE("ransac_iterations", ransac.max_iterations),
      SEGLOC_SIZE("warmup_frames", warmup_frames),
      SEGLOC_SIZE("localize_every", localize_every),
      SEGLOC_SIZE("iou_samples", iou_samples),
      SEGLOC_DOUBLE("pairing_gate", pairing_gate),
      SEGLOC_DOUBLE("iou_threshold", iou_threshold),
      Key{"seed", [](PipelineConfig& c, const std::string& v) { c.set_seed(to_u64(v)); },
          [](const PipelineConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

#undef SEGLOC_DOUBLE
#undef SEGLOC_SIZE
#undef SEGLOC_INT
#undef SEGLOC_BOOL

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void PipelineConfig::validate() const {
  segmentation.validate();
  local_map.validate();
  if (!(ground_eps >= 0.0)) throw std::invalid_argument("ground_eps must be >= 0");
  if (architecture.output_dim <= 0 || architecture.output_dim > 65535) {
    throw std::invalid_argument("descriptor_dim must be in [1, 65535]");
  }
  if (architecture.point_hidden1 <= 0 || architecture.point_hidden2 <= 0 || architecture.grid_hidden <= 0) {
    throw std::invalid_argument("hidden widths must be positive");
  }
  if (n_sub == 0) throw std::invalid_argument("n_sub must be positive");
  if (!(training.margin >= 0.0)) throw std::invalid_argument("margin must be >= 0");
  if (!(training.learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (training.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (training.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (k == 0) throw std::invalid_argument("k must be positive");
  ransac.validate();
  if (localize_every == 0) throw std::invalid_argument("localize_every must be positive");
  if (iou_samples == 0) throw std::invalid_argument("iou_samples must be positive");
  if (!(pairing_gate > 0.0)) throw std::invalid_argument("pairing_gate must be positive");
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) throw std::invalid_argument("iou_threshold must be in [0,1]");
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  training.seed = s;
  ransac.seed = s;
}

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig config;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    auto fail = [&](const std::string& msg) { throw DataError("config line " + std::to_string(n) + ": " + msg); };
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = keys();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return k.name == key; });
    if (it == table.end()) fail("unknown key '" + key + "'");
    if (!seen.emplace(key, n).second) fail("duplicate key '" + key + "'");
    try {
      it->set(config, value);
    } catch (const std::invalid_argument& e) {
      fail(key + ": " + e.what());
    }
  }
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    // Messages start with the offending key; point at the line that set it.
    const std::string msg = e.what();
    for (const auto& [key, line] : seen) {
      if (msg.rfind(key + " ", 0) == 0) throw DataError("config line " + std::to_string(line) + ": " + msg);
    }
    throw DataError("config: " + msg);
  }
  return config;
}

PipelineConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const PipelineConfig& config) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> names;
  for (const auto& k : keys()) names.push_back(k.name);
  return names;
}

}  // namespace segloc
