#include "segloc/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace segloc {

namespace {

class Row {
 public:
  Row() { ss_ << std::setprecision(17); }
  template <typename T>
  Row& operator<<(const T& v) {
    if (!first_) ss_ << ',';
    first_ = false;
    ss_ << v;
    return *this;
  }
  std::string str() const { return ss_.str() + "\n"; }

 private:
  std::ostringstream ss_;
  bool first_ = true;
};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

std::string num(double v) {
  std::ostringstream ss;
  ss << std::setprecision(6) << v;
  return ss.str();
}

// Round step for about n ticks over span.
double tick_step(double span, int n) {
  const double raw = span / n;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (raw <= m * mag) return m * mag;
  }
  return 10.0 * mag;
}

struct Frame {
  double x0, x1, y0, y1;
  static constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

std::string axes(const Frame& f, const std::string& title, const std::string& xl, const std::string& yl) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << Frame::kW << "\" height=\"" << Frame::kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << Frame::kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title)
    << "</text>\n";
  const double bx = f.px(f.x0), by = f.py(f.y0);
  s << "<line x1=\"" << bx << "\" y1=\"" << by << "\" x2=\"" << f.px(f.x1) << "\" y2=\"" << by
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << bx << "\" y1=\"" << by << "\" x2=\"" << bx << "\" y2=\"" << f.py(f.y1)
    << "\" stroke=\"black\"/>\n";
  const double xs = tick_step(f.x1 - f.x0, 8), ys = tick_step(f.y1 - f.y0, 6);
  for (double x = std::ceil(f.x0 / xs) * xs; x <= f.x1 + 1e-9 * xs; x += xs) {
    s << "<line x1=\"" << f.px(x) << "\" y1=\"" << by << "\" x2=\"" << f.px(x) << "\" y2=\"" << by + 5
      << "\" stroke=\"black\"/><text x=\"" << f.px(x) << "\" y=\"" << by + 18 << "\" text-anchor=\"middle\">"
      << num(std::abs(x) < 1e-12 * xs ? 0.0 : x) << "</text>\n";
  }
  for (double y = std::ceil(f.y0 / ys) * ys; y <= f.y1 + 1e-9 * ys; y += ys) {
    s << "<line x1=\"" << bx - 5 << "\" y1=\"" << f.py(y) << "\" x2=\"" << bx << "\" y2=\"" << f.py(y)
      << "\" stroke=\"black\"/><text x=\"" << bx - 8 << "\" y=\"" << f.py(y) + 4 << "\" text-anchor=\"end\">"
      << num(std::abs(y) < 1e-12 * ys ? 0.0 : y) << "</text>\n";
  }
  s << "<text x=\"" << (bx + f.px(f.x1)) / 2 << "\" y=\"" << Frame::kH - 15 << "\" text-anchor=\"middle\">"
    << esc(xl) << "</text>\n";
  s << "<text x=\"18\" y=\"" << (by + f.py(f.y1)) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << (by + f.py(f.y1)) / 2 << ")\">" << esc(yl) << "</text>\n";
  return s.str();
}

const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return palette[i % 6];
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw DataError("csv: not a number: '" + s + "'");
  return v;
}

}  // namespace

std::string iou_csv(const IoUReport& report) {
  std::string out = "a_id,b_id,iou,std_error,degenerate\n";
  for (const auto& p : report.pairs) {
    out += (Row() << p.a_id << p.b_id << p.estimate.iou << p.estimate.std_error << (p.estimate.degenerate ? 1 : 0))
               .str();
  }
  return out;
}

std::string retrieval_csv(const RetrievalCurve& curve) {
  std::string out = "query_segment_id,observation_index,true_id,completeness,rank\n";
  for (const auto& e : curve.entries) {
    Row r;
    r << e.query_segment_id << e.observation_index << e.true_id << e.completeness;
    if (e.rank) r << *e.rank;
    else r << "not_in_map";
    out += r.str();
  }
  return out;
}

std::string retrieval_buckets_csv(const RetrievalCurve& curve) {
  std::string out = "completeness_lo,completeness_hi,count,mean_rank,median_rank,p90_rank\n";
  for (const auto& b : curve.buckets) {
    out += (Row() << b.lo << b.hi << b.count << b.mean_rank << b.median_rank << b.p90_rank).str();
  }
  return out;
}

std::string localization_csv(const std::vector<LocalizationResult>& results) {
  std::string out = "timestamp,inliers,tx,ty,tz,qw,qx,qy,qz,px,py,pz,pqw,pqx,pqy,pqz\n";
  for (const auto& r : results) {
    const auto& t = r.transform.translation;
    const auto& q = r.transform.rotation;
    const auto& p = r.robot_pose_local.translation;
    const auto& pq = r.robot_pose_local.rotation;
    out += (Row() << r.timestamp << r.inlier_count << t.x() << t.y() << t.z() << q.w() << q.x() << q.y() << q.z()
                  << p.x() << p.y() << p.z() << pq.w() << pq.x() << pq.y() << pq.z())
               .str();
  }
  return out;
}

std::vector<LocalizationResult> parse_localization_csv(const std::string& text) {
  const auto [header, rows] = parse_csv(text);
  if (header.size() != 16 || header[0] != "timestamp") throw DataError("not a localization results file");
  std::vector<LocalizationResult> out;
  for (const auto& row : rows) {
    if (row.size() != 16) throw DataError("localization csv: expected 16 columns");
    double v[16];
    for (int i = 0; i < 16; ++i) v[i] = to_double(row[i]);
    LocalizationResult r;
    r.timestamp = v[0];
    r.inlier_count = static_cast<std::size_t>(v[1]);
    r.transform = Pose({v[2], v[3], v[4]}, Eigen::Quaterniond(v[5], v[6], v[7], v[8]).normalized());
    r.robot_pose_local = Pose({v[9], v[10], v[11]}, Eigen::Quaterniond(v[12], v[13], v[14], v[15]).normalized());
    out.push_back(r);
  }
  return out;
}

std::string accuracy_csv(const AccuracyReport& report) {
  std::string out = "timestamp,translation_error_m,rotation_error_deg\n";
  for (const auto& e : report.entries) out += (Row() << e.timestamp << e.translation_error << e.rotation_error).str();
  return out;
}

std::string timing_csv(const std::vector<FrameTiming>& timings) {
  std::string out = "timestamp,points,voxels,segments,enrich_ms,segment_ms,describe_ms,localize_ms,total_ms\n";
  for (const auto& t : timings) {
    out += (Row() << t.timestamp << t.points << t.voxels << t.segments << t.enrich_ms << t.segment_ms
                  << t.describe_ms << t.localize_ms << t.total_ms)
               .str();
  }
  return out;
}

std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header.empty()) header = split(line);
    else rows.push_back(split(line));
  }
  if (header.empty()) throw DataError("csv: missing header");
  return {header, rows};
}

std::string svg_histogram(const Histogram& h, const std::string& title, const std::string& x_label) {
  std::size_t peak = 1;
  for (auto c : h.counts) peak = std::max(peak, c);
  Frame f{h.lo, h.lo + h.bin_width * static_cast<double>(h.counts.size()), 0.0, static_cast<double>(peak) * 1.1};
  std::string s = axes(f, title, x_label, "count");
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double x0 = f.px(h.lo + h.bin_width * static_cast<double>(i));
    const double x1 = f.px(h.lo + h.bin_width * static_cast<double>(i + 1));
    const double y = f.py(static_cast<double>(h.counts[i]));
    s += "<rect x=\"" + num(x0 + 1) + "\" y=\"" + num(y) + "\" width=\"" + num(x1 - x0 - 2) + "\" height=\"" +
         num(f.py(0) - y) + "\" fill=\"#1f77b4\"/>\n";
  }
  return s + "</svg>\n";
}

std::string svg_lines(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                      const std::string& y_label, bool steps) {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& sr : series) {
    for (const auto& [x, y] : sr.points) {
      if (!any) x0 = x1 = x, y1 = y, any = true;
      x0 = std::min(x0, x), x1 = std::max(x1, x), y1 = std::max(y1, y);
      y0 = std::min(y0, y);
    }
  }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  Frame f{x0, x1, y0, y1 + 0.05 * (y1 - y0)};
  std::string s = axes(f, title, x_label, y_label);
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::string pts;
    double prev_y = 0;
    for (std::size_t k = 0; k < series[i].points.size(); ++k) {
      const auto [x, y] = series[i].points[k];
      if (steps && k > 0) pts += num(f.px(x)) + "," + num(f.py(prev_y)) + " ";
      pts += num(f.px(x)) + "," + num(f.py(y)) + " ";
      prev_y = y;
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color(i)) + "\" stroke-width=\"2\" points=\"" + pts +
         "\"/>\n";
    s += "<text x=\"" + num(Frame::kW - Frame::kRight - 150) + "\" y=\"" + num(Frame::kTop + 16 * (i + 1)) +
         "\" fill=\"" + color(i) + "\">" + esc(series[i].name) + "</text>\n";
  }
  return s + "</svg>\n";
}

std::string svg_iou_histogram(const IoUReport& report) {
  return svg_histogram(report.histogram,
                       "Segment IoU (" + std::to_string(report.n_at_or_above) + " of " +
                           std::to_string(report.pairs.size()) + " pairs >= " + num(report.threshold) + ")",
                       "IoU");
}

std::string svg_retrieval(const RetrievalCurve& curve) {
  Series mean{"mean rank", {}}, p90{"90th percentile rank", {}};
  for (const auto& b : curve.buckets) {
    if (b.count == 0) continue;
    const double mid = (b.lo + b.hi) / 2;
    mean.points.emplace_back(mid, b.mean_rank);
    p90.points.emplace_back(mid, static_cast<double>(b.p90_rank));
  }
  return svg_lines({mean, p90}, "k needed to retrieve the correct segment", "completeness", "k");
}

std::string svg_accuracy(const AccuracyReport& report) {
  Series s{"localizations", {}};
  for (const auto& [e, frac] : report.cumulative) s.points.emplace_back(e, frac);
  return svg_lines({s}, "Cumulative translation error", "translation error [m]", "fraction", true);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace segloc
