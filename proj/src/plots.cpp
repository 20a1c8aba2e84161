#include "suq/plots.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace suq {

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Two decimals are plenty for pixel coordinates.
std::string px(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, std::round(v * 100.0) / 100.0, std::chars_format::fixed, 2);
  return std::string(buf, res.ptr);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string file_stem(const std::string& metric) {
  std::string out;
  for (char c : metric) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.') ? c : '_';
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

}  // namespace

std::vector<std::string> available_metrics(const std::vector<ResultRow>& rows) {
  std::set<std::string> names;
  for (const auto& r : rows) names.insert(r.metric);
  return {names.begin(), names.end()};
}

std::vector<ChartPoint> aggregate_metric(const std::vector<ResultRow>& rows, const std::string& metric) {
  std::map<std::pair<std::string, std::int64_t>, std::vector<double>> groups;
  for (const auto& r : rows)
    if (r.metric == metric && r.value) groups[{r.split, r.step}].push_back(*r.value);
  std::vector<ChartPoint> out;
  for (const auto& [key, values] : groups) {
    ChartPoint p;
    p.series = key.first;
    p.x = key.second;
    double sum = 0.0;
    for (double v : values) sum += v;
    p.mean = sum / static_cast<double>(values.size());
    p.min = *std::min_element(values.begin(), values.end());
    p.max = *std::max_element(values.begin(), values.end());
    p.count = static_cast<int>(values.size());
    out.push_back(p);
  }
  return out;
}

std::string chart_csv(const std::vector<ChartPoint>& points) {
  std::string out = "series,x,mean,min,max,count\n";
  for (const auto& p : points) {
    out += csv_field(p.series) + ',' + std::to_string(p.x) + ',' + num(p.mean) + ',' + num(p.min) + ',' +
           num(p.max) + ',' + std::to_string(p.count) + '\n';
  }
  return out;
}

std::string chart_svg(const std::vector<ChartPoint>& points, const std::string& title) {
  const double width = 640, height = 400, left = 60, right = 150, top = 40, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  std::vector<std::string> series;
  std::map<std::string, int> per_series;
  for (const auto& p : points) {
    if (!per_series.count(p.series)) series.push_back(p.series);
    ++per_series[p.series];
  }
  const bool curve = std::any_of(per_series.begin(), per_series.end(), [](const auto& kv) { return kv.second > 1; });

  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& p : points) {
    lo = first ? p.min : std::min(lo, p.min);
    hi = first ? p.max : std::max(hi, p.max);
    first = false;
  }
  if (!curve) lo = std::min(lo, 0.0);
  if (hi - lo < 1e-12) {
    hi += 0.5;
    lo -= 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  hi += pad;
  if (curve || lo < 0.0) lo -= pad;
  auto sy = [&](double v) { return top + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px(width) << "\" height=\"" << px(height)
    << "\" viewBox=\"0 0 " << px(width) << ' ' << px(height) << "\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << px(width) << "\" height=\"" << px(height) << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << px(left) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
    << "</text>\n";
  s << "<line class=\"axis\" x1=\"" << px(left) << "\" y1=\"" << px(top + plot_h) << "\" x2=\"" << px(left + plot_w)
    << "\" y2=\"" << px(top + plot_h) << "\" stroke=\"black\"/>\n";
  s << "<line class=\"axis\" x1=\"" << px(left) << "\" y1=\"" << px(top) << "\" x2=\"" << px(left) << "\" y2=\""
    << px(top + plot_h) << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    s << "<text x=\"" << px(left - 6) << "\" y=\"" << px(sy(v) + 4)
      << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" << num(std::round(v * 1000) / 1000)
      << "</text>\n";
  }

  if (curve) {
    std::int64_t x0 = points.front().x, x1 = points.front().x;
    for (const auto& p : points) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
    }
    const double span = x1 > x0 ? static_cast<double>(x1 - x0) : 1.0;
    auto sx = [&](std::int64_t x) { return left + plot_w * (x1 > x0 ? (x - x0) / span : 0.5); };
    s << "<text x=\"" << px(left) << "\" y=\"" << px(height - 18) << "\" font-family=\"sans-serif\" font-size=\"10\">"
      << x0 << "</text>\n";
    s << "<text x=\"" << px(left + plot_w) << "\" y=\"" << px(height - 18)
      << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" << x1 << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
      const char* color = kPalette[k % std::size(kPalette)];
      std::string path;
      for (const auto& p : points) {
        if (p.series != series[k]) continue;
        path += (path.empty() ? "" : " ") + px(sx(p.x)) + "," + px(sy(p.mean));
      }
      s << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" points=\"" << path << "\"/>\n";
      for (const auto& p : points) {
        if (p.series != series[k]) continue;
        if (p.max > p.min)
          s << "<line class=\"range\" x1=\"" << px(sx(p.x)) << "\" y1=\"" << px(sy(p.min)) << "\" x2=\"" << px(sx(p.x))
            << "\" y2=\"" << px(sy(p.max)) << "\" stroke=\"" << color << "\"/>\n";
        s << "<circle class=\"marker\" cx=\"" << px(sx(p.x)) << "\" cy=\"" << px(sy(p.mean)) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
      }
    }
  } else {
    const double slot = plot_w / std::max<std::size_t>(1, points.size());
    for (std::size_t k = 0; k < points.size(); ++k) {
      const auto& p = points[k];
      const char* color = kPalette[k % std::size(kPalette)];
      const double cx = left + slot * (k + 0.5);
      const double base = sy(std::max(lo, 0.0));
      const double y = sy(p.mean);
      s << "<rect class=\"bar\" x=\"" << px(cx - slot * 0.35) << "\" y=\"" << px(std::min(y, base)) << "\" width=\""
        << px(slot * 0.7) << "\" height=\"" << px(std::abs(base - y)) << "\" fill=\"" << color << "\"/>\n";
      if (p.max > p.min)
        s << "<line class=\"range\" x1=\"" << px(cx) << "\" y1=\"" << px(sy(p.min)) << "\" x2=\"" << px(cx)
          << "\" y2=\"" << px(sy(p.max)) << "\" stroke=\"black\"/>\n";
    }
  }
  for (std::size_t k = 0; k < (curve ? series.size() : points.size()); ++k) {
    const std::string& name = curve ? series[k] : points[k].series;
    const double y = top + 14.0 * k;
    s << "<rect x=\"" << px(left + plot_w + 12) << "\" y=\"" << px(y) << "\" width=\"10\" height=\"10\" fill=\""
      << kPalette[k % std::size(kPalette)] << "\"/>\n";
    s << "<text x=\"" << px(left + plot_w + 26) << "\" y=\"" << px(y + 9)
      << "\" font-family=\"sans-serif\" font-size=\"10\">" << xml_escape(name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<ChartFiles> emit_plots(const std::vector<std::filesystem::path>& result_files,
                                   const std::vector<std::string>& metrics, const std::filesystem::path& out_dir) {
  if (result_files.empty()) throw PlotError("no result files given");
  std::vector<ResultRow> rows;
  for (const auto& f : result_files) {
    auto part = read_jsonl(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const auto available = available_metrics(rows);
  auto listing = [&] {
    std::string s;
    for (const auto& m : available) s += (s.empty() ? "" : ", ") + m;
    return s.empty() ? std::string("(none)") : s;
  };
  if (metrics.empty()) throw PlotError("no metrics selected; available metrics: " + listing());
  for (const auto& m : metrics)
    if (!std::binary_search(available.begin(), available.end(), m))
      throw PlotError("unknown metric '" + m + "'; available metrics: " + listing());
  std::filesystem::create_directories(out_dir);
  std::vector<ChartFiles> out;
  for (const auto& m : metrics) {
    const auto points = aggregate_metric(rows, m);
    ChartFiles files{m, out_dir / (file_stem(m) + ".csv"), out_dir / (file_stem(m) + ".svg")};
    std::ofstream(files.csv, std::ios::binary | std::ios::trunc) << chart_csv(points);
    std::ofstream(files.svg, std::ios::binary | std::ios::trunc) << chart_svg(points, m);
    out.push_back(files);
  }
  return out;
}

}  // namespace suq
