#include "emrp/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>

#include "emrp/errors.hpp"
#include "emrp/io.hpp"

namespace emrp::plot {
namespace {

std::string num(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape(const std::string& s) {
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

template <typename T>
std::vector<std::string> unique_in_order(std::span<const T> rows, std::string T::*field) {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (std::find(out.begin(), out.end(), r.*field) == out.end()) out.push_back(r.*field);
  }
  return out;
}

// White -> blue ramp for t in [0, 1].
std::string ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255 - t * (255 - 33)));
  const int g = static_cast<int>(std::lround(255 - t * (255 - 102)));
  const int b = static_cast<int>(std::lround(255 - t * (255 - 172)));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

std::vector<sim::MetricRow> read_results_csv(const std::string& path) {
  const auto t = io::read_csv(path);
  const char* cols[] = {"method", "estimand", "bias", "rmse", "ci_length", "coverage"};
  std::size_t idx[6];
  for (int k = 0; k < 6; ++k) {
    const auto c = t.column(cols[k]);
    if (!c) throw ValidationError(path + ": missing column '" + cols[k] + "'");
    idx[k] = *c;
  }
  std::vector<sim::MetricRow> rows;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = path + " row " + std::to_string(r + 2);
    sim::MetricRow m;
    m.method = row[idx[0]];
    m.estimand = row[idx[1]];
    m.bias = io::parse_double(row[idx[2]], ctx);
    m.rmse = io::parse_double(row[idx[3]], ctx);
    m.ci_length = io::parse_double(row[idx[4]], ctx);
    m.coverage = io::parse_double(row[idx[5]], ctx);
    rows.push_back(std::move(m));
  }
  return rows;
}

std::vector<std::string> metric_heatmaps(std::span<const sim::MetricRow> rows, const std::string& dir) {
  if (rows.empty()) throw ValidationError("no result rows to plot");
  std::filesystem::create_directories(dir);
  const auto methods = unique_in_order(rows, &sim::MetricRow::method);
  const auto estimands = unique_in_order(rows, &sim::MetricRow::estimand);

  struct Metric {
    const char* name;
    const char* title;
    double (*get)(const sim::MetricRow&);
  };
  const Metric metrics[] = {
      {"bias", "Absolute bias", [](const sim::MetricRow& r) { return std::abs(r.bias); }},
      {"rmse", "rMSE", [](const sim::MetricRow& r) { return r.rmse; }},
      {"ci_length", "95% interval length", [](const sim::MetricRow& r) { return r.ci_length; }},
      {"coverage", "Coverage of 95% intervals", [](const sim::MetricRow& r) { return r.coverage; }},
  };

  constexpr int cell_w = 110, cell_h = 34, left = 150, top = 60;
  std::vector<std::string> written;
  for (const auto& metric : metrics) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : rows) {
      lo = std::min(lo, metric.get(r));
      hi = std::max(hi, metric.get(r));
    }
    const int width = left + cell_w * static_cast<int>(estimands.size()) + 20;
    const int height = top + cell_h * static_cast<int>(methods.size()) + 20;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<text x=\"" << left << "\" y=\"20\" font-size=\"15\">" << metric.title << "</text>\n";
    for (std::size_t e = 0; e < estimands.size(); ++e) {
      svg << "<text x=\"" << left + cell_w * static_cast<int>(e) + cell_w / 2 << "\" y=\"" << top - 8
          << "\" text-anchor=\"middle\">" << escape(estimands[e]) << "</text>\n";
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const int y = top + cell_h * static_cast<int>(m);
      svg << "<text x=\"" << left - 8 << "\" y=\"" << y + cell_h / 2 + 4 << "\" text-anchor=\"end\">"
          << escape(methods[m]) << "</text>\n";
      for (std::size_t e = 0; e < estimands.size(); ++e) {
        const int x = left + cell_w * static_cast<int>(e);
        const sim::MetricRow* row = nullptr;
        for (const auto& r : rows) {
          if (r.method == methods[m] && r.estimand == estimands[e]) row = &r;
        }
        if (!row) {
          svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w << "\" height=\"" << cell_h
              << "\" fill=\"#eeeeee\" stroke=\"#ffffff\"/>\n";
          continue;
        }
        const double v = metric.get(*row);
        const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
        svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w << "\" height=\"" << cell_h
            << "\" fill=\"" << ramp(t) << "\" stroke=\"#ffffff\"/>\n";
        svg << "<text x=\"" << x + cell_w / 2 << "\" y=\"" << y + cell_h / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
            << (t > 0.6 ? "#ffffff" : "#000000") << "\">" << num(v) << "</text>\n";
      }
    }
    svg << "</svg>\n";
    const auto path = (std::filesystem::path(dir) / (std::string("metric_") + metric.name + ".svg")).string();
    io::write_file_atomic(path, svg.str());
    written.push_back(path);
  }
  return written;
}

void interval_plot(std::span<const EstimateSummary> estimates, const std::string& path) {
  if (estimates.empty()) throw ValidationError("no estimates to plot");
  const auto estimands = unique_in_order(estimates, &EstimateSummary::estimand);
  const auto methods = unique_in_order(estimates, &EstimateSummary::method);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : estimates) {
    lo = std::min(lo, s.ci_lower);
    hi = std::max(hi, s.ci_upper);
  }
  const double pad = std::max(0.01, 0.05 * (hi - lo));
  lo -= pad;
  hi += pad;

  constexpr int left = 130, right = 170, plot_w = 480, row_h = 16, top = 40;
  const int band_h = row_h * static_cast<int>(methods.size()) + 14;
  const int height = top + band_h * static_cast<int>(estimands.size()) + 40;
  const int width = left + plot_w + right;
  auto sx = [&](double v) { return left + (v - lo) / (hi - lo) * plot_w; };
  const char* palette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<text x=\"" << left << "\" y=\"20\" font-size=\"15\">Estimates with 95% intervals</text>\n";
  for (std::size_t e = 0; e < estimands.size(); ++e) {
    const int y0 = top + band_h * static_cast<int>(e);
    if (e % 2 == 0) {
      svg << "<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << plot_w << "\" height=\"" << band_h
          << "\" fill=\"#f4f4f4\"/>\n";
    }
    svg << "<text x=\"" << left - 8 << "\" y=\"" << y0 + band_h / 2 + 4 << "\" text-anchor=\"end\">"
        << escape(estimands[e]) << "</text>\n";
    for (std::size_t m = 0; m < methods.size(); ++m) {
      for (const auto& s : estimates) {
        if (s.estimand != estimands[e] || s.method != methods[m]) continue;
        const double y = y0 + 7 + row_h * (static_cast<double>(m) + 0.5);
        const char* color = palette[m % std::size(palette)];
        svg << "<line x1=\"" << num(sx(s.ci_lower), 2) << "\" x2=\"" << num(sx(s.ci_upper), 2) << "\" y1=\""
            << num(y, 2) << "\" y2=\"" << num(y, 2) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        svg << "<circle cx=\"" << num(sx(s.estimate), 2) << "\" cy=\"" << num(y, 2) << "\" r=\"4\" fill=\"" << color
            << "\"/>\n";
      }
    }
  }
  const int axis_y = top + band_h * static_cast<int>(estimands.size()) + 6;
  svg << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << axis_y << "\" y2=\"" << axis_y
      << "\" stroke=\"#000000\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    svg << "<text x=\"" << num(sx(v), 2) << "\" y=\"" << axis_y + 16 << "\" text-anchor=\"middle\">" << num(v)
        << "</text>\n";
  }
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const int y = top + 14 + 18 * static_cast<int>(m);
    svg << "<circle cx=\"" << left + plot_w + 16 << "\" cy=\"" << y - 4 << "\" r=\"4\" fill=\""
        << palette[m % std::size(palette)] << "\"/>\n";
    svg << "<text x=\"" << left + plot_w + 26 << "\" y=\"" << y << "\">" << escape(methods[m]) << "</text>\n";
  }
  svg << "</svg>\n";
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  io::write_file_atomic(path, svg.str());
}

}  // namespace emrp::plot
