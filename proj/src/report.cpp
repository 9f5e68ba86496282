#include "gpo/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gpo::report {

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  return out;
}

}  // namespace

double rel_l2(const Vec& pred, const Vec& truth) {
  if (pred.size() != truth.size())
    throw ValidationError("relative L2: prediction has " + std::to_string(pred.size()) +
                          " values, truth has " + std::to_string(truth.size()));
  const double ref = truth.norm();
  if (ref == 0.0) throw ValidationError("relative L2 needs a nonzero reference field");
  return (pred - truth).norm() / ref;
}

Aggregate aggregate(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("aggregate needs at least one value");
  Aggregate a;
  a.count = static_cast<int64_t>(values.size());
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(a.count);
  if (a.count > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(a.count - 1));
  }
  return a;
}

double coverage_fraction(const Mat& truth, const Mat& lower, const Mat& upper) {
  if (truth.rows() != lower.rows() || truth.cols() != lower.cols() ||
      truth.rows() != upper.rows() || truth.cols() != upper.cols())
    throw ValidationError("coverage: truth and band shapes disagree");
  if (truth.size() == 0) throw ValidationError("coverage needs at least one value");
  int64_t hits = 0;
  for (int64_t j = 0; j < truth.cols(); ++j)
    for (int64_t i = 0; i < truth.rows(); ++i)
      if (lower(i, j) <= truth(i, j) && truth(i, j) <= upper(i, j)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const std::vector<std::vector<double>>& rows) {
  if (columns.empty()) throw ValidationError("csv needs at least one column");
  std::ofstream out = open_out(path);
  for (size_t c = 0; c < columns.size(); ++c)
    out << (c ? "," : "") << columns[c];
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != columns.size())
      throw ValidationError(path + ": csv row with " + std::to_string(row.size()) +
                            " values under " + std::to_string(columns.size()) +
                            " columns");
    for (size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << fmt(row[c]);
    out << "\n";
  }
  if (!out) throw IoError(path + ": write failed");
}

void write_trace_csv(const std::string& path, const std::vector<double>& init_losses,
                     const std::vector<sdd::SddTraceRow>& trace) {
  std::vector<std::vector<double>> rows;
  rows.reserve(init_losses.size() + trace.size());
  const int64_t e = static_cast<int64_t>(init_losses.size());
  for (int64_t i = 0; i < e; ++i)
    rows.push_back({static_cast<double>(i - e), init_losses[static_cast<size_t>(i)],
                    0.0, 0.0});
  for (const sdd::SddTraceRow& r : trace)
    rows.push_back({static_cast<double>(r.step), r.primal_loss, r.grad_norm, r.wall_ms});
  write_csv(path, {"step", "primal_loss", "grad_norm", "wall_ms"}, rows);
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::vector<std::vector<double>> flat;
  flat.reserve(rows.size());
  for (const SweepRow& r : rows)
    flat.push_back({r.axis_value, static_cast<double>(r.seed), r.rel_l2});
  write_csv(path, {"axis_value", "seed", "rel_l2"}, flat);
}

namespace {

constexpr double kWidth = 880, kHeight = 560;
constexpr double kLeft = 70, kRight = 30, kTop = 44, kBottom = 56;

const char* palette(size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  return colors[i % 5];
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void widen(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

}  // namespace

void write_line_svg(const std::string& path, const LinePlot& plot) {
  const int64_t n = plot.x.size();
  if (n < 1) throw ValidationError("plot needs at least one x value");
  for (const Series& s : plot.series)
    if (s.y.size() != n)
      throw ValidationError("plot series '" + s.label + "' does not match the x grid");
  if (plot.band_lower.size() != plot.band_upper.size() ||
      (plot.band_lower.size() != 0 && plot.band_lower.size() != n))
    throw ValidationError("plot band does not match the x grid");
  for (const Scatter& s : plot.points)
    if (s.x.size() != s.y.size())
      throw ValidationError("plot scatter x and y lengths disagree");

  auto y_value = [&](double v) {
    if (!plot.log_y) return v;
    if (!(v > 0.0))
      throw ValidationError("log-scale plot needs strictly positive values");
    return std::log10(v);
  };

  Range xr{plot.x.minCoeff(), plot.x.maxCoeff()};
  bool have_y = false;
  Range yr;
  auto widen_y = [&](double v) {
    const double t = y_value(v);
    if (!have_y) {
      yr.lo = yr.hi = t;
      have_y = true;
    } else {
      yr.widen(t);
    }
  };
  for (const Series& s : plot.series)
    for (int64_t i = 0; i < n; ++i) widen_y(s.y[i]);
  for (int64_t i = 0; i < plot.band_lower.size(); ++i) {
    widen_y(plot.band_lower[i]);
    widen_y(plot.band_upper[i]);
  }
  for (const Scatter& s : plot.points) {
    for (int64_t i = 0; i < s.x.size(); ++i) {
      xr.widen(s.x[i]);
      widen_y(s.y[i]);
    }
  }
  if (!have_y) throw ValidationError("plot needs at least one series or scatter");
  if (xr.hi == xr.lo) {
    xr.lo -= std::max(1.0, std::abs(xr.lo) * 0.1);
    xr.hi += std::max(1.0, std::abs(xr.hi) * 0.1);
  }
  if (yr.hi == yr.lo) {
    yr.lo -= std::max(1.0, std::abs(yr.lo) * 0.1);
    yr.hi += std::max(1.0, std::abs(yr.hi) * 0.1);
  }
  const double ypad = 0.05 * (yr.hi - yr.lo);
  yr.lo -= ypad;
  yr.hi += ypad;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) {
    return kTop + (1.0 - (y_value(y) - yr.lo) / (yr.hi - yr.lo)) * ph;
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight
      << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << escape(plot.title)
      << "</text>\n";

  // Grid lines and tick labels.
  for (int t = 0; t <= 4; ++t) {
    const double fx = xr.lo + (xr.hi - xr.lo) * t / 4.0;
    const double gy = yr.lo + (yr.hi - yr.lo) * t / 4.0;
    const double sx = px(fx);
    const double sy = kTop + (1.0 - static_cast<double>(t) / 4.0) * ph;
    svg << "<line x1=\"" << sx << "\" y1=\"" << kTop << "\" x2=\"" << sx << "\" y2=\""
        << kTop + ph << "\" stroke=\"#dddddd\"/>\n";
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << sy << "\" x2=\"" << kLeft + pw
        << "\" y2=\"" << sy << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << sx << "\" y=\"" << kTop + ph + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
        << tick_label(fx) << "</text>\n";
    const double label = plot.log_y ? std::pow(10.0, gy) : gy;
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << sy + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">"
        << tick_label(label) << "</text>\n";
  }
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw
      << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"#444444\"/>\n";

  if (plot.band_lower.size() == n && n > 1) {
    svg << "<polygon fill=\"#b8cbe8\" fill-opacity=\"0.55\" stroke=\"none\" points=\"";
    for (int64_t i = 0; i < n; ++i)
      svg << px(plot.x[i]) << "," << py(plot.band_upper[i]) << " ";
    for (int64_t i = n - 1; i >= 0; --i)
      svg << px(plot.x[i]) << "," << py(plot.band_lower[i]) << " ";
    svg << "\"/>\n";
  }

  for (size_t s = 0; s < plot.series.size(); ++s) {
    const Series& ser = plot.series[s];
    const std::string color = ser.color.empty() ? palette(s) : ser.color;
    if (n == 1) {
      svg << "<circle cx=\"" << px(plot.x[0]) << "\" cy=\"" << py(ser.y[0])
          << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    } else {
      svg << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.6\" points=\"";
      for (int64_t i = 0; i < n; ++i) svg << px(plot.x[i]) << "," << py(ser.y[i]) << " ";
      svg << "\"/>\n";
    }
    svg << "<text x=\"" << kWidth - kRight << "\" y=\"" << kTop + 16 * (s + 1)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
        << color << "\">" << escape(ser.label) << "</text>\n";
  }

  for (size_t s = 0; s < plot.points.size(); ++s) {
    const Scatter& sc = plot.points[s];
    const std::string color =
        sc.color.empty() ? palette(plot.series.size() + s) : sc.color;
    for (int64_t i = 0; i < sc.x.size(); ++i)
      svg << "<circle cx=\"" << px(sc.x[i]) << "\" cy=\"" << py(sc.y[i])
          << "\" r=\"3\" fill=\"" << color << "\" fill-opacity=\"0.8\"/>\n";
  }

  svg << "</svg>\n";
  std::ofstream out = open_out(path);
  out << svg.str();
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace gpo::report
