#pragma once

#include <string>
#include <vector>

#include "gpo/common.hpp"
#include "gpo/sdd.hpp"

namespace gpo::report {

// ||pred - truth|| / ||truth|| with uniform grid quadrature (the weights
// cancel). The reference must be nonzero.
double rel_l2(const Vec& pred, const Vec& truth);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, zero for a single value
  int64_t count = 0;
};
Aggregate aggregate(const std::vector<double>& values);

// Fraction of entries with lower <= truth <= upper, pooled over all fields.
double coverage_fraction(const Mat& truth, const Mat& lower, const Mat& upper);

// Comma-separated values, shortest round-trip number formatting, one header
// line. Every row must match the column count.
void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const std::vector<std::vector<double>>& rows);

// Training trace: init rows get negative step indices counting up to the
// descent phase, whose rows keep their recorded step numbers.
void write_trace_csv(const std::string& path, const std::vector<double>& init_losses,
                     const std::vector<sdd::SddTraceRow>& trace);

struct SweepRow {
  double axis_value = 0.0;
  uint64_t seed = 0;
  double rel_l2 = 0.0;
};
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

// Self-contained SVG line plot: shared x, any number of polylines, an
// optional shaded band, and optional scatter markers.
struct Series {
  std::string label;
  std::string color;  // empty picks from a fixed palette
  Vec y;
};
struct Scatter {
  Vec x, y;
  std::string color;
};
struct LinePlot {
  std::string title;
  Vec x;
  std::vector<Series> series;
  Vec band_lower, band_upper;  // both empty or both matching x
  std::vector<Scatter> points;
  bool log_y = false;  // requires strictly positive y data
};
void write_line_svg(const std::string& path, const LinePlot& plot);

}  // namespace gpo::report
