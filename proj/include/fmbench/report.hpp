#pragma once

// Deterministic SVG plots. Coordinates are printed with fixed precision so the
// bytes depend only on the data.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fmbench/stats.hpp"
#include "fmbench/survival.hpp"

namespace fmbench::svg {

// Data box [x_min, x_max] x [y_min, y_max] mapped into the plot area.
struct Frame {
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  static constexpr double width = 480.0, height = 360.0;
  static constexpr double left = 60.0, right = 20.0, top = 36.0, bottom = 48.0;

  double px(double x) const;
  double py(double y) const;
};

std::string fmt(double v);  // "%.3f", "-0.000" folded to "0.000"

std::string roc_plot(const RocCurve& curve, const std::string& title);

struct KmSeries {
  std::string name;
  KaplanMeierCurve curve;
};
std::string km_plot(const std::vector<KmSeries>& series, const std::string& title);

struct FewShotSeries {
  std::vector<int> k;
  std::vector<double> mean;
  std::vector<double> std;
};
std::string fewshot_plot(const FewShotSeries& s, const std::string& metric, const std::string& title);

struct Bar {
  std::string label;
  double value = 0.0;
  double low = 0.0;
  double high = 0.0;
};
std::string bar_plot(const std::vector<Bar>& bars, const std::string& metric, const std::string& title);

void write_text(const std::string& text, const std::filesystem::path& path);

}  // namespace fmbench::svg
