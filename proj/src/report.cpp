#include "fmbench/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "fmbench/common.hpp"

namespace fmbench::svg {

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

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

std::string header(const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(Frame::width) + "\" height=\"" +
                  fmt(Frame::height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(Frame::width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" + escape(title) +
       "</text>\n";
  return s;
}

// Axes box, 5 ticks per axis and labels.
std::string axes(const Frame& f, const std::string& x_label, const std::string& y_label, bool x_ticks = true) {
  std::string s;
  const double x0 = Frame::left, x1 = Frame::width - Frame::right;
  const double y0 = Frame::height - Frame::bottom, y1 = Frame::top;
  s += "<rect x=\"" + fmt(x0) + "\" y=\"" + fmt(y1) + "\" width=\"" + fmt(x1 - x0) + "\" height=\"" + fmt(y0 - y1) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y_min + (f.y_max - f.y_min) * i / 4.0;
    s += "<text x=\"" + fmt(x0 - 4) + "\" y=\"" + fmt(f.py(yv) + 4) + "\" text-anchor=\"end\">" + fmt(yv) +
         "</text>\n";
    if (x_ticks) {
      const double xv = f.x_min + (f.x_max - f.x_min) * i / 4.0;
      s += "<text x=\"" + fmt(f.px(xv)) + "\" y=\"" + fmt(y0 + 14) + "\" text-anchor=\"middle\">" + fmt(xv) +
           "</text>\n";
    }
  }
  s += "<text x=\"" + fmt((x0 + x1) / 2) + "\" y=\"" + fmt(Frame::height - 10) + "\" text-anchor=\"middle\">" +
       escape(x_label) + "</text>\n";
  s += "<text x=\"14\" y=\"" + fmt((y0 + y1) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       fmt((y0 + y1) / 2) + ")\">" + escape(y_label) + "</text>\n";
  return s;
}

std::string polyline(const std::vector<std::pair<double, double>>& pts, const Frame& f, const char* color,
                     const std::string& cls) {
  std::string s = "<polyline class=\"" + cls + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) s += ' ';
    s += fmt(f.px(pts[i].first)) + "," + fmt(f.py(pts[i].second));
  }
  return s + "\"/>\n";
}

}  // namespace

double Frame::px(double x) const {
  const double span = x_max > x_min ? x_max - x_min : 1.0;
  return left + (x - x_min) / span * (width - left - right);
}

double Frame::py(double y) const {
  const double span = y_max > y_min ? y_max - y_min : 1.0;
  return height - bottom - (y - y_min) / span * (height - top - bottom);
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "0.000";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  std::string s = buf;
  if (s == "-0.000") s = "0.000";
  return s;
}

std::string roc_plot(const RocCurve& curve, const std::string& title) {
  const Frame f;
  std::string s = header(title) + axes(f, "false positive rate", "true positive rate");
  s += "<line x1=\"" + fmt(f.px(0)) + "\" y1=\"" + fmt(f.py(0)) + "\" x2=\"" + fmt(f.px(1)) + "\" y2=\"" +
       fmt(f.py(1)) + "\" stroke=\"#999999\" stroke-dasharray=\"4 3\"/>\n";
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : curve.points) pts.emplace_back(p.fpr, p.tpr);
  s += polyline(pts, f, kPalette[0], "roc");
  s += "<text x=\"" + fmt(f.px(0.6)) + "\" y=\"" + fmt(f.py(0.1)) + "\">AUROC " + fmt(curve.auroc) + "</text>\n";
  return s + "</svg>\n";
}

std::string km_plot(const std::vector<KmSeries>& series, const std::string& title) {
  Frame f;
  f.x_max = 0.0;
  for (const auto& ks : series)
    for (const auto& st : ks.curve.steps) f.x_max = std::max(f.x_max, st.time);
  if (f.x_max <= 0.0) f.x_max = 1.0;
  std::string s = header(title) + axes(f, "time (days)", "survival probability");
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<std::pair<double, double>> pts{{0.0, 1.0}};
    double prev = 1.0;
    for (const auto& st : series[i].curve.steps) {
      pts.emplace_back(st.time, prev);
      pts.emplace_back(st.time, st.survival);
      prev = st.survival;
    }
    pts.emplace_back(f.x_max, prev);
    const char* color = kPalette[i % 6];
    s += polyline(pts, f, color, "km");
    s += "<text x=\"" + fmt(Frame::width - Frame::right - 90) + "\" y=\"" + fmt(Frame::top + 14 + 14.0 * i) +
         "\" fill=\"" + color + "\">" + escape(series[i].name) + "</text>\n";
  }
  return s + "</svg>\n";
}

std::string fewshot_plot(const FewShotSeries& fs, const std::string& metric, const std::string& title) {
  if (fs.k.size() != fs.mean.size() || fs.k.size() != fs.std.size())
    throw Error(ErrorKind::shape, "few-shot series lengths differ");
  // log2 x axis so 1..40 spreads evenly
  Frame f;
  f.x_min = 0.0;
  f.x_max = 1.0;
  for (int k : fs.k) f.x_max = std::max(f.x_max, std::log2(static_cast<double>(k)));
  f.y_min = 0.0;
  f.y_max = 1.0;
  for (std::size_t i = 0; i < fs.mean.size(); ++i) f.y_max = std::max(f.y_max, fs.mean[i] + fs.std[i]);
  std::string s = header(title) + axes(f, "samples per class", metric, false);
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < fs.k.size(); ++i) {
    const double x = std::log2(static_cast<double>(fs.k[i]));
    pts.emplace_back(x, fs.mean[i]);
    s += "<line x1=\"" + fmt(f.px(x)) + "\" y1=\"" + fmt(f.py(fs.mean[i] - fs.std[i])) + "\" x2=\"" + fmt(f.px(x)) +
         "\" y2=\"" + fmt(f.py(fs.mean[i] + fs.std[i])) + "\" stroke=\"" + kPalette[0] + "\"/>\n";
    s += "<text x=\"" + fmt(f.px(x)) + "\" y=\"" + fmt(Frame::height - Frame::bottom + 14) +
         "\" text-anchor=\"middle\">" + std::to_string(fs.k[i]) + "</text>\n";
  }
  s += polyline(pts, f, kPalette[0], "fewshot");
  return s + "</svg>\n";
}

std::string bar_plot(const std::vector<Bar>& bars, const std::string& metric, const std::string& title) {
  Frame f;
  f.x_min = 0.0;
  f.x_max = static_cast<double>(std::max<std::size_t>(bars.size(), 1));
  f.y_min = 0.0;
  f.y_max = 1.0;
  for (const auto& b : bars) {
    f.y_max = std::max(f.y_max, std::max(b.high, b.value));
    f.y_min = std::min(f.y_min, std::min(b.low, b.value));
  }
  std::string s = header(title) + axes(f, "task", metric, false);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double x0 = f.px(i + 0.15), x1 = f.px(i + 0.85);
    const double ytop = f.py(std::max(b.value, 0.0)), ybase = f.py(std::min(b.value, 0.0));
    s += "<rect class=\"bar\" x=\"" + fmt(x0) + "\" y=\"" + fmt(ytop) + "\" width=\"" + fmt(x1 - x0) +
         "\" height=\"" + fmt(ybase - ytop) + "\" fill=\"" + kPalette[i % 6] + "\"/>\n";
    const double xc = f.px(i + 0.5);
    s += "<line x1=\"" + fmt(xc) + "\" y1=\"" + fmt(f.py(b.low)) + "\" x2=\"" + fmt(xc) + "\" y2=\"" +
         fmt(f.py(b.high)) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fmt(xc) + "\" y=\"" + fmt(Frame::height - Frame::bottom + 14) + "\" text-anchor=\"middle\">" +
         escape(b.label) + "</text>\n";
  }
  return s + "</svg>\n";
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::io, "write failed: " + path.string());
}

}  // namespace fmbench::svg
