#include "ndlab/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ndlab/csvio.hpp"
#include "ndlab/errors.hpp"

namespace ndlab {

namespace {

constexpr int kCanvas = 640;
constexpr double kMargin = 48.0;

const char* kPalette[12] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78"};

std::string fmt(double v) {
  // Two decimals are plenty for pixel coordinates and keep files compact.
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string star_path(double cx, double cy, double r) {
  // 5-point star, point up; alternating outer/inner vertices.
  std::string d;
  constexpr double kPi = 3.14159265358979323846;
  for (int i = 0; i < 10; ++i) {
    const double rad = (i % 2 == 0) ? r : 0.42 * r;
    const double ang = -kPi / 2.0 + i * kPi / 5.0;
    d += (i == 0 ? "M" : "L");
    d += fmt(cx + rad * std::cos(ang));
    d += ",";
    d += fmt(cy + rad * std::sin(ang));
  }
  d += "Z";
  return d;
}

}  // namespace

void plot_scatter_svg(const LabeledData& points, const std::string& out_path) {
  if (points.n() == 0) throw DataError("plot_scatter_svg: no points");
  if (points.dim() != 2)
    throw DataError("plot_scatter_svg: features must be 2-D, got " +
                    std::to_string(points.dim()) + " columns");

  double xmin = points.X(0, 0), xmax = xmin, ymin = points.X(0, 1), ymax = ymin;
  for (int i = 0; i < points.n(); ++i) {
    xmin = std::min(xmin, points.X(i, 0));
    xmax = std::max(xmax, points.X(i, 0));
    ymin = std::min(ymin, points.X(i, 1));
    ymax = std::max(ymax, points.X(i, 1));
  }
  const double xspan = xmax - xmin, yspan = ymax - ymin;
  const double xpad = xspan > 0.0 ? 0.05 * xspan : 1.0;
  const double ypad = yspan > 0.0 ? 0.05 * yspan : 1.0;
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;
  const double sx = (kCanvas - 2.0 * kMargin) / (xmax - xmin);
  const double sy = (kCanvas - 2.0 * kMargin) / (ymax - ymin);
  auto px = [&](double x) { return kMargin + (x - xmin) * sx; };
  auto py = [&](double y) { return kCanvas - kMargin - (y - ymin) * sy; };  // y up

  std::ofstream out(out_path);
  if (!out) throw IoError("cannot open " + out_path + " for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kCanvas << "\" height=\""
      << kCanvas << "\" viewBox=\"0 0 " << kCanvas << " " << kCanvas << "\">\n";
  out << "<rect width=\"" << kCanvas << "\" height=\"" << kCanvas << "\" fill=\"white\"/>\n";

  // One group per class, in class order, points in dataset order.
  for (int k = 0; k < points.C; ++k) {
    const char* color = kPalette[static_cast<std::size_t>(k % 12)];
    out << "<g fill=\"" << color << "\" fill-opacity=\"0.55\" data-class=\"" << k << "\">\n";
    for (int i = 0; i < points.n(); ++i) {
      if (points.y[static_cast<std::size_t>(i)] != k) continue;
      out << "<circle cx=\"" << fmt(px(points.X(i, 0))) << "\" cy=\"" << fmt(py(points.X(i, 1)))
          << "\" r=\"3\"/>\n";
    }
    out << "</g>\n";
  }

  // Class means as star markers on top.
  for (int k = 0; k < points.C; ++k) {
    double mx = 0.0, my = 0.0;
    int count = 0;
    for (int i = 0; i < points.n(); ++i) {
      if (points.y[static_cast<std::size_t>(i)] != k) continue;
      mx += points.X(i, 0);
      my += points.X(i, 1);
      ++count;
    }
    if (count == 0) continue;
    mx /= count;
    my /= count;
    const char* color = kPalette[static_cast<std::size_t>(k % 12)];
    out << "<path class=\"mean-star\" d=\"" << star_path(px(mx), py(my), 9.0) << "\" fill=\""
        << color << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  }
  out << "</svg>\n";
  if (!out) throw IoError("failed while writing " + out_path);
}

}  // namespace ndlab
