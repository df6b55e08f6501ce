#include "ndlab/mat.hpp"

#include <cmath>

#include "ndlab/errors.hpp"

namespace ndlab {

namespace {

std::size_t checked_elems(int r, int c) {
  if (r < 0 || c < 0)
    throw ShapeError("Mat: negative dimension " + std::to_string(r) + "x" + std::to_string(c));
  return static_cast<std::size_t>(r) * static_cast<std::size_t>(c);
}

}  // namespace

Mat::Mat(int r, int c, double fill) : rows(r), cols(c), data(checked_elems(r, c), fill) {}

std::string Mat::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

void Mat::add(const Mat& o) {
  require_same_shape(*this, o, "Mat::add");
  for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
}

double Mat::row_norm(int i) const {
  double s = 0.0;
  const double* p = row_ptr(i);
  for (int j = 0; j < cols; ++j) s += p[j] * p[j];
  return std::sqrt(s);
}

bool Mat::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Mat& a, const Mat& b, const std::string& context) {
  if (!a.same_shape(b)) {
    throw ShapeError(context + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace ndlab
