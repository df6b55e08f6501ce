#pragma once

#include <string>
#include <vector>

namespace ndlab {

// Dense row-major matrix of doubles; the universal batch container
// (rows = examples). All computation in this project is double precision.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0);

  double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

  double* row_ptr(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
  const double* row_ptr(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const;

  // Element-wise accumulate: *this += o. Shapes must match.
  void add(const Mat& o);

  // L2 norm of one row.
  double row_norm(int i) const;

  bool all_finite() const;
  bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && data == o.data; }
};

// Throws ShapeError naming both shapes when a and b differ.
void require_same_shape(const Mat& a, const Mat& b, const std::string& context);

}  // namespace ndlab
