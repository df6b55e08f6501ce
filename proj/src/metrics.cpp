#include "ndlab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "ndlab/errors.hpp"

namespace ndlab {

double top1(const Mat& logits, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != logits.rows)
    throw ShapeError("top1: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows) + " rows");
  if (logits.rows == 0) throw DataError("top1: empty batch");
  int correct = 0;
  for (int i = 0; i < logits.rows; ++i) {
    const double* row = logits.row_ptr(i);
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (row[j] > row[best]) best = j;
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / logits.rows;
}

NormStats norm_stats(const Mat& F) {
  if (F.rows < 1) throw DataError("norm_stats: empty batch");
  NormStats s;
  std::vector<double> norms;
  norms.reserve(static_cast<std::size_t>(F.rows));
  for (int i = 0; i < F.rows; ++i) norms.push_back(F.row_norm(i));
  s.min = *std::min_element(norms.begin(), norms.end());
  s.max = *std::max_element(norms.begin(), norms.end());
  double sum = 0.0;
  for (double v : norms) sum += v;
  s.mean = sum / F.rows;
  double sq = 0.0;
  for (double v : norms) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / F.rows);
  return s;
}

double mean_angle_deg(const Mat& F, const ClassMeanTable& table,
                      const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != F.rows)
    throw ShapeError("mean_angle_deg: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(F.rows) + " rows");
  if (F.rows == 0) throw DataError("mean_angle_deg: empty batch");
  if (table.unit_dirs.cols != F.cols)
    throw ShapeError("mean_angle_deg: features are " + F.shape_str() + " but class means are " +
                     table.unit_dirs.shape_str());
  constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;
  double sum = 0.0;
  for (int i = 0; i < F.rows; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= table.unit_dirs.rows)
      throw DataError("mean_angle_deg: label " + std::to_string(y) + " outside [0," +
                      std::to_string(table.unit_dirs.rows) + ")");
    const double norm = F.row_norm(i);
    // A zero feature has no direction; count it as orthogonal (90 degrees),
    // matching the cosine convention of the norm-direction loss. This happens
    // transiently at init when a row's relus are all dead.
    const double* f = F.row_ptr(i);
    const double* e = table.unit_dirs.row_ptr(y);
    double dot = 0.0;
    for (int j = 0; j < F.cols; ++j) dot += f[j] * e[j];
    const double cosv = norm > 0.0 ? std::clamp(dot / norm, -1.0, 1.0) : 0.0;
    sum += std::acos(cosv) * kRadToDeg;
  }
  return sum / F.rows;
}

}  // namespace ndlab
