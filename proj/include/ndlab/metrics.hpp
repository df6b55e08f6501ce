#pragma once

#include <vector>

#include "ndlab/class_means.hpp"
#include "ndlab/mat.hpp"

namespace ndlab {

// Fraction of rows whose argmax matches the label; ties break to the lowest
// class index.
double top1(const Mat& logits, const std::vector<int>& labels);

struct NormStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  double min = 0.0;
  double max = 0.0;
};

NormStats norm_stats(const Mat& F);

// Mean over examples of the angle (degrees) between f_i and its class mean.
// Cosines are clamped to [-1, 1] before arccos; a zero-norm feature counts as
// orthogonal (90 degrees) since it has no direction.
double mean_angle_deg(const Mat& F, const ClassMeanTable& table, const std::vector<int>& labels);

}  // namespace ndlab
