#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ndlab/mat.hpp"

namespace ndlab {

struct LabeledData {
  Mat X{0, 0};
  std::vector<int> y;
  int C = 0;

  int n() const { return X.rows; }
  int dim() const { return X.cols; }
};

struct MixtureSpec {
  int C = 0;
  int D = 0;
  int n_per_class = 0;
  double separation = 0.0;  // radius of the sphere the class centers sit on
  double noise_std = 0.0;   // isotropic per-example Gaussian noise
  std::uint64_t seed = 0;

  void validate() const;
};

// C class centers drawn uniformly-at-random on a sphere of radius
// `separation`, then n_per_class examples per class with isotropic noise.
// Deterministic per seed. Split is stratified 80/20: the last fifth of each
// class's examples form the test split.
std::pair<LabeledData, LabeledData> make_mixture(const MixtureSpec& spec);

// Rows are "label,v_0,...,v_{D-1}" with no header by default; values are
// written so they reload bit-exactly.
void save_data_csv(const LabeledData& data, const std::string& path);
LabeledData load_data_csv(const std::string& path, bool skip_header = false,
                          int expect_classes = 0);

// Throws DataError when some class in [0,C) has no examples.
void require_all_classes(const LabeledData& data, const std::string& context);

}  // namespace ndlab
