#pragma once

#include <string>

#include "ndlab/datagen.hpp"

namespace ndlab {

// Scatter plot of 2-D features, one color per class, each class mean drawn as
// a star marker. Fixed canvas; output bytes are a pure function of the input.
void plot_scatter_svg(const LabeledData& points, const std::string& out_path);

}  // namespace ndlab
