#pragma once

#include <string>
#include <vector>

#include "ndlab/datagen.hpp"
#include "ndlab/mat.hpp"
#include "ndlab/mlp.hpp"

namespace ndlab {

enum class MeanStrategy { all, teacher_correct };

std::string to_string(MeanStrategy s);
MeanStrategy mean_strategy_from_string(const std::string& s);

struct TeacherCache {
  Mat embeddings{0, 0};          // f_t per training example
  std::vector<double> norms;     // per-example embedding L2 norm
  std::vector<int> predictions;  // argmax of teacher logits
  std::vector<int> labels;
};

struct ClassMeanTable {
  Mat means{0, 0};      // C x D
  Mat unit_dirs{0, 0};  // C x D, rows normalized to unit length
  std::vector<int> counts;
  MeanStrategy strategy = MeanStrategy::all;
};

// Eval-mode forward over the whole dataset.
TeacherCache extract_teacher_cache(const ParamStore& teacher, const MLPSpec& spec,
                                   const LabeledData& data);

// Arithmetic mean of the selected teacher embeddings per class. Summation is
// done over the per-class list sorted by value, so the table is identical
// under any dataset permutation (bitwise, not just within tolerance).
ClassMeanTable build_class_means(const TeacherCache& cache, int num_classes,
                                 MeanStrategy strategy);

// Header: class,count,dim_0..dim_{D-1}; one row per class (means).
void save_class_means_csv(const ClassMeanTable& table, const std::string& path);

}  // namespace ndlab
