#include "ndlab/class_means.hpp"

#include <algorithm>
#include <cmath>

#include "ndlab/csvio.hpp"
#include "ndlab/errors.hpp"

namespace ndlab {

std::string to_string(MeanStrategy s) {
  return s == MeanStrategy::all ? "all" : "teacher_correct";
}

MeanStrategy mean_strategy_from_string(const std::string& s) {
  if (s == "all") return MeanStrategy::all;
  if (s == "teacher_correct") return MeanStrategy::teacher_correct;
  throw ConfigError("unknown class-mean strategy '" + s + "'");
}

TeacherCache extract_teacher_cache(const ParamStore& teacher, const MLPSpec& spec,
                                   const LabeledData& data) {
  if (data.n() == 0) throw DataError("extract_teacher_cache: empty dataset");
  TeacherCache cache;
  cache.embeddings = forward_features(teacher, spec, data.X);
  cache.labels = data.y;
  cache.norms.reserve(static_cast<std::size_t>(data.n()));
  for (int i = 0; i < data.n(); ++i) cache.norms.push_back(cache.embeddings.row_norm(i));
  Mat logits = forward_logits(teacher, spec, cache.embeddings);
  cache.predictions.reserve(static_cast<std::size_t>(data.n()));
  for (int i = 0; i < logits.rows; ++i) {
    const double* row = logits.row_ptr(i);
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (row[j] > row[best]) best = j;
    cache.predictions.push_back(best);
  }
  return cache;
}

ClassMeanTable build_class_means(const TeacherCache& cache, int num_classes,
                                 MeanStrategy strategy) {
  if (num_classes < 1) throw ParamError("build_class_means: num_classes must be >= 1");
  const int n = cache.embeddings.rows;
  const int d = cache.embeddings.cols;
  ClassMeanTable table;
  table.strategy = strategy;
  table.means = Mat(num_classes, d);
  table.unit_dirs = Mat(num_classes, d);
  table.counts.assign(static_cast<std::size_t>(num_classes), 0);

  std::vector<std::vector<int>> selected(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < n; ++i) {
    const int k = cache.labels[static_cast<std::size_t>(i)];
    if (k < 0 || k >= num_classes)
      throw DataError("build_class_means: label " + std::to_string(k) + " outside [0," +
                      std::to_string(num_classes) + ")");
    if (strategy == MeanStrategy::teacher_correct &&
        cache.predictions[static_cast<std::size_t>(i)] != k)
      continue;
    selected[static_cast<std::size_t>(k)].push_back(i);
  }

  std::vector<double> column;
  for (int k = 0; k < num_classes; ++k) {
    const auto& idx = selected[static_cast<std::size_t>(k)];
    if (idx.empty())
      throw DataError("build_class_means: class " + std::to_string(k) +
                      " has no selected examples under strategy " + to_string(strategy));
    table.counts[static_cast<std::size_t>(k)] = static_cast<int>(idx.size());
    for (int j = 0; j < d; ++j) {
      column.clear();
      for (int i : idx) column.push_back(cache.embeddings(i, j));
      // Sort before summing so the result does not depend on dataset order.
      std::sort(column.begin(), column.end());
      double s = 0.0;
      for (double v : column) s += v;
      table.means(k, j) = s / static_cast<double>(idx.size());
    }
    const double norm = table.means.row_norm(k);
    if (norm == 0.0)
      throw SingularityError("build_class_means: class " + std::to_string(k) +
                             " has a zero mean vector; no unit direction exists");
    for (int j = 0; j < d; ++j) table.unit_dirs(k, j) = table.means(k, j) / norm;
  }
  return table;
}

void save_class_means_csv(const ClassMeanTable& table, const std::string& path) {
  CsvTable t;
  t.header = {"class", "count"};
  for (int j = 0; j < table.means.cols; ++j) t.header.push_back("dim_" + std::to_string(j));
  for (int k = 0; k < table.means.rows; ++k) {
    std::vector<std::string> row;
    row.push_back(std::to_string(k));
    row.push_back(std::to_string(table.counts[static_cast<std::size_t>(k)]));
    for (int j = 0; j < table.means.cols; ++j)
      row.push_back(format_double(table.means(k, j)));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

}  // namespace ndlab
