#include "ndlab/datagen.hpp"

#include <cmath>
#include <fstream>

#include "ndlab/csvio.hpp"
#include "ndlab/errors.hpp"
#include "ndlab/rng.hpp"

namespace ndlab {

void MixtureSpec::validate() const {
  if (C < 1) throw ParamError("MixtureSpec: C must be >= 1");
  if (D < 1) throw ParamError("MixtureSpec: D must be >= 1");
  if (n_per_class < 1) throw ParamError("MixtureSpec: n_per_class must be >= 1");
  if (separation < 0.0) throw ParamError("MixtureSpec: separation must be >= 0");
  if (!(noise_std > 0.0)) throw ParamError("MixtureSpec: noise_std must be > 0");
}

std::pair<LabeledData, LabeledData> make_mixture(const MixtureSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  // Centers: normalized Gaussian directions scaled to the sphere radius.
  Mat centers(spec.C, spec.D);
  for (int k = 0; k < spec.C; ++k) {
    double* c = centers.row_ptr(k);
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (int j = 0; j < spec.D; ++j) {
        c[j] = rng.next_normal();
        norm2 += c[j] * c[j];
      }
    } while (norm2 == 0.0);
    const double scale = spec.separation / std::sqrt(norm2);
    for (int j = 0; j < spec.D; ++j) c[j] *= scale;
  }

  const int n_test_per_class = spec.n_per_class / 5;
  const int n_train_per_class = spec.n_per_class - n_test_per_class;
  LabeledData train, test;
  train.C = test.C = spec.C;
  train.X = Mat(spec.C * n_train_per_class, spec.D);
  test.X = Mat(spec.C * n_test_per_class, spec.D);
  train.y.reserve(train.X.rows);
  test.y.reserve(test.X.rows);

  int ti = 0, si = 0;
  for (int k = 0; k < spec.C; ++k) {
    const double* c = centers.row_ptr(k);
    for (int e = 0; e < spec.n_per_class; ++e) {
      const bool is_test = e >= n_train_per_class;
      double* row = is_test ? test.X.row_ptr(si) : train.X.row_ptr(ti);
      for (int j = 0; j < spec.D; ++j) row[j] = c[j] + spec.noise_std * rng.next_normal();
      if (is_test) {
        test.y.push_back(k);
        ++si;
      } else {
        train.y.push_back(k);
        ++ti;
      }
    }
  }
  return {std::move(train), std::move(test)};
}

void save_data_csv(const LabeledData& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (int i = 0; i < data.n(); ++i) {
    out << data.y[static_cast<std::size_t>(i)];
    const double* row = data.X.row_ptr(i);
    for (int j = 0; j < data.dim(); ++j) out << ',' << format_double(row[j]);
    out << '\n';
  }
  if (!out) throw IoError("failed while writing " + path);
}

LabeledData load_data_csv(const std::string& path, bool skip_header, int expect_classes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::string line;
  std::size_t lineno = 0;
  if (skip_header) {
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    ++lineno;
  }
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> linenos;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
    linenos.push_back(lineno);
  }
  if (rows.empty()) throw DataError(path + ": no data rows");
  const std::size_t width = rows.front().size();
  if (width < 2)
    throw DataError(path + ":" + std::to_string(linenos.front()) +
                    ": need a label plus at least one feature");
  LabeledData data;
  data.X = Mat(static_cast<int>(rows.size()), static_cast<int>(width - 1));
  data.y.reserve(rows.size());
  int max_label = -1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& fields = rows[i];
    const std::string where = path + ":" + std::to_string(linenos[i]);
    if (fields.size() != width)
      throw DataError(where + ": expected " + std::to_string(width) + " fields, got " +
                      std::to_string(fields.size()));
    const long label = parse_long_strict(fields[0], where);
    if (label < 0) throw DataError(where + ": negative class label " + fields[0]);
    data.y.push_back(static_cast<int>(label));
    max_label = std::max(max_label, static_cast<int>(label));
    double* row = data.X.row_ptr(static_cast<int>(i));
    for (std::size_t j = 1; j < width; ++j)
      row[j - 1] = parse_double_strict(fields[j], where);
  }
  data.C = expect_classes > 0 ? expect_classes : max_label + 1;
  if (max_label >= data.C)
    throw DataError(path + ": label " + std::to_string(max_label) + " outside [0," +
                    std::to_string(data.C) + ")");
  if (!data.X.all_finite()) throw DataError(path + ": non-finite feature value");
  return data;
}

void require_all_classes(const LabeledData& data, const std::string& context) {
  std::vector<int> counts(static_cast<std::size_t>(data.C), 0);
  for (int label : data.y) ++counts[static_cast<std::size_t>(label)];
  for (int k = 0; k < data.C; ++k)
    if (counts[static_cast<std::size_t>(k)] == 0)
      throw DataError(context + ": class " + std::to_string(k) + " has no examples");
}

}  // namespace ndlab
