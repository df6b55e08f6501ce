#include "ndlab/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ndlab/errors.hpp"

namespace ndlab {

namespace {

void check_labels(const std::vector<int>& labels, int n, int c, const char* who) {
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError(std::string(who) + ": " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  for (int y : labels)
    if (y < 0 || y >= c)
      throw DataError(std::string(who) + ": label " + std::to_string(y) + " outside [0," +
                      std::to_string(c) + ")");
}

// Distinct classes present in the batch (ascending) with their member rows in
// batch order. Feature losses average within each class, then across classes.
struct ClassGroups {
  std::vector<int> classes;
  std::vector<std::vector<int>> members;
};

ClassGroups group_by_class(const std::vector<int>& labels, int num_classes) {
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i)
    buckets[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  ClassGroups g;
  for (int k = 0; k < num_classes; ++k) {
    if (!buckets[static_cast<std::size_t>(k)].empty()) {
      g.classes.push_back(k);
      g.members.push_back(std::move(buckets[static_cast<std::size_t>(k)]));
    }
  }
  return g;
}

// Row-wise log softmax of Z/tau, numerically stable.
Mat log_softmax(const Mat& Z, double tau) {
  Mat L(Z.rows, Z.cols);
  for (int i = 0; i < Z.rows; ++i) {
    const double* zi = Z.row_ptr(i);
    double* li = L.row_ptr(i);
    double mx = zi[0];
    for (int j = 1; j < Z.cols; ++j) mx = std::max(mx, zi[j]);
    double denom = 0.0;
    for (int j = 0; j < Z.cols; ++j) {
      li[j] = (zi[j] - mx) / tau;
      denom += std::exp(li[j]);
    }
    const double lse = std::log(denom);
    for (int j = 0; j < Z.cols; ++j) li[j] -= lse;
  }
  return L;
}

}  // namespace

LossResult ce_loss(const Mat& logits, const std::vector<int>& labels) {
  check_labels(labels, logits.rows, logits.cols, "ce_loss");
  if (logits.rows == 0) throw DataError("ce_loss: empty batch");
  const int n = logits.rows;
  Mat logp = log_softmax(logits, 1.0);
  LossResult r;
  r.grad = Mat(logits.rows, logits.cols);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    sum += -logp(i, y);
    const double* lp = logp.row_ptr(i);
    double* g = r.grad.row_ptr(i);
    for (int j = 0; j < logits.cols; ++j) g[j] = std::exp(lp[j]) / n;
    g[y] -= 1.0 / n;
  }
  r.value = sum / n;
  return r;
}

LossResult kd_kl_loss(const Mat& z_s, const Mat& z_t, double tau) {
  require_same_shape(z_s, z_t, "kd_kl_loss");
  if (!(tau > 0.0)) throw ParamError("kd_kl_loss: tau must be > 0");
  if (z_s.rows == 0) throw DataError("kd_kl_loss: empty batch");
  const int n = z_s.rows;
  const int c = z_s.cols;
  Mat logq_s = log_softmax(z_s, tau);
  Mat logq_t = log_softmax(z_t, tau);
  LossResult r;
  r.grad = Mat(n, c);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* ls = logq_s.row_ptr(i);
    const double* lt = logq_t.row_ptr(i);
    double* g = r.grad.row_ptr(i);
    double row_kl = 0.0;
    for (int j = 0; j < c; ++j) {
      const double q_t = std::exp(lt[j]);
      const double q_s = std::exp(ls[j]);
      row_kl += q_t * (lt[j] - ls[j]);
      g[j] = tau / n * (q_s - q_t);
    }
    sum += std::max(row_kl, 0.0);  // KL >= 0; guard rounding at equality
  }
  r.value = tau * tau * sum / n;
  return r;
}

LossResult l2_feature_loss(const Mat& F_s, const Mat& F_t, const std::vector<int>& labels) {
  require_same_shape(F_s, F_t, "l2_feature_loss");
  if (F_s.rows == 0) throw DataError("l2_feature_loss: empty batch");
  // Labels only need to be non-negative; infer the class space from them.
  int c_hi = 0;
  for (int y : labels) c_hi = std::max(c_hi, y + 1);
  check_labels(labels, F_s.rows, c_hi, "l2_feature_loss");
  ClassGroups g = group_by_class(labels, c_hi);
  const double c_present = static_cast<double>(g.classes.size());
  LossResult r;
  r.grad = Mat(F_s.rows, F_s.cols);
  double total = 0.0;
  for (std::size_t ci = 0; ci < g.classes.size(); ++ci) {
    const auto& members = g.members[ci];
    const double w = 1.0 / (c_present * static_cast<double>(members.size()));
    double class_sum = 0.0;
    for (int i : members) {
      const double* fs = F_s.row_ptr(i);
      const double* ft = F_t.row_ptr(i);
      double* gr = r.grad.row_ptr(i);
      double d2 = 0.0;
      for (int j = 0; j < F_s.cols; ++j) {
        const double diff = fs[j] - ft[j];
        d2 += diff * diff;
        gr[j] = w * 2.0 * diff;
      }
      class_sum += d2;
    }
    total += class_sum / static_cast<double>(members.size());
  }
  r.value = total / c_present;
  return r;
}

LossResult sifn_loss(const std::vector<double>& norm_prev, const Mat& F_s, double r_step) {
  if (!(r_step > 0.0)) throw ParamError("sifn_loss: r must be > 0");
  if (static_cast<int>(norm_prev.size()) != F_s.rows)
    throw ShapeError("sifn_loss: " + std::to_string(norm_prev.size()) + " cached norms for " +
                     std::to_string(F_s.rows) + " rows");
  if (F_s.rows == 0) throw DataError("sifn_loss: empty batch");
  for (double p : norm_prev)
    if (p < 0.0) throw DataError("sifn_loss: negative cached norm");
  const int n = F_s.rows;
  LossResult r;
  r.grad = Mat(F_s.rows, F_s.cols);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double cur = F_s.row_norm(i);
    const double gap = norm_prev[static_cast<std::size_t>(i)] + r_step - cur;
    sum += gap * gap;
    if (cur > 0.0) {
      const double scale = -2.0 * gap / (cur * n);
      const double* fs = F_s.row_ptr(i);
      double* gr = r.grad.row_ptr(i);
      for (int j = 0; j < F_s.cols; ++j) gr[j] = scale * fs[j];
    }
  }
  r.value = sum / n;
  return r;
}

namespace {

void check_table(const ClassMeanTable& table, const Mat& F_s, const char* who) {
  if (table.unit_dirs.cols != F_s.cols)
    throw ShapeError(std::string(who) + ": features are " + F_s.shape_str() +
                     " but class means are " + table.unit_dirs.shape_str());
}

}  // namespace

LossResult cosine_direction_loss(const Mat& F_s, const ClassMeanTable& table,
                                 const std::vector<int>& labels) {
  check_table(table, F_s, "cosine_direction_loss");
  check_labels(labels, F_s.rows, table.unit_dirs.rows, "cosine_direction_loss");
  if (F_s.rows == 0) throw DataError("cosine_direction_loss: empty batch");
  ClassGroups g = group_by_class(labels, table.unit_dirs.rows);
  const double c_present = static_cast<double>(g.classes.size());
  LossResult r;
  r.grad = Mat(F_s.rows, F_s.cols);
  double total = 0.0;
  for (std::size_t ci = 0; ci < g.classes.size(); ++ci) {
    const int k = g.classes[ci];
    const auto& members = g.members[ci];
    const double w = 1.0 / (c_present * static_cast<double>(members.size()));
    const double* e = table.unit_dirs.row_ptr(k);
    double class_sum = 0.0;
    for (int i : members) {
      const double* f = F_s.row_ptr(i);
      const double norm = F_s.row_norm(i);
      if (norm == 0.0)
        throw SingularityError("cosine_direction_loss: zero-norm feature at example " +
                               std::to_string(i));
      double dot = 0.0;
      for (int j = 0; j < F_s.cols; ++j) dot += f[j] * e[j];
      const double cosv = dot / norm;
      class_sum += 1.0 - cosv;
      double* gr = r.grad.row_ptr(i);
      // d(1 - cos)/df = -(e/||f|| - (f.e) f/||f||^3)
      for (int j = 0; j < F_s.cols; ++j)
        gr[j] = -w * (e[j] / norm - dot * f[j] / (norm * norm * norm));
    }
    total += class_sum / static_cast<double>(members.size());
  }
  r.value = total / c_present;
  return r;
}

LossResult infonce_direction_loss(const Mat& F_s, const ClassMeanTable& table,
                                  const std::vector<int>& labels) {
  check_table(table, F_s, "infonce_direction_loss");
  check_labels(labels, F_s.rows, table.unit_dirs.rows, "infonce_direction_loss");
  if (F_s.rows == 0) throw DataError("infonce_direction_loss: empty batch");
  const int c = table.unit_dirs.rows;
  ClassGroups g = group_by_class(labels, c);
  const double c_present = static_cast<double>(g.classes.size());
  LossResult r;
  r.grad = Mat(F_s.rows, F_s.cols);
  double total = 0.0;
  std::vector<double> cosv(static_cast<std::size_t>(c));
  std::vector<double> p(static_cast<std::size_t>(c));
  for (std::size_t ci = 0; ci < g.classes.size(); ++ci) {
    const int y = g.classes[ci];
    const auto& members = g.members[ci];
    const double w = 1.0 / (c_present * static_cast<double>(members.size()));
    double class_sum = 0.0;
    for (int i : members) {
      const double* f = F_s.row_ptr(i);
      const double norm = F_s.row_norm(i);
      if (norm == 0.0)
        throw SingularityError("infonce_direction_loss: zero-norm feature at example " +
                               std::to_string(i));
      double denom = 0.0;
      for (int k = 0; k < c; ++k) {
        const double* e = table.unit_dirs.row_ptr(k);
        double dot = 0.0;
        for (int j = 0; j < F_s.cols; ++j) dot += f[j] * e[j];
        cosv[static_cast<std::size_t>(k)] = dot / norm;
        p[static_cast<std::size_t>(k)] = std::exp(cosv[static_cast<std::size_t>(k)]);
        denom += p[static_cast<std::size_t>(k)];
      }
      class_sum += -cosv[static_cast<std::size_t>(y)] + std::log(denom);
      double* gr = r.grad.row_ptr(i);
      for (int k = 0; k < c; ++k) {
        const double coeff = w * (p[static_cast<std::size_t>(k)] / denom - (k == y ? 1.0 : 0.0));
        const double* e = table.unit_dirs.row_ptr(k);
        // d cos(f, e_k)/df = e_k/||f|| - cos_k f/||f||^2
        for (int j = 0; j < F_s.cols; ++j)
          gr[j] += coeff * (e[j] / norm -
                            cosv[static_cast<std::size_t>(k)] * f[j] / (norm * norm));
      }
    }
    total += class_sum / static_cast<double>(members.size());
  }
  r.value = total / c_present;
  return r;
}

NdResult nd_loss(const Mat& F_s, const std::vector<double>& cache_norms,
                 const ClassMeanTable& table, const std::vector<int>& labels, double m) {
  check_table(table, F_s, "nd_loss");
  check_labels(labels, F_s.rows, table.unit_dirs.rows, "nd_loss");
  if (F_s.rows == 0) throw DataError("nd_loss: empty batch");
  if (!(m > -1.0)) throw ParamError("nd_loss: m must be > -1");
  if (static_cast<int>(cache_norms.size()) != F_s.rows)
    throw ShapeError("nd_loss: " + std::to_string(cache_norms.size()) +
                     " teacher norms for " + std::to_string(F_s.rows) + " rows");
  const int n = F_s.rows;
  const int d = F_s.cols;
  ClassGroups g = group_by_class(labels, table.unit_dirs.rows);
  const double c_present = static_cast<double>(g.classes.size());
  NdResult r;
  r.grad = Mat(n, d);
  r.diag.cosine.assign(static_cast<std::size_t>(n), 0.0);
  r.diag.proj_norm.assign(static_cast<std::size_t>(n), 0.0);
  r.diag.teacher_norm.assign(static_cast<std::size_t>(n), 0.0);
  r.diag.regime.assign(static_cast<std::size_t>(n), NdRegime::small_norm);
  double total = 0.0;
  for (std::size_t ci = 0; ci < g.classes.size(); ++ci) {
    const int k = g.classes[ci];
    const auto& members = g.members[ci];
    const double w = 1.0 / (c_present * static_cast<double>(members.size()));
    const double* e = table.unit_dirs.row_ptr(k);
    double class_sum = 0.0;
    for (int i : members) {
      const std::size_t ii = static_cast<std::size_t>(i);
      const double t_norm = cache_norms[ii];
      if (!(t_norm > 0.0))
        throw DataError("nd_loss: non-positive teacher norm at example " + std::to_string(i));
      const double t_scaled = t_norm * (1.0 + m);
      const double* f = F_s.row_ptr(i);
      const double s_norm = F_s.row_norm(i);
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += f[j] * e[j];
      r.diag.proj_norm[ii] = dot;
      r.diag.teacher_norm[ii] = t_scaled;
      r.diag.cosine[ii] = s_norm > 0.0 ? dot / s_norm : 0.0;
      r.diag.regime[ii] = s_norm >= t_scaled ? NdRegime::large_norm : NdRegime::small_norm;
      double* gr = r.grad.row_ptr(i);
      if (s_norm > t_scaled) {
        // Student norm wins the max: value -(f.e)/||f||; the gradient
        // -e/||f|| + (f.e) f/||f||^3 is orthogonal to f.
        class_sum += -(dot / s_norm);
        const double inv = 1.0 / s_norm;
        const double inv3 = inv / (s_norm * s_norm);
        for (int j = 0; j < d; ++j) gr[j] = w * (-(e[j] * inv) + dot * f[j] * inv3);
      } else {
        // Teacher branch (also taken at exact equality): constant pull -e/denom.
        class_sum += -(dot / t_scaled);
        for (int j = 0; j < d; ++j) gr[j] = w * (-(e[j] / t_scaled));
      }
    }
    total += class_sum / static_cast<double>(members.size());
  }
  r.value = total / c_present;
  return r;
}

std::string to_string(KdVariant v) { return v == KdVariant::none ? "none" : "kl"; }

std::string to_string(RegVariant v) {
  switch (v) {
    case RegVariant::none: return "none";
    case RegVariant::l2: return "l2";
    case RegVariant::sifn: return "sifn";
    case RegVariant::cosine: return "cosine";
    case RegVariant::infonce: return "infonce";
    case RegVariant::nd: return "nd";
    case RegVariant::cosine_l2: return "cosine_l2";
    case RegVariant::cosine_sifn: return "cosine_sifn";
    case RegVariant::infonce_l2: return "infonce_l2";
    case RegVariant::infonce_sifn: return "infonce_sifn";
  }
  throw ParamError("to_string: bad RegVariant");
}

KdVariant kd_variant_from_string(const std::string& s) {
  if (s == "none") return KdVariant::none;
  if (s == "kl") return KdVariant::kl;
  throw ConfigError("unknown kd variant '" + s + "'");
}

RegVariant reg_variant_from_string(const std::string& s) {
  for (RegVariant v : {RegVariant::none, RegVariant::l2, RegVariant::sifn, RegVariant::cosine,
                       RegVariant::infonce, RegVariant::nd, RegVariant::cosine_l2,
                       RegVariant::cosine_sifn, RegVariant::infonce_l2,
                       RegVariant::infonce_sifn}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown reg variant '" + s + "'");
}

bool reg_uses_sifn(RegVariant v) {
  return v == RegVariant::sifn || v == RegVariant::cosine_sifn ||
         v == RegVariant::infonce_sifn;
}

bool reg_uses_class_means(RegVariant v) {
  return v == RegVariant::cosine || v == RegVariant::infonce || v == RegVariant::nd ||
         v == RegVariant::cosine_l2 || v == RegVariant::cosine_sifn ||
         v == RegVariant::infonce_l2 || v == RegVariant::infonce_sifn;
}

void DistillConfig::validate() const {
  if (ce_weight < 0.0) throw ConfigError("DistillConfig: ce_weight must be >= 0");
  if (alpha < 0.0) throw ConfigError("DistillConfig: alpha must be >= 0");
  if (beta < 0.0) throw ConfigError("DistillConfig: beta must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("DistillConfig: tau must be > 0");
  if (!(m > -1.0)) throw ConfigError("DistillConfig: m must be > -1");
  if (!(sifn_r > 0.0)) throw ConfigError("DistillConfig: sifn_r must be > 0");
  if (kd_warmup_epochs < 0) throw ConfigError("DistillConfig: kd_warmup_epochs must be >= 0");
}

double kd_warmup_weight(int epoch, int kd_warmup_epochs) {
  if (epoch < 0) throw ParamError("kd_warmup_weight: epoch must be >= 0");
  if (kd_warmup_epochs <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch + 1) / kd_warmup_epochs);
}

double total_objective(double ce, double kd, double reg, const DistillConfig& cfg, int epoch) {
  return cfg.ce_weight * ce + kd_warmup_weight(epoch, cfg.kd_warmup_epochs) * cfg.alpha * kd +
         cfg.beta * reg;
}

}  // namespace ndlab
