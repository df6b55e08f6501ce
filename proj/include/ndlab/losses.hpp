#pragma once

#include <string>
#include <vector>

#include "ndlab/class_means.hpp"
#include "ndlab/mat.hpp"

namespace ndlab {

struct LossResult {
  double value = 0.0;
  Mat grad{0, 0};  // w.r.t. the student-side input
};

// Mean over the batch of -log softmax(logits)[label]; grad = (softmax - onehot)/N.
LossResult ce_loss(const Mat& logits, const std::vector<int>& labels);

// tau^2 * mean over the batch of KL(softmax(z_t/tau) || softmax(z_s/tau)).
// The tau^2 factor keeps gradient magnitude temperature-invariant; teacher
// logits are constants.
LossResult kd_kl_loss(const Mat& z_s, const Mat& z_t, double tau);

// Class-balanced double average of ||f_s - f_t||^2: classes present in the
// batch each contribute their within-class mean, then the class contributions
// are averaged. F_t is constant.
LossResult l2_feature_loss(const Mat& F_s, const Mat& F_t, const std::vector<int>& labels);

// Norm-expansion penalty: (1/N) sum (norm_prev_i + r - ||f_s_i||)^2 with
// norm_prev detached. The subgradient at ||f_s_i|| = 0 is taken as 0.
LossResult sifn_loss(const std::vector<double>& norm_prev, const Mat& F_s, double r);

// Class-balanced average of 1 - cos(f_s_i, c_{y_i}).
LossResult cosine_direction_loss(const Mat& F_s, const ClassMeanTable& table,
                                 const std::vector<int>& labels);

// Class-balanced average of -log softmax over cosines to every class mean,
// indexed at the true class. No temperature on the cosines.
LossResult infonce_direction_loss(const Mat& F_s, const ClassMeanTable& table,
                                  const std::vector<int>& labels);

enum class NdRegime { small_norm, large_norm };

struct NdDiagnostics {
  std::vector<double> cosine;        // cos(f_s_i, c_{y_i}); 0 when ||f_s_i|| = 0
  std::vector<double> proj_norm;     // signed projection f_s_i . e_{y_i}
  std::vector<double> teacher_norm;  // ||f_t_i|| * (1+m)
  std::vector<NdRegime> regime;      // large_norm iff ||f_s_i|| >= teacher_norm
};

struct NdResult {
  double value = 0.0;
  Mat grad{0, 0};
  NdDiagnostics diag;
};

// Class-balanced average of -(f_s_i . e_{y_i}) / max{||f_s_i||, ||f_t_i||*(1+m)}.
// Unit directions and teacher norms are constants. The gradient flows through
// f_s in the numerator and, when the student norm wins the max, the
// denominator too (making it orthogonal to f_s there). At exact norm equality
// the teacher-norm branch is used: grad contribution = -e / (||f_t||*(1+m)).
NdResult nd_loss(const Mat& F_s, const std::vector<double>& cache_norms,
                 const ClassMeanTable& table, const std::vector<int>& labels, double m);

enum class KdVariant { none, kl };
enum class RegVariant {
  none,
  l2,
  sifn,
  cosine,
  infonce,
  nd,
  // Pairings used in the combination studies; beta is split equally.
  cosine_l2,
  cosine_sifn,
  infonce_l2,
  infonce_sifn,
};

std::string to_string(KdVariant v);
std::string to_string(RegVariant v);
KdVariant kd_variant_from_string(const std::string& s);
RegVariant reg_variant_from_string(const std::string& s);
bool reg_uses_sifn(RegVariant v);
bool reg_uses_class_means(RegVariant v);

struct DistillConfig {
  double ce_weight = 1.0;  // weight of the CE term (0 drops supervised loss)
  double alpha = 1.0;      // weight of the logit-distillation term
  double beta = 1.0;       // weight of the feature regularizer
  double tau = 4.0;        // softmax temperature for the KD term
  double m = 0.0;          // teacher-norm scaling; threshold is ||f_t||*(1+m)
  KdVariant kd_variant = KdVariant::kl;
  RegVariant reg_variant = RegVariant::nd;
  double sifn_r = 0.5;         // per-step target norm increase
  int kd_warmup_epochs = 0;    // linear ramp on the KD weight; 0 = off

  void validate() const;
};

// min(1, (epoch+1)/kd_warmup_epochs); 1 when warmup is disabled.
double kd_warmup_weight(int epoch, int kd_warmup_epochs);

// ce_weight*ce + warmup(epoch)*alpha*kd + beta*reg.
double total_objective(double ce, double kd, double reg, const DistillConfig& cfg, int epoch);

}  // namespace ndlab
