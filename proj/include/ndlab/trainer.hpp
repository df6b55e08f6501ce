#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndlab/class_means.hpp"
#include "ndlab/datagen.hpp"
#include "ndlab/losses.hpp"
#include "ndlab/mlp.hpp"
#include "ndlab/params.hpp"

namespace ndlab {

struct TrainConfig {
  int epochs = 0;
  int batch_size = 64;
  double lr_initial = 0.1;
  std::vector<int> lr_milestones;
  double lr_decay = 0.1;
  int lr_warmup_epochs = 0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  bool record_timing = true;  // cleared by --no-timing for reproducible bytes

  void validate() const;
};

// Linear ramp to lr_initial over the warmup epochs, then piecewise-constant
// with a lr_decay factor applied at each milestone.
double lr_at(const TrainConfig& cfg, int epoch);

// Momentum-SGD with coupled weight decay:
//   v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v.
// Applies to trainable entries only; running stats are never touched.
class Sgd {
 public:
  explicit Sgd(const ParamStore& params);
  void step(ParamStore& params, double lr, double momentum, double weight_decay);

 private:
  std::vector<Mat> velocity_;
};

struct MetricsRecord {
  int epoch = 0;
  std::string split;  // "train" or "test"
  double loss_ce = 0.0;
  double loss_kd = 0.0;
  double loss_reg = 0.0;
  double loss_total = 0.0;
  double top1 = 0.0;
  double mean_norm = 0.0;
  double mean_angle_deg = 0.0;
  double lr = 0.0;
  double seconds_per_iter = 0.0;
};

// Header: epoch,split,loss_ce,loss_kd,loss_reg,loss_total,top1,mean_norm,
// mean_angle_deg,lr,seconds_per_iter.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& history);

struct TrainResult {
  ParamStore params;
  std::vector<MetricsRecord> history;
};

// Plain CE training (the teacher recipe; also used for CE-only students).
TrainResult train_teacher(const MLPSpec& spec, const LabeledData& train,
                          const LabeledData& test, const TrainConfig& cfg);

struct SifnStateView {
  std::vector<double> norms;  // per-training-example cached detached norms
};

struct DistillResult {
  ParamStore student;
  ParamStore adapter;  // empty unless has_adapter
  bool has_adapter = false;
  std::vector<MetricsRecord> history;
  SifnStateView final_sifn;  // empty unless a norm-expansion term was active
};

// Student training against a frozen teacher. The class-mean table and teacher
// cache must come from this teacher and training set. With alpha=0, beta=0 the
// parameter trajectory is bit-identical to train_teacher on the student spec.
DistillResult distill(const ParamStore& teacher, const MLPSpec& teacher_spec,
                      const MLPSpec& student_spec, const LabeledData& train,
                      const LabeledData& test, const TrainConfig& cfg,
                      const DistillConfig& dcfg, const ClassMeanTable& means,
                      const TeacherCache& cache);

}  // namespace ndlab
