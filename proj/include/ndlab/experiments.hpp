#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ndlab/class_means.hpp"
#include "ndlab/datagen.hpp"
#include "ndlab/gradcheck.hpp"
#include "ndlab/losses.hpp"
#include "ndlab/trainer.hpp"

namespace ndlab {

struct DataConfig {
  // Either a synthetic mixture or a pair of CSV files.
  bool from_csv = false;
  MixtureSpec mixture{10, 16, 200, 10.0, 0.5, 7};
  std::string train_path;
  std::string test_path;
  int csv_classes = 0;  // 0 = infer from labels
};

struct ModelConfig {
  MLPSpec spec;
  TrainConfig train;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig teacher;
  ModelConfig student;
  DistillConfig distill;
  MeanStrategy means_strategy = MeanStrategy::all;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string out_dir = "out";
};

// The shipped desk-scale recipe.
ExperimentConfig default_experiment_config();

// Strict JSON loader: unknown keys anywhere are hard errors; absent keys keep
// the defaults above. The schema is documented in the README.
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& origin);

// Data + trained teacher + frozen class-mean table, shared by every protocol.
struct StudyContext {
  ExperimentConfig cfg;
  LabeledData train;
  LabeledData test;
  ParamStore teacher;
  std::vector<MetricsRecord> teacher_history;
  TeacherCache cache;
  ClassMeanTable means;
};

StudyContext prepare_study(const ExperimentConfig& cfg);

// One student run with the study's distill settings and the given seed.
DistillResult run_distill_seed(const StudyContext& ctx, const DistillConfig& dcfg,
                               std::uint64_t seed);

// Final-epoch summary of one run: test top-1, train-split feature norm and
// angle to class means.
struct RunSummary {
  double top1 = 0.0;
  double mean_norm = 0.0;
  double mean_angle_deg = 0.0;
};
RunSummary summarize_run(const std::vector<MetricsRecord>& history);

struct NamedGradCheck {
  std::string name;
  GradCheckReport report;
};

// Finite-difference checks for every loss and net primitive on fixed-seed toy
// instances. inject_fault corrupts one analytic gradient (test hook).
std::vector<NamedGradCheck> run_gradcheck_suite(bool inject_fault = false);

// Weight multiplier applied to the regularizer strength for variants whose
// gradients are much larger than the bounded direction terms (squared feature
// distance, norm expansion). Keeps every grid setting in a stable regime.
double reg_weight_scale(RegVariant reg);

// The ablation grid: every supervision/regularizer combination studied.
struct AblationSetting {
  std::string name;
  DistillConfig dcfg;
};
std::vector<AblationSetting> ablation_settings(const DistillConfig& base);

struct SeedRow {
  std::string setting;
  double value = 0.0;  // sweep parameter where applicable
  std::uint64_t seed = 0;
  RunSummary summary;
};

struct SummaryRow {
  std::string setting;
  double value = 0.0;
  RunSummary mean;
  RunSummary stddev;
};

struct StudyTable {
  std::vector<SeedRow> rows;
  std::vector<SummaryRow> summaries;
};

// Mean/std per setting from per-seed rows (population std over seeds).
std::vector<SummaryRow> summarize_rows(const std::vector<SeedRow>& rows);

StudyTable cmd_ablation(const StudyContext& ctx, int jobs);
void write_ablation_csv(const StudyTable& table, const std::string& path);

struct SensitivityResult {
  StudyTable beta_stage;   // setting "beta", value = beta
  StudyTable alpha_stage;  // setting "alpha", value = alpha
  double best_beta = 0.0;
};
SensitivityResult cmd_sensitivity(const StudyContext& ctx, const std::vector<double>& beta_grid,
                                  const std::vector<double>& alpha_grid, int jobs);
void write_sensitivity_csv(const SensitivityResult& result, const std::string& path);

StudyTable cmd_msweep(const StudyContext& ctx, const std::vector<double>& m_values, int jobs);
void write_msweep_csv(const StudyTable& table, const std::string& path);

StudyTable cmd_sifn_sweep(const StudyContext& ctx, const std::vector<double>& r_values,
                          int jobs);
void write_sifn_sweep_csv(const StudyTable& table, const std::string& path);

StudyTable cmd_trials(const StudyContext& ctx, int jobs);
void write_trials_csv(const StudyTable& table, const std::string& path);

// Eval-mode embeddings of a dataset under a checkpointed model, written as
// label,dim_0,...,dim_{D-1} rows (no header).
void cmd_dump_embeddings(const std::string& checkpoint_path, const LabeledData& data,
                         const std::string& out_csv);

// Model checkpoint helpers: the header carries the MLPSpec as JSON.
void save_model(const std::string& path, const MLPSpec& spec, const ParamStore& params);
struct LoadedModel {
  MLPSpec spec;
  ParamStore params;
};
LoadedModel load_model(const std::string& path);

// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// Runs fn(i) for i in [0,n) on up to `jobs` threads; rethrows the first error.
void parallel_for(int jobs, int n, const std::function<void(int)>& fn);

}  // namespace ndlab
