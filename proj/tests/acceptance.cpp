// Acceptance gate: one PASS/FAIL line per release criterion, nonzero exit on
// any failure. Criteria 1-5 are self-contained property checks; 6-9 share one
// full default-recipe study (5 seeds, 4 worker threads).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ndlab/class_means.hpp"
#include "ndlab/csvio.hpp"
#include "ndlab/datagen.hpp"
#include "ndlab/errors.hpp"
#include "ndlab/experiments.hpp"
#include "ndlab/losses.hpp"
#include "ndlab/metrics.hpp"
#include "ndlab/mlp.hpp"
#include "ndlab/rng.hpp"
#include "ndlab/svg_plot.hpp"
#include "ndlab/trainer.hpp"

using namespace ndlab;

namespace {

constexpr int kJobs = 4;

struct Outcome {
  bool ok = true;
  std::string detail;
};

#define REQUIRE_OK(cond, message)            \
  do {                                       \
    if (!(cond)) return Outcome{false, message}; \
  } while (0)

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

Mat rand_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (double& v : m.data) v = scale * rng.next_normal();
  return m;
}

// Random class-mean table with exactly unit direction rows.
ClassMeanTable rand_table(int classes, int dim, Rng& rng) {
  ClassMeanTable t;
  t.unit_dirs = Mat(classes, dim);
  for (int k = 0; k < classes; ++k) {
    double norm2 = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double v = rng.next_normal();
      t.unit_dirs(k, j) = v;
      norm2 += v * v;
    }
    const double norm = std::sqrt(norm2);
    for (int j = 0; j < dim; ++j) t.unit_dirs(k, j) /= norm;
  }
  t.means = t.unit_dirs;
  t.counts.assign(static_cast<std::size_t>(classes), 1);
  return t;
}

std::vector<int> rand_labels(int n, int classes, Rng& rng) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (int& v : y) v = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(classes)));
  return y;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite: every loss and net primitive < 1e-5 vs finite
//    differences, and the whole suite finishes in under 10 seconds.
// ---------------------------------------------------------------------------
Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<NamedGradCheck> checks = run_gradcheck_suite(false);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  REQUIRE_OK(!checks.empty(), "suite produced no checks");
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : checks) {
    if (c.report.max_rel_error > worst) {
      worst = c.report.max_rel_error;
      worst_name = c.name;
    }
  }
  REQUIRE_OK(worst < 1e-5, "worst check " + worst_name + " rel err " + fmt(worst));
  REQUIRE_OK(secs < 10.0, "suite took " + fmt(secs) + "s (limit 10s)");
  return {true, std::to_string(checks.size()) + " checks, worst rel err " + fmt(worst) +
                    ", " + fmt(secs) + "s"};
}

// ---------------------------------------------------------------------------
// 2. Norm-direction analytic values: hand cases to 1e-12, per-example values
//    bounded by [-1, 1] on 10k random inputs, and the -1 floor is attained
//    exactly when the feature is aligned and at least (1+m) x teacher norm.
// ---------------------------------------------------------------------------
Outcome criterion_nd_values() {
  // Hand cases on a single axis-aligned class direction e = (1, 0).
  ClassMeanTable axis;
  axis.unit_dirs = Mat(1, 2);
  axis.unit_dirs(0, 0) = 1.0;
  axis.means = axis.unit_dirs;
  axis.counts = {1};
  const std::vector<int> y0{0};
  const std::vector<double> t2{2.0};

  auto value_at = [&](double fx, double fy, double m) {
    Mat f(1, 2);
    f(0, 0) = fx;
    f(0, 1) = fy;
    return nd_loss(f, t2, axis, y0, m);
  };

  NdResult a = value_at(1.0, 0.0, 0.0);  // below the teacher norm, aligned
  REQUIRE_OK(std::abs(a.value - (-0.5)) <= 1e-12, "aligned small case: " + fmt(a.value));
  NdResult b = value_at(10.0, 0.0, 0.0);  // far above the teacher norm
  REQUIRE_OK(std::abs(b.value - (-1.0)) <= 1e-12, "aligned large case: " + fmt(b.value));
  NdResult c = value_at(0.0, 1.0, 0.0);  // orthogonal
  REQUIRE_OK(std::abs(c.value) <= 1e-12, "orthogonal value: " + fmt(c.value));
  REQUIRE_OK(std::abs(c.grad(0, 0) - (-0.5)) <= 1e-12 && std::abs(c.grad(0, 1)) <= 1e-12,
             "orthogonal gradient (" + fmt(c.grad(0, 0)) + "," + fmt(c.grad(0, 1)) + ")");

  // Per-example values stay in [-1, 1] across 10k random examples.
  Rng rng(2024);
  int examples = 0;
  for (int batch = 0; batch < 100; ++batch) {
    const int n = 100, d = 8, classes = 5;
    ClassMeanTable table = rand_table(classes, d, rng);
    std::vector<int> labels = rand_labels(n, classes, rng);
    Mat F = rand_mat(n, d, rng, 0.5 + 2.0 * rng.next_unit());
    std::vector<double> norms(static_cast<std::size_t>(n));
    for (double& v : norms) v = 0.2 + 3.8 * rng.next_unit();
    const double m = -0.5 + rng.next_unit();

    NdResult r = nd_loss(F, norms, table, labels, m);
    for (int i = 0; i < n; ++i) {
      const double denom =
          std::max(F.row_norm(i), r.diag.teacher_norm[static_cast<std::size_t>(i)]);
      const double v = -r.diag.proj_norm[static_cast<std::size_t>(i)] / denom;
      REQUIRE_OK(v >= -1.0 - 1e-9 && v <= 1.0 + 1e-9,
                 "per-example value " + fmt(v) + " out of [-1,1]");
      ++examples;
    }
  }
  REQUIRE_OK(examples == 10000, "expected 10000 examples");

  // The floor: with m = 0.25 and teacher norm 2 the threshold is 2.5.
  REQUIRE_OK(value_at(2.5, 0.0, 0.25).value == -1.0, "aligned at threshold should hit -1");
  REQUIRE_OK(value_at(7.0, 0.0, 0.25).value == -1.0, "aligned above threshold should hit -1");
  const double below = value_at(2.4999, 0.0, 0.25).value;
  REQUIRE_OK(below > -1.0 && below < -0.99, "just below threshold: " + fmt(below));
  const double ortho = value_at(0.0, 5.0, 0.25).value;
  REQUIRE_OK(ortho > -1.0, "misaligned large feature: " + fmt(ortho));
  const double tilted = value_at(3.0, 4.0, 0.25).value;  // norm 5, cos 0.6
  REQUIRE_OK(std::abs(tilted - (-0.6)) <= 1e-12, "tilted large feature: " + fmt(tilted));

  return {true, "hand cases to 1e-12; 10k values in [-1,1]; floor iff aligned and large"};
}

// ---------------------------------------------------------------------------
// 3. Regime geometry: in the large-norm regime the gradient is orthogonal to
//    the feature and the value is invariant to upscaling; in the small-norm
//    regime the gradient is the exact constant pull toward the class mean.
// ---------------------------------------------------------------------------
Outcome criterion_regimes() {
  Rng rng(77);
  const int n = 1000, d = 8, classes = 5;
  ClassMeanTable table = rand_table(classes, d, rng);
  std::vector<int> labels = rand_labels(n, classes, rng);
  Mat F = rand_mat(n, d, rng);
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    norms[static_cast<std::size_t>(i)] = 0.1 * F.row_norm(i);  // forces the large regime
  const double m = 0.5;

  NdResult r = nd_loss(F, norms, table, labels, m);
  for (int i = 0; i < n; ++i) {
    REQUIRE_OK(r.diag.regime[static_cast<std::size_t>(i)] == NdRegime::large_norm,
               "example " + std::to_string(i) + " not in the large regime");
    double dot = 0.0, g2 = 0.0;
    const double* g = r.grad.row_ptr(i);
    const double* f = F.row_ptr(i);
    for (int j = 0; j < d; ++j) {
      dot += g[j] * f[j];
      g2 += g[j] * g[j];
    }
    REQUIRE_OK(g2 > 0.0, "zero gradient row " + std::to_string(i));
    const double cosv = std::abs(dot) / (std::sqrt(g2) * F.row_norm(i));
    REQUIRE_OK(cosv < 1e-10, "gradient not orthogonal: " + fmt(cosv));
  }

  // Upscaling a large-regime batch never changes the value.
  for (double lambda : {1.0, 1.5, 3.0, 10.0}) {
    Mat scaled = F;
    for (double& v : scaled.data) v *= lambda;
    NdResult rs = nd_loss(scaled, norms, table, labels, m);
    REQUIRE_OK(std::abs(rs.value - r.value) <= 1e-12,
               "scale " + fmt(lambda) + " moved the value by " + fmt(rs.value - r.value));
  }

  // Small regime: single-example batches make the class weight exactly 1, so
  // the gradient must equal -e / ((1+m) * teacher_norm) bit for bit.
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(classes)));
    const double t_norm = 0.5 + 1.5 * rng.next_unit();
    const double mm = -0.5 + rng.next_unit();
    const double t_scaled = t_norm * (1.0 + mm);

    Mat f = rand_mat(1, d, rng);
    const double target = 0.3 * t_scaled;  // keeps the student norm strictly below
    const double cur = f.row_norm(0);
    for (double& v : f.data) v *= target / cur;

    NdResult rr = nd_loss(f, {t_norm}, table, {k}, mm);
    REQUIRE_OK(rr.diag.regime[0] == NdRegime::small_norm, "trial not in the small regime");
    for (int j = 0; j < d; ++j) {
      const double expected = -(table.unit_dirs(k, j) / t_scaled);
      REQUIRE_OK(rr.grad(0, j) == expected, "small-regime gradient differs at dim " +
                                                std::to_string(j));
    }
  }
  return {true, "1k orthogonal large-regime grads; scale-invariant; 1k exact small-regime grads"};
}

// ---------------------------------------------------------------------------
// 4. Reductions: m = 0 reproduces the base max{||f||, ||f_t||} form bitwise;
//    beta = 0 distillation bit-matches plain logit distillation; alpha = beta
//    = 0 bit-matches plain training; identical logits give exactly zero KL.
// ---------------------------------------------------------------------------

// Base-form oracle with the plain teacher norm in the denominator, mirroring
// the production loop order so results are comparable bit for bit.
double base_form_value(const Mat& F, const std::vector<double>& t_norms,
                       const ClassMeanTable& table, const std::vector<int>& labels, Mat* grad) {
  const int d = F.cols;
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(table.unit_dirs.rows));
  for (std::size_t i = 0; i < labels.size(); ++i)
    buckets[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  std::vector<int> classes;
  for (int k = 0; k < table.unit_dirs.rows; ++k)
    if (!buckets[static_cast<std::size_t>(k)].empty()) classes.push_back(k);

  *grad = Mat(F.rows, F.cols);
  const double c_present = static_cast<double>(classes.size());
  double total = 0.0;
  for (int k : classes) {
    const auto& members = buckets[static_cast<std::size_t>(k)];
    const double w = 1.0 / (c_present * static_cast<double>(members.size()));
    const double* e = table.unit_dirs.row_ptr(k);
    double class_sum = 0.0;
    for (int i : members) {
      const double t_scaled = t_norms[static_cast<std::size_t>(i)];
      const double* f = F.row_ptr(i);
      const double s_norm = F.row_norm(i);
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += f[j] * e[j];
      double* gr = grad->row_ptr(i);
      if (s_norm > t_scaled) {
        class_sum += -(dot / s_norm);
        const double inv = 1.0 / s_norm;
        const double inv3 = inv / (s_norm * s_norm);
        for (int j = 0; j < d; ++j) gr[j] = w * (-(e[j] * inv) + dot * f[j] * inv3);
      } else {
        class_sum += -(dot / t_scaled);
        for (int j = 0; j < d; ++j) gr[j] = w * (-(e[j] / t_scaled));
      }
    }
    total += class_sum / static_cast<double>(members.size());
  }
  return total / c_present;
}

Outcome criterion_reductions() {
  // m = 0 against the base form, bit for bit, across random batches.
  Rng rng(4242);
  for (int batch = 0; batch < 20; ++batch) {
    const int n = 64, d = 16, classes = 10;
    ClassMeanTable table = rand_table(classes, d, rng);
    std::vector<int> labels = rand_labels(n, classes, rng);
    Mat F = rand_mat(n, d, rng, 0.3 + 2.0 * rng.next_unit());
    std::vector<double> norms(static_cast<std::size_t>(n));
    for (double& v : norms) v = 0.5 + 2.5 * rng.next_unit();

    NdResult r = nd_loss(F, norms, table, labels, 0.0);
    Mat oracle_grad(0, 0);
    const double oracle_value = base_form_value(F, norms, table, labels, &oracle_grad);
    REQUIRE_OK(r.value == oracle_value, "m=0 value differs from the base form");
    REQUIRE_OK(r.grad == oracle_grad, "m=0 gradient differs from the base form");
  }

  // Identical logits: exactly zero divergence.
  Mat z = rand_mat(64, 10, rng, 3.0);
  REQUIRE_OK(kd_kl_loss(z, z, 4.0).value == 0.0, "KL at z_s == z_t is nonzero");

  // Training reductions on a small study.
  MixtureSpec mx{4, 6, 40, 6.0, 0.5, 3};
  auto [train, test] = make_mixture(mx);
  MLPSpec tspec;
  tspec.input_dim = 6;
  tspec.hidden_dims = {32};
  tspec.embedding_dim = 8;
  tspec.num_classes = 4;
  MLPSpec sspec = tspec;
  sspec.hidden_dims = {8};

  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 32;
  tc.lr_initial = 0.1;
  tc.lr_milestones = {4};
  tc.lr_warmup_epochs = 1;
  tc.seed = 11;
  tc.record_timing = false;
  TrainResult teacher = train_teacher(tspec, train, test, tc);
  TeacherCache cache = extract_teacher_cache(teacher.params, tspec, train);
  ClassMeanTable means = build_class_means(cache, train.C, MeanStrategy::all);

  TrainConfig sc = tc;
  sc.seed = 5;

  DistillConfig reg_off;
  reg_off.alpha = 1.0;
  reg_off.beta = 0.0;
  reg_off.reg_variant = RegVariant::nd;
  DistillConfig plain_kd;
  plain_kd.alpha = 1.0;
  plain_kd.beta = 1.0;
  plain_kd.reg_variant = RegVariant::none;
  DistillResult d1 = distill(teacher.params, tspec, sspec, train, test, sc, reg_off, means, cache);
  DistillResult d2 =
      distill(teacher.params, tspec, sspec, train, test, sc, plain_kd, means, cache);
  REQUIRE_OK(d1.student.value_hash() == d2.student.value_hash(),
             "beta=0 does not bit-match plain logit distillation");

  DistillConfig all_off;
  all_off.alpha = 0.0;
  all_off.beta = 0.0;
  DistillResult d3 = distill(teacher.params, tspec, sspec, train, test, sc, all_off, means, cache);
  TrainResult ce_only = train_teacher(sspec, train, test, sc);
  REQUIRE_OK(d3.student.value_hash() == ce_only.params.value_hash(),
             "alpha=beta=0 does not bit-match plain training");

  return {true, "m=0 bitwise base form; beta=0 == plain KD; alpha=beta=0 == plain CE; KL(z,z)=0"};
}

// ---------------------------------------------------------------------------
// 5. Class-mean oracle: brute-force per-class recomputation within 1e-12,
//    bitwise permutation invariance, unit directions at norm 1 +/- 1e-10.
// ---------------------------------------------------------------------------
Outcome criterion_class_means(const StudyContext& ctx) {
  for (MeanStrategy strategy : {MeanStrategy::all, MeanStrategy::teacher_correct}) {
    ClassMeanTable table = build_class_means(ctx.cache, ctx.train.C, strategy);

    // Brute force, accumulating in plain index order.
    const int d = ctx.cache.embeddings.cols;
    for (int k = 0; k < ctx.train.C; ++k) {
      std::vector<double> sum(static_cast<std::size_t>(d), 0.0);
      int count = 0;
      for (int i = 0; i < ctx.train.n(); ++i) {
        const std::size_t ii = static_cast<std::size_t>(i);
        if (ctx.cache.labels[ii] != k) continue;
        if (strategy == MeanStrategy::teacher_correct &&
            ctx.cache.predictions[ii] != ctx.cache.labels[ii])
          continue;
        for (int j = 0; j < d; ++j) sum[static_cast<std::size_t>(j)] += ctx.cache.embeddings(i, j);
        ++count;
      }
      REQUIRE_OK(count == table.counts[static_cast<std::size_t>(k)],
                 "count mismatch for class " + std::to_string(k));
      REQUIRE_OK(count > 0, "empty class " + std::to_string(k));
      for (int j = 0; j < d; ++j) {
        const double brute = sum[static_cast<std::size_t>(j)] / count;
        REQUIRE_OK(std::abs(table.means(k, j) - brute) <= 1e-12,
                   "mean differs from brute force at class " + std::to_string(k));
      }
      const double norm = table.unit_dirs.row_norm(k);
      REQUIRE_OK(std::abs(norm - 1.0) <= 1e-10, "unit direction norm " + fmt(norm));
    }

    // Bitwise invariance under a row permutation of the cache.
    std::vector<int> perm(static_cast<std::size_t>(ctx.train.n()));
    for (int i = 0; i < ctx.train.n(); ++i) perm[static_cast<std::size_t>(i)] = i;
    Rng rng(99);
    rng.shuffle(perm);
    TeacherCache shuffled;
    shuffled.embeddings = Mat(ctx.cache.embeddings.rows, d);
    shuffled.norms.resize(ctx.cache.norms.size());
    shuffled.predictions.resize(ctx.cache.predictions.size());
    shuffled.labels.resize(ctx.cache.labels.size());
    for (int i = 0; i < ctx.train.n(); ++i) {
      const int src = perm[static_cast<std::size_t>(i)];
      const std::size_t si = static_cast<std::size_t>(src);
      const std::size_t di = static_cast<std::size_t>(i);
      for (int j = 0; j < d; ++j) shuffled.embeddings(i, j) = ctx.cache.embeddings(src, j);
      shuffled.norms[di] = ctx.cache.norms[si];
      shuffled.predictions[di] = ctx.cache.predictions[si];
      shuffled.labels[di] = ctx.cache.labels[si];
    }
    ClassMeanTable again = build_class_means(shuffled, ctx.train.C, strategy);
    REQUIRE_OK(again.means == table.means, "means change under permutation");
    REQUIRE_OK(again.unit_dirs == table.unit_dirs, "unit directions change under permutation");
    REQUIRE_OK(again.counts == table.counts, "counts change under permutation");
  }
  return {true, "brute force to 1e-12; bitwise permutation invariance; unit norms to 1e-10"};
}

// ---------------------------------------------------------------------------
// 6. Distillation study on the default recipe: near-perfect teacher, and the
//    norm-direction setting beats plain logit distillation on feature norm
//    (higher) and angle to the class means (lower) in >= 4 of 5 seeds while
//    keeping mean top-1 within 0.2 points.
// ---------------------------------------------------------------------------
Outcome criterion_study(const StudyContext& ctx, const StudyTable& ablation) {
  const RunSummary teacher = summarize_run(ctx.teacher_history);
  REQUIRE_OK(teacher.top1 >= 0.99, "teacher top-1 " + fmt(teacher.top1));

  std::map<std::uint64_t, const SeedRow*> kd, nd;
  for (const auto& row : ablation.rows) {
    if (row.setting == "ce_kl") kd[row.seed] = &row;
    if (row.setting == "ce_kl_nd") nd[row.seed] = &row;
  }
  REQUIRE_OK(kd.size() == 5 && nd.size() == 5, "expected 5 seeds per setting");

  int norm_wins = 0, angle_wins = 0;
  double kd_top1 = 0.0, nd_top1 = 0.0;
  for (const auto& [seed, kd_row] : kd) {
    const SeedRow* nd_row = nd.at(seed);
    if (nd_row->summary.mean_norm > kd_row->summary.mean_norm) ++norm_wins;
    if (nd_row->summary.mean_angle_deg < kd_row->summary.mean_angle_deg) ++angle_wins;
    kd_top1 += kd_row->summary.top1 / 5.0;
    nd_top1 += nd_row->summary.top1 / 5.0;
  }
  REQUIRE_OK(norm_wins >= 4, "norm higher in only " + std::to_string(norm_wins) + "/5 seeds");
  REQUIRE_OK(angle_wins >= 4, "angle lower in only " + std::to_string(angle_wins) + "/5 seeds");
  REQUIRE_OK(nd_top1 >= kd_top1 - 0.002,
             "mean top-1 " + fmt(nd_top1) + " vs " + fmt(kd_top1) + " - 0.002");
  return {true, "teacher " + fmt(teacher.top1) + "; norm wins " + std::to_string(norm_wins) +
                    "/5; angle wins " + std::to_string(angle_wins) + "/5; top-1 " +
                    fmt(nd_top1) + " vs " + fmt(kd_top1)};
}

// ---------------------------------------------------------------------------
// 7. Norm-step sweep: the final mean feature norm increases with the step
//    size r (positive Spearman rank correlation in every seed).
// ---------------------------------------------------------------------------
Outcome criterion_sifn_sweep(const StudyTable& sweep) {
  std::map<std::uint64_t, std::vector<std::pair<double, double>>> by_seed;
  for (const auto& row : sweep.rows)
    by_seed[row.seed].push_back({row.value, row.summary.mean_norm});
  REQUIRE_OK(by_seed.size() == 5, "expected 5 seeds");
  for (auto& [seed, pts] : by_seed) {
    REQUIRE_OK(pts.size() == 4, "expected 4 step sizes per seed");
    std::sort(pts.begin(), pts.end());
    std::vector<double> r, norm;
    for (const auto& [rv, nv] : pts) {
      r.push_back(rv);
      norm.push_back(nv);
    }
    const double rho = spearman(r, norm);
    REQUIRE_OK(rho > 0.0,
               "seed " + std::to_string(seed) + " Spearman " + fmt(rho) + " not positive");
  }
  return {true, "norm rises with r (Spearman > 0) in all 5 seeds"};
}

// ---------------------------------------------------------------------------
// 8. Protocol fidelity: the two-stage sensitivity procedure picks the
//    brute-force best beta (ties to the smaller value) and reuses it for the
//    alpha stage; the ablation covers all 12 settings; the m sweep at m = 0
//    bit-matches the default run.
// ---------------------------------------------------------------------------
Outcome criterion_protocols(const StudyTable& ablation, const SensitivityResult& sens,
                            const StudyTable& msweep, const StudyTable& trials) {
  // Brute-force the stage-1 winner from its summary rows.
  REQUIRE_OK(sens.beta_stage.summaries.size() == 4, "expected 4 beta summaries");
  double best_top1 = -1.0;
  for (const auto& s : sens.beta_stage.summaries) best_top1 = std::max(best_top1, s.mean.top1);
  double brute_beta = 1e300;
  for (const auto& s : sens.beta_stage.summaries)
    if (s.mean.top1 == best_top1) brute_beta = std::min(brute_beta, s.value);
  REQUIRE_OK(sens.best_beta == brute_beta,
             "picked beta " + fmt(sens.best_beta) + ", brute force says " + fmt(brute_beta));

  // Stage 2 at alpha = 1 must reproduce stage 1 at the winning beta exactly.
  std::map<std::uint64_t, const SeedRow*> stage1, stage2;
  for (const auto& row : sens.beta_stage.rows)
    if (row.value == sens.best_beta) stage1[row.seed] = &row;
  for (const auto& row : sens.alpha_stage.rows)
    if (row.value == 1.0) stage2[row.seed] = &row;
  REQUIRE_OK(stage1.size() == 5 && stage2.size() == 5, "missing coupling rows");
  for (const auto& [seed, a] : stage1) {
    const SeedRow* b = stage2.at(seed);
    REQUIRE_OK(a->summary.top1 == b->summary.top1 &&
                   a->summary.mean_norm == b->summary.mean_norm &&
                   a->summary.mean_angle_deg == b->summary.mean_angle_deg,
               "alpha stage did not rerun the winning beta for seed " + std::to_string(seed));
  }

  // All 12 ablation settings, 5 seeds each, in the canonical order.
  const std::vector<std::string> expected = {
      "ce_kl",           "ce_kl_l2",          "ce_kl_sifn",       "ce_kl_cosine",
      "ce_kl_infonce",   "ce_kl_cosine_l2",   "ce_kl_cosine_sifn", "ce_kl_infonce_l2",
      "ce_kl_infonce_sifn", "ce_nd",          "kl_nd",            "ce_kl_nd"};
  REQUIRE_OK(ablation.summaries.size() == expected.size(), "expected 12 ablation summaries");
  for (std::size_t i = 0; i < expected.size(); ++i)
    REQUIRE_OK(ablation.summaries[i].setting == expected[i],
               "ablation setting " + std::to_string(i) + " is " +
                   ablation.summaries[i].setting);
  REQUIRE_OK(ablation.rows.size() == expected.size() * 5, "expected 60 ablation rows");

  // m = 0 is the default configuration, so those rows must match bit for bit.
  REQUIRE_OK(msweep.rows.size() == trials.rows.size(), "m sweep row count mismatch");
  for (std::size_t i = 0; i < msweep.rows.size(); ++i) {
    const SeedRow& a = msweep.rows[i];
    const SeedRow& b = trials.rows[i];
    REQUIRE_OK(a.value == 0.0, "unexpected m value");
    REQUIRE_OK(a.seed == b.seed, "seed order mismatch");
    REQUIRE_OK(a.summary.top1 == b.summary.top1 &&
                   a.summary.mean_norm == b.summary.mean_norm &&
                   a.summary.mean_angle_deg == b.summary.mean_angle_deg,
               "m=0 run differs from the default run for seed " + std::to_string(a.seed));
  }
  return {true, "best beta " + fmt(sens.best_beta) + " brute-force verified; 12 settings; "
                "m=0 bit-matches the default run"};
}

// ---------------------------------------------------------------------------
// 9. Determinism and round trips: reruns produce byte-identical CSV and SVG
//    outputs with timing disabled; checkpoints and data CSVs reload exactly.
// ---------------------------------------------------------------------------
Outcome criterion_determinism(const StudyContext& ctx, const StudyTable& trials,
                              const std::string& dir) {
  // Study table reruns are byte-identical.
  StudyTable trials2 = cmd_trials(ctx, kJobs);
  const std::string t1 = dir + "/trials_a.csv";
  const std::string t2 = dir + "/trials_b.csv";
  write_trials_csv(trials, t1);
  write_trials_csv(trials2, t2);
  REQUIRE_OK(!read_bytes(t1).empty() && read_bytes(t1) == read_bytes(t2),
             "rerun trials CSV differs");

  // Per-epoch metrics reruns are byte-identical with timing off.
  DistillResult run1 = run_distill_seed(ctx, ctx.cfg.distill, 1);
  DistillResult run2 = run_distill_seed(ctx, ctx.cfg.distill, 1);
  const std::string m1 = dir + "/metrics_a.csv";
  const std::string m2 = dir + "/metrics_b.csv";
  write_metrics_csv(m1, run1.history);
  write_metrics_csv(m2, run2.history);
  REQUIRE_OK(read_bytes(m1) == read_bytes(m2), "rerun metrics CSV differs");
  REQUIRE_OK(run1.student.value_hash() == run2.student.value_hash(),
             "rerun student weights differ");

  // Checkpoints reload to the same bytes and the same weights.
  const std::string c1 = dir + "/teacher_a.ckpt";
  const std::string c2 = dir + "/teacher_b.ckpt";
  save_model(c1, ctx.cfg.teacher.spec, ctx.teacher);
  LoadedModel loaded = load_model(c1);
  save_model(c2, loaded.spec, loaded.params);
  REQUIRE_OK(read_bytes(c1) == read_bytes(c2), "checkpoint round trip changed bytes");
  REQUIRE_OK(loaded.params.value_hash() == ctx.teacher.value_hash(),
             "checkpoint round trip changed weights");

  // Data CSVs reload bit-exactly.
  const std::string dpath = dir + "/train.csv";
  save_data_csv(ctx.train, dpath);
  LabeledData back = load_data_csv(dpath);
  REQUIRE_OK(back.X == ctx.train.X && back.y == ctx.train.y && back.C == ctx.train.C,
             "data CSV round trip is not exact");

  // Embedding dumps and scatter plots are byte-stable.
  const std::string e1 = dir + "/emb_a.csv";
  const std::string e2 = dir + "/emb_b.csv";
  cmd_dump_embeddings(c1, ctx.test, e1);
  cmd_dump_embeddings(c1, ctx.test, e2);
  REQUIRE_OK(!read_bytes(e1).empty() && read_bytes(e1) == read_bytes(e2),
             "rerun embedding dump differs");

  LabeledData flat;
  flat.X = Mat(ctx.test.n(), 2);
  for (int i = 0; i < ctx.test.n(); ++i) {
    flat.X(i, 0) = ctx.test.X(i, 0);
    flat.X(i, 1) = ctx.test.X(i, 1);
  }
  flat.y = ctx.test.y;
  flat.C = ctx.test.C;
  const std::string s1 = dir + "/scatter_a.svg";
  const std::string s2 = dir + "/scatter_b.svg";
  plot_scatter_svg(flat, s1);
  plot_scatter_svg(flat, s2);
  REQUIRE_OK(!read_bytes(s1).empty() && read_bytes(s1) == read_bytes(s2),
             "rerun scatter SVG differs");

  return {true, "byte-identical reruns (tables, metrics, dumps, SVG); exact round trips"};
}

}  // namespace

int main() {
  struct Line {
    int id;
    std::string label;
    Outcome outcome;
  };
  std::vector<Line> lines;
  auto run = [&lines](int id, const std::string& label, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    lines.push_back({id, label, o});
    std::printf("[%s] %d %-20s %s\n", o.ok ? "PASS" : "FAIL", id, label.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  };

  run(1, "gradient suite", criterion_gradients);
  run(2, "analytic values", criterion_nd_values);
  run(3, "regime geometry", criterion_regimes);
  run(4, "reductions", criterion_reductions);

  // One shared full-recipe study for the experiment-level criteria.
  StudyContext ctx;
  StudyTable ablation, sweep, msweep, trials;
  SensitivityResult sens;
  bool study_ready = false;
  std::string study_error;
  const std::string dir =
      (std::filesystem::temp_directory_path() / "ndlab_acceptance").string();
  try {
    std::filesystem::create_directories(dir);
    ExperimentConfig cfg = default_experiment_config();
    cfg.teacher.train.record_timing = false;
    cfg.student.train.record_timing = false;
    ctx = prepare_study(cfg);
    ablation = cmd_ablation(ctx, kJobs);
    sweep = cmd_sifn_sweep(ctx, {0.25, 0.5, 1.0, 2.0}, kJobs);
    sens = cmd_sensitivity(ctx, {0.5, 1.0, 2.0, 4.0}, {0.5, 1.0, 2.0}, kJobs);
    msweep = cmd_msweep(ctx, {0.0}, kJobs);
    trials = cmd_trials(ctx, kJobs);
    study_ready = true;
  } catch (const std::exception& e) {
    study_error = std::string("study failed: ") + e.what();
  }

  auto gated = [&](const std::function<Outcome()>& fn) -> std::function<Outcome()> {
    if (study_ready) return fn;
    return [&study_error]() { return Outcome{false, study_error}; };
  };

  run(5, "class-mean oracle", gated([&] { return criterion_class_means(ctx); }));
  run(6, "distillation study", gated([&] { return criterion_study(ctx, ablation); }));
  run(7, "norm-step sweep", gated([&] { return criterion_sifn_sweep(sweep); }));
  run(8, "protocol fidelity",
      gated([&] { return criterion_protocols(ablation, sens, msweep, trials); }));
  run(9, "determinism",
      gated([&] { return criterion_determinism(ctx, trials, dir); }));

  int failures = 0;
  for (const auto& l : lines)
    if (!l.outcome.ok) ++failures;
  std::printf("%d/%zu criteria passed\n", static_cast<int>(lines.size()) - failures,
              lines.size());
  return failures == 0 ? 0 : 1;
}
