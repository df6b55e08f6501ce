#include "ndlab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "ndlab/csvio.hpp"
#include "ndlab/errors.hpp"
#include "ndlab/metrics.hpp"
#include "ndlab/rng.hpp"

namespace ndlab {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (!(lr_initial > 0.0)) throw ConfigError("TrainConfig: lr_initial must be > 0");
  if (!(lr_decay > 0.0 && lr_decay < 1.0))
    throw ConfigError("TrainConfig: lr_decay must be in (0,1)");
  if (lr_warmup_epochs < 0) throw ConfigError("TrainConfig: lr_warmup_epochs must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("TrainConfig: momentum must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
  int prev = -1;
  for (int mstone : lr_milestones) {
    if (mstone <= prev) throw ConfigError("TrainConfig: lr_milestones must be strictly increasing");
    if (mstone >= epochs)
      throw ConfigError("TrainConfig: milestone " + std::to_string(mstone) +
                        " is not below epochs=" + std::to_string(epochs));
    if (mstone < lr_warmup_epochs)
      throw ConfigError("TrainConfig: milestone " + std::to_string(mstone) +
                        " falls inside the warmup ramp");
    prev = mstone;
  }
}

double lr_at(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw ParamError("lr_at: epoch must be >= 0");
  if (cfg.lr_warmup_epochs > 0 && epoch < cfg.lr_warmup_epochs)
    return cfg.lr_initial * (epoch + 1) / cfg.lr_warmup_epochs;
  double lr = cfg.lr_initial;
  for (int mstone : cfg.lr_milestones)
    if (epoch >= mstone) lr *= cfg.lr_decay;
  return lr;
}

Sgd::Sgd(const ParamStore& params) {
  velocity_.reserve(params.size());
  for (const auto& e : params.entries()) velocity_.emplace_back(e.value.rows, e.value.cols);
}

void Sgd::step(ParamStore& params, double lr, double momentum, double weight_decay) {
  if (velocity_.size() != params.size())
    throw ContractError("Sgd::step: optimizer built for a different store");
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& e = params.entries()[pi];
    if (!e.trainable) continue;
    Mat& v = velocity_[pi];
    for (std::size_t k = 0; k < e.value.data.size(); ++k) {
      const double g = e.grad.data[k];
      if (!std::isfinite(g))
        throw DivergenceError("non-finite gradient in parameter '" + e.name + "'");
      v.data[k] = momentum * v.data[k] + (g + weight_decay * e.value.data[k]);
      e.value.data[k] -= lr * v.data[k];
    }
  }
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& history) {
  CsvTable t;
  t.header = {"epoch",      "split", "loss_ce",   "loss_kd",        "loss_reg",
              "loss_total", "top1",  "mean_norm", "mean_angle_deg", "lr",
              "seconds_per_iter"};
  for (const auto& r : history) {
    t.rows.push_back({std::to_string(r.epoch), r.split, format_double(r.loss_ce),
                      format_double(r.loss_kd), format_double(r.loss_reg),
                      format_double(r.loss_total), format_double(r.top1),
                      format_double(r.mean_norm), format_double(r.mean_angle_deg),
                      format_double(r.lr), format_double(r.seconds_per_iter)});
  }
  write_csv(path, t);
}

namespace {

constexpr std::uint64_t kOrderSeedTag = 0x6f726465726e6401ULL;    // batch-order stream
constexpr std::uint64_t kAdapterSeedTag = 0xada7ada7ada7ada7ULL;  // adapter-init stream

// Everything the distillation terms need beyond the student itself. Null
// members mean the corresponding term is inactive.
struct DistillContext {
  const Mat* teacher_train_logits = nullptr;
  const Mat* teacher_train_emb = nullptr;
  const std::vector<double>* teacher_train_norms = nullptr;
  const Mat* teacher_test_logits = nullptr;
  const Mat* teacher_test_emb = nullptr;
  const std::vector<double>* teacher_test_norms = nullptr;
  const ClassMeanTable* means = nullptr;  // also enables the angle metric
};

struct StepLossParts {
  double ce = 0.0;
  double kd = 0.0;
  double reg = 0.0;
};

Mat gather_rows(const Mat& src, const std::vector<int>& idx) {
  Mat out(static_cast<int>(idx.size()), src.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* s = src.row_ptr(idx[i]);
    double* d = out.row_ptr(static_cast<int>(i));
    for (int j = 0; j < src.cols; ++j) d[j] = s[j];
  }
  return out;
}

// Regularizer dispatch on already-adapted features. Returns the unweighted
// value; accumulates the unweighted gradient into d_reg.
double eval_reg(RegVariant variant, const Mat& feats, const Mat& teacher_feats,
                const std::vector<double>& teacher_norms, const ClassMeanTable* means,
                const std::vector<int>& labels, double m, double sifn_r,
                const std::vector<double>* sifn_prev, Mat* d_reg) {
  auto take = [d_reg](LossResult r) {
    if (d_reg) d_reg->add(r.grad);
    return r.value;
  };
  switch (variant) {
    case RegVariant::none:
      return 0.0;
    case RegVariant::l2:
      return take(l2_feature_loss(feats, teacher_feats, labels));
    case RegVariant::sifn:
      return take(sifn_loss(*sifn_prev, feats, sifn_r));
    case RegVariant::cosine:
      return take(cosine_direction_loss(feats, *means, labels));
    case RegVariant::infonce:
      return take(infonce_direction_loss(feats, *means, labels));
    case RegVariant::nd: {
      NdResult r = nd_loss(feats, teacher_norms, *means, labels, m);
      if (d_reg) d_reg->add(r.grad);
      return r.value;
    }
    case RegVariant::cosine_l2:
    case RegVariant::cosine_sifn:
    case RegVariant::infonce_l2:
    case RegVariant::infonce_sifn: {
      const bool cos_side =
          variant == RegVariant::cosine_l2 || variant == RegVariant::cosine_sifn;
      const bool l2_side =
          variant == RegVariant::cosine_l2 || variant == RegVariant::infonce_l2;
      LossResult dir = cos_side ? cosine_direction_loss(feats, *means, labels)
                                : infonce_direction_loss(feats, *means, labels);
      LossResult nrm = l2_side ? l2_feature_loss(feats, teacher_feats, labels)
                               : sifn_loss(*sifn_prev, feats, sifn_r);
      if (d_reg) {
        for (std::size_t k = 0; k < d_reg->data.size(); ++k)
          d_reg->data[k] += 0.5 * dir.grad.data[k] + 0.5 * nrm.grad.data[k];
      }
      return 0.5 * dir.value + 0.5 * nrm.value;
    }
  }
  throw ParamError("eval_reg: bad variant");
}

struct EpochAccum {
  double ce = 0.0, kd = 0.0, reg = 0.0, total = 0.0;
  double correct = 0.0;
  double norm_sum = 0.0;
  double angle_sum = 0.0;
  int examples = 0;
};

MetricsRecord make_train_record(int epoch, const EpochAccum& acc, double lr, double secs,
                                bool has_angle) {
  MetricsRecord r;
  r.epoch = epoch;
  r.split = "train";
  r.loss_ce = acc.ce / acc.examples;
  r.loss_kd = acc.kd / acc.examples;
  r.loss_reg = acc.reg / acc.examples;
  r.loss_total = acc.total / acc.examples;
  r.top1 = acc.correct / acc.examples;
  r.mean_norm = acc.norm_sum / acc.examples;
  r.mean_angle_deg = has_angle ? acc.angle_sum / acc.examples : 0.0;
  r.lr = lr;
  r.seconds_per_iter = secs;
  return r;
}

// The single training loop behind both entry points. When dcfg disables every
// distillation term and ctx is empty this is plain CE training, executing the
// exact same floating-point operations as any other disabled-term run.
TrainResult run_training(const MLPSpec& spec, const LabeledData& train, const LabeledData& test,
                         const TrainConfig& cfg, const DistillConfig& dcfg,
                         const DistillContext& ctx, ParamStore* adapter,
                         const AdapterSpec* aspec, SifnStateView* sifn_out) {
  spec.validate();
  cfg.validate();
  dcfg.validate();
  require_all_classes(train, "training split");

  const bool kd_active = dcfg.kd_variant != KdVariant::none && dcfg.alpha != 0.0;
  const bool reg_active = dcfg.reg_variant != RegVariant::none && dcfg.beta != 0.0;
  const bool sifn_active = reg_active && reg_uses_sifn(dcfg.reg_variant);
  if (kd_active && ctx.teacher_train_logits == nullptr)
    throw ContractError("run_training: KD term enabled without teacher logits");
  if (reg_active && reg_uses_class_means(dcfg.reg_variant) && ctx.means == nullptr)
    throw ContractError("run_training: direction term enabled without class means");

  // The angle metric needs features in the class-mean space: adapted features
  // when an adapter exists, raw embeddings only when the widths already match.
  const bool angle_enabled =
      ctx.means != nullptr &&
      (adapter != nullptr ? aspec->out_dim : spec.embedding_dim) == ctx.means->unit_dirs.cols;

  TrainResult result;
  result.params = init_params(spec, cfg.seed);
  Sgd opt(result.params);
  Sgd adapter_opt(adapter ? *adapter : ParamStore{});
  Rng order_rng(cfg.seed ^ kOrderSeedTag);

  const int n = train.n();
  std::vector<double> sifn_norms;
  std::vector<bool> sifn_init;
  if (sifn_active) {
    sifn_norms.assign(static_cast<std::size_t>(n), 0.0);
    sifn_init.assign(static_cast<std::size_t>(n), false);
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    const double kd_w = kd_warmup_weight(epoch, dcfg.kd_warmup_epochs);
    order_rng.shuffle(order);
    EpochAccum acc;
    int steps = 0;
    double step_seconds = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const auto t0 = std::chrono::steady_clock::now();
      const int bn = std::min(cfg.batch_size, n - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + bn);
      Mat Xb = gather_rows(train.X, idx);
      std::vector<int> yb(static_cast<std::size_t>(bn));
      for (int i = 0; i < bn; ++i)
        yb[static_cast<std::size_t>(i)] = train.y[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];

      result.params.zero_grads();
      if (adapter) adapter->zero_grads();

      FeaturesCache fcache;
      Mat emb = forward_features(result.params, spec, Xb, Mode::train, &fcache);
      Mat logits = forward_logits(result.params, spec, emb);

      StepLossParts parts;
      LossResult ce = ce_loss(logits, yb);
      parts.ce = ce.value;
      Mat d_logits(logits.rows, logits.cols);
      if (dcfg.ce_weight != 0.0) {
        for (std::size_t k = 0; k < d_logits.data.size(); ++k)
          d_logits.data[k] = dcfg.ce_weight * ce.grad.data[k];
      }
      if (kd_active) {
        Mat z_t = gather_rows(*ctx.teacher_train_logits, idx);
        LossResult kd = kd_kl_loss(logits, z_t, dcfg.tau);
        parts.kd = kd.value;
        const double w = kd_w * dcfg.alpha;
        for (std::size_t k = 0; k < d_logits.data.size(); ++k)
          d_logits.data[k] += w * kd.grad.data[k];
      }
      Mat d_emb = logits_backward(result.params, spec, emb, d_logits);

      Mat loss_feats{0, 0};  // reg-facing features (adapted when dims differ)
      AdapterCache acache;
      const bool use_adapter = adapter != nullptr;
      if (reg_active || angle_enabled) {
        loss_feats = use_adapter ? adapt(*adapter, *aspec, emb, Mode::train, &acache) : emb;
      }
      if (reg_active) {
        std::vector<double> batch_teacher_norms;
        if (dcfg.reg_variant == RegVariant::nd) {
          batch_teacher_norms.reserve(idx.size());
          for (int i : idx)
            batch_teacher_norms.push_back((*ctx.teacher_train_norms)[static_cast<std::size_t>(i)]);
        }
        Mat teacher_feats{0, 0};
        if (dcfg.reg_variant == RegVariant::l2 ||
            dcfg.reg_variant == RegVariant::cosine_l2 ||
            dcfg.reg_variant == RegVariant::infonce_l2)
          teacher_feats = gather_rows(*ctx.teacher_train_emb, idx);
        std::vector<double> sifn_prev;
        if (sifn_active) {
          sifn_prev.resize(idx.size());
          for (std::size_t i = 0; i < idx.size(); ++i) {
            const auto oi = static_cast<std::size_t>(idx[i]);
            if (!sifn_init[oi]) {
              sifn_norms[oi] = loss_feats.row_norm(static_cast<int>(i));
              sifn_init[oi] = true;
            }
            sifn_prev[i] = sifn_norms[oi];
          }
        }
        Mat d_reg(loss_feats.rows, loss_feats.cols);
        parts.reg = eval_reg(dcfg.reg_variant, loss_feats, teacher_feats, batch_teacher_norms,
                             ctx.means, yb, dcfg.m, dcfg.sifn_r,
                             sifn_active ? &sifn_prev : nullptr, &d_reg);
        for (auto& g : d_reg.data) g *= dcfg.beta;
        if (use_adapter) {
          d_emb.add(adapt_backward(*adapter, *aspec, acache, d_reg));
        } else {
          d_emb.add(d_reg);
        }
        if (sifn_active) {
          // Detached norm cache for the next encounter of each example.
          for (std::size_t i = 0; i < idx.size(); ++i)
            sifn_norms[static_cast<std::size_t>(idx[i])] =
                loss_feats.row_norm(static_cast<int>(i));
        }
      }
      features_backward(result.params, spec, fcache, d_emb);

      const double step_total = total_objective(parts.ce, parts.kd, parts.reg, dcfg, epoch);
      if (!std::isfinite(step_total))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                              std::to_string(steps));
      opt.step(result.params, lr, cfg.momentum, cfg.weight_decay);
      if (adapter) adapter_opt.step(*adapter, lr, cfg.momentum, cfg.weight_decay);

      acc.ce += parts.ce * bn;
      acc.kd += parts.kd * bn;
      acc.reg += parts.reg * bn;
      acc.total += step_total * bn;
      acc.correct += top1(logits, yb) * bn;
      NormStats ns = norm_stats(emb);
      acc.norm_sum += ns.mean * bn;
      if (angle_enabled) acc.angle_sum += mean_angle_deg(loss_feats, *ctx.means, yb) * bn;
      acc.examples += bn;
      ++steps;
      if (cfg.record_timing)
        step_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    result.history.push_back(make_train_record(
        epoch, acc, lr,
        cfg.record_timing && steps > 0 ? step_seconds / steps : 0.0, angle_enabled));

    // Eval-mode pass over the test split.
    MetricsRecord te;
    te.epoch = epoch;
    te.split = "test";
    te.lr = lr;
    const ParamStore& frozen = result.params;
    Mat emb_test = forward_features(frozen, spec, test.X);
    Mat logits_test = forward_logits(frozen, spec, emb_test);
    te.loss_ce = ce_loss(logits_test, test.y).value;
    if (kd_active && ctx.teacher_test_logits != nullptr)
      te.loss_kd = kd_kl_loss(logits_test, *ctx.teacher_test_logits, dcfg.tau).value;
    Mat test_feats{0, 0};
    if (angle_enabled || reg_active) {
      test_feats = adapter != nullptr
                       ? adapt(*adapter, *aspec, emb_test, Mode::eval)
                       : emb_test;
    }
    if (reg_active && !sifn_active && ctx.teacher_test_emb != nullptr) {
      te.loss_reg = eval_reg(dcfg.reg_variant, test_feats, *ctx.teacher_test_emb,
                             *ctx.teacher_test_norms, ctx.means, test.y, dcfg.m, dcfg.sifn_r,
                             nullptr, nullptr);
    }
    te.loss_total = total_objective(te.loss_ce, te.loss_kd, te.loss_reg, dcfg, epoch);
    te.top1 = top1(logits_test, test.y);
    te.mean_norm = norm_stats(emb_test).mean;
    te.mean_angle_deg = angle_enabled ? mean_angle_deg(test_feats, *ctx.means, test.y) : 0.0;
    result.history.push_back(std::move(te));
  }

  if (sifn_out && sifn_active) sifn_out->norms = std::move(sifn_norms);
  return result;
}

}  // namespace

TrainResult train_teacher(const MLPSpec& spec, const LabeledData& train,
                          const LabeledData& test, const TrainConfig& cfg) {
  DistillConfig plain;
  plain.ce_weight = 1.0;
  plain.alpha = 0.0;
  plain.beta = 0.0;
  plain.kd_variant = KdVariant::none;
  plain.reg_variant = RegVariant::none;
  return run_training(spec, train, test, cfg, plain, DistillContext{}, nullptr, nullptr,
                      nullptr);
}

DistillResult distill(const ParamStore& teacher, const MLPSpec& teacher_spec,
                      const MLPSpec& student_spec, const LabeledData& train,
                      const LabeledData& test, const TrainConfig& cfg,
                      const DistillConfig& dcfg, const ClassMeanTable& means,
                      const TeacherCache& cache) {
  dcfg.validate();
  if (cache.embeddings.rows != train.n())
    throw ContractError("distill: teacher cache does not cover the training split");
  const std::uint64_t teacher_hash_before = teacher.value_hash();

  const bool kd_active = dcfg.kd_variant != KdVariant::none && dcfg.alpha != 0.0;
  const bool reg_active = dcfg.reg_variant != RegVariant::none && dcfg.beta != 0.0;

  DistillContext ctx;
  ctx.means = &means;
  Mat teacher_train_logits{0, 0};
  if (kd_active) {
    teacher_train_logits = forward_logits(teacher, teacher_spec, cache.embeddings);
    ctx.teacher_train_logits = &teacher_train_logits;
  }
  ctx.teacher_train_emb = &cache.embeddings;
  ctx.teacher_train_norms = &cache.norms;

  // Teacher view of the test split, for test-loss reporting only.
  TeacherCache test_cache;
  Mat teacher_test_logits{0, 0};
  if (kd_active || reg_active) {
    test_cache = extract_teacher_cache(teacher, teacher_spec, test);
    ctx.teacher_test_emb = &test_cache.embeddings;
    ctx.teacher_test_norms = &test_cache.norms;
    if (kd_active) {
      teacher_test_logits = forward_logits(teacher, teacher_spec, test_cache.embeddings);
      ctx.teacher_test_logits = &teacher_test_logits;
    }
  }

  // The adapter exists only when a feature-space term is active and the
  // student embedding width differs from the teacher's.
  DistillResult out;
  AdapterSpec aspec = AdapterSpec::make(student_spec.embedding_dim, teacher_spec.embedding_dim);
  ParamStore adapter;
  const bool use_adapter = reg_active && aspec.enabled;
  if (use_adapter) adapter = init_adapter(aspec, cfg.seed ^ kAdapterSeedTag);

  SifnStateView sifn;
  TrainResult r = run_training(student_spec, train, test, cfg, dcfg, ctx,
                               use_adapter ? &adapter : nullptr,
                               use_adapter ? &aspec : nullptr, &sifn);
  if (teacher.value_hash() != teacher_hash_before)
    throw ContractError("distill: teacher parameters changed during distillation");

  out.student = std::move(r.params);
  out.history = std::move(r.history);
  out.has_adapter = use_adapter;
  if (use_adapter) out.adapter = std::move(adapter);
  out.final_sifn = std::move(sifn);
  return out;
}

}  // namespace ndlab
