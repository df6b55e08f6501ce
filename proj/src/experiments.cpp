#include "ndlab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ndlab/checkpoint.hpp"
#include "ndlab/csvio.hpp"
#include "ndlab/errors.hpp"
#include "ndlab/metrics.hpp"
#include "ndlab/rng.hpp"

namespace ndlab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.data.mixture = MixtureSpec{10, 16, 200, 10.0, 0.5, 7};

  cfg.teacher.spec.hidden_dims = {128, 128};
  cfg.teacher.spec.embedding_dim = 16;
  cfg.teacher.train.epochs = 30;
  cfg.teacher.train.batch_size = 64;
  cfg.teacher.train.lr_initial = 0.1;
  cfg.teacher.train.lr_milestones = {19, 23, 26};
  cfg.teacher.train.lr_decay = 0.1;
  cfg.teacher.train.lr_warmup_epochs = 2;
  cfg.teacher.train.momentum = 0.9;
  cfg.teacher.train.weight_decay = 5e-4;
  cfg.teacher.train.seed = 11;

  cfg.student.spec.hidden_dims = {8};
  cfg.student.spec.embedding_dim = 16;
  cfg.student.train = cfg.teacher.train;
  cfg.student.train.epochs = 60;
  cfg.student.train.lr_initial = 0.05;
  cfg.student.train.lr_milestones = {38, 45, 53};
  cfg.student.train.seed = 1;

  cfg.distill.ce_weight = 1.0;
  cfg.distill.alpha = 1.0;
  cfg.distill.beta = 2.0;
  cfg.distill.tau = 4.0;
  cfg.distill.m = 0.0;
  cfg.distill.kd_variant = KdVariant::kl;
  cfg.distill.reg_variant = RegVariant::nd;
  cfg.distill.sifn_r = 0.5;
  cfg.distill.kd_warmup_epochs = 2;
  return cfg;
}

namespace {

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, const std::string& where, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void parse_train(const json& j, const std::string& where, TrainConfig& out) {
  check_keys(j, where,
             {"epochs", "batch_size", "lr", "milestones", "lr_decay", "warmup_epochs",
              "momentum", "weight_decay", "seed"});
  read_field(j, "epochs", where, out.epochs);
  read_field(j, "batch_size", where, out.batch_size);
  read_field(j, "lr", where, out.lr_initial);
  read_field(j, "milestones", where, out.lr_milestones);
  read_field(j, "lr_decay", where, out.lr_decay);
  read_field(j, "warmup_epochs", where, out.lr_warmup_epochs);
  read_field(j, "momentum", where, out.momentum);
  read_field(j, "weight_decay", where, out.weight_decay);
  read_field(j, "seed", where, out.seed);
}

void parse_model(const json& j, const std::string& where, ModelConfig& out) {
  check_keys(j, where, {"hidden", "embedding_dim", "use_2d_embedding", "train"});
  read_field(j, "hidden", where, out.spec.hidden_dims);
  read_field(j, "embedding_dim", where, out.spec.embedding_dim);
  read_field(j, "use_2d_embedding", where, out.spec.use_2d_embedding);
  if (out.spec.use_2d_embedding) out.spec.embedding_dim = 2;
  if (j.contains("train")) parse_train(j.at("train"), where + ".train", out.train);
}

void parse_data(const json& j, const std::string& where, DataConfig& out) {
  std::string kind = out.from_csv ? "csv" : "mixture";
  read_field(j, "kind", where, kind);
  if (kind == "mixture") {
    out.from_csv = false;
    check_keys(j, where,
               {"kind", "classes", "dim", "per_class", "separation", "noise_std", "seed"});
    read_field(j, "classes", where, out.mixture.C);
    read_field(j, "dim", where, out.mixture.D);
    read_field(j, "per_class", where, out.mixture.n_per_class);
    read_field(j, "separation", where, out.mixture.separation);
    read_field(j, "noise_std", where, out.mixture.noise_std);
    read_field(j, "seed", where, out.mixture.seed);
  } else if (kind == "csv") {
    out.from_csv = true;
    check_keys(j, where, {"kind", "train_path", "test_path", "classes"});
    read_field(j, "train_path", where, out.train_path);
    read_field(j, "test_path", where, out.test_path);
    read_field(j, "classes", where, out.csv_classes);
    if (out.train_path.empty() || out.test_path.empty())
      throw ConfigError(where + ": csv data needs train_path and test_path");
  } else {
    throw ConfigError(where + ".kind: expected 'mixture' or 'csv', got '" + kind + "'");
  }
}

void parse_distill(const json& j, const std::string& where, DistillConfig& out) {
  check_keys(j, where,
             {"ce_weight", "alpha", "beta", "tau", "m", "kd", "reg", "sifn_r",
              "kd_warmup_epochs"});
  read_field(j, "ce_weight", where, out.ce_weight);
  read_field(j, "alpha", where, out.alpha);
  read_field(j, "beta", where, out.beta);
  read_field(j, "tau", where, out.tau);
  read_field(j, "m", where, out.m);
  if (j.contains("kd")) out.kd_variant = kd_variant_from_string(j.at("kd").get<std::string>());
  if (j.contains("reg"))
    out.reg_variant = reg_variant_from_string(j.at("reg").get<std::string>());
  read_field(j, "sifn_r", where, out.sifn_r);
  read_field(j, "kd_warmup_epochs", where, out.kd_warmup_epochs);
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  ExperimentConfig cfg = default_experiment_config();
  check_keys(j, origin,
             {"data", "teacher", "student", "distill", "means_strategy", "seeds", "out_dir"});
  if (j.contains("data")) parse_data(j.at("data"), origin + ".data", cfg.data);
  if (j.contains("teacher")) parse_model(j.at("teacher"), origin + ".teacher", cfg.teacher);
  if (j.contains("student")) parse_model(j.at("student"), origin + ".student", cfg.student);
  if (j.contains("distill")) parse_distill(j.at("distill"), origin + ".distill", cfg.distill);
  if (j.contains("means_strategy"))
    cfg.means_strategy = mean_strategy_from_string(j.at("means_strategy").get<std::string>());
  read_field(j, "seeds", origin, cfg.seeds);
  read_field(j, "out_dir", origin, cfg.out_dir);
  if (cfg.seeds.empty()) throw ConfigError(origin + ".seeds: must be non-empty");
  cfg.distill.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Study preparation
// ---------------------------------------------------------------------------

StudyContext prepare_study(const ExperimentConfig& cfg) {
  StudyContext ctx;
  ctx.cfg = cfg;
  if (cfg.data.from_csv) {
    ctx.train = load_data_csv(cfg.data.train_path, false, cfg.data.csv_classes);
    ctx.test = load_data_csv(cfg.data.test_path, false,
                             cfg.data.csv_classes > 0 ? cfg.data.csv_classes : ctx.train.C);
    if (ctx.test.C > ctx.train.C)
      throw DataError("test split has labels outside the training class space");
    ctx.test.C = ctx.train.C;
  } else {
    auto [train, test] = make_mixture(cfg.data.mixture);
    ctx.train = std::move(train);
    ctx.test = std::move(test);
  }
  require_all_classes(ctx.train, "training split");

  ctx.cfg.teacher.spec.input_dim = ctx.train.dim();
  ctx.cfg.teacher.spec.num_classes = ctx.train.C;
  ctx.cfg.student.spec.input_dim = ctx.train.dim();
  ctx.cfg.student.spec.num_classes = ctx.train.C;
  ctx.cfg.teacher.spec.validate();
  ctx.cfg.student.spec.validate();

  TrainResult teacher = train_teacher(ctx.cfg.teacher.spec, ctx.train, ctx.test,
                                      ctx.cfg.teacher.train);
  ctx.teacher = std::move(teacher.params);
  ctx.teacher_history = std::move(teacher.history);
  ctx.cache = extract_teacher_cache(ctx.teacher, ctx.cfg.teacher.spec, ctx.train);
  ctx.means = build_class_means(ctx.cache, ctx.train.C, cfg.means_strategy);
  return ctx;
}

DistillResult run_distill_seed(const StudyContext& ctx, const DistillConfig& dcfg,
                               std::uint64_t seed) {
  TrainConfig cfg = ctx.cfg.student.train;
  cfg.seed = seed;
  return distill(ctx.teacher, ctx.cfg.teacher.spec, ctx.cfg.student.spec, ctx.train, ctx.test,
                 cfg, dcfg, ctx.means, ctx.cache);
}

RunSummary summarize_run(const std::vector<MetricsRecord>& history) {
  RunSummary s;
  for (const auto& r : history) {
    if (r.split == "test") s.top1 = r.top1;
    if (r.split == "train") {
      s.mean_norm = r.mean_norm;
      s.mean_angle_deg = r.mean_angle_deg;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Gradient-check suite
// ---------------------------------------------------------------------------

namespace {

constexpr double kGradCheckStep = 1e-5;

Mat rand_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (auto& v : m.data) v = scale * rng.next_normal();
  return m;
}

// Push every entry away from the relu kink at 0.
Mat rand_mat_off_zero(int r, int c, Rng& rng, double margin) {
  Mat m = rand_mat(r, c, rng);
  for (auto& v : m.data) v += v >= 0.0 ? margin : -margin;
  return m;
}

double weighted_sum(const Mat& y, const Mat& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * weights.data[i];
  return s;
}

ClassMeanTable toy_table(int c, int d, Rng& rng) {
  ClassMeanTable t;
  t.means = rand_mat(c, d, rng, 2.0);
  t.unit_dirs = Mat(c, d);
  t.counts.assign(static_cast<std::size_t>(c), 1);
  for (int k = 0; k < c; ++k) {
    const double norm = t.means.row_norm(k);
    for (int j = 0; j < d; ++j) t.unit_dirs(k, j) = t.means(k, j) / norm;
  }
  return t;
}

// Scale each row of F so its norm sits well inside one regime relative to the
// paired teacher norm (alternating small / large).
void set_regime_norms(Mat& F, std::vector<double>& teacher_norms, double m) {
  teacher_norms.assign(static_cast<std::size_t>(F.rows), 2.0);
  for (int i = 0; i < F.rows; ++i) {
    const double boundary = teacher_norms[static_cast<std::size_t>(i)] * (1.0 + m);
    const double target = (i % 2 == 0) ? 0.5 * boundary : 1.7 * boundary;
    const double norm = F.row_norm(i);
    const double scale = target / norm;
    double* row = F.row_ptr(i);
    for (int j = 0; j < F.cols; ++j) row[j] *= scale;
  }
}

GradCheckReport check_simple_loss(
    Mat input, const std::function<LossResult(const Mat&)>& loss, bool inject_fault) {
  ParamStore store;
  store.add("input", std::move(input));
  auto fn = [&loss, inject_fault](ParamStore& p) {
    LossResult r = loss(p.value("input"));
    p.grad("input") = r.grad;
    if (inject_fault) p.grad("input").data[0] += 0.01;
    return r.value;
  };
  return finite_diff_check(fn, store, kGradCheckStep);
}

GradCheckReport check_affine() {
  Rng rng(101);
  ParamStore store;
  store.add("X", rand_mat(4, 3, rng));
  store.add("W", rand_mat(3, 5, rng));
  store.add("b", rand_mat(1, 5, rng));
  const Mat J = rand_mat(4, 5, rng);
  auto fn = [&J](ParamStore& p) {
    Mat y = affine(p.value("X"), p.value("W"), p.value("b"));
    AffineGrads g = affine_vjp(p.value("X"), p.value("W"), J);
    p.grad("X") = g.dX;
    p.grad("W") = g.dW;
    p.grad("b") = g.db;
    return weighted_sum(y, J);
  };
  return finite_diff_check(fn, store, kGradCheckStep);
}

GradCheckReport check_relu() {
  Rng rng(102);
  ParamStore store;
  store.add("X", rand_mat_off_zero(4, 5, rng, 0.2));
  const Mat J = rand_mat(4, 5, rng);
  auto fn = [&J](ParamStore& p) {
    Mat y = relu(p.value("X"));
    p.grad("X") = relu_vjp(p.value("X"), J);
    return weighted_sum(y, J);
  };
  return finite_diff_check(fn, store, kGradCheckStep);
}

GradCheckReport check_batchnorm() {
  Rng rng(103);
  ParamStore store;
  store.add("X", rand_mat(6, 4, rng));
  Mat gamma = rand_mat(1, 4, rng, 0.1);
  for (auto& v : gamma.data) v += 1.0;
  store.add("gamma", std::move(gamma));
  store.add("beta", rand_mat(1, 4, rng, 0.1));
  const Mat J = rand_mat(6, 4, rng);
  auto fn = [&J](ParamStore& p) {
    Mat rm(1, 4), rv(1, 4, 1.0);  // fresh stats per call keep the fn pure
    BnCache cache;
    Mat y = batchnorm_train(p.value("X"), p.value("gamma"), p.value("beta"), kBnEps, rm, rv,
                            &cache);
    BnGrads g = batchnorm_vjp(cache, p.value("gamma"), J);
    p.grad("X") = g.dX;
    p.grad("gamma") = g.dgamma;
    p.grad("beta") = g.dbeta;
    return weighted_sum(y, J);
  };
  return finite_diff_check(fn, store, kGradCheckStep);
}

GradCheckReport check_ce(bool inject_fault) {
  Rng rng(104);
  const std::vector<int> labels{0, 2, 1, 3, 2};
  return check_simple_loss(
      rand_mat(5, 4, rng, 2.0),
      [labels](const Mat& logits) { return ce_loss(logits, labels); }, inject_fault);
}

GradCheckReport check_kd_kl() {
  Rng rng(105);
  Mat z_t = rand_mat(5, 4, rng, 2.0);
  return check_simple_loss(rand_mat(5, 4, rng, 2.0), [z_t](const Mat& z_s) {
    return kd_kl_loss(z_s, z_t, 4.0);
  }, false);
}

GradCheckReport check_l2_feature() {
  Rng rng(106);
  Mat f_t = rand_mat(6, 4, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  return check_simple_loss(rand_mat(6, 4, rng), [f_t, labels](const Mat& f_s) {
    return l2_feature_loss(f_s, f_t, labels);
  }, false);
}

GradCheckReport check_sifn() {
  Rng rng(107);
  Mat f = rand_mat_off_zero(5, 4, rng, 0.3);
  const std::vector<double> prev{1.0, 2.0, 0.5, 1.5, 3.0};
  return check_simple_loss(std::move(f), [prev](const Mat& f_s) {
    return sifn_loss(prev, f_s, 0.5);
  }, false);
}

GradCheckReport check_cosine() {
  Rng rng(108);
  ClassMeanTable table = toy_table(3, 4, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  return check_simple_loss(rand_mat_off_zero(6, 4, rng, 0.3),
                           [table, labels](const Mat& f_s) {
                             return cosine_direction_loss(f_s, table, labels);
                           }, false);
}

GradCheckReport check_infonce() {
  Rng rng(109);
  ClassMeanTable table = toy_table(4, 5, rng);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1};
  return check_simple_loss(rand_mat_off_zero(6, 5, rng, 0.3),
                           [table, labels](const Mat& f_s) {
                             return infonce_direction_loss(f_s, table, labels);
                           }, false);
}

GradCheckReport check_nd(double m, std::uint64_t seed) {
  Rng rng(seed);
  ClassMeanTable table = toy_table(3, 4, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  Mat f = rand_mat(6, 4, rng);
  std::vector<double> teacher_norms;
  set_regime_norms(f, teacher_norms, m);
  return check_simple_loss(std::move(f), [table, labels, teacher_norms, m](const Mat& f_s) {
    NdResult r = nd_loss(f_s, teacher_norms, table, labels, m);
    return LossResult{r.value, std::move(r.grad)};
  }, false);
}

// Save/restore batchnorm running stats so probing stays pure.
class StatGuard {
 public:
  explicit StatGuard(ParamStore& store) : store_(store) {
    for (const auto& e : store.entries())
      if (!e.trainable) saved_.emplace_back(e.name, e.value);
  }
  ~StatGuard() {
    for (auto& [name, value] : saved_) store_.value(name) = value;
  }

 private:
  ParamStore& store_;
  std::vector<std::pair<std::string, Mat>> saved_;
};

GradCheckReport check_mlp_features() {
  MLPSpec spec;
  spec.input_dim = 4;
  spec.hidden_dims = {5};
  spec.embedding_dim = 3;
  spec.num_classes = 3;
  ParamStore store = init_params(spec, 110);
  Rng rng(111);
  const Mat X = rand_mat(6, 4, rng);
  const Mat J = rand_mat(6, 3, rng);
  auto fn = [&](ParamStore& p) {
    StatGuard guard(p);
    p.zero_grads();
    FeaturesCache cache;
    Mat emb = forward_features(p, spec, X, Mode::train, &cache);
    features_backward(p, spec, cache, J);
    return weighted_sum(emb, J);
  };
  return finite_diff_check(fn, store, kGradCheckStep);
}

GradCheckReport check_mlp_ce() {
  MLPSpec spec;
  spec.input_dim = 4;
  spec.hidden_dims = {5};
  spec.embedding_dim = 3;
  spec.num_classes = 3;
  ParamStore store = init_params(spec, 112);
  Rng rng(113);
  const Mat X = rand_mat(6, 4, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  auto fn = [&](ParamStore& p) {
    StatGuard guard(p);
    p.zero_grads();
    FeaturesCache cache;
    Mat emb = forward_features(p, spec, X, Mode::train, &cache);
    Mat logits = forward_logits(p, spec, emb);
    LossResult ce = ce_loss(logits, labels);
    Mat d_emb = logits_backward(p, spec, emb, ce.grad);
    features_backward(p, spec, cache, d_emb);
    return ce.value;
  };
  return finite_diff_check(fn, store, kGradCheckStep);
}

GradCheckReport check_adapter_nd() {
  AdapterSpec aspec = AdapterSpec::make(3, 4);
  ParamStore store = init_adapter(aspec, 114);
  Rng rng(115);
  const Mat emb = rand_mat(6, 3, rng);
  ClassMeanTable table = toy_table(3, 4, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  // Batchnormed rows have norm near 2; 8.0 keeps the small regime, 0.3 the
  // large one, both far from the boundary.
  const std::vector<double> teacher_norms{8.0, 0.3, 8.0, 0.3, 8.0, 0.3};
  auto fn = [&](ParamStore& p) {
    StatGuard guard(p);
    p.zero_grads();
    AdapterCache cache;
    Mat out = adapt(p, aspec, emb, Mode::train, &cache);
    NdResult nd = nd_loss(out, teacher_norms, table, labels, 0.3);
    adapt_backward(p, aspec, cache, nd.grad);
    return nd.value;
  };
  return finite_diff_check(fn, store, kGradCheckStep);
}

GradCheckReport check_full_objective() {
  MLPSpec spec;
  spec.input_dim = 4;
  spec.hidden_dims = {5};
  spec.embedding_dim = 3;
  spec.num_classes = 3;
  ParamStore store = init_params(spec, 116);
  Rng rng(117);
  const Mat X = rand_mat(6, 4, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  const Mat z_t = rand_mat(6, 3, rng, 2.0);
  ClassMeanTable table = toy_table(3, 3, rng);
  // Embedding norms stay near 2, so 6.0 pins the small regime.
  const std::vector<double> teacher_norms(6, 6.0);
  DistillConfig dcfg;
  dcfg.alpha = 1.0;
  dcfg.beta = 2.0;
  dcfg.tau = 4.0;
  dcfg.m = 0.0;
  auto fn = [&](ParamStore& p) {
    StatGuard guard(p);
    p.zero_grads();
    FeaturesCache cache;
    Mat emb = forward_features(p, spec, X, Mode::train, &cache);
    Mat logits = forward_logits(p, spec, emb);
    LossResult ce = ce_loss(logits, labels);
    LossResult kd = kd_kl_loss(logits, z_t, dcfg.tau);
    NdResult nd = nd_loss(emb, teacher_norms, table, labels, dcfg.m);
    Mat d_logits(logits.rows, logits.cols);
    for (std::size_t k = 0; k < d_logits.data.size(); ++k)
      d_logits.data[k] = ce.grad.data[k] + dcfg.alpha * kd.grad.data[k];
    Mat d_emb = logits_backward(p, spec, emb, d_logits);
    for (std::size_t k = 0; k < d_emb.data.size(); ++k)
      d_emb.data[k] += dcfg.beta * nd.grad.data[k];
    features_backward(p, spec, cache, d_emb);
    return total_objective(ce.value, kd.value, nd.value, dcfg, 0);
  };
  return finite_diff_check(fn, store, kGradCheckStep);
}

}  // namespace

std::vector<NamedGradCheck> run_gradcheck_suite(bool inject_fault) {
  std::vector<NamedGradCheck> out;
  out.push_back({"affine", check_affine()});
  out.push_back({"relu", check_relu()});
  out.push_back({"batchnorm", check_batchnorm()});
  out.push_back({"mlp_features", check_mlp_features()});
  out.push_back({"adapter_nd", check_adapter_nd()});
  out.push_back({"ce", check_ce(inject_fault)});
  out.push_back({"kd_kl", check_kd_kl()});
  out.push_back({"l2_feature", check_l2_feature()});
  out.push_back({"sifn", check_sifn()});
  out.push_back({"cosine", check_cosine()});
  out.push_back({"infonce", check_infonce()});
  out.push_back({"nd", check_nd(0.0, 118)});
  out.push_back({"nd_m_scaled", check_nd(0.7, 119)});
  out.push_back({"mlp_ce", check_mlp_ce()});
  out.push_back({"full_objective", check_full_objective()});
  return out;
}

// ---------------------------------------------------------------------------
// Experiment protocols
// ---------------------------------------------------------------------------

double reg_weight_scale(RegVariant reg) {
  // The squared-distance term (scale ||f_s - f_t||^2, roughly x100 the
  // bounded direction terms) and the norm-expansion term (a constant-size
  // radial force on every example, compounding under momentum) destabilize
  // desk-scale training at full weight, so settings that contain them run at
  // a reduced weight. Combined settings already halve each sub-term, so they
  // get twice the pure-term scale.
  switch (reg) {
    case RegVariant::l2:
    case RegVariant::sifn:
      return 0.025;
    case RegVariant::cosine_l2:
    case RegVariant::cosine_sifn:
    case RegVariant::infonce_l2:
    case RegVariant::infonce_sifn:
      return 0.05;
    default:
      return 1.0;
  }
}

void parallel_for(int jobs, int n, const std::function<void(int)>& fn) {
  if (jobs < 1) throw ParamError("parallel_for: jobs must be >= 1");
  if (jobs == 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&]() {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::min(jobs, n);
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<AblationSetting> ablation_settings(const DistillConfig& base) {
  auto with = [&base](double ce_w, KdVariant kd, RegVariant reg) {
    DistillConfig d = base;
    d.ce_weight = ce_w;
    d.kd_variant = kd;
    d.reg_variant = reg;
    d.beta = base.beta * reg_weight_scale(reg);
    return d;
  };
  return {
      {"ce_kl", with(1.0, KdVariant::kl, RegVariant::none)},
      {"ce_kl_l2", with(1.0, KdVariant::kl, RegVariant::l2)},
      {"ce_kl_sifn", with(1.0, KdVariant::kl, RegVariant::sifn)},
      {"ce_kl_cosine", with(1.0, KdVariant::kl, RegVariant::cosine)},
      {"ce_kl_infonce", with(1.0, KdVariant::kl, RegVariant::infonce)},
      {"ce_kl_cosine_l2", with(1.0, KdVariant::kl, RegVariant::cosine_l2)},
      {"ce_kl_cosine_sifn", with(1.0, KdVariant::kl, RegVariant::cosine_sifn)},
      {"ce_kl_infonce_l2", with(1.0, KdVariant::kl, RegVariant::infonce_l2)},
      {"ce_kl_infonce_sifn", with(1.0, KdVariant::kl, RegVariant::infonce_sifn)},
      {"ce_nd", with(1.0, KdVariant::none, RegVariant::nd)},
      {"kl_nd", with(0.0, KdVariant::kl, RegVariant::nd)},
      {"ce_kl_nd", with(1.0, KdVariant::kl, RegVariant::nd)},
  };
}

namespace {

struct GridEntry {
  std::string setting;
  double value = 0.0;
  DistillConfig dcfg;
};

StudyTable run_grid(const StudyContext& ctx, const std::vector<GridEntry>& grid, int jobs) {
  std::vector<std::uint64_t> seeds = ctx.cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  const int n_seeds = static_cast<int>(seeds.size());
  const int total = static_cast<int>(grid.size()) * n_seeds;
  StudyTable table;
  table.rows.resize(static_cast<std::size_t>(total));
  parallel_for(jobs, total, [&](int t) {
    const auto gi = static_cast<std::size_t>(t / n_seeds);
    const auto si = static_cast<std::size_t>(t % n_seeds);
    DistillResult res;
    try {
      res = run_distill_seed(ctx, grid[gi].dcfg, seeds[si]);
    } catch (const DivergenceError& e) {
      throw DivergenceError("setting " + grid[gi].setting + " (value " +
                            format_double(grid[gi].value) + ", seed " +
                            std::to_string(seeds[si]) + "): " + e.what());
    }
    SeedRow row;
    row.setting = grid[gi].setting;
    row.value = grid[gi].value;
    row.seed = seeds[si];
    row.summary = summarize_run(res.history);
    table.rows[static_cast<std::size_t>(t)] = std::move(row);
  });
  table.summaries = summarize_rows(table.rows);
  return table;
}

}  // namespace

std::vector<SummaryRow> summarize_rows(const std::vector<SeedRow>& rows) {
  // Group by (setting, value): sweeps reuse one setting name across values.
  std::vector<SummaryRow> out;
  std::vector<std::pair<std::string, double>> order;
  for (const auto& r : rows) {
    const std::pair<std::string, double> key{r.setting, r.value};
    if (std::find(order.begin(), order.end(), key) == order.end()) order.push_back(key);
  }
  for (const auto& key : order) {
    std::vector<const SeedRow*> group;
    for (const auto& r : rows)
      if (r.setting == key.first && r.value == key.second) group.push_back(&r);
    SummaryRow s;
    s.setting = key.first;
    s.value = key.second;
    const double n = static_cast<double>(group.size());
    for (const SeedRow* r : group) {
      s.mean.top1 += r->summary.top1 / n;
      s.mean.mean_norm += r->summary.mean_norm / n;
      s.mean.mean_angle_deg += r->summary.mean_angle_deg / n;
    }
    for (const SeedRow* r : group) {
      const double dt = r->summary.top1 - s.mean.top1;
      const double dn = r->summary.mean_norm - s.mean.mean_norm;
      const double da = r->summary.mean_angle_deg - s.mean.mean_angle_deg;
      s.stddev.top1 += dt * dt / n;
      s.stddev.mean_norm += dn * dn / n;
      s.stddev.mean_angle_deg += da * da / n;
    }
    s.stddev.top1 = std::sqrt(s.stddev.top1);
    s.stddev.mean_norm = std::sqrt(s.stddev.mean_norm);
    s.stddev.mean_angle_deg = std::sqrt(s.stddev.mean_angle_deg);
    out.push_back(std::move(s));
  }
  return out;
}

StudyTable cmd_ablation(const StudyContext& ctx, int jobs) {
  std::vector<GridEntry> grid;
  for (auto& s : ablation_settings(ctx.cfg.distill))
    grid.push_back({s.name, 0.0, s.dcfg});
  return run_grid(ctx, grid, jobs);
}

SensitivityResult cmd_sensitivity(const StudyContext& ctx, const std::vector<double>& beta_grid,
                                  const std::vector<double>& alpha_grid, int jobs) {
  if (beta_grid.empty() || alpha_grid.empty())
    throw ParamError("cmd_sensitivity: grids must be non-empty");
  SensitivityResult result;
  std::vector<GridEntry> stage1;
  for (double beta : beta_grid) {
    DistillConfig d = ctx.cfg.distill;
    d.alpha = 1.0;
    d.beta = beta;
    d.validate();
    stage1.push_back({"beta", beta, d});
  }
  result.beta_stage = run_grid(ctx, stage1, jobs);

  // Highest mean top-1 wins; ties go to the smaller beta.
  double best_beta = 0.0, best_top1 = -1.0;
  bool found = false;
  for (const auto& s : result.beta_stage.summaries) {
    if (!found || s.mean.top1 > best_top1 ||
        (s.mean.top1 == best_top1 && s.value < best_beta)) {
      best_beta = s.value;
      best_top1 = s.mean.top1;
      found = true;
    }
  }
  result.best_beta = best_beta;

  std::vector<GridEntry> stage2;
  for (double alpha : alpha_grid) {
    DistillConfig d = ctx.cfg.distill;
    d.alpha = alpha;
    d.beta = best_beta;
    d.validate();
    stage2.push_back({"alpha", alpha, d});
  }
  result.alpha_stage = run_grid(ctx, stage2, jobs);
  return result;
}

StudyTable cmd_msweep(const StudyContext& ctx, const std::vector<double>& m_values, int jobs) {
  if (m_values.empty()) throw ParamError("cmd_msweep: m grid must be non-empty");
  std::vector<GridEntry> grid;
  for (double m : m_values) {
    DistillConfig d = ctx.cfg.distill;
    d.reg_variant = RegVariant::nd;
    d.m = m;
    d.validate();  // rejects m <= -1
    grid.push_back({"m", m, d});
  }
  return run_grid(ctx, grid, jobs);
}

StudyTable cmd_sifn_sweep(const StudyContext& ctx, const std::vector<double>& r_values,
                          int jobs) {
  if (r_values.empty()) throw ParamError("cmd_sifn_sweep: r grid must be non-empty");
  std::vector<GridEntry> grid;
  for (double r : r_values) {
    DistillConfig d = ctx.cfg.distill;
    d.reg_variant = RegVariant::sifn;
    d.beta = ctx.cfg.distill.beta * reg_weight_scale(RegVariant::sifn);
    d.sifn_r = r;
    d.validate();  // rejects r <= 0
    grid.push_back({"r", r, d});
  }
  return run_grid(ctx, grid, jobs);
}

StudyTable cmd_trials(const StudyContext& ctx, int jobs) {
  if (ctx.cfg.seeds.size() < 2)
    throw ConfigError("cmd_trials: need at least 2 seeds for mean/std reporting");
  std::vector<GridEntry> grid{{"default", 0.0, ctx.cfg.distill}};
  return run_grid(ctx, grid, jobs);
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

namespace {

// Shared layout: optional setting column, optional value column, then seed and
// metric columns. Summary rows carry seed="summary" and fill the std columns;
// per-seed rows leave them empty.
void write_study_table(const StudyTable& table, const std::string& path,
                       const std::string& setting_col, const std::string& value_col) {
  CsvTable t;
  if (!setting_col.empty()) t.header.push_back(setting_col);
  if (!value_col.empty()) t.header.push_back(value_col);
  for (const char* c : {"seed", "top1", "mean_norm", "mean_angle_deg", "top1_std",
                        "mean_norm_std", "mean_angle_deg_std"})
    t.header.push_back(c);

  auto row_for = [&](const std::string& setting, double value, const std::string& seed,
                     const RunSummary& mean, const RunSummary* stddev) {
    std::vector<std::string> row;
    if (!setting_col.empty()) row.push_back(setting);
    if (!value_col.empty()) row.push_back(format_double(value));
    row.push_back(seed);
    row.push_back(format_double(mean.top1));
    row.push_back(format_double(mean.mean_norm));
    row.push_back(format_double(mean.mean_angle_deg));
    if (stddev) {
      row.push_back(format_double(stddev->top1));
      row.push_back(format_double(stddev->mean_norm));
      row.push_back(format_double(stddev->mean_angle_deg));
    } else {
      row.insert(row.end(), {"", "", ""});
    }
    t.rows.push_back(std::move(row));
  };

  for (const auto& s : table.summaries) {
    for (const auto& r : table.rows) {
      if (r.setting != s.setting || r.value != s.value) continue;
      row_for(r.setting, r.value, std::to_string(r.seed), r.summary, nullptr);
    }
    row_for(s.setting, s.value, "summary", s.mean, &s.stddev);
  }
  write_csv(path, t);
}

}  // namespace

void write_ablation_csv(const StudyTable& table, const std::string& path) {
  write_study_table(table, path, "setting", "");
}

void write_msweep_csv(const StudyTable& table, const std::string& path) {
  write_study_table(table, path, "", "m");
}

void write_sifn_sweep_csv(const StudyTable& table, const std::string& path) {
  write_study_table(table, path, "", "r");
}

void write_trials_csv(const StudyTable& table, const std::string& path) {
  write_study_table(table, path, "", "");
}

void write_sensitivity_csv(const SensitivityResult& result, const std::string& path) {
  CsvTable t;
  t.header = {"stage", "value", "seed", "top1", "mean_norm", "mean_angle_deg",
              "top1_std", "mean_norm_std", "mean_angle_deg_std"};
  auto emit = [&t](const StudyTable& stage) {
    for (const auto& s : stage.summaries) {
      for (const auto& r : stage.rows) {
        if (r.setting != s.setting || r.value != s.value) continue;
        t.rows.push_back({r.setting, format_double(r.value), std::to_string(r.seed),
                          format_double(r.summary.top1), format_double(r.summary.mean_norm),
                          format_double(r.summary.mean_angle_deg), "", "", ""});
      }
      t.rows.push_back({s.setting, format_double(s.value), "summary",
                        format_double(s.mean.top1), format_double(s.mean.mean_norm),
                        format_double(s.mean.mean_angle_deg), format_double(s.stddev.top1),
                        format_double(s.stddev.mean_norm),
                        format_double(s.stddev.mean_angle_deg)});
    }
  };
  emit(result.beta_stage);
  emit(result.alpha_stage);
  t.rows.push_back({"best_beta", format_double(result.best_beta), "", "", "", "", "", "", ""});
  write_csv(path, t);
}

// ---------------------------------------------------------------------------
// Checkpoints and dumps
// ---------------------------------------------------------------------------

void save_model(const std::string& path, const MLPSpec& spec, const ParamStore& params) {
  json header;
  header["input_dim"] = spec.input_dim;
  header["hidden_dims"] = spec.hidden_dims;
  header["embedding_dim"] = spec.embedding_dim;
  header["num_classes"] = spec.num_classes;
  header["use_2d_embedding"] = spec.use_2d_embedding;
  save_checkpoint(path, header.dump(), params);
}

LoadedModel load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  json header;
  try {
    header = json::parse(ck.header);
  } catch (const json::exception& e) {
    throw IoError(path + ": bad checkpoint header: " + e.what());
  }
  LoadedModel m;
  try {
    m.spec.input_dim = header.at("input_dim").get<int>();
    m.spec.hidden_dims = header.at("hidden_dims").get<std::vector<int>>();
    m.spec.embedding_dim = header.at("embedding_dim").get<int>();
    m.spec.num_classes = header.at("num_classes").get<int>();
    m.spec.use_2d_embedding = header.at("use_2d_embedding").get<bool>();
  } catch (const json::exception& e) {
    throw IoError(path + ": bad checkpoint header: " + e.what());
  }
  m.spec.validate();
  m.params = std::move(ck.params);
  return m;
}

void cmd_dump_embeddings(const std::string& checkpoint_path, const LabeledData& data,
                         const std::string& out_csv) {
  if (data.n() == 0) throw DataError("cmd_dump_embeddings: empty dataset");
  LoadedModel model = load_model(checkpoint_path);
  LabeledData dump;
  dump.X = forward_features(model.params, model.spec, data.X);
  dump.y = data.y;
  dump.C = data.C;
  save_data_csv(dump, out_csv);
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ParamError("spearman: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw ParamError("spearman: need at least 2 points");
  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&v](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += ra[i] / static_cast<double>(n);
    mb += rb[i] / static_cast<double>(n);
  }
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0)
    throw SingularityError("spearman: constant input has no rank correlation");
  return cov / std::sqrt(va * vb);
}

}  // namespace ndlab
