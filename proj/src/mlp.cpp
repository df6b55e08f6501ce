#include "ndlab/mlp.hpp"

#include <cmath>

#include "ndlab/errors.hpp"
#include "ndlab/rng.hpp"

namespace ndlab {

void MLPSpec::validate() const {
  if (input_dim < 1) throw ParamError("MLPSpec: input_dim must be >= 1");
  if (embedding_dim < 1) throw ParamError("MLPSpec: embedding_dim must be >= 1");
  if (num_classes < 2) throw ParamError("MLPSpec: num_classes must be >= 2");
  for (int h : hidden_dims)
    if (h < 1) throw ParamError("MLPSpec: hidden dims must be >= 1");
  if (use_2d_embedding && embedding_dim != 2)
    throw ParamError("MLPSpec: use_2d_embedding requires embedding_dim = 2");
}

namespace {

Mat he_normal(int rows, int cols, Rng& rng) {
  Mat W(rows, cols);
  const double std = std::sqrt(2.0 / rows);  // rows = fan_in
  for (auto& v : W.data) v = std * rng.next_normal();
  return W;
}

void add_bn_params(ParamStore& store, const std::string& prefix, int dim) {
  store.add(prefix + ".bn_gamma", Mat(1, dim, 1.0));
  store.add(prefix + ".bn_beta", Mat(1, dim, 0.0));
  store.add(prefix + ".bn_rmean", Mat(1, dim, 0.0), /*trainable=*/false);
  store.add(prefix + ".bn_rvar", Mat(1, dim, 1.0), /*trainable=*/false);
}

}  // namespace

ParamStore init_params(const MLPSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamStore store;
  int in = spec.input_dim;
  for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
    const int out = spec.hidden_dims[i];
    const std::string prefix = "l" + std::to_string(i);
    store.add(prefix + ".W", he_normal(in, out, rng));
    add_bn_params(store, prefix, out);
    in = out;
  }
  const std::string emb = "l" + std::to_string(spec.hidden_dims.size());
  store.add(emb + ".W", he_normal(in, spec.embedding_dim, rng));
  store.add(emb + ".b", Mat(1, spec.embedding_dim, 0.0));
  store.add("head.W", he_normal(spec.embedding_dim, spec.num_classes, rng));
  store.add("head.b", Mat(1, spec.num_classes, 0.0));
  return store;
}

Mat forward_features(ParamStore& params, const MLPSpec& spec, const Mat& X, Mode mode,
                     FeaturesCache* cache) {
  if (X.cols != spec.input_dim)
    throw ShapeError("forward_features: X is " + X.shape_str() + ", input_dim is " +
                     std::to_string(spec.input_dim));
  if (cache) {
    cache->X = X;
    cache->pre_bn.clear();
    cache->pre_act.clear();
    cache->bn.clear();
  }
  Mat h = X;
  for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
    const std::string prefix = "l" + std::to_string(i);
    Mat z = matmul(h, params.value(prefix + ".W"));
    BnCache bn;
    Mat a = mode == Mode::train
                ? batchnorm_train(z, params.value(prefix + ".bn_gamma"),
                                  params.value(prefix + ".bn_beta"), kBnEps,
                                  params.value(prefix + ".bn_rmean"),
                                  params.value(prefix + ".bn_rvar"), &bn)
                : batchnorm_eval(z, params.value(prefix + ".bn_gamma"),
                                 params.value(prefix + ".bn_beta"), kBnEps,
                                 params.value(prefix + ".bn_rmean"),
                                 params.value(prefix + ".bn_rvar"), &bn);
    if (cache) {
      cache->pre_bn.push_back(std::move(z));
      cache->pre_act.push_back(a);
      cache->bn.push_back(std::move(bn));
    }
    h = relu(a);
  }
  const std::string emb = "l" + std::to_string(spec.hidden_dims.size());
  return affine(h, params.value(emb + ".W"), params.value(emb + ".b"));
}

Mat forward_features(const ParamStore& params, const MLPSpec& spec, const Mat& X) {
  if (X.cols != spec.input_dim)
    throw ShapeError("forward_features: X is " + X.shape_str() + ", input_dim is " +
                     std::to_string(spec.input_dim));
  Mat h = X;
  for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
    const std::string prefix = "l" + std::to_string(i);
    Mat z = matmul(h, params.value(prefix + ".W"));
    Mat a = batchnorm_eval(z, params.value(prefix + ".bn_gamma"),
                           params.value(prefix + ".bn_beta"), kBnEps,
                           params.value(prefix + ".bn_rmean"),
                           params.value(prefix + ".bn_rvar"));
    h = relu(a);
  }
  const std::string emb = "l" + std::to_string(spec.hidden_dims.size());
  return affine(h, params.value(emb + ".W"), params.value(emb + ".b"));
}

Mat features_backward(ParamStore& params, const MLPSpec& spec, const FeaturesCache& cache,
                      const Mat& d_emb) {
  const std::size_t nh = spec.hidden_dims.size();
  if (cache.bn.size() != nh)
    throw ContractError("features_backward: cache does not match spec");
  // Reconstruct the embedding layer's input (relu of the last hidden
  // activation, or X when there are no hidden layers).
  Mat last_in = nh == 0 ? cache.X : relu(cache.pre_act.back());
  const std::string emb = "l" + std::to_string(nh);
  AffineGrads eg = affine_vjp(last_in, params.value(emb + ".W"), d_emb);
  params.grad(emb + ".W").add(eg.dW);
  params.grad(emb + ".b").add(eg.db);
  Mat d = std::move(eg.dX);
  for (std::size_t ri = nh; ri-- > 0;) {
    const std::string prefix = "l" + std::to_string(ri);
    Mat d_act = relu_vjp(cache.pre_act[ri], d);
    BnGrads bg = batchnorm_vjp(cache.bn[ri], params.value(prefix + ".bn_gamma"), d_act);
    params.grad(prefix + ".bn_gamma").add(bg.dgamma);
    params.grad(prefix + ".bn_beta").add(bg.dbeta);
    Mat layer_in = ri == 0 ? cache.X : relu(cache.pre_act[ri - 1]);
    MatmulGrads ag = matmul_vjp(layer_in, params.value(prefix + ".W"), bg.dX);
    params.grad(prefix + ".W").add(ag.dW);
    d = std::move(ag.dX);
  }
  return d;
}

Mat forward_logits(const ParamStore& params, const MLPSpec& spec, const Mat& emb) {
  if (emb.cols != spec.embedding_dim)
    throw ShapeError("forward_logits: emb is " + emb.shape_str() + ", embedding_dim is " +
                     std::to_string(spec.embedding_dim));
  return affine(emb, params.value("head.W"), params.value("head.b"));
}

Mat logits_backward(ParamStore& params, const MLPSpec& spec, const Mat& emb,
                    const Mat& d_logits) {
  (void)spec;
  AffineGrads g = affine_vjp(emb, params.value("head.W"), d_logits);
  params.grad("head.W").add(g.dW);
  params.grad("head.b").add(g.db);
  return std::move(g.dX);
}

ParamStore init_adapter(const AdapterSpec& spec, std::uint64_t seed) {
  if (!spec.enabled) throw ContractError("init_adapter: adapter is disabled");
  if (spec.in_dim < 1 || spec.out_dim < 1)
    throw ParamError("init_adapter: dims must be >= 1");
  Rng rng(seed);
  ParamStore store;
  store.add("adapter.W", he_normal(spec.in_dim, spec.out_dim, rng));
  add_bn_params(store, "adapter", spec.out_dim);
  return store;
}

Mat adapt(ParamStore& adapter_params, const AdapterSpec& spec, const Mat& emb_s, Mode mode,
          AdapterCache* cache) {
  if (!spec.enabled) throw ContractError("adapt: adapter is disabled");
  if (emb_s.cols != spec.in_dim)
    throw ShapeError("adapt: emb is " + emb_s.shape_str() + ", in_dim is " +
                     std::to_string(spec.in_dim));
  Mat z = matmul(emb_s, adapter_params.value("adapter.W"));
  BnCache bn;
  Mat out = mode == Mode::train
                ? batchnorm_train(z, adapter_params.value("adapter.bn_gamma"),
                                  adapter_params.value("adapter.bn_beta"), kBnEps,
                                  adapter_params.value("adapter.bn_rmean"),
                                  adapter_params.value("adapter.bn_rvar"), &bn)
                : batchnorm_eval(z, adapter_params.value("adapter.bn_gamma"),
                                 adapter_params.value("adapter.bn_beta"), kBnEps,
                                 adapter_params.value("adapter.bn_rmean"),
                                 adapter_params.value("adapter.bn_rvar"), &bn);
  if (cache) {
    cache->emb_in = emb_s;
    cache->pre_bn = std::move(z);
    cache->bn = std::move(bn);
  }
  return out;
}

Mat adapt_backward(ParamStore& adapter_params, const AdapterSpec& spec,
                   const AdapterCache& cache, const Mat& d_out) {
  if (!spec.enabled) throw ContractError("adapt_backward: adapter is disabled");
  BnGrads bg = batchnorm_vjp(cache.bn, adapter_params.value("adapter.bn_gamma"), d_out);
  adapter_params.grad("adapter.bn_gamma").add(bg.dgamma);
  adapter_params.grad("adapter.bn_beta").add(bg.dbeta);
  MatmulGrads ag = matmul_vjp(cache.emb_in, adapter_params.value("adapter.W"), bg.dX);
  adapter_params.grad("adapter.W").add(ag.dW);
  return std::move(ag.dX);
}

}  // namespace ndlab
