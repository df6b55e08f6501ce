#pragma once

#include <string>
#include <vector>

#include "ndlab/ops.hpp"
#include "ndlab/params.hpp"

namespace ndlab {

struct MLPSpec {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int embedding_dim = 0;
  int num_classes = 0;
  bool use_2d_embedding = false;

  void validate() const;
};

// Parameter names: hidden layer i gets "l{i}.W", "l{i}.bn_gamma",
// "l{i}.bn_beta", plus non-trainable "l{i}.bn_rmean" / "l{i}.bn_rvar" (no
// bias: batchnorm re-centers, so a bias there is a dead parameter). The
// embedding layer gets "l{n}.W" / "l{n}.b"; the classifier head "head.W" /
// "head.b".
ParamStore init_params(const MLPSpec& spec, std::uint64_t seed);

inline constexpr double kBnEps = 1e-5;

// Per-layer activations retained for the backward pass.
struct FeaturesCache {
  Mat X{0, 0};
  std::vector<Mat> pre_bn;   // affine outputs of hidden layers
  std::vector<Mat> pre_act;  // batchnorm outputs (relu inputs)
  std::vector<BnCache> bn;
};

// Hidden layers are affine -> batchnorm -> relu; the embedding layer is a
// bare affine so embeddings can take any sign and norm. Train mode uses and
// updates batchnorm batch statistics; eval mode reads the running stats.
Mat forward_features(ParamStore& params, const MLPSpec& spec, const Mat& X, Mode mode,
                     FeaturesCache* cache = nullptr);
// Eval-only overload for frozen models (no running-stat writes possible).
Mat forward_features(const ParamStore& params, const MLPSpec& spec, const Mat& X);

// Accumulates parameter gradients into params.grad and returns dX.
Mat features_backward(ParamStore& params, const MLPSpec& spec, const FeaturesCache& cache,
                      const Mat& d_emb);

Mat forward_logits(const ParamStore& params, const MLPSpec& spec, const Mat& emb);
// Accumulates head gradients; returns gradient w.r.t. emb.
Mat logits_backward(ParamStore& params, const MLPSpec& spec, const Mat& emb, const Mat& d_logits);

struct AdapterSpec {
  int in_dim = 0;
  int out_dim = 0;
  bool enabled = false;

  static AdapterSpec make(int in_dim, int out_dim) {
    return AdapterSpec{in_dim, out_dim, in_dim != out_dim};
  }
};

// Parameter names: "adapter.W", "adapter.bn_gamma", "adapter.bn_beta",
// non-trainable "adapter.bn_rmean" / "adapter.bn_rvar" (no bias; batchnorm
// follows directly).
ParamStore init_adapter(const AdapterSpec& spec, std::uint64_t seed);

struct AdapterCache {
  Mat emb_in{0, 0};
  Mat pre_bn{0, 0};
  BnCache bn;
};

// Affine then batchnorm. Distillation runs it in train mode; eval mode is
// provided for inspection tooling.
Mat adapt(ParamStore& adapter_params, const AdapterSpec& spec, const Mat& emb_s, Mode mode,
          AdapterCache* cache = nullptr);
Mat adapt_backward(ParamStore& adapter_params, const AdapterSpec& spec,
                   const AdapterCache& cache, const Mat& d_out);

}  // namespace ndlab
