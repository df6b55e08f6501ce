#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ndlab/errors.hpp"
#include "ndlab/mlp.hpp"
#include "ndlab/rng.hpp"

using namespace ndlab;

namespace {

MLPSpec small_spec() {
  MLPSpec s;
  s.input_dim = 4;
  s.hidden_dims = {6, 5};
  s.embedding_dim = 3;
  s.num_classes = 2;
  return s;
}

Mat rand_mat(int r, int c, Rng& rng) {
  Mat m(r, c);
  for (auto& v : m.data) v = rng.next_normal();
  return m;
}

}  // namespace

TEST_CASE("parameter naming and shapes") {
  MLPSpec spec = small_spec();
  ParamStore p = init_params(spec, 1);

  // Hidden layers: matmul weight + batchnorm, no bias (it would be cancelled
  // by the batchnorm mean subtraction).
  const std::vector<std::string> expected{
      "l0.W", "l0.bn_gamma", "l0.bn_beta", "l0.bn_rmean", "l0.bn_rvar",
      "l1.W", "l1.bn_gamma", "l1.bn_beta", "l1.bn_rmean", "l1.bn_rvar",
      "l2.W", "l2.b", "head.W", "head.b"};
  REQUIRE(p.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(p.entries()[i].name == expected[i]);

  CHECK(!p.has("l0.b"));
  CHECK(!p.has("l1.b"));
  CHECK(p.value("l0.W").rows == 4);
  CHECK(p.value("l0.W").cols == 6);
  CHECK(p.value("l1.W").rows == 6);
  CHECK(p.value("l1.W").cols == 5);
  CHECK(p.value("l2.W").rows == 5);
  CHECK(p.value("l2.W").cols == 3);
  CHECK(p.value("l2.b").cols == 3);
  CHECK(p.value("head.W").rows == 3);
  CHECK(p.value("head.W").cols == 2);

  CHECK(!p.trainable("l0.bn_rmean"));
  CHECK(!p.trainable("l0.bn_rvar"));
  CHECK(p.trainable("l0.bn_gamma"));

  // Same seed reproduces the exact initialization; another seed differs.
  CHECK(init_params(spec, 1).value_hash() == p.value_hash());
  CHECK(init_params(spec, 2).value_hash() != p.value_hash());
}

TEST_CASE("spec validation") {
  MLPSpec bad = small_spec();
  bad.input_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = small_spec();
  bad.num_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = small_spec();
  bad.hidden_dims = {4, 0};
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = small_spec();
  bad.use_2d_embedding = true;  // embedding_dim is 3
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad.embedding_dim = 2;
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("forward shapes and eval purity") {
  MLPSpec spec = small_spec();
  ParamStore p = init_params(spec, 7);
  Rng rng(3);
  Mat X = rand_mat(8, 4, rng);

  const std::uint64_t before = p.value_hash();
  Mat emb_eval = forward_features(static_cast<const ParamStore&>(p), spec, X);
  CHECK(emb_eval.rows == 8);
  CHECK(emb_eval.cols == 3);
  CHECK(p.value_hash() == before);  // eval path cannot write running stats

  Mat logits = forward_logits(p, spec, emb_eval);
  CHECK(logits.rows == 8);
  CHECK(logits.cols == 2);

  // The mutable overload in eval mode matches the const one bitwise.
  Mat emb_eval2 = forward_features(p, spec, X, Mode::eval);
  CHECK(emb_eval2 == emb_eval);
  CHECK(p.value_hash() == before);

  // Train mode differs (batch statistics) and updates the running stats.
  Mat emb_train = forward_features(p, spec, X, Mode::train);
  CHECK(!(emb_train == emb_eval));
  CHECK(p.value_hash() != before);

  Mat wrong(8, 5, 0.0);
  CHECK_THROWS_AS(forward_features(p, spec, wrong, Mode::eval), ShapeError);
}

TEST_CASE("adapter spec enables itself only across widths") {
  CHECK(!AdapterSpec::make(8, 8).enabled);
  CHECK(AdapterSpec::make(8, 16).enabled);

  AdapterSpec a = AdapterSpec::make(3, 5);
  ParamStore p = init_adapter(a, 9);
  const std::vector<std::string> expected{"adapter.W", "adapter.bn_gamma", "adapter.bn_beta",
                                          "adapter.bn_rmean", "adapter.bn_rvar"};
  REQUIRE(p.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(p.entries()[i].name == expected[i]);
  CHECK(p.value("adapter.W").rows == 3);
  CHECK(p.value("adapter.W").cols == 5);

  Rng rng(4);
  Mat emb = rand_mat(6, 3, rng);
  Mat out = adapt(p, a, emb, Mode::train);
  CHECK(out.rows == 6);
  CHECK(out.cols == 5);

  // Eval mode is deterministic and leaves parameters untouched.
  const std::uint64_t before = p.value_hash();
  Mat e1 = adapt(p, a, emb, Mode::eval);
  Mat e2 = adapt(p, a, emb, Mode::eval);
  CHECK(e1 == e2);
  CHECK(p.value_hash() == before);
}

TEST_CASE("head gradients flow through logits_backward") {
  MLPSpec spec = small_spec();
  ParamStore p = init_params(spec, 5);
  Rng rng(6);
  Mat emb = rand_mat(4, 3, rng);
  Mat d_logits = rand_mat(4, 2, rng);

  p.zero_grads();
  Mat d_emb = logits_backward(p, spec, emb, d_logits);
  CHECK(d_emb.rows == 4);
  CHECK(d_emb.cols == 3);

  // head.b gradient is the column sum of d_logits.
  for (int j = 0; j < 2; ++j) {
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += d_logits(i, j);
    CHECK(p.grad("head.b")(0, j) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("train forward caches support the backward pass") {
  MLPSpec spec = small_spec();
  ParamStore p = init_params(spec, 11);
  Rng rng(12);
  Mat X = rand_mat(6, 4, rng);

  FeaturesCache cache;
  Mat emb = forward_features(p, spec, X, Mode::train, &cache);
  REQUIRE(cache.pre_bn.size() == 2);
  REQUIRE(cache.pre_act.size() == 2);
  REQUIRE(cache.bn.size() == 2);

  p.zero_grads();
  Mat d_emb(emb.rows, emb.cols, 1.0);
  Mat dX = features_backward(p, spec, cache, d_emb);
  CHECK(dX.rows == 6);
  CHECK(dX.cols == 4);

  // Every trainable tensor received some gradient signal.
  for (const auto& e : p.entries()) {
    if (!e.trainable || e.name.rfind("head", 0) == 0) continue;
    double mass = 0.0;
    for (double g : e.grad.data) mass += std::abs(g);
    CHECK(mass > 0.0);
  }
}
