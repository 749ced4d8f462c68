#include <cmath>
#include <vector>

#include "actc/gradcheck.hpp"
#include "actc/model.hpp"
#include "actc/probe.hpp"
#include "actc/regularizer.hpp"
#include "doctest.h"

using namespace actc;

namespace {

constexpr std::size_t kBlank = 0;

Tensor random_matrix(std::size_t r, std::size_t c, SeededRng& rng) {
  Tensor m = Tensor::matrix(r, c);
  for (double& v : m.data) v = rng.normal();
  return m;
}

// row-stochastic attention weights
Tensor random_weights(std::size_t rows, std::size_t T, SeededRng& rng) {
  Tensor w = Tensor::matrix(rows, T);
  for (std::size_t i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < T; ++j) {
      w(i, j) = rng.uniform(0.01, 1.0);
      sum += w(i, j);
    }
    for (std::size_t j = 0; j < T; ++j) w(i, j) /= sum;
  }
  return w;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 8;
  c.vocab_size = 5;
  c.feature_dim = 6;
  return c;
}

}  // namespace

TEST_CASE("per_head_logits: one-hot attention selects frame logits") {
  SeededRng rng(1);
  CtcClassifier cls(5, 4, rng);
  for (double& v : cls.b.value.data) v = rng.normal();
  Tensor enc = random_matrix(3, 4, rng);
  Tensor w = Tensor::matrix(2, 3);
  w(0, 2) = 1.0;
  w(1, 0) = 1.0;
  Tape t;
  auto logits = per_head_logits(t, {t.constant(w)}, t.constant(enc), cls);
  Tensor fl = frame_logits(cls, enc);
  for (std::size_t c = 0; c < 5; ++c) {
    CHECK(t.val(logits[0])(0, c) == doctest::Approx(fl(2, c)).epsilon(1e-12));
    CHECK(t.val(logits[0])(1, c) == doctest::Approx(fl(0, c)).epsilon(1e-12));
  }
}

TEST_CASE("per_head_logits: matches probe-module recomputation") {
  SeededRng rng(2);
  CtcClassifier cls(5, 4, rng);
  EncoderOutput enc;
  enc.h = random_matrix(4, 4, rng);
  Tensor w0 = random_weights(3, 4, rng), w1 = random_weights(3, 4, rng);
  Tape t;
  auto logits = per_head_logits(t, {t.constant(w0), t.constant(w1)},
                                t.constant(enc.h), cls);
  for (std::size_t h = 0; h < 2; ++h) {
    const Tensor& W = h == 0 ? w0 : w1;
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<double> row(W.data.begin() + i * 4,
                              W.data.begin() + (i + 1) * 4);
      auto d = attention_context(row, enc);
      auto expect = linear_map(cls.W.value, cls.b.value, d);
      for (std::size_t c = 0; c < 5; ++c)
        CHECK(t.val(logits[h])(i, c) ==
              doctest::Approx(expect[c]).epsilon(1e-10));
    }
  }
}

TEST_CASE("focus_logits: single head identity, brute-force max, tie rule") {
  SeededRng rng(3);
  Tape t;
  Tensor a = random_matrix(2, 4, rng), b = random_matrix(2, 4, rng);
  Value va = t.constant(a), vb = t.constant(b);

  std::vector<std::size_t> prov;
  Value single = focus_logits(t, {va}, &prov);
  CHECK(t.val(single).data == a.data);
  for (std::size_t p : prov) CHECK(p == 0);

  Value both = focus_logits(t, {va, vb}, &prov);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    CHECK(t.val(both).data[i] == std::max(a.data[i], b.data[i]));
    CHECK(prov[i] == (b.data[i] > a.data[i] ? 1u : 0u));
  }

  Value same = focus_logits(t, {va, va}, &prov);
  CHECK(t.val(same).data == a.data);
  for (std::size_t p : prov) CHECK(p == 0);
}

TEST_CASE("focus_logits: provenance invariant under constant shift") {
  SeededRng rng(4);
  Tape t;
  Tensor a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng);
  std::vector<std::size_t> prov1, prov2;
  focus_logits(t, {t.constant(a), t.constant(b)}, &prov1);
  for (double& v : a.data) v += 7.25;
  for (double& v : b.data) v += 7.25;
  focus_logits(t, {t.constant(a), t.constant(b)}, &prov2);
  CHECK(prov1 == prov2);
}

TEST_CASE("attention_probability: uniform over non-blank on equal focus") {
  Tape t;
  Value q = attention_probability(t, t.constant(Tensor::matrix(2, 4, 1.3)),
                                  kBlank);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(t.val(q)(i, kBlank) == 0.0);
    for (std::size_t c = 1; c < 4; ++c)
      CHECK(t.val(q)(i, c) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("attention_probability: blank focus value has no effect") {
  SeededRng rng(5);
  Tensor f = random_matrix(2, 4, rng);
  Tape t;
  Value q1 = attention_probability(t, t.constant(f), kBlank);
  f(0, kBlank) = 1e6;
  f(1, kBlank) = -1e6;
  Value q2 = attention_probability(t, t.constant(f), kBlank);
  for (std::size_t i = 0; i < t.val(q1).data.size(); ++i)
    CHECK(t.val(q1).data[i] == doctest::Approx(t.val(q2).data[i]).epsilon(1e-15));
}

TEST_CASE("attention_probability: direct evaluation and normalization") {
  SeededRng rng(6);
  Tensor f = random_matrix(1, 4, rng);
  Tape t;
  Value q = attention_probability(t, t.constant(f), kBlank);
  double denom = std::exp(f(0, 1)) + std::exp(f(0, 2)) + std::exp(f(0, 3));
  for (std::size_t c = 1; c < 4; ++c)
    CHECK(t.val(q)(0, c) ==
          doctest::Approx(std::exp(f(0, c)) / denom).epsilon(1e-12));

  // property: rows sum to 1 over non-blank within 1e-12, blank col zero
  for (int k = 0; k < 50; ++k) {
    Tensor ff = random_matrix(3, 5, rng);
    Value qq = attention_probability(t, t.constant(ff), kBlank);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(t.val(qq)(i, kBlank) == 0.0);
      double sum = 0.0;
      for (std::size_t c = 1; c < 5; ++c) sum += t.val(qq)(i, c);
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("regularization_loss: lambda scaling and perfect focus") {
  Tape t;
  Tensor q = Tensor::from({2, 3}, {0.0, 1.0, 0.0, 0.0, 0.0, 1.0});
  Value vq = t.constant(q);
  Value zero = regularization_loss(t, vq, {1, 2}, 0.0, kBlank);
  CHECK(t.scalar_val(zero) == 0.0);
  Value perfect = regularization_loss(t, vq, {1, 2}, 0.7, kBlank);
  CHECK(t.scalar_val(perfect) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("regularization_loss: two-step hand evaluation") {
  Tape t;
  Tensor q = Tensor::from({2, 3}, {0.0, 0.3, 0.7, 0.0, 0.6, 0.4});
  double lambda = 0.4;
  Value l = regularization_loss(t, t.constant(q), {2, 1}, lambda, kBlank);
  double expect = -lambda * (std::log(0.7) + std::log(0.6));
  CHECK(t.scalar_val(l) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("regularization_loss: zero probability clamps to finite loss") {
  Tape t;
  Tensor q = Tensor::from({1, 3}, {0.0, 0.0, 1.0});
  Value l = regularization_loss(t, t.constant(q), {1}, 1.0, kBlank);
  CHECK(std::isfinite(t.scalar_val(l)));
  CHECK(t.scalar_val(l) == doctest::Approx(-std::log(kRegProbFloor)));
}

TEST_CASE("regularization_loss: rejects blank targets and misaligned rows") {
  Tape t;
  Value q = t.constant(Tensor::from({1, 3}, {0.0, 0.5, 0.5}));
  CHECK_THROWS_AS(regularization_loss(t, q, {kBlank}, 1.0, kBlank),
                  std::invalid_argument);
  CHECK_THROWS_AS(regularization_loss(t, q, {1, 2}, 1.0, kBlank),
                  std::invalid_argument);
}

TEST_CASE("build_regularization: stop-gradient on CTC parameters") {
  SeededRng rng(7);
  Model m(tiny_config(), SeededRng(11));
  CtcClassifier cls(5, 8, rng);
  for (double& v : cls.b.value.data) v = rng.normal();
  Tensor f = random_matrix(6, 6, rng);
  std::vector<std::size_t> targets = {3, 4, 3};

  for (auto& [name, p] : m.params) p.zero_grad();
  cls.W.zero_grad();
  cls.b.zero_grad();

  Tape t;
  Value enc = m.build_encoder(t, f);
  std::vector<Value> st;
  m.build_decoder(t, enc, {1, 3, 4, 3}, &st);
  RegGraph rg = build_regularization(t, st, enc, cls, targets, 0.1);
  t.backward(rg.loss);

  for (double v : cls.W.grad.data) CHECK(v == 0.0);
  for (double v : cls.b.grad.data) CHECK(v == 0.0);

  double max_attn_grad = 0.0;
  for (const char* name : {"dec.0.src.wq", "dec.0.src.wk", "enc.in_proj.w"})
    for (double v : m.param(name).grad.data)
      max_attn_grad = std::max(max_attn_grad, std::abs(v));
  CHECK(max_attn_grad > 1e-8);
}

TEST_CASE("build_regularization: gradient passes finite differences") {
  SeededRng rng(8);
  Model m(tiny_config(), SeededRng(11));
  CtcClassifier cls(5, 8, rng);
  for (double& v : cls.b.value.data) v = rng.normal();
  Tensor f = random_matrix(5, 6, rng);
  std::vector<std::size_t> targets = {3, 4};
  std::vector<Parameter*> ps;
  for (auto& [name, p] : m.params) ps.push_back(&p);
  auto loss = [&]() {
    for (Parameter* p : ps) p->zero_grad();
    Tape t;
    Value enc = m.build_encoder(t, f);
    std::vector<Value> st;
    m.build_decoder(t, enc, {1, 3, 4}, &st);
    RegGraph rg = build_regularization(t, st, enc, cls, targets, 0.3);
    t.backward(rg.loss);
    return t.scalar_val(rg.loss);
  };
  CHECK(finite_diff_check(loss, ps, 1e-5) <= 1e-4);
}

TEST_CASE("regularization loss decreases as target focus logit grows") {
  Tensor f = Tensor::from({1, 3}, {0.0, 0.5, 1.5});
  double prev = std::numeric_limits<double>::infinity();
  for (double bump = 0.0; bump < 3.0; bump += 0.5) {
    Tape t;
    Tensor ff = f;
    ff(0, 1) += bump;
    Value q = attention_probability(t, t.constant(ff), kBlank);
    Value l = regularization_loss(t, q, {1}, 1.0, kBlank);
    CHECK(t.scalar_val(l) < prev);
    prev = t.scalar_val(l);
  }
}
