#include <cmath>
#include <limits>
#include <vector>

#include "actc/ctc.hpp"
#include "actc/gradcheck.hpp"
#include "actc/rng.hpp"
#include "doctest.h"

using namespace actc;

namespace {

Tensor random_log_probs(std::size_t T, std::size_t C, SeededRng& rng) {
  Tensor lp = Tensor::matrix(T, C);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> logits(C);
    for (double& v : logits) v = rng.normal(0.0, 2.0);
    auto p = softmax_row(logits);
    for (std::size_t c = 0; c < C; ++c) lp(t, c) = std::log(p[c]);
  }
  return lp;
}

constexpr std::size_t kBlank = 0;

}  // namespace

TEST_CASE("frame_logits: identity classifier passes frames through") {
  SeededRng rng(1);
  CtcClassifier cls(3, 3, rng);
  cls.W.value.fill(0.0);
  for (int i = 0; i < 3; ++i) cls.W.value(i, i) = 1.0;
  cls.b.value.fill(0.0);
  Tensor frames = Tensor::from({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.5, 0.0});
  Tensor out = frame_logits(cls, frames);
  CHECK(out.data == frames.data);
}

TEST_CASE("frame_logits: rowwise recomputation on random case") {
  SeededRng rng(2);
  CtcClassifier cls(3, 3, rng);
  for (double& v : cls.b.value.data) v = rng.normal();
  Tensor frames = Tensor::matrix(4, 3);
  for (double& v : frames.data) v = rng.normal();
  Tensor out = frame_logits(cls, frames);
  for (std::size_t t = 0; t < 4; ++t) {
    std::vector<double> x = {frames(t, 0), frames(t, 1), frames(t, 2)};
    auto row = linear_map(cls.W.value, cls.b.value, x);
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(out(t, c) == doctest::Approx(row[c]).epsilon(1e-15));
  }
}

TEST_CASE("frame_logits: width mismatch") {
  SeededRng rng(3);
  CtcClassifier cls(3, 4, rng);
  CHECK_THROWS_AS(frame_logits(cls, Tensor::matrix(2, 3)),
                  std::invalid_argument);
}

TEST_CASE("ctc_loss: T=1 single path") {
  SeededRng rng(4);
  Tensor lp = random_log_probs(1, 3, rng);
  auto res = ctc_loss(lp, {1}, kBlank);
  CHECK(res.neg_log_likelihood == doctest::Approx(-lp(0, 1)).epsilon(1e-12));
}

TEST_CASE("ctc_loss: T=2 one label sums three paths") {
  SeededRng rng(5);
  Tensor lp = random_log_probs(2, 3, rng);
  auto pa = [&](std::size_t t, std::size_t c) { return std::exp(lp(t, c)); };
  double expect =
      pa(0, 1) * pa(1, 1) + pa(0, kBlank) * pa(1, 1) + pa(0, 1) * pa(1, kBlank);
  auto res = ctc_loss(lp, {1}, kBlank);
  CHECK(res.neg_log_likelihood ==
        doctest::Approx(-std::log(expect)).epsilon(1e-12));
}

TEST_CASE("ctc_loss: repeat label needs separator frame") {
  SeededRng rng(6);
  Tensor lp = random_log_probs(2, 3, rng);
  CHECK_THROWS_AS(ctc_loss(lp, {1, 1}, kBlank), InfeasibleAlignmentError);
}

TEST_CASE("ctc_loss: blank in labels rejected") {
  SeededRng rng(7);
  Tensor lp = random_log_probs(3, 3, rng);
  CHECK_THROWS_AS(ctc_loss(lp, {1, kBlank}, kBlank), std::invalid_argument);
}

TEST_CASE("ctc_loss_brute_force: T=3 repeated label has single path") {
  SeededRng rng(8);
  Tensor lp = random_log_probs(3, 2, rng);
  double nll = ctc_loss_brute_force(lp, {1, 1}, kBlank);
  double expect = -(lp(0, 1) + lp(1, kBlank) + lp(2, 1));
  CHECK(nll == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ctc_loss_brute_force: unreachable labels give +inf") {
  SeededRng rng(9);
  Tensor lp = random_log_probs(2, 3, rng);
  CHECK(ctc_loss_brute_force(lp, {1, 2, 1}, kBlank) ==
        std::numeric_limits<double>::infinity());
}

TEST_CASE("ctc_loss_brute_force: refuses huge instances") {
  Tensor lp = Tensor::matrix(30, 10);
  CHECK_THROWS_AS(ctc_loss_brute_force(lp, {1}, kBlank),
                  std::invalid_argument);
}

TEST_CASE("ctc_loss: oracle equivalence on random tiny instances") {
  SeededRng rng(10);
  int checked = 0;
  for (int k = 0; k < 300; ++k) {
    std::size_t T = 1 + rng.uniform_int(0, 4);
    std::size_t C = 2 + rng.uniform_int(0, 1);
    std::size_t L = rng.uniform_int(0, 3);
    std::vector<std::size_t> labels(L);
    for (auto& l : labels) l = 1 + rng.uniform_int(0, C - 2);
    Tensor lp = random_log_probs(T, C, rng);
    double oracle;
    try {
      oracle = ctc_loss_brute_force(lp, labels, kBlank);
    } catch (const std::invalid_argument&) {
      continue;
    }
    if (std::isinf(oracle)) {
      CHECK_THROWS(ctc_loss(lp, labels, kBlank));
      continue;
    }
    auto res = ctc_loss(lp, labels, kBlank);
    CHECK(res.neg_log_likelihood == doctest::Approx(oracle).epsilon(1e-9));
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("ctc_loss: gradient passes finite differences") {
  SeededRng rng(11);
  std::size_t T = 5, C = 4;
  Parameter lp(random_log_probs(T, C, rng));
  std::vector<std::size_t> labels = {1, 2, 2};
  auto loss = [&]() {
    lp.zero_grad();
    auto res = ctc_loss(lp.value, labels, kBlank);
    lp.grad = res.grad;
    return res.neg_log_likelihood;
  };
  CHECK(finite_diff_check(loss, {&lp}, 1e-6) <= 1e-6);
}

TEST_CASE("ctc_loss: permutation covariance of non-blank relabeling") {
  SeededRng rng(12);
  Tensor lp = random_log_probs(5, 4, rng);
  // swap token columns 1 and 3, relabel accordingly
  Tensor lp2 = lp;
  for (std::size_t t = 0; t < 5; ++t) std::swap(lp2(t, 1), lp2(t, 3));
  double a = ctc_loss(lp, {1, 2, 3}, kBlank).neg_log_likelihood;
  double b = ctc_loss(lp2, {3, 2, 1}, kBlank).neg_log_likelihood;
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("ctc_loss: feasibility is monotone in T") {
  SeededRng rng(13);
  std::vector<std::size_t> labels = {1, 1, 2};
  for (std::size_t T = 1; T <= 8; ++T) {
    Tensor lp = random_log_probs(T, 3, rng);
    bool ok = true;
    try {
      ctc_loss(lp, labels, kBlank);
    } catch (const InfeasibleAlignmentError&) {
      ok = false;
    }
    CHECK(ok == (T >= 4));  // L=3 plus one adjacent repeat
  }
}

TEST_CASE("greedy_collapse_decode: collapse and blank removal") {
  // argmax path a a eps a  ->  a a
  Tensor lp = Tensor::from({4, 2}, {-1.0, -0.1, -1.0, -0.1,  //
                                    -0.1, -1.0, -1.0, -0.1});
  CHECK(greedy_collapse_decode(lp, kBlank) == std::vector<std::size_t>{1, 1});
}

TEST_CASE("greedy_collapse_decode: all-blank path is empty") {
  Tensor lp = Tensor::from({3, 2}, {-0.1, -1.0, -0.1, -1.0, -0.1, -1.0});
  CHECK(greedy_collapse_decode(lp, kBlank).empty());
}

TEST_CASE("greedy_collapse_decode: matches hand-applied rule") {
  SeededRng rng(14);
  Tensor lp = random_log_probs(6, 4, rng);
  std::vector<std::size_t> path;
  for (std::size_t t = 0; t < 6; ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 4; ++c)
      if (lp(t, c) > lp(t, best)) best = c;
    path.push_back(best);
  }
  std::vector<std::size_t> expect;
  for (std::size_t t = 0; t < path.size(); ++t) {
    if (t > 0 && path[t] == path[t - 1]) continue;
    if (path[t] == kBlank) continue;
    expect.push_back(path[t]);
  }
  CHECK(greedy_collapse_decode(lp, kBlank) == expect);
}

TEST_CASE("ctc_loss_node: value and gradient match the plain loss") {
  SeededRng rng(15);
  Parameter logits(Tensor::matrix(4, 3));
  for (double& v : logits.value.data) v = rng.normal();
  std::vector<std::size_t> labels = {1, 2};
  auto loss = [&]() {
    logits.zero_grad();
    Tape t;
    Value l = t.leaf(logits, kGradFromCtc);
    Value lp = t.log_softmax_rows(l);
    Value nll = ctc_loss_node(t, lp, labels, kBlank);
    t.backward(nll);
    return t.scalar_val(nll);
  };
  CHECK(finite_diff_check(loss, {&logits}, 1e-6) <= 1e-7);
}
