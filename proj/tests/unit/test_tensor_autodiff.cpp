#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "jescore/errors.hpp"
#include "jescore/rng.hpp"
#include "jescore/tape.hpp"
#include "support/oracles.hpp"

using namespace jescore;
using namespace jescore::ad;

TEST_CASE("conv2d identity and zero kernels") {
  Rng rng(1);
  Tensor x = testing::random_tensor({1, 1, 4, 4}, rng, DType::f64);
  Tape t;
  Var xv = t.leaf(x, false);

  Var one = t.constant(Tensor::full({1, 1, 1, 1}, 1.0, DType::f64));
  Tensor same = t.value(conv2d(t, xv, one, 1, 0));
  CHECK(testing::max_rel_err(same, x) == 0.0);

  Var zero = t.constant(Tensor::zeros({2, 1, 3, 3}, DType::f64));
  Tensor z = t.value(conv2d(t, xv, zero, 1, 1));
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.at(i) == 0.0);
}

TEST_CASE("conv2d matches the nested-loop oracle to 1e-6 relative") {
  Rng rng(2);
  Tensor x = testing::random_tensor({1, 1, 5, 5}, rng, DType::f64);
  Tensor k = testing::random_tensor({1, 1, 3, 3}, rng, DType::f64);
  Tape t;
  Tensor got = t.value(conv2d(t, t.leaf(x), t.leaf(k), 1, 1));
  CHECK(testing::max_rel_err(got, testing::conv2d_reference(x, k, 1, 1)) < 1e-6);
}

TEST_CASE("conv2d rejects shape mismatches") {
  Tape t;
  Var x = t.leaf(Tensor::zeros({1, 2, 4, 4}, DType::f32));
  Var k = t.leaf(Tensor::zeros({1, 3, 3, 3}, DType::f32));
  CHECK_THROWS_AS(conv2d(t, x, k, 1, 1), UsageError);
}

TEST_CASE("gelu values against the erf oracle") {
  Tape t;
  Var x = t.leaf(Tensor::from_f64({3}, {0.0, 10.0, 1.0}));
  Tensor y = t.value(gelu(t, x));
  CHECK(y.at(0) == 0.0);
  CHECK(std::abs(y.at(1) - 10.0) < 1e-6);
  CHECK(std::abs(y.at(2) - 0.841345) < 1e-5);
}

TEST_CASE("relu basics and positive homogeneity") {
  Tape t;
  Var x = t.leaf(Tensor::from_f64({2}, {-1.0, 2.0}));
  Tensor y = t.value(relu(t, x));
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == 2.0);

  Rng rng(3);
  Tensor r = testing::random_tensor({10}, rng, DType::f64);
  Var rv = t.leaf(r);
  Tensor lhs = t.value(relu(t, scale(t, rv, 3.0)));
  Tensor rhs = t.value(scale(t, relu(t, rv), 3.0));
  CHECK(testing::max_rel_err(lhs, rhs) < 1e-14);
}

TEST_CASE("groupnorm: constant input standardizes to zero") {
  Tape t;
  Var x = t.leaf(Tensor::full({1, 4, 2, 2}, 3.25, DType::f64));
  Var gain = t.leaf(Tensor::full({4}, 1.0, DType::f64));
  Tensor y = t.value(groupnorm_biasfree(t, x, gain, 2, 1e-5));
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.at(i)) < 1e-12);
}

TEST_CASE("groupnorm: scale invariance when eps is negligible") {
  Rng rng(4);
  Tensor x = testing::random_tensor({2, 4, 3, 3}, rng, DType::f64, -5.0, 5.0);
  Tape t;
  Var gain = t.leaf(Tensor::full({4}, 1.7, DType::f64));
  Tensor a = t.value(groupnorm_biasfree(t, t.leaf(x), gain, 2, 1e-10));
  Tape t2;
  Var gain2 = t2.leaf(Tensor::full({4}, 1.7, DType::f64));
  Tensor xs = x.clone();
  for (int64_t i = 0; i < xs.numel(); ++i) xs.set(i, 2.0 * xs.at(i));
  Tensor b = t2.value(groupnorm_biasfree(t2, t2.leaf(xs), gain2, 2, 1e-10));
  CHECK(testing::max_rel_err(a, b) < 1e-5);
}

TEST_CASE("groupnorm matches direct statistics") {
  Rng rng(5);
  Tensor x = testing::random_tensor({1, 4, 2, 2}, rng, DType::f64);
  Tape t;
  Var gain = t.leaf(Tensor::full({4}, 1.0, DType::f64));
  Tensor y = t.value(groupnorm_biasfree(t, t.leaf(x), gain, 2, 1e-5));
  // Direct computation per group of two channels.
  for (int g = 0; g < 2; ++g) {
    double mean = 0;
    for (int64_t i = 0; i < 8; ++i) mean += x.at(g * 8 + i);
    mean /= 8.0;
    double var = 0;
    for (int64_t i = 0; i < 8; ++i) {
      double d = x.at(g * 8 + i) - mean;
      var += d * d;
    }
    var /= 8.0;
    for (int64_t i = 0; i < 8; ++i) {
      double want = (x.at(g * 8 + i) - mean) / std::sqrt(var + 1e-5);
      CHECK(testing::rel_err(y.at(g * 8 + i), want) < 1e-6);
    }
  }
}

TEST_CASE("linear layer: identity, zero, and explicit summation") {
  Tape t;
  Rng rng(6);
  Tensor x = testing::random_tensor({2, 3}, rng, DType::f64);
  Var xv = t.leaf(x);

  Tensor eye = Tensor::zeros({3, 3}, DType::f64);
  for (int i = 0; i < 3; ++i) eye.set(i * 3 + i, 1.0);
  Tensor same = t.value(matmul_nt(t, xv, t.leaf(eye)));
  CHECK(testing::max_rel_err(same, x) < 1e-15);

  Tensor zero = t.value(matmul_nt(t, xv, t.leaf(Tensor::zeros({4, 3}, DType::f64))));
  for (int64_t i = 0; i < zero.numel(); ++i) CHECK(zero.at(i) == 0.0);

  Tensor w = testing::random_tensor({4, 3}, rng, DType::f64);
  Tensor y = t.value(matmul_nt(t, xv, t.leaf(w)));
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      double want = x.at(i * 3 + 0) * w.at(j * 3 + 0) + x.at(i * 3 + 1) * w.at(j * 3 + 1) +
                    x.at(i * 3 + 2) * w.at(j * 3 + 2);
      CHECK(testing::rel_err(y.at(i * 4 + j), want) < 1e-13);
    }
}

TEST_CASE("logsumexp: single element, ln 2, and overflow safety") {
  Tape t;
  Tensor a = t.value(logsumexp_rows(t, t.leaf(Tensor::from_f64({1, 1}, {4.2}))));
  CHECK(std::abs(a.at(0) - 4.2) < 1e-14);
  Tensor b = t.value(logsumexp_rows(t, t.leaf(Tensor::from_f64({1, 2}, {0.0, 0.0}))));
  CHECK(std::abs(b.at(0) - std::log(2.0)) < 1e-12);
  Tensor c = t.value(logsumexp_rows(t, t.leaf(Tensor::from_f64({1, 2}, {1000.0, 1000.0}))));
  CHECK(std::isfinite(c.at(0)));
  CHECK(std::abs(c.at(0) - (1000.0 + std::log(2.0))) < 1e-10);
}

TEST_CASE("logsumexp translation identity to 1e-10") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = testing::random_tensor({3, 6}, rng, DType::f64, -3.0, 3.0);
    const double shift = rng.uniform(-10.0, 10.0);
    Tape t;
    Tensor base = t.value(logsumexp_rows(t, t.leaf(x)));
    Tensor shifted = t.value(logsumexp_rows(t, add_const(t, t.leaf(x), shift)));
    for (int64_t i = 0; i < base.numel(); ++i)
      CHECK(std::abs(shifted.at(i) - base.at(i) - shift) < 1e-10);
  }
}

TEST_CASE("grad of sum is ones; grad of half squared norm is x") {
  Rng rng(8);
  Tensor x = testing::random_tensor({5}, rng, DType::f64);
  Tape t;
  Var xv = t.leaf(x, true);
  Tensor g1 = t.value(t.grad1(sum_all(t, xv), xv));
  for (int64_t i = 0; i < 5; ++i) CHECK(g1.at(i) == 1.0);

  Tape t2;
  Var x2 = t2.leaf(x, true);
  Var half_sq = scale(t2, sumsq(t2, x2), 0.5);
  Tensor g2 = t2.value(t2.grad1(half_sq, x2));
  CHECK(testing::max_rel_err(g2, x) < 1e-14);
}

TEST_CASE("grad rejects vars from nowhere and non-scalar outputs") {
  Tape t;
  Var x = t.leaf(Tensor::from_f64({2}, {1.0, 2.0}), true);
  CHECK_THROWS_AS(t.grad1(x, x), UsageError);  // non-scalar output
  CHECK_THROWS_AS(t.grad1(Var{99}, x), UsageError);
}

TEST_CASE("per-primitive gradients match central differences over many seeds") {
  // Worst-case relative error across 20 seeds for each primitive chain.
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 31 + 1);

    Tensor x = testing::random_tensor({2, 3, 5, 5}, rng, DType::f64);
    CHECK(testing::gradcheck(
              [](Tape& t, Var v) { return sum_all(t, gelu(t, v)); }, x) < 1e-4);
    CHECK(testing::gradcheck(
              [](Tape& t, Var v) { return sumsq(t, v); }, x) < 1e-4);
    CHECK(testing::gradcheck(
              [](Tape& t, Var v) { return sum_all(t, avg_pool2(t, v)); }, x) < 1e-4);
    CHECK(testing::gradcheck(
              [](Tape& t, Var v) { return sumsq(t, channel_tile(t, v, 2)); }, x) < 1e-4);
    CHECK(testing::gradcheck(
              [](Tape& t, Var v) { return sumsq(t, global_avg_pool(t, v)); }, x) < 1e-4);
    CHECK(testing::gradcheck(
              [](Tape& t, Var v) { return sum_all(t, max_pool(t, v, 3, 2, 1)); }, x) < 1e-4);

    Tensor k = testing::random_tensor({4, 3, 3, 3}, rng, DType::f64);
    CHECK(testing::gradcheck(
              [&](Tape& t, Var v) {
                return sumsq(t, conv2d(t, v, t.leaf(k), 1, 1));
              },
              x) < 1e-4);
    CHECK(testing::gradcheck(
              [&](Tape& t, Var kk) {
                return sumsq(t, conv2d(t, t.leaf(x), kk, 2, 1));
              },
              k) < 1e-4);

    // Note: sumsq of a standardized output is nearly input-independent, so
    // the functional composes a nonlinearity to keep gradients O(1).
    Tensor gain = testing::random_tensor({3}, rng, DType::f64, 0.5, 2.0);
    CHECK(testing::gradcheck(
              [&](Tape& t, Var v) {
                return sumsq(t, gelu(t, groupnorm_biasfree(t, v, t.leaf(gain), 3, 1e-5)));
              },
              x) < 1e-4);
    CHECK(testing::gradcheck(
              [&](Tape& t, Var gg) {
                return sumsq(t, gelu(t, groupnorm_biasfree(t, t.leaf(x), gg, 3, 1e-5)));
              },
              gain) < 1e-4);

    Tensor logits = testing::random_tensor({4, 5}, rng, DType::f64, -3.0, 3.0);
    CHECK(testing::gradcheck(
              [](Tape& t, Var v) { return sumsq(t, logsumexp_rows(t, v)); }, logits) < 1e-4);
    CHECK(testing::gradcheck(
              [](Tape& t, Var v) {
                return sum_all(t, take_class(t, v, {0, 2, 4, 1}));
              },
              logits) < 1e-4);

    Tensor m = testing::random_tensor({3, 4}, rng, DType::f64);
    Tensor w = testing::random_tensor({5, 4}, rng, DType::f64);
    CHECK(testing::gradcheck(
              [&](Tape& t, Var v) { return sumsq(t, matmul_nt(t, v, t.leaf(w))); }, m) < 1e-4);
    CHECK(testing::gradcheck(
              [&](Tape& t, Var v) { return sumsq(t, matmul_nt(t, t.leaf(m), v)); }, w) < 1e-4);

    Tensor s = testing::random_tensor({2}, rng, DType::f64, 0.5, 2.0);
    CHECK(testing::gradcheck(
              [&](Tape& t, Var v) { return sumsq(t, row_scale(t, v, t.leaf(s))); }, x) < 1e-4);
  }
}

TEST_CASE("conv2d and linear are exactly linear maps") {
  Rng rng(10);
  Tensor x1 = testing::random_tensor({1, 2, 4, 4}, rng, DType::f64);
  Tensor x2 = testing::random_tensor({1, 2, 4, 4}, rng, DType::f64);
  Tensor k = testing::random_tensor({3, 2, 3, 3}, rng, DType::f64);
  const double a = 1.5, b = -2.25;
  Tape t;
  Var kv = t.leaf(k);
  Var combo = add(t, scale(t, t.leaf(x1), a), scale(t, t.leaf(x2), b));
  Tensor lhs = t.value(conv2d(t, combo, kv, 1, 1));
  Tensor rhs_a = t.value(conv2d(t, t.leaf(x1), kv, 1, 1));
  Tensor rhs_b = t.value(conv2d(t, t.leaf(x2), kv, 1, 1));
  for (int64_t i = 0; i < lhs.numel(); ++i)
    CHECK(testing::rel_err(lhs.at(i), a * rhs_a.at(i) + b * rhs_b.at(i)) < 1e-12);
}

TEST_CASE("double backprop: gradient-containing losses differentiate correctly") {
  // loss(x) = || d/dx q(x) ||^2 with q = -(w . gelu-features)^2 / 2 style
  // chain exercises second-order paths through mul, gelu, matmul and conv.
  Rng rng(11);
  Tensor x = testing::random_tensor({1, 1, 4, 4}, rng, DType::f64);
  Tensor k = testing::random_tensor({2, 1, 3, 3}, rng, DType::f64);

  auto inner_score_loss = [&](Tape& t, Var xv) {
    Var kv = t.leaf(k);
    Var h = gelu(t, conv2d(t, xv, kv, 1, 1));
    Var q = scale(t, sumsq(t, h), -0.5);
    Var score = t.grad1(q, xv);
    return sumsq(t, score);
  };
  CHECK(testing::gradcheck(inner_score_loss, x) < 1e-4);

  // Same loss, differentiated with respect to the kernel parameters.
  auto param_loss = [&](Tape& t, Var kv) {
    Var xv = t.leaf(x, true);
    Var h = gelu(t, conv2d(t, xv, kv, 1, 1));
    Var q = scale(t, sumsq(t, h), -0.5);
    Var score = t.grad1(q, xv);
    return sumsq(t, score);
  };
  CHECK(testing::gradcheck(param_loss, k) < 1e-4);

  // And through group normalization.
  Tensor gain = testing::random_tensor({2}, rng, DType::f64, 0.5, 1.5);
  auto gn_loss = [&](Tape& t, Var xv) {
    Var kv = t.leaf(k);
    Var h = groupnorm_biasfree(t, conv2d(t, xv, kv, 1, 1), t.leaf(gain), 2, 1e-5);
    Var q = scale(t, sumsq(t, gelu(t, h)), -0.5);
    Var score = t.grad1(q, xv);
    return sumsq(t, score);
  };
  CHECK(testing::gradcheck(gn_loss, x) < 1e-4);
}

TEST_CASE("tape replay determinism: identical runs give bitwise-equal gradients") {
  Rng rng(12);
  Tensor x = testing::random_tensor({2, 2, 4, 4}, rng, DType::f32);
  Tensor k = testing::random_tensor({2, 2, 3, 3}, rng, DType::f32);
  auto run = [&]() {
    Tape t;
    Var xv = t.leaf(x, true);
    Var h = gelu(t, conv2d(t, xv, t.leaf(k), 1, 1));
    return t.value(t.grad1(sumsq(t, h), xv));
  };
  Tensor g1 = run();
  Tensor g2 = run();
  for (int64_t i = 0; i < g1.numel(); ++i)
    CHECK(g1.data<float>()[static_cast<size_t>(i)] == g2.data<float>()[static_cast<size_t>(i)]);
}
