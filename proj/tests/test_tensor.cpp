// SPDX-License-Identifier: Apache-2.0
#include "grad_cases.hpp"

#include <gtest/gtest.h>

using namespace mgmu;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor taped_grad(Tensor x, const std::function<Tensor(const Tensor&)>& f) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    backward(f(x));
  }
  return Tensor(x.shape(), std::vector<double>(x.grad().begin(), x.grad().end()));
}

}  // namespace

TEST(Matmul, Examples) {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(vals(matmul(eye, m)), vals(m));
  const Tensor r = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r.item(), 11.0);
  EXPECT_THROW(matmul(m, Tensor::matrix({{1, 2, 3}})), DimensionError);
}

TEST(Unary, Examples) {
  EXPECT_EQ(vals(tanh(Tensor::vector({0, 0}))), (std::vector<double>{0, 0}));
  EXPECT_EQ(sigmoid(Tensor::vector({0})).at(0), 0.5);
  // tanh(0.5) = (e - 1) / (e + 1), evaluated in long double.
  const long double e = std::exp(1.0L);
  EXPECT_NEAR(tanh(Tensor::vector({0.5})).at(0), static_cast<double>((e - 1) / (e + 1)), 1e-15);
  EXPECT_NEAR(tanh(Tensor::vector({0.5})).at(0), 0.462117, 5e-7);
  EXPECT_EQ(vals(relu(Tensor::vector({-1, 2}))), (std::vector<double>{0, 2}));
}

TEST(Binary, Examples) {
  EXPECT_EQ(vals(add(Tensor::vector({1, 2}), Tensor::vector({3, 4}))), (std::vector<double>{4, 6}));
  EXPECT_EQ(vals(mul(Tensor::vector({1, 2}), Tensor::vector({0, 0}))), (std::vector<double>{0, 0}));
  EXPECT_THROW(add(Tensor::vector({1}), Tensor::vector({1, 2})), DimensionError);
  const Tensor b = Tensor::vector({0.3, -1.7, 2.5});
  const Tensor g = taped_grad(Tensor::vector({1, 2, 3}), [&](const Tensor& a) { return sum(mul(a, b)); });
  EXPECT_EQ(vals(g), vals(b));
}

TEST(Concat, Examples) {
  const Tensor c = concat({Tensor::vector({1}), Tensor::vector({2})});
  EXPECT_EQ(vals(c), (std::vector<double>{1, 2}));
  std::mt19937_64 rng(3);
  const Tensor a = oracle::random_tensor({5}, rng), b = oracle::random_tensor({3}, rng);
  const Tensor ab = concat({a, b});
  EXPECT_EQ(ab.shape(), (Shape{8}));
  EXPECT_EQ(vals(slice(ab, 0, 0, 5)), vals(a));
  EXPECT_EQ(vals(slice(ab, 0, 5, 8)), vals(b));
  EXPECT_THROW(concat({Tensor(Shape{2, 3}), Tensor(Shape{2, 2})}, 0), DimensionError);
}

TEST(Conv1d, Examples) {
  const Tensor x(Shape{1, 5}, std::vector<double>{1, 2, 3, 4, 5});
  const Tensor k(Shape{1, 1, 2}, std::vector<double>{1, 1});
  EXPECT_EQ(vals(conv1d_dilated(x, k, 2, Padding::valid)), (std::vector<double>{4, 6, 8}));
  const Tensor id(Shape{1, 1, 1}, std::vector<double>{1});
  for (std::size_t d : {1, 4, 9}) {
    EXPECT_EQ(vals(conv1d_dilated(x, id, d, Padding::valid)), vals(x));
    EXPECT_EQ(vals(conv1d_dilated(x, id, d, Padding::same)), vals(x));
  }
  EXPECT_THROW(conv1d_dilated(x, k, 0, Padding::same), std::invalid_argument);
  EXPECT_THROW(conv1d_dilated(x, Tensor(Shape{1, 1, 3}), 3, Padding::valid), DimensionError);
}

TEST(Conv1d, MatchesNestedLoop) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cin = 1 + trial % 3, cout = 1 + trial % 4, t = 6 + trial, kk = 1 + trial % 3;
    const std::size_t dil = 1 + trial % 4;
    const Tensor x = oracle::random_tensor({cin, t}, rng), k = oracle::random_tensor({cout, cin, kk}, rng);
    for (Padding pad : {Padding::valid, Padding::same}) {
      const std::size_t span = (kk - 1) * dil;
      if (pad == Padding::valid && t < span + 1) continue;
      const std::size_t t_out = pad == Padding::valid ? t - span : t;
      const auto left = static_cast<std::ptrdiff_t>(pad == Padding::valid ? 0 : span / 2);
      const Tensor y = conv1d_dilated(x, k, dil, pad);
      ASSERT_EQ(y.shape(), (Shape{cout, t_out}));
      for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t s = 0; s < t_out; ++s) {
          double acc = 0.0;
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t j = 0; j < kk; ++j) {
              const auto src = static_cast<std::ptrdiff_t>(s + j * dil) - left;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
              acc += k.values()[(o * cin + c) * kk + j] * x.values()[c * t + static_cast<std::size_t>(src)];
            }
          }
          EXPECT_NEAR(y.at(o, s), acc, 1e-14);
        }
      }
    }
  }
}

TEST(Pool, Examples) {
  const Tensor x(Shape{1, 4}, std::vector<double>{1, 3, 2, 5});
  EXPECT_EQ(vals(pool1d(x, PoolKind::max, 2, 2)), (std::vector<double>{3, 5}));
  EXPECT_EQ(vals(pool1d(Tensor(Shape{1, 2}, std::vector<double>{2, 4}), PoolKind::mean, 2, 2)),
            (std::vector<double>{3}));
  const Tensor g = taped_grad(x, [](const Tensor& v) { return sum(pool1d(v, PoolKind::max, 2, 2)); });
  EXPECT_EQ(vals(g), (std::vector<double>{0, 1, 0, 1}));
  EXPECT_THROW(pool1d(x, PoolKind::max, 5, 1), DimensionError);
}

TEST(Dense, Examples) {
  const Tensor x = Tensor::vector({0.5, -2});
  EXPECT_EQ(vals(dense(x, Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0}))), vals(x));
  EXPECT_EQ(dense(Tensor::vector({3}), Tensor::matrix({{0}}), Tensor::vector({7})).at(0), 7.0);
}

TEST(Lstm, ZeroWeights) {
  LstmParams p{Tensor(Shape{8, 3}), Tensor(Shape{8, 2}), Tensor(Shape{8})};
  const Tensor x = Tensor::vector({0.3, -1, 2});
  auto s = lstm_step(x, lstm_zero_state(2), p);
  EXPECT_EQ(vals(s.c), (std::vector<double>{0, 0}));
  EXPECT_EQ(vals(s.h), (std::vector<double>{0, 0}));
  const Tensor c = Tensor::vector({0.8, -1.4});
  s = lstm_step(x, {Tensor::vector({0.1, 0.2}), c}, p);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(s.c.at(i), 0.5 * c.at(i));
    EXPECT_DOUBLE_EQ(s.h.at(i), 0.5 * std::tanh(0.5 * c.at(i)));
  }
}

TEST(CrossEntropy, Examples) {
  const Tensor ones = Tensor::vector({1, 1, 1});
  EXPECT_NEAR(weighted_softmax_cross_entropy(Tensor::vector({2, 2, 2}), 1, ones).item(), std::log(3.0), 1e-15);
  EXPECT_NEAR(weighted_softmax_cross_entropy(Tensor::vector({30, -30, -30}), 0, ones).item(), 0.0, 1e-24);
  const Tensor logits = Tensor::vector({0.2, -0.4, 1.1});
  const Tensor w1 = Tensor::vector({1, 1.5, 1}), w2 = Tensor::vector({1, 3, 1});
  const auto loss = [&](const Tensor& w) {
    return [&w](const Tensor& l) { return weighted_softmax_cross_entropy(l, 1, w); };
  };
  EXPECT_DOUBLE_EQ(weighted_softmax_cross_entropy(logits, 1, w2).item(),
                   2.0 * weighted_softmax_cross_entropy(logits, 1, w1).item());
  const Tensor g1 = taped_grad(logits.detach(), loss(w1)), g2 = taped_grad(logits.detach(), loss(w2));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g2.at(i), 2.0 * g1.at(i));
  EXPECT_THROW(weighted_softmax_cross_entropy(Tensor::vector({1}), 0, Tensor::vector({1})), DimensionError);
  EXPECT_THROW(weighted_softmax_cross_entropy(logits, 0, Tensor::vector({1, 0, 1})), std::invalid_argument);
}

TEST(Backward, Examples) {
  EXPECT_EQ(vals(taped_grad(Tensor::vector({4, 5, 6}), [](const Tensor& x) { return sum(x); })),
            (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(vals(taped_grad(Tensor::vector({1, 2}), [](const Tensor& x) { return sum(mul(x, x)); })),
            (std::vector<double>{2, 4}));
}

TEST(Backward, Errors) {
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad(true);
  EXPECT_THROW(backward(sum(x)), std::logic_error);  // no tape
  Tape tape;
  TapeScope scope(tape);
  Tensor v = mul(x, x);
  EXPECT_THROW(backward(v), DimensionError);
  Tensor l = sum(v);
  backward(l);
  EXPECT_THROW(backward(l), std::logic_error);
}

TEST(Backward, NoTapeSuspendsRecording) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad(true);
  const std::size_t before = tape.size();
  {
    NoTapeScope off;
    (void)sum(mul(x, x));
  }
  EXPECT_EQ(tape.size(), before);
}

TEST(Gradients, EveryOperation) {
  for (const auto& c : gradcase::tensor_cases()) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto r = c.run(seed);
      EXPECT_LT(r.max_rel_error, c.linear ? gradcase::kLinearTol : gradcase::kTol)
          << c.name << " seed " << seed << " at " << r.worst;
      EXPECT_GT(r.checked, 0u);
    }
  }
}

TEST(Gradients, MiniatureFusionNetwork) {
  for (auto variant : {MgmuVariant::as_written, MgmuVariant::complementary}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto r = gradcase::mini_fusion_check(variant, seed);
      EXPECT_LT(r.max_rel_error, gradcase::kTol) << to_string(variant) << " seed " << seed << " at " << r.worst;
    }
  }
}

TEST(Init, GlorotBounds) {
  std::mt19937_64 rng(5);
  const Tensor w = glorot_uniform({20, 30}, 30, 20, rng);
  const double limit = std::sqrt(6.0 / 50.0);
  for (double v : w.values()) EXPECT_LE(std::abs(v), limit);
  EXPECT_TRUE(w.requires_grad());
}
