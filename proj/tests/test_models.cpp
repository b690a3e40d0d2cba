// SPDX-License-Identifier: Apache-2.0
#include "grad_cases.hpp"

#include <gtest/gtest.h>

using namespace mgmu;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

MgmuParams random_mgmu(std::size_t d1, std::size_t d2, std::size_t dh, MgmuVariant v, std::mt19937_64& rng) {
  return {oracle::random_tensor({dh, d1}, rng), oracle::random_tensor({dh, d2}, rng),
          oracle::random_tensor({dh, d1 + d2}, rng), v};
}

TextGrid grid_with(std::vector<std::size_t> lengths, std::size_t w_max, std::size_t e, std::mt19937_64& rng) {
  TextGrid g;
  g.values = Tensor(Shape{lengths.size(), w_max, e});
  g.sentence_lengths = lengths;
  auto v = g.values.mutable_values();
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t s = 0; s < lengths.size(); ++s)
    for (std::size_t w = 0; w < lengths[s]; ++w)
      for (std::size_t k = 0; k < e; ++k) v[(s * w_max + w) * e + k] = u(rng);
  return g;
}

}  // namespace

TEST(Mgmu, ZeroInputsGiveZero) {
  std::mt19937_64 rng(1);
  for (auto v : {MgmuVariant::as_written, MgmuVariant::complementary}) {
    const auto p = random_mgmu(4, 3, 5, v, rng);
    const auto r = mgmu_forward(Tensor(Shape{4}), Tensor(Shape{3}), p);
    for (double x : r.h.values()) EXPECT_EQ(x, 0.0);
  }
}

TEST(Mgmu, HandExample) {
  for (auto v : {MgmuVariant::as_written, MgmuVariant::complementary}) {
    const MgmuParams p{Tensor::matrix({{1}}), Tensor::matrix({{1}}), Tensor::matrix({{0, 0}}), v};
    const auto r = mgmu_forward(Tensor::vector({0.5}), Tensor::vector({-0.5}), p);
    EXPECT_EQ(r.z.at(0), 0.5);
    EXPECT_EQ(r.h.at(0), 0.0);
  }
}

TEST(Mgmu, AsWrittenIdentity) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_mgmu(6, 4, 5, MgmuVariant::as_written, rng);
    const auto r = mgmu_forward(oracle::random_tensor({6}, rng), oracle::random_tensor({4}, rng), p);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(r.h.at(i), r.z.at(i) * (r.h1.at(i) + r.h2.at(i)), 1e-15);
  }
}

TEST(Mgmu, ComplementaryWithZeroGateAverages) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_mgmu(3, 7, 4, MgmuVariant::complementary, rng);
    p.wz = Tensor(Shape{4, 10});
    const auto r = mgmu_forward(oracle::random_tensor({3}, rng), oracle::random_tensor({7}, rng), p);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.h.at(i), 0.5 * (r.h1.at(i) + r.h2.at(i)), 1e-15);
  }
}

TEST(Mgmu, GateSaturation) {
  std::mt19937_64 rng(4);
  // Positive inputs and a positive gate matrix so Wz·[x1, x2] > 0 in every row.
  const Tensor x1 = oracle::random_tensor({3}, rng, 0.1, 1.0), x2 = oracle::random_tensor({2}, rng, 0.1, 1.0);
  for (auto v : {MgmuVariant::as_written, MgmuVariant::complementary}) {
    auto p = random_mgmu(3, 2, 4, v, rng);
    p.wz = oracle::random_tensor({4, 5}, rng, 0.1, 1.0);
    for (auto& w : p.wz.mutable_values()) w *= 1e6;
    const auto r = mgmu_forward(x1, x2, p);
    for (std::size_t i = 0; i < 4; ++i) {
      double h1 = 0.0, h2 = 0.0;
      for (std::size_t k = 0; k < 3; ++k) h1 += p.w1.at(i, k) * x1.at(k);
      for (std::size_t k = 0; k < 2; ++k) h2 += p.w2.at(i, k) * x2.at(k);
      const double expect = v == MgmuVariant::complementary ? std::tanh(h1) : std::tanh(h1) + std::tanh(h2);
      EXPECT_NEAR(r.h.at(i), expect, 1e-6);
    }
  }
}

TEST(Mgmu, ShapeErrors) {
  std::mt19937_64 rng(5);
  const auto p = random_mgmu(3, 2, 4, MgmuVariant::complementary, rng);
  EXPECT_THROW(mgmu_forward(Tensor(Shape{2}), Tensor(Shape{2}), p), DimensionError);
  EXPECT_THROW(variant_from_string("gated"), std::invalid_argument);
}

TEST(SegmentNet, ShapesPerModality) {
  ModelConfig cfg;
  std::mt19937_64 rng(6);
  for (auto m : {Modality::audio, Modality::video}) {
    StsCnn net(m, cfg, rng);
    const std::size_t c = m == Modality::audio ? 8 : 10, d = m == Modality::audio ? 50 : 45;
    const Tensor x = oracle::random_tensor({c * c, d + 1}, rng);
    const auto out = net.segment.forward(x);
    EXPECT_EQ(out.logits.shape(), (Shape{3}));
    EXPECT_EQ(out.embedding.shape(), (Shape{128}));
    const auto p = softmax(out.logits.values());
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    EXPECT_THROW(net.segment.forward(Tensor(Shape{c * c, d})), DimensionError);
  }
}

TEST(SessionNet, MaskAndPooling) {
  ModelConfig cfg;
  std::mt19937_64 rng(7);
  SessionNet net(6, cfg.session, 3, rng);
  const Tensor e = oracle::random_tensor({1, 6}, rng);
  const Tensor one = net.forward(e);
  EXPECT_EQ(one.shape(), (Shape{3}));

  // A single real row among padded rows gives the same logits wherever it sits.
  Tensor padded = concat({e, oracle::random_tensor({2, 6}, rng)});
  const auto a = net.forward(padded, {true, false, false});
  Tensor moved = concat({oracle::random_tensor({1, 6}, rng), oracle::random_tensor({1, 6}, rng), e});
  const auto b = net.forward(moved, {false, false, true});
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(a.at(i), one.at(i), 1e-14);
    EXPECT_NEAR(b.at(i), one.at(i), 1e-14);
  }
  EXPECT_THROW(net.forward(e, {false}), std::invalid_argument);
}

TEST(SessionNet, DuplicatedSegmentsUnderKernelOne) {
  // With a width-1 convolution, [e; e] and [e] pool to the same mean.
  SessionNetConfig sc;
  sc.kernel = 1;
  std::mt19937_64 rng(8);
  SessionNet net(5, sc, 3, rng);
  const Tensor e = oracle::random_tensor({1, 5}, rng);
  const auto a = net.forward(e), b = net.forward(concat({e, e}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-14);
}

TEST(TextNet, SingleSentenceAndPadding) {
  ModelConfig cfg;
  cfg.embedding_dim = 6;
  std::mt19937_64 rng(9);
  TextNet net(cfg, rng);
  const TextGrid g = grid_with({4}, 5, 6, rng);
  const auto out = net.forward(g);
  EXPECT_EQ(out.logits.shape(), (Shape{3}));
  EXPECT_EQ(out.latent.shape(), (Shape{64}));

  // Sequence length one: latent is one LSTM step on the pooled sentence.
  const auto& p = net.params();
  Tensor x = sentence_matrix(g, 0);
  x = relu(add_channel_bias(conv1d_dilated(x, p.get("conv0.kernel"), 1, Padding::same), p.get("conv0.bias")));
  const LstmParams lp{p.get("lstm.input_weights"), p.get("lstm.recurrent_weights"), p.get("lstm.bias")};
  const auto step = lstm_step(max_over_time(x), lstm_zero_state(64), lp);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(out.latent.at(i), step.h.at(i), 1e-14);

  TextGrid longer = grid_with({4, 0, 0}, 5, 6, rng);
  std::copy(g.values.values().begin(), g.values.values().end(), longer.values.mutable_values().begin());
  const auto same = net.forward(longer);
  EXPECT_EQ(vals(same.logits), vals(out.logits));
  EXPECT_THROW(net.forward(grid_with({0, 0}, 5, 6, rng)), std::invalid_argument);
}

TEST(FusionNet, ArchitectureContract) {
  ModelConfig cfg;
  std::mt19937_64 rng(10);
  FusionNet net(cfg, rng);
  std::set<std::string> gates;
  for (const auto& name : net.params().names())
    if (name.starts_with("gate.")) gates.insert(name.substr(0, name.find('.', 5)));
  EXPECT_EQ(gates, (std::set<std::string>{"gate.av", "gate.at", "gate.vt"}));
  EXPECT_EQ(net.gates().size(), 3u);

  FusionNet::Latents zero{Tensor(Shape{128}), Tensor(Shape{128}), Tensor(Shape{64})};
  const Tensor fused = net.fuse(zero);
  EXPECT_EQ(fused.shape(), (Shape{3 * cfg.fusion.gate_dim}));
  for (double v : fused.values()) EXPECT_EQ(v, 0.0);
  // Head response to zero: relu(b0) through the output layer.
  const auto& p = net.params();
  const Tensor expect =
      dense(relu(p.get("head0.bias")), p.get("head1.weight"), p.get("head1.bias"));
  EXPECT_EQ(vals(net.classify(fused)), vals(expect));
}

TEST(FusionNet, ParameterCount) {
  ModelConfig cfg;
  std::mt19937_64 rng(11);
  FusionNet net(cfg, rng);
  const std::size_t n = net.params().total_parameter_count();
  EXPECT_EQ(n, oracle::fusion_parameter_count(cfg));
  EXPECT_GE(n, 400'000u);
  EXPECT_LE(n, 1'500'000u);

  cfg.fusion.method = FusionMethod::concat;
  FusionNet cat(cfg, rng);
  EXPECT_EQ(cat.params().total_parameter_count(), oracle::fusion_parameter_count(cfg));
  for (const auto& name : cat.params().names()) EXPECT_FALSE(name.starts_with("gate."));
}

TEST(FusionNet, ForwardShapes) {
  const auto cfg = gradcase::mini_config(MgmuVariant::complementary);
  std::mt19937_64 rng(12);
  FusionNet net(cfg, rng);
  const auto out = net.forward(oracle::random_tensor({4, 5}, rng), oracle::random_tensor({2, 5}, rng),
                               gradcase::mini_grid(rng));
  EXPECT_EQ(out.shape(), (Shape{3}));
  EXPECT_THROW(net.forward(Tensor(Shape{0, 5}), Tensor(Shape{1, 5}), gradcase::mini_grid(rng)), DimensionError);
}

TEST(LateFusion, Mean) {
  const std::vector<double> v = {0.2, 0.5, 0.3};
  const auto same = late_fusion_mean({v, v, v});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(same[i], v[i], 1e-16);
  const auto third = late_fusion_mean({std::vector<double>{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  for (double x : third) EXPECT_NEAR(x, 1.0 / 3.0, 1e-16);
  EXPECT_THROW(late_fusion_mean({std::vector<double>{0.5, 0.6, 0}, v, v}), std::invalid_argument);
}

TEST(LateFusion, PairwiseMgmu) {
  ModelConfig cfg;
  std::mt19937_64 rng(13);
  LateFusionNet net(cfg, rng);
  std::gamma_distribution<double> g(1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::array<std::vector<double>, 3> preds;
    for (auto& p : preds) {
      p = {g(rng), g(rng), g(rng)};
      const double s = p[0] + p[1] + p[2];
      for (auto& x : p) x /= s;
    }
    const Tensor logits = net.forward(preds);
    ASSERT_EQ(logits.shape(), (Shape{3}));
    for (double x : logits.values()) EXPECT_TRUE(std::isfinite(x));
    const auto probs = late_fusion_combine(preds, LateMethod::mgmu_pairwise, &net);
    EXPECT_NEAR(std::accumulate(probs.begin(), probs.end(), 0.0), 1.0, 1e-12);
  }
  EXPECT_THROW(late_fusion_combine({}, LateMethod::mgmu_pairwise), std::invalid_argument);
}
