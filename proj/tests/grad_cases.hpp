// SPDX-License-Identifier: Apache-2.0
// Finite-difference cases for every differentiable operation and for a
// miniature intermediate-fusion network.
#pragma once

#include "oracles.hpp"

namespace gradcase {

using namespace mgmu;
using oracle::project;
using oracle::random_tensor;

struct Case {
  std::string name;
  bool linear = false;  // checked at the tighter tolerance
  std::function<oracle::GradReport(std::uint64_t seed)> run;
};

inline constexpr double kLinearTol = 1e-6;
inline constexpr double kTol = 1e-4;

/// Shifts values away from zero so relu and max kinks stay outside the FD step.
inline Tensor away_from_zero(Tensor t) {
  for (auto& v : t.mutable_values()) v += v >= 0 ? 0.05 : -0.05;
  return t;
}

inline std::vector<Case> tensor_cases() {
  std::vector<Case> cases;
  auto push = [&](std::string name, bool linear, std::function<oracle::GradReport(std::uint64_t)> f) {
    cases.push_back({std::move(name), linear, std::move(f)});
  };

  push("matmul", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    return oracle::check_gradients({a, b}, [&] { return project(matmul(a, b), s); });
  });
  push("matmul_vector", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng);
    return oracle::check_gradients({a, b}, [&] { return project(matmul(a, b), s); });
  });
  push("dense", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({5}, rng), w = random_tensor({3, 5}, rng), b = random_tensor({3}, rng);
    return oracle::check_gradients({x, w, b}, [&] { return project(dense(x, w, b), s); });
  });
  push("transpose", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({3, 4}, rng);
    return oracle::check_gradients({x}, [&] { return project(transpose(x), s); });
  });
  push("add", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor a = random_tensor({6}, rng), b = random_tensor({6}, rng);
    return oracle::check_gradients({a, b}, [&] { return project(add(a, b), s); });
  });
  push("sub", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
    return oracle::check_gradients({a, b}, [&] { return project(sub(a, b), s); });
  });
  push("affine", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({5}, rng);
    return oracle::check_gradients({x}, [&] { return project(affine(x, -1.5, 0.25), s); });
  });
  push("sum", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({2, 3}, rng);
    return oracle::check_gradients({x}, [&] { return sum(x); });
  });
  push("concat_axis0", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({1, 3}, rng);
    return oracle::check_gradients({a, b}, [&] { return project(concat({a, b}, 0), s); });
  });
  push("concat_axis1", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 2}, rng);
    return oracle::check_gradients({a, b}, [&] { return project(concat({a, b}, 1), s); });
  });
  push("slice", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({4, 5}, rng);
    return oracle::check_gradients({x}, [&] { return project(slice(x, 1, 1, 4), s); });
  });
  push("reshape", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({2, 6}, rng);
    return oracle::check_gradients({x}, [&] { return project(reshape(x, {3, 4}), s); });
  });
  push("conv1d_same", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({3, 9}, rng), k = random_tensor({2, 3, 3}, rng);
    return oracle::check_gradients({x, k}, [&] { return project(conv1d_dilated(x, k, 2, Padding::same), s); });
  });
  push("conv1d_valid", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({2, 10}, rng), k = random_tensor({3, 2, 2}, rng);
    return oracle::check_gradients({x, k}, [&] { return project(conv1d_dilated(x, k, 3, Padding::valid), s); });
  });
  push("add_channel_bias", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({3, 4}, rng), b = random_tensor({3}, rng);
    return oracle::check_gradients({x, b}, [&] { return project(add_channel_bias(x, b), s); });
  });
  push("pool_mean", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({2, 8}, rng);
    return oracle::check_gradients({x}, [&] { return project(pool1d(x, PoolKind::mean, 3, 2), s); });
  });
  push("masked_mean_time", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({3, 5}, rng);
    const std::vector<bool> mask = {true, false, true, true, false};
    return oracle::check_gradients({x}, [&] { return project(masked_mean_time(x, mask), s); });
  });
  push("dropout", true, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({8}, rng);
    return oracle::check_gradients({x}, [&] {
      std::mt19937_64 mask_rng(s + 1);
      return project(dropout(x, 0.3, mask_rng), s);
    });
  });

  push("tanh", false, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({6}, rng, -2.0, 2.0);
    return oracle::check_gradients({x}, [&] { return project(tanh(x), s); });
  });
  push("sigmoid", false, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({6}, rng, -3.0, 3.0);
    return oracle::check_gradients({x}, [&] { return project(sigmoid(x), s); });
  });
  push("relu", false, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = away_from_zero(random_tensor({8}, rng));
    return oracle::check_gradients({x}, [&] { return project(relu(x), s); });
  });
  push("mul", false, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
    return oracle::check_gradients({a, b}, [&] { return project(mul(a, b), s); });
  });
  push("pool_max", false, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({2, 8}, rng);
    return oracle::check_gradients({x}, [&] { return project(pool1d(x, PoolKind::max, 2, 2), s); });
  });
  push("max_over_time", false, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({3, 6}, rng);
    return oracle::check_gradients({x}, [&] { return project(max_over_time(x), s); });
  });
  push("cross_entropy", false, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor logits = random_tensor({3}, rng, -2.0, 2.0);
    const Tensor w = Tensor::vector({0.8, 1.3, 0.6});
    return oracle::check_gradients({logits},
                                   [&] { return weighted_softmax_cross_entropy(logits, s % 3, w); });
  });
  push("lstm_sequence", false, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    LstmParams p{random_tensor({12, 2}, rng), random_tensor({12, 3}, rng), random_tensor({12}, rng)};
    std::vector<Tensor> xs;
    for (int t = 0; t < 4; ++t) xs.push_back(random_tensor({2}, rng));
    std::vector<Tensor> leaves = {p.input_weights, p.recurrent_weights, p.bias};
    leaves.insert(leaves.end(), xs.begin(), xs.end());
    return oracle::check_gradients(leaves, [&] {
      auto hs = lstm_sequence(xs, p);
      return project(concat(hs), s);
    });
  });
  push("lstm_step_state", false, [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    LstmParams p{random_tensor({8, 3}, rng), random_tensor({8, 2}, rng), random_tensor({8}, rng)};
    Tensor x = random_tensor({3}, rng), h = random_tensor({2}, rng), c = random_tensor({2}, rng);
    return oracle::check_gradients({x, h, c, p.input_weights}, [&] {
      auto st = lstm_step(x, {h, c}, p);
      return project(concat({st.h, st.c}), s);
    });
  });
  for (auto variant : {MgmuVariant::as_written, MgmuVariant::complementary}) {
    push("mgmu_" + to_string(variant), false, [variant](std::uint64_t s) {
      std::mt19937_64 rng(s);
      MgmuParams p{random_tensor({3, 4}, rng), random_tensor({3, 2}, rng), random_tensor({3, 6}, rng), variant};
      Tensor x1 = random_tensor({4}, rng), x2 = random_tensor({2}, rng);
      return oracle::check_gradients({x1, x2, p.w1, p.w2, p.wz},
                                     [&] { return project(mgmu_forward(x1, x2, p).h, s); });
    });
  }
  return cases;
}

// ---------------------------------------------------------------------------
// Miniature multimodal network
// ---------------------------------------------------------------------------

inline ModelConfig mini_config(MgmuVariant variant) {
  ModelConfig cfg;
  cfg.embedding_dim = 4;
  cfg.segment.embedding = 5;
  cfg.fusion.sequence_hidden = 3;
  cfg.fusion.text = {3, 2, 2, 3, 0.0};
  cfg.fusion.gate_dim = 2;
  cfg.fusion.head_hidden = {4};
  cfg.fusion.variant = variant;
  return cfg;
}

inline TextGrid mini_grid(std::mt19937_64& rng) {
  TextGrid g;
  g.values = random_tensor({3, 4, 4}, rng);
  g.sentence_lengths = {4, 0, 2};
  auto v = g.values.mutable_values();
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t w = g.sentence_lengths[s]; w < 4; ++w)
      for (std::size_t e = 0; e < 4; ++e) v[(s * 4 + w) * 4 + e] = 0.0;
  return g;
}

/// Every parameter of the miniature network against finite differences of the weighted loss.
inline oracle::GradReport mini_fusion_check(MgmuVariant variant, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ModelConfig cfg = mini_config(variant);
  FusionNet net(cfg, rng);
  // Glorot draws on tiny fans can park relu units on their kink; nudge biases off zero.
  for (auto& [name, t] : net.params().entries())
    if (name.ends_with(".bias"))
      for (auto& v : t.mutable_values()) v += 0.1;
  const Tensor audio = random_tensor({3, 5}, rng), video = random_tensor({2, 5}, rng);
  const TextGrid grid = mini_grid(rng);
  const Tensor w = Tensor::vector({0.9, 1.2, 0.7});
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : net.params().entries()) leaves.push_back(t);
  return oracle::check_gradients(leaves, [&] {
    return weighted_softmax_cross_entropy(net.forward(audio, video, grid), seed % 3, w);
  });
}

}  // namespace gradcase
