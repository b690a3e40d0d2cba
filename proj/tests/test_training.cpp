// SPDX-License-Identifier: Apache-2.0
#include <mgmu/models.hpp>
#include <mgmu/training.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace mgmu;

namespace {

/// Three well separated 2-D clusters and a linear classifier over them.
struct Toy {
  ModelParams params;
  DenseLayer layer;
  std::vector<Tensor> xs;
  SampleSet train, val;

  explicit Toy(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    layer = make_dense(params, "out", 2, 3, rng);
    const double centers[3][2] = {{2, 0}, {-1, 1.7}, {-1, -1.7}};
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto* set : {&train, &val}) {
      const std::size_t base = xs.size();
      for (std::size_t i = 0; i < 30; ++i) {
        const int c = static_cast<int>(i % 3);
        xs.push_back(Tensor::vector({centers[c][0] + n(rng), centers[c][1] + n(rng)}));
        set->labels.push_back(c);
      }
      set->logits = [this, base](std::size_t i, bool, std::mt19937_64*) { return layer(xs[base + i]); };
    }
  }
};

TrainConfig toy_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.max_epochs = epochs;
  cfg.lr = 1e-2;
  cfg.seed = 5;
  return cfg;
}

std::string log_text(const TrainLog& log) {
  std::ostringstream s;
  log.write_jsonl(s, false);
  return s.str();
}

}  // namespace

TEST(ClassWeights, Examples) {
  const std::vector<std::size_t> balanced = {10, 10, 10};
  for (double w : class_weights(balanced)) EXPECT_EQ(w, 1.0);
  const std::vector<std::size_t> table = {54, 56, 30};
  const auto w = class_weights(table);
  EXPECT_NEAR(w[0], 0.8642, 1e-4);
  EXPECT_NEAR(w[1], 0.8333, 1e-4);
  EXPECT_NEAR(w[2], 1.5556, 1e-4);
  double total = 0.0;
  for (std::size_t c = 0; c < 3; ++c) total += w[c] * static_cast<double>(table[c]);
  EXPECT_NEAR(total, 140.0, 1e-12);
  const std::vector<std::size_t> empty_class = {3, 0, 2};
  EXPECT_THROW(class_weights(empty_class), std::invalid_argument);
}

TEST(ClassWeights, UniformWeightsGivePlainCrossEntropy) {
  const std::vector<double> z = {0.3, -1.2, 2.0};
  const double lse = std::log(std::exp(z[0]) + std::exp(z[1]) + std::exp(z[2]));
  for (std::size_t y = 0; y < 3; ++y) {
    const double loss = weighted_softmax_cross_entropy(Tensor::vector(z), y, Tensor::vector({1, 1, 1})).item();
    EXPECT_DOUBLE_EQ(loss, lse - z[y]);
  }
}

TEST(Adam, FirstStepAndZeroGradient) {
  ModelParams p;
  Tensor& x = p.add("x", Tensor::vector({0.5, 2.0}));
  Adam adam(p, 1e-3);
  x.zero_grad();
  std::vector<double> g = {1.0, 0.0};
  std::copy(g.begin(), g.end(), const_cast<double*>(x.grad().data()));
  adam.step(p);
  EXPECT_NEAR(x.at(0), 0.5 - 1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(x.at(1), 2.0);
  for (int i = 0; i < 5; ++i) {
    x.zero_grad();
    adam.step(p);
  }
  EXPECT_EQ(x.at(1), 2.0);
  EXPECT_EQ(adam.steps(), 6u);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ModelParams p;
  p.add("first", Tensor::vector({1.0}));
  Tensor& bad = p.add("second.weight", Tensor::vector({1.0, 2.0}));
  Adam adam(p);
  p.zero_grad();
  const_cast<double*>(bad.grad().data())[1] = std::numeric_limits<double>::infinity();
  try {
    adam.step(p);
    FAIL() << "no exception";
  } catch (const NonFiniteGradient& e) {
    EXPECT_EQ(e.parameter(), "second.weight");
  }
}

TEST(Adam, Deterministic) {
  auto run = [] {
    Toy toy(3);
    Adam adam(toy.params, 1e-2);
    const Tensor w = Tensor::vector({1, 1, 1});
    for (std::size_t s = 0; s < 10; ++s) {
      toy.params.zero_grad();
      Tape tape;
      {
        TapeScope scope(tape);
        backward(weighted_softmax_cross_entropy(toy.train.logits(s, true, nullptr), toy.train.labels[s], w));
      }
      adam.step(toy.params);
    }
    return toy.params.snapshot();
  };
  EXPECT_EQ(run(), run());
}

TEST(Plateau, Traces) {
  PlateauScheduler down(1e-3, 25, 0.5);
  for (int e = 0; e < 100; ++e) EXPECT_FALSE(down.observe(100.0 - e));
  EXPECT_EQ(down.lr(), 1e-3);

  PlateauScheduler flat(1e-3, 25, 0.5);
  std::vector<int> drops;
  for (int e = 0; e < 60; ++e)
    if (flat.observe(1.0)) drops.push_back(e);
  EXPECT_EQ(drops, (std::vector<int>{25, 50}));
  EXPECT_EQ(flat.lr(), 0.25e-3);
  EXPECT_THROW(PlateauScheduler(1e-3, 0, 0.5), std::invalid_argument);
}

TEST(EarlyStop, Traces) {
  EarlyStopping down(50);
  for (int e = 0; e < 300; ++e) EXPECT_FALSE(down.observe(300.0 - e));

  EarlyStopping flat(50);
  const std::vector<double> losses = {5, 4, 3, 2};
  int stop = -1;
  for (int e = 0; e < 200 && stop < 0; ++e)
    if (flat.observe(e < 4 ? losses[e] : 2.0)) stop = e;
  EXPECT_EQ(stop, 53);
  EXPECT_EQ(flat.best_epoch(), 3u);
}

TEST(Train, LearnsSeparableToy) {
  Toy toy(1);
  const double initial = mean_loss(toy.train);
  const auto r = train_model(toy.params, toy.train, toy.val, toy_config(50));
  EXPECT_EQ(r.epochs_run, 50u);
  EXPECT_LT(mean_loss(toy.train), initial / 2.0);
  // Restored parameters reproduce the best validation loss.
  EXPECT_NEAR(mean_loss(toy.val), r.log.best_val_loss, 1e-12);
  EXPECT_EQ(r.log.epochs[r.log.best_epoch].val_loss, r.log.best_val_loss);
}

TEST(Train, SameSeedSameLog) {
  Toy a(2), b(2);
  const auto ra = train_model(a.params, a.train, a.val, toy_config(15));
  const auto rb = train_model(b.params, b.train, b.val, toy_config(15));
  EXPECT_EQ(log_text(ra.log), log_text(rb.log));
  EXPECT_EQ(a.params.snapshot(), b.params.snapshot());
}

TEST(Train, EarlyStopAndEvents) {
  Toy toy(4);
  // Shifted validation labels get worse as the training fit improves.
  for (auto& y : toy.val.labels) y = (y + 1) % 3;
  TrainConfig cfg = toy_config(400);
  cfg.lr_patience = 3;
  cfg.early_stop_patience = 6;
  const auto r = train_model(toy.params, toy.train, toy.val, cfg);
  ASSERT_LT(r.epochs_run, 400u);
  const auto& last = r.log.epochs.back();
  EXPECT_NE(std::find(last.events.begin(), last.events.end(), "early-stop"), last.events.end());
  EXPECT_EQ(r.epochs_run - 1, r.log.best_epoch + cfg.early_stop_patience);
  std::istringstream lines(log_text(r.log));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) ++n;
  EXPECT_EQ(n, r.epochs_run);
}

TEST(Train, BatchingAndSubsampling) {
  Toy toy(6);
  TrainConfig cfg = toy_config(5);
  cfg.batch_size = 4;
  cfg.samples_per_epoch = 10;
  EXPECT_NO_THROW(train_model(toy.params, toy.train, toy.val, cfg));
  cfg.batch_size = 0;
  EXPECT_THROW(train_model(toy.params, toy.train, toy.val, cfg), std::invalid_argument);
}

TEST(Grid, Enumeration) {
  GridSpec spec;
  EXPECT_EQ(enumerate_grid(spec).size(), 81u);
  spec.segment_s = {20, 30, 40};
  const auto rows = enumerate_grid(spec);
  EXPECT_EQ(rows.size(), 243u);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].index, i);
  spec.lr.clear();
  EXPECT_THROW(enumerate_grid(spec), std::invalid_argument);
}

TEST(Grid, SingletonAndToyRanking) {
  GridSpec one{{1e-3}, {25}, {50}, {0.5}, {}};
  const auto single = grid_search(one, [](const GridPoint&) { return GridResult{{}, 0.4, 1.0, 3}; });
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].point.lr, 1e-3);

  GridSpec lrs{{1e-1, 1e-2, 1e-4}, {25}, {50}, {0.5}, {}};
  auto run = [](const GridPoint& p) {
    Toy toy(7);
    const auto r = train_model(toy.params, toy.train, toy.val, p.apply(toy_config(10)));
    std::vector<int> pred;
    for (const auto& q : predict(toy.val)) pred.push_back(static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin()));
    GridResult g;
    g.val_loss = r.val_loss;
    g.epochs_run = r.epochs_run;
    int hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == toy.val.labels[i];
    g.val_f1 = hits / static_cast<double>(pred.size());
    return g;
  };
  const auto a = grid_search(lrs, run), b = grid_search(lrs, run);
  ASSERT_EQ(a.size(), 3u);
  std::ostringstream ca, cb;
  write_grid_csv(ca, a);
  write_grid_csv(cb, b);
  EXPECT_EQ(ca.str(), cb.str());
  // The smallest rate barely moves in 10 epochs and ranks last.
  EXPECT_EQ(a.back().point.lr, 1e-4);
}
