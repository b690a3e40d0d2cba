// SPDX-License-Identifier: Apache-2.0
/**
 * @file   training.hpp
 * @brief  Class weights, Adam, plateau schedule, early stopping, the generic
 *         training loop and the hyperparameter grid.
 */
#pragma once

#include <mgmu/metrics.hpp>
#include <mgmu/models.hpp>

#include <chrono>
#include <functional>
#include <ostream>

namespace mgmu {

struct TrainConfig {
  std::size_t max_epochs = 300;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t lr_patience = 25;
  double lr_factor = 0.5;
  std::size_t early_stop_patience = 50;
  /// Sessions (or segments) whose gradients are summed before one update.
  std::size_t batch_size = 1;
  /// Training samples drawn per epoch; 0 uses the whole split.
  std::size_t samples_per_epoch = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_epochs == 0) throw std::invalid_argument("train: max_epochs must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
    if (lr_patience == 0 || early_stop_patience == 0) throw std::invalid_argument("train: patience must be positive");
    if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw std::invalid_argument("train: lr_factor must lie in (0, 1)");
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  }
};

/// Balanced inverse-frequency weights N / (K * N_c).
inline std::vector<double> class_weights(std::span<const std::size_t> counts) {
  if (counts.empty()) throw std::invalid_argument("class_weights: no classes");
  std::size_t n = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw std::invalid_argument("class_weights: class " + std::to_string(c) + " has no samples");
    n += counts[c];
  }
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    w[c] = static_cast<double>(n) / (static_cast<double>(counts.size()) * static_cast<double>(counts[c]));
  }
  return w;
}

inline std::vector<std::size_t> label_counts(std::span<const int> labels, std::size_t classes = kNumClasses) {
  std::vector<std::size_t> counts(classes, 0);
  for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& name)
      : std::runtime_error("non-finite gradient in parameter '" + name + "'"), name_(name) {}
  const std::string& parameter() const { return name_; }

 private:
  std::string name_;
};

/// Adam with bias correction; moments are kept per parameter in registration order.
class Adam {
 public:
  Adam(const ModelParams& params, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params.entries()) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  /// Applies one update from the accumulated gradients; parameters without a
  /// gradient buffer are treated as having zero gradient.
  void step(ModelParams& params) {
    if (params.size() != m_.size()) throw std::invalid_argument("adam: parameter set changed");
    for (const auto& [name, t] : params.entries()) {
      for (double g : t.grad())
        if (!std::isfinite(g)) throw NonFiniteGradient(name);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = params.entries()[k].second;
      if (!p.has_grad()) p.zero_grad();
      auto g = p.grad();
      auto x = p.mutable_values();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        x[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/**
 * Multiplies the rate by `factor` once `patience` epochs pass without a
 * strictly lower loss; the waiting window then restarts.
 */
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, std::size_t patience, double factor) : lr_(lr), patience_(patience), factor_(factor) {
    if (patience == 0) throw std::invalid_argument("plateau: patience must be positive");
  }

  /// Feeds the loss of the next epoch; returns true when the rate dropped.
  bool observe(double loss) {
    const std::size_t epoch = epoch_++;
    if (epoch == 0 || loss < best_) {
      best_ = loss;
      since_ = epoch;
      return false;
    }
    if (epoch - since_ >= patience_) {
      lr_ *= factor_;
      since_ = epoch;
      return true;
    }
    return false;
  }

  double lr() const { return lr_; }

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double best_ = 0.0;
  std::size_t since_ = 0, epoch_ = 0;
};

/// Signals a stop once `patience` epochs pass without a strictly lower loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience == 0) throw std::invalid_argument("early stopping: patience must be positive");
  }

  bool observe(double loss) {
    const std::size_t epoch = epoch_++;
    if (epoch == 0 || loss < best_) {
      best_ = loss;
      best_epoch_ = epoch;
      return false;
    }
    return epoch - best_epoch_ >= patience_;
  }

  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  double best_ = 0.0;
  std::size_t best_epoch_ = 0, epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_s = 0.0;
  std::vector<std::string> events;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;

  /// One JSON object per epoch. Wall time is omitted when `timing` is false so
  /// that logs of identical runs compare equal byte for byte.
  void write_jsonl(std::ostream& out, bool timing = true) const {
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    for (const auto& e : epochs) {
      out << "{\"epoch\":" << e.epoch << ",\"train_loss\":" << num(e.train_loss)
          << ",\"val_loss\":" << num(e.val_loss) << ",\"lr\":" << num(e.lr);
      if (timing) out << ",\"wall_s\":" << num(e.wall_s);
      out << ",\"events\":[";
      for (std::size_t i = 0; i < e.events.size(); ++i) out << (i ? "," : "") << '"' << e.events[i] << '"';
      out << "]}\n";
    }
  }
};

/**
 * A split seen by the trainer: `logits(i, training, rng)` builds the forward
 * pass for sample i on the active tape.
 */
struct SampleSet {
  std::vector<int> labels;
  std::function<Tensor(std::size_t, bool, std::mt19937_64*)> logits;

  std::size_t size() const { return labels.size(); }
};

struct TrainResult {
  TrainLog log;
  /// Mean unweighted cross-entropy on the validation split at the restored epoch.
  double val_loss = 0.0;
  std::size_t epochs_run = 0;
};

inline double mean_loss(const SampleSet& set) {
  NoTapeScope no_tape;
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    Tensor logits = set.logits(i, false, nullptr);
    const Tensor w(Shape{logits.numel()}, 1.0);
    total += weighted_softmax_cross_entropy(logits, static_cast<std::size_t>(set.labels[i]), w).item();
  }
  return total / static_cast<double>(set.size());
}

/// Softmax probabilities for every sample of `set`.
inline std::vector<std::vector<double>> predict(const SampleSet& set) {
  NoTapeScope no_tape;
  std::vector<std::vector<double>> out;
  out.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out.push_back(softmax(set.logits(i, false, nullptr).values()));
  return out;
}

/**
 * Runs the protocol: seeded shuffling, class-weighted loss, Adam, plateau
 * schedule on the validation loss, early stopping, and restoration of the
 * best-validation parameters.
 */
inline TrainResult train_model(ModelParams& params, const SampleSet& train, const SampleSet& val,
                               const TrainConfig& cfg, std::size_t classes = kNumClasses) {
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw std::invalid_argument("train: empty train or validation split");
  const Tensor weights = Tensor::vector(class_weights(label_counts(train.labels, classes)));

  Adam adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon);
  PlateauScheduler plateau(cfg.lr, cfg.lr_patience, cfg.lr_factor);
  EarlyStopping stopper(cfg.early_stop_patience);
  std::vector<std::vector<double>> best = params.snapshot();

  TrainResult result;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t per_epoch =
      cfg.samples_per_epoch == 0 ? train.size() : std::min(cfg.samples_per_epoch, train.size());

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(derive_seed(cfg.seed, {11, epoch}));
    std::shuffle(order.begin(), order.end(), rng);

    params.zero_grad();
    double train_total = 0.0;
    std::size_t pending = 0;
    for (std::size_t k = 0; k < per_epoch; ++k) {
      const std::size_t i = order[k];
      Tape tape;
      {
        TapeScope scope(tape);
        Tensor loss = weighted_softmax_cross_entropy(train.logits(i, true, &rng),
                                                     static_cast<std::size_t>(train.labels[i]), weights);
        train_total += loss.item();
        if (cfg.batch_size > 1) loss = affine(loss, 1.0 / static_cast<double>(cfg.batch_size), 0.0);
        backward(loss);
      }
      if (++pending == cfg.batch_size || k + 1 == per_epoch) {
        adam.step(params);
        params.zero_grad();
        pending = 0;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_total / static_cast<double>(per_epoch);
    rec.val_loss = mean_loss(val);
    rec.lr = adam.lr();
    if (epoch == 0 || rec.val_loss < result.log.best_val_loss) {
      best = params.snapshot();
      result.log.best_epoch = epoch;
      result.log.best_val_loss = rec.val_loss;
      rec.events.emplace_back("best-checkpoint");
    }
    if (plateau.observe(rec.val_loss)) {
      adam.set_lr(plateau.lr());
      rec.events.emplace_back("lr-drop");
    }
    const bool stop = stopper.observe(rec.val_loss);
    if (stop) rec.events.emplace_back("early-stop");
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(std::move(rec));
    result.epochs_run = epoch + 1;
    if (stop) break;
  }
  params.restore(best);
  result.val_loss = result.log.best_val_loss;
  return result;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct GridSpec {
  std::vector<double> lr = {1e-3, 5e-4, 1e-4};
  std::vector<std::size_t> lr_patience = {20, 25, 30};
  std::vector<std::size_t> early_stop = {40, 50, 60};
  std::vector<double> factor = {0.75, 0.5, 0.25};
  /// Empty for models without a segment length (text, fusion).
  std::vector<double> segment_s = {};
};

struct GridPoint {
  std::size_t index = 0;
  double lr = 0.0;
  std::size_t lr_patience = 0;
  std::size_t early_stop = 0;
  double factor = 0.0;
  std::optional<double> segment_s;

  TrainConfig apply(TrainConfig base) const {
    base.lr = lr;
    base.lr_patience = lr_patience;
    base.early_stop_patience = early_stop;
    base.lr_factor = factor;
    return base;
  }
};

/// Cartesian product; the last listed axis varies fastest.
inline std::vector<GridPoint> enumerate_grid(const GridSpec& g) {
  if (g.lr.empty() || g.lr_patience.empty() || g.early_stop.empty() || g.factor.empty()) {
    throw std::invalid_argument("grid: every axis needs at least one value");
  }
  std::vector<std::optional<double>> segments;
  for (double s : g.segment_s) segments.emplace_back(s);
  if (segments.empty()) segments.emplace_back(std::nullopt);
  std::vector<GridPoint> out;
  for (auto seg : segments)
    for (double lr : g.lr)
      for (auto p : g.lr_patience)
        for (auto e : g.early_stop)
          for (double f : g.factor) out.push_back({out.size(), lr, p, e, f, seg});
  return out;
}

struct GridResult {
  GridPoint point;
  double val_f1 = 0.0;
  double val_loss = 0.0;
  std::size_t epochs_run = 0;
};

/// Sorts by validation weighted F1 (desc), then validation loss (asc), then enumeration order.
inline void rank_grid(std::vector<GridResult>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const GridResult& a, const GridResult& b) {
    if (a.val_f1 != b.val_f1) return a.val_f1 > b.val_f1;
    if (a.val_loss != b.val_loss) return a.val_loss < b.val_loss;
    return a.point.index < b.point.index;
  });
}

/**
 * Evaluates every grid point with `run`, which trains one configuration and
 * returns its validation F1/loss, then ranks the rows.
 */
inline std::vector<GridResult> grid_search(const GridSpec& spec,
                                           const std::function<GridResult(const GridPoint&)>& run) {
  std::vector<GridResult> rows;
  for (const auto& p : enumerate_grid(spec)) {
    GridResult r = run(p);
    r.point = p;
    rows.push_back(r);
  }
  rank_grid(rows);
  return rows;
}

inline void write_grid_csv(std::ostream& out, const std::vector<GridResult>& rows) {
  out << "rank,index,lr,lr_patience,early_stop,factor,segment_s,val_weighted_f1,val_loss,epochs\n";
  char buf[64];
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& g = rows[r];
    out << r + 1 << ',' << g.point.index << ',';
    std::snprintf(buf, sizeof(buf), "%g", g.point.lr);
    out << buf << ',' << g.point.lr_patience << ',' << g.point.early_stop << ',';
    std::snprintf(buf, sizeof(buf), "%g", g.point.factor);
    out << buf << ',';
    if (g.point.segment_s) out << *g.point.segment_s;
    std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,", g.val_f1, g.val_loss);
    out << buf << g.epochs_run << '\n';
  }
}

}  // namespace mgmu
