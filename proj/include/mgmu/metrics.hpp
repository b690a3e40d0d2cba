// SPDX-License-Identifier: Apache-2.0
/**
 * @file   metrics.hpp
 * @brief  Confusion matrices, support-weighted F1 with a percentile
 *         bootstrap interval, and one-vs-rest AUC.
 */
#pragma once

#include <mgmu/synth.hpp>

#include <cctype>
#include <limits>
#include <numeric>
#include <optional>

namespace mgmu {

/// Rows are true labels, columns predicted labels.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::vector<std::size_t>> counts;

  explicit ConfusionMatrix(std::size_t k = kNumClasses)
      : classes(k), counts(k, std::vector<std::size_t>(k, 0)) {}

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : counts) n = std::accumulate(row.begin(), row.end(), n);
    return n;
  }
  std::size_t row_sum(std::size_t c) const {
    return std::accumulate(counts[c].begin(), counts[c].end(), std::size_t{0});
  }
  std::size_t col_sum(std::size_t c) const {
    std::size_t n = 0;
    for (const auto& row : counts) n += row[c];
    return n;
  }

  /// "[[6,2,0],[2,5,2],[1,1,4]]"
  std::string to_bracket() const {
    std::string s = "[";
    for (std::size_t r = 0; r < classes; ++r) {
      s += r ? ",[" : "[";
      for (std::size_t c = 0; c < classes; ++c) {
        if (c) s += ',';
        s += std::to_string(counts[r][c]);
      }
      s += ']';
    }
    return s + "]";
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

class ParseError : public std::invalid_argument {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::invalid_argument(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Parses the bracketed K x K form; whitespace is ignored.
inline ConfusionMatrix parse_confusion(std::string_view text) {
  std::size_t pos = 0;
  auto skip = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  auto expect = [&](char c) {
    skip();
    if (pos >= text.size() || text[pos] != c) {
      throw ParseError(std::string("expected '") + c + "'", pos);
    }
    ++pos;
  };
  std::vector<std::vector<std::size_t>> rows;
  expect('[');
  skip();
  while (true) {
    std::vector<std::size_t> row;
    expect('[');
    while (true) {
      skip();
      const std::size_t start = pos;
      std::size_t v = 0;
      while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
        v = v * 10 + static_cast<std::size_t>(text[pos] - '0');
        ++pos;
      }
      if (pos == start) throw ParseError("expected a non-negative integer", pos);
      row.push_back(v);
      skip();
      if (pos < text.size() && text[pos] == ',') {
        ++pos;
        continue;
      }
      expect(']');
      break;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("row " + std::to_string(rows.size()) + " has " + std::to_string(row.size()) +
                           " entries, expected " + std::to_string(rows.front().size()),
                       pos - 1);
    }
    rows.push_back(std::move(row));
    skip();
    if (pos < text.size() && text[pos] == ',') {
      ++pos;
      continue;
    }
    expect(']');
    break;
  }
  skip();
  if (pos != text.size()) throw ParseError("trailing characters", pos);
  if (rows.size() != rows.front().size()) {
    throw ParseError("matrix is " + std::to_string(rows.size()) + "x" +
                         std::to_string(rows.front().size()) + ", expected square",
                     pos);
  }
  ConfusionMatrix m(rows.size());
  m.counts = std::move(rows);
  return m;
}

inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted,
                                 std::size_t classes = kNumClasses) {
  if (truth.size() != predicted.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(truth.size()) + " labels vs " +
                                std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(truth[i]) >= classes ||
        static_cast<std::size_t>(predicted[i]) >= classes) {
      throw std::out_of_range("confusion: label out of range at sample " + std::to_string(i));
    }
    ++m.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  return m;
}

struct ClassScores {
  std::vector<double> precision, recall, f1;
  std::vector<std::size_t> support;
  double weighted_f1 = 0.0;
  /// Set when some precision or recall had a zero denominator (scored 0).
  bool zero_division = false;
};

/// One-vs-rest precision/recall/F1 per class, averaged by row support.
inline ClassScores weighted_f1(const ConfusionMatrix& m) {
  const std::size_t k = m.classes;
  const std::size_t n = m.total();
  if (n == 0) throw std::invalid_argument("weighted_f1: confusion matrix is all zero");
  ClassScores s;
  s.precision.resize(k);
  s.recall.resize(k);
  s.f1.resize(k);
  s.support.resize(k);
  double acc = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const auto tp = static_cast<double>(m.counts[c][c]);
    const auto row = m.row_sum(c);
    const auto col = m.col_sum(c);
    s.support[c] = row;
    if (col == 0 || row == 0) s.zero_division = true;
    s.precision[c] = col ? tp / static_cast<double>(col) : 0.0;
    s.recall[c] = row ? tp / static_cast<double>(row) : 0.0;
    // 2PR/(P+R) == 2TP/(row+col); the count form avoids 0/0.
    s.f1[c] = row + col ? 2.0 * tp / static_cast<double>(row + col) : 0.0;
    acc += static_cast<double>(row) * s.f1[c];
  }
  s.weighted_f1 = acc / static_cast<double>(n);
  return s;
}

struct BootstrapOptions {
  std::size_t replicates = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

struct Interval {
  double lo = 0.0, hi = 0.0;
};

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: no values");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto below = static_cast<std::size_t>(std::floor(pos));
  const std::size_t above = std::min(below + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(below);
  return values[below] + frac * (values[above] - values[below]);
}

/**
 * Percentile bootstrap of the weighted F1. Replicate b draws its indices from
 * its own generator seeded by (seed, b), so results do not depend on the
 * order replicates are evaluated in.
 */
inline Interval bootstrap_ci(std::span<const int> truth, std::span<const int> predicted,
                             BootstrapOptions opt = {}, std::size_t classes = kNumClasses) {
  const std::size_t n = truth.size();
  if (n < 2) throw std::invalid_argument("bootstrap_ci: need at least 2 samples");
  if (predicted.size() != n) throw std::invalid_argument("bootstrap_ci: length mismatch");
  if (opt.replicates == 0) throw std::invalid_argument("bootstrap_ci: replicates must be positive");
  std::vector<double> stats(opt.replicates);
  std::vector<int> t(n), p(n);
  for (std::size_t b = 0; b < opt.replicates; ++b) {
    std::mt19937_64 rng(derive_seed(opt.seed, {b}));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = pick(rng);
      t[i] = truth[j];
      p[i] = predicted[j];
    }
    stats[b] = weighted_f1(confusion(t, p, classes)).weighted_f1;
  }
  return {quantile(stats, opt.alpha / 2.0), quantile(stats, 1.0 - opt.alpha / 2.0)};
}

/**
 * Rank-sum AUC of `scores` for positives vs the rest, midranks on ties.
 * Returns nullopt when either group is empty.
 */
inline std::optional<double> binary_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  if (positive.size() != n) throw std::invalid_argument("auc: length mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = midrank;
    i = j;
  }
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positive[i]) {
      rank_sum += ranks[i];
      ++pos;
    }
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

struct AucReport {
  std::vector<std::optional<double>> per_class;
  std::vector<std::size_t> support;
  double weighted = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;
};

/**
 * One-vs-rest AUC per class from row-stochastic `scores` [n][K]; the summary
 * is the support-weighted mean over classes present in `truth`.
 */
inline AucReport ovr_auc(const std::vector<std::vector<double>>& scores, std::span<const int> truth,
                         std::size_t classes = kNumClasses) {
  if (scores.size() != truth.size()) throw std::invalid_argument("ovr_auc: length mismatch");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != classes) throw std::invalid_argument("ovr_auc: score row of wrong width");
    const double total = std::accumulate(scores[i].begin(), scores[i].end(), 0.0);
    if (std::abs(total - 1.0) > 1e-6) {
      throw std::invalid_argument("ovr_auc: score row " + std::to_string(i) + " sums to " + std::to_string(total));
    }
  }
  AucReport r;
  r.per_class.resize(classes);
  r.support.assign(classes, 0);
  for (int t : truth) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes) throw std::out_of_range("ovr_auc: label out of range");
    ++r.support[static_cast<std::size_t>(t)];
  }
  double acc = 0.0;
  std::size_t weight = 0;
  std::vector<double> column(scores.size());
  std::vector<bool> positive(scores.size());
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      column[i] = scores[i][c];
      positive[i] = static_cast<std::size_t>(truth[i]) == c;
    }
    r.per_class[c] = binary_auc(column, positive);
    if (!r.per_class[c]) {
      r.warnings.push_back("class " + class_name(static_cast<int>(c)) +
                           " has no positive or no negative samples; AUC undefined and excluded");
      continue;
    }
    acc += static_cast<double>(r.support[c]) * *r.per_class[c];
    weight += r.support[c];
  }
  if (weight > 0) r.weighted = acc / static_cast<double>(weight);
  return r;
}

struct EvalReport {
  ConfusionMatrix matrix;
  ClassScores scores;
  Interval ci;
  AucReport auc;
  std::size_t samples = 0;
};

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Full report from per-sample class probabilities.
inline EvalReport evaluate(const std::vector<std::vector<double>>& probabilities, std::span<const int> truth,
                           BootstrapOptions boot = {}, std::size_t classes = kNumClasses) {
  std::vector<int> predicted;
  predicted.reserve(probabilities.size());
  for (const auto& p : probabilities) predicted.push_back(static_cast<int>(argmax(p)));
  EvalReport r;
  r.samples = truth.size();
  r.matrix = confusion(truth, predicted, classes);
  r.scores = weighted_f1(r.matrix);
  r.ci = bootstrap_ci(truth, predicted, boot, classes);
  r.auc = ovr_auc(probabilities, truth, classes);
  return r;
}

}  // namespace mgmu
