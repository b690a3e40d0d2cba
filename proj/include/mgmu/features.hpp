// SPDX-License-Identifier: Apache-2.0
/**
 * @file   features.hpp
 * @brief  Segmentation, delayed-correlation (FVTC) matrices and text grids.
 */
#pragma once

#include <mgmu/tensor.hpp>

#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <optional>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

namespace mgmu {

enum class Modality { audio, video };

inline std::string to_string(Modality m) { return m == Modality::audio ? "audio" : "video"; }

inline Modality modality_from_string(std::string_view s) {
  if (s == "audio") return Modality::audio;
  if (s == "video") return Modality::video;
  throw std::invalid_argument("unknown modality '" + std::string(s) + "'");
}

/// 6 tract variables followed by 2 glottal parameters.
inline std::vector<std::string> default_audio_channels() {
  return {"LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD", "periodicity", "aperiodicity"};
}

/// Action units around the eyes and lips.
inline std::vector<std::string> default_video_channels() {
  return {"AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU12", "AU15", "AU25", "AU26"};
}

inline constexpr double kDefaultAudioRate = 100.0;
inline constexpr double kDefaultVideoRate = 30.0;

/// C channels by T frames of one modality.
struct ChannelSeries {
  Modality modality = Modality::audio;
  std::vector<std::string> channel_names;
  double frame_rate = kDefaultAudioRate;
  Tensor values;  // [C, T]
  /// Frames [0, valid_frames) are real; the rest is zero padding. 0 means
  /// every frame is real.
  std::size_t valid_frames = 0;

  std::size_t real_frames() const { return valid_frames == 0 ? frames() : std::min(valid_frames, frames()); }

  std::size_t channels() const { return values.dim(0); }
  std::size_t frames() const { return values.dim(1); }
  double duration_s() const { return static_cast<double>(frames()) / frame_rate; }
};

inline void validate_series(const ChannelSeries& s) {
  if (s.values.rank() != 2 || s.values.dim(1) == 0) {
    throw DimensionError("series: values must be [C, T] with T >= 1, got " +
                         shape_str(s.values.shape()));
  }
  if (!s.channel_names.empty() && s.channel_names.size() != s.values.dim(0)) {
    throw DimensionError("series: " + std::to_string(s.channel_names.size()) +
                         " channel names for " + std::to_string(s.values.dim(0)) + " rows");
  }
  if (!(s.frame_rate > 0.0)) throw std::invalid_argument("series: frame rate must be positive");
  for (double v : s.values.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("series: non-finite sample");
  }
}

inline std::size_t seconds_to_frames(double seconds, double rate) {
  return static_cast<std::size_t>(std::llround(seconds * rate));
}

/// Number of windows placed by segment_series for a series of `total` frames.
inline std::size_t segment_count(std::size_t total, std::size_t window, std::size_t hop) {
  if (total < window) return 1;
  return (total - window) / hop + 1;
}

/**
 * Cuts `series` into windows of `window_s` seconds advancing by
 * window_s - overlap_s. A trailing remainder shorter than a window is dropped;
 * a series shorter than one window yields one zero-padded segment.
 */
inline std::vector<ChannelSeries> segment_series(const ChannelSeries& series, double window_s,
                                                 double overlap_s) {
  if (!(overlap_s >= 0.0) || !(overlap_s < window_s)) {
    throw std::invalid_argument("segment_series: need 0 <= overlap < window, got window " +
                                std::to_string(window_s) + " s, overlap " +
                                std::to_string(overlap_s) + " s");
  }
  validate_series(series);
  const std::size_t window = seconds_to_frames(window_s, series.frame_rate);
  const std::size_t hop = seconds_to_frames(window_s - overlap_s, series.frame_rate);
  if (window == 0 || hop == 0) throw std::invalid_argument("segment_series: window rounds to zero frames");
  const std::size_t channels = series.channels();
  const std::size_t total = series.real_frames();
  const std::size_t count = segment_count(total, window, hop);
  std::vector<ChannelSeries> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t begin = k * hop;
    const std::size_t real = std::min(window, total - begin);
    Tensor values(Shape{channels, window});
    auto dst = values.mutable_values();
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy_n(series.values.data() + c * series.frames() + begin, real,
                  dst.begin() + c * window);
    }
    out.push_back({series.modality, series.channel_names, series.frame_rate, values, real});
  }
  return out;
}

/// (C*C) x (D+1) delayed correlation matrix of one segment.
struct FvtcTensor {
  Tensor values;                  // rows (i, j) in lexicographic order, columns d = 0..D
  std::vector<bool> degenerate;   // per channel: zero variance
  std::size_t channels = 0;
  std::size_t max_delay = 0;

  double at(std::size_t i, std::size_t j, std::size_t d) const {
    return values.at(i * channels + j, d);
  }
  bool any_degenerate() const {
    return std::find(degenerate.begin(), degenerate.end(), true) != degenerate.end();
  }
};

namespace detail {

// Rounding in the mean leaves a residual variance on constant channels.
inline bool is_flat(double lo, double hi, double mean, double var) {
  return lo == hi || !(var > 1e-24 * (1.0 + mean * mean));
}

}  // namespace detail

struct FvtcOptions {
  /// Use mean/std of the overlapping sub-windows at each lag instead of the
  /// full-segment statistics.
  bool per_lag_means = false;
};

/**
 * r_ij(d) = 1/(T-d) * sum_{t<T-d} (x_i(t)-mu_i)(x_j(t+d)-mu_j) / (sigma_i sigma_j)
 *
 * mu and sigma (population) are taken over the whole segment. Channels with
 * zero variance contribute zero rows/columns and are flagged.
 */
inline FvtcTensor compute_fvtc(const ChannelSeries& segment, std::size_t max_delay,
                               FvtcOptions options = {}) {
  validate_series(segment);
  const std::size_t channels = segment.channels();
  const std::size_t steps = segment.frames();
  if (steps <= max_delay) {
    throw std::invalid_argument("compute_fvtc: segment of " + std::to_string(steps) +
                                " frames cannot carry delay " + std::to_string(max_delay));
  }
  FvtcTensor out;
  out.channels = channels;
  out.max_delay = max_delay;
  out.degenerate.assign(channels, false);
  out.values = Tensor(Shape{channels * channels, max_delay + 1});
  auto dst = out.values.mutable_values();
  detail::ConstMatMap x(segment.values.data(), channels, steps);
  const std::size_t width = max_delay + 1;

  if (!options.per_lag_means) {
    detail::RowMatrix z(channels, steps);
    for (std::size_t c = 0; c < channels; ++c) {
      const double mean = x.row(c).mean();
      const double var = (x.row(c).array() - mean).square().mean();
      if (detail::is_flat(x.row(c).minCoeff(), x.row(c).maxCoeff(), mean, var)) {
        out.degenerate[c] = true;
        z.row(c).setZero();
      } else {
        z.row(c) = (x.row(c).array() - mean) / std::sqrt(var);
      }
    }
    detail::RowMatrix lagged(channels, channels);
    for (std::size_t d = 0; d <= max_delay; ++d) {
      const auto n = static_cast<Eigen::Index>(steps - d);
      lagged.noalias() = z.leftCols(n) * z.middleCols(static_cast<Eigen::Index>(d), n).transpose();
      const double scale = 1.0 / static_cast<double>(steps - d);
      for (std::size_t i = 0; i < channels; ++i)
        for (std::size_t j = 0; j < channels; ++j)
          dst[(i * channels + j) * width + d] = lagged(i, j) * scale;
    }
    return out;
  }

  for (std::size_t c = 0; c < channels; ++c) {
    const double mean = x.row(c).mean();
    const double var = (x.row(c).array() - mean).square().mean();
    out.degenerate[c] = detail::is_flat(x.row(c).minCoeff(), x.row(c).maxCoeff(), mean, var);
  }
  for (std::size_t d = 0; d <= max_delay; ++d) {
    const auto n = static_cast<Eigen::Index>(steps - d);
    for (std::size_t i = 0; i < channels; ++i) {
      auto head = x.row(i).head(n).array();
      const double mi = head.mean();
      const double si = std::sqrt((head - mi).square().mean());
      for (std::size_t j = 0; j < channels; ++j) {
        auto tail = x.row(j).segment(static_cast<Eigen::Index>(d), n).array();
        const double mj = tail.mean();
        const double sj = std::sqrt((tail - mj).square().mean());
        double r = 0.0;
        if (si > 0.0 && sj > 0.0 && !out.degenerate[i] && !out.degenerate[j]) {
          r = ((head - mi) * (tail - mj)).mean() / (si * sj);
        }
        dst[(i * channels + j) * width + d] = r;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text
// ---------------------------------------------------------------------------

using Sentences = std::vector<std::vector<std::string>>;

/// English stopword list (NLTK corpus, lowercased, apostrophes removed).
inline const std::unordered_set<std::string>& default_stopwords() {
  static const std::unordered_set<std::string> words = {
      "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "youre", "youve",
      "youll", "youd", "your", "yours", "yourself", "yourselves", "he", "him", "his",
      "himself", "she", "shes", "her", "hers", "herself", "it", "its", "itself", "they",
      "them", "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that",
      "thatll", "these", "those", "am", "is", "are", "was", "were", "be", "been", "being",
      "have", "has", "had", "having", "do", "does", "did", "doing", "a", "an", "the", "and",
      "but", "if", "or", "because", "as", "until", "while", "of", "at", "by", "for", "with",
      "about", "against", "between", "into", "through", "during", "before", "after", "above",
      "below", "to", "from", "up", "down", "in", "out", "on", "off", "over", "under", "again",
      "further", "then", "once", "here", "there", "when", "where", "why", "how", "all", "any",
      "both", "each", "few", "more", "most", "other", "some", "such", "no", "nor", "not",
      "only", "own", "same", "so", "than", "too", "very", "s", "t", "can", "will", "just",
      "don", "dont", "should", "shouldve", "now", "d", "ll", "m", "o", "re", "ve", "y",
      "ain", "aren", "arent", "couldn", "couldnt", "didn", "didnt", "doesn", "doesnt",
      "hadn", "hadnt", "hasn", "hasnt", "haven", "havent", "isn", "isnt", "ma", "mightn",
      "mightnt", "mustn", "mustnt", "needn", "neednt", "shan", "shant", "shouldn",
      "shouldnt", "wasn", "wasnt", "weren", "werent", "won", "wont", "wouldn", "wouldnt"};
  return words;
}

inline std::string default_punctuation() { return R"(!"#$%&'()*+,-./:;<=>?@[\]^_`{|}~)"; }

/**
 * Splits on '.', '!' and '?', lowercases, strips punctuation characters and
 * drops stopwords and empty sentences.
 */
inline Sentences tokenize(std::string_view text,
                          const std::unordered_set<std::string>& stopwords = default_stopwords(),
                          std::string_view punctuation = default_punctuation()) {
  std::array<bool, 256> is_punct{};
  for (unsigned char c : punctuation) is_punct[c] = true;
  Sentences out;
  std::vector<std::string> current;
  std::string word;
  auto flush_word = [&] {
    if (!word.empty() && !stopwords.contains(word)) current.push_back(word);
    word.clear();
  };
  auto flush_sentence = [&] {
    flush_word();
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (unsigned char c : text) {
    if (c == '.' || c == '!' || c == '?') {
      flush_sentence();
    } else if (std::isspace(c)) {
      flush_word();
    } else if (!is_punct[c]) {
      word.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush_sentence();
  return out;
}

/// Word -> E-dimensional vector lookup.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 100) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  void add(const std::string& word, std::span<const double> vec) {
    if (vec.size() != dim_) {
      throw DimensionError("embedding: vector of " + std::to_string(vec.size()) +
                           " for table of dim " + std::to_string(dim_));
    }
    if (index_.contains(word)) throw std::invalid_argument("embedding: duplicate word '" + word + "'");
    index_.emplace(word, words_.size());
    words_.push_back(word);
    rows_.insert(rows_.end(), vec.begin(), vec.end());
  }

  /// Row for `word`, or nullopt when out of vocabulary.
  std::optional<std::span<const double>> find(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) return std::nullopt;
    return std::span<const double>(rows_.data() + it->second * dim_, dim_);
  }

  /// GloVe text format: one "word v1 ... vE" line per entry.
  static EmbeddingTable load_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read embedding table " + path);
    std::optional<EmbeddingTable> table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::vector<std::string_view> fields;
      std::string_view rest(line);
      while (!rest.empty()) {
        const auto start = rest.find_first_not_of(' ');
        if (start == std::string_view::npos) break;
        rest.remove_prefix(start);
        const auto end = rest.find(' ');
        fields.push_back(rest.substr(0, end));
        rest.remove_prefix(end == std::string_view::npos ? rest.size() : end);
      }
      if (fields.size() < 2) throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed");
      std::vector<double> vec(fields.size() - 1);
      for (std::size_t i = 1; i < fields.size(); ++i) {
        auto [p, ec] = std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), vec[i - 1]);
        if (ec != std::errc()) throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad number");
      }
      if (!table) table.emplace(vec.size());
      table->add(std::string(fields[0]), vec);
    }
    if (!table) throw std::runtime_error("embedding table " + path + " is empty");
    return std::move(*table);
  }

  void save_text(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    char buf[32];
    for (std::size_t w = 0; w < words_.size(); ++w) {
      out << words_[w];
      for (std::size_t i = 0; i < dim_; ++i) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), rows_[w * dim_ + i]);
        out << ' ' << std::string_view(buf, static_cast<std::size_t>(p - buf));
      }
      out << '\n';
    }
  }

 private:
  std::size_t dim_;
  std::vector<std::string> words_;
  std::vector<double> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// S_max x W_max x E embedding grid with a record of real cells.
struct TextGrid {
  Tensor values;                            // [S_max, W_max, E]
  std::vector<std::size_t> sentence_lengths;  // real words per row; 0 = padded row
  std::size_t truncated_sentences = 0;
  std::size_t truncated_words = 0;
  std::size_t oov_tokens = 0;

  std::size_t max_sentences() const { return values.dim(0); }
  std::size_t max_words() const { return values.dim(1); }
  std::size_t embedding_dim() const { return values.dim(2); }
  std::size_t real_sentences() const {
    return static_cast<std::size_t>(std::count_if(sentence_lengths.begin(), sentence_lengths.end(),
                                                  [](std::size_t n) { return n > 0; }));
  }
  bool is_real(std::size_t s, std::size_t w) const { return w < sentence_lengths.at(s); }
};

/**
 * Lays sentences into the grid. Out-of-vocabulary tokens are zero vectors but
 * still count as real cells; rows beyond S_max and words beyond W_max are
 * dropped and counted.
 */
inline TextGrid embed_text(const Sentences& sentences, const EmbeddingTable& table,
                           std::size_t max_sentences, std::size_t max_words) {
  const std::size_t dim = table.dim();
  TextGrid grid;
  grid.values = Tensor(Shape{max_sentences, max_words, dim});
  grid.sentence_lengths.assign(max_sentences, 0);
  auto dst = grid.values.mutable_values();
  const std::size_t kept = std::min(sentences.size(), max_sentences);
  grid.truncated_sentences = sentences.size() - kept;
  for (std::size_t s = 0; s < kept; ++s) {
    const auto& words = sentences[s];
    const std::size_t n = std::min(words.size(), max_words);
    grid.truncated_words += words.size() - n;
    grid.sentence_lengths[s] = n;
    for (std::size_t w = 0; w < n; ++w) {
      if (auto row = table.find(words[w])) {
        std::copy(row->begin(), row->end(), dst.begin() + (s * max_words + w) * dim);
      } else {
        ++grid.oov_tokens;
      }
    }
  }
  return grid;
}

}  // namespace mgmu
