// SPDX-License-Identifier: Apache-2.0
/**
 * @file   models.hpp
 * @brief  Minimal gated multimodal unit, segment-to-session CNNs, the
 *         CNN-LSTM text model, the three-gate intermediate fusion network and
 *         late-fusion combiners.
 */
#pragma once

#include <mgmu/features.hpp>
#include <mgmu/synth.hpp>

#include <map>
#include <optional>

namespace mgmu {

/// Named learnable tensors in registration order.
class ModelParams {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Tensor& add(const std::string& name, Tensor t) {
    if (index_.contains(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
    t.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  /// Registers every entry of `other` under `prefix`; the tensors are shared.
  void merge(const std::string& prefix, const ModelParams& other) {
    for (const auto& [name, t] : other.entries_) add(prefix + name, t);
  }

  bool contains(const std::string& name) const { return index_.contains(name); }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return entries_[it->second].second;
  }
  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).get(name));
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.first);
    return out;
  }

  std::size_t total_parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  /// Deep copy of the current values.
  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.emplace_back(e.second.values().begin(), e.second.values().end());
    return out;
  }

  void restore(const std::vector<std::vector<double>>& values) {
    if (values.size() != entries_.size()) throw std::invalid_argument("restore: parameter count mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto dst = entries_[i].second.mutable_values();
      if (values[i].size() != dst.size()) {
        throw DimensionError("restore: '" + entries_[i].first + "' has " + std::to_string(dst.size()) +
                             " values, snapshot holds " + std::to_string(values[i].size()));
      }
      std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
  }

  /// Copies values by name from `other`, which must hold the same entries.
  void assign_from(const ModelParams& other) {
    for (auto& [name, t] : entries_) {
      const Tensor& src = other.get(name);
      if (src.shape() != t.shape()) {
        throw DimensionError("parameter '" + name + "': shape " + shape_str(src.shape()) + " vs " +
                             shape_str(t.shape()));
      }
      std::copy(src.values().begin(), src.values().end(), t.mutable_values().begin());
    }
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class MgmuVariant { as_written, complementary };
enum class FusionMethod { mgmu, concat };

inline std::string to_string(MgmuVariant v) { return v == MgmuVariant::as_written ? "as_written" : "complementary"; }
inline MgmuVariant variant_from_string(std::string_view s) {
  if (s == "as_written") return MgmuVariant::as_written;
  if (s == "complementary") return MgmuVariant::complementary;
  throw std::invalid_argument("unknown mGMU variant '" + std::string(s) + "'");
}

struct SegmentNetConfig {
  std::size_t conv_channels = 32;
  std::size_t kernel = 3;
  std::vector<std::size_t> dilations = {1, 3, 7, 15};
  std::size_t embedding = 128;
  Padding padding = Padding::same;
  double dropout = 0.0;
};

struct SessionNetConfig {
  std::size_t conv_channels = 32;
  std::size_t kernel = 3;
};

struct TextNetConfig {
  std::size_t filters = 64;
  std::size_t kernel = 3;
  std::size_t conv_layers = 1;
  std::size_t lstm_hidden = 64;
  double dropout = 0.0;
};

struct FusionNetConfig {
  /// Hidden size of both stacked LSTMs on the audio and video paths.
  std::size_t sequence_hidden = 128;
  TextNetConfig text = {64, 3, 2, 64, 0.0};
  std::size_t gate_dim = 64;
  std::vector<std::size_t> head_hidden = {96};
  MgmuVariant variant = MgmuVariant::complementary;
  FusionMethod method = FusionMethod::mgmu;
  double dropout = 0.0;
};

struct LateFusionConfig {
  std::size_t gate_dim = 8;
};

struct ModelConfig {
  std::size_t classes = kNumClasses;
  std::size_t audio_channels = 8;
  std::size_t audio_delay = 50;
  std::size_t video_channels = 10;
  std::size_t video_delay = 45;
  std::size_t embedding_dim = 100;
  SegmentNetConfig segment;
  SessionNetConfig session;
  TextNetConfig text;
  FusionNetConfig fusion;
  LateFusionConfig late;
};

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

struct DenseLayer {
  Tensor weight, bias;
  Tensor operator()(const Tensor& x) const { return dense(x, weight, bias); }
};

inline DenseLayer make_dense(ModelParams& reg, const std::string& name, std::size_t in, std::size_t out,
                             std::mt19937_64& rng) {
  return {reg.add(name + ".weight", glorot_uniform({out, in}, in, out, rng)),
          reg.add(name + ".bias", zeros_param({out}))};
}

struct ConvLayer {
  Tensor kernels, bias;
  std::size_t dilation = 1;
  Padding padding = Padding::same;
  Tensor operator()(const Tensor& x) const {
    return add_channel_bias(conv1d_dilated(x, kernels, dilation, padding), bias);
  }
};

inline ConvLayer make_conv(ModelParams& reg, const std::string& name, std::size_t in, std::size_t out,
                           std::size_t kernel, std::size_t dilation, Padding padding, std::mt19937_64& rng) {
  return {reg.add(name + ".kernel", glorot_uniform({out, in, kernel}, in * kernel, out * kernel, rng)),
          reg.add(name + ".bias", zeros_param({out})), dilation, padding};
}

/// Forget-gate bias starts at 1.
inline LstmParams make_lstm(ModelParams& reg, const std::string& name, std::size_t in, std::size_t hidden,
                            std::mt19937_64& rng) {
  LstmParams p;
  p.input_weights = reg.add(name + ".input_weights", glorot_uniform({4 * hidden, in}, in, 4 * hidden, rng));
  p.recurrent_weights =
      reg.add(name + ".recurrent_weights", glorot_uniform({4 * hidden, hidden}, hidden, 4 * hidden, rng));
  Tensor bias = zeros_param({4 * hidden});
  for (std::size_t i = hidden; i < 2 * hidden; ++i) bias.mutable_values()[i] = 1.0;
  p.bias = reg.add(name + ".bias", bias);
  return p;
}

// ---------------------------------------------------------------------------
// Minimal gated multimodal unit
// ---------------------------------------------------------------------------

/// Bias-free projections W1 [dh, d1], W2 [dh, d2] and gate Wz [dh, d1 + d2].
struct MgmuParams {
  Tensor w1, w2, wz;
  MgmuVariant variant = MgmuVariant::complementary;

  std::size_t out_dim() const { return w1.dim(0); }
};

inline MgmuParams make_mgmu(ModelParams& reg, const std::string& name, std::size_t d1, std::size_t d2,
                            std::size_t dh, MgmuVariant variant, std::mt19937_64& rng) {
  MgmuParams p;
  p.w1 = reg.add(name + ".w1", glorot_uniform({dh, d1}, d1, dh, rng));
  p.w2 = reg.add(name + ".w2", glorot_uniform({dh, d2}, d2, dh, rng));
  p.wz = reg.add(name + ".wz", glorot_uniform({dh, d1 + d2}, d1 + d2, dh, rng));
  p.variant = variant;
  return p;
}

struct MgmuResult {
  Tensor h, h1, h2, z;
};

/**
 * h1 = tanh(W1 x1), h2 = tanh(W2 x2), z = sigmoid(Wz [x1, x2]).
 * as_written:    h = z*h1 + z*h2
 * complementary: h = z*h1 + (1 - z)*h2
 */
inline MgmuResult mgmu_forward(const Tensor& x1, const Tensor& x2, const MgmuParams& p) {
  const bool ok = x1.rank() == 1 && x2.rank() == 1 && p.w1.rank() == 2 && p.w2.rank() == 2 &&
                  p.wz.rank() == 2 && p.w1.dim(1) == x1.dim(0) && p.w2.dim(1) == x2.dim(0) &&
                  p.wz.dim(1) == x1.dim(0) + x2.dim(0) && p.w2.dim(0) == p.w1.dim(0) &&
                  p.wz.dim(0) == p.w1.dim(0);
  if (!ok) {
    throw DimensionError("mgmu: x1 " + shape_str(x1.shape()) + ", x2 " + shape_str(x2.shape()) + ", W1 " +
                         shape_str(p.w1.shape()) + ", W2 " + shape_str(p.w2.shape()) + ", Wz " +
                         shape_str(p.wz.shape()));
  }
  MgmuResult r;
  r.h1 = tanh(matmul(p.w1, x1));
  r.h2 = tanh(matmul(p.w2, x2));
  r.z = sigmoid(matmul(p.wz, concat({x1, x2})));
  if (p.variant == MgmuVariant::as_written) {
    r.h = add(mul(r.z, r.h1), mul(r.z, r.h2));
  } else {
    r.h = add(mul(r.z, r.h1), mul(affine(r.z, -1.0, 1.0), r.h2));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Segment-to-session CNN (audio / video)
// ---------------------------------------------------------------------------

/// Dilated conv stack over one FVTC matrix [C*C, D+1].
class SegmentNet {
 public:
  struct Output {
    Tensor logits;     // [classes]
    Tensor embedding;  // [embedding]
  };

  SegmentNet(std::size_t in_channels, std::size_t steps, const SegmentNetConfig& cfg, std::size_t classes,
             std::mt19937_64& rng)
      : in_channels_(in_channels), steps_(steps), cfg_(cfg) {
    std::size_t c = in_channels;
    for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
      convs_.push_back(make_conv(params_, "conv" + std::to_string(i), c, cfg.conv_channels, cfg.kernel,
                                 cfg.dilations[i], cfg.padding, rng));
      c = cfg.conv_channels;
    }
    embed_ = make_dense(params_, "embed", c, cfg.embedding, rng);
    out_ = make_dense(params_, "out", cfg.embedding, classes, rng);
  }

  Output forward(const Tensor& fvtc, bool training = false, std::mt19937_64* rng = nullptr) const {
    if (fvtc.shape() != Shape{in_channels_, steps_}) {
      throw DimensionError("segment net: expected input " + shape_str({in_channels_, steps_}) + ", got " +
                           shape_str(fvtc.shape()));
    }
    Tensor x = fvtc;
    for (const auto& conv : convs_) x = relu(conv(x));
    Tensor pooled = masked_mean_time(x, std::vector<bool>(x.dim(1), true));
    Tensor embedding = tanh(embed_(pooled));
    Tensor head = training && rng ? dropout(embedding, cfg_.dropout, *rng) : embedding;
    return {out_(head), embedding};
  }

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  std::size_t embedding_dim() const { return cfg_.embedding; }

 private:
  std::size_t in_channels_, steps_;
  SegmentNetConfig cfg_;
  ModelParams params_;
  std::vector<ConvLayer> convs_;
  DenseLayer embed_, out_;
};

/// One conv layer over the stacked segment embeddings, masked mean, dense.
class SessionNet {
 public:
  SessionNet(std::size_t embedding, const SessionNetConfig& cfg, std::size_t classes, std::mt19937_64& rng)
      : embedding_(embedding) {
    conv_ = make_conv(params_, "conv", embedding, cfg.conv_channels, cfg.kernel, 1, Padding::same, rng);
    out_ = make_dense(params_, "out", cfg.conv_channels, classes, rng);
  }

  /**
   * `segments` is [N, embedding]. Rows whose mask entry is false are padding:
   * they are zeroed before the convolution and excluded from the pool.
   */
  Tensor forward(const Tensor& segments, const std::vector<bool>& mask = {}) const {
    if (segments.rank() != 2 || segments.dim(1) != embedding_ || segments.dim(0) == 0) {
      throw DimensionError("session net: expected [N >= 1, " + std::to_string(embedding_) + "], got " +
                           shape_str(segments.shape()));
    }
    const std::size_t n = segments.dim(0);
    std::vector<bool> real = mask.empty() ? std::vector<bool>(n, true) : mask;
    if (real.size() != n) throw DimensionError("session net: mask length differs from segment count");
    if (std::find(real.begin(), real.end(), true) == real.end()) {
      throw std::invalid_argument("session net: no real segments");
    }
    Tensor rows = segments;
    if (std::find(real.begin(), real.end(), false) != real.end()) {
      std::vector<double> keep(segments.numel(), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        if (real[i]) std::fill_n(keep.begin() + i * embedding_, embedding_, 1.0);
      rows = mul(segments, Tensor(segments.shape(), std::move(keep)));
    }
    Tensor x = relu(conv_(transpose(rows)));
    return out_(masked_mean_time(x, real));
  }

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

 private:
  std::size_t embedding_;
  ModelParams params_;
  ConvLayer conv_;
  DenseLayer out_;
};

/// Segment and session stages of one modality.
struct StsCnn {
  Modality modality;
  SegmentNet segment;
  SessionNet session;

  StsCnn(Modality m, const ModelConfig& cfg, std::mt19937_64& rng)
      : modality(m),
        segment(input_channels(m, cfg), input_steps(m, cfg), cfg.segment, cfg.classes, rng),
        session(cfg.segment.embedding, cfg.session, cfg.classes, rng) {}

  static std::size_t input_channels(Modality m, const ModelConfig& cfg) {
    const std::size_t c = m == Modality::audio ? cfg.audio_channels : cfg.video_channels;
    return c * c;
  }
  static std::size_t input_steps(Modality m, const ModelConfig& cfg) {
    return (m == Modality::audio ? cfg.audio_delay : cfg.video_delay) + 1;
  }

  /// Stacks detached segment embeddings into [N, embedding].
  Tensor embed_session(const std::vector<Tensor>& fvtcs) const {
    NoTapeScope no_tape;
    const std::size_t e = segment.embedding_dim();
    std::vector<double> rows;
    rows.reserve(fvtcs.size() * e);
    for (const auto& f : fvtcs) {
      auto emb = segment.forward(f).embedding;
      rows.insert(rows.end(), emb.values().begin(), emb.values().end());
    }
    return Tensor(Shape{fvtcs.size(), e}, std::move(rows));
  }

  Tensor session_logits(const std::vector<Tensor>& fvtcs) const { return session.forward(embed_session(fvtcs)); }

  ModelParams params() const {
    ModelParams all;
    all.merge("segment.", segment.params());
    all.merge("session.", session.params());
    return all;
  }
};

// ---------------------------------------------------------------------------
// Text
// ---------------------------------------------------------------------------

/// Real words of sentence `s` as an [E, L] matrix (embedding channels by words).
inline Tensor sentence_matrix(const TextGrid& grid, std::size_t s) {
  const std::size_t len = grid.sentence_lengths.at(s);
  const std::size_t e = grid.embedding_dim(), w_max = grid.max_words();
  Tensor m(Shape{e, len});
  auto dst = m.mutable_values();
  const double* src = grid.values.data() + s * w_max * e;
  for (std::size_t w = 0; w < len; ++w)
    for (std::size_t k = 0; k < e; ++k) dst[k * len + w] = src[w * e + k];
  return m;
}

/// Per-sentence convolutions with max-over-words, then an LSTM over real sentences.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ModelParams& reg, const std::string& prefix, std::size_t embedding_dim, const TextNetConfig& cfg,
              std::mt19937_64& rng)
      : embedding_dim_(embedding_dim) {
    std::size_t c = embedding_dim;
    for (std::size_t i = 0; i < cfg.conv_layers; ++i) {
      convs_.push_back(make_conv(reg, prefix + "conv" + std::to_string(i), c, cfg.filters, cfg.kernel, 1,
                                 Padding::same, rng));
      c = cfg.filters;
    }
    lstm_ = make_lstm(reg, prefix + "lstm", c, cfg.lstm_hidden, rng);
  }

  Tensor forward(const TextGrid& grid) const {
    if (grid.values.rank() != 3 || grid.embedding_dim() != embedding_dim_) {
      throw DimensionError("text encoder: grid " + shape_str(grid.values.shape()) + " for embedding dim " +
                           std::to_string(embedding_dim_));
    }
    std::vector<Tensor> sentences;
    for (std::size_t s = 0; s < grid.max_sentences(); ++s) {
      if (grid.sentence_lengths[s] == 0) continue;
      Tensor x = sentence_matrix(grid, s);
      for (const auto& conv : convs_) x = relu(conv(x));
      sentences.push_back(max_over_time(x));
    }
    if (sentences.empty()) throw std::invalid_argument("text encoder: grid has no real sentence");
    return lstm_sequence(sentences, lstm_).back();
  }

  std::size_t latent_dim() const { return lstm_.hidden(); }

 private:
  std::size_t embedding_dim_ = 0;
  std::vector<ConvLayer> convs_;
  LstmParams lstm_;
};

class TextNet {
 public:
  struct Output {
    Tensor logits, latent;
  };

  TextNet(const ModelConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg.text), encoder_(params_, "", cfg.embedding_dim, cfg.text, rng) {
    out_ = make_dense(params_, "out", encoder_.latent_dim(), cfg.classes, rng);
  }

  Output forward(const TextGrid& grid, bool training = false, std::mt19937_64* rng = nullptr) const {
    Tensor latent = encoder_.forward(grid);
    Tensor head = training && rng ? dropout(latent, cfg_.dropout, *rng) : latent;
    return {out_(head), latent};
  }

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

 private:
  TextNetConfig cfg_;
  ModelParams params_;
  TextEncoder encoder_;
  DenseLayer out_;
};

// ---------------------------------------------------------------------------
// Intermediate fusion
// ---------------------------------------------------------------------------

/// Two stacked LSTMs over the rows of an [N, d] sequence; returns the last h.
class SequenceEncoder {
 public:
  SequenceEncoder() = default;
  SequenceEncoder(ModelParams& reg, const std::string& prefix, std::size_t in, std::size_t hidden,
                  std::mt19937_64& rng)
      : in_(in) {
    first_ = make_lstm(reg, prefix + "lstm0", in, hidden, rng);
    second_ = make_lstm(reg, prefix + "lstm1", hidden, hidden, rng);
  }

  Tensor forward(const Tensor& sequence) const {
    if (sequence.rank() != 2 || sequence.dim(1) != in_ || sequence.dim(0) == 0) {
      throw DimensionError("sequence encoder: expected [N >= 1, " + std::to_string(in_) + "], got " +
                           shape_str(sequence.shape()));
    }
    std::vector<Tensor> rows;
    rows.reserve(sequence.dim(0));
    for (std::size_t t = 0; t < sequence.dim(0); ++t) {
      if (sequence.requires_grad()) {
        rows.push_back(reshape(slice(sequence, 0, t, t + 1), Shape{in_}));
      } else {
        rows.emplace_back(Shape{in_}, std::vector<double>(sequence.data() + t * in_, sequence.data() + (t + 1) * in_));
      }
    }
    return lstm_sequence(lstm_sequence(rows, first_), second_).back();
  }

  std::size_t latent_dim() const { return second_.hidden(); }

 private:
  std::size_t in_ = 0;
  LstmParams first_, second_;
};

/**
 * Audio and video embedding stacks each pass through two LSTMs, text through
 * convolutions and one LSTM. The three latents are fused pairwise (AV, AT,
 * VT) by mGMUs, concatenated and classified by a dense head. With
 * FusionMethod::concat the latents are concatenated directly.
 */
class FusionNet {
 public:
  FusionNet(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg.fusion) {
    const auto& f = cfg.fusion;
    audio_ = SequenceEncoder(params_, "audio.", cfg.segment.embedding, f.sequence_hidden, rng);
    video_ = SequenceEncoder(params_, "video.", cfg.segment.embedding, f.sequence_hidden, rng);
    text_ = TextEncoder(params_, "text.", cfg.embedding_dim, f.text, rng);
    const std::size_t da = audio_.latent_dim(), dv = video_.latent_dim(), dt = text_.latent_dim();
    std::size_t width = 0;
    if (f.method == FusionMethod::mgmu) {
      gates_.push_back(make_mgmu(params_, "gate.av", da, dv, f.gate_dim, f.variant, rng));
      gates_.push_back(make_mgmu(params_, "gate.at", da, dt, f.gate_dim, f.variant, rng));
      gates_.push_back(make_mgmu(params_, "gate.vt", dv, dt, f.gate_dim, f.variant, rng));
      width = 3 * f.gate_dim;
    } else {
      width = da + dv + dt;
    }
    for (std::size_t i = 0; i < f.head_hidden.size(); ++i) {
      head_.push_back(make_dense(params_, "head" + std::to_string(i), width, f.head_hidden[i], rng));
      width = f.head_hidden[i];
    }
    head_.push_back(make_dense(params_, "head" + std::to_string(f.head_hidden.size()), width, cfg.classes, rng));
  }

  struct Latents {
    Tensor audio, video, text;
  };

  Latents encode(const Tensor& audio_seq, const Tensor& video_seq, const TextGrid& grid) const {
    return {audio_.forward(audio_seq), video_.forward(video_seq), text_.forward(grid)};
  }

  /// Concatenated fusion vector (3 * gate_dim for mGMU fusion).
  Tensor fuse(const Latents& l) const {
    if (cfg_.method == FusionMethod::concat) return concat({l.audio, l.video, l.text});
    return concat({mgmu_forward(l.audio, l.video, gates_[0]).h, mgmu_forward(l.audio, l.text, gates_[1]).h,
                   mgmu_forward(l.video, l.text, gates_[2]).h});
  }

  Tensor classify(const Tensor& fused, bool training = false, std::mt19937_64* rng = nullptr) const {
    Tensor x = fused;
    for (std::size_t i = 0; i + 1 < head_.size(); ++i) {
      x = relu(head_[i](x));
      if (training && rng) x = dropout(x, cfg_.dropout, *rng);
    }
    return head_.back()(x);
  }

  Tensor forward(const Tensor& audio_seq, const Tensor& video_seq, const TextGrid& grid, bool training = false,
                 std::mt19937_64* rng = nullptr) const {
    return classify(fuse(encode(audio_seq, video_seq, grid)), training, rng);
  }

  const std::vector<MgmuParams>& gates() const { return gates_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

 private:
  FusionNetConfig cfg_;
  ModelParams params_;
  SequenceEncoder audio_, video_;
  TextEncoder text_;
  std::vector<MgmuParams> gates_;
  std::vector<DenseLayer> head_;
};

// ---------------------------------------------------------------------------
// Late fusion
// ---------------------------------------------------------------------------

enum class LateMethod { mean, mgmu_pairwise };

inline void require_simplex(std::span<const double> p, double tol = 1e-9) {
  double total = 0.0;
  for (double v : p) {
    if (v < -tol) throw std::invalid_argument("late fusion: negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > tol) {
    throw std::invalid_argument("late fusion: probabilities sum to " + std::to_string(total));
  }
}

/// Elementwise average of the per-modality probability vectors.
inline std::vector<double> late_fusion_mean(const std::array<std::vector<double>, 3>& preds) {
  std::vector<double> out(preds[0].size(), 0.0);
  for (const auto& p : preds) {
    require_simplex(p);
    if (p.size() != out.size()) throw DimensionError("late fusion: probability vectors differ in length");
    for (std::size_t i = 0; i < p.size(); ++i) out[i] += p[i] / 3.0;
  }
  return out;
}

/// Three mGMUs over (audio, video), (audio, text), (video, text) probabilities.
class LateFusionNet {
 public:
  LateFusionNet(const ModelConfig& cfg, std::mt19937_64& rng) {
    const std::size_t k = cfg.classes, dh = cfg.late.gate_dim;
    gates_.push_back(make_mgmu(params_, "gate.av", k, k, dh, cfg.fusion.variant, rng));
    gates_.push_back(make_mgmu(params_, "gate.at", k, k, dh, cfg.fusion.variant, rng));
    gates_.push_back(make_mgmu(params_, "gate.vt", k, k, dh, cfg.fusion.variant, rng));
    out_ = make_dense(params_, "out", 3 * dh, k, rng);
  }

  /// Returns logits.
  Tensor forward(const std::array<std::vector<double>, 3>& preds) const {
    std::array<Tensor, 3> p;
    for (std::size_t m = 0; m < 3; ++m) {
      require_simplex(preds[m]);
      p[m] = Tensor::vector(preds[m]);
    }
    return out_(concat({mgmu_forward(p[0], p[1], gates_[0]).h, mgmu_forward(p[0], p[2], gates_[1]).h,
                        mgmu_forward(p[1], p[2], gates_[2]).h}));
  }

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

 private:
  ModelParams params_;
  std::vector<MgmuParams> gates_;
  DenseLayer out_;
};

/// Probabilities for `mean`; for `mgmu_pairwise`, softmax of the trained net's logits.
inline std::vector<double> late_fusion_combine(const std::array<std::vector<double>, 3>& preds, LateMethod method,
                                               const LateFusionNet* net = nullptr) {
  if (method == LateMethod::mean) return late_fusion_mean(preds);
  if (net == nullptr) throw std::invalid_argument("late fusion: mgmu_pairwise needs a trained network");
  NoTapeScope no_tape;
  return softmax(net->forward(preds).values());
}

}  // namespace mgmu
