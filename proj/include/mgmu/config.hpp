// SPDX-License-Identifier: Apache-2.0
/**
 * @file   config.hpp
 * @brief  Run configuration with strict JSON (de)serialization.
 *
 * Every section lists its fields once in a `fields()` overload; the same list
 * drives reading (unknown keys rejected, missing keys keep their defaults)
 * and writing the fully resolved document.
 */
#pragma once

#include <mgmu/training.hpp>

#include <nlohmann/json.hpp>

#include <concepts>
#include <fstream>
#include <set>

namespace mgmu {

using json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  CohortSpec cohort;
  SplitRatios split;
};

struct FeatureConfig {
  double audio_window_s = 40.0;
  double audio_overlap_s = 5.0;
  std::size_t audio_delay = 50;
  double video_window_s = 20.0;
  double video_overlap_s = 5.0;
  std::size_t video_delay = 45;
  bool per_lag_means = false;
  /// Corpus maxima are used when zero.
  std::size_t max_sentences = 0;
  std::size_t max_words = 0;
};

struct TrainSection {
  TrainConfig base;
  /// Segment-classifier samples per epoch (0: all segments).
  std::size_t segment_samples_per_epoch = 0;
};

struct EvalConfig {
  BootstrapOptions bootstrap;
};

struct AblationConfig {
  std::vector<std::uint64_t> seeds = {0, 1, 2};
};

struct RunConfig {
  DataConfig data;
  FeatureConfig features;
  ModelConfig model;
  TrainSection train;
  EvalConfig eval;
  AblationConfig ablation;

  /// Copies feature/data geometry into the model section.
  void sync_model() {
    model.audio_channels = data.cohort.audio_channels;
    model.video_channels = data.cohort.video_channels;
    model.audio_delay = features.audio_delay;
    model.video_delay = features.video_delay;
    model.embedding_dim = data.cohort.embedding_dim;
  }
};

// ---------------------------------------------------------------------------
// Field lists
// ---------------------------------------------------------------------------

template <class V>
void fields(CohortSpec& s, V& v) {
  v("subjects_per_class", s.subjects_per_class);
  v("sessions_per_class", s.sessions_per_class);
  v("mixed_subjects", s.mixed_subjects);
  v("max_sessions_per_subject", s.max_sessions_per_subject);
  v("min_duration_min", s.min_duration_min);
  v("max_duration_min", s.max_duration_min);
  v("audio_rate", s.audio_rate);
  v("video_rate", s.video_rate);
  v("audio_channels", s.audio_channels);
  v("video_channels", s.video_channels);
  v("separation", s.separation);
  v("audio_coupling", s.audio_coupling);
  v("video_coupling", s.video_coupling);
  v("subject_jitter", s.subject_jitter);
  v("session_jitter", s.session_jitter);
  v("noise_level", s.noise_level);
  v("vocabulary_size", s.vocabulary_size);
  v("markers_per_class", s.markers_per_class);
  v("marker_rate", s.marker_rate);
  v("background_marker_rate", s.background_marker_rate);
  v("sentences_per_minute", s.sentences_per_minute);
  v("min_words", s.min_words);
  v("max_words", s.max_words);
  v("embedding_dim", s.embedding_dim);
  v("seed", s.seed);
}

template <class V>
void fields(SplitRatios& s, V& v) {
  v("train", s.train);
  v("val", s.val);
  v("test", s.test);
}

template <class V>
void fields(DataConfig& s, V& v) {
  fields(s.cohort, v);
  v("split", s.split);
}

template <class V>
void fields(FeatureConfig& s, V& v) {
  v("audio_window_s", s.audio_window_s);
  v("audio_overlap_s", s.audio_overlap_s);
  v("audio_delay", s.audio_delay);
  v("video_window_s", s.video_window_s);
  v("video_overlap_s", s.video_overlap_s);
  v("video_delay", s.video_delay);
  v("per_lag_means", s.per_lag_means);
  v("max_sentences", s.max_sentences);
  v("max_words", s.max_words);
}

template <class V>
void fields(SegmentNetConfig& s, V& v) {
  v("conv_channels", s.conv_channels);
  v("kernel", s.kernel);
  v("dilations", s.dilations);
  v("embedding", s.embedding);
  v("padding", s.padding);
  v("dropout", s.dropout);
}

template <class V>
void fields(SessionNetConfig& s, V& v) {
  v("conv_channels", s.conv_channels);
  v("kernel", s.kernel);
}

template <class V>
void fields(TextNetConfig& s, V& v) {
  v("filters", s.filters);
  v("kernel", s.kernel);
  v("conv_layers", s.conv_layers);
  v("lstm_hidden", s.lstm_hidden);
  v("dropout", s.dropout);
}

template <class V>
void fields(FusionNetConfig& s, V& v) {
  v("sequence_hidden", s.sequence_hidden);
  v("text", s.text);
  v("gate_dim", s.gate_dim);
  v("head_hidden", s.head_hidden);
  v("variant", s.variant);
  v("method", s.method);
  v("dropout", s.dropout);
}

template <class V>
void fields(LateFusionConfig& s, V& v) {
  v("gate_dim", s.gate_dim);
}

template <class V>
void fields(ModelConfig& s, V& v) {
  v("segment", s.segment);
  v("session", s.session);
  v("text", s.text);
  v("fusion", s.fusion);
  v("late", s.late);
}

template <class V>
void fields(TrainConfig& s, V& v) {
  v("max_epochs", s.max_epochs);
  v("lr", s.lr);
  v("beta1", s.beta1);
  v("beta2", s.beta2);
  v("epsilon", s.epsilon);
  v("lr_patience", s.lr_patience);
  v("lr_factor", s.lr_factor);
  v("early_stop_patience", s.early_stop_patience);
  v("batch_size", s.batch_size);
  v("samples_per_epoch", s.samples_per_epoch);
  v("seed", s.seed);
}

template <class V>
void fields(TrainSection& s, V& v) {
  fields(s.base, v);
  v("segment_samples_per_epoch", s.segment_samples_per_epoch);
}

template <class V>
void fields(BootstrapOptions& s, V& v) {
  v("replicates", s.replicates);
  v("alpha", s.alpha);
  v("seed", s.seed);
}

template <class V>
void fields(EvalConfig& s, V& v) {
  v("bootstrap", s.bootstrap);
}

template <class V>
void fields(AblationConfig& s, V& v) {
  v("seeds", s.seeds);
}

template <class V>
void fields(RunConfig& s, V& v) {
  v("data", s.data);
  v("features", s.features);
  v("model", s.model);
  v("train", s.train);
  v("eval", s.eval);
  v("ablation", s.ablation);
}

// ---------------------------------------------------------------------------
// Enumerations
// ---------------------------------------------------------------------------

inline void to_json(json& j, Padding p) { j = p == Padding::same ? "same" : "valid"; }
inline void from_json(const json& j, Padding& p) {
  const auto s = j.get<std::string>();
  if (s == "same") p = Padding::same;
  else if (s == "valid") p = Padding::valid;
  else throw ConfigError("padding must be \"same\" or \"valid\", got \"" + s + "\"");
}

inline void to_json(json& j, MgmuVariant v) { j = to_string(v); }
inline void from_json(const json& j, MgmuVariant& v) {
  try {
    v = variant_from_string(j.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline void to_json(json& j, FusionMethod m) { j = m == FusionMethod::mgmu ? "mgmu" : "concat"; }
inline void from_json(const json& j, FusionMethod& m) {
  const auto s = j.get<std::string>();
  if (s == "mgmu") m = FusionMethod::mgmu;
  else if (s == "concat") m = FusionMethod::concat;
  else throw ConfigError("fusion method must be \"mgmu\" or \"concat\", got \"" + s + "\"");
}

// ---------------------------------------------------------------------------
// Visitors
// ---------------------------------------------------------------------------

namespace detail {

struct JsonWriter;

template <class T>
concept Described = requires(T& t, JsonWriter& w) { fields(t, w); };

struct JsonWriter {
  json out = json::object();

  template <class T>
  void operator()(const char* key, T& value) {
    if constexpr (Described<T>) {
      JsonWriter sub;
      fields(value, sub);
      out[key] = std::move(sub.out);
    } else {
      out[key] = value;
    }
  }
};

struct JsonReader {
  const json& in;
  std::string path;
  std::set<std::string> known;

  template <class T>
  void operator()(const char* key, T& value) {
    known.insert(key);
    if (!in.contains(key)) return;
    const json& node = in.at(key);
    if constexpr (Described<T>) {
      JsonReader sub{node, path + key + "."};
      sub.read(value);
    } else {
      try {
        value = node.get<T>();
      } catch (const json::exception& e) {
        throw ConfigError("config key '" + path + key + "': " + e.what());
      } catch (const ConfigError& e) {
        throw ConfigError("config key '" + path + key + "': " + e.what());
      }
    }
  }

  template <class T>
  void read(T& value) {
    if (!in.is_object()) throw ConfigError("config section '" + path + "' must be an object");
    fields(value, *this);
    for (const auto& item : in.items()) {
      if (!known.contains(item.key())) throw ConfigError("unknown config key '" + path + item.key() + "'");
    }
  }
};

}  // namespace detail

inline json config_to_json(const RunConfig& cfg) {
  RunConfig copy = cfg;
  detail::JsonWriter w;
  fields(copy, w);
  return w.out;
}

/// Overlays `doc` on the defaults; unknown keys throw ConfigError.
inline RunConfig config_from_json(const json& doc, RunConfig base = {}) {
  detail::JsonReader r{doc, ""};
  r.read(base);
  base.sync_model();
  return base;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return config_from_json(doc);
}

inline RunConfig default_config() {
  RunConfig cfg;
  cfg.sync_model();
  return cfg;
}

}  // namespace mgmu
