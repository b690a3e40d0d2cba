// SPDX-License-Identifier: Apache-2.0
/**
 * @file   dataset_io.hpp
 * @brief  On-disk layout of synthetic cohorts and extracted features.
 *
 *   <root>/manifest.json
 *   <root>/embeddings.txt
 *   <root>/<subject>/<session>/{audio.tnsr, video.tnsr, text.txt}
 *   <root>/features/manifest.json
 *   <root>/features/<subject>/<session>/{audio,video}/segNNN.{tnsr,json}
 *   <root>/features/<subject>/<session>/text.{tnsr,json}
 */
#pragma once

#include <mgmu/pipeline.hpp>

namespace mgmu {

inline constexpr const char* kDatasetFormat = "mgmu-dataset";
inline constexpr const char* kFeatureFormat = "mgmu-features";

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text_file(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline json splits_to_json(const Splits& s) { return {{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

inline Splits splits_from_json(const json& j) {
  return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
          j.at("test").get<std::vector<std::string>>()};
}

/// Writes the cohort; the manifest carries no timestamps, so equal inputs give equal bytes.
inline void write_dataset(const fs::path& root, const Corpus& corpus, const RunConfig& cfg) {
  fs::create_directories(root);
  json subjects = json::array();
  for (const auto& s : corpus.subjects) {
    json scores = json::array();
    for (const auto& sc : s.session_scores) scores.push_back(std::vector<int>(sc.begin(), sc.end()));
    subjects.push_back({{"id", s.id},
                        {"diagnosed", s.diagnosed},
                        {"label", s.label()},
                        {"session_labels", s.session_labels},
                        {"bprs", scores}});
  }
  json sessions = json::array();
  for (const auto& rec : corpus.sessions) {
    const fs::path dir = root / rec.subject_id / rec.session_id;
    fs::create_directories(dir);
    write_tnsr(dir / "audio.tnsr", rec.audio.values, DType::float32);
    write_tnsr(dir / "video.tnsr", rec.video.values, DType::float32);
    write_text_file(dir / "text.txt", rec.text);
    sessions.push_back({{"subject", rec.subject_id},
                        {"session", rec.session_id},
                        {"label", rec.label},
                        {"audio_frames", rec.audio.frames()},
                        {"video_frames", rec.video.frames()}});
  }
  corpus.embeddings.save_text((root / "embeddings.txt").string());
  const auto& first = corpus.sessions.at(0);
  json manifest = {{"format", kDatasetFormat},
                   {"version", 1},
                   {"seed", cfg.data.cohort.seed},
                   {"config", config_to_json(cfg)},
                   {"audio", {{"frame_rate", first.audio.frame_rate}, {"channel_names", first.audio.channel_names}}},
                   {"video", {{"frame_rate", first.video.frame_rate}, {"channel_names", first.video.channel_names}}},
                   {"embeddings", "embeddings.txt"},
                   {"subjects", subjects},
                   {"sessions", sessions},
                   {"splits", splits_to_json(corpus.splits)},
                   {"split_hash", split_hash(corpus.splits)}};
  write_json(root / "manifest.json", manifest);
}

inline json read_dataset_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  if (!fs::exists(path)) throw std::runtime_error("no dataset manifest at " + path.string());
  json m = read_json(path);
  if (m.value("format", "") != kDatasetFormat) throw FormatError(path.string() + " is not a dataset manifest");
  return m;
}

inline ChannelSeries read_series(const fs::path& path, Modality m, const json& info) {
  if (!fs::exists(path)) throw std::runtime_error("missing modality file " + path.string());
  ChannelSeries s{m, info.at("channel_names").get<std::vector<std::string>>(), info.at("frame_rate").get<double>(),
                  read_tnsr(path), 0};
  validate_series(s);
  return s;
}

inline Corpus read_dataset(const fs::path& root) {
  const json m = read_dataset_manifest(root);
  Corpus c;
  for (const auto& j : m.at("subjects")) {
    SubjectProfile s;
    s.id = j.at("id").get<std::string>();
    s.diagnosed = j.at("diagnosed").get<bool>();
    s.session_labels = j.at("session_labels").get<std::vector<int>>();
    for (const auto& sc : j.at("bprs")) {
      const auto v = sc.get<std::vector<int>>();
      BprsScores b{};
      if (v.size() != b.size()) throw FormatError("dataset manifest: BPRS vector of wrong length");
      std::copy(v.begin(), v.end(), b.begin());
      s.session_scores.push_back(b);
    }
    c.subjects.push_back(std::move(s));
  }
  for (const auto& j : m.at("sessions")) {
    SessionRecord rec;
    rec.subject_id = j.at("subject").get<std::string>();
    rec.session_id = j.at("session").get<std::string>();
    rec.label = j.at("label").get<int>();
    const fs::path dir = root / rec.subject_id / rec.session_id;
    rec.audio = read_series(dir / "audio.tnsr", Modality::audio, m.at("audio"));
    rec.video = read_series(dir / "video.tnsr", Modality::video, m.at("video"));
    if (!fs::exists(dir / "text.txt")) throw std::runtime_error("missing modality file " + (dir / "text.txt").string());
    rec.text = read_text_file(dir / "text.txt");
    c.sessions.push_back(std::move(rec));
  }
  c.embeddings = EmbeddingTable::load_text((root / m.at("embeddings").get<std::string>()).string());
  c.splits = splits_from_json(m.at("splits"));
  verify_disjoint(c.splits);
  return c;
}

/// Identifies the inputs of feature extraction: dataset manifest bytes plus feature settings.
inline std::string features_checksum(const fs::path& root, const FeatureConfig& fc) {
  RunConfig probe;
  probe.features = fc;
  const std::string settings = config_to_json(probe).at("features").dump();
  return hex64(fnv1a(settings, fnv1a(read_text_file(root / "manifest.json"))));
}

inline std::string segment_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seg%03zu", k);
  return buf;
}

/**
 * Extracts and writes features. Returns false without touching anything when
 * the stored checksum matches and `force` is off.
 */
inline bool write_features(const fs::path& root, const FeatureConfig& fc, bool force) {
  const fs::path out = root / "features";
  const std::string checksum = features_checksum(root, fc);
  if (!force && fs::exists(out / "manifest.json")) {
    const json prev = read_json(out / "manifest.json");
    if (prev.value("checksum", "") == checksum) return false;
  }
  const json dm = read_dataset_manifest(root);
  const Corpus corpus = read_dataset(root);
  const FeatureSet fs_ = extract_features(corpus, fc);
  fs::remove_all(out);

  json sessions = json::array();
  for (std::size_t i = 0; i < fs_.sessions.size(); ++i) {
    const auto& s = fs_.sessions[i];
    const fs::path dir = out / s.subject_id / s.session_id;
    for (Modality m : {Modality::audio, Modality::video}) {
      const fs::path mdir = dir / to_string(m);
      fs::create_directories(mdir);
      const json& info = dm.at(to_string(m));
      const std::size_t delay = m == Modality::audio ? fc.audio_delay : fc.video_delay;
      const auto& segs = s.segments(m);
      for (std::size_t k = 0; k < segs.size(); ++k) {
        write_tnsr(mdir / (segment_name(k) + ".tnsr"), segs[k]);
        write_json(mdir / (segment_name(k) + ".json"), {{"kind", "fvtc"},
                                                         {"modality", to_string(m)},
                                                         {"frame_rate", info.at("frame_rate")},
                                                         {"channel_names", info.at("channel_names")},
                                                         {"D", delay},
                                                         {"S_max", nullptr},
                                                         {"W_max", nullptr},
                                                         {"degenerate_flags", s.degenerate(m)[k]}});
      }
    }
    write_tnsr(dir / "text.tnsr", s.text.values);
    write_json(dir / "text.json", {{"kind", "text_grid"},
                                   {"modality", "text"},
                                   {"frame_rate", nullptr},
                                   {"channel_names", nullptr},
                                   {"D", nullptr},
                                   {"S_max", fs_.max_sentences},
                                   {"W_max", fs_.max_words},
                                   {"degenerate_flags", nullptr},
                                   {"sentence_lengths", s.text.sentence_lengths},
                                   {"truncated_sentences", s.text.truncated_sentences},
                                   {"truncated_words", s.text.truncated_words},
                                   {"oov_tokens", s.text.oov_tokens}});
    sessions.push_back({{"subject", s.subject_id},
                        {"session", s.session_id},
                        {"label", s.label},
                        {"audio_segments", s.audio.size()},
                        {"video_segments", s.video.size()}});
  }
  RunConfig probe;
  probe.features = fc;
  write_json(out / "manifest.json", {{"format", kFeatureFormat},
                                     {"checksum", checksum},
                                     {"features", config_to_json(probe).at("features")},
                                     {"S_max", fs_.max_sentences},
                                     {"W_max", fs_.max_words},
                                     {"sessions", sessions}});
  return true;
}

inline FeatureSet read_features(const fs::path& root) {
  const fs::path dir = root / "features";
  if (!fs::exists(dir / "manifest.json")) {
    throw std::runtime_error("no features under " + dir.string() + "; run the features command first");
  }
  const json m = read_json(dir / "manifest.json");
  if (m.value("format", "") != kFeatureFormat) throw FormatError(dir.string() + " holds no feature manifest");
  FeatureSet fs_;
  fs_.max_sentences = m.at("S_max").get<std::size_t>();
  fs_.max_words = m.at("W_max").get<std::size_t>();
  for (const auto& j : m.at("sessions")) {
    SessionFeatures s;
    s.subject_id = j.at("subject").get<std::string>();
    s.session_id = j.at("session").get<std::string>();
    s.label = j.at("label").get<int>();
    const fs::path sdir = dir / s.subject_id / s.session_id;
    for (std::size_t k = 0; k < j.at("audio_segments").get<std::size_t>(); ++k)
      s.audio.push_back(read_tnsr(sdir / "audio" / (segment_name(k) + ".tnsr")));
    for (std::size_t k = 0; k < j.at("video_segments").get<std::size_t>(); ++k)
      s.video.push_back(read_tnsr(sdir / "video" / (segment_name(k) + ".tnsr")));
    const json side = read_json(sdir / "text.json");
    s.text.values = read_tnsr(sdir / "text.tnsr");
    s.text.sentence_lengths = side.at("sentence_lengths").get<std::vector<std::size_t>>();
    s.text.truncated_sentences = side.at("truncated_sentences").get<std::size_t>();
    s.text.truncated_words = side.at("truncated_words").get<std::size_t>();
    s.text.oov_tokens = side.at("oov_tokens").get<std::size_t>();
    fs_.sessions.push_back(std::move(s));
  }
  return fs_;
}

}  // namespace mgmu
