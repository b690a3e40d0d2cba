// SPDX-License-Identifier: Apache-2.0
/**
 * @file   pipeline.hpp
 * @brief  In-memory stages shared by the CLI and the acceptance suite:
 *         cohort synthesis, feature extraction, unimodal and fusion training,
 *         evaluation and the fusion ablation.
 */
#pragma once

#include <mgmu/checkpoint.hpp>

#include <iomanip>
#include <memory>
#include <sstream>

namespace mgmu {

// ---------------------------------------------------------------------------
// Corpus and features
// ---------------------------------------------------------------------------

struct Corpus {
  std::vector<SubjectProfile> subjects;
  std::vector<SessionRecord> sessions;
  EmbeddingTable embeddings;
  Splits splits;
};

inline Corpus synthesize_corpus(const RunConfig& cfg) {
  const CohortPlan plan = plan_cohort(cfg.data.cohort);
  Corpus c;
  c.subjects = plan.subjects;
  c.splits = split_subjects(plan.subjects, cfg.data.split, cfg.data.cohort.seed);
  c.embeddings = synthetic_embeddings(plan);
  c.sessions.reserve(plan.sessions.size());
  for (std::size_t i = 0; i < plan.sessions.size(); ++i) c.sessions.push_back(synthesize_session(plan, i));
  return c;
}

struct SessionFeatures {
  std::string subject_id;
  std::string session_id;
  int label = 0;
  std::vector<Tensor> audio;  // FVTC [C*C, D+1] per segment
  std::vector<Tensor> video;
  TextGrid text;
  /// Zero-variance channel flags per segment.
  std::vector<std::vector<bool>> audio_degenerate, video_degenerate;

  const std::vector<Tensor>& segments(Modality m) const { return m == Modality::audio ? audio : video; }
  const std::vector<std::vector<bool>>& degenerate(Modality m) const {
    return m == Modality::audio ? audio_degenerate : video_degenerate;
  }
};

struct FeatureSet {
  std::vector<SessionFeatures> sessions;
  std::size_t max_sentences = 0;
  std::size_t max_words = 0;
};

inline std::vector<Tensor> fvtc_segments(const ChannelSeries& series, double window_s, double overlap_s,
                                         std::size_t delay, bool per_lag_means,
                                         std::vector<std::vector<bool>>* degenerate = nullptr) {
  std::vector<Tensor> out;
  for (const auto& seg : segment_series(series, window_s, overlap_s)) {
    FvtcTensor f = compute_fvtc(seg, delay, {per_lag_means});
    if (degenerate) degenerate->push_back(f.degenerate);
    out.push_back(std::move(f.values));
  }
  return out;
}

/// Corpus-wide sentence and word maxima after tokenization.
inline std::pair<std::size_t, std::size_t> text_extent(const std::vector<Sentences>& docs) {
  std::size_t s_max = 0, w_max = 0;
  for (const auto& doc : docs) {
    s_max = std::max(s_max, doc.size());
    for (const auto& sentence : doc) w_max = std::max(w_max, sentence.size());
  }
  return {std::max<std::size_t>(s_max, 1), std::max<std::size_t>(w_max, 1)};
}

inline FeatureSet extract_features(const Corpus& corpus, const FeatureConfig& fc) {
  FeatureSet fs;
  std::vector<Sentences> docs;
  docs.reserve(corpus.sessions.size());
  for (const auto& rec : corpus.sessions) docs.push_back(tokenize(rec.text));
  const auto [s_max, w_max] = text_extent(docs);
  fs.max_sentences = fc.max_sentences ? fc.max_sentences : s_max;
  fs.max_words = fc.max_words ? fc.max_words : w_max;
  for (std::size_t i = 0; i < corpus.sessions.size(); ++i) {
    const auto& rec = corpus.sessions[i];
    SessionFeatures s;
    s.subject_id = rec.subject_id;
    s.session_id = rec.session_id;
    s.label = rec.label;
    s.audio = fvtc_segments(rec.audio, fc.audio_window_s, fc.audio_overlap_s, fc.audio_delay, fc.per_lag_means,
                            &s.audio_degenerate);
    s.video = fvtc_segments(rec.video, fc.video_window_s, fc.video_overlap_s, fc.video_delay, fc.per_lag_means,
                            &s.video_degenerate);
    s.text = embed_text(docs[i], corpus.embeddings, fs.max_sentences, fs.max_words);
    fs.sessions.push_back(std::move(s));
  }
  return fs;
}

// ---------------------------------------------------------------------------
// Split bookkeeping
// ---------------------------------------------------------------------------

struct SplitIndex {
  std::vector<std::size_t> train, val, test;

  const std::vector<std::size_t>& get(std::string_view name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + std::string(name) + "'");
  }
};

/// Session indices per split. Verifies the subject sets are disjoint and that
/// every session's subject belongs to exactly one split.
inline SplitIndex index_splits(const FeatureSet& fs, const Splits& splits) {
  verify_disjoint(splits);
  const std::set<std::string> train(splits.train.begin(), splits.train.end());
  const std::set<std::string> val(splits.val.begin(), splits.val.end());
  const std::set<std::string> test(splits.test.begin(), splits.test.end());
  SplitIndex idx;
  for (std::size_t i = 0; i < fs.sessions.size(); ++i) {
    const auto& id = fs.sessions[i].subject_id;
    if (train.contains(id)) idx.train.push_back(i);
    else if (val.contains(id)) idx.val.push_back(i);
    else if (test.contains(id)) idx.test.push_back(i);
    else throw std::invalid_argument("session " + id + "/" + fs.sessions[i].session_id + " has no split");
  }
  return idx;
}

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

inline std::string split_hash(const Splits& s) {
  std::string text;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (const auto& id : *part) text += id + ",";
    text += "|";
  }
  return hex64(fnv1a(text));
}

inline std::vector<int> labels_of(const FeatureSet& fs, const std::vector<std::size_t>& indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(fs.sessions[i].label);
  return out;
}

// ---------------------------------------------------------------------------
// Unimodal models
// ---------------------------------------------------------------------------

/// Seed streams of the individual models.
enum class Stream : std::uint64_t { audio = 101, video = 102, text = 103, fusion = 104, late = 105 };

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s, std::uint64_t stage = 0) {
  return derive_seed(seed, {static_cast<std::uint64_t>(s), stage});
}

inline Stream stream_of(Modality m) { return m == Modality::audio ? Stream::audio : Stream::video; }

inline std::unique_ptr<StsCnn> make_sts(Modality m, const RunConfig& cfg) {
  std::mt19937_64 rng(stream_seed(cfg.train.base.seed, stream_of(m)));
  return std::make_unique<StsCnn>(m, cfg.model, rng);
}

inline std::unique_ptr<TextNet> make_text(const RunConfig& cfg) {
  std::mt19937_64 rng(stream_seed(cfg.train.base.seed, Stream::text));
  return std::make_unique<TextNet>(cfg.model, rng);
}

inline std::unique_ptr<FusionNet> make_fusion(const RunConfig& cfg) {
  std::mt19937_64 rng(stream_seed(cfg.train.base.seed, Stream::fusion));
  return std::make_unique<FusionNet>(cfg.model, rng);
}

inline std::unique_ptr<LateFusionNet> make_late(const RunConfig& cfg) {
  std::mt19937_64 rng(stream_seed(cfg.train.base.seed, Stream::late));
  return std::make_unique<LateFusionNet>(cfg.model, rng);
}

/// Detached segment-embedding stack [N, 128] for every session.
inline std::vector<Tensor> embed_sessions(const StsCnn& model, const FeatureSet& fs) {
  std::vector<Tensor> out;
  out.reserve(fs.sessions.size());
  for (const auto& s : fs.sessions) out.push_back(model.embed_session(s.segments(model.modality)));
  return out;
}

struct StsTraining {
  TrainResult segment;
  TrainResult session;
  std::vector<Tensor> embeddings;  // per session, after training
};

/**
 * Segment stage: every segment carries its session's label. Session stage:
 * the trained segment network is frozen and its embedding stacks classified.
 */
inline StsTraining train_sts(StsCnn& model, const FeatureSet& fs, const SplitIndex& idx, const RunConfig& cfg) {
  const Modality m = model.modality;
  auto flatten = [&](const std::vector<std::size_t>& sessions) {
    std::vector<std::pair<std::size_t, std::size_t>> segs;
    for (auto s : sessions)
      for (std::size_t k = 0; k < fs.sessions[s].segments(m).size(); ++k) segs.emplace_back(s, k);
    return segs;
  };
  const auto train_segs = flatten(idx.train);
  const auto val_segs = flatten(idx.val);
  auto segment_set = [&](const std::vector<std::pair<std::size_t, std::size_t>>& segs) {
    SampleSet set;
    for (const auto& [s, k] : segs) set.labels.push_back(fs.sessions[s].label);
    set.logits = [&model, &fs, &segs, m](std::size_t i, bool training, std::mt19937_64* rng) {
      const auto& [s, k] = segs[i];
      return model.segment.forward(fs.sessions[s].segments(m)[k], training, rng).logits;
    };
    return set;
  };
  StsTraining out;
  TrainConfig seg_cfg = cfg.train.base;
  seg_cfg.samples_per_epoch = cfg.train.segment_samples_per_epoch;
  seg_cfg.seed = stream_seed(cfg.train.base.seed, stream_of(m), 1);
  out.segment = train_model(model.segment.params(), segment_set(train_segs), segment_set(val_segs), seg_cfg);

  out.embeddings = embed_sessions(model, fs);
  auto session_set = [&](const std::vector<std::size_t>& sessions) {
    SampleSet set;
    set.labels = labels_of(fs, sessions);
    set.logits = [&model, &out, &sessions](std::size_t i, bool, std::mt19937_64*) {
      return model.session.forward(out.embeddings[sessions[i]]);
    };
    return set;
  };
  TrainConfig ses_cfg = cfg.train.base;
  ses_cfg.seed = stream_seed(cfg.train.base.seed, stream_of(m), 2);
  out.session = train_model(model.session.params(), session_set(idx.train), session_set(idx.val), ses_cfg);
  return out;
}

inline std::vector<std::vector<double>> predict_sts(const StsCnn& model, const std::vector<Tensor>& embeddings,
                                                    const std::vector<std::size_t>& sessions) {
  NoTapeScope no_tape;
  std::vector<std::vector<double>> out;
  for (auto s : sessions) out.push_back(softmax(model.session.forward(embeddings[s]).values()));
  return out;
}

inline SampleSet text_set(const TextNet& model, const FeatureSet& fs, const std::vector<std::size_t>& sessions) {
  SampleSet set;
  set.labels = labels_of(fs, sessions);
  set.logits = [&model, &fs, &sessions](std::size_t i, bool training, std::mt19937_64* rng) {
    return model.forward(fs.sessions[sessions[i]].text, training, rng).logits;
  };
  return set;
}

inline TrainResult train_text(TextNet& model, const FeatureSet& fs, const SplitIndex& idx, const RunConfig& cfg) {
  TrainConfig tc = cfg.train.base;
  tc.seed = stream_seed(cfg.train.base.seed, Stream::text, 1);
  return train_model(model.params(), text_set(model, fs, idx.train), text_set(model, fs, idx.val), tc);
}

inline std::vector<std::vector<double>> predict_text(const TextNet& model, const FeatureSet& fs,
                                                     const std::vector<std::size_t>& sessions) {
  return predict(text_set(model, fs, sessions));
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

struct FusionInputs {
  const FeatureSet* features = nullptr;
  const std::vector<Tensor>* audio = nullptr;  // frozen embedding stacks per session
  const std::vector<Tensor>* video = nullptr;
};

inline SampleSet fusion_set(const FusionNet& model, const FusionInputs& in, const std::vector<std::size_t>& sessions) {
  SampleSet set;
  set.labels = labels_of(*in.features, sessions);
  set.logits = [&model, in, &sessions](std::size_t i, bool training, std::mt19937_64* rng) {
    const std::size_t s = sessions[i];
    return model.forward((*in.audio)[s], (*in.video)[s], in.features->sessions[s].text, training, rng);
  };
  return set;
}

inline TrainResult train_fusion(FusionNet& model, const FusionInputs& in, const SplitIndex& idx, const RunConfig& cfg) {
  TrainConfig tc = cfg.train.base;
  tc.seed = stream_seed(cfg.train.base.seed, Stream::fusion, 1);
  return train_model(model.params(), fusion_set(model, in, idx.train), fusion_set(model, in, idx.val), tc);
}

inline std::vector<std::vector<double>> predict_fusion(const FusionNet& model, const FusionInputs& in,
                                                       const std::vector<std::size_t>& sessions) {
  return predict(fusion_set(model, in, sessions));
}

using ModalityPredictions = std::array<std::vector<std::vector<double>>, 3>;

inline SampleSet late_set(const LateFusionNet& model, const ModalityPredictions& preds, const std::vector<int>& labels) {
  SampleSet set;
  set.labels = labels;
  set.logits = [&model, &preds](std::size_t i, bool, std::mt19937_64*) {
    return model.forward({preds[0][i], preds[1][i], preds[2][i]});
  };
  return set;
}

/// Fits the pairwise late-fusion net on validation-split unimodal predictions,
/// which also serve as the monitored set.
inline TrainResult train_late(LateFusionNet& model, const ModalityPredictions& val_preds,
                              const std::vector<int>& val_labels, const RunConfig& cfg) {
  TrainConfig tc = cfg.train.base;
  tc.seed = stream_seed(cfg.train.base.seed, Stream::late, 1);
  const SampleSet set = late_set(model, val_preds, val_labels);
  return train_model(model.params(), set, set, tc);
}

inline std::vector<std::vector<double>> combine_predictions(const ModalityPredictions& preds, LateMethod method,
                                                            const LateFusionNet* net = nullptr) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < preds[0].size(); ++i)
    out.push_back(late_fusion_combine({preds[0][i], preds[1][i], preds[2][i]}, method, net));
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json report_to_json(const EvalReport& r, const std::string& model, const std::string& split,
                           const BootstrapOptions& boot) {
  json j;
  j["model"] = model;
  j["split"] = split;
  j["samples"] = r.samples;
  j["classes"] = json::array({class_name(0), class_name(1), class_name(2)});
  j["confusion"] = r.matrix.to_bracket();
  j["confusion_matrix"] = r.matrix.counts;
  j["support"] = r.scores.support;
  j["precision"] = r.scores.precision;
  j["recall"] = r.scores.recall;
  j["f1"] = r.scores.f1;
  j["weighted_f1"] = r.scores.weighted_f1;
  j["zero_division"] = r.scores.zero_division;
  j["ci"] = {{"lo", r.ci.lo}, {"hi", r.ci.hi}, {"alpha", boot.alpha}, {"replicates", boot.replicates},
             {"seed", boot.seed}};
  json per_class = json::array();
  for (const auto& a : r.auc.per_class) per_class.push_back(a ? json(*a) : json(nullptr));
  j["auc"] = {{"per_class", per_class},
              {"weighted", std::isnan(r.auc.weighted) ? json(nullptr) : json(r.auc.weighted)},
              {"warnings", r.auc.warnings}};
  return j;
}

inline std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

/// Rows shaped like the published results table.
inline std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t width = 5;
  for (const auto& [name, r] : rows) width = std::max(width, name.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "Model"
      << "  Weighted F1  95% CI for F1    AUC-ROC  Confusion matrix\n";
  for (const auto& [name, r] : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::setw(11)
        << fixed(r.scores.weighted_f1) << "  " << std::setw(15)
        << ("[" + fixed(r.ci.lo, 3) + ", " + fixed(r.ci.hi, 3) + "]") << "  " << std::setw(7)
        << fixed(r.auc.weighted) << "  " << r.matrix.to_bracket() << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

/// Trained unimodal models and their frozen embedding stacks.
struct UnimodalSuite {
  std::unique_ptr<StsCnn> audio, video;
  std::unique_ptr<TextNet> text;
  std::vector<Tensor> audio_embeddings, video_embeddings;

  ModalityPredictions predictions(const FeatureSet& fs, const std::vector<std::size_t>& sessions) const {
    return {predict_sts(*audio, audio_embeddings, sessions), predict_sts(*video, video_embeddings, sessions),
            predict_text(*text, fs, sessions)};
  }
  FusionInputs fusion_inputs(const FeatureSet& fs) const { return {&fs, &audio_embeddings, &video_embeddings}; }
};

inline UnimodalSuite train_unimodal_suite(const FeatureSet& fs, const SplitIndex& idx, const RunConfig& cfg) {
  UnimodalSuite suite;
  suite.audio = make_sts(Modality::audio, cfg);
  suite.audio_embeddings = train_sts(*suite.audio, fs, idx, cfg).embeddings;
  suite.video = make_sts(Modality::video, cfg);
  suite.video_embeddings = train_sts(*suite.video, fs, idx, cfg).embeddings;
  suite.text = make_text(cfg);
  train_text(*suite.text, fs, idx, cfg);
  return suite;
}

inline const std::array<std::string, 4>& ablation_names() {
  static const std::array<std::string, 4> names = {"L-F without mGMU", "L-F with mGMU", "I-F without mGMU",
                                                   "I-F with mGMU"};
  return names;
}

struct AblationRow {
  std::string name;
  EvalReport report;
  std::string split_hash;
};

/// The four fusion configurations evaluated on `split` with shared splits and unimodal models.
inline std::vector<AblationRow> run_ablation(const UnimodalSuite& suite, const FeatureSet& fs, const SplitIndex& idx,
                                             const Splits& splits, const RunConfig& cfg,
                                             const std::string& split = "test") {
  const auto& eval_idx = idx.get(split);
  const auto truth = labels_of(fs, eval_idx);
  const auto hash = split_hash(splits);
  const auto& boot = cfg.eval.bootstrap;
  std::vector<AblationRow> rows;
  const ModalityPredictions eval_preds = suite.predictions(fs, eval_idx);

  rows.push_back({ablation_names()[0], evaluate(combine_predictions(eval_preds, LateMethod::mean), truth, boot), hash});

  auto late = make_late(cfg);
  train_late(*late, suite.predictions(fs, idx.val), labels_of(fs, idx.val), cfg);
  rows.push_back({ablation_names()[1],
                  evaluate(combine_predictions(eval_preds, LateMethod::mgmu_pairwise, late.get()), truth, boot), hash});

  for (FusionMethod method : {FusionMethod::concat, FusionMethod::mgmu}) {
    RunConfig c = cfg;
    c.model.fusion.method = method;
    auto net = make_fusion(c);
    const FusionInputs in = suite.fusion_inputs(fs);
    train_fusion(*net, in, idx, c);
    rows.push_back({ablation_names()[method == FusionMethod::mgmu ? 3 : 2],
                    evaluate(predict_fusion(*net, in, eval_idx), truth, boot), hash});
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "configuration,weighted_f1,ci_lo,ci_hi,weighted_auc,confusion,split_hash\n";
  for (const auto& r : rows) {
    out << r.name << ',' << fixed(r.report.scores.weighted_f1, 6) << ',' << fixed(r.report.ci.lo, 6) << ','
        << fixed(r.report.ci.hi, 6) << ',' << fixed(r.report.auc.weighted, 6) << ",\"" << r.report.matrix.to_bracket()
        << "\"," << r.split_hash << '\n';
  }
}

}  // namespace mgmu
