// SPDX-License-Identifier: Apache-2.0
/**
 * @file   synth.hpp
 * @brief  Synthetic interview cohort with BPRS-derived labels and
 *         subject-grouped splits.
 *
 * Audio and video channels follow a VAR(1) process x(t+1) = A x(t) + noise
 * whose cross-channel coupling depends on the session's class, so delayed
 * correlation features carry the label with a strength set by
 * CohortSpec::separation. Text is sampled from a shared pseudo-word
 * vocabulary with class-specific marker words.
 */
#pragma once

#include <mgmu/features.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <map>
#include <set>

namespace mgmu {

inline constexpr std::size_t kNumClasses = 3;

/// Class indices follow the confusion-matrix order HC, M-SZ, P-SZ.
enum SymptomClass : int { kHealthy = 0, kMixed = 1, kPositive = 2 };

inline std::string class_name(int c) {
  static const char* names[] = {"HC", "M-SZ", "P-SZ"};
  if (c < 0 || c >= static_cast<int>(kNumClasses)) throw std::out_of_range("class index " + std::to_string(c));
  return names[c];
}

inline constexpr std::size_t kBprsItems = 18;
using BprsScores = std::array<int, kBprsItems>;

/// Zero-based BPRS items: conceptual disorganization, grandiosity,
/// hallucinatory behavior, unusual thought content.
inline constexpr std::array<std::size_t, 4> kPositiveItems = {3, 7, 11, 14};
/// Emotional withdrawal, motor retardation, blunted affect.
inline constexpr std::array<std::size_t, 3> kNegativeItems = {2, 12, 15};

inline double positive_mean(const BprsScores& s) {
  double total = 0.0;
  for (auto i : kPositiveItems) total += s[i];
  return total / static_cast<double>(kPositiveItems.size());
}

inline double negative_mean(const BprsScores& s) {
  double total = 0.0;
  for (auto i : kNegativeItems) total += s[i];
  return total / static_cast<double>(kNegativeItems.size());
}

/// Diagnosis first, then the positive-item mean with an inclusive 3.5 cutoff.
inline int assign_class(bool diagnosed, const BprsScores& scores) {
  for (int v : scores) {
    if (v < 1 || v > 7) throw std::out_of_range("BPRS item score " + std::to_string(v) + " outside [1, 7]");
  }
  if (!diagnosed) return kHealthy;
  return positive_mean(scores) >= 3.5 ? kPositive : kMixed;
}

/// One subject; BPRS is assessed before every session.
struct SubjectProfile {
  std::string id;
  bool diagnosed = false;
  std::vector<BprsScores> session_scores;
  std::vector<int> session_labels;

  std::size_t session_count() const { return session_labels.size(); }

  /// Most frequent session label; ties go to the lower class index.
  int label() const {
    std::array<std::size_t, kNumClasses> counts{};
    for (int l : session_labels) ++counts.at(static_cast<std::size_t>(l));
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
};

struct CohortSpec {
  /// Subjects with at least one session in each class.
  std::array<std::size_t, kNumClasses> subjects_per_class = {16, 19, 11};
  std::array<std::size_t, kNumClasses> sessions_per_class = {54, 56, 30};
  /// Diagnosed subjects whose sessions fall in both M-SZ and P-SZ; they are
  /// counted once per class in subjects_per_class.
  std::size_t mixed_subjects = 6;
  std::size_t max_sessions_per_subject = 5;
  double min_duration_min = 4.0;
  double max_duration_min = 12.0;

  double audio_rate = kDefaultAudioRate;
  double video_rate = kDefaultVideoRate;
  std::size_t audio_channels = 8;
  std::size_t video_channels = 10;

  /// Scales every planted class signal; 0 makes classes identically distributed.
  double separation = 0.5;
  double audio_coupling = 0.15;
  double video_coupling = 0.15;
  double subject_jitter = 0.04;
  double session_jitter = 0.02;
  double noise_level = 1.0;

  std::size_t vocabulary_size = 400;
  std::size_t markers_per_class = 8;
  double marker_rate = 0.15;
  double background_marker_rate = 0.02;
  double sentences_per_minute = 3.0;
  std::size_t min_words = 4;
  std::size_t max_words = 14;
  std::size_t embedding_dim = 100;

  std::uint64_t seed = 0;

  std::size_t distinct_subjects() const {
    return subjects_per_class[0] + subjects_per_class[1] + subjects_per_class[2] - mixed_subjects;
  }
  std::size_t total_sessions() const {
    return sessions_per_class[0] + sessions_per_class[1] + sessions_per_class[2];
  }

  /// `n` subjects split evenly over the classes, two sessions each, none mixed.
  static CohortSpec with_subjects(std::size_t n);
  static CohortSpec with_subjects(std::size_t n, CohortSpec base) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      base.subjects_per_class[c] = n / kNumClasses + (c < n % kNumClasses ? 1 : 0);
      base.sessions_per_class[c] = 2 * base.subjects_per_class[c];
    }
    base.mixed_subjects = 0;
    return base;
  }

  /// Nine subjects of one to two minutes: fast end-to-end runs.
  static CohortSpec tiny(std::uint64_t seed = 0);
};

inline CohortSpec CohortSpec::with_subjects(std::size_t n) { return with_subjects(n, CohortSpec{}); }

inline CohortSpec CohortSpec::tiny(std::uint64_t seed) {
  CohortSpec s = with_subjects(9);
  s.min_duration_min = 1.0;
  s.max_duration_min = 2.0;
  s.seed = seed;
  return s;
}

inline void validate_spec(const CohortSpec& s) {
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (s.subjects_per_class[c] == 0 || s.sessions_per_class[c] == 0) {
      throw std::invalid_argument("cohort: every class needs subjects and sessions");
    }
  }
  if (s.mixed_subjects > std::min(s.subjects_per_class[kMixed], s.subjects_per_class[kPositive])) {
    throw std::invalid_argument("cohort: more mixed subjects than diagnosed subjects of a class");
  }
  if (s.max_sessions_per_subject == 0) throw std::invalid_argument("cohort: max sessions per subject must be positive");
  if (!(s.min_duration_min > 0.0) || s.max_duration_min < s.min_duration_min) {
    throw std::invalid_argument("cohort: bad session duration range");
  }
  if (s.audio_channels == 0 || s.video_channels == 0) throw std::invalid_argument("cohort: channel counts must be positive");
  if (s.separation < 0.0) throw std::invalid_argument("cohort: separation must be non-negative");
  if (s.min_words == 0 || s.max_words < s.min_words) throw std::invalid_argument("cohort: bad sentence length range");
  if (s.vocabulary_size < 10) throw std::invalid_argument("cohort: vocabulary too small");
}

/// splitmix64 finalizer; used to derive independent seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix_seed(base);
  for (auto p : path) s = mix_seed(s ^ mix_seed(p + 0x632be59bd9b4e019ULL));
  return s;
}

inline double spectral_radius(const Eigen::MatrixXd& a) {
  Eigen::EigenSolver<Eigen::MatrixXd> solver(a, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

inline constexpr double kMaxSpectralRadius = 0.95;

/// Class-conditional dynamics of one modality.
struct ModalityDynamics {
  Modality modality = Modality::audio;
  std::array<Eigen::MatrixXd, kNumClasses> coupling;
};

struct SessionPlan {
  std::string subject_id;
  std::string session_id;
  std::size_t subject_index = 0;
  int label = 0;
  BprsScores scores{};
  double duration_s = 0.0;
  std::uint64_t seed = 0;
};

struct CohortPlan {
  CohortSpec spec;
  std::vector<SubjectProfile> subjects;
  std::vector<SessionPlan> sessions;
  ModalityDynamics audio, video;
  std::vector<std::string> vocabulary;
  std::array<std::vector<std::string>, kNumClasses> markers;
};

struct SessionRecord {
  std::string subject_id;
  std::string session_id;
  int label = 0;
  ChannelSeries audio;
  ChannelSeries video;
  std::string text;
};

namespace detail {

inline std::string pseudo_word(std::size_t index) {
  static const char* syllables[] = {"ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "po",
                                    "da", "fe", "gu", "hi", "ja", "bo", "ce", "wu", "xi", "yo"};
  constexpr std::size_t n = std::size(syllables);
  std::string w;
  std::size_t v = index;
  do {
    w += syllables[v % n];
    v /= n;
  } while (v > 0);
  w += syllables[(index * 7 + 3) % n];
  return w;
}

inline Eigen::MatrixXd off_diagonal_noise(std::size_t c, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      if (i != j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = scale * g(rng);
  return m;
}

inline ModalityDynamics make_dynamics(Modality modality, std::size_t c, double strength,
                                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> diag(0.6, 0.85);
  Eigen::MatrixXd base = off_diagonal_noise(c, 0.05, rng);
  for (std::size_t i = 0; i < c; ++i) base(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = diag(rng);
  if (spectral_radius(base) >= kMaxSpectralRadius) base *= 0.8 / spectral_radius(base);

  ModalityDynamics dyn;
  dyn.modality = modality;
  std::uniform_int_distribution<std::size_t> pick(0, c - 1);
  std::uniform_real_distribution<double> magnitude(0.5, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    bool stable = false;
    for (int attempt = 0; attempt < 1000 && !stable; ++attempt) {
      Eigen::MatrixXd pattern = Eigen::MatrixXd::Zero(base.rows(), base.cols());
      for (std::size_t e = 0; e < c; ++e) {
        std::size_t i = pick(rng), j = pick(rng);
        if (i == j) j = (j + 1) % c;
        pattern(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            (sign(rng) ? 1.0 : -1.0) * magnitude(rng);
      }
      dyn.coupling[k] = base + strength * pattern;
      stable = spectral_radius(dyn.coupling[k]) < kMaxSpectralRadius;
    }
    if (!stable) {
      throw std::invalid_argument("cohort: no stable coupling found; lower separation or coupling strength");
    }
  }
  return dyn;
}

inline BprsScores sample_scores(int label, std::mt19937_64& rng) {
  BprsScores s{};
  std::uniform_int_distribution<int> low(1, 2), mid(1, 4), high(3, 7);
  if (label == kHealthy) {
    for (auto& v : s) v = low(rng);
    return s;
  }
  for (auto& v : s) v = mid(rng);
  // Negative items stay below the 3.5 average: no negative-dominant group.
  while (negative_mean(s) >= 3.5)
    for (auto i : kNegativeItems) s[i] = mid(rng);
  if (label == kPositive) {
    do {
      for (auto i : kPositiveItems) s[i] = high(rng);
    } while (positive_mean(s) < 3.5);
  } else {
    while (positive_mean(s) >= 3.5)
      for (auto i : kPositiveItems) s[i] = mid(rng);
  }
  return s;
}

/// Hands out `extra` sessions one at a time to random subjects with capacity.
inline void distribute(std::vector<std::size_t>& counts, const std::vector<std::size_t>& members,
                       const std::vector<std::size_t>& totals, std::size_t cap, std::size_t extra,
                       std::mt19937_64& rng) {
  for (std::size_t n = 0; n < extra; ++n) {
    std::vector<std::size_t> open;
    for (auto m : members)
      if (totals[m] + counts[m] < cap) open.push_back(m);
    if (open.empty()) throw std::invalid_argument("cohort: sessions do not fit within the per-subject cap");
    std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
    ++counts[open[pick(rng)]];
  }
}

}  // namespace detail

/**
 * Lays out subjects, per-session labels, BPRS scores, durations and the
 * class dynamics. Cheap; synthesize_session() produces the signals.
 */
inline CohortPlan plan_cohort(const CohortSpec& spec) {
  validate_spec(spec);
  std::mt19937_64 rng(derive_seed(spec.seed, {1}));
  CohortPlan plan;
  plan.spec = spec;

  const std::size_t hc = spec.subjects_per_class[kHealthy];
  const std::size_t mixed = spec.mixed_subjects;
  const std::size_t m_only = spec.subjects_per_class[kMixed] - mixed;
  const std::size_t p_only = spec.subjects_per_class[kPositive] - mixed;
  const std::size_t n = hc + m_only + p_only + mixed;
  const std::size_t cap = spec.max_sessions_per_subject;

  // Per-subject session counts for each class; every member starts with one.
  std::vector<std::size_t> m_counts(n, 0), p_counts(n, 0), h_counts(n, 0), totals(n, 0);
  std::vector<std::size_t> hc_members, m_members, p_members;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < hc) {
      hc_members.push_back(i);
      h_counts[i] = 1;
    } else if (i < hc + m_only) {
      m_members.push_back(i);
      m_counts[i] = 1;
    } else if (i < hc + m_only + p_only) {
      p_members.push_back(i);
      p_counts[i] = 1;
    } else {
      m_members.push_back(i);
      p_members.push_back(i);
      m_counts[i] = p_counts[i] = 1;
    }
  }
  auto need = [&](std::size_t cls, std::size_t have) {
    if (spec.sessions_per_class[cls] < have) {
      throw std::invalid_argument("cohort: fewer " + class_name(static_cast<int>(cls)) +
                                  " sessions than subjects");
    }
    return spec.sessions_per_class[cls] - have;
  };
  for (std::size_t i = 0; i < n; ++i) totals[i] = h_counts[i] + m_counts[i] + p_counts[i];
  if (mixed > 0 && cap < 2) throw std::invalid_argument("cohort: mixed subjects need two sessions");
  {
    std::vector<std::size_t> zero(n, 0);
    std::vector<std::size_t> extra_h(n, 0);
    detail::distribute(extra_h, hc_members, totals, cap, need(kHealthy, hc), rng);
    for (std::size_t i = 0; i < n; ++i) {
      h_counts[i] += extra_h[i];
      totals[i] += extra_h[i];
    }
    std::vector<std::size_t> extra_m(n, 0);
    detail::distribute(extra_m, m_members, totals, cap, need(kMixed, m_only + mixed), rng);
    for (std::size_t i = 0; i < n; ++i) {
      m_counts[i] += extra_m[i];
      totals[i] += extra_m[i];
    }
    std::vector<std::size_t> extra_p(n, 0);
    detail::distribute(extra_p, p_members, totals, cap, need(kPositive, p_only + mixed), rng);
    for (std::size_t i = 0; i < n; ++i) {
      p_counts[i] += extra_p[i];
      totals[i] += extra_p[i];
    }
  }

  std::uniform_real_distribution<double> duration(spec.min_duration_min * 60.0,
                                                  spec.max_duration_min * 60.0);
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    SubjectProfile subject;
    std::snprintf(buf, sizeof(buf), "S%03zu", i + 1);
    subject.id = buf;
    subject.diagnosed = i >= hc;
    std::vector<int> labels;
    labels.insert(labels.end(), h_counts[i], kHealthy);
    labels.insert(labels.end(), m_counts[i], kMixed);
    labels.insert(labels.end(), p_counts[i], kPositive);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t k = 0; k < labels.size(); ++k) {
      SessionPlan session;
      session.subject_id = subject.id;
      std::snprintf(buf, sizeof(buf), "sess%02zu", k + 1);
      session.session_id = buf;
      session.subject_index = i;
      session.scores = detail::sample_scores(labels[k], rng);
      session.label = assign_class(subject.diagnosed, session.scores);
      if (session.label != labels[k]) throw std::logic_error("cohort: sampled scores disagree with planned class");
      session.duration_s = duration(rng);
      session.seed = derive_seed(spec.seed, {2, i, k});
      subject.session_scores.push_back(session.scores);
      subject.session_labels.push_back(session.label);
      plan.sessions.push_back(std::move(session));
    }
    plan.subjects.push_back(std::move(subject));
  }

  std::mt19937_64 dyn_rng(derive_seed(spec.seed, {3}));
  plan.audio = detail::make_dynamics(Modality::audio, spec.audio_channels,
                                     spec.separation * spec.audio_coupling, dyn_rng);
  plan.video = detail::make_dynamics(Modality::video, spec.video_channels,
                                     spec.separation * spec.video_coupling, dyn_rng);

  const auto& stop = default_stopwords();
  std::size_t next = 0;
  auto fresh_word = [&] {
    std::string w;
    do {
      w = detail::pseudo_word(next++);
    } while (stop.contains(w));
    return w;
  };
  for (std::size_t v = 0; v < spec.vocabulary_size; ++v) plan.vocabulary.push_back(fresh_word());
  for (auto& set : plan.markers)
    for (std::size_t m = 0; m < spec.markers_per_class; ++m) set.push_back(fresh_word());
  return plan;
}

/// Random unit-norm vectors for every vocabulary and marker word.
inline EmbeddingTable synthetic_embeddings(const CohortPlan& plan) {
  EmbeddingTable table(plan.spec.embedding_dim);
  std::mt19937_64 rng(derive_seed(plan.spec.seed, {4}));
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> vec(plan.spec.embedding_dim);
  auto add = [&](const std::string& w) {
    double norm = 0.0;
    for (auto& v : vec) {
      v = g(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : vec) v /= norm;
    table.add(w, vec);
  };
  for (const auto& w : plan.vocabulary) add(w);
  for (const auto& set : plan.markers)
    for (const auto& w : set) add(w);
  return table;
}

namespace detail {

inline ChannelSeries simulate_var(const Eigen::MatrixXd& a, const std::vector<std::string>& names,
                                  Modality modality, double rate, double duration_s,
                                  double noise_level, std::mt19937_64& rng) {
  const auto c = static_cast<std::size_t>(a.rows());
  const std::size_t frames = std::max<std::size_t>(1, seconds_to_frames(duration_s, rate));
  std::normal_distribution<double> g(0.0, noise_level);
  Eigen::VectorXd state = Eigen::VectorXd::Zero(a.rows());
  Eigen::VectorXd next(a.rows());
  Eigen::VectorXd noise(a.rows());
  constexpr std::size_t burn_in = 500;
  Tensor values(Shape{c, frames});
  auto dst = values.mutable_values();
  std::uniform_real_distribution<double> gain(0.5, 2.0);
  std::normal_distribution<double> offset(0.0, 1.0);
  std::vector<double> gains(c), offsets(c);
  for (std::size_t i = 0; i < c; ++i) {
    gains[i] = gain(rng);
    offsets[i] = offset(rng);
  }
  for (std::size_t t = 0; t < burn_in + frames; ++t) {
    for (std::size_t i = 0; i < c; ++i) noise(static_cast<Eigen::Index>(i)) = g(rng);
    next.noalias() = a * state;
    state = next + noise;
    if (t >= burn_in) {
      for (std::size_t i = 0; i < c; ++i)
        dst[i * frames + (t - burn_in)] = gains[i] * state(static_cast<Eigen::Index>(i)) + offsets[i];
    }
  }
  return {modality, names, rate, values, 0};
}

inline Eigen::MatrixXd session_coupling(const Eigen::MatrixXd& class_coupling, const CohortSpec& spec,
                                        std::uint64_t subject_seed, std::mt19937_64& rng) {
  std::mt19937_64 subject_rng(subject_seed);
  const auto c = static_cast<std::size_t>(class_coupling.rows());
  const Eigen::MatrixXd subject = off_diagonal_noise(c, spec.subject_jitter, subject_rng);
  double jitter = spec.session_jitter;
  for (int attempt = 0; attempt < 100; ++attempt) {
    Eigen::MatrixXd a = class_coupling + subject + off_diagonal_noise(c, jitter, rng);
    if (spectral_radius(a) < kMaxSpectralRadius) return a;
    if (attempt % 10 == 9) jitter *= 0.5;
  }
  return class_coupling;
}

inline std::string synthesize_text(const CohortPlan& plan, const SessionPlan& session,
                                   std::mt19937_64& rng) {
  const auto& spec = plan.spec;
  static const std::vector<std::string> fillers = {"the", "and", "i", "was", "it", "to", "a",
                                                   "we", "of", "that", "you", "so", "just"};
  const auto sentences = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(session.duration_s / 60.0 * spec.sentences_per_minute)));
  std::uniform_int_distribution<std::size_t> length(spec.min_words, spec.max_words);
  std::uniform_int_distribution<std::size_t> vocab(0, plan.vocabulary.size() - 1);
  std::uniform_int_distribution<std::size_t> filler(0, fillers.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> ending(0, 5);
  const double own_rate = std::min(0.5, spec.separation * spec.marker_rate);
  std::string text;
  for (std::size_t s = 0; s < sentences; ++s) {
    const std::size_t n = length(rng);
    std::string sentence;
    for (std::size_t w = 0; w < n; ++w) {
      if (unit(rng) < 0.3) {
        sentence += fillers[filler(rng)];
        sentence += ' ';
      }
      const double u = unit(rng);
      std::string word;
      double acc = 0.0;
      for (std::size_t k = 0; k < kNumClasses && word.empty(); ++k) {
        const auto& set = plan.markers[k];
        if (set.empty()) continue;
        acc += spec.background_marker_rate / kNumClasses +
               (static_cast<int>(k) == session.label ? own_rate : 0.0);
        if (u < acc) word = set[std::uniform_int_distribution<std::size_t>(0, set.size() - 1)(rng)];
      }
      if (word.empty()) word = plan.vocabulary[vocab(rng)];
      sentence += word;
      if (w + 1 < n && unit(rng) < 0.1) sentence += ',';
      sentence += ' ';
    }
    sentence.pop_back();
    sentence[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sentence[0])));
    const int e = ending(rng);
    sentence += e == 0 ? "?" : e == 1 ? "!" : ".";
    text += sentence;
    text += s + 1 < sentences ? ' ' : '\n';
  }
  return text;
}

}  // namespace detail

inline SessionRecord synthesize_session(const CohortPlan& plan, std::size_t index) {
  const auto& session = plan.sessions.at(index);
  const auto& spec = plan.spec;
  std::mt19937_64 rng(session.seed);
  SessionRecord rec;
  rec.subject_id = session.subject_id;
  rec.session_id = session.session_id;
  rec.label = session.label;
  const auto label = static_cast<std::size_t>(session.label);

  auto names = [](std::size_t c, std::vector<std::string> defaults, const char* prefix) {
    if (defaults.size() == c) return defaults;
    std::vector<std::string> out;
    for (std::size_t i = 0; i < c; ++i) out.push_back(prefix + std::to_string(i));
    return out;
  };
  const Eigen::MatrixXd a_audio = detail::session_coupling(
      plan.audio.coupling[label], spec, derive_seed(spec.seed, {5, session.subject_index}), rng);
  rec.audio = detail::simulate_var(a_audio, names(spec.audio_channels, default_audio_channels(), "ch"),
                                   Modality::audio, spec.audio_rate, session.duration_s,
                                   spec.noise_level, rng);
  const Eigen::MatrixXd a_video = detail::session_coupling(
      plan.video.coupling[label], spec, derive_seed(spec.seed, {6, session.subject_index}), rng);
  rec.video = detail::simulate_var(a_video, names(spec.video_channels, default_video_channels(), "AU"),
                                   Modality::video, spec.video_rate, session.duration_s,
                                   spec.noise_level, rng);
  rec.text = detail::synthesize_text(plan, session, rng);
  return rec;
}

inline std::vector<SessionRecord> generate_cohort(const CohortSpec& spec) {
  const CohortPlan plan = plan_cohort(spec);
  std::vector<SessionRecord> out;
  out.reserve(plan.sessions.size());
  for (std::size_t i = 0; i < plan.sessions.size(); ++i) out.push_back(synthesize_session(plan, i));
  return out;
}

// ---------------------------------------------------------------------------
// Subject-grouped splits
// ---------------------------------------------------------------------------

struct SplitRatios {
  double train = 0.70, val = 0.15, test = 0.15;
};

struct Splits {
  std::vector<std::string> train, val, test;

  const std::vector<std::string>& get(std::string_view name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + std::string(name) + "'");
  }
};

class SplitLeakageError : public std::runtime_error {
 public:
  SplitLeakageError(const std::string& subject)
      : std::runtime_error("split leakage: subject " + subject + " appears in more than one split"),
        subject_(subject) {}
  const std::string& subject() const { return subject_; }

 private:
  std::string subject_;
};

inline void verify_disjoint(const Splits& s) {
  std::set<std::string> seen;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    std::set<std::string> local(part->begin(), part->end());
    for (const auto& id : local)
      if (!seen.insert(id).second) throw SplitLeakageError(id);
  }
}

/**
 * Stratifies subjects by their dominant class. Validation and test each
 * receive floor(ratio * N) subjects (raised to one per class when smaller),
 * spread over classes by largest remainder with at least one subject per
 * class; the remainder goes to training.
 */
inline Splits split_subjects(const std::vector<SubjectProfile>& subjects, SplitRatios ratios = {},
                             std::uint64_t seed = 0) {
  std::array<std::vector<std::string>, kNumClasses> strata;
  std::vector<const SubjectProfile*> sorted;
  for (const auto& s : subjects) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (const auto* s : sorted) strata[static_cast<std::size_t>(s->label())].push_back(s->id);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (strata[c].size() < 3) {
      throw std::invalid_argument("split: class " + class_name(static_cast<int>(c)) + " has " +
                                  std::to_string(strata[c].size()) +
                                  " subjects; every split needs one per class (at least 3)");
    }
  }
  const std::size_t n = subjects.size();
  std::mt19937_64 rng(derive_seed(seed, {7}));
  for (auto& group : strata) std::shuffle(group.begin(), group.end(), rng);

  auto allocate = [&](double ratio, const std::array<std::size_t, kNumClasses>& available) {
    const auto total = std::max<std::size_t>(
        kNumClasses, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9)));
    std::array<std::size_t, kNumClasses> quota{};
    std::array<double, kNumClasses> target{};
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      target[c] = static_cast<double>(total) * static_cast<double>(strata[c].size()) / static_cast<double>(n);
      quota[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(target[c])));
      assigned += quota[c];
    }
    while (assigned < total) {
      std::size_t best = kNumClasses;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (quota[c] + 1 > available[c]) continue;
        if (best == kNumClasses || target[c] - quota[c] > target[best] - quota[best]) best = c;
      }
      if (best == kNumClasses) break;
      ++quota[best];
      ++assigned;
    }
    while (assigned > total) {
      std::size_t best = kNumClasses;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (quota[c] <= 1) continue;
        if (best == kNumClasses || quota[c] - target[c] > quota[best] - target[best]) best = c;
      }
      if (best == kNumClasses) break;
      --quota[best];
      --assigned;
    }
    return quota;
  };

  std::array<std::size_t, kNumClasses> available{};
  for (std::size_t c = 0; c < kNumClasses; ++c) available[c] = strata[c].size() - 1;
  const auto val_quota = allocate(ratios.val, available);
  for (std::size_t c = 0; c < kNumClasses; ++c) available[c] -= val_quota[c];
  const auto test_quota = allocate(ratios.test, available);

  Splits out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& group = strata[c];
    if (val_quota[c] + test_quota[c] >= group.size()) {
      throw std::invalid_argument("split: class " + class_name(static_cast<int>(c)) +
                                  " cannot populate every split");
    }
    std::size_t k = 0;
    for (; k < val_quota[c]; ++k) out.val.push_back(group[k]);
    for (; k < val_quota[c] + test_quota[c]; ++k) out.test.push_back(group[k]);
    for (; k < group.size(); ++k) out.train.push_back(group[k]);
  }
  for (auto* part : {&out.train, &out.val, &out.test}) std::sort(part->begin(), part->end());
  verify_disjoint(out);
  return out;
}

}  // namespace mgmu
