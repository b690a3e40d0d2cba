// SPDX-License-Identifier: Apache-2.0
// Command-line front end: synth, features, train, eval, ablate, grid, metrics, config.

#include <mgmu/dataset_io.hpp>

#include <CLI11.hpp>

#include <ctime>
#include <iostream>

namespace {

using namespace mgmu;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string variant;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? default_config() : load_config(c.config);
  if (c.seed) {
    cfg.data.cohort.seed = *c.seed;
    cfg.train.base.seed = *c.seed;
  }
  if (c.epochs) cfg.train.base.max_epochs = *c.epochs;
  if (!c.variant.empty()) cfg.model.fusion.variant = variant_from_string(c.variant);
  cfg.sync_model();
  return cfg;
}

/// Config stored with the dataset, with the caller's explicit overrides applied on top.
RunConfig resolve_for_dataset(const Common& c, const fs::path& dataset) {
  RunConfig cfg;
  if (c.config.empty()) {
    cfg = config_from_json(read_dataset_manifest(dataset).at("config"));
  } else {
    cfg = load_config(c.config);
  }
  if (c.seed) cfg.train.base.seed = *c.seed;
  if (c.epochs) cfg.train.base.max_epochs = *c.epochs;
  if (!c.variant.empty()) cfg.model.fusion.variant = variant_from_string(c.variant);
  cfg.sync_model();
  return cfg;
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

void add_common(CLI::App* app, Common& c, bool with_epochs) {
  app->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Seed for data synthesis and training");
  if (with_epochs) app->add_option("--epochs", c.epochs, "Override train.max_epochs");
  app->add_option("--variant", c.variant, "mGMU variant")->check(CLI::IsMember({"as_written", "complementary"}));
}

// ---------------------------------------------------------------------------
// Checkpointed models
// ---------------------------------------------------------------------------

const std::vector<std::string> kModels = {"audio", "video", "text", "multimodal"};

fs::path canonical_checkpoint(const fs::path& dataset, const std::string& model) {
  return dataset / "checkpoints" / model;
}

json checkpoint_info(const std::string& model, const RunConfig& cfg, const FeatureSet& fs_) {
  return {{"model", model},
          {"config", config_to_json(cfg)},
          {"variant", to_string(cfg.model.fusion.variant)},
          {"seed", cfg.train.base.seed},
          {"S_max", fs_.max_sentences},
          {"W_max", fs_.max_words}};
}

std::unique_ptr<StsCnn> load_sts(const fs::path& dir, Modality m) {
  const json manifest = read_checkpoint_manifest(dir);
  const RunConfig cfg = config_from_json(manifest.at("config"));
  auto model = make_sts(m, cfg);
  ModelParams view = model->params();
  load_checkpoint(dir, view);
  return model;
}

std::unique_ptr<StsCnn> require_sts(const fs::path& dataset, Modality m) {
  const fs::path dir = canonical_checkpoint(dataset, to_string(m));
  if (!fs::exists(dir / "manifest.json")) {
    throw std::runtime_error("missing prerequisite: unimodal " + to_string(m) + " checkpoint " + dir.string() +
                             " (run: train " + dataset.string() + " --model " + to_string(m) + ")");
  }
  return load_sts(dir, m);
}

std::unique_ptr<TextNet> require_text(const fs::path& dataset) {
  const fs::path dir = canonical_checkpoint(dataset, "text");
  if (!fs::exists(dir / "manifest.json")) {
    throw std::runtime_error("missing prerequisite: text checkpoint " + dir.string());
  }
  auto model = make_text(config_from_json(read_checkpoint_manifest(dir).at("config")));
  load_checkpoint(dir, model->params());
  return model;
}

void write_log(const fs::path& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::trunc);
  log.write_jsonl(out);
}

void copy_dir(const fs::path& from, const fs::path& to) {
  fs::remove_all(to);
  fs::create_directories(to.parent_path());
  fs::copy(from, to, fs::copy_options::recursive);
}

void check_grid(const FeatureSet& fs_, const RunConfig& cfg) {
  if (fs_.sessions.empty()) throw std::runtime_error("feature set holds no sessions");
  const auto& s = fs_.sessions.front();
  const auto expect = [](const Tensor& t, std::size_t rows, std::size_t cols, const char* what) {
    if (t.shape() != Shape{rows, cols}) {
      throw DimensionError(std::string(what) + " features have shape " + shape_str(t.shape()) + ", config expects " +
                           shape_str({rows, cols}));
    }
  };
  const auto& m = cfg.model;
  if (!s.audio.empty()) expect(s.audio[0], m.audio_channels * m.audio_channels, m.audio_delay + 1, "audio");
  if (!s.video.empty()) expect(s.video[0], m.video_channels * m.video_channels, m.video_delay + 1, "video");
}

int cmd_train(const fs::path& dataset, const std::string& model, const Common& common, fs::path out) {
  RunConfig cfg = resolve_for_dataset(common, dataset);
  const FeatureSet fs_ = read_features(dataset);
  check_grid(fs_, cfg);
  const Splits splits = splits_from_json(read_dataset_manifest(dataset).at("splits"));
  const SplitIndex idx = index_splits(fs_, splits);

  std::unique_ptr<StsCnn> audio, video;
  if (model == "multimodal") {
    audio = require_sts(dataset, Modality::audio);
    video = require_sts(dataset, Modality::video);
  }
  if (out.empty()) out = dataset / "runs";
  const fs::path run = out / (model + "-" + timestamp());
  fs::create_directories(run);
  write_json(run / "config.json", config_to_json(cfg));
  const fs::path ckpt = run / "checkpoint";
  json info = checkpoint_info(model, cfg, fs_);

  if (model == "audio" || model == "video") {
    const Modality m = modality_from_string(model);
    auto net = make_sts(m, cfg);
    const StsTraining t = train_sts(*net, fs_, idx, cfg);
    write_log(run / "train_log_segment.jsonl", t.segment.log);
    write_log(run / "train_log_session.jsonl", t.session.log);
    save_checkpoint(ckpt, net->params(), info);
  } else if (model == "text") {
    auto net = make_text(cfg);
    const TrainResult t = train_text(*net, fs_, idx, cfg);
    write_log(run / "train_log.jsonl", t.log);
    save_checkpoint(ckpt, net->params(), info);
  } else {
    const auto a = embed_sessions(*audio, fs_);
    const auto v = embed_sessions(*video, fs_);
    auto net = make_fusion(cfg);
    const TrainResult t = train_fusion(*net, {&fs_, &a, &v}, idx, cfg);
    write_log(run / "train_log.jsonl", t.log);
    save_checkpoint(ckpt, net->params(), info);
    copy_dir(canonical_checkpoint(dataset, "audio"), ckpt / "frozen" / "audio");
    copy_dir(canonical_checkpoint(dataset, "video"), ckpt / "frozen" / "video");
  }
  copy_dir(ckpt, canonical_checkpoint(dataset, model));
  std::cout << "run directory: " << run.string() << '\n'
            << "checkpoint:    " << canonical_checkpoint(dataset, model).string() << '\n';
  return 0;
}

/// Session probabilities of the checkpointed model on one split.
std::vector<std::vector<double>> predict_checkpoint(const fs::path& ckpt, const FeatureSet& fs_,
                                                    const std::vector<std::size_t>& sessions) {
  const json manifest = read_checkpoint_manifest(ckpt);
  const std::string model = manifest.at("model").get<std::string>();
  const RunConfig cfg = config_from_json(manifest.at("config"));
  if (model == "audio" || model == "video") {
    check_grid(fs_, cfg);
    auto net = load_sts(ckpt, modality_from_string(model));
    return predict_sts(*net, embed_sessions(*net, fs_), sessions);
  }
  if (manifest.at("S_max").get<std::size_t>() != fs_.max_sentences ||
      manifest.at("W_max").get<std::size_t>() != fs_.max_words) {
    throw DimensionError("checkpoint text grid " + manifest.at("S_max").dump() + "x" + manifest.at("W_max").dump() +
                         " differs from the dataset's " + std::to_string(fs_.max_sentences) + "x" +
                         std::to_string(fs_.max_words));
  }
  if (model == "text") {
    auto net = make_text(cfg);
    load_checkpoint(ckpt, net->params());
    return predict_text(*net, fs_, sessions);
  }
  if (model == "multimodal") {
    auto audio = load_sts(ckpt / "frozen" / "audio", Modality::audio);
    auto video = load_sts(ckpt / "frozen" / "video", Modality::video);
    const auto a = embed_sessions(*audio, fs_);
    const auto v = embed_sessions(*video, fs_);
    auto net = make_fusion(cfg);
    load_checkpoint(ckpt, net->params());
    return predict_fusion(*net, {&fs_, &a, &v}, sessions);
  }
  throw FormatError("checkpoint " + ckpt.string() + " has unknown model kind '" + model + "'");
}

int cmd_eval(const fs::path& ckpt, const fs::path& dataset, const std::string& split, fs::path out) {
  const FeatureSet fs_ = read_features(dataset);
  const Splits splits = splits_from_json(read_dataset_manifest(dataset).at("splits"));
  const SplitIndex idx = index_splits(fs_, splits);
  const auto& sessions = idx.get(split);
  if (sessions.empty()) throw std::runtime_error("split '" + split + "' has no sessions");
  const json manifest = read_checkpoint_manifest(ckpt);
  const RunConfig cfg = config_from_json(manifest.at("config"));
  const std::string model = manifest.at("model").get<std::string>();
  const EvalReport report =
      evaluate(predict_checkpoint(ckpt, fs_, sessions), labels_of(fs_, sessions), cfg.eval.bootstrap);
  const json j = report_to_json(report, model, split, cfg.eval.bootstrap);
  if (out.empty()) out = ckpt / ("report_" + split + ".json");
  write_json(out, j);
  std::cout << report_table({{model, report}});
  for (const auto& w : report.auc.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "report: " << out.string() << '\n';
  return 0;
}

int cmd_ablate(const fs::path& dataset, const Common& common, fs::path out) {
  const RunConfig cfg = resolve_for_dataset(common, dataset);
  const FeatureSet fs_ = read_features(dataset);
  const Splits splits = splits_from_json(read_dataset_manifest(dataset).at("splits"));
  const SplitIndex idx = index_splits(fs_, splits);
  UnimodalSuite suite;
  suite.audio = require_sts(dataset, Modality::audio);
  suite.video = require_sts(dataset, Modality::video);
  suite.text = require_text(dataset);
  suite.audio_embeddings = embed_sessions(*suite.audio, fs_);
  suite.video_embeddings = embed_sessions(*suite.video, fs_);
  const auto rows = run_ablation(suite, fs_, idx, splits, cfg);

  if (out.empty()) out = dataset / "ablation";
  fs::create_directories(out);
  write_json(out / "config.json", config_to_json(cfg));
  {
    std::ofstream csv(out / "ablation.csv", std::ios::trunc);
    write_ablation_csv(csv, rows);
  }
  std::vector<std::pair<std::string, EvalReport>> table;
  for (const auto& r : rows) table.emplace_back(r.name, r.report);
  const std::string text = report_table(table);
  write_text_file(out / "ablation.txt", text);
  std::cout << text << "split hash: " << rows.front().split_hash << '\n';
  return 0;
}

int cmd_grid(const fs::path& dataset, const std::string& model, const Common& common, const std::string& grid_path,
             fs::path out) {
  const RunConfig base = resolve_for_dataset(common, dataset);
  GridSpec spec;
  if (model == "audio" || model == "video") spec.segment_s = {20.0, 30.0, 40.0};
  if (!grid_path.empty()) {
    const json g = read_json(grid_path);
    for (const auto& item : g.items()) {
      const auto& k = item.key();
      if (k == "lr") spec.lr = item.value().get<std::vector<double>>();
      else if (k == "lr_patience") spec.lr_patience = item.value().get<std::vector<std::size_t>>();
      else if (k == "early_stop") spec.early_stop = item.value().get<std::vector<std::size_t>>();
      else if (k == "factor") spec.factor = item.value().get<std::vector<double>>();
      else if (k == "segment_s") spec.segment_s = item.value().get<std::vector<double>>();
      else throw ConfigError("unknown grid key '" + k + "'");
    }
  }
  const Splits splits = splits_from_json(read_dataset_manifest(dataset).at("splits"));
  std::unique_ptr<Corpus> corpus;  // raw series, only needed to re-segment
  std::map<double, FeatureSet> by_segment;
  const FeatureSet stored = read_features(dataset);

  std::unique_ptr<StsCnn> audio, video;
  std::vector<Tensor> a_emb, v_emb;
  if (model == "multimodal") {
    audio = require_sts(dataset, Modality::audio);
    video = require_sts(dataset, Modality::video);
    a_emb = embed_sessions(*audio, stored);
    v_emb = embed_sessions(*video, stored);
  }

  auto features_for = [&](const GridPoint& p) -> const FeatureSet& {
    if (!p.segment_s) return stored;
    auto it = by_segment.find(*p.segment_s);
    if (it != by_segment.end()) return it->second;
    if (!corpus) corpus = std::make_unique<Corpus>(read_dataset(dataset));
    FeatureConfig fc = base.features;
    (model == "audio" ? fc.audio_window_s : fc.video_window_s) = *p.segment_s;
    return by_segment.emplace(*p.segment_s, extract_features(*corpus, fc)).first->second;
  };

  const auto rows = grid_search(spec, [&](const GridPoint& p) {
    RunConfig cfg = base;
    cfg.train.base = p.apply(cfg.train.base);
    const FeatureSet& fs_ = features_for(p);
    const SplitIndex idx = index_splits(fs_, splits);
    const auto val_truth = labels_of(fs_, idx.val);
    GridResult r;
    std::vector<std::vector<double>> probs;
    if (model == "audio" || model == "video") {
      auto net = make_sts(modality_from_string(model), cfg);
      const auto t = train_sts(*net, fs_, idx, cfg);
      probs = predict_sts(*net, t.embeddings, idx.val);
      r.val_loss = t.session.val_loss;
      r.epochs_run = t.segment.epochs_run + t.session.epochs_run;
    } else if (model == "text") {
      auto net = make_text(cfg);
      const auto t = train_text(*net, fs_, idx, cfg);
      probs = predict_text(*net, fs_, idx.val);
      r.val_loss = t.val_loss;
      r.epochs_run = t.epochs_run;
    } else {
      auto net = make_fusion(cfg);
      const FusionInputs in{&fs_, &a_emb, &v_emb};
      const auto t = train_fusion(*net, in, idx, cfg);
      probs = predict_fusion(*net, in, idx.val);
      r.val_loss = t.val_loss;
      r.epochs_run = t.epochs_run;
    }
    std::vector<int> pred;
    for (const auto& p_ : probs) pred.push_back(static_cast<int>(argmax(p_)));
    r.val_f1 = weighted_f1(confusion(val_truth, pred, kNumClasses)).weighted_f1;
    std::cerr << "grid point " << p.index + 1 << ": val F1 " << fixed(r.val_f1) << ", val loss " << fixed(r.val_loss)
              << '\n';
    return r;
  });

  if (out.empty()) out = dataset / "grid";
  fs::create_directories(out);
  write_json(out / "config.json", config_to_json(base));
  std::ofstream csv(out / ("grid_" + model + ".csv"), std::ios::trunc);
  write_grid_csv(csv, rows);
  write_grid_csv(std::cout, rows);
  return 0;
}

int cmd_metrics(const std::string& text) {
  const ConfusionMatrix m = parse_confusion(text);
  const ClassScores s = weighted_f1(m);
  std::cout << "class      precision  recall  f1      support\n";
  for (std::size_t c = 0; c < m.classes; ++c) {
    const std::string name = m.classes == kNumClasses ? class_name(static_cast<int>(c)) : std::to_string(c);
    std::cout << std::left << std::setw(11) << name << std::setw(11) << fixed(s.precision[c]) << std::setw(8)
              << fixed(s.recall[c]) << std::setw(8) << fixed(s.f1[c]) << s.support[c] << '\n';
  }
  std::cout << "weighted F1: " << fixed(s.weighted_f1) << '\n';
  if (s.zero_division) std::cout << "note: some precision/recall had a zero denominator and was scored 0\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimal gated multimodal unit fusion toolkit"};
  app.require_subcommand(1);

  Common common;
  std::string out;
  std::string dataset;
  bool force = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
  add_common(synth, common, false);
  std::optional<std::size_t> subjects;
  synth->add_option("--out", out, "Dataset directory")->required();
  synth->add_option("--subjects", subjects, "Subject count, split evenly over the classes");
  synth->add_flag("--force", force, "Overwrite an existing dataset");

  auto* features = app.add_subcommand("features", "Extract FVTC and text features");
  features->add_option("dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  features->add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
  features->add_flag("--force", force, "Recompute even when up to date");

  std::string model;
  auto* train = app.add_subcommand("train", "Train one model");
  train->add_option("dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--model", model, "Model kind")->required()->check(CLI::IsMember(kModels));
  train->add_option("--out", out, "Parent of the run directory (default <dataset>/runs)");
  add_common(train, common, true);

  std::string checkpoint, split = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("checkpoint", checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", out, "Report path (default <checkpoint>/report_<split>.json)");

  auto* ablate = app.add_subcommand("ablate", "Late vs intermediate fusion, with and without mGMU");
  ablate->add_option("dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--out", out, "Output directory (default <dataset>/ablation)");
  add_common(ablate, common, true);

  std::string grid_path;
  auto* grid = app.add_subcommand("grid", "Hyperparameter grid search");
  grid->add_option("dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  grid->add_option("--model", model, "Model kind")->required()->check(CLI::IsMember(kModels));
  grid->add_option("--grid", grid_path, "JSON object overriding grid axes")->check(CLI::ExistingFile);
  grid->add_option("--out", out, "Output directory (default <dataset>/grid)");
  add_common(grid, common, true);

  std::string matrix;
  auto* metrics = app.add_subcommand("metrics", "Metrics of a confusion matrix given as [[..],[..]]");
  metrics->add_option("confusion", matrix, "Rows are true labels, columns predictions")->required();

  auto* show = app.add_subcommand("config", "Print the resolved configuration as JSON");
  add_common(show, common, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      RunConfig cfg = resolve(common);
      if (subjects) cfg.data.cohort = CohortSpec::with_subjects(*subjects, cfg.data.cohort);
      const fs::path root(out);
      if (fs::exists(root / "manifest.json") && !force) {
        throw std::runtime_error(root.string() + " already holds a dataset; pass --force to overwrite");
      }
      const Corpus corpus = synthesize_corpus(cfg);
      if (force) fs::remove_all(root);
      write_dataset(root, corpus, cfg);
      write_json(root / "config.json", config_to_json(cfg));
      std::cout << "wrote " << corpus.sessions.size() << " sessions of " << corpus.subjects.size() << " subjects to "
                << root.string() << " (split " << corpus.splits.train.size() << "/" << corpus.splits.val.size()
                << "/" << corpus.splits.test.size() << ")\n";
      return 0;
    }
    if (*features) {
      const fs::path root(dataset);
      const RunConfig cfg = resolve_for_dataset(common, root);
      if (!write_features(root, cfg.features, force)) {
        std::cout << "features up to date (checksum match); pass --force to recompute\n";
      } else {
        std::cout << "features written to " << (root / "features").string() << '\n';
      }
      return 0;
    }
    if (*train) return cmd_train(dataset, model, common, out);
    if (*eval) return cmd_eval(checkpoint, dataset, split, out);
    if (*ablate) return cmd_ablate(dataset, common, out);
    if (*grid) return cmd_grid(dataset, model, common, grid_path, out);
    if (*metrics) return cmd_metrics(matrix);
    if (*show) {
      std::cout << config_to_json(resolve(common)).dump(2) << '\n';
      return 0;
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
