#pragma once

// Pipeline stages behind the command-line tool. Every stage reads its
// inputs from a run directory, checks their manifest chain, and writes its
// artifacts plus a manifest recording input/output checksums.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxgen/cluster.hpp"
#include "ctxgen/config.hpp"
#include "ctxgen/corpus.hpp"
#include "ctxgen/embedding.hpp"
#include "ctxgen/eval.hpp"
#include "ctxgen/generate.hpp"
#include "ctxgen/lm.hpp"
#include "ctxgen/tfidf.hpp"

namespace ctxgen::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline const std::set<std::string>& known_settings() {
  static const std::set<std::string> keys = {
      "run.seed",
      "preprocess.min_len", "preprocess.max_sentences", "preprocess.lowercase",
      "vocab.max_vocab",
      "embedding.dim", "embedding.window", "embedding.negatives", "embedding.epochs", "embedding.lr",
      "embedding.threads",
      "cluster.k", "cluster.n_top", "cluster.max_iters", "cluster.tol", "cluster.spherical", "cluster.ranking",
      "dataset.window", "dataset.reset_paragraphs", "dataset.idf",
      "lm.hidden", "lm.bidirectional", "lm.activation", "lm.placement", "lm.optimizer", "lm.lr", "lm.epochs",
      "lm.batch_size", "lm.clip_norm", "lm.val_fraction", "lm.eval_every",
      "generate.max_len", "generate.temperature", "generate.sampling_seed",
  };
  return keys;
}

struct ArtifactRef {
  std::string role;
  std::string path;  // relative to the run directory unless `source`
  std::string checksum;
  bool source = false;
};

inline void to_json(json& j, const ArtifactRef& a) {
  j = json{{"role", a.role}, {"path", a.path}, {"checksum", a.checksum}, {"source", a.source}};
}
inline void from_json(const json& j, ArtifactRef& a) {
  a.role = j.at("role").get<std::string>();
  a.path = j.at("path").get<std::string>();
  a.checksum = j.at("checksum").get<std::string>();
  a.source = j.value("source", false);
}

struct RunManifest {
  std::string stage;
  std::string stage_id;
  std::vector<ArtifactRef> inputs;
  std::vector<ArtifactRef> outputs;
  json config = json::object();
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;

  json to_json() const {
    return json{{"stage", stage}, {"stage_id", stage_id}, {"inputs", inputs}, {"outputs", outputs},
                {"config", config}, {"seed", seed},       {"started", started}, {"finished", finished}};
  }
  static RunManifest from_json(const json& j) {
    RunManifest m;
    m.stage = j.at("stage").get<std::string>();
    m.stage_id = j.at("stage_id").get<std::string>();
    m.inputs = j.at("inputs").get<std::vector<ArtifactRef>>();
    m.outputs = j.at("outputs").get<std::vector<ArtifactRef>>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.started = j.value("started", "");
    m.finished = j.value("finished", "");
    return m;
  }
  const ArtifactRef* input(std::string_view role) const {
    for (const auto& a : inputs)
      if (a.role == role) return &a;
    return nullptr;
  }
};

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Exclusive lock file for one stage at a time per run directory.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw error("run directory " + dir.string() + " is locked by another stage (remove " + path_.string() +
                        " if stale)");
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

class Run {
 public:
  Run(fs::path dir, Settings settings) : dir_(std::move(dir)), settings_(std::move(settings)) {
    fs::create_directories(dir_ / "manifests");
  }

  const fs::path& dir() const { return dir_; }
  const Settings& settings() const { return settings_; }
  std::uint64_t seed() const { return settings_.get_number<std::uint64_t>("run.seed", 1); }
  fs::path path(const std::string& rel) const { return dir_ / rel; }

  ArtifactRef source(const std::string& role, const fs::path& file) const {
    if (!fs::exists(file)) throw config_error(role, "input file not found: " + file.string());
    return {role, fs::absolute(file).lexically_normal().string(), io::file_checksum(file), true};
  }

  ArtifactRef output(const std::string& role, const std::string& rel) const {
    return {role, rel, io::file_checksum(path(rel)), false};
  }

  std::vector<RunManifest> manifests() const {
    std::vector<RunManifest> out;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir_ / "manifests"))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        out.push_back(RunManifest::from_json(json::parse(io::read_file(f))));
      } catch (const json::exception& e) {
        throw dependency_error("?", "malformed manifest " + f.string() + ": " + e.what());
      }
    }
    return out;
  }

  std::optional<RunManifest> producer(const std::string& rel) const {
    for (auto& m : manifests())
      for (const auto& o : m.outputs)
        if (o.path == rel) return m;
    return std::nullopt;
  }

  // Checks `rel` and everything upstream of it against the recorded
  // checksums; returns a reference for the consuming stage's manifest.
  ArtifactRef require(const std::string& role, const std::string& rel, const std::string& producing_stage) const {
    std::set<std::string> seen;
    validate(rel, producing_stage, seen);
    return output(role, rel);
  }

  void write_manifest(const RunManifest& m) const {
    io::write_file(dir_ / "manifests" / (m.stage_id + ".json"), m.to_json().dump(2) + "\n");
  }

  RunManifest begin(const std::string& stage, const std::string& stage_id) const {
    RunManifest m;
    m.stage = stage;
    m.stage_id = stage_id;
    m.seed = derive_seed(seed(), stage_id);
    m.started = utc_now();
    m.config = json::object();
    for (const auto& [k, v] : settings_.snapshot()) m.config[k] = v;
    return m;
  }

  void finish(RunManifest& m) const {
    m.finished = utc_now();
    write_manifest(m);
  }

 private:
  void validate(const std::string& rel, const std::string& producing_stage, std::set<std::string>& seen) const {
    if (!seen.insert(rel).second) return;
    if (!fs::exists(path(rel))) throw dependency_error(producing_stage, "missing artifact " + rel);
    const auto m = producer(rel);
    if (!m) throw dependency_error(producing_stage, "no manifest records artifact " + rel);
    for (const auto& o : m->outputs)
      if (o.path == rel && o.checksum != io::file_checksum(path(rel)))
        throw dependency_error(m->stage, rel + " was modified after stage '" + m->stage + "' wrote it");
    // Upstream first, so the earliest broken stage is the one reported.
    for (const auto& in : m->inputs) {
      if (in.source) continue;
      const auto up = producer(in.path);
      validate(in.path, up ? up->stage : m->stage, seen);
    }
    for (const auto& in : m->inputs) {
      const fs::path p = in.source ? fs::path(in.path) : path(in.path);
      if (!fs::exists(p)) throw dependency_error(m->stage, "input " + in.path + " of " + rel + " is missing");
      if (io::file_checksum(p) != in.checksum)
        throw dependency_error(m->stage, rel + " was built from a different " + in.role + " (" + in.path +
                                             " checksum changed)");
    }
  }

  fs::path dir_;
  Settings settings_;
};

// ---- artifact names ----------------------------------------------------

inline std::string sentences_file() { return "sentences.tsv"; }
inline std::string vocab_file() { return "vocab.tsv"; }
inline std::string embeddings_file(const std::string& profile) { return "embeddings-" + profile + ".txt"; }
inline std::string clusters_file(const std::string& profile) { return "clusters-" + profile + ".txt"; }
inline std::string dataset_file(const std::string& id) { return "dataset-" + id + ".bin"; }
inline std::string lm_dir(const std::string& label) { return "lm-" + label; }
inline std::string eval_file(const std::string& label) { return "eval-" + label + ".csv"; }

inline void check_profile(const std::string& profile) {
  if (profile != "domain" && profile != "external")
    throw config_error("profile", "expected 'domain' or 'external', got '" + profile + "'");
}

// ---- sentence store ----------------------------------------------------

inline std::string sentences_to_tsv(std::span<const TextSentence> sentences) {
  std::string out;
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) out += ' ';
      out += s.tokens[i];
    }
    out += '\t';
    for (auto c : s.capitalized) out += c ? '1' : '0';
    out += '\t' + std::to_string(s.paragraph) + '\n';
  }
  return out;
}

inline std::vector<TextSentence> sentences_from_tsv(std::string_view text) {
  std::vector<TextSentence> out;
  for (const auto& line : io::split(text, '\n')) {
    if (line.empty()) continue;
    auto cols = io::split(line, '\t');
    if (cols.size() != 3) throw format_error("sentence row: expected 3 columns");
    TextSentence s;
    s.tokens = io::split_ws(cols[0]);
    for (char c : cols[1]) s.capitalized.push_back(c == '1' ? 1 : 0);
    if (s.capitalized.size() != s.tokens.size()) throw format_error("sentence row: capitalization length mismatch");
    s.paragraph = io::parse_number<std::size_t>(cols[2], "paragraph");
    out.push_back(std::move(s));
  }
  return out;
}

// ---- stages --------------------------------------------------------------

inline std::string stage_preprocess(const Run& run, const fs::path& input) {
  auto m = run.begin("preprocess", "preprocess");
  m.inputs.push_back(run.source("input", input));
  const auto& s = run.settings();
  PreprocessOptions opts;
  opts.min_len = s.get_number<std::size_t>("preprocess.min_len", 7);
  opts.max_sentences = s.get_number<std::size_t>("preprocess.max_sentences", 100000);
  opts.lowercase = s.get_bool("preprocess.lowercase", true);
  const auto sentences = preprocess(io::read_file(input), opts);
  io::write_file(run.path(sentences_file()), sentences_to_tsv(sentences));
  m.outputs.push_back(run.output("sentences", sentences_file()));
  run.finish(m);
  return std::to_string(sentences.size()) + " sentences";
}

inline std::vector<TextSentence> load_sentences(const Run& run, RunManifest& m) {
  m.inputs.push_back(run.require("sentences", sentences_file(), "preprocess"));
  return sentences_from_tsv(io::read_file(run.path(sentences_file())));
}

inline Vocabulary load_vocab(const Run& run, RunManifest& m) {
  m.inputs.push_back(run.require("vocab", vocab_file(), "build-vocab"));
  return Vocabulary::from_tsv(io::read_file(run.path(vocab_file())));
}

inline std::string stage_build_vocab(const Run& run) {
  auto m = run.begin("build-vocab", "build-vocab");
  const auto sentences = load_sentences(run, m);
  if (sentences.empty()) throw dependency_error("preprocess", "no sentences survived preprocessing");
  const auto cap = run.settings().get_number<std::size_t>("vocab.max_vocab", 0);
  const auto vocab = build_vocabulary(std::span<const TextSentence>(sentences),
                                      cap ? std::optional<std::size_t>(cap) : std::nullopt);
  io::write_file(run.path(vocab_file()), vocab.to_tsv());
  m.outputs.push_back(run.output("vocab", vocab_file()));
  run.finish(m);
  return "V=" + std::to_string(vocab.size());
}

inline std::string stage_train_embeddings(const Run& run, const std::string& profile,
                                          const std::optional<fs::path>& corpus) {
  check_profile(profile);
  auto m = run.begin("train-embeddings", "train-embeddings-" + profile);
  const auto vocab = load_vocab(run, m);
  std::vector<TextSentence> text;
  if (profile == "domain") {
    if (corpus) throw config_error("corpus", "the domain profile trains on the run's own sentences");
    text = load_sentences(run, m);
  } else {
    if (!corpus) throw config_error("corpus", "the external profile needs --corpus");
    m.inputs.push_back(run.source("external-corpus", *corpus));
    PreprocessOptions po;
    po.min_len = 1;
    po.max_sentences = static_cast<std::size_t>(-1);
    po.lowercase = run.settings().get_bool("preprocess.lowercase", true);
    text = preprocess(io::read_file(*corpus), po);
    m.config["provenance"] = fs::absolute(*corpus).string();
  }
  const auto& s = run.settings();
  SkipGramOptions o;
  o.dim = s.get_number<std::size_t>("embedding.dim", 200);
  o.window = s.get_number<std::size_t>("embedding.window", 5);
  o.negatives = s.get_number<std::size_t>("embedding.negatives", 5);
  o.epochs = s.get_number<std::size_t>("embedding.epochs", 5);
  o.lr = s.get_number<double>("embedding.lr", 0.025);
  o.threads = s.get_number<std::size_t>("embedding.threads", 1);
  o.seed = m.seed;
  const auto sentences = encode_sentences(text, vocab);
  if (sentences.empty()) throw config_error("corpus", "embedding corpus has no sentences");
  const auto result = train_skipgram(sentences, vocab, o);
  const auto file = embeddings_file(profile);
  io::write_file(run.path(file), result.space.to_text());
  std::string loss = "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    loss += std::to_string(e + 1) + ',' + io::format_exact(result.epoch_loss[e]) + '\n';
  const auto loss_file = "embeddings-" + profile + ".loss.csv";
  io::write_file(run.path(loss_file), loss);
  m.outputs.push_back(run.output("embeddings", file));
  m.outputs.push_back(run.output("embedding-loss", loss_file));
  run.finish(m);
  return "trained " + profile + " space, d=" + std::to_string(o.dim);
}

inline EmbeddingSpace load_space(const Run& run, RunManifest& m, const std::string& profile) {
  check_profile(profile);
  m.inputs.push_back(run.require("embeddings", embeddings_file(profile), "train-embeddings"));
  return EmbeddingSpace::from_text(io::read_file(run.path(embeddings_file(profile))));
}

inline std::string stage_cluster(const Run& run, const std::string& profile) {
  auto m = run.begin("cluster", "cluster-" + profile);
  const auto space = load_space(run, m, profile);
  const auto& s = run.settings();
  KMeansOptions o;
  o.k = s.get_number<std::size_t>("cluster.k", 100);
  o.n_top = s.get_number<std::size_t>("cluster.n_top", 5);
  o.max_iters = s.get_number<std::size_t>("cluster.max_iters", 100);
  o.tol = s.get_number<double>("cluster.tol", 1e-6);
  o.spherical = s.get_bool("cluster.spherical", false);
  const auto ranking = s.get_string("cluster.ranking", "cosine");
  if (ranking != "cosine" && ranking != "euclidean")
    throw config_error("cluster.ranking", "expected cosine or euclidean");
  o.ranking = ranking == "cosine" ? TopWordRanking::cosine : TopWordRanking::euclidean;
  o.seed = m.seed;
  const auto model = kmeans(space, o);
  io::write_file(run.path(clusters_file(profile)), model.to_text());
  m.outputs.push_back(run.output("clusters", clusters_file(profile)));
  run.finish(m);
  return "k=" + std::to_string(model.k()) + ", " + std::to_string(model.iterations()) + " iterations";
}

inline ClusterModel load_clusters(const Run& run, RunManifest& m, const std::string& profile,
                                  const EmbeddingSpace& space) {
  m.inputs.push_back(run.require("clusters", clusters_file(profile), "cluster"));
  auto model = ClusterModel::from_text(io::read_file(run.path(clusters_file(profile))));
  if (model.space_checksum() != space.checksum())
    throw dependency_error("cluster", "cluster model was built over a different embedding space");
  return model;
}

inline std::string dataset_id(const std::string& context, const std::string& profile) {
  if (context == "cluster") return "cluster-" + profile;
  if (context == "tfidf" || context == "none") return context;
  throw config_error("context", "expected tfidf, cluster or none, got '" + context + "'");
}

inline std::string stage_build_dataset(const Run& run, const std::string& context, const std::string& profile) {
  const auto id = dataset_id(context, profile);
  auto m = run.begin("build-dataset", "build-dataset-" + id);
  const auto text = load_sentences(run, m);
  const auto vocab = load_vocab(run, m);
  const auto sentences = encode_sentences(text, vocab);
  InstanceOptions io_opts;
  io_opts.window = run.settings().get_number<std::size_t>("dataset.window", 8);
  io_opts.reset_at_paragraph = run.settings().get_bool("dataset.reset_paragraphs", false);
  m.config["context"] = context;
  std::vector<TrainingInstance> instances;
  if (context == "none") {
    instances = make_instances(sentences, vocab, [&](const Sentence&) { return ContextVector::zero(vocab.size()); },
                               io_opts);
  } else if (context == "tfidf") {
    const auto idf = run.settings().get_string("dataset.idf", "smooth");
    if (idf != "smooth" && idf != "plain") throw config_error("dataset.idf", "expected smooth or plain");
    const auto model = TfidfModel::fit(sentences, vocab, idf == "smooth" ? IdfVariant::smooth : IdfVariant::plain);
    instances = make_instances(sentences, vocab, [&](const Sentence& s) { return model.context_of(s, vocab); },
                               io_opts);
    io::write_file(run.path("tfidf-contexts.tsv"), tfidf_dump_tsv(sentences, model, vocab));
    m.outputs.push_back(run.output("tfidf-dump", "tfidf-contexts.tsv"));
  } else {
    m.config["space"] = profile;
    const auto space = load_space(run, m, profile);
    space.check_vocabulary(vocab);
    const auto clusters = load_clusters(run, m, profile, space);
    instances = make_instances(
        sentences, vocab, [&](const Sentence& s) { return clusters.context_of(s, space, vocab); }, io_opts);
  }
  if (instances.empty()) throw config_error("dataset.window", "corpus is shorter than window + 1 tokens");
  io::write_file(run.path(dataset_file(id)), instances_to_binary(instances, vocab.size(), io_opts.window));
  io::write_file(run.path("dataset-" + id + ".tsv"), instances_to_tsv(instances));
  m.outputs.push_back(run.output("dataset", dataset_file(id)));
  m.outputs.push_back(run.output("dataset-debug", "dataset-" + id + ".tsv"));
  run.finish(m);
  return std::to_string(instances.size()) + " instances";
}

inline LmConfig lm_config_from(const Settings& s, std::size_t V, std::size_t window, ContextMode mode,
                               std::uint64_t seed) {
  LmConfig c;
  c.vocab_size = V;
  c.window = window;
  c.context_mode = mode;
  c.seed = seed;
  c.hidden = s.get_number<std::size_t>("lm.hidden", 256);
  c.bidirectional = s.get_bool("lm.bidirectional", true);
  const auto act = s.get_string("lm.activation", "tanh");
  if (act != "tanh" && act != "relu") throw config_error("lm.activation", "expected tanh or relu");
  c.activation = act == "tanh" ? CellActivation::tanh : CellActivation::relu;
  const auto place = s.get_string("lm.placement", "timestep0");
  if (place != "timestep0" && place != "concat") throw config_error("lm.placement", "expected timestep0 or concat");
  c.placement = place == "timestep0" ? ContextPlacement::timestep0 : ContextPlacement::concat;
  const auto optim = s.get_string("lm.optimizer", "sgd");
  if (optim != "sgd" && optim != "adam") throw config_error("lm.optimizer", "expected sgd or adam");
  c.optimizer = optim == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  c.lr = s.get_number<double>("lm.lr", c.optimizer == OptimizerKind::sgd ? 0.1 : 0.005);
  c.epochs = s.get_number<std::size_t>("lm.epochs", 30);
  c.batch_size = s.get_number<std::size_t>("lm.batch_size", 32);
  c.clip_norm = s.get_number<double>("lm.clip_norm", 0.0);
  c.val_fraction = s.get_number<double>("lm.val_fraction", 0.1);
  c.eval_every = s.get_number<std::size_t>("lm.eval_every", 3);
  c.validate();
  return c;
}

inline std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch-%04zu.ckpt", epoch);
  return buf;
}

inline std::string default_label(const std::string& dataset) { return dataset == "none" ? "base" : dataset; }

inline std::string stage_train_lm(const Run& run, const std::string& dataset, std::string label) {
  if (label.empty()) label = default_label(dataset);
  auto m = run.begin("train-lm", "train-lm-" + label);
  m.inputs.push_back(run.require("dataset", dataset_file(dataset), "build-dataset"));
  const auto set = instances_from_binary(io::read_file(run.path(dataset_file(dataset))));
  const auto mode = dataset == "none" ? ContextMode::none
                    : dataset == "tfidf" ? ContextMode::tfidf
                                         : ContextMode::cluster;
  const auto cfg = lm_config_from(run.settings(), set.vocab_size, set.window, mode, m.seed);
  m.config["dataset"] = dataset;
  m.config["label"] = label;
  const auto dir = lm_dir(label);
  fs::create_directories(run.path(dir));
  for (const auto& e : fs::directory_iterator(run.path(dir)))
    if (e.path().extension() == ".ckpt" || e.path().filename() == "metrics.csv") fs::remove(e.path());
  std::string metrics = metrics_csv_header();
  TrainHooks hooks;
  hooks.keep_last_only = true;
  hooks.on_checkpoint = [&](const Checkpoint& ck) {
    const auto rel = dir + "/" + checkpoint_name(ck.epoch);
    io::write_file(run.path(rel), checkpoint_to_binary(ck));
    m.outputs.push_back(run.output("checkpoint", rel));
    metrics += metrics_csv_row(ck);
  };
  std::vector<Checkpoint> out;
  try {
    out = train(cfg, set.instances, hooks);
  } catch (const training_diverged& e) {
    io::write_file(run.path(dir + "/metrics.csv"), metrics);
    io::write_file(run.path(dir + "/last-good.ckpt"), checkpoint_to_binary(e.last_good()));
    throw;
  }
  io::write_file(run.path(dir + "/metrics.csv"), metrics);
  m.outputs.push_back(run.output("metrics", dir + "/metrics.csv"));
  run.finish(m);
  const auto& last = out.back();
  return "epoch " + std::to_string(last.epoch) + ": train_acc=" + io::format_exact(last.metrics.train_acc) +
         " val_acc=" + io::format_exact(last.metrics.val_acc);
}

// Everything needed to turn context words into vectors for a trained model.
struct ModelBundle {
  Checkpoint checkpoint;
  Vocabulary vocab;
  std::optional<EmbeddingSpace> space;
  std::optional<ClusterModel> clusters;
  std::string dataset;
  std::string profile;  // context space, empty if none

  ContextBackend backend(bool raw_context) const {
    ContextBackend b;
    b.vocab = &vocab;
    if (raw_context) {
      b.kind = ContextBackendKind::raw;
    } else if (checkpoint.config.context_mode == ContextMode::cluster) {
      b.kind = ContextBackendKind::cluster;
      b.space = &*space;
      b.clusters = &*clusters;
    } else {
      b.kind = ContextBackendKind::tfidf;
    }
    return b;
  }
};

inline ModelBundle load_bundle(const Run& run, RunManifest& m, const std::string& checkpoint_rel) {
  m.inputs.push_back(run.require("checkpoint", checkpoint_rel, "train-lm"));
  ModelBundle b;
  b.checkpoint = checkpoint_from_binary(io::read_file(run.path(checkpoint_rel)));
  const auto lm = run.producer(checkpoint_rel);
  b.dataset = lm->config.value("dataset", "");
  b.vocab = load_vocab(run, m);
  if (b.vocab.size() != b.checkpoint.config.vocab_size)
    throw dependency_error("train-lm", "checkpoint vocabulary size differs from vocab.tsv");
  if (b.checkpoint.config.context_mode == ContextMode::cluster) {
    const auto ds = run.producer(dataset_file(b.dataset));
    if (!ds) throw dependency_error("build-dataset", "no manifest for dataset " + b.dataset);
    b.profile = ds->config.value("space", "domain");
    b.space = load_space(run, m, b.profile);
    b.clusters = load_clusters(run, m, b.profile, *b.space);
  }
  return b;
}

inline std::vector<std::string> split_contexts(const std::string& s) {
  std::vector<std::string> out;
  for (auto& part : io::split(s, ',')) {
    auto w = io::split_ws(part);
    if (w.size() != 1) throw config_error("contexts", "each comma-separated context must be one word");
    out.push_back(w[0]);
  }
  return out;
}

struct GenerateArgs {
  std::string checkpoint;  // relative to the run directory
  std::string seeds;
  std::string contexts;
  bool raw_context = false;
  bool allow_padding = false;
};

struct GenerateOutput {
  std::string text;
  json json_result;
};

inline GenerateOutput stage_generate(const Run& run, const GenerateArgs& args) {
  auto m = run.begin("generate", "generate");
  const auto bundle = load_bundle(run, m, args.checkpoint);
  const LanguageModel model(bundle.checkpoint);
  auto req = make_request(args.seeds, split_contexts(args.contexts), model.window(), bundle.backend(args.raw_context),
                          args.allow_padding);
  const auto& s = run.settings();
  req.max_sentence_len = s.get_number<std::size_t>("generate.max_len", 60);
  if (s.has("generate.temperature")) req.temperature = s.get_number<double>("generate.temperature", 1.0);
  req.sampling_seed = s.get_number<std::uint64_t>("generate.sampling_seed", m.seed);
  const auto result = generate(model, req, bundle.vocab.eos_id());
  GenerateOutput out{result.text(bundle.vocab), result.to_json(bundle.vocab)};
  io::write_file(run.path("generate.json"), out.json_result.dump(2) + "\n");
  m.outputs.push_back(run.output("generation", "generate.json"));
  run.finish(m);
  return out;
}

struct EvaluateArgs {
  std::string label;
  std::string seeds;
  std::string contexts;
  fs::path lexicon;
  std::string space;  // scoring space; empty = the model's context space, else domain
};

inline std::string stage_evaluate(const Run& run, const EvaluateArgs& args) {
  auto m = run.begin("evaluate", "evaluate-" + args.label);
  const auto dir = lm_dir(args.label);
  const auto producer = run.producer(dir + "/metrics.csv");
  if (!producer) throw dependency_error("train-lm", "no trained model labelled '" + args.label + "'");
  m.inputs.push_back(run.source("lexicon", args.lexicon));
  const auto tagger = NounTagger::from_lexicon_text(io::read_file(args.lexicon));
  std::vector<EvalReport> reports;
  std::string csv = EvalReport::csv_header();
  std::optional<EmbeddingSpace> scoring;
  std::string scoring_id;
  for (const auto& o : producer->outputs) {
    if (o.role != "checkpoint") continue;
    const auto ck = checkpoint_from_binary(io::read_file(run.path(o.path)));
    if (ck.epoch == 0 || ck.epoch % ck.config.eval_every != 0) continue;
    auto bundle = load_bundle(run, m, o.path);
    if (!scoring) {
      scoring_id = !args.space.empty() ? args.space : !bundle.profile.empty() ? bundle.profile : "domain";
      scoring = bundle.profile == scoring_id && bundle.space ? *bundle.space : load_space(run, m, scoring_id);
      m.config["scoring_space"] = scoring_id;
    }
    const LanguageModel model(bundle.checkpoint);
    auto req = make_request(args.seeds, split_contexts(args.contexts), model.window(), bundle.backend(false));
    req.max_sentence_len = run.settings().get_number<std::size_t>("generate.max_len", 60);
    EvalSetup setup{&bundle.vocab, &*scoring, scoring_id, &tagger, {}};
    auto report = evaluate_checkpoint(model, req, setup, args.label, ck.epoch);
    csv += report.csv_rows();
    reports.push_back(std::move(report));
  }
  if (reports.empty()) throw dependency_error("train-lm", "model '" + args.label + "' has no checkpoint at an evaluation epoch");
  io::write_file(run.path(eval_file(args.label)), csv);
  m.outputs.push_back(run.output("report", eval_file(args.label)));
  run.finish(m);
  std::string summary = std::to_string(reports.size()) + " evaluations";
  try {
    summary += ", best epoch " + std::to_string(best_epoch(reports));
  } catch (const no_signal_error&) {
    summary += ", no scorable sentences";
  }
  return summary;
}

inline std::string stage_curves(const Run& run, const std::string& context_label, const std::string& base_label) {
  auto m = run.begin("curves", "curves");
  auto load_reports = [&](const std::string& label) {
    m.inputs.push_back(run.require("report-" + label, eval_file(label), "evaluate"));
    return EvalReport::from_csv(io::read_file(run.path(eval_file(label))));
  };
  const auto ctx = load_reports(context_label);
  const auto base = load_reports(base_label);
  fs::create_directories(run.path("curves"));
  io::write_file(run.path("curves/semantic.csv"), curve_csv(ctx, base));
  auto series_of = [](const std::string& name, const std::vector<EvalReport>& rs) {
    Series s{name, {}};
    for (const auto& r : rs)
      if (auto mean = r.mean()) s.points.emplace_back(static_cast<double>(r.epoch), *mean);
    return s;
  };
  const std::vector<Series> sem{series_of(context_label, ctx), series_of(base_label, base)};
  io::write_file(run.path("curves/semantic.svg"),
                 line_chart_svg("Cosine similarity of generated text with context", "epoch", "mean score", sem));
  m.outputs.push_back(run.output("semantic-curve", "curves/semantic.csv"));
  m.outputs.push_back(run.output("semantic-chart", "curves/semantic.svg"));

  std::vector<Series> acc;
  std::string acc_csv = "model,epoch,train_acc,val_acc\n";
  for (const auto& label : {context_label, base_label}) {
    const auto rel = lm_dir(label) + "/metrics.csv";
    m.inputs.push_back(run.require("metrics-" + label, rel, "train-lm"));
    Series tr{label + " train", {}}, va{label + " val", {}};
    auto lines = io::read_lines(run.path(rel));
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      auto cols = io::split(lines[i], ',');
      if (cols.size() != 5) throw format_error("metrics row: expected 5 columns");
      const double e = io::parse_number<double>(cols[0], "epoch");
      tr.points.emplace_back(e, io::parse_number<double>(cols[2], "train_acc"));
      va.points.emplace_back(e, io::parse_number<double>(cols[4], "val_acc"));
      acc_csv += label + ',' + cols[0] + ',' + cols[2] + ',' + cols[4] + '\n';
    }
    acc.push_back(std::move(tr));
    acc.push_back(std::move(va));
  }
  io::write_file(run.path("curves/accuracy.csv"), acc_csv);
  io::write_file(run.path("curves/accuracy.svg"), line_chart_svg("Accuracy over epochs", "epoch", "accuracy", acc));
  m.outputs.push_back(run.output("accuracy-curve", "curves/accuracy.csv"));
  m.outputs.push_back(run.output("accuracy-chart", "curves/accuracy.svg"));
  run.finish(m);
  std::string summary = "curves written";
  try {
    summary += "; best context epoch " + std::to_string(best_epoch(ctx));
  } catch (const no_signal_error&) {
  }
  return summary;
}

}  // namespace ctxgen::pipeline
