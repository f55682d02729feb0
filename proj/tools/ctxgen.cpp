#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctxgen/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ctxgen;

namespace {

// Settings sections each subcommand exposes as --section-key flags.
const std::map<std::string, std::vector<std::string>> kSections = {
    {"preprocess", {"preprocess"}},
    {"build-vocab", {"vocab"}},
    {"train-embeddings", {"embedding", "preprocess"}},
    {"cluster", {"cluster"}},
    {"build-dataset", {"dataset"}},
    {"train-lm", {"lm"}},
    {"generate", {"generate"}},
    {"evaluate", {"generate"}},
    {"curves", {}},
};

std::string flag_for(const std::string& key) {
  std::string f = "--" + key;
  for (auto& c : f)
    if (c == '.' || c == '_') c = '-';
  return f;
}

struct Overrides {
  std::map<std::string, std::string> values;  // settings key -> flag value
};

void add_setting_flags(CLI::App* sub, const std::vector<std::string>& sections, Overrides& ov) {
  for (const auto& key : pipeline::known_settings()) {
    const auto dot = key.find('.');
    const auto section = key.substr(0, dot);
    if (section != "run" && std::find(sections.begin(), sections.end(), section) == sections.end()) continue;
    sub->add_option_function<std::string>(
        flag_for(key), [&ov, key](const std::string& v) { ov.values[key] = v; }, "override " + key);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctxgen: context-conditioned text generation pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  std::string run_dir;
  if (const char* env = std::getenv("CTXGEN_RUN_DIR")) run_dir = env;
  app.add_option("--config", config_path, "settings file (TOML-style)");
  app.add_option("--run-dir", run_dir, "run directory (default $CTXGEN_RUN_DIR or ./run)");

  Overrides ov;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, sections] : kSections) {
    auto* sub = app.add_subcommand(name);
    add_setting_flags(sub, sections, ov);
    subs[name] = sub;
  }
  subs["preprocess"]->description("split raw text into filtered sentences");
  subs["build-vocab"]->description("build the frequency-ranked vocabulary");
  subs["train-embeddings"]->description("train skip-gram word vectors");
  subs["cluster"]->description("k-means over an embedding space");
  subs["build-dataset"]->description("build next-word training instances with contexts");
  subs["train-lm"]->description("train the language model, one checkpoint per epoch");
  subs["generate"]->description("generate one sentence per context word");
  subs["evaluate"]->description("score generated text against its context words");
  subs["curves"]->description("plot evaluation and accuracy curves");

  std::string input;
  subs["preprocess"]->add_option("--input", input, "raw text file")->required();

  std::string profile = "domain";
  std::string corpus;
  subs["train-embeddings"]->add_option("--profile", profile, "domain or external");
  subs["train-embeddings"]->add_option("--corpus", corpus, "text for the external profile");
  subs["cluster"]->add_option("--space", profile, "embedding profile to cluster");

  std::string context = "cluster";
  subs["build-dataset"]->add_option("--context", context, "tfidf, cluster or none");
  subs["build-dataset"]->add_option("--space", profile, "embedding profile for cluster contexts");

  std::string dataset = "cluster-domain";
  std::string label;
  subs["train-lm"]->add_option("--dataset", dataset, "dataset id (tfidf, none, cluster-<profile>)");
  subs["train-lm"]->add_option("--label", label, "model label (default derived from dataset)");

  pipeline::GenerateArgs gen;
  std::string format = "text";
  subs["generate"]->add_option("--checkpoint", gen.checkpoint, "checkpoint path inside the run directory")->required();
  subs["generate"]->add_option("--seeds", gen.seeds, "window-length seed words")->required();
  subs["generate"]->add_option("--contexts", gen.contexts, "comma-separated context words")->required();
  subs["generate"]->add_flag("--raw-context", gen.raw_context, "use one-hot contexts instead of the model's backend");
  subs["generate"]->add_flag("--allow-padding", gen.allow_padding, "pad short seed lists with <unk>");
  subs["generate"]->add_option("--format", format, "text or json")->check(CLI::IsMember({"text", "json"}));

  pipeline::EvaluateArgs ev;
  std::string lexicon;
  subs["evaluate"]->add_option("--label", ev.label, "model label")->required();
  subs["evaluate"]->add_option("--seeds", ev.seeds, "window-length seed words")->required();
  subs["evaluate"]->add_option("--contexts", ev.contexts, "comma-separated context words")->required();
  subs["evaluate"]->add_option("--lexicon", lexicon, "noun lexicon, one word per line")->required();
  subs["evaluate"]->add_option("--space", ev.space, "embedding profile used for scoring");

  std::string ctx_label = "cluster-domain", base_label = "base";
  subs["curves"]->add_option("--context-label", ctx_label, "context model label");
  subs["curves"]->add_option("--base-label", base_label, "base model label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(exit_code::config);
  }

  try {
    Settings settings = config_path.empty() ? Settings{} : Settings::load(config_path, pipeline::known_settings());
    for (const auto& [k, v] : ov.values) settings.set_override(k, v);
    if (run_dir.empty()) run_dir = "run";
    pipeline::Run run(run_dir, std::move(settings));
    pipeline::RunLock lock(run.dir());

    std::string summary;
    if (subs["preprocess"]->parsed()) {
      summary = pipeline::stage_preprocess(run, input);
    } else if (subs["build-vocab"]->parsed()) {
      summary = pipeline::stage_build_vocab(run);
    } else if (subs["train-embeddings"]->parsed()) {
      summary = pipeline::stage_train_embeddings(run, profile,
                                                 corpus.empty() ? std::nullopt : std::optional<fs::path>(corpus));
    } else if (subs["cluster"]->parsed()) {
      summary = pipeline::stage_cluster(run, profile);
    } else if (subs["build-dataset"]->parsed()) {
      summary = pipeline::stage_build_dataset(run, context, profile);
    } else if (subs["train-lm"]->parsed()) {
      summary = pipeline::stage_train_lm(run, dataset, label);
    } else if (subs["generate"]->parsed()) {
      auto out = pipeline::stage_generate(run, gen);
      std::cout << (format == "json" ? out.json_result.dump(2) : out.text) << '\n';
      return 0;
    } else if (subs["evaluate"]->parsed()) {
      ev.lexicon = lexicon;
      summary = pipeline::stage_evaluate(run, ev);
    } else if (subs["curves"]->parsed()) {
      summary = pipeline::stage_curves(run, ctx_label, base_label);
    }
    std::cerr << summary << '\n';
    return 0;
  } catch (const error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(exit_code::failure);
  }
}
