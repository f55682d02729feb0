#pragma once

// Sentence-per-context generation with a sliding next-word window.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxgen/cluster.hpp"
#include "ctxgen/corpus.hpp"
#include "ctxgen/embedding.hpp"

namespace ctxgen {

template <class M>
concept NextWordModel = requires(const M& m, const ContextVector& c, std::span<const token_id> w) {
  { m.predict(c, w) } -> std::convertible_to<std::vector<double>>;
  { m.window() } -> std::convertible_to<std::size_t>;
  { m.vocab_size() } -> std::convertible_to<std::size_t>;
};

class unknown_context_word : public error {
 public:
  unknown_context_word(std::string word, std::vector<std::string> suggestions)
      : error(message(word, suggestions)), word_(std::move(word)), suggestions_(std::move(suggestions)) {}
  const std::string& word() const { return word_; }
  const std::vector<std::string>& suggestions() const { return suggestions_; }

 private:
  static std::string message(const std::string& word, const std::vector<std::string>& s) {
    std::string m = "unknown context word '" + word + "'";
    if (!s.empty()) {
      m += "; did you mean:";
      for (const auto& x : s) m += ' ' + x;
    }
    return m;
  }
  std::string word_;
  std::vector<std::string> suggestions_;
};

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

// Up to `limit` regular vocabulary words closest to `word` by edit distance.
inline std::vector<std::string> suggest_words(std::string_view word, const Vocabulary& vocab, std::size_t limit = 3,
                                              std::size_t max_distance = 3) {
  std::vector<std::pair<std::size_t, std::string>> cands;
  for (token_id id = 2; id < vocab.size(); ++id) {
    const auto d = edit_distance(word, vocab.decode(id));
    if (d <= max_distance) cands.emplace_back(d, vocab.decode(id));
  }
  std::sort(cands.begin(), cands.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(limit, cands.size()); ++i) out.push_back(cands[i].second);
  return out;
}

enum class ContextBackendKind { tfidf, cluster, raw };

// How a user-supplied context word becomes a ContextVector.
struct ContextBackend {
  ContextBackendKind kind = ContextBackendKind::tfidf;
  const Vocabulary* vocab = nullptr;
  const EmbeddingSpace* space = nullptr;
  const ClusterModel* clusters = nullptr;
};

inline ContextVector context_vector_for_word(std::string_view word, const ContextBackend& backend) {
  const auto& vocab = *backend.vocab;
  const auto id = vocab.find(word);
  if (!id || vocab.is_reserved(*id)) throw unknown_context_word(std::string(word), suggest_words(word, vocab));
  if (backend.kind != ContextBackendKind::cluster) return ContextVector::one_hot(*id, vocab.size());
  if (!backend.space || !backend.clusters) throw error("cluster backend needs an embedding space and a cluster model");
  const auto v = backend.space->vector_as_double(*id);
  const auto j = backend.clusters->nearest_center(std::span<const double>(v));
  return ContextVector::bag_of_words(backend.clusters->top_words(j), vocab.size());
}

struct GenerationRequest {
  std::vector<token_id> seeds;
  std::vector<std::string> context_words;
  std::vector<ContextVector> contexts;
  std::size_t max_sentence_len = 60;
  // Unset = greedy argmax.
  std::optional<double> temperature;
  std::uint64_t sampling_seed = 0;
  // Number of UNK tokens prepended to short seed lists.
  std::size_t seed_padding = 0;
};

struct GeneratedSentence {
  std::string context_word;
  std::vector<token_id> tokens;
  bool truncated = false;

  friend bool operator==(const GeneratedSentence&, const GeneratedSentence&) = default;
};

struct GenerationResult {
  std::vector<GeneratedSentence> sentences;
  std::size_t seed_padding = 0;

  std::string text(const Vocabulary& vocab) const {
    std::string out;
    for (const auto& s : sentences)
      for (auto id : s.tokens) {
        if (!out.empty() && id != vocab.eos_id()) out += ' ';
        out += vocab.decode(id);
      }
    return out;
  }

  nlohmann::json to_json(const Vocabulary& vocab) const {
    nlohmann::json j;
    j["seed_padding"] = seed_padding;
    j["text"] = text(vocab);
    j["sentences"] = nlohmann::json::array();
    for (const auto& s : sentences) {
      nlohmann::json e;
      e["context"] = s.context_word;
      e["tokens"] = nlohmann::json::array();
      for (auto id : s.tokens) e["tokens"].push_back(vocab.decode(id));
      e["truncated"] = s.truncated;
      j["sentences"].push_back(std::move(e));
    }
    return j;
  }

  friend bool operator==(const GenerationResult&, const GenerationResult&) = default;
};

// Builds a request from text: seeds are whitespace-separated, contexts a list
// of words. Short seed lists are left-padded with UNK only if allowed.
inline GenerationRequest make_request(std::string_view seeds, const std::vector<std::string>& context_words,
                                      std::size_t window, const ContextBackend& backend, bool allow_padding = false) {
  GenerationRequest req;
  auto words = io::split_ws(seeds);
  if (words.size() > window || (words.size() < window && !allow_padding))
    throw config_error("seeds", "expected exactly " + std::to_string(window) + " seed words, got " +
                                    std::to_string(words.size()));
  req.seed_padding = window - words.size();
  req.seeds.assign(req.seed_padding, backend.vocab->unk_id());
  for (const auto& w : words) req.seeds.push_back(backend.vocab->encode(w));
  if (context_words.empty()) throw config_error("contexts", "at least one context word is required");
  for (const auto& c : context_words) {
    req.context_words.push_back(c);
    req.contexts.push_back(context_vector_for_word(c, backend));
  }
  return req;
}

// Observer for each prediction: the window fed to the model and the chosen token.
using GenerationObserver = std::function<void(std::span<const token_id>, token_id)>;

template <NextWordModel Model>
GenerationResult generate(const Model& model, const GenerationRequest& req, token_id eos_id,
                          const GenerationObserver& observe = {}) {
  const std::size_t w = model.window();
  if (req.seeds.size() != w)
    throw error("shape mismatch: model window is " + std::to_string(w) + " but " + std::to_string(req.seeds.size()) +
                " seed tokens were given");
  if (req.contexts.empty()) throw config_error("contexts", "at least one context is required");
  if (req.context_words.size() != req.contexts.size()) throw error("context words and vectors differ in count");
  if (req.max_sentence_len == 0) throw config_error("max_len", "must be >= 1");
  if (req.temperature && !(*req.temperature > 0)) throw config_error("temperature", "must be > 0");
  for (const auto& c : req.contexts)
    if (c.dim() != model.vocab_size()) throw error("shape mismatch: context dimension differs from model vocabulary");

  std::mt19937_64 rng(req.sampling_seed);
  std::vector<token_id> window(req.seeds);
  GenerationResult result;
  result.seed_padding = req.seed_padding;
  for (std::size_t j = 0; j < req.contexts.size(); ++j) {
    GeneratedSentence sent{req.context_words[j], {}, false};
    while (true) {
      if (window.size() != w) throw std::logic_error("generation window length drifted");
      const auto probs = model.predict(req.contexts[j], window);
      if (probs.size() != model.vocab_size()) throw error("shape mismatch: model output size");
      token_id next = 0;
      if (!req.temperature) {
        next = static_cast<token_id>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      } else {
        std::vector<double> logw(probs.size());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < probs.size(); ++i) {
          logw[i] = probs[i] > 0 ? std::log(probs[i]) / *req.temperature : -std::numeric_limits<double>::infinity();
          mx = std::max(mx, logw[i]);
        }
        double total = 0.0;
        for (auto& x : logw) total += (x = std::exp(x - mx));
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
        double acc = 0.0;
        next = static_cast<token_id>(probs.size() - 1);
        for (std::size_t i = 0; i < logw.size(); ++i) {
          acc += logw[i];
          if (u < acc) {
            next = static_cast<token_id>(i);
            break;
          }
        }
      }
      if (observe) observe(window, next);
      sent.tokens.push_back(next);
      window.erase(window.begin());
      window.push_back(next);
      if (next == eos_id) break;
      if (sent.tokens.size() >= req.max_sentence_len) {
        sent.truncated = true;
        break;
      }
    }
    result.sentences.push_back(std::move(sent));
  }
  return result;
}

}  // namespace ctxgen
