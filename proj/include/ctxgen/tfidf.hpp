#pragma once

// Word-importance context: the highest tf-idf token of a sentence, one-hot encoded.

#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxgen/corpus.hpp"

namespace ctxgen {

enum class IdfVariant {
  smooth,  // ln((1 + N) / (1 + df)) + 1
  plain,   // ln(N / df)
};

// Document frequencies with each sentence treated as a document.
class TfidfModel {
 public:
  TfidfModel() = default;

  static TfidfModel fit(std::span<const Sentence> sentences, const Vocabulary& vocab,
                        IdfVariant variant = IdfVariant::smooth) {
    if (sentences.empty()) throw error("tf-idf fit needs at least one sentence");
    TfidfModel m;
    m.variant_ = variant;
    m.doc_count_ = sentences.size();
    m.df_.assign(vocab.size(), 0);
    std::vector<std::size_t> last_seen(vocab.size(), static_cast<std::size_t>(-1));
    for (std::size_t s = 0; s < sentences.size(); ++s)
      for (auto id : sentences[s].token_ids) {
        if (id >= vocab.size()) throw bounds_error("token id out of vocabulary range");
        if (last_seen[id] != s) {
          last_seen[id] = s;
          ++m.df_[id];
        }
      }
    m.eos_id_ = vocab.eos_id();
    return m;
  }

  std::size_t doc_count() const { return doc_count_; }
  std::size_t df(token_id id) const { return id < df_.size() ? df_[id] : 0; }

  double idf(token_id id) const {
    const double n = static_cast<double>(doc_count_);
    const double d = static_cast<double>(df(id));
    if (variant_ == IdfVariant::plain) return d == 0 ? 0.0 : std::log(n / d);
    return std::log((1.0 + n) / (1.0 + d)) + 1.0;
  }

  struct Scored {
    token_id id;
    double score;
  };

  // Argmax of raw-count tf times idf over the sentence's non-eos tokens;
  // ties go to the earliest occurrence.
  Scored top_word_scored(const Sentence& sentence) const {
    std::unordered_map<token_id, std::size_t> tf;
    for (auto id : sentence.token_ids)
      if (id != eos_id_) ++tf[id];
    if (tf.empty())
      throw degenerate_sentence("sentence " + std::to_string(sentence.source_index) +
                                " has no tokens besides the terminator");
    Scored best{0, -1.0};
    bool have = false;
    for (auto id : sentence.token_ids) {
      if (id == eos_id_) continue;
      const double score = static_cast<double>(tf[id]) * idf(id);
      if (!have || score > best.score) {
        best = {id, score};
        have = true;
      }
    }
    return best;
  }

  token_id top_word(const Sentence& sentence) const { return top_word_scored(sentence).id; }

  ContextVector context_of(const Sentence& sentence, const Vocabulary& vocab) const {
    return ContextVector::one_hot(top_word(sentence), vocab.size());
  }

 private:
  IdfVariant variant_ = IdfVariant::smooth;
  std::size_t doc_count_ = 0;
  std::vector<std::size_t> df_;
  token_id eos_id_ = 1;
};

// sentence index, chosen token, score
inline std::string tfidf_dump_tsv(std::span<const Sentence> sentences, const TfidfModel& model,
                                  const Vocabulary& vocab) {
  std::string out = "sentence_index\tcontext_token\ttfidf\n";
  for (const auto& s : sentences) {
    const auto best = model.top_word_scored(s);
    out += std::to_string(s.source_index) + '\t' + vocab.decode(best.id) + '\t' +
           io::format_exact(best.score) + '\n';
  }
  return out;
}

}  // namespace ctxgen
