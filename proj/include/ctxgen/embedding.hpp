#pragma once

// Skip-gram word vectors with negative sampling, plus the vector-space
// primitives shared by clustering and evaluation (accumulate, cosine).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "ctxgen/corpus.hpp"
#include "ctxgen/io.hpp"

namespace ctxgen {

template <class T, class U>
double dot(std::span<const T> a, std::span<const U> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <class T>
double norm(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

// u.v / (|u||v|), clamped to [-1, 1] against rounding.
template <class T, class U>
double cosine(std::span<const T> u, std::span<const U> v) {
  if (u.size() != v.size()) throw error("cosine: dimension mismatch");
  const double nu = norm(u);
  const double nv = norm(v);
  if (!(nu > 0.0) || !(nv > 0.0)) throw zero_vector_error();
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  return cosine(std::span<const double>(u), std::span<const double>(v));
}

// Per-token dense vectors indexed like the vocabulary. Trained spaces use
// float; double is available where exact arithmetic matters.
template <class Scalar>
class BasicEmbeddingSpace {
 public:
  BasicEmbeddingSpace() = default;
  BasicEmbeddingSpace(std::vector<std::string> tokens, std::size_t dim)
      : tokens_(std::move(tokens)), dim_(dim), data_(tokens_.size() * dim, Scalar{0}) {
    for (token_id i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::span<const Scalar> vector(token_id id) const {
    if (id >= tokens_.size()) throw bounds_error("embedding id out of range");
    return {data_.data() + static_cast<std::size_t>(id) * dim_, dim_};
  }
  std::span<Scalar> vector(token_id id) {
    if (id >= tokens_.size()) throw bounds_error("embedding id out of range");
    return {data_.data() + static_cast<std::size_t>(id) * dim_, dim_};
  }
  std::optional<token_id> find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::vector<double> vector_as_double(token_id id) const {
    auto v = vector(id);
    return {v.begin(), v.end()};
  }

  std::vector<Scalar>& raw() { return data_; }
  const std::vector<Scalar>& raw() const { return data_; }

  // UNK (0) and the terminator (1) carry no vector.
  static bool embeddable(token_id id) { return id > 1; }

  // Scales every vector by `factor`.
  BasicEmbeddingSpace scaled(Scalar factor) const {
    BasicEmbeddingSpace s = *this;
    for (auto& x : s.data_) x *= factor;
    return s;
  }

  // Text format: "V d", then one line per token id: surface form and d values.
  std::string to_text() const {
    std::string out = std::to_string(tokens_.size()) + ' ' + std::to_string(dim_) + '\n';
    for (token_id i = 0; i < tokens_.size(); ++i) {
      out += tokens_[i];
      for (Scalar x : vector(i)) {
        out += ' ';
        out += io::format_exact(x);
      }
      out += '\n';
    }
    return out;
  }

  static BasicEmbeddingSpace from_text(std::string_view text) {
    auto lines = io::split(text, '\n');
    if (lines.empty()) throw format_error("empty embedding file");
    auto head = io::split_ws(lines[0]);
    if (head.size() != 2) throw format_error("embedding header must be 'V d'");
    const auto V = io::parse_number<std::size_t>(head[0], "V");
    const auto d = io::parse_number<std::size_t>(head[1], "d");
    if (lines.size() < V + 1) throw format_error("embedding file has fewer rows than V");
    std::vector<std::string> tokens;
    std::vector<Scalar> data;
    data.reserve(V * d);
    for (std::size_t i = 1; i <= V; ++i) {
      auto cols = io::split_ws(lines[i]);
      if (cols.size() != d + 1) throw format_error("embedding row " + std::to_string(i) + ": expected d values");
      tokens.push_back(cols[0]);
      for (std::size_t k = 1; k <= d; ++k) {
        const auto x = io::parse_number<Scalar>(cols[k], "embedding value");
        if (!std::isfinite(x)) throw format_error("non-finite embedding value");
        data.push_back(x);
      }
    }
    for (std::size_t i = V + 1; i < lines.size(); ++i)
      if (!lines[i].empty()) throw format_error("trailing rows in embedding file");
    BasicEmbeddingSpace s(std::move(tokens), d);
    s.data_ = std::move(data);
    return s;
  }

  // Throws unless this space is indexed by exactly `vocab`.
  void check_vocabulary(const Vocabulary& vocab) const {
    if (tokens_ != vocab.tokens()) throw format_error("embedding space does not match the vocabulary");
  }

  std::string checksum() const { return io::hex64(io::fnv1a(to_text())); }

  friend bool operator==(const BasicEmbeddingSpace& a, const BasicEmbeddingSpace& b) {
    return a.tokens_ == b.tokens_ && a.dim_ == b.dim_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, token_id> index_;
  std::size_t dim_ = 0;
  std::vector<Scalar> data_;
};

using EmbeddingSpace = BasicEmbeddingSpace<float>;

// Component-wise sum of the sentence's embeddable word vectors.
template <class Scalar>
std::vector<double> accumulate(const Sentence& sentence, const BasicEmbeddingSpace<Scalar>& space) {
  std::vector<double> sum(space.dim(), 0.0);
  std::size_t used = 0;
  for (auto id : sentence.token_ids) {
    if (!EmbeddingSpace::embeddable(id)) continue;
    auto v = space.vector(id);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += v[k];
    ++used;
  }
  if (used == 0)
    throw degenerate_sentence("sentence " + std::to_string(sentence.source_index) + " has no embeddable tokens");
  return sum;
}

struct SkipGramOptions {
  std::size_t dim = 200;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double lr = 0.025;
  // Learning rate decays linearly to lr * final_lr_ratio.
  double final_lr_ratio = 0.01;
  double noise_power = 0.75;
  std::uint64_t seed = 1;
  // 1 = deterministic; >1 = lock-free parallel updates (run-dependent results).
  std::size_t threads = 1;
};

struct SkipGramResult {
  EmbeddingSpace space;
  // Mean negative-sampling loss per (center, context) pair, one entry per epoch.
  std::vector<double> epoch_loss;
};

namespace detail {

inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

inline double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <bool Atomic>
struct cell {
  static float load(float& x) {
    if constexpr (Atomic) return std::atomic_ref<float>(x).load(std::memory_order_relaxed);
    else return x;
  }
  static void add(float& x, float d) {
    if constexpr (Atomic) {
      std::atomic_ref<float> r(x);
      r.store(r.load(std::memory_order_relaxed) + d, std::memory_order_relaxed);
    } else {
      x += d;
    }
  }
};

class SkipGramTrainer {
 public:
  SkipGramTrainer(std::vector<std::vector<token_id>> corpus, std::size_t V, const SkipGramOptions& opts)
      : corpus_(std::move(corpus)), V_(V), opts_(opts), in_(V * opts.dim), out_(V * opts.dim, 0.0f) {
    std::vector<double> counts(V, 0.0);
    for (const auto& s : corpus_)
      for (auto id : s) {
        counts[id] += 1.0;
        ++total_tokens_;
      }
    noise_cdf_.resize(V);
    double acc = 0.0;
    for (std::size_t i = 0; i < V; ++i) {
      acc += counts[i] > 0 ? std::pow(counts[i], opts.noise_power) : 0.0;
      noise_cdf_[i] = acc;
    }
    std::mt19937_64 rng(opts.seed);
    const float half = 0.5f / static_cast<float>(opts.dim);
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t k = 0; k < opts.dim; ++k) {
        const float u = static_cast<float>(unit_draw(rng));
        in_[i * opts.dim + k] = EmbeddingSpace::embeddable(static_cast<token_id>(i)) ? (u - 0.5f) * 2.0f * half : 0.0f;
      }
  }

  std::vector<double> run() {
    std::vector<double> losses;
    for (std::size_t e = 0; e < opts_.epochs; ++e) {
      double loss = 0.0;
      std::size_t pairs = 0;
      if (opts_.threads <= 1) {
        std::mt19937_64 rng(opts_.seed ^ (0x9E3779B97F4A7C15ULL * (e + 1)));
        epoch_slice<false>(0, corpus_.size(), e, rng, loss, pairs);
      } else {
        std::vector<double> l(opts_.threads, 0.0);
        std::vector<std::size_t> p(opts_.threads, 0);
        std::vector<std::thread> pool;
        const std::size_t chunk = (corpus_.size() + opts_.threads - 1) / opts_.threads;
        for (std::size_t t = 0; t < opts_.threads; ++t)
          pool.emplace_back([&, t] {
            std::mt19937_64 rng(opts_.seed ^ (0x9E3779B97F4A7C15ULL * (e + 1)) ^ (t * 0xBF58476D1CE4E5B9ULL));
            const std::size_t lo = std::min(corpus_.size(), t * chunk);
            const std::size_t hi = std::min(corpus_.size(), lo + chunk);
            epoch_slice<true>(lo, hi, e, rng, l[t], p[t]);
          });
        for (auto& th : pool) th.join();
        loss = std::accumulate(l.begin(), l.end(), 0.0);
        pairs = std::accumulate(p.begin(), p.end(), std::size_t{0});
      }
      losses.push_back(pairs ? loss / static_cast<double>(pairs) : 0.0);
    }
    return losses;
  }

  const std::vector<float>& input_vectors() const { return in_; }

 private:
  token_id draw_negative(std::mt19937_64& rng) const {
    const double u = unit_draw(rng) * noise_cdf_.back();
    auto it = std::upper_bound(noise_cdf_.begin(), noise_cdf_.end(), u);
    if (it == noise_cdf_.end()) --it;
    return static_cast<token_id>(it - noise_cdf_.begin());
  }

  double current_lr(std::size_t epoch, std::size_t words_done_in_epoch) const {
    const double total = static_cast<double>(opts_.epochs * total_tokens_);
    const double done = static_cast<double>(epoch * total_tokens_ + words_done_in_epoch);
    const double progress = total > 0 ? std::min(1.0, done / total) : 0.0;
    return opts_.lr * (1.0 - progress * (1.0 - opts_.final_lr_ratio));
  }

  template <bool Atomic>
  void epoch_slice(std::size_t lo, std::size_t hi, std::size_t epoch, std::mt19937_64& rng, double& loss,
                   std::size_t& pairs) {
    using C = cell<Atomic>;
    const std::size_t d = opts_.dim;
    std::vector<float> grad(d);
    std::size_t words = 0;
    // In parallel mode each slice tracks progress as if it ran alone.
    const std::size_t scale = Atomic ? opts_.threads : 1;
    for (std::size_t s = lo; s < hi; ++s) {
      const auto& sent = corpus_[s];
      for (std::size_t i = 0; i < sent.size(); ++i, ++words) {
        const float lr = static_cast<float>(current_lr(epoch, std::min(total_tokens_, words * scale)));
        const std::size_t b = rng() % opts_.window;
        const std::size_t reach = opts_.window - b;
        const std::size_t j0 = i >= reach ? i - reach : 0;
        const std::size_t j1 = std::min(sent.size() - 1, i + reach);
        float* center = &in_[static_cast<std::size_t>(sent[i]) * d];
        for (std::size_t j = j0; j <= j1; ++j) {
          if (j == i) continue;
          std::fill(grad.begin(), grad.end(), 0.0f);
          for (std::size_t n = 0; n <= opts_.negatives; ++n) {
            token_id target = sent[j];
            float label = 1.0f;
            if (n > 0) {
              target = draw_negative(rng);
              if (target == sent[j]) continue;
              label = 0.0f;
            }
            float* out = &out_[static_cast<std::size_t>(target) * d];
            double f = 0.0;
            for (std::size_t k = 0; k < d; ++k) f += static_cast<double>(C::load(center[k])) * C::load(out[k]);
            loss -= label > 0 ? log_sigmoid(f) : log_sigmoid(-f);
            const float g = (label - static_cast<float>(sigmoid(f))) * lr;
            for (std::size_t k = 0; k < d; ++k) grad[k] += g * C::load(out[k]);
            for (std::size_t k = 0; k < d; ++k) C::add(out[k], g * C::load(center[k]));
          }
          for (std::size_t k = 0; k < d; ++k) C::add(center[k], grad[k]);
          ++pairs;
        }
      }
    }
  }

  std::vector<std::vector<token_id>> corpus_;
  std::size_t V_;
  SkipGramOptions opts_;
  std::vector<float> in_;
  std::vector<float> out_;
  std::vector<double> noise_cdf_;
  std::size_t total_tokens_ = 0;
};

}  // namespace detail

// Trains word vectors over `sentences` indexed by `vocab`. UNK and the
// terminator are dropped from the training stream and keep zero vectors.
inline SkipGramResult train_skipgram(std::span<const Sentence> sentences, const Vocabulary& vocab,
                                     const SkipGramOptions& opts = {}) {
  if (sentences.empty()) throw error("skip-gram training needs at least one sentence");
  if (opts.dim == 0) throw config_error("embedding.dim", "must be > 0");
  if (opts.window == 0) throw config_error("embedding.window", "must be > 0");
  if (!(opts.lr > 0)) throw config_error("embedding.lr", "must be > 0");
  const std::size_t embeddable = vocab.size() >= 2 ? vocab.size() - 2 : 0;
  if (embeddable < opts.negatives + 1)
    throw config_error("embedding.negatives", "vocabulary of " + std::to_string(embeddable) +
                                                  " words is smaller than negatives + 1");
  std::vector<std::vector<token_id>> corpus;
  for (const auto& s : sentences) {
    std::vector<token_id> ids;
    for (auto id : s.token_ids) {
      if (id >= vocab.size()) throw bounds_error("token id out of vocabulary range");
      if (EmbeddingSpace::embeddable(id)) ids.push_back(id);
    }
    if (ids.size() >= 2) corpus.push_back(std::move(ids));
  }
  detail::SkipGramTrainer trainer(std::move(corpus), vocab.size(), opts);
  SkipGramResult result;
  result.epoch_loss = trainer.run();
  result.space = EmbeddingSpace(vocab.tokens(), opts.dim);
  result.space.raw() = trainer.input_vectors();
  return result;
}

}  // namespace ctxgen
