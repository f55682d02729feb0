#pragma once

// Corpus ingestion: text cleanup, vocabulary, and windowed training instances.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxgen/error.hpp"
#include "ctxgen/io.hpp"

namespace ctxgen {

using token_id = std::uint32_t;

inline constexpr std::string_view kEosToken = ".";
inline constexpr std::string_view kUnkToken = "<unk>";

// A cleaned sentence, still as surface strings. `capitalized[i]` records
// whether token i started with an uppercase letter before lowercasing.
struct TextSentence {
  std::vector<std::string> tokens;
  std::vector<std::uint8_t> capitalized;
  std::size_t paragraph = 0;
};

struct PreprocessOptions {
  std::size_t min_len = 7;
  std::size_t max_sentences = 100000;
  bool lowercase = true;
};

namespace detail {

// Decodes one UTF-8 code point at `pos`; throws on malformed input.
inline char32_t next_code_point(std::string_view s, std::size_t& pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  auto fail = [&] {
    throw decoding_error("invalid UTF-8 at byte offset " + std::to_string(pos));
  };
  int len = 0;
  char32_t cp = 0;
  if (b0 < 0x80) {
    len = 1;
    cp = b0;
  } else if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    fail();
  }
  if (pos + len > s.size()) fail();
  for (int k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[pos + k]);
    if ((b & 0xC0) != 0x80) fail();
    cp = (cp << 6) | (b & 0x3F);
  }
  static constexpr char32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) fail();
  pos += len;
  return cp;
}

inline bool is_space(char32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v' ||
         cp == 0xA0 || (cp >= 0x2000 && cp <= 0x200B) || cp == 0x3000;
}

inline bool is_terminal(char32_t cp) { return cp == '.' || cp == '!' || cp == '?'; }

inline bool is_punct(char32_t cp) {
  if (cp < 0x80) return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
                        (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
  return cp == 0xA1 || cp == 0xAB || cp == 0xB7 || cp == 0xBB || cp == 0xBF ||
         (cp >= 0x2010 && cp <= 0x205E) || (cp >= 0x3001 && cp <= 0x3003);
}

inline bool is_control(char32_t cp) {
  return (cp < 0x20 && !is_space(cp)) || cp == 0x7F;
}

}  // namespace detail

// Splits on . ! ? (and on blank lines), strips punctuation, lowercases ASCII,
// drops sentences shorter than `min_len` content tokens and re-terminates each
// survivor with ".".
inline std::vector<TextSentence> preprocess(std::string_view raw,
                                            const PreprocessOptions& opts = {}) {
  std::vector<TextSentence> out;
  TextSentence current;
  std::string token;
  bool token_caps = false;
  std::size_t paragraph = 0;
  int newlines = 0;

  auto flush_token = [&] {
    if (!token.empty()) {
      current.tokens.push_back(std::move(token));
      current.capitalized.push_back(token_caps ? 1 : 0);
    }
    token.clear();
    token_caps = false;
  };
  auto flush_sentence = [&] {
    flush_token();
    if (current.tokens.size() >= opts.min_len && out.size() < opts.max_sentences) {
      current.tokens.emplace_back(kEosToken);
      current.capitalized.push_back(0);
      current.paragraph = paragraph;
      out.push_back(std::move(current));
    }
    current = TextSentence{};
  };

  std::size_t pos = 0;
  while (pos < raw.size() && out.size() < opts.max_sentences) {
    const std::size_t at = pos;
    const char32_t cp = detail::next_code_point(raw, pos);
    if (detail::is_control(cp))
      throw decoding_error("control character at byte offset " + std::to_string(at));
    if (cp == '\n') {
      if (++newlines == 2) {
        flush_sentence();
        ++paragraph;
      }
    } else if (!detail::is_space(cp)) {
      newlines = 0;
    }
    if (detail::is_space(cp)) {
      flush_token();
    } else if (detail::is_terminal(cp)) {
      flush_sentence();
    } else if (detail::is_punct(cp)) {
      // stripped
    } else {
      if (token.empty()) token_caps = cp >= 'A' && cp <= 'Z';
      if (opts.lowercase && cp >= 'A' && cp <= 'Z') {
        token.push_back(static_cast<char>(cp - 'A' + 'a'));
      } else {
        token.append(raw.substr(at, pos - at));
      }
    }
  }
  if (out.size() < opts.max_sentences) flush_sentence();
  return out;
}

// Renders sentences back to text, one per line.
inline std::string join_sentences(std::span<const TextSentence> sentences) {
  std::string text;
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) text.push_back(' ');
      text += s.tokens[i];
    }
    text.push_back('\n');
  }
  return text;
}

class Vocabulary {
 public:
  Vocabulary() = default;

  // Reserved tokens take ids 0 (UNK) and 1 (eos); the rest follow in the given order.
  static Vocabulary from_ranked(std::span<const std::string> regular,
                                std::span<const std::uint64_t> frequencies = {}) {
    Vocabulary v;
    v.add(std::string(kUnkToken));
    v.add(std::string(kEosToken));
    for (const auto& t : regular) {
      if (t == kUnkToken || t == kEosToken) throw error("reserved token in regular list: " + t);
      if (v.index_.contains(t)) throw error("duplicate vocabulary token: " + t);
      v.add(t);
    }
    if (!frequencies.empty()) {
      if (frequencies.size() != v.tokens_.size()) throw error("frequency list size mismatch");
      v.freq_.assign(frequencies.begin(), frequencies.end());
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  token_id unk_id() const { return 0; }
  token_id eos_id() const { return 1; }
  bool is_reserved(token_id id) const { return id <= 1; }

  token_id encode(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? unk_id() : it->second;
  }
  std::optional<token_id> find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& decode(token_id id) const {
    if (id >= tokens_.size()) throw bounds_error("token id " + std::to_string(id) + " >= V");
    return tokens_[id];
  }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::uint64_t frequency(token_id id) const { return id < freq_.size() ? freq_[id] : 0; }

  std::string to_tsv() const {
    std::string out;
    for (token_id i = 0; i < tokens_.size(); ++i)
      out += tokens_[i] + '\t' + std::to_string(i) + '\t' + std::to_string(frequency(i)) + '\n';
    return out;
  }

  static Vocabulary from_tsv(std::string_view tsv) {
    std::vector<std::string> regular;
    std::vector<std::uint64_t> freq;
    std::size_t line_no = 0;
    for (const auto& line : io::split(tsv, '\n')) {
      if (line.empty()) continue;
      auto cols = io::split(line, '\t');
      if (cols.size() != 3) throw format_error("vocabulary line " + std::to_string(line_no) + ": expected 3 columns");
      if (io::parse_number<std::size_t>(cols[1], "token id") != line_no)
        throw format_error("vocabulary ids must be dense and ordered");
      if (line_no == 0 && cols[0] != kUnkToken) throw format_error("vocabulary id 0 must be <unk>");
      if (line_no == 1 && cols[0] != kEosToken) throw format_error("vocabulary id 1 must be '.'");
      if (line_no >= 2) regular.push_back(cols[0]);
      freq.push_back(io::parse_number<std::uint64_t>(cols[2], "frequency"));
      ++line_no;
    }
    if (line_no < 2) throw format_error("vocabulary is missing reserved tokens");
    return from_ranked(regular, freq);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.freq_ == b.freq_;
  }

 private:
  void add(std::string t) {
    index_.emplace(t, static_cast<token_id>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, token_id> index_;
  std::vector<std::uint64_t> freq_;
};

// Frequency-ranked vocabulary (ties lexicographic). `max_vocab` caps the
// number of regular tokens; the rest fold into UNK.
inline Vocabulary build_vocabulary(std::span<const std::vector<std::string>> sentences,
                                   std::optional<std::size_t> max_vocab = std::nullopt) {
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t eos_count = 0;
  for (const auto& s : sentences)
    for (const auto& t : s) {
      if (t == kEosToken) {
        ++eos_count;
      } else if (t != kUnkToken) {
        ++counts[t];
      }
    }
  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::uint64_t unk_count = 0;
  if (max_vocab && ranked.size() > *max_vocab) {
    for (std::size_t i = *max_vocab; i < ranked.size(); ++i) unk_count += ranked[i].second;
    ranked.resize(*max_vocab);
  }
  for (const auto& s : sentences)
    for (const auto& t : s)
      if (t == kUnkToken) ++unk_count;
  std::vector<std::string> regular;
  std::vector<std::uint64_t> freq{unk_count, eos_count};
  for (auto& [t, c] : ranked) {
    regular.push_back(t);
    freq.push_back(c);
  }
  return Vocabulary::from_ranked(regular, freq);
}

inline Vocabulary build_vocabulary(std::span<const TextSentence> sentences,
                                   std::optional<std::size_t> max_vocab = std::nullopt) {
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(sentences.size());
  for (const auto& s : sentences) tokens.push_back(s.tokens);
  return build_vocabulary(std::span<const std::vector<std::string>>(tokens), max_vocab);
}

struct Sentence {
  std::vector<token_id> token_ids;
  std::size_t source_index = 0;
  std::size_t paragraph = 0;
};

inline std::vector<Sentence> encode_sentences(std::span<const TextSentence> sentences,
                                              const Vocabulary& vocab) {
  std::vector<Sentence> out;
  out.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    Sentence s{{}, i, sentences[i].paragraph};
    for (const auto& t : sentences[i].tokens) s.token_ids.push_back(vocab.encode(t));
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<double> one_hot(token_id id, std::size_t V) {
  if (id >= V)
    throw bounds_error("one_hot: id " + std::to_string(id) + " out of range for V=" + std::to_string(V));
  std::vector<double> v(V, 0.0);
  v[id] = 1.0;
  return v;
}

enum class ContextKind : std::uint8_t { zero = 0, one_hot = 1, bag_of_words = 2 };

inline std::string_view to_string(ContextKind k) {
  switch (k) {
    case ContextKind::zero: return "zero";
    case ContextKind::one_hot: return "one-hot";
    case ContextKind::bag_of_words: return "bow";
  }
  return "?";
}

// A V-dimensional 0/1 context vector, stored by its set positions.
class ContextVector {
 public:
  ContextVector() = default;

  static ContextVector zero(std::size_t V) { return ContextVector(ContextKind::zero, V, {}); }
  static ContextVector one_hot(token_id id, std::size_t V) {
    if (id >= V) throw bounds_error("context id " + std::to_string(id) + " >= V");
    return ContextVector(ContextKind::one_hot, V, {id});
  }
  static ContextVector bag_of_words(std::vector<token_id> ids, std::size_t V) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.empty()) throw error("bag-of-words context needs at least one word");
    if (ids.back() >= V) throw bounds_error("context id " + std::to_string(ids.back()) + " >= V");
    return ContextVector(ContextKind::bag_of_words, V, std::move(ids));
  }

  ContextKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  // Sorted, unique positions holding 1.
  const std::vector<token_id>& active() const { return active_; }

  std::vector<double> weights() const {
    std::vector<double> w(dim_, 0.0);
    for (auto id : active_) w[id] = 1.0;
    return w;
  }

  friend bool operator==(const ContextVector&, const ContextVector&) = default;

 private:
  ContextVector(ContextKind kind, std::size_t V, std::vector<token_id> active)
      : kind_(kind), dim_(V), active_(std::move(active)) {}
  ContextKind kind_ = ContextKind::zero;
  std::size_t dim_ = 0;
  std::vector<token_id> active_;
};

struct TrainingInstance {
  ContextVector context;
  std::vector<token_id> input_ids;
  token_id target_id = 0;
  std::size_t sentence_ref = 0;

  friend bool operator==(const TrainingInstance&, const TrainingInstance&) = default;
};

// Index (into `counts`) of the sentence owning a window: most tokens wins,
// ties go to the later sentence.
inline std::size_t majority_owner(std::span<const std::pair<std::size_t, std::size_t>> counts) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < counts.size(); ++k)
    if (counts[k].second >= counts[best].second) best = k;
  return counts[best].first;
}

struct InstanceOptions {
  std::size_t window = 8;
  // Start a fresh token stream at every paragraph boundary.
  bool reset_at_paragraph = false;
};

// Slides a window over the flattened token stream. ctx_fn(const Sentence&)
// returns the ContextVector for the window's owning sentence; it is called
// at most once per sentence.
template <class CtxFn>
std::vector<TrainingInstance> make_instances(std::span<const Sentence> sentences, const Vocabulary& vocab,
                                             CtxFn&& ctx_fn, const InstanceOptions& opts = {}) {
  if (opts.window == 0) throw config_error("window", "must be >= 1");
  std::vector<TrainingInstance> out;
  std::vector<std::optional<ContextVector>> cache(sentences.size());
  auto context_for = [&](std::size_t s) -> const ContextVector& {
    if (!cache[s]) cache[s] = ctx_fn(sentences[s]);
    return *cache[s];
  };

  std::size_t begin = 0;
  while (begin < sentences.size()) {
    std::size_t end = begin + 1;
    if (opts.reset_at_paragraph) {
      while (end < sentences.size() && sentences[end].paragraph == sentences[begin].paragraph) ++end;
    } else {
      end = sentences.size();
    }
    std::vector<token_id> stream;
    std::vector<std::size_t> owner;
    for (std::size_t s = begin; s < end; ++s)
      for (auto id : sentences[s].token_ids) {
        if (id >= vocab.size()) throw bounds_error("token id out of vocabulary range");
        stream.push_back(id);
        owner.push_back(s);
      }
    const std::size_t w = opts.window;
    std::vector<std::pair<std::size_t, std::size_t>> counts;
    for (std::size_t i = 0; i + w < stream.size(); ++i) {
      counts.clear();
      for (std::size_t j = i; j < i + w; ++j) {
        if (counts.empty() || counts.back().first != owner[j]) counts.emplace_back(owner[j], 0);
        ++counts.back().second;
      }
      const std::size_t s = majority_owner(counts);
      TrainingInstance inst;
      inst.context = context_for(s);
      inst.input_ids.assign(stream.begin() + static_cast<std::ptrdiff_t>(i),
                            stream.begin() + static_cast<std::ptrdiff_t>(i + w));
      inst.target_id = stream[i + w];
      inst.sentence_ref = s;
      out.push_back(std::move(inst));
    }
    begin = end;
  }
  return out;
}

inline constexpr std::string_view kInstanceMagic = "CTXGINS1";

inline std::string instances_to_binary(std::span<const TrainingInstance> instances, std::size_t V,
                                       std::size_t window) {
  io::binary_writer w;
  w.put_bytes(kInstanceMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(V));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(window));
  w.put<std::uint64_t>(instances.size());
  for (const auto& inst : instances) {
    if (inst.input_ids.size() != window) throw error("instance window length mismatch");
    w.put<std::uint8_t>(static_cast<std::uint8_t>(inst.context.kind()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(inst.context.active().size()));
    for (auto id : inst.context.active()) w.put<std::uint32_t>(id);
    for (auto id : inst.input_ids) w.put<std::uint32_t>(id);
    w.put<std::uint32_t>(inst.target_id);
    w.put<std::uint64_t>(inst.sentence_ref);
  }
  return w.data();
}

struct InstanceSet {
  std::size_t vocab_size = 0;
  std::size_t window = 0;
  std::vector<TrainingInstance> instances;
};

inline InstanceSet instances_from_binary(std::string_view data) {
  io::binary_reader r(data);
  if (r.get_bytes(kInstanceMagic.size()) != kInstanceMagic) throw format_error("not an instance file");
  InstanceSet set;
  set.vocab_size = r.get<std::uint32_t>();
  set.window = r.get<std::uint32_t>();
  const auto n = r.get<std::uint64_t>();
  set.instances.reserve(n);
  for (std::uint64_t k = 0; k < n; ++k) {
    TrainingInstance inst;
    const auto kind = static_cast<ContextKind>(r.get<std::uint8_t>());
    std::vector<token_id> ids(r.get<std::uint32_t>());
    for (auto& id : ids) id = r.get<std::uint32_t>();
    switch (kind) {
      case ContextKind::zero:
        if (!ids.empty()) throw format_error("zero context with active entries");
        inst.context = ContextVector::zero(set.vocab_size);
        break;
      case ContextKind::one_hot:
        if (ids.size() != 1) throw format_error("one-hot context must have one entry");
        inst.context = ContextVector::one_hot(ids[0], set.vocab_size);
        break;
      case ContextKind::bag_of_words:
        inst.context = ContextVector::bag_of_words(ids, set.vocab_size);
        break;
      default:
        throw format_error("unknown context kind");
    }
    inst.input_ids.resize(set.window);
    for (auto& id : inst.input_ids) {
      id = r.get<std::uint32_t>();
      if (id >= set.vocab_size) throw format_error("input id out of range");
    }
    inst.target_id = r.get<std::uint32_t>();
    if (inst.target_id >= set.vocab_size) throw format_error("target id out of range");
    inst.sentence_ref = r.get<std::uint64_t>();
    set.instances.push_back(std::move(inst));
  }
  if (!r.done()) throw format_error("trailing bytes in instance file");
  return set;
}

// Human-readable dump: context kind, context nonzeros, input ids, target id.
inline std::string instances_to_tsv(std::span<const TrainingInstance> instances) {
  std::string out = "context_kind\tcontext_nonzeros\tinput_ids\ttarget_id\n";
  for (const auto& inst : instances) {
    out += to_string(inst.context.kind());
    out += '\t';
    for (std::size_t k = 0; k < inst.context.active().size(); ++k) {
      if (k) out += ',';
      out += std::to_string(inst.context.active()[k]);
    }
    out += '\t';
    for (std::size_t k = 0; k < inst.input_ids.size(); ++k) {
      if (k) out += ' ';
      out += std::to_string(inst.input_ids[k]);
    }
    out += '\t' + std::to_string(inst.target_id) + '\n';
  }
  return out;
}

}  // namespace ctxgen
