#pragma once

// Semantic closeness of generated sentences to their context word: mean
// cosine between the sentence's nouns and the context word.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ctxgen/embedding.hpp"
#include "ctxgen/generate.hpp"

namespace ctxgen {

enum class NounTag { noun, propn };

struct TaggedNoun {
  std::string token;
  NounTag tag;
  std::size_t position;
};

// Lexicon lookup plus a capitalization rule for proper nouns.
class NounTagger {
 public:
  NounTagger() = default;
  explicit NounTagger(std::span<const std::string> lexicon, bool propn_rule = true) : propn_rule_(propn_rule) {
    for (const auto& w : lexicon) lexicon_.insert(lower(w));
  }

  static NounTagger from_lexicon_text(std::string_view text, bool propn_rule = true) {
    std::vector<std::string> words;
    for (auto& line : io::split(text, '\n')) {
      auto cols = io::split_ws(line);
      if (!cols.empty() && cols[0][0] != '#') words.push_back(cols[0]);
    }
    return NounTagger(words, propn_rule);
  }

  bool propn_rule() const { return propn_rule_; }
  std::size_t lexicon_size() const { return lexicon_.size(); }

  // `capitalized` may be empty (treated as all lowercase).
  std::vector<TaggedNoun> tag(std::span<const std::string> tokens, std::span<const std::uint8_t> capitalized = {}) const {
    std::vector<TaggedNoun> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] == kEosToken) continue;
      if (lexicon_.contains(lower(tokens[i]))) {
        out.push_back({tokens[i], NounTag::noun, i});
      } else if (propn_rule_ && i > 0 && i < capitalized.size() && capitalized[i]) {
        out.push_back({tokens[i], NounTag::propn, i});
      }
    }
    return out;
  }

 private:
  static std::string lower(std::string s) {
    for (auto& c : s)
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return s;
  }
  std::unordered_set<std::string> lexicon_;
  bool propn_rule_ = true;
};

inline std::vector<std::string> tag_nouns(std::span<const std::string> tokens, std::span<const std::uint8_t> capitalized,
                                          const NounTagger& tagger) {
  std::vector<std::string> out;
  for (auto& n : tagger.tag(tokens, capitalized)) out.push_back(n.token);
  return out;
}

// Per-noun weight; the default weights every noun equally.
using NounWeight = std::function<double(const TaggedNoun&)>;

struct SentenceScore {
  double score = 0.0;
  std::size_t n_nouns = 0;
};

// (1/N) sum_i m_i cos(noun_i, context) over nouns that have a vector in
// `space`. Returns nullopt when no noun qualifies.
template <class Scalar>
std::optional<SentenceScore> score_sentence(std::span<const std::string> tokens,
                                            std::span<const std::uint8_t> capitalized, std::string_view context_word,
                                            const BasicEmbeddingSpace<Scalar>& space, const NounTagger& tagger,
                                            const NounWeight& weight = {}) {
  const auto cid = space.find(context_word);
  if (!cid || !EmbeddingSpace::embeddable(*cid) || norm(space.vector(*cid)) == 0.0)
    throw error("context word '" + std::string(context_word) + "' has no vector in the scoring space");
  const auto c = space.vector(*cid);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& noun : tagger.tag(tokens, capitalized)) {
    auto id = space.find(noun.token);
    if (!id) {
      std::string low = noun.token;
      for (auto& ch : low)
        if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
      id = space.find(low);
    }
    if (!id || !EmbeddingSpace::embeddable(*id)) continue;
    const auto v = space.vector(*id);
    if (norm(v) == 0.0) continue;
    const double m = weight ? weight(noun) : 1.0;
    sum += m * cosine(v, c);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return SentenceScore{sum / static_cast<double>(n), n};
}

struct ContextScore {
  std::string context_word;
  std::optional<double> score;  // nullopt = skipped (no nouns)
  std::size_t n_nouns = 0;
  std::vector<std::string> tokens;
};

struct EvalReport {
  std::size_t epoch = 0;
  std::string model_label;
  std::string space_id;
  std::vector<ContextScore> entries;

  std::size_t skipped() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(),
                                                  [](const ContextScore& e) { return !e.score; }));
  }
  // Mean over non-skipped sentences; nullopt if all were skipped.
  std::optional<double> mean() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& e : entries)
      if (e.score) {
        s += *e.score;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
  }

  static std::string csv_header() { return "epoch,model_label,space_id,context_word,score,n_nouns,skipped\n"; }
  std::string csv_rows() const {
    std::string out;
    for (const auto& e : entries)
      out += std::to_string(epoch) + ',' + model_label + ',' + space_id + ',' + e.context_word + ',' +
             (e.score ? io::format_exact(*e.score) : std::string()) + ',' + std::to_string(e.n_nouns) + ',' +
             (e.score ? "0" : "1") + '\n';
    return out;
  }

  // Parses rows written by csv_rows (possibly for several epochs).
  static std::vector<EvalReport> from_csv(std::string_view text) {
    std::vector<EvalReport> out;
    auto lines = io::split(text, '\n');
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      auto cols = io::split(lines[i], ',');
      if (cols.size() != 7) throw format_error("report row " + std::to_string(i) + ": expected 7 columns");
      const auto epoch = io::parse_number<std::size_t>(cols[0], "epoch");
      if (out.empty() || out.back().epoch != epoch || out.back().model_label != cols[1])
        out.push_back(EvalReport{epoch, cols[1], cols[2], {}});
      ContextScore e;
      e.context_word = cols[3];
      if (cols[6] == "0") e.score = io::parse_number<double>(cols[4], "score");
      e.n_nouns = io::parse_number<std::size_t>(cols[5], "n_nouns");
      out.back().entries.push_back(std::move(e));
    }
    return out;
  }
};

struct EvalSetup {
  const Vocabulary* vocab = nullptr;
  const EmbeddingSpace* space = nullptr;
  std::string space_id;
  const NounTagger* tagger = nullptr;
  NounWeight weight;
};

// Generates (greedy unless the request says otherwise) and scores one
// sentence per context.
template <NextWordModel Model>
EvalReport evaluate_checkpoint(const Model& model, const GenerationRequest& request, const EvalSetup& setup,
                               std::string model_label, std::size_t epoch) {
  const auto gen = generate(model, request, setup.vocab->eos_id());
  EvalReport report{epoch, std::move(model_label), setup.space_id, {}};
  for (const auto& s : gen.sentences) {
    ContextScore cs;
    cs.context_word = s.context_word;
    for (auto id : s.tokens) cs.tokens.push_back(setup.vocab->decode(id));
    if (auto sc = score_sentence(cs.tokens, {}, s.context_word, *setup.space, *setup.tagger, setup.weight)) {
      cs.score = sc->score;
      cs.n_nouns = sc->n_nouns;
    }
    report.entries.push_back(std::move(cs));
  }
  return report;
}

class no_signal_error : public error {
 public:
  no_signal_error() : error("no report has a defined mean score") {}
};

// Epoch with the highest mean score; ties go to the earliest epoch.
inline std::size_t best_epoch(std::span<const EvalReport> reports) {
  std::optional<std::pair<double, std::size_t>> best;
  for (const auto& r : reports) {
    const auto m = r.mean();
    if (!m) continue;
    if (!best || *m > best->first || (*m == best->first && r.epoch < best->second)) best = {{*m, r.epoch}};
  }
  if (!best) throw no_signal_error();
  return best->second;
}

// epoch, mean_context, mean_base (blank where a curve has no value).
inline std::string curve_csv(std::span<const EvalReport> context_reports, std::span<const EvalReport> base_reports) {
  std::map<std::size_t, std::pair<std::optional<double>, std::optional<double>>> rows;
  for (const auto& r : context_reports) rows[r.epoch].first = r.mean();
  for (const auto& r : base_reports) rows[r.epoch].second = r.mean();
  std::string out = "epoch,mean_context,mean_base\n";
  for (const auto& [e, v] : rows)
    out += std::to_string(e) + ',' + (v.first ? io::format_exact(*v.first) : "") + ',' +
           (v.second ? io::format_exact(*v.second) : "") + '\n';
  return out;
}

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Minimal SVG line chart.
inline std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                                  std::span<const Series> series) {
  const double W = 640, H = 400, L = 60, R = 20, T = 40, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"};
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + title + "</text>\n";
  svg += "<line x1=\"" + io::format_exact(L) + "\" y1=\"" + io::format_exact(H - B) + "\" x2=\"" +
         io::format_exact(W - R) + "\" y2=\"" + io::format_exact(H - B) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + io::format_exact(L) + "\" y1=\"" + io::format_exact(T) + "\" x2=\"" + io::format_exact(L) +
         "\" y2=\"" + io::format_exact(H - B) + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"320\" y=\"390\" text-anchor=\"middle\" font-size=\"12\">" + x_label + "</text>\n";
  svg += "<text x=\"14\" y=\"200\" transform=\"rotate(-90 14 200)\" text-anchor=\"middle\" font-size=\"12\">" +
         y_label + "</text>\n";
  svg += "<text x=\"" + io::format_exact(L - 4) + "\" y=\"" + io::format_exact(H - B) +
         "\" text-anchor=\"end\" font-size=\"10\">" + io::format_exact(y0) + "</text>\n";
  svg += "<text x=\"" + io::format_exact(L - 4) + "\" y=\"" + io::format_exact(T + 4) +
         "\" text-anchor=\"end\" font-size=\"10\">" + io::format_exact(y1) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = colors[k % 4];
    std::string pts;
    for (auto [x, y] : series[k].points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      pts += io::format_exact(px(x)) + ',' + io::format_exact(py(y)) + ' ';
    }
    svg += std::string("<polyline fill=\"none\" stroke=\"") + color + "\" stroke-width=\"2\" points=\"" + pts +
           "\"/>\n";
    svg += std::string("<text x=\"") + io::format_exact(W - R - 120) + "\" y=\"" +
           io::format_exact(T + 16.0 * static_cast<double>(k + 1)) + "\" fill=\"" + color +
           "\" font-size=\"12\">" + series[k].name + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace ctxgen
