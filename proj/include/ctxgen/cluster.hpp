#pragma once

// Word-clustering context: k-means over an embedding space, nearest-center
// lookup for accumulated sentence vectors, and bag-of-words contexts built
// from each center's closest member words.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctxgen/embedding.hpp"

namespace ctxgen {

enum class TopWordRanking { cosine, euclidean };

struct KMeansOptions {
  std::size_t k = 100;
  std::size_t max_iters = 100;
  // Stop once no center moves farther than this (Euclidean).
  double tol = 1e-6;
  std::uint64_t seed = 1;
  std::size_t n_top = 5;
  // Normalize vectors to unit length before clustering.
  bool spherical = false;
  TopWordRanking ranking = TopWordRanking::cosine;
};

class ClusterModel {
 public:
  std::size_t k() const { return centers_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t n_top() const { return n_top_; }
  const std::string& space_checksum() const { return space_checksum_; }

  std::span<const double> center(std::size_t j) const { return centers_.at(j); }
  const std::vector<token_id>& members(std::size_t j) const { return members_.at(j); }
  const std::vector<token_id>& top_words(std::size_t j) const { return top_words_.at(j); }
  // Within-cluster sum of squares after each Lloyd iteration.
  const std::vector<double>& wcss_history() const { return wcss_history_; }
  std::size_t iterations() const { return wcss_history_.size(); }

  // Index of the center with the highest cosine to `v`; ties go to the lowest index.
  std::size_t nearest_center(std::span<const double> v) const {
    std::size_t best = 0;
    double best_cos = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centers_.size(); ++j) {
      const double c = cosine(v, std::span<const double>(centers_[j]));
      if (c > best_cos) {
        best_cos = c;
        best = j;
      }
    }
    return best;
  }

  std::size_t nearest_center(const Sentence& sentence, const EmbeddingSpace& space) const {
    const auto v = accumulate(sentence, space);
    return nearest_center(std::span<const double>(v));
  }

  ContextVector context_of(const Sentence& sentence, const EmbeddingSpace& space, const Vocabulary& vocab) const {
    return ContextVector::bag_of_words(top_words_.at(nearest_center(sentence, space)), vocab.size());
  }

  std::string to_text() const {
    std::string out = "clusters " + std::to_string(k()) + ' ' + std::to_string(dim_) + ' ' +
                      std::to_string(n_top_) + ' ' + space_checksum_ + '\n';
    auto ids = [](const std::vector<token_id>& v) {
      std::string s = std::to_string(v.size());
      for (auto id : v) s += ' ' + std::to_string(id);
      return s;
    };
    for (std::size_t j = 0; j < k(); ++j) {
      out += "center";
      for (double x : centers_[j]) out += ' ' + io::format_exact(x);
      out += "\nmembers " + ids(members_[j]) + "\ntop " + ids(top_words_[j]) + '\n';
    }
    out += "wcss";
    for (double w : wcss_history_) out += ' ' + io::format_exact(w);
    out += '\n';
    return out;
  }

  static ClusterModel from_text(std::string_view text) {
    auto lines = io::split(text, '\n');
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) throw format_error("empty cluster file");
    auto head = io::split_ws(lines[0]);
    if (head.size() != 5 || head[0] != "clusters") throw format_error("bad cluster file header");
    ClusterModel m;
    const auto k = io::parse_number<std::size_t>(head[1], "k");
    m.dim_ = io::parse_number<std::size_t>(head[2], "d");
    m.n_top_ = io::parse_number<std::size_t>(head[3], "n_top");
    m.space_checksum_ = head[4];
    if (lines.size() != 3 * k + 2) throw format_error("cluster file row count mismatch");
    auto read_ids = [](const std::vector<std::string>& cols, const char* tag) {
      if (cols.size() < 2 || cols[0] != tag) throw format_error(std::string("expected '") + tag + "' row");
      const auto n = io::parse_number<std::size_t>(cols[1], "count");
      if (cols.size() != n + 2) throw format_error("id row length mismatch");
      std::vector<token_id> v;
      for (std::size_t i = 0; i < n; ++i) v.push_back(io::parse_number<token_id>(cols[i + 2], "token id"));
      return v;
    };
    for (std::size_t j = 0; j < k; ++j) {
      auto c = io::split_ws(lines[1 + 3 * j]);
      if (c.size() != m.dim_ + 1 || c[0] != "center") throw format_error("bad center row");
      std::vector<double> center;
      for (std::size_t i = 1; i < c.size(); ++i) center.push_back(io::parse_number<double>(c[i], "center value"));
      m.centers_.push_back(std::move(center));
      m.members_.push_back(read_ids(io::split_ws(lines[2 + 3 * j]), "members"));
      m.top_words_.push_back(read_ids(io::split_ws(lines[3 + 3 * j]), "top"));
    }
    auto w = io::split_ws(lines.back());
    if (w.empty() || w[0] != "wcss") throw format_error("missing wcss row");
    for (std::size_t i = 1; i < w.size(); ++i) m.wcss_history_.push_back(io::parse_number<double>(w[i], "wcss"));
    return m;
  }

  friend bool operator==(const ClusterModel&, const ClusterModel&) = default;

 private:
  friend ClusterModel kmeans(const EmbeddingSpace&, const KMeansOptions&);

  std::size_t dim_ = 0;
  std::size_t n_top_ = 0;
  std::string space_checksum_;
  std::vector<std::vector<double>> centers_;
  std::vector<std::vector<token_id>> members_;
  std::vector<std::vector<token_id>> top_words_;
  std::vector<double> wcss_history_;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding over the embeddable tokens of
// `space`. Empty clusters are re-seeded with the point farthest from its
// current center.
inline ClusterModel kmeans(const EmbeddingSpace& space, const KMeansOptions& opts = {}) {
  std::vector<token_id> ids;
  for (token_id i = 0; i < space.size(); ++i)
    if (EmbeddingSpace::embeddable(i)) ids.push_back(i);
  const std::size_t n = ids.size();
  const std::size_t d = space.dim();
  if (opts.k == 0) throw config_error("cluster.k", "must be >= 1");
  if (n < opts.k)
    throw config_error("cluster.k", "k=" + std::to_string(opts.k) + " exceeds the " + std::to_string(n) +
                                        " embeddable tokens");

  std::vector<std::vector<double>> points(n, std::vector<double>(d));
  for (std::size_t p = 0; p < n; ++p) {
    auto v = space.vector(ids[p]);
    std::copy(v.begin(), v.end(), points[p].begin());
    if (opts.spherical) {
      const double len = norm(std::span<const double>(points[p]));
      if (len > 0)
        for (auto& x : points[p]) x /= len;
    }
  }
  auto pt = [&](std::size_t p) { return std::span<const double>(points[p]); };

  // k-means++ seeding.
  std::mt19937_64 rng(opts.seed);
  std::vector<std::vector<double>> centers;
  centers.push_back(points[rng() % n]);
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  while (centers.size() < opts.k) {
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      dist2[p] = std::min(dist2[p], detail::squared_distance(pt(p), centers.back()));
      total += dist2[p];
    }
    std::size_t pick = 0;
    if (total > 0) {
      const double u = detail::unit_draw(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t p = 0; p < n; ++p) {
        acc += dist2[p];
        if (acc > u && dist2[p] > 0) {
          pick = p;
          break;
        }
      }
    } else {
      pick = rng() % n;
    }
    centers.push_back(points[pick]);
  }

  const std::size_t k = opts.k;
  std::vector<std::size_t> assign(n, 0);
  std::vector<double> history;
  auto assign_all = [&] {
    for (std::size_t p = 0; p < n; ++p) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const double dd = detail::squared_distance(pt(p), centers[j]);
        if (dd < best_d) {
          best_d = dd;
          best = j;
        }
      }
      assign[p] = best;
    }
  };

  for (std::size_t iter = 0; iter < std::max<std::size_t>(1, opts.max_iters); ++iter) {
    assign_all();
    std::vector<std::size_t> count(k, 0);
    for (auto a : assign) ++count[a];
    std::vector<bool> taken(n, false);
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t p = 0; p < n; ++p) {
        if (taken[p] || count[assign[p]] <= 1) continue;
        const double dd = detail::squared_distance(pt(p), centers[assign[p]]);
        if (dd > far_d) {
          far_d = dd;
          far = p;
        }
      }
      if (far == n) throw error("k-means: cannot re-seed empty cluster");
      --count[assign[far]];
      assign[far] = j;
      count[j] = 1;
      taken[far] = true;
      centers[j] = points[far];
    }
    std::vector<std::vector<double>> next(k, std::vector<double>(d, 0.0));
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t i = 0; i < d; ++i) next[assign[p]][i] += points[p][i];
    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      for (auto& x : next[j]) x /= static_cast<double>(count[j]);
      shift = std::max(shift, std::sqrt(detail::squared_distance(next[j], centers[j])));
    }
    centers = std::move(next);
    double wcss = 0.0;
    for (std::size_t p = 0; p < n; ++p) wcss += detail::squared_distance(pt(p), centers[assign[p]]);
    history.push_back(wcss);
    if (shift < opts.tol) break;
  }

  ClusterModel m;
  m.dim_ = d;
  m.n_top_ = opts.n_top;
  m.space_checksum_ = space.checksum();
  m.centers_ = centers;
  m.members_.assign(k, {});
  for (std::size_t p = 0; p < n; ++p) m.members_[assign[p]].push_back(ids[p]);
  m.wcss_history_ = std::move(history);
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<std::pair<double, token_id>> ranked;
    for (auto id : m.members_[j]) {
      auto raw = space.vector(id);
      std::vector<double> v(raw.begin(), raw.end());
      double key = 0.0;
      if (opts.ranking == TopWordRanking::cosine) {
        const double nv = norm(std::span<const double>(v));
        const double nc = norm(std::span<const double>(centers[j]));
        key = (nv > 0 && nc > 0) ? -cosine(std::span<const double>(v), std::span<const double>(centers[j])) : 1.0;
      } else {
        if (opts.spherical) {
          const double len = norm(std::span<const double>(v));
          if (len > 0)
            for (auto& x : v) x /= len;
        }
        key = detail::squared_distance(v, centers[j]);
      }
      ranked.emplace_back(key, id);
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<token_id> top;
    for (std::size_t r = 0; r < std::min(opts.n_top, ranked.size()); ++r) top.push_back(ranked[r].second);
    m.top_words_.push_back(std::move(top));
  }
  return m;
}

}  // namespace ctxgen
