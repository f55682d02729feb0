#include <random>
#include <set>

#include <gtest/gtest.h>

#include "ctxgen/cluster.hpp"
#include "support/oracles.hpp"

using namespace ctxgen;

namespace {

EmbeddingSpace random_space(std::size_t words, std::size_t dim, std::uint64_t seed) {
  std::vector<std::string> tokens{"<unk>", "."};
  for (std::size_t i = 0; i < words; ++i) tokens.push_back("w" + std::to_string(i));
  EmbeddingSpace s(tokens, dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (token_id id = 2; id < s.size(); ++id)
    for (auto& x : s.vector(id)) x = n(rng);
  return s;
}

// Two tight blobs around +c and -c along the first axis.
EmbeddingSpace two_blobs(std::size_t per_blob, std::uint64_t seed) {
  std::vector<std::string> tokens{"<unk>", "."};
  for (std::size_t i = 0; i < 2 * per_blob; ++i) tokens.push_back("p" + std::to_string(i));
  EmbeddingSpace s(tokens, 3);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 0.1f);
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    auto v = s.vector(static_cast<token_id>(2 + i));
    for (auto& x : v) x = n(rng);
    v[0] += i < per_blob ? 5.0f : -5.0f;
  }
  return s;
}

}  // namespace

TEST(KMeans, WcssNeverIncreases) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto m = kmeans(random_space(60, 4, seed), {.k = 5, .max_iters = 50, .seed = seed});
    const auto& h = m.wcss_history();
    ASSERT_FALSE(h.empty());
    for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LE(h[i], h[i - 1] * (1 + 1e-12)) << "seed " << seed;
  }
}

TEST(KMeans, TwoBlobsArePure) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto m = kmeans(two_blobs(20, seed), {.k = 2, .seed = seed});
    for (std::size_t j = 0; j < 2; ++j) {
      std::set<bool> sides;
      for (auto id : m.members(j)) sides.insert(id - 2 < 20);
      EXPECT_EQ(sides.size(), 1u) << "seed " << seed;
    }
  }
}

TEST(KMeans, MembersPartitionEmbeddableTokens) {
  const auto s = random_space(30, 3, 9);
  const auto m = kmeans(s, {.k = 4, .n_top = 3});
  std::multiset<token_id> all;
  for (std::size_t j = 0; j < m.k(); ++j) {
    EXPECT_FALSE(m.members(j).empty());
    EXPECT_LE(m.top_words(j).size(), 3u);
    all.insert(m.members(j).begin(), m.members(j).end());
  }
  EXPECT_EQ(all.size(), 30u);
  EXPECT_EQ(std::set<token_id>(all.begin(), all.end()).size(), 30u);
  EXPECT_EQ(all.count(0) + all.count(1), 0u);
}

TEST(KMeans, TopWordsRankedByCosineToCenter) {
  const auto s = random_space(40, 3, 4);
  const auto m = kmeans(s, {.k = 3, .n_top = 4});
  for (std::size_t j = 0; j < m.k(); ++j) {
    const std::vector<double> c(m.center(j).begin(), m.center(j).end());
    std::vector<std::pair<double, token_id>> ranked;
    for (auto id : m.members(j)) ranked.emplace_back(-oracle::cosine(s.vector_as_double(id), c), id);
    std::sort(ranked.begin(), ranked.end());
    for (std::size_t r = 0; r < m.top_words(j).size(); ++r) EXPECT_EQ(m.top_words(j)[r], ranked[r].second);
  }
}

TEST(KMeans, RejectsKLargerThanVocabulary) {
  EXPECT_THROW(kmeans(random_space(3, 2, 1), {.k = 4}), config_error);
}

TEST(KMeans, DeterministicAndTextRoundTrip) {
  const auto s = random_space(25, 3, 2);
  const auto a = kmeans(s, {.k = 3, .seed = 7});
  const auto b = kmeans(s, {.k = 3, .seed = 7});
  EXPECT_EQ(a.to_text(), b.to_text());
  const auto back = ClusterModel::from_text(a.to_text());
  EXPECT_EQ(back, a);
  EXPECT_EQ(back.space_checksum(), s.checksum());
  EXPECT_THROW(ClusterModel::from_text("clusters 1 2 3\n"), format_error);
}

TEST(NearestCenter, MatchesExhaustiveCosineArgmax) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_space(20, 4, 100 + trial);
    const auto m = kmeans(s, {.k = 4, .max_iters = 10, .seed = 1 + static_cast<std::uint64_t>(trial)});
    std::vector<double> v(4);
    for (auto& x : v) x = n(rng);
    std::size_t best = 0;
    double best_cos = -2;
    for (std::size_t j = 0; j < m.k(); ++j) {
      const double c = oracle::cosine(v, {m.center(j).begin(), m.center(j).end()});
      if (c > best_cos) {
        best_cos = c;
        best = j;
      }
    }
    EXPECT_EQ(m.nearest_center(std::span<const double>(v)), best);
    for (auto& x : v) x *= 7;
    EXPECT_EQ(m.nearest_center(std::span<const double>(v)), best);
  }
}

TEST(NearestCenter, SentenceContextIsTopWordsOfNearestCluster) {
  const auto s = two_blobs(5, 1);
  const auto m = kmeans(s, {.k = 2, .n_top = 2});
  std::vector<std::string> regular;
  for (token_id i = 2; i < s.size(); ++i) regular.push_back("p" + std::to_string(i - 2));
  const auto vocab = Vocabulary::from_ranked(regular);
  const Sentence sent{{2, 3, 1}, 0, 0};
  const auto j = m.nearest_center(sent, s);
  EXPECT_EQ(m.context_of(sent, s, vocab), ContextVector::bag_of_words(m.top_words(j), vocab.size()));
  const auto& mem = m.members(j);
  EXPECT_NE(std::find(mem.begin(), mem.end(), 2u), mem.end());
}
