#include <random>

#include <gtest/gtest.h>

#include "ctxgen/tfidf.hpp"
#include "support/oracles.hpp"

using namespace ctxgen;

namespace {

Vocabulary numbered_vocab(std::size_t regular) {
  std::vector<std::string> r;
  for (std::size_t i = 0; i < regular; ++i) r.push_back("w" + std::to_string(i));
  return Vocabulary::from_ranked(r);
}

}  // namespace

TEST(Tfidf, SmoothIdfValues) {
  const auto v = numbered_vocab(3);
  std::vector<Sentence> s{{{2, 3, 1}, 0, 0}, {{2, 4, 1}, 1, 0}, {{2, 1}, 2, 0}};
  const auto m = TfidfModel::fit(s, v);
  EXPECT_EQ(m.df(2), 3u);
  EXPECT_EQ(m.df(3), 1u);
  EXPECT_NEAR(m.idf(2), 1.0, 1e-15);
  EXPECT_NEAR(m.idf(3), std::log(4.0 / 2.0) + 1.0, 1e-15);
  EXPECT_EQ(m.top_word(s[0]), 3u);
}

TEST(Tfidf, PlainIdfVariant) {
  const auto v = numbered_vocab(2);
  std::vector<Sentence> s{{{2, 3, 1}, 0, 0}, {{2, 1}, 1, 0}};
  const auto m = TfidfModel::fit(s, v, IdfVariant::plain);
  EXPECT_DOUBLE_EQ(m.idf(2), 0.0);
  EXPECT_DOUBLE_EQ(m.idf(3), std::log(2.0));
}

TEST(Tfidf, RepeatedWordBeatsRarerSingleton) {
  const auto v = numbered_vocab(3);
  // w0 appears twice here and in one other doc; w1 is unique to this doc.
  std::vector<Sentence> s{{{2, 2, 3, 1}, 0, 0}, {{2, 4, 1}, 1, 0}, {{4, 1}, 2, 0}};
  const auto m = TfidfModel::fit(s, v);
  const double s0 = 2 * (std::log(4.0 / 3.0) + 1);
  const double s1 = 1 * (std::log(4.0 / 2.0) + 1);
  ASSERT_GT(s0, s1);
  EXPECT_EQ(m.top_word(s[0]), 2u);
}

TEST(Tfidf, TiesGoToFirstOccurrence) {
  const auto v = numbered_vocab(3);
  std::vector<Sentence> s{{{4, 3, 2, 1}, 0, 0}};
  EXPECT_EQ(TfidfModel::fit(s, v).top_word(s[0]), 4u);
}

TEST(Tfidf, TerminatorOnlySentenceIsDegenerate) {
  const auto v = numbered_vocab(1);
  std::vector<Sentence> s{{{1}, 0, 0}, {{2, 1}, 1, 0}};
  const auto m = TfidfModel::fit(s, v);
  EXPECT_THROW(m.top_word(s[0]), degenerate_sentence);
  EXPECT_EQ(m.context_of(s[1], v), ContextVector::one_hot(2, v.size()));
}

TEST(Tfidf, MatchesBruteForceOnRandomCorpora) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t V = 3 + rng() % 28;
    const auto v = numbered_vocab(V - 2);
    std::vector<Sentence> s;
    std::vector<std::vector<token_id>> docs;
    const std::size_t n = 1 + rng() % 50;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<token_id> ids;
      const std::size_t len = 1 + rng() % 8;
      for (std::size_t k = 0; k < len; ++k) ids.push_back(static_cast<token_id>(2 + rng() % (V - 2)));
      ids.push_back(1);
      docs.push_back(ids);
      s.push_back({ids, i, 0});
    }
    const auto m = TfidfModel::fit(s, v);
    for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(m.top_word(s[i]), oracle::tfidf_top(docs, i, 1)) << trial;
  }
}

TEST(Tfidf, DumpHasOneRowPerSentence) {
  const auto v = numbered_vocab(2);
  std::vector<Sentence> s{{{2, 3, 1}, 0, 0}, {{3, 1}, 1, 0}};
  const auto dump = tfidf_dump_tsv(s, TfidfModel::fit(s, v), v);
  EXPECT_EQ(std::count(dump.begin(), dump.end(), '\n'), 3);
  EXPECT_NE(dump.find("0\tw0\t"), std::string::npos);
}
