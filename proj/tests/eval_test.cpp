#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ctxgen/eval.hpp"
#include "support/experiment.hpp"
#include "support/synthetic.hpp"

using namespace ctxgen;

namespace {

// Context "ctx" along x; "near" at cosine 0.6 and "far" at cosine 0.2.
BasicEmbeddingSpace<double> plane() {
  BasicEmbeddingSpace<double> s({"<unk>", ".", "ctx", "near", "far", "verb"}, 2);
  auto set = [&](token_id id, double x, double y) {
    s.vector(id)[0] = x;
    s.vector(id)[1] = y;
  };
  set(2, 1.0, 0.0);
  set(3, 0.6, 0.8);
  set(4, 0.2, std::sqrt(1.0 - 0.04));
  set(5, 0.0, 1.0);
  return s;
}

std::vector<std::string> toks(std::initializer_list<const char*> w) { return {w.begin(), w.end()}; }

EvalReport report(std::size_t epoch, std::vector<std::optional<double>> scores) {
  EvalReport r{epoch, "m", "domain", {}};
  for (auto s : scores) r.entries.push_back({"w", s, s ? 1u : 0u, {}});
  return r;
}

}  // namespace

TEST(Tagger, LexiconAndProperNounRule) {
  const auto tagger = NounTagger::from_lexicon_text("near\n# comment\nfar extra\n");
  const auto t = toks({"Mara", "saw", "Near", "Oslo", "far", "."});
  const std::vector<std::uint8_t> caps{1, 0, 1, 1, 0, 0};
  const auto tags = tagger.tag(t, caps);
  ASSERT_EQ(tags.size(), 3u);
  EXPECT_EQ(tags[0].token, "Near");
  EXPECT_EQ(tags[1].tag, NounTag::propn);
  EXPECT_EQ(tags[2].position, 4u);
  EXPECT_EQ(NounTagger(std::vector<std::string>{"near"}, false).tag(t, caps).size(), 1u);
}

TEST(ScoreSentence, ConstructedPlaneGivesPointFour) {
  const auto s = plane();
  const NounTagger tagger(toks({"near", "far"}));
  const auto sc = score_sentence(toks({"near", "verb", "far", "."}), {}, "ctx", s, tagger);
  ASSERT_TRUE(sc);
  EXPECT_NEAR(sc->score, 0.4, 1e-12);
  EXPECT_EQ(sc->n_nouns, 2u);
}

TEST(ScoreSentence, WeightsScaleEachNoun) {
  const auto s = plane();
  const NounTagger tagger(toks({"near", "far"}));
  NounWeight w = [](const TaggedNoun& n) { return n.token == "near" ? 2.0 : 0.0; };
  EXPECT_NEAR(score_sentence(toks({"near", "far"}), {}, "ctx", s, tagger, w)->score, 0.6, 1e-12);
}

TEST(ScoreSentence, NoNounsIsSkippedAndUnknownContextThrows) {
  const auto s = plane();
  const NounTagger tagger(toks({"near"}));
  EXPECT_FALSE(score_sentence(toks({"verb", "."}), {}, "ctx", s, tagger));
  EXPECT_FALSE(score_sentence(toks({"ghost"}), {}, "ctx", s, NounTagger(toks({"ghost"}))));
  EXPECT_THROW(score_sentence(toks({"near"}), {}, "nothing", s, tagger), error);
}

TEST(ScoreSentence, AlwaysWithinUnitInterval) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0, 1);
  std::vector<std::string> words{"<unk>", "."};
  for (int i = 0; i < 12; ++i) words.push_back("w" + std::to_string(i));
  const NounTagger tagger(std::vector<std::string>(words.begin() + 2, words.end()));
  for (int trial = 0; trial < 300; ++trial) {
    EmbeddingSpace s(words, 3);
    for (token_id id = 2; id < s.size(); ++id)
      for (auto& x : s.vector(id)) x = n(rng);
    std::vector<std::string> sent;
    for (int k = 0; k < 1 + static_cast<int>(rng() % 8); ++k) sent.push_back(words[2 + rng() % 12]);
    const auto sc = score_sentence(sent, {}, words[2 + rng() % 12], s, tagger);
    ASSERT_TRUE(sc);
    EXPECT_GE(sc->score, -1.0);
    EXPECT_LE(sc->score, 1.0);
  }
}

TEST(ScoreSentence, InvariantUnderPositiveRescaling) {
  const auto s = plane();
  const NounTagger tagger(toks({"near", "far"}));
  const auto a = score_sentence(toks({"near", "far"}), {}, "ctx", s, tagger)->score;
  const auto b = score_sentence(toks({"near", "far"}), {}, "ctx", s.scaled(7.5), tagger)->score;
  EXPECT_NEAR(a, b, 1e-15);
}

TEST(EvalReport, MeanSkipsUnscoredAndCsvRoundTrips) {
  const auto r = report(3, {0.5, std::nullopt, 0.25});
  EXPECT_EQ(r.skipped(), 1u);
  EXPECT_DOUBLE_EQ(*r.mean(), 0.375);
  EXPECT_FALSE(report(3, {std::nullopt}).mean());
  const auto csv = EvalReport::csv_header() + r.csv_rows() + report(6, {0.1}).csv_rows();
  const auto back = EvalReport::from_csv(csv);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].entries.size(), 3u);
  EXPECT_FALSE(back[0].entries[1].score);
  EXPECT_EQ(back[1].epoch, 6u);
  EXPECT_EQ(EvalReport::csv_header() + back[0].csv_rows() + back[1].csv_rows(), csv);
}

TEST(BestEpoch, ArgmaxWithEarliestTie) {
  std::vector<EvalReport> rs{report(3, {0.2}), report(6, {0.5}), report(9, {0.5}), report(12, {std::nullopt})};
  EXPECT_EQ(best_epoch(rs), 6u);
  std::vector<EvalReport> none{report(3, {std::nullopt})};
  EXPECT_THROW(best_epoch(none), no_signal_error);
}

TEST(Curves, CsvAlignsEpochsAndSvgHasSeries) {
  std::vector<EvalReport> ctx{report(3, {0.5}), report(6, {0.75})};
  std::vector<EvalReport> base{report(3, {0.25})};
  EXPECT_EQ(curve_csv(ctx, base), "epoch,mean_context,mean_base\n3,0.5,0.25\n6,0.75,\n");
  const std::vector<Series> series{{"ctx", {{3, 0.5}, {6, 0.75}}}, {"base", {{3, 0.25}}}};
  const auto svg = line_chart_svg("t", "x", "y", series);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  EXPECT_NE(svg.find(">base<"), std::string::npos);
}

TEST(EvaluateCheckpoint, ScoresEachGeneratedSentence) {
  const auto s = EmbeddingSpace::from_text(plane().to_text());
  std::vector<std::string> regular{"ctx", "near", "far", "verb"};
  const auto vocab = Vocabulary::from_ranked(regular);
  const NounTagger tagger(toks({"near", "far"}));
  const synth::ConstantModel model{3, 2, vocab.size()};  // always "near", never eos
  GenerationRequest req;
  req.seeds = {5, 5};
  req.context_words = {"ctx"};
  req.contexts = {ContextVector::one_hot(2, vocab.size())};
  req.max_sentence_len = 4;
  const EvalSetup setup{&vocab, &s, "plane", &tagger, {}};
  const auto r = evaluate_checkpoint(model, req, setup, "stub", 3);
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_NEAR(*r.entries[0].score, 0.6, 1e-7);
  EXPECT_EQ(r.entries[0].n_nouns, 4u);
}

// Sentences open with shared function words, so by the time a topic word is
// due the window belongs to the new sentence and only its context names the
// topic. Here the context model should win clearly.
TEST(ContextAdvantage, ContextDecidesTopicAfterNeutralOpening) {
  const synth::ComparisonSetup setup{"alpha1 alpha2 alpha3 . fn0 fn1 fn2 fn3",
                                     {"alpha0", "beta0", "alpha5", "beta5", "alpha9", "beta9"}};
  const auto r = synth::compare_context_to_base(synth::framed_topic_corpus(600, 30, 1), setup, 1);
  EXPECT_GT(r.context, 0.9);
  EXPECT_GT(r.context, r.base + 0.05);
}
