#include <gtest/gtest.h>

#include "ctxgen/corpus.hpp"
#include "support/synthetic.hpp"

using namespace ctxgen;

namespace {

std::vector<std::string> words(const TextSentence& s) { return s.tokens; }

Vocabulary vocab_of(std::initializer_list<std::string> regular) {
  std::vector<std::string> r(regular);
  return Vocabulary::from_ranked(r);
}

Sentence sentence(std::vector<token_id> ids, std::size_t index = 0, std::size_t paragraph = 0) {
  return Sentence{std::move(ids), index, paragraph};
}

}  // namespace

TEST(Preprocess, SplitsLowercasesAndStripsPunctuation) {
  const auto out = preprocess("Hello, World! This is fine? yes; \"quoted\" text.", {.min_len = 1});
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(words(out[0]), (std::vector<std::string>{"hello", "world", "."}));
  EXPECT_EQ(out[0].capitalized, (std::vector<std::uint8_t>{1, 1, 0}));
  EXPECT_EQ(words(out[1]), (std::vector<std::string>{"this", "is", "fine", "."}));
  EXPECT_EQ(words(out[2]), (std::vector<std::string>{"yes", "quoted", "text", "."}));
}

TEST(Preprocess, MinLengthCountsWordsBeforeTerminator) {
  const auto out = preprocess("one two three. one two three four.", {.min_len = 4});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].tokens.size(), 5u);
}

TEST(Preprocess, BlankLineEndsSentenceAndParagraph) {
  const auto out = preprocess("a b c\n\nd e f. g h i\nj k.", {.min_len = 1});
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].paragraph, 0u);
  EXPECT_EQ(out[1].paragraph, 1u);
  EXPECT_EQ(words(out[2]), (std::vector<std::string>{"g", "h", "i", "j", "k", "."}));
}

TEST(Preprocess, MaxSentencesCapsOutput) {
  const auto out = preprocess("a b. c d. e f. g h.", {.min_len = 1, .max_sentences = 2});
  EXPECT_EQ(out.size(), 2u);
}

TEST(Preprocess, KeepsNonAsciiLettersAndStripsUnicodePunctuation) {
  const auto out = preprocess("Café \xE2\x80\x94 na\xC3\xAFve word.", {.min_len = 1});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(words(out[0]), (std::vector<std::string>{"café", "naïve", "word", "."}));
}

TEST(Preprocess, RejectsInvalidUtf8AndControlCharacters) {
  EXPECT_THROW(preprocess("bad \xFF byte."), decoding_error);
  EXPECT_THROW(preprocess("bell \x07 here."), decoding_error);
}

TEST(Vocabulary, RanksByFrequencyThenLexicographic) {
  std::vector<std::vector<std::string>> s{{"b", "a", "c", "c", "."}, {"a", "b", "d", "."}};
  const auto v = build_vocabulary(std::span<const std::vector<std::string>>(s));
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<unk>", ".", "a", "b", "c", "d"}));
  EXPECT_EQ(v.frequency(1), 2u);
  EXPECT_EQ(v.frequency(4), 2u);
  EXPECT_EQ(v.frequency(5), 1u);
}

TEST(Vocabulary, MaxVocabFoldsTailIntoUnk) {
  std::vector<std::vector<std::string>> s{{"x", "x", "x", "y", "y", "z", "."}};
  const auto v = build_vocabulary(std::span<const std::vector<std::string>>(s), 1);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.encode("y"), v.unk_id());
  EXPECT_EQ(v.frequency(v.unk_id()), 3u);
}

TEST(Vocabulary, EncodeDecodeAndBounds) {
  const auto v = vocab_of({"cat", "dog"});
  EXPECT_EQ(v.encode("dog"), 3u);
  EXPECT_EQ(v.encode("emu"), 0u);
  EXPECT_FALSE(v.find("emu"));
  EXPECT_EQ(v.decode(2), "cat");
  EXPECT_THROW(v.decode(4), bounds_error);
  EXPECT_THROW(vocab_of({"cat", "cat"}), error);
  EXPECT_THROW(vocab_of({"."}), error);
}

TEST(Vocabulary, TsvRoundTrip) {
  std::vector<std::vector<std::string>> s{{"b", "a", "a", "."}};
  const auto v = build_vocabulary(std::span<const std::vector<std::string>>(s));
  const auto back = Vocabulary::from_tsv(v.to_tsv());
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.to_tsv(), v.to_tsv());
  EXPECT_THROW(Vocabulary::from_tsv("a\t0\t1\n"), format_error);
}

TEST(OneHot, SingleOneAtId) {
  const auto v = one_hot(3, 5);
  EXPECT_EQ(v, (std::vector<double>{0, 0, 0, 1, 0}));
  EXPECT_THROW(one_hot(5, 5), bounds_error);
}

TEST(ContextVector, BagOfWordsSortsAndDeduplicates) {
  const auto c = ContextVector::bag_of_words({4, 2, 4}, 6);
  EXPECT_EQ(c.active(), (std::vector<token_id>{2, 4}));
  EXPECT_EQ(c.weights(), (std::vector<double>{0, 0, 1, 0, 1, 0}));
  EXPECT_THROW(ContextVector::bag_of_words({}, 6), error);
  EXPECT_THROW(ContextVector::bag_of_words({6}, 6), bounds_error);
  EXPECT_TRUE(ContextVector::zero(6).active().empty());
}

TEST(MajorityOwner, TiesGoToLaterSentence) {
  std::vector<std::pair<std::size_t, std::size_t>> tie{{3, 2}, {4, 2}};
  EXPECT_EQ(majority_owner(tie), 4u);
  std::vector<std::pair<std::size_t, std::size_t>> clear{{3, 3}, {4, 1}};
  EXPECT_EQ(majority_owner(clear), 3u);
}

// Replays the sliding window by hand: every window of `w` tokens predicts
// the next token, and its context belongs to the sentence holding most of
// the window.
TEST(MakeInstances, MatchesHandReplay) {
  const auto v = vocab_of({"a", "b", "c", "d", "e"});
  std::vector<Sentence> s{sentence({2, 3, 4, 1}, 0), sentence({5, 6, 1}, 1)};
  auto ctx = [&](const Sentence& x) { return ContextVector::one_hot(x.token_ids.front(), v.size()); };
  const auto inst = make_instances(s, v, ctx, {.window = 3});
  const std::vector<token_id> stream{2, 3, 4, 1, 5, 6, 1};
  ASSERT_EQ(inst.size(), stream.size() - 3);
  const std::vector<std::size_t> owners{0, 0, 0, 1};
  for (std::size_t i = 0; i < inst.size(); ++i) {
    EXPECT_EQ(inst[i].input_ids, std::vector<token_id>(stream.begin() + i, stream.begin() + i + 3));
    EXPECT_EQ(inst[i].target_id, stream[i + 3]);
    EXPECT_EQ(inst[i].sentence_ref, owners[i]);
    EXPECT_EQ(inst[i].context.active().front(), s[owners[i]].token_ids.front());
  }
}

TEST(MakeInstances, ParagraphResetStartsFreshStream) {
  const auto v = vocab_of({"a", "b", "c"});
  std::vector<Sentence> s{sentence({2, 3, 1}, 0, 0), sentence({4, 2, 1}, 1, 1)};
  auto zero = [&](const Sentence&) { return ContextVector::zero(v.size()); };
  EXPECT_EQ(make_instances(s, v, zero, {.window = 2}).size(), 4u);
  EXPECT_EQ(make_instances(s, v, zero, {.window = 2, .reset_at_paragraph = true}).size(), 2u);
}

TEST(MakeInstances, ContextComputedOncePerSentence) {
  const auto v = vocab_of({"a", "b"});
  std::vector<Sentence> s{sentence({2, 3, 2, 3, 2, 1}, 0)};
  int calls = 0;
  auto ctx = [&](const Sentence&) {
    ++calls;
    return ContextVector::zero(v.size());
  };
  make_instances(s, v, ctx, {.window = 2});
  EXPECT_EQ(calls, 1);
}

TEST(Instances, BinaryRoundTrip) {
  const auto v = vocab_of({"a", "b", "c"});
  std::vector<Sentence> s{sentence({2, 3, 4, 1}), sentence({4, 3, 1}, 1)};
  auto ctx = [&](const Sentence& x) { return ContextVector::bag_of_words({x.token_ids[0], 3}, v.size()); };
  const auto inst = make_instances(s, v, ctx, {.window = 2});
  const auto bin = instances_to_binary(inst, v.size(), 2);
  const auto back = instances_from_binary(bin);
  EXPECT_EQ(back.vocab_size, v.size());
  EXPECT_EQ(back.window, 2u);
  EXPECT_EQ(back.instances, inst);
  EXPECT_EQ(instances_to_binary(back.instances, v.size(), 2), bin);
  EXPECT_THROW(instances_from_binary(bin.substr(0, bin.size() - 3)), format_error);
  EXPECT_THROW(instances_from_binary("NOTMAGIC"), format_error);
}
