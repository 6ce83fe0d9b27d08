#include <gtest/gtest.h>

#include <random>

#include "support.hpp"
#include "vidseq/codec.hpp"
#include "vidseq/error.hpp"

using namespace vidseq;

namespace {

Vocabulary vocab() {
  const std::vector<std::string> corpus{"a red circle moves left", "what color is the square", "blue"};
  return Vocabulary::build(corpus, 300, 1000);
}

TaskSample meta_only(TaskKind kind, double duration, int w, int h) {
  TaskSample s;
  s.id = "x";
  s.kind = kind;
  s.clip.duration = duration;
  s.clip.width = w;
  s.clip.height = h;
  return s;
}

}  // namespace

TEST(Codec, TextTargetIsWordsThenEos) {
  const auto v = vocab();
  auto s = meta_only(TaskKind::CC, 2.0, 64, 64);
  s.target = TextTarget{{"a", "red", "circle"}};
  const auto seq = encode_target(s, v, ClipMeta::of(s.clip));
  ASSERT_EQ(seq.ids.size(), 4u);
  EXPECT_EQ(v.token(seq.ids[0]), "a");
  EXPECT_EQ(v.token(seq.ids[2]), "circle");
  EXPECT_EQ(seq.ids.back(), Vocabulary::kEos);
}

TEST(Codec, DenseEventTripletLayout) {
  const auto v = vocab();
  auto s = meta_only(TaskKind::DVP, 30.0, 64, 64);
  // given out of order; encoded by start time
  s.target = EventSet{{{12.0, 6.0}, {"blue", "square"}}, {{0.0, 3.0}, {"red", "circle"}}};
  const auto seq = encode_target(s, v, ClipMeta::of(s.clip));
  ASSERT_EQ(seq.ids.size(), 9u);
  EXPECT_EQ(v.time_bin(seq.ids[0]), 0);
  EXPECT_EQ(v.time_bin(seq.ids[1]), 30);   // floor(3 / 30 * 300)
  EXPECT_EQ(v.token(seq.ids[2]), "red");
  EXPECT_EQ(v.time_bin(seq.ids[4]), 120);
  EXPECT_EQ(v.time_bin(seq.ids[5]), 60);
  EXPECT_EQ(seq.ids[8], Vocabulary::kEos);
}

TEST(Codec, BoxTargetUsesLastTrajectoryBox) {
  const auto v = vocab();
  auto s = meta_only(TaskKind::VOT, 1.0, 100, 50);
  s.prompt_box = BoundingBox{0, 0, 10, 10};
  s.target = Trajectory{{0, 0, 10, 10}, {10, 5, 60, 25}};
  const auto seq = encode_target(s, v, ClipMeta::of(s.clip));
  ASSERT_EQ(seq.ids.size(), 5u);
  EXPECT_EQ(v.box_bin(seq.ids[0]), 100);
  EXPECT_EQ(v.box_bin(seq.ids[1]), 100);
  EXPECT_EQ(v.box_bin(seq.ids[2]), 600);
  EXPECT_EQ(v.box_bin(seq.ids[3]), 500);
}

TEST(Codec, PromptLayout) {
  const auto v = vocab();
  auto s = meta_only(TaskKind::ViQA, 1.0, 64, 64);
  s.prompt_sentence = std::vector<std::string>{"what", "color"};
  s.target = TextTarget{{"red"}};
  const auto p = encode_prompt(s, v, ClipMeta::of(s.clip));
  EXPECT_EQ(p.task, v.task_token(TaskKind::ViQA));
  EXPECT_EQ(p.sentence.size(), 2u);
  EXPECT_TRUE(p.box.empty());
  EXPECT_EQ(p.flatten().size(), 3u);
}

TEST(Codec, MismatchedPromptRejected) {
  const auto v = vocab();
  auto s = meta_only(TaskKind::AR, 1.0, 64, 64);
  s.prompt_box = BoundingBox{0, 0, 1, 1};
  s.target = TextTarget{{"red"}};
  EXPECT_THROW(encode_target(s, v, ClipMeta::of(s.clip)), InputError);
}

TEST(Codec, EventOutsideDurationIsDomainError) {
  const auto v = vocab();
  auto s = meta_only(TaskKind::DVP, 10.0, 64, 64);
  s.target = EventSet{{{8.0, 5.0}, {"red"}}};
  EXPECT_THROW(encode_target(s, v, ClipMeta::of(s.clip)), DomainError);
}

TEST(Codec, ParseRejectsMalformedSequences) {
  const auto v = vocab();
  const ClipMeta m{10.0, 64, 64};
  const TokenId w = v.word_id("red"), t = v.time_token(3), b = v.box_token(7);
  const auto E = Vocabulary::kEos;
  EXPECT_THROW(parse_output({{w, w}, TaskKind::AR}, v, m), ParseError);          // no EOS
  EXPECT_THROW(parse_output({{w, E, w}, TaskKind::AR}, v, m), ParseError);       // after EOS
  EXPECT_THROW(parse_output({{t, E}, TaskKind::AR}, v, m), ParseError);          // time in text
  EXPECT_THROW(parse_output({{t, E}, TaskKind::DVP}, v, m), ParseError);         // half a span
  EXPECT_THROW(parse_output({{t, t, E}, TaskKind::DVP}, v, m), ParseError);      // no caption
  EXPECT_THROW(parse_output({{w, t, t, E}, TaskKind::DVP}, v, m), ParseError);   // word first
  EXPECT_THROW(parse_output({{b, b, b, E}, TaskKind::VOT}, v, m), ParseError);   // 3 coords
  EXPECT_THROW(parse_output({{b, b, b, b, b, E}, TaskKind::VOT}, v, m), ParseError);
  try {
    parse_output({{b, b, w, b, E}, TaskKind::VOT}, v, m);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 2u);
  }
}

TEST(Codec, EmptyTextIsFlagged) {
  const auto v = vocab();
  const auto p = parse_output({{Vocabulary::kEos}, TaskKind::CC}, v, {1, 64, 64});
  EXPECT_TRUE(p.empty);
  EXPECT_TRUE(std::get<TextTarget>(p.value).words.empty());
}

TEST(Codec, SwappedCornersAreRestoredAndFlagged) {
  const auto v = vocab();
  const std::vector<TokenId> ids{v.box_token(500), v.box_token(100), v.box_token(200), v.box_token(300),
                                 Vocabulary::kEos};
  const auto p = parse_output({ids, TaskKind::VOT}, v, {1, 1000, 1000});
  EXPECT_TRUE(p.swapped);
  const auto& box = std::get<Trajectory>(p.value).front();
  EXPECT_DOUBLE_EQ(box.x1, 200.5);
  EXPECT_DOUBLE_EQ(box.x2, 500.5);
}

TEST(Codec, OverlongSpanIsClipped) {
  const auto v = vocab();
  const std::vector<TokenId> ids{v.time_token(290), v.time_token(50), v.word_id("red"), Vocabulary::kEos};
  const auto p = parse_output({ids, TaskKind::DVP}, v, {30.0, 64, 64});
  EXPECT_TRUE(p.clipped);
  const auto& e = std::get<EventSet>(p.value).front();
  EXPECT_NEAR(e.span.end(), 30.0, 1e-12);
}

TEST(Codec, TruncateKeepsCompleteEvents) {
  const auto v = vocab();
  const TokenId w = v.word_id("red"), t = v.time_token(3);
  const std::vector<TokenId> partial{t, t, w, w, t, t};
  const auto fixed = truncate_to_complete(partial, TaskKind::DVP, v);
  EXPECT_EQ(fixed, (std::vector<TokenId>{t, t, w, w, Vocabulary::kEos}));
  EXPECT_NO_THROW(parse_output({fixed, TaskKind::DVP}, v, {10, 64, 64}));
}

class RoundTrip : public ::testing::TestWithParam<TaskKind> {};

TEST_P(RoundTrip, ParseInvertsEncode) {
  const auto v = vocab();
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()) + 100);
  for (int i = 0; i < 300; ++i) {
    const auto s = vidseq::testing::random_sample(GetParam(), v, rng);
    const ClipMeta m = ClipMeta::of(s.clip);
    const auto p = parse_output(encode_target(s, v, m), v, m);
    std::string why;
    ASSERT_TRUE(vidseq::testing::round_trip_matches(s, p, v, &why)) << why << " at sample " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(Tasks, RoundTrip, ::testing::ValuesIn(kAllTasks),
                         [](const ::testing::TestParamInfo<TaskKind>& info) {
                           return std::string(task_name(info.param));
                         });

class Grammar : public ::testing::TestWithParam<TaskKind> {};

// Every encoded target is accepted token by token and ends finished.
TEST_P(Grammar, AcceptsEncodedTargets) {
  const auto v = vocab();
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()) + 7);
  for (int i = 0; i < 200; ++i) {
    const auto s = vidseq::testing::random_sample(GetParam(), v, rng);
    const auto seq = encode_target(s, v, ClipMeta::of(s.clip));
    GrammarState g(GetParam());
    for (TokenId t : seq.ids) ASSERT_NO_THROW(g.advance(t, v));
    EXPECT_TRUE(g.finished());
  }
}

// Random walks through the mask always yield parseable sequences.
TEST_P(Grammar, MaskedWalksParse) {
  const auto v = vocab();
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()) + 17);
  for (int i = 0; i < 200; ++i) {
    GrammarState g(GetParam());
    std::vector<TokenId> ids;
    while (!g.finished() && ids.size() < 40) {
      const auto mask = allowed_next(g, v);
      std::vector<TokenId> options;
      for (TokenId t = 0; t < v.size(); ++t)
        if (mask[static_cast<std::size_t>(t)]) options.push_back(t);
      ASSERT_FALSE(options.empty());
      // favour EOS so walks terminate
      TokenId pick = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
      if (mask[Vocabulary::kEos] && std::uniform_real_distribution<double>(0, 1)(rng) < 0.3) pick = Vocabulary::kEos;
      g.advance(pick, v);
      ids.push_back(pick);
    }
    if (!g.finished()) ids = truncate_to_complete(ids, GetParam(), v);
    EXPECT_NO_THROW(parse_output({ids, GetParam()}, v, {10, 64, 64}));
  }
}

TEST_P(Grammar, SpecialTokensNeverAllowed) {
  const auto v = vocab();
  GrammarState g(GetParam());
  const auto mask = allowed_next(g, v);
  for (TokenId t = 0; t < v.word_begin(); ++t) {
    if (t != Vocabulary::kEos) EXPECT_EQ(mask[static_cast<std::size_t>(t)], 0) << t;
  }
}

INSTANTIATE_TEST_SUITE_P(Tasks, Grammar, ::testing::ValuesIn(kAllTasks),
                         [](const ::testing::TestParamInfo<TaskKind>& info) {
                           return std::string(task_name(info.param));
                         });

TEST(Grammar, VotNeedsExactlyFourBoxes) {
  const auto v = vocab();
  GrammarState g(TaskKind::VOT);
  EXPECT_FALSE(g.allows(Vocabulary::kEos, v));
  for (int i = 0; i < 4; ++i) g.advance(v.box_token(i), v);
  EXPECT_FALSE(g.allows(v.box_token(0), v));
  EXPECT_TRUE(g.allows(Vocabulary::kEos, v));
}

TEST(Grammar, DvpPhases) {
  const auto v = vocab();
  GrammarState g(TaskKind::DVP);
  EXPECT_FALSE(g.allows(Vocabulary::kEos, v));
  g.advance(v.time_token(1), v);
  EXPECT_FALSE(g.allows(v.word_id("red"), v));
  g.advance(v.time_token(2), v);
  EXPECT_FALSE(g.allows(Vocabulary::kEos, v));
  EXPECT_FALSE(g.allows(v.time_token(0), v));
  g.advance(v.word_id("red"), v);
  EXPECT_TRUE(g.allows(Vocabulary::kEos, v));
  EXPECT_TRUE(g.allows(v.time_token(0), v));
  EXPECT_THROW(g.advance(v.box_token(0), v), ParseError);
}
