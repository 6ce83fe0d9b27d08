#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "vidseq/model.hpp"

using namespace vidseq;
using vidseq::testing::tiny_config;
using vidseq::testing::tiny_spec;
using vidseq::testing::tiny_vocab;

namespace {

VideoClip noise_clip(const ModelConfig& c, std::uint64_t seed) {
  VideoClip clip = VideoClip::blank(c.frames, c.height, c.width, 8.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (auto& p : clip.pixels) p = u(rng);
  return clip;
}

PromptTokens task_prompt(const Vocabulary& v, TaskKind k) {
  PromptTokens p;
  p.task = v.task_token(k);
  return p;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Model, DeskShapes) {
  ModelConfig c;
  c.vocab_size = 100;
  c.l_g = 8;
  Model<float> m(c, 1);
  const VideoClip clip = VideoClip::blank(c.frames, c.height, c.width, 8.0);
  EXPECT_EQ(m.encode_video(clip).shape(), (Shape{4, 8, 8, 64}));
  PromptTokens p;
  p.task = 4;
  const auto g = m.encode_prompts(p);
  const auto f = m.mq_former(m.encode_video(clip), g.g_sen, g.g_box);
  EXPECT_EQ(f.shape(), (Shape{4, 32, 64}));
  EXPECT_EQ(m.temporal_encode(f).shape(), (Shape{128, 64}));
  const auto ctx = m.build_context(clip, p);
  EXPECT_EQ(ctx.tokens.shape(), (Shape{136, 64}));
  EXPECT_EQ(ctx.keep.size(), 136u);
  const std::vector<TokenId> prefix{10, 11};
  EXPECT_EQ(m.decode(ctx, prefix).shape(), (Shape{3, 100}));
}

TEST(Model, ConfigValidation) {
  ModelConfig c;
  c.vocab_size = 10;
  c.t_f = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.vocab_size = 10;
  c.patch = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  EXPECT_THROW(c.validate(), ConfigError);  // vocab_size 0
  c.vocab_size = 10;
  c.n_time = 6;
  c.n_box = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, ConfigMapRoundTrip) {
  ModelConfig c;
  c.vocab_size = 77;
  c.n_q = 5;
  c.n_time = 7;
  c.n_box = 11;
  EXPECT_EQ(ModelConfig::from_map(c.to_map()), c);
  auto kv = c.to_map();
  kv.erase("model.n_time");
  kv.erase("model.n_box");
  EXPECT_EQ(ModelConfig::from_map(kv).n_box, 0);
}

TEST(Model, FitReadsTokenLayout) {
  const auto v = Vocabulary::build(std::vector<std::string>{"a", "b"}, 30, 40);
  ModelConfig c;
  c.fit(v);
  EXPECT_EQ(c.vocab_size, v.size());
  EXPECT_EQ(c.n_time, 30);
  EXPECT_EQ(c.n_box, 40);
}

TEST(Model, NeighbouringBinsStartClose) {
  const auto v = Vocabulary::build(std::vector<std::string>{"a", "b"}, 30, 200);
  ModelConfig c;
  c.fit(v);
  const Model<double> m(c, 3);
  const auto embed = m.parameter("decoder.embed").data();
  const auto G = static_cast<std::size_t>(c.c_g);
  auto dist = [&](TokenId a, TokenId b) {
    double d = 0;
    for (std::size_t j = 0; j < G; ++j) d += std::pow(embed[a * G + j] - embed[b * G + j], 2);
    return std::sqrt(d);
  };
  const TokenId b0 = v.box_token(0);
  EXPECT_LT(dist(b0 + 100, b0 + 101), dist(b0 + 100, b0 + 150));
  EXPECT_LT(dist(b0 + 100, b0 + 101), dist(b0 + 100, *v.find("a")));
  const TokenId t0 = v.time_token(0);
  EXPECT_LT(dist(t0 + 10, t0 + 11), dist(t0 + 10, t0 + 25));
}

TEST(Model, WrongClipSizeIsDimensionError) {
  const auto v = tiny_vocab();
  const auto c = tiny_config(v.size());
  Model<double> m(c, 1);
  const VideoClip clip = VideoClip::blank(c.frames, c.height + 8, c.width, 8.0);
  EXPECT_THROW(m.build_context(clip, task_prompt(v, TaskKind::AR)), DimensionError);
}

TEST(Model, SameSeedSameParameters) {
  const auto c = tiny_config(50);
  Model<double> a(c, 9), b(c, 9), d(c, 10);
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto x = a.parameters()[i].second.data(), y = b.parameters()[i].second.data();
    ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
    const auto z = d.parameters()[i].second.data();
    differs = differs || !std::equal(x.begin(), x.end(), z.begin());
  }
  EXPECT_TRUE(differs);
}

TEST(Model, ContentQueriesHaveNqRows) {
  const auto c = tiny_config(50);
  Model<double> m(c, 1);
  EXPECT_EQ(m.content_queries().shape(), (Shape{3, 8}));
}

TEST(Model, FreshModelLossNearLogV) {
  ModelConfig c;
  SynthSpec spec;
  const auto vocab = Vocabulary::build(synth_corpus(spec), 10, 10);
  c.fit(vocab);
  Model<float> model(c, 5);
  for (auto k : {TaskKind::AR, TaskKind::CC, TaskKind::VOT}) {
    const auto s = prepare_sample(generate(k, spec, 1)[0], vocab, c);
    const double loss = sample_loss(model, s).item();
    EXPECT_NEAR(loss, std::log(static_cast<double>(vocab.size())), 0.1 * std::log(static_cast<double>(vocab.size())))
        << task_name(k);
  }
}

// Logits at position i depend only on tokens before i.
TEST(Model, DecoderIsCausal) {
  const auto v = tiny_vocab();
  const auto c = tiny_config(v.size());
  Model<double> m(c, 2);
  const auto ctx = m.build_context(noise_clip(c, 1), task_prompt(v, TaskKind::CC));
  const std::vector<TokenId> a{10, 11, 12, 13}, b{10, 11, 20, 25};
  const auto la = m.decode(ctx, a), lb = m.decode(ctx, b);
  const std::size_t V = static_cast<std::size_t>(v.size());
  for (std::size_t row = 0; row <= 2; ++row) {
    EXPECT_EQ(max_abs_diff(la.data().subspan(row * V, V), lb.data().subspan(row * V, V)), 0.0) << row;
  }
  EXPECT_GT(max_abs_diff(la.data().subspan(3 * V, V), lb.data().subspan(3 * V, V)), 0.0);
}

// Cached step-by-step logits equal the last row of the full teacher-forced pass.
TEST(Model, IncrementalMatchesBatchDecode) {
  const auto v = tiny_vocab();
  const auto c = tiny_config(v.size());
  Model<double> m(c, 3);
  const auto ctx = m.build_context(noise_clip(c, 2), task_prompt(v, TaskKind::AR));
  const auto cache = m.prepare_decoder(ctx);
  const std::vector<TokenId> seq{12, 14, 9, 30, 31};
  const std::size_t V = static_cast<std::size_t>(v.size());
  for (std::size_t n = 0; n <= seq.size(); ++n) {
    const std::span<const TokenId> prefix(seq.data(), n);
    const auto step = m.next_token_logits(cache, prefix);
    const auto full = m.decode(ctx, prefix);
    EXPECT_LE(max_abs_diff(step, full.data().subspan(n * V, V)), 1e-12) << n;
  }
}

TEST(Model, OverlongPrefixRejected) {
  const auto v = tiny_vocab();
  const auto c = tiny_config(v.size());
  Model<double> m(c, 3);
  const auto ctx = m.build_context(noise_clip(c, 2), task_prompt(v, TaskKind::AR));
  const std::vector<TokenId> seq(static_cast<std::size_t>(c.max_target), 10);
  EXPECT_THROW(m.decode(ctx, seq), IndexError);
}

// The MQ-former processes each temporal slice with the same weights and no
// cross-slice interaction.
TEST(Model, MqFormerIsPerFrame) {
  const auto v = tiny_vocab();
  const auto c = tiny_config(v.size());
  Model<double> m(c, 4);
  VideoClip a = noise_clip(c, 3);
  VideoClip b = a;
  // frames of the second slice only (group = frames / t_f = 2)
  for (int t = 2; t < 4; ++t)
    for (int y = 0; y < c.height; ++y)
      for (int x = 0; x < c.width; ++x) b.at(t, y, x, 0) = 1.0f - b.at(t, y, x, 0);
  const auto g = m.encode_prompts(task_prompt(v, TaskKind::AR));
  const auto fa = m.mq_former(m.encode_video(a), g.g_sen, g.g_box);
  const auto fb = m.mq_former(m.encode_video(b), g.g_sen, g.g_box);
  const std::size_t per = static_cast<std::size_t>(c.n_q * c.c_q);
  EXPECT_EQ(max_abs_diff(fa.data().subspan(0, per), fb.data().subspan(0, per)), 0.0);
  EXPECT_GT(max_abs_diff(fa.data().subspan(per, per), fb.data().subspan(per, per)), 0.0);

  // identical slices give identical query sets
  VideoClip same = a;
  for (int t = 2; t < 4; ++t)
    std::copy(a.frame_data(t - 2), a.frame_data(t - 2) + a.frame_size(),
              same.pixels.begin() + static_cast<std::ptrdiff_t>(t * a.frame_size()));
  const auto fs = m.mq_former(m.encode_video(same), g.g_sen, g.g_box);
  EXPECT_LE(max_abs_diff(fs.data().subspan(0, per), fs.data().subspan(per, per)), 1e-12);
}

TEST(Model, AbsentPromptsLeaveContentQueries) {
  const auto c = tiny_config(50);
  Model<double> m(c, 4);
  const auto q = m.summed_queries(Tensor<double>(), Tensor<double>());
  EXPECT_EQ(max_abs_diff(q.data(), m.content_queries().data()), 0.0);
}

TEST(Model, ZeroProjectionsLeaveContentQueries) {
  const auto v = tiny_vocab();
  const auto c = tiny_config(v.size());
  Model<double> m(c, 4);
  for (auto* p : {&m.sentence_projection(), &m.box_projection()}) {
    for (auto& w : p->weight.mutable_data()) w = 0;
    for (auto& w : p->bias.mutable_data()) w = 0;
  }
  PromptTokens p = task_prompt(v, TaskKind::ViQA);
  p.sentence = v.encode_text("what color is the circle");
  const auto g = m.encode_prompts(p);
  ASSERT_TRUE(g.g_sen.defined());
  const auto q = m.summed_queries(g.g_sen, g.g_box);
  EXPECT_EQ(max_abs_diff(q.data(), m.content_queries().data()), 0.0);
}

TEST(Model, PromptsShapeTheQueries) {
  const auto v = tiny_vocab();
  const auto c = tiny_config(v.size());
  Model<double> m(c, 4);
  PromptTokens p = task_prompt(v, TaskKind::VOT);
  p.box = {v.box_token(1), v.box_token(2), v.box_token(5), v.box_token(6)};
  const auto g = m.encode_prompts(p);
  ASSERT_TRUE(g.g_box.defined());
  EXPECT_FALSE(g.g_sen.defined());
  EXPECT_GT(max_abs_diff(m.summed_queries(g.g_sen, g.g_box).data(), m.content_queries().data()), 0.0);
}

TEST(Model, LongPromptTruncatedToCap) {
  const auto v = tiny_vocab();
  const auto c = tiny_config(v.size());
  Model<double> m(c, 4);
  PromptTokens p = task_prompt(v, TaskKind::ViQA);
  p.sentence = v.encode_text("what color is the circle what color is the square");
  const auto g = m.encode_prompts(p);
  EXPECT_TRUE(g.layout.truncated);
  EXPECT_EQ(g.layout.active, static_cast<std::size_t>(c.l_g));
  EXPECT_EQ(g.g.shape(), (Shape{8, 8}));
}

TEST(Model, PromptPaddingMaskedInContext) {
  const auto v = tiny_vocab();
  const auto c = tiny_config(v.size());
  Model<double> m(c, 4);
  const auto ctx = m.build_context(noise_clip(c, 5), task_prompt(v, TaskKind::AR));
  EXPECT_EQ(ctx.keep[0], 1);
  for (std::size_t i = 1; i < static_cast<std::size_t>(c.l_g); ++i) EXPECT_EQ(ctx.keep[i], 0);
  for (std::size_t i = static_cast<std::size_t>(c.l_g); i < ctx.keep.size(); ++i) EXPECT_EQ(ctx.keep[i], 1);
}

// Without temporal positions the temporal layer cannot tell frames apart:
// swapping two slices swaps the corresponding output rows.
TEST(Model, TemporalPositionsCarryOrder) {
  const auto c = tiny_config(50);
  Model<double> m(c, 6);
  std::mt19937_64 rng(7);
  const auto f = Tensor<double>::randn({2, 3, 8}, rng, 1.0);
  std::vector<double> swapped(f.data().begin() + 24, f.data().end());
  swapped.insert(swapped.end(), f.data().begin(), f.data().begin() + 24);
  const auto g = Tensor<double>::from_data({2, 3, 8}, swapped);
  auto qa = m.temporal_encode(f), qb = m.temporal_encode(g);
  EXPECT_GT(max_abs_diff(qa.data().subspan(0, 24), qb.data().subspan(24, 24)), 1e-6);
  for (auto& p : m.temporal_positions().mutable_data()) p = 0;
  qa = m.temporal_encode(f);
  qb = m.temporal_encode(g);
  EXPECT_LE(max_abs_diff(qa.data().subspan(0, 24), qb.data().subspan(24, 24)), 1e-12);
  EXPECT_LE(max_abs_diff(qa.data().subspan(24, 24), qb.data().subspan(0, 24)), 1e-12);
}

TEST(Model, EndToEndGradientsMatchFiniteDifferences) {
  std::string worst;
  EXPECT_LE(vidseq::testing::model_gradcheck(&worst, 3), 1e-3) << worst;
}
