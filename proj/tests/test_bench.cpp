#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "support.hpp"
#include "vidseq/metrics.hpp"
#include "vidseq/records.hpp"
#include "vidseq/synth.hpp"

using namespace vidseq;
namespace vt = vidseq::testing;
namespace fs = std::filesystem;

namespace {

// Largest one-to-one matching by trying every assignment.
std::size_t brute_force_matching(const std::vector<std::vector<double>>& iou, double t) {
  const std::size_t np = iou.size(), ng = np ? iou[0].size() : 0;
  std::size_t best = 0;
  std::vector<int> choice(np, -1);
  std::vector<bool> used(ng, false);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t p, std::size_t count) {
    best = std::max(best, count);
    if (p == np) return;
    rec(p + 1, count);
    for (std::size_t g = 0; g < ng; ++g) {
      if (used[g] || !(iou[p][g] > 0 && iou[p][g] >= t)) continue;
      used[g] = true;
      rec(p + 1, count + 1);
      used[g] = false;
    }
  };
  rec(0, 0);
  return best;
}

// A prediction or ground truth event that qualifies for more than one partner.
bool contended(const std::vector<std::vector<double>>& iou, double t) {
  const std::size_t np = iou.size(), ng = np ? iou[0].size() : 0;
  for (std::size_t p = 0; p < np; ++p) {
    std::size_t k = 0;
    for (std::size_t g = 0; g < ng; ++g) k += iou[p][g] > 0 && iou[p][g] >= t;
    if (k > 1) return true;
  }
  for (std::size_t g = 0; g < ng; ++g) {
    std::size_t k = 0;
    for (std::size_t p = 0; p < np; ++p) k += iou[p][g] > 0 && iou[p][g] >= t;
    if (k > 1) return true;
  }
  return false;
}

EventSet random_events(std::mt19937_64& rng, double duration, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  EventSet e;
  for (int i = 0; i < n; ++i) {
    const double a = u(rng) * duration, b = u(rng) * duration;
    e.push_back({{std::min(a, b), std::abs(a - b) + 0.01}, {"x"}});
  }
  return e;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vidseq_bench_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

PredictionRecord perfect(const TaskSample& s) {
  PredictionRecord r;
  r.id = s.id;
  r.kind = s.kind;
  r.value = s.target;
  return r;
}

}  // namespace

// --- IoU ------------------------------------------------------------------------

TEST(Iou, HandCases) {
  EXPECT_EQ(box_iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_EQ(box_iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
  EXPECT_EQ(box_iou({0, 0, 2, 1}, {1, 0, 3, 1}), 1.0 / 3.0);
  EXPECT_EQ(segment_iou({0, 2}, {0, 2}), 1.0);
  EXPECT_EQ(segment_iou({0, 1}, {2, 1}), 0.0);
  EXPECT_EQ(segment_iou({0, 2}, {1, 2}), 1.0 / 3.0);
}

TEST(Iou, ZeroMeasureUnion) {
  EXPECT_EQ(box_iou({1, 1, 1, 1}, {1, 1, 1, 1}), 0.0);
  EXPECT_EQ(segment_iou({3, 0}, {3, 0}), 0.0);
}

TEST(Iou, SymmetricAndBounded) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    const BoundingBox x{std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
    a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    const BoundingBox y{std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
    const double v = box_iou(x, y);
    EXPECT_DOUBLE_EQ(v, box_iou(y, x));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

// --- DVP matching -----------------------------------------------------------------

TEST(Matching, GreedyAgreesWithBruteForceWhenUncontended) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> count(0, 6);
  int contended_cases = 0;
  for (int i = 0; i < 200; ++i) {
    const auto pred = random_events(rng, 60.0, count(rng));
    const auto gt = random_events(rng, 60.0, std::max(1, count(rng)));
    const auto iou = segment_iou_matrix(pred, gt);
    const auto prf = dvp_localization_prf(pred, gt);
    for (std::size_t k = 0; k < kDvpThresholds.size(); ++k) {
      const double t = kDvpThresholds[k];
      const std::size_t oracle = brute_force_matching(iou, t);
      EXPECT_EQ(optimal_match_count(iou, t), oracle);
      if (contended(iou, t)) {
        ++contended_cases;
        EXPECT_LE(prf.matched[k], oracle);
        continue;
      }
      EXPECT_EQ(prf.matched[k], oracle) << "instance " << i << " t=" << t;
      EXPECT_DOUBLE_EQ(prf.recall[k], static_cast<double>(oracle) / gt.size());
      EXPECT_DOUBLE_EQ(prf.precision[k], pred.empty() ? 0.0 : static_cast<double>(oracle) / pred.size());
    }
  }
  EXPECT_LT(contended_cases, 200 * 4);
}

TEST(Matching, GreedyOrderAndTies) {
  // pred 0 overlaps both; the larger IoU wins
  const std::vector<std::vector<double>> iou{{0.6, 0.8}, {0.6, 0.0}};
  const auto m = greedy_match(iou, 0.5);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0], (std::pair<std::size_t, std::size_t>{0, 1}));
  EXPECT_EQ(m[1], (std::pair<std::size_t, std::size_t>{1, 0}));
  // equal IoU goes to the lower prediction index
  const auto tie = greedy_match({{0.7}, {0.7}}, 0.5);
  ASSERT_EQ(tie.size(), 1u);
  EXPECT_EQ(tie[0].first, 0u);
}

TEST(Matching, PrfHandCase) {
  const EventSet gt{{{0, 10}, {"a"}}, {{20, 10}, {"b"}}};
  const EventSet pred{{{0, 10}, {"a"}}, {{40, 5}, {"c"}}, {{21, 9}, {"b"}}};
  const auto prf = dvp_localization_prf(pred, gt, {0.5});
  EXPECT_EQ(prf.matched[0], 2u);
  EXPECT_DOUBLE_EQ(prf.precision[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(prf.recall[0], 1.0);
  EXPECT_DOUBLE_EQ(prf.f1[0], 0.8);
}

// --- tracking metrics ---------------------------------------------------------------

TEST(TrackingMetrics, AucEqualsDirectSweep) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 40.0), s(2.0, 20.0);
  for (int trial = 0; trial < 200; ++trial) {
    Trajectory pred, gt;
    for (int i = 0; i < 30; ++i) {
      const double x = u(rng), y = u(rng);
      gt.push_back({x, y, x + s(rng), y + s(rng)});
      const double px = x + u(rng) / 4 - 5, py = y + u(rng) / 4 - 5;
      pred.push_back({px, py, px + s(rng), py + s(rng)});
    }
    // per frame: the number of thresholds k*0.05 (k = 0..20) that it clears
    double direct = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const double v = box_iou(pred[i], gt[i]);
      if (v <= 0) continue;
      for (int k = 0; k <= 20; ++k) direct += v >= k * 0.05;
    }
    direct /= 21.0 * gt.size();
    EXPECT_NEAR(tracking_metrics(pred, gt).success_auc, direct, 1e-9);
  }
}

TEST(TrackingMetrics, PerfectAndDisjoint) {
  const Trajectory gt{{0, 0, 10, 10}, {5, 5, 15, 15}};
  const auto same = tracking_metrics(gt, gt);
  EXPECT_DOUBLE_EQ(same.success_auc, 1.0);
  EXPECT_DOUBLE_EQ(same.precision, 1.0);
  EXPECT_DOUBLE_EQ(same.normalized_precision, 1.0);
  const Trajectory far{{100, 100, 110, 110}, {100, 100, 110, 110}};
  const auto off = tracking_metrics(far, gt);
  EXPECT_DOUBLE_EQ(off.success_auc, 0.0);
  EXPECT_DOUBLE_EQ(off.precision, 0.0);
  EXPECT_THROW(tracking_metrics(far, {gt[0]}), InputError);
}

TEST(TrackingMetrics, CenterDistanceThresholds) {
  const Trajectory gt{{0, 0, 100, 100}};
  EXPECT_DOUBLE_EQ(tracking_metrics({{20, 0, 120, 100}}, gt).precision, 1.0);
  EXPECT_DOUBLE_EQ(tracking_metrics({{20.5, 0, 120.5, 100}}, gt).precision, 0.0);
  EXPECT_DOUBLE_EQ(tracking_metrics({{20, 0, 120, 100}}, gt).normalized_precision, 1.0);
  EXPECT_DOUBLE_EQ(tracking_metrics({{21, 0, 121, 100}}, gt).normalized_precision, 0.0);
}

// --- BLEU ----------------------------------------------------------------------------

TEST(Bleu, IdentityIsOne) {
  std::mt19937_64 rng(5);
  const std::vector<std::string> words{"a", "red", "circle", "moves", "left", "the"};
  for (int i = 0; i < 100; ++i) {
    std::vector<std::string> x(1 + i % 12);
    for (auto& w : x) w = words[rng() % words.size()];
    EXPECT_DOUBLE_EQ(bleu4(x, x), 1.0) << i;
  }
}

TEST(Bleu, PartialAndEmpty) {
  const std::vector<std::string> ref{"a", "red", "circle", "moves", "left"};
  const std::vector<std::string> cand{"a", "red", "circle", "moves", "right"};
  const double b = bleu4(cand, ref);
  // p1 = 4/5, p2 = 4/5, p3 = 3/4, p4 = 2/3 after add-one
  EXPECT_NEAR(b, std::pow(0.8 * 0.8 * 0.75 * (2.0 / 3.0), 0.25), 1e-12);
  EXPECT_EQ(bleu4({}, ref), 0.0);
  EXPECT_THROW(bleu4(cand, {}), InputError);
  EXPECT_LT(bleu4({"a", "red"}, ref), bleu4({"a", "red", "circle", "moves"}, ref));
}

// --- synthetic data ---------------------------------------------------------------------

TEST(Synth, Deterministic) {
  SynthSpec spec;
  for (auto k : kAllTasks) {
    const auto a = generate(k, spec, 3), b = generate(k, spec, 3);
    for (int i = 0; i < 3; ++i) {
      EXPECT_EQ(a[i].clip, b[i].clip);
      EXPECT_EQ(a[i].target, b[i].target);
      EXPECT_EQ(a[i].id, b[i].id);
    }
    EXPECT_EQ(generate(k, spec, 1, 2)[0].target, a[2].target);
  }
  auto other = spec;
  other.seed = 1;
  EXPECT_NE(generate(TaskKind::VOT, other, 1)[0].target, generate(TaskKind::VOT, spec, 1)[0].target);
}

TEST(Synth, SamplesAreValidAndInVocabulary) {
  SynthSpec spec;
  const auto vocab = Vocabulary::build(synth_corpus(spec));
  for (auto k : kAllTasks) {
    const auto samples = generate(k, spec, 20, 0, &vocab);
    for (const auto& s : samples) {
      EXPECT_NO_THROW(s.validate());
      EXPECT_NO_THROW(encode_target(s, vocab, ClipMeta::of(s.clip)));
    }
  }
}

TEST(Synth, DvpEventsInsideDuration) {
  SynthSpec spec;
  for (const auto& s : generate(TaskKind::DVP, spec, 30)) {
    const auto& ev = std::get<EventSet>(s.target);
    ASSERT_GE(ev.size(), static_cast<std::size_t>(spec.dvp_min_events));
    ASSERT_LE(ev.size(), static_cast<std::size_t>(spec.dvp_max_events));
    for (const auto& e : ev) {
      EXPECT_GE(e.span.start, 0.0);
      EXPECT_LE(e.span.end(), s.clip.duration + 1e-9);
      EXPECT_GE(e.span.duration, spec.dvp_min_event_seconds - 1e-9);
    }
  }
}

TEST(Synth, VotBoxesCoverRenderedPixels) {
  SynthSpec spec;
  for (const auto& s : generate(TaskKind::VOT, spec, 5)) {
    const auto& boxes = std::get<Trajectory>(s.target);
    ASSERT_EQ(boxes.size(), static_cast<std::size_t>(s.clip.frames));
    EXPECT_EQ(*s.prompt_box, boxes[0]);
    for (int t = 0; t < s.clip.frames; ++t) {
      const auto& b = boxes[static_cast<std::size_t>(t)];
      EXPECT_TRUE(b.valid_in(s.clip.width, s.clip.height));
      EXPECT_GT(b.area(), 0.0);
    }
  }
}

TEST(Synth, RenderShapeReturnsTightBox) {
  auto clip = VideoClip::blank(1, 32, 32, 1.0);
  const auto box = render_shape(clip, 0, "square", "red", 16, 16, 8);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const bool painted = clip.at(0, y, x, 0) > 0.5f;
      const bool inside = x >= box.x1 && x + 1 <= box.x2 && y >= box.y1 && y + 1 <= box.y2;
      EXPECT_EQ(painted, inside) << x << "," << y;
    }
}

TEST(Synth, VotPairLayout) {
  SynthSpec spec;
  const auto seq = generate(TaskKind::VOT, spec, 1)[0];
  const auto pair = make_vot_pair(seq, 0, 3);
  const auto& boxes = std::get<Trajectory>(seq.target);
  EXPECT_EQ(pair.clip.frames, 2);
  EXPECT_EQ(*pair.prompt_box, boxes[2]);
  EXPECT_EQ(std::get<Trajectory>(pair.target), (Trajectory{boxes[2], boxes[3]}));
  EXPECT_TRUE(std::equal(pair.clip.frame_data(1), pair.clip.frame_data(1) + pair.clip.frame_size(),
                         seq.clip.frame_data(3)));
  EXPECT_THROW(make_vot_pair(seq, 3, 3), IndexError);
  EXPECT_THROW(make_vot_pair(generate(TaskKind::AR, spec, 1)[0], 0, 1), InputError);
}

TEST(Synth, SpecMapRoundTrip) {
  SynthSpec spec;
  spec.seed = 42;
  spec.vot_frames = 12;
  const auto back = SynthSpec::from_map(spec.to_map());
  EXPECT_EQ(back.to_map(), spec.to_map());
  spec.min_size = 30;
  EXPECT_THROW(spec.validate(), ConfigError);
}

// --- records -----------------------------------------------------------------------------

TEST(Records, DatasetRoundTrip) {
  const auto dir = scratch("dataset");
  const auto spec = vt::tiny_spec();
  std::vector<TaskSample> all;
  for (auto k : kAllTasks)
    for (auto& s : generate(k, spec, 2)) all.push_back(std::move(s));
  write_dataset(dir, all);
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(back[i].id, all[i].id);
    EXPECT_EQ(back[i].kind, all[i].kind);
    EXPECT_EQ(back[i].target, all[i].target);
    EXPECT_EQ(back[i].prompt_box, all[i].prompt_box);
    EXPECT_EQ(back[i].prompt_sentence, all[i].prompt_sentence);
    EXPECT_EQ(back[i].clip, all[i].clip);
  }
  const auto meta_only = read_dataset(dir, false);
  EXPECT_TRUE(meta_only[0].clip.pixels.empty());
  EXPECT_EQ(meta_only[0].clip.duration, all[0].clip.duration);
}

TEST(Records, DuplicateIdsRejected) {
  const auto dir = scratch("dup");
  auto s = generate(TaskKind::AR, vt::tiny_spec(), 1);
  s.push_back(s[0]);
  EXPECT_THROW(write_dataset(dir, s), InputError);
}

TEST(Records, PredictionJsonRoundTrip) {
  PredictionRecord r;
  r.id = "x1";
  r.kind = TaskKind::DVP;
  r.value = EventSet{{{1.5, 2.25}, {"red", "circle"}}};
  r.tokens = {1, 2, 3};
  r.confidence = 0.123456789012345;
  r.flags = {{"forced", false}, {"clipped", true}};
  const auto back = prediction_from_json(prediction_to_json(r));
  EXPECT_EQ(back.id, r.id);
  EXPECT_EQ(back.kind, r.kind);
  EXPECT_EQ(back.value, r.value);
  EXPECT_EQ(back.tokens, r.tokens);
  EXPECT_EQ(back.confidence, r.confidence);
  EXPECT_EQ(back.flags, r.flags);
  EXPECT_THROW(prediction_from_json("{not json"), FormatError);
}

TEST(Records, PerfectPredictionsScoreOne) {
  const auto spec = vt::tiny_spec();
  std::vector<TaskSample> gt;
  for (auto k : kAllTasks)
    for (auto& s : generate(k, spec, 3)) gt.push_back(std::move(s));
  std::vector<PredictionRecord> preds;
  for (const auto& s : gt) preds.push_back(perfect(s));
  const auto r = evaluate(preds, gt);
  ASSERT_EQ(r.tasks.size(), 5u);
  EXPECT_EQ(r.tasks.at(TaskKind::AR).metrics.at("accuracy"), 1.0);
  EXPECT_EQ(r.tasks.at(TaskKind::CC).metrics.at("bleu4"), 1.0);
  EXPECT_EQ(r.tasks.at(TaskKind::DVP).metrics.at("f1"), 1.0);
  EXPECT_EQ(r.tasks.at(TaskKind::DVP).metrics.at("mean_iou"), 1.0);
  EXPECT_EQ(r.tasks.at(TaskKind::VOT).metrics.at("success_auc"), 1.0);
  EXPECT_EQ(r.tasks.at(TaskKind::VOT).count, 3u);
  EXPECT_EQ(evaluate(preds, gt), r);
}

TEST(Records, AlignmentErrors) {
  const auto gt = generate(TaskKind::AR, vt::tiny_spec(), 2);
  std::vector<PredictionRecord> preds{perfect(gt[0])};
  EXPECT_THROW(evaluate(preds, gt), AlignmentError);
  preds.push_back(perfect(gt[1]));
  preds.push_back(perfect(gt[1]));
  EXPECT_THROW(evaluate(preds, gt), AlignmentError);
  preds.pop_back();
  preds[1].kind = TaskKind::CC;
  EXPECT_THROW(evaluate(preds, gt), AlignmentError);
}

TEST(Records, FileEvaluationMatchesInMemory) {
  const auto dir = scratch("files");
  const auto gt = generate(TaskKind::DVP, vt::tiny_spec(), 4);
  write_dataset(dir / "data", gt);
  std::vector<PredictionRecord> preds;
  for (const auto& s : gt) preds.push_back(perfect(s));
  std::get<EventSet>(preds[0].value)[0].span.start += 1.0;
  write_predictions(dir / "p.jsonl", preds);
  EXPECT_EQ(evaluate_files(dir / "p.jsonl", dir / "data"), evaluate(preds, gt));
  const auto back = read_predictions(dir / "p.jsonl");
  EXPECT_EQ(back.size(), preds.size());
}
