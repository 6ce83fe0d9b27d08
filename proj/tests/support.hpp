#pragma once

// Shared helpers for the unit tests and the acceptance runner: finite
// difference gradient checks, tiny model configs and toy decoders.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "vidseq/engine.hpp"
#include "vidseq/synth.hpp"
#include "vidseq/tensor.hpp"

namespace vidseq::testing {

using TensorD = Tensor<double>;
using Inputs = std::vector<TensorD>;

struct GradCase {
  std::string name;
  Inputs inputs;
  std::function<TensorD(const Inputs&)> fn;  // returns any shape
};

inline TensorD randn(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  return TensorD::randn(std::move(shape), rng, sd, true);
}

// Scalar probe sum(out * w) with fixed pseudo-random weights.
inline TensorD probe(const TensorD& out) {
  std::mt19937_64 rng(out.numel() * 7919 + out.rank());
  std::normal_distribution<double> d;
  std::vector<double> w(out.numel());
  for (auto& v : w) v = d(rng);
  return sum(mul(out, TensorD::from_data(out.shape(), w)));
}

// ||numeric - analytic|| / ||numeric|| over the checked entries of each
// input; the largest value across inputs. Zero when both norms vanish.
// stride > 1 samples every stride-th entry.
inline double tensor_rel_error(const std::vector<double>& numeric, const std::vector<double>& analytic) {
  double diff = 0, num = 0, ana = 0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    diff += (numeric[i] - analytic[i]) * (numeric[i] - analytic[i]);
    num += numeric[i] * numeric[i];
    ana += analytic[i] * analytic[i];
  }
  if (num < 1e-24 && ana < 1e-24) return 0.0;
  return std::sqrt(diff) / std::max(std::sqrt(num), std::sqrt(ana));
}

inline double gradcheck(const GradCase& c, double h = 1e-6) {
  for (auto t : c.inputs) t.zero_grad();
  probe(c.fn(c.inputs)).backward();
  double worst = 0;
  for (auto t : c.inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(analytic.size());
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double orig = d[i];
      d[i] = orig + h;
      const double up = probe(c.fn(c.inputs)).item();
      d[i] = orig - h;
      const double down = probe(c.fn(c.inputs)).item();
      d[i] = orig;
      numeric[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, tensor_rel_error(numeric, analytic));
  }
  return worst;
}

inline std::vector<GradCase> op_cases() {
  std::mt19937_64 rng(20240611);
  std::vector<GradCase> cases;
  auto push = [&](std::string name, Inputs in, std::function<TensorD(const Inputs&)> fn) {
    cases.push_back({std::move(name), std::move(in), std::move(fn)});
  };
  push("matmul", {randn({3, 4}, rng), randn({4, 5}, rng)}, [](const Inputs& x) { return matmul(x[0], x[1]); });
  push("transpose", {randn({3, 4}, rng)}, [](const Inputs& x) { return transpose(x[0]); });
  push("add", {randn({3, 4}, rng), randn({3, 4}, rng)}, [](const Inputs& x) { return vidseq::add(x[0], x[1]); });
  push("sub", {randn({3, 4}, rng), randn({3, 4}, rng)}, [](const Inputs& x) { return sub(x[0], x[1]); });
  push("mul", {randn({3, 4}, rng), randn({3, 4}, rng)}, [](const Inputs& x) { return mul(x[0], x[1]); });
  push("scale", {randn({3, 4}, rng)}, [](const Inputs& x) { return scale(x[0], -1.7); });
  push("add_bias", {randn({3, 4}, rng), randn({4}, rng)}, [](const Inputs& x) { return add_bias(x[0], x[1]); });
  push("sum", {randn({3, 4}, rng)}, [](const Inputs& x) { return sum(x[0]); });
  push("mean", {randn({3, 4}, rng)}, [](const Inputs& x) { return mean(x[0]); });
  push("softmax_rows", {randn({3, 5}, rng)}, [](const Inputs& x) { return softmax(x[0], 1); });
  push("softmax_cols", {randn({3, 5}, rng)}, [](const Inputs& x) { return softmax(x[0], 0); });
  push("softmax_rank3", {randn({2, 3, 4}, rng)}, [](const Inputs& x) { return softmax(x[0], 1); });
  push("masked_softmax", {randn({3, 4}, rng)}, [](const Inputs& x) {
    const std::vector<std::uint8_t> keep{1, 1, 0, 1, 0, 1, 0, 0, 1, 1, 1, 1};
    return masked_softmax(x[0], keep);
  });
  push("layer_norm_affine", {randn({3, 6}, rng), randn({6}, rng), randn({6}, rng)},
      [](const Inputs& x) { return layer_norm(x[0], x[1], x[2]); });
  push("layer_norm", {randn({3, 6}, rng)}, [](const Inputs& x) { return layer_norm(x[0]); });
  push("gelu", {randn({3, 4}, rng, 2.0)}, [](const Inputs& x) { return gelu(x[0]); });
  push("embedding_lookup", {randn({5, 3}, rng)}, [](const Inputs& x) {
    const std::vector<std::int32_t> ids{4, 0, 4, 2};
    return embedding_lookup(x[0], ids);
  });
  push("cross_entropy", {randn({4, 5}, rng)}, [](const Inputs& x) {
    const std::vector<std::int32_t> t{1, 4, 0, 2};
    return cross_entropy(x[0], t);
  });
  push("cross_entropy_masked", {randn({4, 5}, rng)}, [](const Inputs& x) {
    const std::vector<std::int32_t> t{1, 4, 0, 2};
    const std::vector<std::uint8_t> inc{1, 0, 1, 1};
    return cross_entropy(x[0], t, inc);
  });
  push("reshape", {randn({3, 4}, rng)}, [](const Inputs& x) { return reshape(x[0], {2, 6}); });
  push("slice_rows", {randn({5, 3}, rng)}, [](const Inputs& x) { return slice_rows(x[0], 1, 4); });
  push("slice_cols", {randn({3, 5}, rng)}, [](const Inputs& x) { return slice_cols(x[0], 2, 5); });
  push("concat_rows", {randn({2, 3}, rng), randn({4, 3}, rng)}, [](const Inputs& x) {
    return concat_rows<double>(std::span<const TensorD>(x));
  });
  push("concat_cols", {randn({3, 2}, rng), randn({3, 4}, rng)}, [](const Inputs& x) {
    return concat_cols<double>(std::span<const TensorD>(x));
  });
  push("repeat_rows", {randn({1, 4}, rng)}, [](const Inputs& x) { return repeat_rows(x[0], 3); });
  push("mean_rows", {randn({4, 3}, rng)}, [](const Inputs& x) { return mean_rows(x[0]); });
  push("linear_gelu_chain", {randn({3, 4}, rng), randn({4, 4}, rng), randn({4}, rng)},
      [](const Inputs& x) { return softmax(gelu(linear(x[0], x[1], x[2])), 1); });
  return cases;
}

// Smallest config that still exercises every module.
inline ModelConfig tiny_config(int vocab_size) {
  ModelConfig c;
  c.frames = 4;
  c.t_f = 2;
  c.height = c.width = 16;
  c.patch = 8;
  c.c_f = c.c_g = c.c_q = 8;
  c.n_q = 3;
  c.l_g = 8;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.max_target = 12;
  c.vocab_size = vocab_size;
  return c;
}

inline SynthSpec tiny_spec() {
  SynthSpec s;
  s.width = s.height = 16;
  s.min_size = 4;
  s.max_size = 6;
  s.clip_frames = 4;
  s.vot_frames = 4;
  s.vot_min_speed = 0.5;
  s.vot_max_speed = 1.0;
  return s;
}

inline Vocabulary tiny_vocab() { return Vocabulary::build(synth_corpus(tiny_spec()), 10, 10); }

// Finite-difference check of the mean loss over a small mixed batch at
// 64-bit; about `per_param` entries of every parameter tensor are checked.
inline double model_gradcheck(std::string* worst_name = nullptr, int per_param = 7) {
  const auto spec = tiny_spec();
  const auto vocab = tiny_vocab();
  const auto cfg = tiny_config(vocab.size());
  Model<double> model(cfg, 3);
  std::vector<PreparedSample> batch{prepare_sample(generate(TaskKind::ViQA, spec, 1)[0], vocab, cfg),
                                    prepare_sample(generate(TaskKind::VOT, spec, 1)[0], vocab, cfg),
                                    prepare_sample(generate(TaskKind::DVP, spec, 1)[0], vocab, cfg)};
  auto loss = [&] {
    std::vector<TensorD> parts;
    for (const auto& b : batch) parts.push_back(reshape(sample_loss(model, b), Shape{1}));
    return mean(concat_rows<double>(std::span<const TensorD>(parts)));
  };
  model.zero_grad();
  loss().backward();
  double worst = 0;
  for (auto& [name, t] : model.parameters()) {
    const auto g = t.grad();
    auto d = t.mutable_data();
    std::vector<double> numeric, analytic;
    const std::size_t stride = std::max<std::size_t>(1, d.size() / static_cast<std::size_t>(per_param));
    for (std::size_t i = 0; i < d.size(); i += stride) {
      const double orig = d[i], h = 1e-5;
      double up, down;
      {
        NoGradGuard ng;
        d[i] = orig + h;
        up = loss().item();
        d[i] = orig - h;
        down = loss().item();
      }
      d[i] = orig;
      numeric.push_back((up - down) / (2 * h));
      analytic.push_back(g[i]);
    }
    const double rel = tensor_rel_error(numeric, analytic);
    if (rel > worst) {
      worst = rel;
      if (worst_name) *worst_name = name;
    }
  }
  return worst;
}

// Toy decoders whose next-token logits depend only on the position.
struct PositionalToy {
  std::vector<std::vector<double>> logits;  // [position][token]
  StepScorer scorer() const {
    return [this](std::span<const TokenId> prefix) { return logits.at(prefix.size()); };
  }
};

inline PositionalToy random_positional_toy(std::mt19937_64& rng, int vocab, int max_len, double sd = 2.0) {
  std::normal_distribution<double> d(0.0, sd);
  PositionalToy t;
  t.logits.assign(static_cast<std::size_t>(max_len), std::vector<double>(static_cast<std::size_t>(vocab)));
  for (auto& row : t.logits)
    for (auto& v : row) v = d(rng);
  return t;
}

// Toy decoders whose logits are a hash of the whole prefix.
inline StepScorer prefix_hash_scorer(std::uint64_t seed, int vocab, double sd = 2.0) {
  return [seed, vocab, sd](std::span<const TokenId> prefix) {
    std::uint64_t h = seed * 0x9E3779B97F4A7C15ULL + 1;
    for (TokenId t : prefix) h = (h ^ static_cast<std::uint64_t>(t + 1)) * 0x100000001B3ULL;
    std::mt19937_64 rng(h);
    std::normal_distribution<double> d(0.0, sd);
    std::vector<double> out(static_cast<std::size_t>(vocab));
    for (auto& v : out) v = d(rng);
    return out;
  };
}

inline StepMask allow_all(int vocab) {
  return [vocab](std::span<const TokenId>) { return std::vector<std::uint8_t>(static_cast<std::size_t>(vocab), 1); };
}

// Reference log-softmax, summed in long double.
inline std::vector<double> oracle_log_softmax(const std::vector<double>& logits) {
  long double z = 0;
  for (double v : logits) z += std::exp(static_cast<long double>(v));
  std::vector<double> out;
  for (double v : logits) out.push_back(static_cast<double>(v - std::log(z)));
  return out;
}

// Exhaustive search: every EOS-terminated sequence of at most max_len tokens
// (EOS included), scored under the full log-softmax at each step.
struct Enumerated {
  std::vector<TokenId> tokens;
  double score = -std::numeric_limits<double>::infinity();
};

inline Enumerated exhaustive_argmax(const StepScorer& scorer, const StepMask& mask, int vocab, TokenId eos,
                                    int max_len) {
  Enumerated best;
  std::vector<TokenId> prefix;
  std::function<void(double)> rec = [&](double acc) {
    const auto lp = oracle_log_softmax(scorer(prefix));
    const auto allowed = mask(prefix);
    for (int v = 0; v < vocab; ++v) {
      if (!allowed[static_cast<std::size_t>(v)]) continue;
      const double s = acc + lp[static_cast<std::size_t>(v)];
      prefix.push_back(v);
      if (v == eos) {
        if (s > best.score || (s == best.score && prefix < best.tokens)) best = {prefix, s};
      } else if (static_cast<int>(prefix.size()) < max_len) {
        rec(s);
      }
      prefix.pop_back();
    }
  };
  rec(0.0);
  return best;
}

// Teacher-forced log-likelihood of a full sequence under a scorer.
inline double sequence_log_likelihood(const StepScorer& scorer, const std::vector<TokenId>& tokens) {
  double s = 0;
  std::vector<TokenId> prefix;
  for (TokenId t : tokens) {
    const auto lp = oracle_log_softmax(scorer(prefix));
    s += lp[static_cast<std::size_t>(t)];
    prefix.push_back(t);
  }
  return s;
}

// Random well-formed sample for codec round trips: words drawn from the
// vocabulary, events anywhere inside a random duration, boxes anywhere
// inside a random frame. The clip carries metadata only.
inline TaskSample random_sample(TaskKind kind, const Vocabulary& vocab, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> word(vocab.word_begin(), vocab.time_begin() - 1);
  std::uniform_int_distribution<int> len(1, 6);
  auto words = [&] {
    std::vector<std::string> w(static_cast<std::size_t>(len(rng)));
    for (auto& x : w) x = vocab.token(word(rng));
    return w;
  };
  TaskSample s;
  s.id = "rand";
  s.kind = kind;
  s.clip.duration = 1.0 + 299.0 * u(rng);
  s.clip.width = 16 + static_cast<int>(u(rng) * 400);
  s.clip.height = 16 + static_cast<int>(u(rng) * 400);
  auto box = [&] {
    double a = u(rng) * s.clip.width, b = u(rng) * s.clip.width;
    double c = u(rng) * s.clip.height, d = u(rng) * s.clip.height;
    return BoundingBox{std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
  };
  switch (kind) {
    case TaskKind::AR:
    case TaskKind::CC:
      s.target = TextTarget{words()};
      break;
    case TaskKind::ViQA:
      s.prompt_sentence = words();
      s.target = TextTarget{words()};
      break;
    case TaskKind::DVP: {
      EventSet events(static_cast<std::size_t>(std::uniform_int_distribution<int>(1, 5)(rng)));
      for (auto& e : events) {
        e.span.start = u(rng) * s.clip.duration;
        e.span.duration = u(rng) * (s.clip.duration - e.span.start);
        e.words = words();
      }
      std::stable_sort(events.begin(), events.end(),
                       [](const Event& a, const Event& b) { return a.span.start < b.span.start; });
      s.target = events;
      break;
    }
    case TaskKind::VOT:
      s.prompt_box = box();
      s.target = Trajectory{box()};
      break;
  }
  return s;
}

// Structural identity of a parsed prediction with its source sample:
// identical words and counts, numbers within half a bin.
inline bool round_trip_matches(const TaskSample& s, const Prediction& p, const Vocabulary& vocab,
                               std::string* why = nullptr) {
  auto fail = [&](const std::string& w) {
    if (why) *why = w;
    return false;
  };
  if (p.kind != s.kind) return fail("kind");
  const double tb = s.clip.duration / (2.0 * vocab.n_time()) * (1 + 1e-9);
  switch (s.kind) {
    case TaskKind::AR:
    case TaskKind::CC:
    case TaskKind::ViQA:
      if (std::get<TextTarget>(p.value).words != std::get<TextTarget>(s.target).words) return fail("words");
      return true;
    case TaskKind::DVP: {
      const auto& a = std::get<EventSet>(s.target);
      const auto& b = std::get<EventSet>(p.value);
      if (a.size() != b.size()) return fail("event count");
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].words != b[i].words) return fail("event words");
        if (std::abs(a[i].span.start - b[i].span.start) > tb) return fail("start");
        if (std::abs(a[i].span.duration - b[i].span.duration) > tb) return fail("duration");
      }
      return true;
    }
    case TaskKind::VOT: {
      const auto& a = std::get<Trajectory>(s.target).back();
      const auto& b = std::get<Trajectory>(p.value).front();
      const double bx = s.clip.width / (2.0 * vocab.n_box()) * (1 + 1e-9);
      const double by = s.clip.height / (2.0 * vocab.n_box()) * (1 + 1e-9);
      if (std::abs(a.x1 - b.x1) > bx || std::abs(a.x2 - b.x2) > bx) return fail("box x");
      if (std::abs(a.y1 - b.y1) > by || std::abs(a.y2 - b.y2) > by) return fail("box y");
      return true;
    }
  }
  return fail("unreachable");
}

}  // namespace vidseq::testing
