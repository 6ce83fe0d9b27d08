#include "vidseq/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "vidseq/error.hpp"
#include "vidseq/synth.hpp"

namespace vidseq {

namespace fs = std::filesystem;

// --- input preparation ------------------------------------------------------

std::vector<int> uniform_indices(int available, int count, double offset) {
  if (available < 1 || count < 1) throw DomainError("uniform_indices: empty range");
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int v = static_cast<int>(std::floor((i + offset) * available / count));
    idx[static_cast<std::size_t>(i)] = std::clamp(v, 0, available - 1);
  }
  return idx;
}

std::vector<int> random_indices(int available, int count, std::mt19937_64& rng) {
  if (available < count) return uniform_indices(available, count);
  // partial Fisher-Yates, then sort
  std::vector<int> all(static_cast<std::size_t>(available));
  std::iota(all.begin(), all.end(), 0);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> d(i, available - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(d(rng))]);
  }
  all.resize(static_cast<std::size_t>(count));
  std::sort(all.begin(), all.end());
  return all;
}

VideoClip tracking_clip(const VideoClip& template_frame, const VideoClip& search, int search_frame, int frames) {
  if (template_frame.height != search.height || template_frame.width != search.width) {
    throw DimensionError("tracking_clip: template and search frame sizes differ");
  }
  if (frames < 2) throw DimensionError("tracking_clip: need at least two frames");
  VideoClip out = VideoClip::blank(frames, search.height, search.width, search.fps);
  const std::size_t fs = search.frame_size();
  for (int t = 0; t < frames; ++t) {
    const float* src = t < frames / 2 ? template_frame.frame_data(0) : search.frame_data(search_frame);
    std::copy(src, src + fs, out.pixels.begin() + static_cast<std::ptrdiff_t>(t * fs));
  }
  out.meta = search.meta;
  return out;
}

PreparedSample prepare_sample(const TaskSample& sample, const Vocabulary& vocab, const ModelConfig& config,
                              std::mt19937_64* rng) {
  sample.validate();
  PreparedSample p;
  p.id = sample.id;
  p.kind = sample.kind;
  p.meta = ClipMeta::of(sample.clip);
  if (sample.clip.height != config.height || sample.clip.width != config.width) {
    throw DimensionError(sample.id + ": clip is " + std::to_string(sample.clip.height) + "x" +
                         std::to_string(sample.clip.width) + ", model expects " + std::to_string(config.height) +
                         "x" + std::to_string(config.width));
  }
  if (sample.kind == TaskKind::VOT) {
    const auto& boxes = std::get<Trajectory>(sample.target);
    const bool is_pair = sample.clip.frames == 2 && boxes.size() == 2;
    TaskSample pair;
    if (is_pair) {
      pair = sample;
    } else {
      int search = 1, templ = 0, ref = 0;
      if (rng) {
        search = std::uniform_int_distribution<int>(1, sample.clip.frames - 1)(*rng);
        templ = std::uniform_int_distribution<int>(0, search - 1)(*rng);
        ref = std::uniform_int_distribution<int>(templ, search - 1)(*rng);
      }
      pair = make_vot_pair(sample, templ, search);
      // augmented prompts may lag several frames behind the search frame
      if (rng) pair.prompt_box = boxes[static_cast<std::size_t>(ref)];
    }
    p.clip = tracking_clip(pair.clip.frame_subset({0}), pair.clip, 1, config.frames);
    p.prompt = encode_prompt(pair, vocab, p.meta);
    p.target = encode_target(pair, vocab, p.meta).ids;
    return p;
  }
  std::vector<int> idx;
  if (sample.kind == TaskKind::DVP || !rng) {
    idx = uniform_indices(sample.clip.frames, config.frames);
  } else {
    idx = random_indices(sample.clip.frames, config.frames, *rng);
  }
  p.clip = sample.clip.frame_subset(idx);
  p.prompt = encode_prompt(sample, vocab, p.meta);
  p.target = encode_target(sample, vocab, p.meta).ids;
  return p;
}

// --- training ---------------------------------------------------------------

template <typename T>
Tensor<T> sample_loss(const Model<T>& model, const PreparedSample& sample) {
  if (sample.target.empty()) throw InputError(sample.id + ": empty target");
  if (static_cast<int>(sample.target.size()) > model.config().max_target) {
    throw InputError(sample.id + ": target longer than the decoder length");
  }
  const auto context = model.build_context(sample.clip, sample.prompt);
  const std::span<const TokenId> prefix(sample.target.data(), sample.target.size() - 1);
  const Tensor<T> logits = model.decode(context, prefix);
  return cross_entropy(logits, std::span<const TokenId>(sample.target));
}

template <typename T>
double train_step(Model<T>& model, AdamW<T>& optimizer, const std::vector<PreparedSample>& batch) {
  if (batch.empty()) throw InputError("train_step: empty batch");
  std::vector<Tensor<T>> losses;
  losses.reserve(batch.size());
  for (const auto& s : batch) losses.push_back(reshape(sample_loss(model, s), Shape{1}));
  const Tensor<T> loss = mean(concat_rows(std::span<const Tensor<T>>(losses)));
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) throw NonFiniteError("train_step: loss is not finite");
  optimizer.zero_grad();
  loss.backward();
  optimizer.step();
  return value;
}

TrainMode parse_mode(std::string_view name) {
  if (name == "separate") return TrainMode::Separate;
  if (name == "joint") return TrainMode::Joint;
  throw ConfigError("unknown training mode '" + std::string(name) + "' (expected separate or joint)");
}

std::string_view mode_name(TrainMode mode) { return mode == TrainMode::Joint ? "joint" : "separate"; }

void TrainConfig::validate() const {
  if (tasks.empty()) throw ConfigError("train: no task given");
  std::set<TaskKind> distinct(tasks.begin(), tasks.end());
  if (distinct.size() != tasks.size()) throw ConfigError("train: duplicate task");
  if (mode == TrainMode::Separate && tasks.size() != 1) throw ConfigError("train: separate mode trains exactly one task");
  if (mode == TrainMode::Joint && tasks.size() < 2) throw ConfigError("train: joint mode needs at least two tasks");
  if (steps < 1) throw ConfigError("train: steps must be at least 1");
  if (batch < 1) throw ConfigError("train: batch must be at least 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
  if (weight_decay < 0) throw ConfigError("train: weight decay must be non-negative");
  if (horizon < 0) throw ConfigError("train: horizon must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint interval must be non-negative");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  std::string names;
  for (auto t : tasks) names += (names.empty() ? "" : ",") + std::string(task_name(t));
  char lr_buf[32], wd_buf[32];
  std::snprintf(lr_buf, sizeof lr_buf, "%.17g", lr);
  std::snprintf(wd_buf, sizeof wd_buf, "%.17g", weight_decay);
  return {{"train.tasks", names},
          {"train.mode", std::string(mode_name(mode))},
          {"train.steps", std::to_string(steps)},
          {"train.batch", std::to_string(batch)},
          {"train.lr", lr_buf},
          {"train.weight_decay", wd_buf},
          {"train.horizon", std::to_string(horizon)},
          {"train.seed", std::to_string(seed)},
          {"train.checkpoint_every", std::to_string(checkpoint_every)},
          {"train.augment", augment ? "1" : "0"}};
}

std::string log_entry_json(const LogEntry& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "{\"step\":%lld,\"task\":\"%s\",\"loss\":%.17g,\"lr\":%.17g}",
                static_cast<long long>(e.step), std::string(task_name(e.task)).c_str(), e.loss, e.lr);
  return buf;
}

TaskKind task_for_step(const TrainConfig& cfg, std::int64_t step) {
  return cfg.tasks[static_cast<std::size_t>(step % static_cast<std::int64_t>(cfg.tasks.size()))];
}

namespace {

std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(static_cast<std::uint64_t>(step) >> 32),
                    stream};
  return std::mt19937_64(seq);
}

}  // namespace

std::vector<std::size_t> batch_indices(const TrainConfig& cfg, std::int64_t step, std::size_t pool) {
  if (pool == 0) throw ConfigError("dataset is empty");
  const std::size_t b = static_cast<std::size_t>(cfg.batch);
  std::vector<std::size_t> all(pool);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (b >= pool) return all;
  auto rng = step_rng(cfg.seed, step, 1);
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, pool - 1);
    std::swap(all[i], all[d(rng)]);
  }
  all.resize(b);
  return all;
}

AdamWOptions optimizer_options(const TrainConfig& cfg) {
  AdamWOptions o;
  o.lr = cfg.lr;
  o.weight_decay = cfg.weight_decay;
  o.horizon = cfg.horizon > 0 ? cfg.horizon : cfg.steps;
  return o;
}

TrainResult run_training(const TrainConfig& cfg, const TaskData& data, Model<float>& model, AdamW<float>& optimizer,
                         const Vocabulary& vocab, const std::function<void(const LogEntry&)>& on_step) {
  cfg.validate();
  for (auto t : cfg.tasks) {
    auto it = data.find(t);
    if (it == data.end() || it->second.empty()) {
      throw ConfigError("dataset for task " + std::string(task_name(t)) + " is empty");
    }
  }
  TrainResult result;
  const std::int64_t first = optimizer.steps_taken();
  std::ofstream metrics;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    metrics.open(cfg.out_dir / "metrics.jsonl", first > 0 ? std::ios::app : std::ios::trunc);
    if (!metrics) throw InputError("cannot write " + (cfg.out_dir / "metrics.jsonl").string());
  }
  const auto extra = cfg.to_map();
  for (std::int64_t step = first; step < cfg.steps; ++step) {
    const TaskKind task = task_for_step(cfg, step);
    const auto& pool = data.at(task);
    auto rng = step_rng(cfg.seed, step, 2);
    std::vector<PreparedSample> batch;
    for (std::size_t i : batch_indices(cfg, step, pool.size())) {
      batch.push_back(prepare_sample(pool[i], vocab, model.config(), cfg.augment ? &rng : nullptr));
    }
    LogEntry e;
    e.step = step;
    e.task = task;
    e.lr = optimizer.lr_for_next_step();
    e.loss = train_step(model, optimizer, batch);
    result.log.push_back(e);
    if (metrics.is_open()) metrics << log_entry_json(e) << '\n' << std::flush;
    if (on_step) on_step(e);
    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(cfg.out_dir / ("checkpoint-" + std::to_string(step + 1) + ".ovid"), model, vocab, &optimizer,
                      extra);
    }
  }
  result.final_step = optimizer.steps_taken();
  if (!cfg.out_dir.empty()) save_checkpoint(cfg.out_dir / "checkpoint.ovid", model, vocab, &optimizer, extra);
  return result;
}

// --- checkpoints ------------------------------------------------------------

std::map<std::string, std::string> vocabulary_to_map(const Vocabulary& vocab) {
  std::string words;
  for (TokenId id = vocab.word_begin(); id < vocab.time_begin(); ++id) {
    words += (words.empty() ? "" : ",") + vocab.token(id);
  }
  return {{"vocab.words", words},
          {"vocab.n_time", std::to_string(vocab.n_time())},
          {"vocab.n_box", std::to_string(vocab.n_box())}};
}

Vocabulary vocabulary_from_map(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("checkpoint is missing " + k);
    return it->second;
  };
  std::vector<std::string> words;
  const std::string& w = get("vocab.words");
  std::size_t b = 0;
  while (b < w.size()) {
    const auto e = w.find(',', b);
    words.push_back(w.substr(b, e == std::string::npos ? std::string::npos : e - b));
    if (e == std::string::npos) break;
    b = e + 1;
  }
  try {
    return Vocabulary::build(words, std::stoi(get("vocab.n_time")), std::stoi(get("vocab.n_box")));
  } catch (const std::invalid_argument&) {
    throw FormatError("checkpoint vocabulary sizes are malformed");
  }
}

template <typename T>
Container make_checkpoint(const Model<T>& model, const Vocabulary& vocab, const AdamW<T>* optimizer,
                          const std::map<std::string, std::string>& extra) {
  Container c;
  c.config = extra;
  for (const auto& [k, v] : model.config().to_map()) c.config[k] = v;
  for (const auto& [k, v] : vocabulary_to_map(vocab)) c.config[k] = v;
  c.config["train.step"] = std::to_string(optimizer ? optimizer->steps_taken() : 0);
  const auto& params = model.parameters();
  for (const auto& [name, t] : params) c.tensors.push_back(TensorRecord::of("param." + name, t));
  if (optimizer) {
    c.config["train.optimizer"] = "adamw";
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& shape = params[i].second.shape();
      c.tensors.push_back({"adam.m." + params[i].first, shape, optimizer->first_moment(i)});
      c.tensors.push_back({"adam.v." + params[i].first, shape, optimizer->second_moment(i)});
    }
  }
  return c;
}

template <typename T>
void save_checkpoint(const fs::path& path, const Model<T>& model, const Vocabulary& vocab, const AdamW<T>* optimizer,
                     const std::map<std::string, std::string>& extra) {
  write_container(path, make_checkpoint(model, vocab, optimizer, extra));
}

Checkpoint checkpoint_from_container(Container c) {
  Checkpoint ck;
  ck.config = ModelConfig::from_map(c.config);
  ck.vocab = vocabulary_from_map(c.config);
  if (ck.config.vocab_size != ck.vocab.size()) throw FormatError("checkpoint vocabulary size disagrees with the model");
  auto it = c.config.find("train.step");
  ck.step = it == c.config.end() ? 0 : std::stoll(it->second);
  ck.container = std::move(c);
  return ck;
}

Checkpoint load_checkpoint(const fs::path& path) { return checkpoint_from_container(read_container(path)); }

template <typename T>
void restore_parameters(Model<T>& model, const Container& c) {
  for (auto& [name, t] : model.parameters()) {
    const auto& rec = c.tensor("param." + name);
    if (rec.shape != t.shape()) throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(rec.shape));
    const auto values = rec.template as<T>();
    auto dst = t.mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

template <typename T>
void restore_optimizer(AdamW<T>& optimizer, const Model<T>& model, const Container& c) {
  const auto& params = model.parameters();
  if (optimizer.size() != params.size()) throw FormatError("optimizer does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto m = c.tensor("adam.m." + params[i].first).template as<T>();
    const auto v = c.tensor("adam.v." + params[i].first).template as<T>();
    if (m.size() != optimizer.first_moment(i).size() || v.size() != optimizer.second_moment(i).size()) {
      throw FormatError("optimizer moment size mismatch for " + params[i].first);
    }
    optimizer.first_moment(i) = m;
    optimizer.second_moment(i) = v;
  }
  optimizer.set_steps_taken(std::stoll(c.value("train.step")));
}

// --- decoding ---------------------------------------------------------------

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw DomainError("log_softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

namespace {

struct LiveBeam {
  std::vector<TokenId> tokens;
  std::vector<double> lps;
  double score = 0;
};

bool ranks_before(double sa, const std::vector<TokenId>& ta, double sb, const std::vector<TokenId>& tb) {
  if (sa != sb) return sa > sb;
  return ta < tb;
}

void sort_finished(std::vector<BeamHypothesis>& f) {
  std::sort(f.begin(), f.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
    return ranks_before(a.score, a.tokens, b.score, b.tokens);
  });
}

}  // namespace

std::vector<BeamHypothesis> beam_search(const StepScorer& scorer, const StepMask& mask, int vocab_size, TokenId eos,
                                        int beam, int max_len) {
  if (beam < 1) throw ConfigError("beam size must be at least 1");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  const std::size_t b = static_cast<std::size_t>(beam);
  const std::size_t eos_window = 2 * b - 1;
  std::vector<LiveBeam> live(1);
  std::vector<BeamHypothesis> finished;

  struct Cand {
    std::size_t parent;
    TokenId token;
    double lp;
    double score;
  };

  for (int len = 0; len < max_len && !live.empty(); ++len) {
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto& lb = live[i];
      const auto logits = scorer(lb.tokens);
      if (static_cast<int>(logits.size()) != vocab_size) throw DimensionError("scorer returned the wrong width");
      const auto lp = log_softmax(logits);
      const auto m = mask(lb.tokens);
      bool any = false;
      for (int t = 0; t < vocab_size; ++t) any = any || m[static_cast<std::size_t>(t)];
      if (!any) throw Error("beam_search: grammar mask is empty");
      if (m[static_cast<std::size_t>(eos)]) {
        std::size_t rank = 0;
        for (int t = 0; t < vocab_size; ++t) {
          if (!m[static_cast<std::size_t>(t)] || t == eos) continue;
          if (lp[static_cast<std::size_t>(t)] > lp[static_cast<std::size_t>(eos)] ||
              (lp[static_cast<std::size_t>(t)] == lp[static_cast<std::size_t>(eos)] && t < eos)) {
            ++rank;
          }
        }
        if (rank < eos_window) {
          BeamHypothesis h;
          h.tokens = lb.tokens;
          h.tokens.push_back(eos);
          h.token_log_probs = lb.lps;
          h.token_log_probs.push_back(lp[static_cast<std::size_t>(eos)]);
          h.score = lb.score + lp[static_cast<std::size_t>(eos)];
          finished.push_back(std::move(h));
        }
      }
      for (int t = 0; t < vocab_size; ++t) {
        if (t == eos || !m[static_cast<std::size_t>(t)]) continue;
        cands.push_back({i, t, lp[static_cast<std::size_t>(t)], lb.score + lp[static_cast<std::size_t>(t)]});
      }
    }
    // parents are distinct equal-length prefixes, so (parent tokens, token)
    // order is the lexicographic order of the extended sequences
    const std::size_t keep = std::min(b, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [&](const Cand& x, const Cand& y) {
                        if (x.score != y.score) return x.score > y.score;
                        if (x.parent != y.parent) return live[x.parent].tokens < live[y.parent].tokens;
                        return x.token < y.token;
                      });
    std::vector<LiveBeam> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& c = cands[k];
      LiveBeam nb = live[c.parent];
      nb.tokens.push_back(c.token);
      nb.lps.push_back(c.lp);
      nb.score = c.score;
      next.push_back(std::move(nb));
    }
    live = std::move(next);
    sort_finished(finished);
    if (finished.size() > b) finished.resize(b);
    // log-probabilities are <= 0, so a live beam can only get worse
    if (!finished.empty() && (live.empty() || finished.front().score >= live.front().score)) break;
  }
  if (finished.empty()) {
    if (live.empty()) throw Error("beam_search: no hypothesis survived");
    LiveBeam& best = live.front();
    const auto lp = log_softmax(scorer(best.tokens));
    BeamHypothesis h;
    h.tokens = best.tokens;
    h.tokens.push_back(eos);
    h.token_log_probs = best.lps;
    h.token_log_probs.push_back(lp[static_cast<std::size_t>(eos)]);
    h.score = best.score + lp[static_cast<std::size_t>(eos)];
    h.forced = true;
    finished.push_back(std::move(h));
  }
  return finished;
}

BeamHypothesis greedy_decode(const StepScorer& scorer, const StepMask& mask, int vocab_size, TokenId eos, int max_len) {
  BeamHypothesis h;
  for (int len = 0; len < max_len; ++len) {
    const auto lp = log_softmax(scorer(h.tokens));
    const auto m = mask(h.tokens);
    int best = -1;
    for (int t = 0; t < vocab_size; ++t) {
      if (!m[static_cast<std::size_t>(t)]) continue;
      if (best < 0 || lp[static_cast<std::size_t>(t)] > lp[static_cast<std::size_t>(best)]) best = t;
    }
    if (best < 0) throw Error("greedy_decode: grammar mask is empty");
    h.tokens.push_back(best);
    h.token_log_probs.push_back(lp[static_cast<std::size_t>(best)]);
    h.score += lp[static_cast<std::size_t>(best)];
    if (best == eos) return h;
  }
  const auto lp = log_softmax(scorer(h.tokens));
  h.tokens.push_back(eos);
  h.token_log_probs.push_back(lp[static_cast<std::size_t>(eos)]);
  h.score += lp[static_cast<std::size_t>(eos)];
  h.forced = true;
  return h;
}

StepMask grammar_mask(TaskKind kind, const Vocabulary& vocab) {
  return [kind, &vocab](std::span<const TokenId> prefix) {
    GrammarState state(kind);
    for (TokenId t : prefix) state.advance(t, vocab);
    return allowed_next(state, vocab);
  };
}

template <typename T>
StepScorer model_scorer(const Model<T>& model, const DecoderCache<T>& cache) {
  return [&model, &cache](std::span<const TokenId> prefix) {
    const auto logits = model.next_token_logits(cache, prefix);
    return std::vector<double>(logits.begin(), logits.end());
  };
}

template <typename T>
std::vector<double> token_log_likelihoods(const Model<T>& model, const MultimodalContext<T>& context,
                                          std::span<const TokenId> tokens) {
  if (tokens.empty()) throw InputError("token_log_likelihoods: empty sequence");
  NoGradGuard guard;
  const Tensor<T> logits = model.decode(context, tokens.first(tokens.size() - 1));
  const std::size_t v = logits.dim(1);
  const auto data = logits.data();
  std::vector<double> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::vector<double> row(data.begin() + static_cast<std::ptrdiff_t>(i * v),
                            data.begin() + static_cast<std::ptrdiff_t>((i + 1) * v));
    out.push_back(log_softmax(row)[static_cast<std::size_t>(tokens[i])]);
  }
  return out;
}

int max_decode_length(TaskKind kind, const ModelConfig& config) {
  // one position stays free for a forced EOS
  const int cap = config.max_target - 1;
  return kind == TaskKind::VOT ? std::min(5, cap) : cap;
}

double sequence_confidence(const BeamHypothesis& h) {
  const std::size_t n = h.token_log_probs.size();
  if (n == 0) return 0.0;
  const std::size_t body = n > 1 ? n - 1 : 1;
  double s = 0;
  for (std::size_t i = 0; i < body; ++i) s += std::exp(h.token_log_probs[i]);
  return s / static_cast<double>(body);
}

template <typename T>
InferenceResult infer_prepared(const Model<T>& model, const Vocabulary& vocab, const PreparedSample& input, int beam) {
  NoGradGuard guard;
  const auto context = model.build_context(input.clip, input.prompt);
  const auto cache = model.prepare_decoder(context);
  InferenceResult r;
  r.beams = beam_search(model_scorer(model, cache), grammar_mask(input.kind, vocab), vocab.size(), Vocabulary::kEos,
                        beam, max_decode_length(input.kind, model.config()));
  r.best = r.beams.front();
  TokenSequence seq{r.best.tokens, input.kind};
  if (r.best.forced) seq.ids = truncate_to_complete(seq.ids, input.kind, vocab);
  r.prediction = parse_output(seq, vocab, input.meta);
  r.confidence = sequence_confidence(r.best);
  return r;
}

template <typename T>
InferenceResult infer_sample(const Model<T>& model, const Vocabulary& vocab, const TaskSample& sample, int beam) {
  return infer_prepared(model, vocab, prepare_sample(sample, vocab, model.config()), beam);
}

std::vector<VideoClip> multi_views(const VideoClip& clip, int frames, int n_clips, int n_crops) {
  if (n_clips < 1 || n_crops < 1) throw ConfigError("multi_views: need at least one clip and one crop");
  std::vector<VideoClip> views;
  for (int j = 0; j < n_clips; ++j) {
    const VideoClip sub = clip.frame_subset(uniform_indices(clip.frames, frames, (j + 0.5) / n_clips));
    if (n_crops == 1) {
      views.push_back(sub);
      continue;
    }
    const double side = 0.875 * std::min(clip.width, clip.height);
    for (int k = 0; k < n_crops; ++k) {
      const double f = static_cast<double>(k) / (n_crops - 1);
      const double x0 = f * (clip.width - side), y0 = f * (clip.height - side);
      const BoundingBox crop{x0, y0, x0 + side, y0 + side};
      VideoClip view = VideoClip::blank(sub.frames, sub.height, sub.width, sub.fps);
      view.duration = sub.duration;
      view.meta = sub.meta;
      for (int t = 0; t < sub.frames; ++t) {
        const VideoClip one = crop_resize(sub, t, crop, 1.0, sub.height, sub.width);
        std::copy(one.pixels.begin(), one.pixels.end(),
                  view.pixels.begin() + static_cast<std::ptrdiff_t>(t * sub.frame_size()));
      }
      views.push_back(std::move(view));
    }
  }
  return views;
}

template <typename T>
MultiViewResult multi_clip_average(const Model<T>& model, const Vocabulary& vocab, const TaskSample& sample,
                                   int n_clips, int n_crops) {
  if (sample.kind == TaskKind::DVP || sample.kind == TaskKind::VOT) {
    throw ConfigError("multi_clip_average applies to AR, CC and ViQA");
  }
  NoGradGuard guard;
  const PreparedSample base = prepare_sample(sample, vocab, model.config());
  const auto views = multi_views(sample.clip, model.config().frames, n_clips, n_crops);
  std::vector<MultimodalContext<T>> contexts;
  MultiViewResult r;
  for (const auto& v : views) {
    contexts.push_back(model.build_context(v, base.prompt));
    const auto cache = model.prepare_decoder(contexts.back());
    const auto h = beam_search(model_scorer(model, cache), grammar_mask(sample.kind, vocab), vocab.size(),
                               Vocabulary::kEos, 1, max_decode_length(sample.kind, model.config()))
                       .front();
    if (std::find(r.candidates.begin(), r.candidates.end(), h.tokens) == r.candidates.end()) {
      r.candidates.push_back(h.tokens);
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& cand : r.candidates) {
    std::vector<double> scores;
    for (const auto& ctx : contexts) {
      const auto lps = token_log_likelihoods(model, ctx, cand);
      scores.push_back(std::accumulate(lps.begin(), lps.end(), 0.0) / static_cast<double>(lps.size()));
    }
    const double avg = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
    r.view_scores.push_back(scores);
    if (avg > best || (avg == best && cand < r.tokens)) {
      best = avg;
      r.tokens = cand;
    }
  }
  r.score = best;
  r.prediction = parse_output(TokenSequence{r.tokens, sample.kind}, vocab, base.meta);
  return r;
}

// --- tracking ---------------------------------------------------------------

TrackState TrackState::start(const VideoClip& sequence, const BoundingBox& first_box, double threshold,
                             double context) {
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("template threshold must lie in (0, 1)");
  if (!first_box.valid_in(sequence.width, sequence.height) || first_box.area() <= 0) {
    throw InputError("first box is not a valid box in frame 0");
  }
  TrackState s;
  s.template_frame = crop_resize(sequence, 0, first_box, context, sequence.height, sequence.width);
  s.reference = first_box;
  s.threshold = threshold;
  s.context = context;
  return s;
}

bool TrackState::observe(const VideoClip& sequence, int frame, const BoundingBox& predicted, double conf,
                         bool* degenerate) {
  confidence = conf;
  const bool bad = !(predicted.area() > 0);
  if (degenerate) *degenerate = bad;
  if (bad) return false;
  reference = predicted;
  if (conf < threshold) return false;
  template_frame = crop_resize(sequence, frame, predicted, context, sequence.height, sequence.width);
  template_source = frame;
  return true;
}

template <typename T>
TrackResult track_video(const Model<T>& model, const Vocabulary& vocab, const VideoClip& sequence,
                        const BoundingBox& first_box, int beam, double threshold) {
  const auto& cfg = model.config();
  if (sequence.height != cfg.height || sequence.width != cfg.width) {
    throw DimensionError("track_video: sequence frame size does not match the model");
  }
  TrackState state = TrackState::start(sequence, first_box, threshold);
  TrackResult r;
  r.boxes.push_back(first_box);
  r.confidences.push_back(1.0);
  r.template_updated.push_back(false);
  r.degenerate.push_back(false);
  const ClipMeta meta = ClipMeta::of(sequence);
  for (int t = 1; t < sequence.frames; ++t) {
    PreparedSample in;
    in.id = "track";
    in.kind = TaskKind::VOT;
    in.meta = meta;
    in.clip = tracking_clip(state.template_frame, sequence, t, cfg.frames);
    in.prompt.task = vocab.task_token(TaskKind::VOT);
    const auto q = quantize_box(vocab, state.reference, meta.width, meta.height);
    in.prompt.box.assign(q.begin(), q.end());
    const auto res = infer_prepared(model, vocab, in, beam);
    const BoundingBox predicted = std::get<Trajectory>(res.prediction.value).front();
    bool degenerate = false;
    const bool updated = state.observe(sequence, t, predicted, res.confidence, &degenerate);
    r.boxes.push_back(state.reference);
    r.confidences.push_back(res.confidence);
    r.template_updated.push_back(updated);
    r.degenerate.push_back(degenerate);
    r.tokens.insert(r.tokens.end(), res.best.tokens.begin(), res.best.tokens.end());
  }
  return r;
}

// --- records ----------------------------------------------------------------

namespace {

void set_flags(PredictionRecord& r, const Prediction& p, bool forced) {
  r.flags["empty"] = p.empty;
  r.flags["swapped"] = p.swapped;
  r.flags["clipped"] = p.clipped;
  r.flags["forced"] = forced;
}

}  // namespace

template <typename T>
PredictionRecord predict(const Model<T>& model, const Vocabulary& vocab, const TaskSample& sample, int beam,
                         double threshold) {
  PredictionRecord r;
  r.id = sample.id;
  r.kind = sample.kind;
  const bool pair = sample.kind == TaskKind::VOT && sample.clip.frames == 2 &&
                    std::get<Trajectory>(sample.target).size() == 2;
  if (sample.kind == TaskKind::VOT && !pair) {
    if (!sample.prompt_box) throw InputError("predict: VOT sample " + sample.id + " has no prompt box");
    const auto t = track_video(model, vocab, sample.clip, *sample.prompt_box, beam, threshold);
    r.value = t.boxes;
    r.tokens = t.tokens;
    double s = 0;
    for (std::size_t i = 1; i < t.confidences.size(); ++i) s += t.confidences[i];
    r.confidence = t.confidences.size() > 1 ? s / static_cast<double>(t.confidences.size() - 1) : 1.0;
    r.flags["degenerate"] = std::find(t.degenerate.begin(), t.degenerate.end(), true) != t.degenerate.end();
    return r;
  }
  const auto res = infer_sample(model, vocab, sample, beam);
  r.tokens = res.best.tokens;
  r.confidence = res.confidence;
  set_flags(r, res.prediction, res.best.forced);
  if (pair) {
    r.value = Trajectory{*sample.prompt_box, std::get<Trajectory>(res.prediction.value).front()};
  } else {
    r.value = res.prediction.value;
  }
  return r;
}

#define VIDSEQ_ENGINE_INSTANTIATE(T)                                                                              \
  template Tensor<T> sample_loss(const Model<T>&, const PreparedSample&);                                        \
  template double train_step(Model<T>&, AdamW<T>&, const std::vector<PreparedSample>&);                         \
  template Container make_checkpoint(const Model<T>&, const Vocabulary&, const AdamW<T>*,                        \
                                     const std::map<std::string, std::string>&);                                 \
  template void save_checkpoint(const fs::path&, const Model<T>&, const Vocabulary&, const AdamW<T>*,            \
                                const std::map<std::string, std::string>&);                                      \
  template void restore_parameters(Model<T>&, const Container&);                                                 \
  template void restore_optimizer(AdamW<T>&, const Model<T>&, const Container&);                                 \
  template StepScorer model_scorer(const Model<T>&, const DecoderCache<T>&);                                      \
  template std::vector<double> token_log_likelihoods(const Model<T>&, const MultimodalContext<T>&,               \
                                                     std::span<const TokenId>);                                  \
  template InferenceResult infer_prepared(const Model<T>&, const Vocabulary&, const PreparedSample&, int);       \
  template InferenceResult infer_sample(const Model<T>&, const Vocabulary&, const TaskSample&, int);             \
  template MultiViewResult multi_clip_average(const Model<T>&, const Vocabulary&, const TaskSample&, int, int);  \
  template TrackResult track_video(const Model<T>&, const Vocabulary&, const VideoClip&, const BoundingBox&, int, \
                                   double);                                                                       \
  template PredictionRecord predict(const Model<T>&, const Vocabulary&, const TaskSample&, int, double);

VIDSEQ_ENGINE_INSTANTIATE(float)
VIDSEQ_ENGINE_INSTANTIATE(double)

}  // namespace vidseq
