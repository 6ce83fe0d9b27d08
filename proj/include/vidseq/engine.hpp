#pragma once

// Training (teacher-forced cross-entropy, separate or joint task mode) and
// inference (grammar-constrained beam search, multi-clip scoring, tracking).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vidseq/checkpoint.hpp"
#include "vidseq/codec.hpp"
#include "vidseq/model.hpp"
#include "vidseq/optim.hpp"
#include "vidseq/records.hpp"
#include "vidseq/vocabulary.hpp"

namespace vidseq {

// --- input preparation ------------------------------------------------------

// Frame indices for a model input of `count` frames drawn from `available`.
// Uniform picks the centre of each of `count` equal segments, shifted by
// offset in [0, 1) (0.5 is the centre); random draws a sorted subset.
std::vector<int> uniform_indices(int available, int count, double offset = 0.5);
std::vector<int> random_indices(int available, int count, std::mt19937_64& rng);

// Tracking input: the template frame repeated over the first half of the
// clip, the search frame over the second half.
VideoClip tracking_clip(const VideoClip& template_frame, const VideoClip& search, int search_frame, int frames);

struct PreparedSample {
  std::string id;
  TaskKind kind = TaskKind::AR;
  VideoClip clip;                // exactly config.frames frames
  PromptTokens prompt;
  std::vector<TokenId> target;   // EOS-terminated
  ClipMeta meta;                 // of the source clip (duration / frame size)
};

// Builds the model input. With rng the training policy is used (random
// frames, random tracking pair for VOT sequences), otherwise the evaluation
// policy (uniform frames, first two frames of a VOT sequence).
PreparedSample prepare_sample(const TaskSample& sample, const Vocabulary& vocab, const ModelConfig& config,
                              std::mt19937_64* rng = nullptr);

// --- training ---------------------------------------------------------------

template <typename T>
Tensor<T> sample_loss(const Model<T>& model, const PreparedSample& sample);

// Mean of the per-sample losses; zero_grad, backward, one optimizer step.
template <typename T>
double train_step(Model<T>& model, AdamW<T>& optimizer, const std::vector<PreparedSample>& batch);

enum class TrainMode { Separate, Joint };
TrainMode parse_mode(std::string_view name);
std::string_view mode_name(TrainMode mode);

struct TrainConfig {
  std::vector<TaskKind> tasks;
  TrainMode mode = TrainMode::Separate;
  int steps = 100;
  int batch = 8;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::int64_t horizon = 0;  // 0: equal to steps
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: final checkpoint only
  bool augment = true;       // false: evaluation input policy every step
  std::filesystem::path out_dir;  // empty: nothing written

  void validate() const;
  std::map<std::string, std::string> to_map() const;
};

struct LogEntry {
  std::int64_t step = 0;
  TaskKind task = TaskKind::AR;
  double loss = 0;
  double lr = 0;
  bool operator==(const LogEntry&) const = default;
};

std::string log_entry_json(const LogEntry& e);

// Task trained at a step and the sample indices of its batch; a pure
// function of (config, step, pool size).
TaskKind task_for_step(const TrainConfig& cfg, std::int64_t step);
std::vector<std::size_t> batch_indices(const TrainConfig& cfg, std::int64_t step, std::size_t pool);

using TaskData = std::map<TaskKind, std::vector<TaskSample>>;

struct TrainResult {
  std::vector<LogEntry> log;
  std::int64_t final_step = 0;
};

// Runs steps [optimizer.steps_taken(), cfg.steps). Writes metrics.jsonl,
// periodic checkpoint-<step>.ovid and checkpoint.ovid under cfg.out_dir.
TrainResult run_training(const TrainConfig& cfg, const TaskData& data, Model<float>& model, AdamW<float>& optimizer,
                         const Vocabulary& vocab, const std::function<void(const LogEntry&)>& on_step = {});

AdamWOptions optimizer_options(const TrainConfig& cfg);

// --- checkpoints ------------------------------------------------------------

std::map<std::string, std::string> vocabulary_to_map(const Vocabulary& vocab);
Vocabulary vocabulary_from_map(const std::map<std::string, std::string>& kv);

// Parameters as "param.<name>", optimizer moments as "adam.m.<name>" and
// "adam.v.<name>"; config holds model.*, vocab.*, train.step and `extra`.
template <typename T>
Container make_checkpoint(const Model<T>& model, const Vocabulary& vocab, const AdamW<T>* optimizer,
                          const std::map<std::string, std::string>& extra = {});
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const Vocabulary& vocab,
                     const AdamW<T>* optimizer, const std::map<std::string, std::string>& extra = {});

struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab = Vocabulary::build({}, 2, 2);
  std::int64_t step = 0;
  Container container;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint checkpoint_from_container(Container c);
template <typename T>
void restore_parameters(Model<T>& model, const Container& c);
template <typename T>
void restore_optimizer(AdamW<T>& optimizer, const Model<T>& model, const Container& c);

// --- decoding ---------------------------------------------------------------

// Log-softmax over the full vocabulary, in double.
std::vector<double> log_softmax(std::span<const double> logits);

// Returns next-token logits (unnormalized) for a prefix.
using StepScorer = std::function<std::vector<double>(std::span<const TokenId> prefix)>;
// Returns the allowed-token mask for a prefix.
using StepMask = std::function<std::vector<std::uint8_t>(std::span<const TokenId> prefix)>;

struct BeamHypothesis {
  std::vector<TokenId> tokens;        // ends with EOS
  std::vector<double> token_log_probs;
  double score = 0;                   // sum of token_log_probs
  bool forced = false;                // EOS appended at max_len
};

// Live beams keep the B best non-EOS continuations overall; a beam's EOS
// continuation is retired to the finished pool when it is among that beam's
// 2B-1 most likely allowed continuations. Scores are unnormalized log-prob
// sums under the full softmax; ties go to the lexicographically smaller
// sequence. Stops when no live beam can beat the best finished one.
std::vector<BeamHypothesis> beam_search(const StepScorer& scorer, const StepMask& mask, int vocab_size,
                                        TokenId eos, int beam, int max_len);

// Argmax decoding under the same mask.
BeamHypothesis greedy_decode(const StepScorer& scorer, const StepMask& mask, int vocab_size, TokenId eos, int max_len);

StepMask grammar_mask(TaskKind kind, const Vocabulary& vocab);

template <typename T>
StepScorer model_scorer(const Model<T>& model, const DecoderCache<T>& cache);

// Teacher-forced per-token log-probabilities of tokens (EOS included).
template <typename T>
std::vector<double> token_log_likelihoods(const Model<T>& model, const MultimodalContext<T>& context,
                                          std::span<const TokenId> tokens);

int max_decode_length(TaskKind kind, const ModelConfig& config);

struct InferenceResult {
  Prediction prediction;
  BeamHypothesis best;
  std::vector<BeamHypothesis> beams;
  double confidence = 0;  // mean probability of the emitted tokens
};

// Mean token probability; EOS counts only for an empty sequence.
double sequence_confidence(const BeamHypothesis& h);

template <typename T>
InferenceResult infer_prepared(const Model<T>& model, const Vocabulary& vocab, const PreparedSample& input, int beam);
template <typename T>
InferenceResult infer_sample(const Model<T>& model, const Vocabulary& vocab, const TaskSample& sample, int beam);

struct MultiViewResult {
  std::vector<TokenId> tokens;
  double score = 0;                         // average of per-view mean log-probs
  std::vector<std::vector<TokenId>> candidates;
  std::vector<std::vector<double>> view_scores;  // [candidate][view]
  Prediction prediction;
};

// Views: n_clips temporal offsets times n_crops spatial crops.
std::vector<VideoClip> multi_views(const VideoClip& clip, int frames, int n_clips, int n_crops);

template <typename T>
MultiViewResult multi_clip_average(const Model<T>& model, const Vocabulary& vocab, const TaskSample& sample,
                                   int n_clips, int n_crops);

// --- tracking ---------------------------------------------------------------

inline constexpr double kTemplateThreshold = 0.03;

struct TrackState {
  VideoClip template_frame;  // one frame, already cropped and resized
  int template_source = 0;   // frame the template was cropped from
  BoundingBox reference;
  double confidence = 1.0;
  double threshold = kTemplateThreshold;
  double context = 2.0;

  static TrackState start(const VideoClip& sequence, const BoundingBox& first_box, double threshold = kTemplateThreshold,
                          double context = 2.0);
  // Applies one prediction for `frame`. A zero-area box keeps the previous
  // reference and sets *degenerate. Returns true when the template was
  // re-cropped (confidence >= threshold).
  bool observe(const VideoClip& sequence, int frame, const BoundingBox& predicted, double confidence,
               bool* degenerate = nullptr);
};

struct TrackResult {
  Trajectory boxes;  // boxes[0] is the given first box
  std::vector<double> confidences;
  std::vector<bool> template_updated;
  std::vector<bool> degenerate;
  std::vector<TokenId> tokens;  // 4 box tokens + EOS per tracked frame
};

template <typename T>
TrackResult track_video(const Model<T>& model, const Vocabulary& vocab, const VideoClip& sequence,
                        const BoundingBox& first_box, int beam, double threshold = kTemplateThreshold);

// --- records ----------------------------------------------------------------

// One record per sample. VOT sequences are tracked from their first box;
// a two-frame VOT pair is decoded once and reported as {prompt, predicted}.
template <typename T>
PredictionRecord predict(const Model<T>& model, const Vocabulary& vocab, const TaskSample& sample, int beam,
                         double threshold = kTemplateThreshold);

}  // namespace vidseq
