#pragma once

// Task codecs: structured targets <-> token sequences, prompt encoding,
// and the per-task decoding grammar used to constrain generation.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "vidseq/types.hpp"
#include "vidseq/video.hpp"
#include "vidseq/vocabulary.hpp"

namespace vidseq {

struct ClipMeta {
  double duration = 0;
  double width = 0;
  double height = 0;

  static ClipMeta of(const VideoClip& clip) {
    return {clip.duration, static_cast<double>(clip.width), static_cast<double>(clip.height)};
  }
};

struct TextTarget {
  std::vector<std::string> words;
  bool operator==(const TextTarget&) const = default;
};

struct Event {
  TimeSpan span;
  std::vector<std::string> words;
  bool operator==(const Event&) const = default;
};

using EventSet = std::vector<Event>;
using Trajectory = std::vector<BoundingBox>;

// Action name / caption / answer, dense events, or per-frame boxes.
using GroundTruth = std::variant<TextTarget, EventSet, Trajectory>;

struct TaskSample {
  std::string id;
  TaskKind kind = TaskKind::AR;
  VideoClip clip;
  std::optional<std::vector<std::string>> prompt_sentence;  // ViQA only
  std::optional<BoundingBox> prompt_box;                   // VOT only
  GroundTruth target;

  // Checks the prompt/kind pairing and the target alternative.
  void validate() const;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  TaskKind kind = TaskKind::AR;
};

struct PromptTokens {
  TokenId task = Vocabulary::kPad;
  std::vector<TokenId> sentence;
  std::vector<TokenId> box;

  std::size_t size() const { return 1 + sentence.size() + box.size(); }
  std::vector<TokenId> flatten() const;
};

struct Prediction {
  TaskKind kind = TaskKind::AR;
  GroundTruth value;
  bool empty = false;    // generation ended immediately
  bool swapped = false;  // a box had its corners reordered
  bool clipped = false;  // a span was cut at the video duration
};

TokenSequence encode_target(const TaskSample& sample, const Vocabulary& vocab, const ClipMeta& meta);
PromptTokens encode_prompt(const TaskSample& sample, const Vocabulary& vocab, const ClipMeta& meta);
Prediction parse_output(const TokenSequence& seq, const Vocabulary& vocab, const ClipMeta& meta);

// Drops a trailing incomplete unit (partial DVP triplet) and terminates with
// EOS, so a force-terminated generation stays parseable.
std::vector<TokenId> truncate_to_complete(std::span<const TokenId> ids, TaskKind kind,
                                          const Vocabulary& vocab);

// Allowed token kinds as a bit set.
enum KindBit : std::uint8_t { kAllowWord = 1, kAllowTime = 2, kAllowBox = 4, kAllowEos = 8 };

class GrammarState {
 public:
  explicit GrammarState(TaskKind kind) : kind_(kind) {}

  TaskKind kind() const { return kind_; }
  std::size_t position() const { return position_; }
  bool finished() const { return finished_; }
  std::uint8_t allowed_kinds() const;
  bool allows(TokenId id, const Vocabulary& vocab) const;
  // Throws ParseError if the token is not allowed here.
  void advance(TokenId id, const Vocabulary& vocab);

 private:
  TaskKind kind_;
  std::size_t position_ = 0;
  int phase_ = 0;  // DVP: 0 start, 1 duration, 2 first word, 3 more words
  bool finished_ = false;
};

// 0/1 mask over the whole vocabulary.
std::vector<std::uint8_t> allowed_next(const GrammarState& state, const Vocabulary& vocab);

}  // namespace vidseq
