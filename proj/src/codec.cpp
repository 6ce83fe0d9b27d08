#include "vidseq/codec.hpp"

#include <algorithm>

#include "vidseq/error.hpp"

namespace vidseq {

void TaskSample::validate() const {
  if (prompt_sentence.has_value() != (kind == TaskKind::ViQA)) {
    throw InputError(id + ": a sentence prompt is required for ViQA and only for ViQA");
  }
  if (prompt_box.has_value() != (kind == TaskKind::VOT)) {
    throw InputError(id + ": a box prompt is required for VOT and only for VOT");
  }
  const bool ok = (kind == TaskKind::DVP && std::holds_alternative<EventSet>(target)) ||
                  (kind == TaskKind::VOT && std::holds_alternative<Trajectory>(target)) ||
                  (kind != TaskKind::DVP && kind != TaskKind::VOT && std::holds_alternative<TextTarget>(target));
  if (!ok) throw InputError(id + ": target does not match task " + std::string(task_name(kind)));
}

std::vector<TokenId> PromptTokens::flatten() const {
  std::vector<TokenId> out;
  out.reserve(size());
  out.push_back(task);
  out.insert(out.end(), sentence.begin(), sentence.end());
  out.insert(out.end(), box.begin(), box.end());
  return out;
}

TokenSequence encode_target(const TaskSample& sample, const Vocabulary& vocab, const ClipMeta& meta) {
  sample.validate();
  TokenSequence seq;
  seq.kind = sample.kind;
  switch (sample.kind) {
    case TaskKind::AR:
    case TaskKind::CC:
    case TaskKind::ViQA:
      seq.ids = vocab.encode_words(std::get<TextTarget>(sample.target).words);
      break;
    case TaskKind::DVP: {
      auto events = std::get<EventSet>(sample.target);
      if (events.empty()) throw DomainError(sample.id + ": dense captioning needs at least one event");
      std::stable_sort(events.begin(), events.end(),
                       [](const Event& a, const Event& b) { return a.span.start < b.span.start; });
      for (const auto& e : events) {
        if (!e.span.valid_within(meta.duration)) throw DomainError(sample.id + ": event outside clip duration");
        if (e.words.empty()) throw DomainError(sample.id + ": event caption is empty");
        seq.ids.push_back(quantize_time(vocab, e.span.start, meta.duration));
        seq.ids.push_back(quantize_time(vocab, e.span.duration, meta.duration));
        const auto words = vocab.encode_words(e.words);
        seq.ids.insert(seq.ids.end(), words.begin(), words.end());
      }
      break;
    }
    case TaskKind::VOT: {
      const auto& traj = std::get<Trajectory>(sample.target);
      if (traj.empty()) throw DomainError(sample.id + ": empty trajectory");
      const auto box = quantize_box(vocab, traj.back(), meta.width, meta.height);
      seq.ids.assign(box.begin(), box.end());
      break;
    }
  }
  seq.ids.push_back(Vocabulary::kEos);
  return seq;
}

PromptTokens encode_prompt(const TaskSample& sample, const Vocabulary& vocab, const ClipMeta& meta) {
  PromptTokens p;
  p.task = vocab.task_token(sample.kind);
  if (sample.kind == TaskKind::ViQA && sample.prompt_sentence) p.sentence = vocab.encode_words(*sample.prompt_sentence);
  if (sample.kind == TaskKind::VOT && sample.prompt_box) {
    const auto box = quantize_box(vocab, *sample.prompt_box, meta.width, meta.height);
    p.box.assign(box.begin(), box.end());
  }
  return p;
}

namespace {

std::string word_of(const Vocabulary& vocab, TokenId id, std::size_t pos) {
  const auto k = vocab.kind(id);
  if (k == TokenKind::Word || id == Vocabulary::kUnk) return vocab.token(id);
  throw ParseError(pos, "expected a word, found " + vocab.token(id));
}

}  // namespace

Prediction parse_output(const TokenSequence& seq, const Vocabulary& vocab, const ClipMeta& meta) {
  const auto& ids = seq.ids;
  auto eos = std::find(ids.begin(), ids.end(), Vocabulary::kEos);
  if (eos == ids.end()) throw ParseError(ids.size(), "sequence does not end with EOS");
  const std::size_t n = static_cast<std::size_t>(eos - ids.begin());
  if (n + 1 != ids.size()) throw ParseError(n + 1, "tokens after EOS");
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= vocab.size()) throw ParseError(i, "token id outside vocabulary");
  }

  Prediction pred;
  pred.kind = seq.kind;
  pred.empty = (n == 0);
  switch (seq.kind) {
    case TaskKind::AR:
    case TaskKind::CC:
    case TaskKind::ViQA: {
      TextTarget text;
      for (std::size_t i = 0; i < n; ++i) text.words.push_back(word_of(vocab, ids[i], i));
      pred.value = std::move(text);
      break;
    }
    case TaskKind::DVP: {
      EventSet events;
      std::size_t i = 0;
      while (i < n) {
        if (vocab.kind(ids[i]) != TokenKind::Time) throw ParseError(i, "expected a start-time token");
        if (i + 1 >= n || vocab.kind(ids[i + 1]) != TokenKind::Time) {
          throw ParseError(i + 1, "expected a duration-time token");
        }
        Event e;
        e.span.start = std::min(dequantize_time(vocab, ids[i], meta.duration), meta.duration);
        e.span.duration = dequantize_time(vocab, ids[i + 1], meta.duration);
        if (e.span.end() > meta.duration) {
          e.span.duration = meta.duration - e.span.start;
          pred.clipped = true;
        }
        i += 2;
        while (i < n && vocab.kind(ids[i]) != TokenKind::Time) {
          e.words.push_back(word_of(vocab, ids[i], i));
          ++i;
        }
        if (e.words.empty()) throw ParseError(i, "event without caption");
        events.push_back(std::move(e));
      }
      std::stable_sort(events.begin(), events.end(),
                       [](const Event& a, const Event& b) { return a.span.start < b.span.start; });
      pred.value = std::move(events);
      break;
    }
    case TaskKind::VOT: {
      for (std::size_t i = 0; i < n; ++i) {
        if (i >= 4) throw ParseError(i, "more than four box tokens");
        if (vocab.kind(ids[i]) != TokenKind::Box) throw ParseError(i, "expected a box token");
      }
      if (n != 4) throw ParseError(n, "expected four box tokens before EOS");
      const auto dq = dequantize_box(vocab, std::span(ids.data(), 4), meta.width, meta.height);
      pred.swapped = dq.swapped;
      pred.value = Trajectory{dq.box};
      break;
    }
  }
  return pred;
}

std::vector<TokenId> truncate_to_complete(std::span<const TokenId> ids, TaskKind kind, const Vocabulary& vocab) {
  std::vector<TokenId> body(ids.begin(), std::find(ids.begin(), ids.end(), Vocabulary::kEos));
  if (kind == TaskKind::DVP) {
    // keep events that have (start, duration, >=1 word)
    std::size_t keep = 0;
    std::size_t i = 0;
    while (i + 1 < body.size() && vocab.kind(body[i]) == TokenKind::Time &&
           vocab.kind(body[i + 1]) == TokenKind::Time) {
      std::size_t j = i + 2;
      while (j < body.size() && vocab.kind(body[j]) == TokenKind::Word) ++j;
      if (j == i + 2) break;
      keep = j;
      i = j;
    }
    body.resize(keep);
  } else if (kind == TaskKind::VOT) {
    if (body.size() != 4) body.clear();
  }
  body.push_back(Vocabulary::kEos);
  return body;
}

// --- grammar ----------------------------------------------------------------

std::uint8_t GrammarState::allowed_kinds() const {
  if (finished_) return 0;
  switch (kind_) {
    case TaskKind::AR:
    case TaskKind::CC:
    case TaskKind::ViQA:
      return kAllowWord | kAllowEos;
    case TaskKind::DVP:
      switch (phase_) {
        case 0:
        case 1: return kAllowTime;
        case 2: return kAllowWord;
        default: return kAllowWord | kAllowTime | kAllowEos;
      }
    case TaskKind::VOT:
      return position_ < 4 ? kAllowBox : kAllowEos;
  }
  return 0;
}

bool GrammarState::allows(TokenId id, const Vocabulary& vocab) const {
  const std::uint8_t allowed = allowed_kinds();
  if (id == Vocabulary::kEos) return (allowed & kAllowEos) != 0;
  if (id < 0 || id >= vocab.size()) return false;
  switch (vocab.kind(id)) {
    case TokenKind::Word: return (allowed & kAllowWord) != 0;
    case TokenKind::Time: return (allowed & kAllowTime) != 0;
    case TokenKind::Box: return (allowed & kAllowBox) != 0;
    case TokenKind::Special: return false;
  }
  return false;
}

void GrammarState::advance(TokenId id, const Vocabulary& vocab) {
  if (!allows(id, vocab)) {
    const std::string surface = (id >= 0 && id < vocab.size()) ? vocab.token(id) : std::to_string(id);
    throw ParseError(position_, "token " + surface + " not allowed by the " +
                                    std::string(task_name(kind_)) + " grammar");
  }
  ++position_;
  if (id == Vocabulary::kEos) {
    finished_ = true;
    return;
  }
  if (kind_ == TaskKind::DVP) {
    const bool is_time = vocab.kind(id) == TokenKind::Time;
    switch (phase_) {
      case 0: phase_ = 1; break;
      case 1: phase_ = 2; break;
      case 2: phase_ = 3; break;
      default: phase_ = is_time ? 1 : 3; break;
    }
  }
}

std::vector<std::uint8_t> allowed_next(const GrammarState& state, const Vocabulary& vocab) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(vocab.size()), 0);
  const std::uint8_t allowed = state.allowed_kinds();
  auto fill = [&](TokenId begin, TokenId end) {
    std::fill(mask.begin() + begin, mask.begin() + end, std::uint8_t{1});
  };
  if (allowed & kAllowWord) fill(vocab.word_begin(), vocab.time_begin());
  if (allowed & kAllowTime) fill(vocab.time_begin(), vocab.box_begin());
  if (allowed & kAllowBox) fill(vocab.box_begin(), vocab.size());
  if (allowed & kAllowEos) mask[Vocabulary::kEos] = 1;
  return mask;
}

}  // namespace vidseq
