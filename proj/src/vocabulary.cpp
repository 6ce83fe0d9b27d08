#include "vidseq/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "vidseq/error.hpp"

namespace vidseq {

namespace {

constexpr std::string_view kManifestHeader = "#vidseq-vocabulary 1";

const std::array<std::string, Vocabulary::kNumSpecials>& special_tokens() {
  static const std::array<std::string, Vocabulary::kNumSpecials> names{
      "<pad>", "<bos>", "<eos>", "<unk>", "<task_ar>", "<task_cc>", "<task_viqa>", "<task_dvp>", "<task_vot>"};
  return names;
}

std::string time_surface(int bin) { return "<time_" + std::to_string(bin) + ">"; }
std::string box_surface(int bin) { return "<box_" + std::to_string(bin) + ">"; }

}  // namespace

std::string_view token_kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::Special: return "special";
    case TokenKind::Word: return "word";
    case TokenKind::Time: return "time";
    case TokenKind::Box: return "box";
  }
  return "?";
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus_words, int n_time, int n_box) {
  if (n_time < 2 || n_box < 2) throw DomainError("n_time and n_box must be at least 2");
  std::set<std::string> words;
  for (const auto& raw : corpus_words) {
    for (auto& w : split_words(raw)) {
      if (w.front() == '<') throw DomainError("word '" + w + "' collides with reserved token syntax");
      words.insert(std::move(w));
    }
  }
  Vocabulary v;
  v.n_words_ = static_cast<int>(words.size());
  v.n_time_ = n_time;
  v.n_box_ = n_box;
  v.tokens_.reserve(kNumSpecials + words.size() + static_cast<std::size_t>(n_time + n_box));
  for (const auto& s : special_tokens()) v.tokens_.push_back(s);
  for (const auto& w : words) v.tokens_.push_back(w);
  for (int b = 0; b < n_time; ++b) v.tokens_.push_back(time_surface(b));
  for (int b = 0; b < n_box; ++b) v.tokens_.push_back(box_surface(b));
  v.index();
  return v;
}

void Vocabulary::index() {
  lookup_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) lookup_.emplace(tokens_[i], static_cast<TokenId>(i));
}

void Vocabulary::write_manifest(std::ostream& out) const {
  out << kManifestHeader << '\n';
  const char* headers[] = {"[special]", "[word]", "[time]", "[box]"};
  const TokenId starts[] = {0, word_begin(), time_begin(), box_begin(), static_cast<TokenId>(size())};
  for (int s = 0; s < 4; ++s) {
    out << headers[s] << '\n';
    for (TokenId id = starts[s]; id < starts[s + 1]; ++id) out << tokens_[static_cast<std::size_t>(id)] << '\n';
  }
}

Vocabulary Vocabulary::read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw FormatError("vocabulary manifest: bad header");
  std::vector<std::string> sections[4];
  int section = -1;
  const std::string headers[] = {"[special]", "[word]", "[time]", "[box]"};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto h = std::find(std::begin(headers), std::end(headers), line);
    if (h != std::end(headers)) {
      const int next = static_cast<int>(h - std::begin(headers));
      if (next != section + 1) throw FormatError("vocabulary manifest: sections out of order");
      section = next;
      continue;
    }
    if (section < 0) throw FormatError("vocabulary manifest: token before first section");
    sections[section].push_back(line);
  }
  if (section != 3) throw FormatError("vocabulary manifest: missing sections");
  if (!std::equal(sections[0].begin(), sections[0].end(), special_tokens().begin(), special_tokens().end())) {
    throw FormatError("vocabulary manifest: special tokens differ from this build");
  }
  Vocabulary v = build(sections[1], static_cast<int>(sections[2].size()), static_cast<int>(sections[3].size()));
  if (v.n_words_ != static_cast<int>(sections[1].size()) ||
      !std::equal(sections[1].begin(), sections[1].end(), v.tokens_.begin() + kNumSpecials)) {
    throw FormatError("vocabulary manifest: word section is not sorted and unique");
  }
  for (int b = 0; b < v.n_time_; ++b)
    if (sections[2][static_cast<std::size_t>(b)] != time_surface(b)) throw FormatError("vocabulary manifest: bad time token");
  for (int b = 0; b < v.n_box_; ++b)
    if (sections[3][static_cast<std::size_t>(b)] != box_surface(b)) throw FormatError("vocabulary manifest: bad box token");
  return v;
}

TokenKind Vocabulary::kind(TokenId id) const {
  if (id < 0 || id >= size()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  if (id < word_begin()) return TokenKind::Special;
  if (id < time_begin()) return TokenKind::Word;
  if (id < box_begin()) return TokenKind::Time;
  return TokenKind::Box;
}

const std::string& Vocabulary::token(TokenId id) const {
  kind(id);
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view surface) const {
  auto it = lookup_.find(std::string(surface));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::word_id(std::string_view word) const {
  auto id = find(word);
  if (!id || kind(*id) != TokenKind::Word) return kUnk;
  return *id;
}

std::vector<TokenId> Vocabulary::encode_text(std::string_view text) const {
  const auto words = split_words(text);
  return encode_words(words);
}

std::vector<TokenId> Vocabulary::encode_words(std::span<const std::string> words) const {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(word_id(w));
  return ids;
}

TokenId Vocabulary::task_token(TaskKind task) const { return 4 + static_cast<TokenId>(task); }

TokenId Vocabulary::time_token(int bin) const {
  if (bin < 0 || bin >= n_time_) throw IndexError("time bin out of range");
  return time_begin() + bin;
}

TokenId Vocabulary::box_token(int bin) const {
  if (bin < 0 || bin >= n_box_) throw IndexError("box bin out of range");
  return box_begin() + bin;
}

int Vocabulary::time_bin(TokenId id) const {
  if (kind(id) != TokenKind::Time) throw KindError("token " + token(id) + " is not a time token");
  return id - time_begin();
}

int Vocabulary::box_bin(TokenId id) const {
  if (kind(id) != TokenKind::Box) throw KindError("token " + token(id) + " is not a box token");
  return id - box_begin();
}

// --- quantization -----------------------------------------------------------

int quantize_bin(double value, double extent, int n_bins) {
  if (!(extent > 0)) throw DomainError("quantization extent must be positive");
  if (n_bins < 1) throw DomainError("bin count must be positive");
  if (!(value >= 0 && value <= extent)) {
    throw DomainError("value " + std::to_string(value) + " outside [0, " + std::to_string(extent) + "]");
  }
  const int bin = static_cast<int>(std::floor(value / extent * n_bins));
  return std::clamp(bin, 0, n_bins - 1);
}

double bin_center(int bin, double extent, int n_bins) {
  return (static_cast<double>(bin) + 0.5) / static_cast<double>(n_bins) * extent;
}

TokenId quantize_time(const Vocabulary& vocab, double t, double video_duration) {
  return vocab.time_token(quantize_bin(t, video_duration, vocab.n_time()));
}

double dequantize_time(const Vocabulary& vocab, TokenId token, double video_duration) {
  return bin_center(vocab.time_bin(token), video_duration, vocab.n_time());
}

std::array<int, 4> quantize_box_bins(const BoundingBox& box, double width, double height, int n_box) {
  if (!box.valid_in(width, height)) throw DomainError("bounding box outside the frame or inverted");
  return {quantize_bin(box.x1, width, n_box), quantize_bin(box.y1, height, n_box),
          quantize_bin(box.x2, width, n_box), quantize_bin(box.y2, height, n_box)};
}

std::array<TokenId, 4> quantize_box(const Vocabulary& vocab, const BoundingBox& box, double width,
                                    double height) {
  const auto bins = quantize_box_bins(box, width, height, vocab.n_box());
  return {vocab.box_token(bins[0]), vocab.box_token(bins[1]), vocab.box_token(bins[2]),
          vocab.box_token(bins[3])};
}

DequantizedBox dequantize_box_bins(std::span<const int> bins, double width, double height, int n_box) {
  if (bins.size() != 4) throw FormatError("a box needs exactly four coordinates");
  DequantizedBox out;
  out.box = {bin_center(bins[0], width, n_box), bin_center(bins[1], height, n_box),
             bin_center(bins[2], width, n_box), bin_center(bins[3], height, n_box)};
  if (out.box.x1 > out.box.x2) {
    std::swap(out.box.x1, out.box.x2);
    out.swapped = true;
  }
  if (out.box.y1 > out.box.y2) {
    std::swap(out.box.y1, out.box.y2);
    out.swapped = true;
  }
  return out;
}

DequantizedBox dequantize_box(const Vocabulary& vocab, std::span<const TokenId> tokens, double width,
                              double height) {
  if (tokens.size() != 4) throw FormatError("a box needs exactly four box tokens");
  std::array<int, 4> bins{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (vocab.kind(tokens[i]) != TokenKind::Box) throw FormatError("non-box token inside a box");
    bins[i] = vocab.box_bin(tokens[i]);
  }
  return dequantize_box_bins(bins, width, height, vocab.n_box());
}

}  // namespace vidseq
