#pragma once

// Unified token space: specials, then words (sorted), then time tokens,
// then box tokens. Each range is contiguous and the four never overlap.

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vidseq/types.hpp"

namespace vidseq {

enum class TokenKind { Special, Word, Time, Box };

std::string_view token_kind_name(TokenKind kind);

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr int kNumSpecials = 4 + static_cast<int>(kAllTasks.size());

  static constexpr int kDefaultTimeTokens = 300;
  static constexpr int kDefaultBoxTokens = 1000;

  static Vocabulary build(std::span<const std::string> corpus_words,
                          int n_time = kDefaultTimeTokens, int n_box = kDefaultBoxTokens);

  // Text manifest: section headers then one token per line; ids follow line order.
  void write_manifest(std::ostream& out) const;
  static Vocabulary read_manifest(std::istream& in);

  int size() const { return static_cast<int>(tokens_.size()); }
  int n_words() const { return n_words_; }
  int n_time() const { return n_time_; }
  int n_box() const { return n_box_; }

  TokenId word_begin() const { return kNumSpecials; }
  TokenId time_begin() const { return kNumSpecials + n_words_; }
  TokenId box_begin() const { return time_begin() + n_time_; }

  TokenKind kind(TokenId id) const;
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view surface) const;

  // Word lookup with UNK fallback.
  TokenId word_id(std::string_view word) const;
  // Lowercase whitespace tokenization with UNK fallback.
  std::vector<TokenId> encode_text(std::string_view text) const;
  std::vector<TokenId> encode_words(std::span<const std::string> words) const;

  TokenId task_token(TaskKind task) const;
  TokenId time_token(int bin) const;
  TokenId box_token(int bin) const;
  int time_bin(TokenId id) const;  // KindError unless id is a time token
  int box_bin(TokenId id) const;   // KindError unless id is a box token

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  Vocabulary() = default;
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> lookup_;
  int n_words_ = 0;
  int n_time_ = 0;
  int n_box_ = 0;
};

// Splits on whitespace after lowercasing.
std::vector<std::string> split_words(std::string_view text);
std::string join_words(std::span<const std::string> words);

// floor(value / extent * n_bins) clamped to [0, n_bins - 1].
int quantize_bin(double value, double extent, int n_bins);
// (bin + 0.5) / n_bins * extent
double bin_center(int bin, double extent, int n_bins);

TokenId quantize_time(const Vocabulary& vocab, double t, double video_duration);
double dequantize_time(const Vocabulary& vocab, TokenId token, double video_duration);

std::array<int, 4> quantize_box_bins(const BoundingBox& box, double width, double height, int n_box);
std::array<TokenId, 4> quantize_box(const Vocabulary& vocab, const BoundingBox& box, double width,
                                    double height);

struct DequantizedBox {
  BoundingBox box;
  bool swapped = false;  // corners were reordered to restore x1<=x2, y1<=y2
};

DequantizedBox dequantize_box_bins(std::span<const int> bins, double width, double height, int n_box);
DequantizedBox dequantize_box(const Vocabulary& vocab, std::span<const TokenId> tokens, double width,
                              double height);

}  // namespace vidseq
