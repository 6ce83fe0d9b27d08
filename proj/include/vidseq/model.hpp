#pragma once

// Video encoder -> prompt encoder -> MQ-former (content + sentence + box
// queries) -> temporal encoder -> visual translator -> causal token decoder.
//
// Shapes follow the usual symbols: F is T_f x H_f x W_f x C_f, G is
// L_g x C_g, Q is (T_f * N_q) x C_q and the multimodal context M is
// (L_g + T_f * N_q) x C_g.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vidseq/codec.hpp"
#include "vidseq/tensor.hpp"
#include "vidseq/video.hpp"

namespace vidseq {

struct ModelConfig {
  int frames = 8;          // T, frames per input clip
  int t_f = 4;             // T_f, temporal slices after strided grouping
  int height = 64;
  int width = 64;
  int patch = 8;           // H_f = height / patch, W_f = width / patch
  int c_f = 64;
  int video_layers = 1;
  int l_g = 16;            // prompt length cap
  int c_g = 64;            // text / decoder width
  int text_layers = 1;
  int n_q = 32;
  int c_q = 64;
  int mq_layers = 2;
  int decoder_layers = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int max_target = 64;     // decoder positions, BOS included
  int vocab_size = 0;
  int n_time = 0;          // trailing quantized ranges of the vocabulary: time tokens, then box tokens
  int n_box = 0;

  int h_f() const { return height / patch; }
  int w_f() const { return width / patch; }
  int group() const { return frames / t_f; }
  int context_length() const { return l_g + t_f * n_q; }

  void fit(const Vocabulary& vocab);  // vocab_size, n_time and n_box from the token layout
  void validate() const;  // ConfigError on any violated extent constraint
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // out
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct NormParams {
  Tensor<T> gamma, beta;
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename T>
struct AttentionParams {
  LinearParams<T> q, k, v, out;
};

// Pre-norm transformer block; cross-attention is present when has_cross.
template <typename T>
struct BlockParams {
  NormParams<T> norm_self;
  AttentionParams<T> self_attn;
  bool has_cross = false;
  NormParams<T> norm_cross;
  AttentionParams<T> cross_attn;
  NormParams<T> norm_mlp;
  LinearParams<T> fc1, fc2;
};

struct PromptFeatureLayout {
  std::size_t active = 0;  // rows of G that hold real prompt positions
  std::size_t sentence_begin = 0, sentence_end = 0;
  std::size_t box_begin = 0, box_end = 0;
  bool truncated = false;
};

template <typename T>
struct PromptFeatures {
  Tensor<T> g;        // L_g x C_g, rows past layout.active are zero
  Tensor<T> g_task;   // 1 x C_g
  Tensor<T> g_sen;    // undefined when absent
  Tensor<T> g_box;    // undefined when absent
  PromptFeatureLayout layout;
};

template <typename T>
struct MultimodalContext {
  Tensor<T> tokens;                // (L_g + T_f * N_q) x C_g
  std::vector<std::uint8_t> keep;  // 0 on prompt padding
};

// Cross-attention keys/values of M per decoder layer, computed once per
// context for incremental decoding.
template <typename T>
struct DecoderCache {
  std::vector<Tensor<T>> keys;
  std::vector<Tensor<T>> values;
  std::vector<std::uint8_t> keep;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<std::pair<std::string, Tensor<T>>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& parameters() const { return params_; }
  std::vector<Tensor<T>> parameter_tensors() const;
  Tensor<T> parameter(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Copies values from another model with an identical config.
  template <typename U>
  void copy_parameters_from(const Model<U>& other);

  // (T * H_f * W_f) x C_f patch embeddings, before grouping and position.
  Tensor<T> patch_embed(const VideoClip& clip) const;
  // F with shape (T_f, H_f, W_f, C_f).
  Tensor<T> encode_video(const VideoClip& clip) const;
  PromptFeatures<T> encode_prompts(const PromptTokens& prompt) const;
  // q_con + q_sen + q_box, N_q x C_q.
  Tensor<T> summed_queries(const Tensor<T>& g_sen, const Tensor<T>& g_box) const;
  // (T_f, N_q, C_q)
  Tensor<T> mq_former(const Tensor<T>& video_features, const Tensor<T>& g_sen, const Tensor<T>& g_box) const;
  // (T_f * N_q) x C_q
  Tensor<T> temporal_encode(const Tensor<T>& frame_queries) const;
  MultimodalContext<T> translate_and_fuse(const Tensor<T>& q, const PromptFeatures<T>& prompt) const;
  MultimodalContext<T> build_context(const VideoClip& clip, const PromptTokens& prompt) const;

  // Teacher-forced logits for BOS + prefix: (prefix.size() + 1) x V.
  Tensor<T> decode(const MultimodalContext<T>& context, std::span<const TokenId> prefix) const;
  DecoderCache<T> prepare_decoder(const MultimodalContext<T>& context) const;
  // Logits (length V) for the token following prefix; no graph recorded.
  std::vector<T> next_token_logits(const DecoderCache<T>& cache, std::span<const TokenId> prefix) const;

  // Direct access to blocks for tests and initialisation tweaks.
  LinearParams<T>& translator_out() { return translator_fc2_; }
  LinearParams<T>& sentence_projection() { return sen_proj_; }
  LinearParams<T>& box_projection() { return box_proj_; }
  Tensor<T>& temporal_positions() { return temporal_pos_; }
  LinearParams<T>& patch_projection() { return patch_proj_; }
  const Tensor<T>& content_queries() const { return q_con_; }

 private:
  Tensor<T> add_param(const std::string& name, Shape shape, double stddev, T fill = T(0));
  void init_coordinates();
  LinearParams<T> make_linear(const std::string& name, int in, int out);
  NormParams<T> make_norm(const std::string& name, int width);
  AttentionParams<T> make_attention(const std::string& name, int width, int kv_width);
  BlockParams<T> make_block(const std::string& name, int width, int kv_width, bool cross);

  Tensor<T> attention(const AttentionParams<T>& p, const Tensor<T>& queries, const Tensor<T>& keys,
                      const Tensor<T>& values, std::span<const std::uint8_t> keep) const;
  Tensor<T> run_block(const BlockParams<T>& b, const Tensor<T>& x, std::span<const std::uint8_t> self_keep,
                      const Tensor<T>& cross_source, std::span<const std::uint8_t> cross_keep,
                      const Tensor<T>* cross_k = nullptr, const Tensor<T>* cross_v = nullptr) const;
  Tensor<T> decoder_hidden(std::span<const TokenId> prefix,
                           const std::vector<Tensor<T>>* cross_k, const std::vector<Tensor<T>>* cross_v,
                           const Tensor<T>& context, std::span<const std::uint8_t> keep) const;

  ModelConfig config_;
  std::mt19937_64 init_rng_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;

  // video encoder
  LinearParams<T> patch_proj_;
  Tensor<T> spatial_pos_;
  std::vector<BlockParams<T>> video_blocks_;
  NormParams<T> video_norm_;
  // language encoder
  Tensor<T> text_embed_;
  Tensor<T> text_pos_;
  std::vector<BlockParams<T>> text_blocks_;
  NormParams<T> text_norm_;
  // MQ-former
  Tensor<T> q_con_;
  LinearParams<T> sen_proj_, box_proj_;
  std::vector<BlockParams<T>> mq_blocks_;
  NormParams<T> mq_norm_;
  // temporal encoder
  Tensor<T> temporal_pos_;
  BlockParams<T> temporal_block_;
  // visual translator
  LinearParams<T> translator_fc1_, translator_fc2_;
  // token decoder
  Tensor<T> dec_embed_;
  Tensor<T> dec_pos_;
  std::vector<BlockParams<T>> dec_blocks_;
  NormParams<T> dec_norm_;
  LinearParams<T> head_;
};

template <typename T>
template <typename U>
void Model<T>::copy_parameters_from(const Model<U>& other) {
  if (!(other.config() == config_)) throw ConfigError("copy_parameters_from: configs differ");
  const auto& src = other.parameters();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].second.mutable_data();
    auto s = src[i].second.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(s[j]);
  }
}

extern template class Model<float>;
extern template class Model<double>;

// Causal keep-mask for n query rows over n key columns.
std::vector<std::uint8_t> causal_mask(std::size_t n);

}  // namespace vidseq
