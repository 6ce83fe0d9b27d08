#include "vidseq/model.hpp"

#include <cmath>
#include <numbers>

namespace vidseq {

// --- config -----------------------------------------------------------------

namespace {

struct ConfigField {
  const char* key;
  int ModelConfig::*member;
};

constexpr ConfigField kConfigFields[] = {
    {"frames", &ModelConfig::frames},         {"t_f", &ModelConfig::t_f},
    {"height", &ModelConfig::height},         {"width", &ModelConfig::width},
    {"patch", &ModelConfig::patch},           {"c_f", &ModelConfig::c_f},
    {"video_layers", &ModelConfig::video_layers}, {"l_g", &ModelConfig::l_g},
    {"c_g", &ModelConfig::c_g},               {"text_layers", &ModelConfig::text_layers},
    {"n_q", &ModelConfig::n_q},               {"c_q", &ModelConfig::c_q},
    {"mq_layers", &ModelConfig::mq_layers},   {"decoder_layers", &ModelConfig::decoder_layers},
    {"heads", &ModelConfig::heads},           {"mlp_ratio", &ModelConfig::mlp_ratio},
    {"max_target", &ModelConfig::max_target}, {"vocab_size", &ModelConfig::vocab_size},
};

}  // namespace

void ModelConfig::fit(const Vocabulary& vocab) {
  vocab_size = vocab.size();
  n_time = vocab.n_time();
  n_box = vocab.n_box();
}

void ModelConfig::validate() const {
  for (const auto& f : kConfigFields) {
    if (this->*f.member <= 0) throw ConfigError(std::string("model config: ") + f.key + " must be positive");
  }
  if (frames % t_f != 0) throw ConfigError("model config: frames must be a multiple of t_f");
  if (height % patch != 0 || width % patch != 0) throw ConfigError("model config: patch must divide the frame size");
  if (c_f % heads != 0 || c_q % heads != 0 || c_g % heads != 0) {
    throw ConfigError("model config: widths must be divisible by heads");
  }
  if (c_f < 2 || c_q < 2 || c_g < 2) throw ConfigError("model config: widths must be at least 2");
  if (max_target < 2) throw ConfigError("model config: max_target must be at least 2");
  if (n_time < 0 || n_box < 0 || n_time + n_box > vocab_size) {
    throw ConfigError("model config: quantized ranges exceed the vocabulary");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  std::map<std::string, std::string> kv;
  for (const auto& f : kConfigFields) kv[std::string("model.") + f.key] = std::to_string(this->*f.member);
  kv["model.n_time"] = std::to_string(n_time);
  kv["model.n_box"] = std::to_string(n_box);
  return kv;
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& f : kConfigFields) {
    auto it = kv.find(std::string("model.") + f.key);
    if (it == kv.end()) throw FormatError(std::string("model config missing key ") + f.key);
    try {
      c.*f.member = std::stoi(it->second);
    } catch (const std::exception&) {
      throw FormatError(std::string("model config: bad value for ") + f.key);
    }
  }
  for (auto [key, member] : {std::pair{"model.n_time", &ModelConfig::n_time}, std::pair{"model.n_box", &ModelConfig::n_box}}) {
    auto it = kv.find(key);
    if (it == kv.end()) continue;
    try {
      c.*member = std::stoi(it->second);
    } catch (const std::exception&) {
      throw FormatError(std::string("model config: bad value for ") + key);
    }
  }
  c.validate();
  return c;
}

std::vector<std::uint8_t> causal_mask(std::size_t n) {
  std::vector<std::uint8_t> keep(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) keep[i * n + j] = 1;
  return keep;
}

namespace {

std::vector<std::uint8_t> repeat_keep(std::span<const std::uint8_t> row, std::size_t rows) {
  std::vector<std::uint8_t> out;
  out.reserve(row.size() * rows);
  for (std::size_t r = 0; r < rows; ++r) out.insert(out.end(), row.begin(), row.end());
  return out;
}

}  // namespace

// --- construction -----------------------------------------------------------

template <typename T>
Tensor<T> Model<T>::add_param(const std::string& name, Shape shape, double stddev, T fill) {
  Tensor<T> t = stddev > 0 ? Tensor<T>::randn(std::move(shape), init_rng_, stddev, true)
                           : Tensor<T>::full(std::move(shape), fill, true);
  params_.emplace_back(name, t);
  return t;
}

template <typename T>
LinearParams<T> Model<T>::make_linear(const std::string& name, int in, int out) {
  const auto i = static_cast<std::size_t>(in), o = static_cast<std::size_t>(out);
  LinearParams<T> p;
  p.weight = add_param(name + ".weight", {i, o}, 1.0 / std::sqrt(static_cast<double>(in)));
  p.bias = add_param(name + ".bias", {o}, 0.0);
  return p;
}

template <typename T>
NormParams<T> Model<T>::make_norm(const std::string& name, int width) {
  const auto w = static_cast<std::size_t>(width);
  return {add_param(name + ".gamma", {w}, 0.0, T(1)), add_param(name + ".beta", {w}, 0.0)};
}

template <typename T>
AttentionParams<T> Model<T>::make_attention(const std::string& name, int width, int kv_width) {
  AttentionParams<T> p;
  p.q = make_linear(name + ".q", width, width);
  p.k = make_linear(name + ".k", kv_width, width);
  p.v = make_linear(name + ".v", kv_width, width);
  p.out = make_linear(name + ".out", width, width);
  return p;
}

template <typename T>
BlockParams<T> Model<T>::make_block(const std::string& name, int width, int kv_width, bool cross) {
  BlockParams<T> b;
  b.norm_self = make_norm(name + ".norm_self", width);
  b.self_attn = make_attention(name + ".self", width, width);
  b.has_cross = cross;
  if (cross) {
    b.norm_cross = make_norm(name + ".norm_cross", width);
    b.cross_attn = make_attention(name + ".cross", width, kv_width);
  }
  b.norm_mlp = make_norm(name + ".norm_mlp", width);
  b.fc1 = make_linear(name + ".fc1", width, width * config_.mlp_ratio);
  b.fc2 = make_linear(name + ".fc2", width * config_.mlp_ratio, width);
  return b;
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config), init_rng_(seed) {
  config_.validate();
  const auto& c = config_;
  const auto P = static_cast<std::size_t>(c.h_f() * c.w_f());
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const double emb = 1.0;   // token tables and content queries
  const double pos = 0.5;   // learned positions

  patch_proj_ = make_linear("video.patch", c.patch * c.patch * 3, c.c_f);
  spatial_pos_ = add_param("video.pos", {P, static_cast<std::size_t>(c.c_f)}, pos);
  for (int i = 0; i < c.video_layers; ++i)
    video_blocks_.push_back(make_block("video.block" + std::to_string(i), c.c_f, c.c_f, false));
  video_norm_ = make_norm("video.norm", c.c_f);

  text_embed_ = add_param("text.embed", {V, static_cast<std::size_t>(c.c_g)}, emb);
  text_pos_ = add_param("text.pos", {static_cast<std::size_t>(c.l_g), static_cast<std::size_t>(c.c_g)}, pos);
  for (int i = 0; i < c.text_layers; ++i)
    text_blocks_.push_back(make_block("text.block" + std::to_string(i), c.c_g, c.c_g, false));
  text_norm_ = make_norm("text.norm", c.c_g);

  q_con_ = add_param("mq.content_queries", {static_cast<std::size_t>(c.n_q), static_cast<std::size_t>(c.c_q)}, emb);
  sen_proj_ = make_linear("mq.sentence_proj", c.c_g, c.c_q);
  box_proj_ = make_linear("mq.box_proj", c.c_g, c.c_q);
  for (int i = 0; i < c.mq_layers; ++i)
    mq_blocks_.push_back(make_block("mq.block" + std::to_string(i), c.c_q, c.c_f, true));
  mq_norm_ = make_norm("mq.norm", c.c_q);

  temporal_pos_ = add_param("temporal.pos", {static_cast<std::size_t>(c.t_f), static_cast<std::size_t>(c.c_q)}, pos);
  temporal_block_ = make_block("temporal.block", c.c_q, c.c_q, false);

  translator_fc1_ = make_linear("translator.fc1", c.c_q, 2 * c.c_g);
  translator_fc2_ = make_linear("translator.fc2", 2 * c.c_g, c.c_g);

  dec_embed_ = add_param("decoder.embed", {V, static_cast<std::size_t>(c.c_g)}, emb);
  dec_pos_ = add_param("decoder.pos", {static_cast<std::size_t>(c.max_target), static_cast<std::size_t>(c.c_g)}, pos);
  for (int i = 0; i < c.decoder_layers; ++i)
    dec_blocks_.push_back(make_block("decoder.block" + std::to_string(i), c.c_g, c.c_g, true));
  dec_norm_ = make_norm("decoder.norm", c.c_g);
  head_.weight = add_param("decoder.head.weight", {static_cast<std::size_t>(c.c_g), V}, 0.02);
  head_.bias = add_param("decoder.head.bias", {V}, 0.0);
  init_coordinates();
}

namespace {

// sin/cos pair k of a position u in [0, 1], frequencies geometric in [1, 16] cycles
std::pair<double, double> coordinate_feature(double u, int k, int pairs) {
  const double f = pairs > 1 ? std::pow(16.0, k / static_cast<double>(pairs - 1)) : 1.0;
  const double a = 2 * std::numbers::pi * f * u;
  return {std::sin(a), std::cos(a)};
}

}  // namespace

// Quantized tokens start from sinusoids of the coordinate they stand for, so
// neighbouring bins begin close together.
template <typename T>
void Model<T>::init_coordinates() {
  const auto& c = config_;
  const auto V = static_cast<std::size_t>(c.vocab_size), G = static_cast<std::size_t>(c.c_g);
  const int pairs = c.c_g / 2;
  const std::size_t box_begin = V - static_cast<std::size_t>(c.n_box);
  const std::size_t time_begin = box_begin - static_cast<std::size_t>(c.n_time);
  auto embed_in = dec_embed_.mutable_data(), embed_text = text_embed_.mutable_data(), head = head_.weight.mutable_data();
  for (auto [begin, n] : {std::pair{time_begin, c.n_time}, std::pair{box_begin, c.n_box}}) {
    for (int i = 0; i < n; ++i) {
      const std::size_t id = begin + static_cast<std::size_t>(i);
      const double u = (i + 0.5) / n;
      for (int k = 0; k < pairs; ++k) {
        const auto [sn, cs] = coordinate_feature(u, k, pairs);
        const auto col = static_cast<std::size_t>(2 * k);
        for (auto* table : {&embed_in, &embed_text}) {
          (*table)[id * G + col] = static_cast<T>(std::numbers::sqrt2 * sn);
          (*table)[id * G + col + 1] = static_cast<T>(std::numbers::sqrt2 * cs);
        }
        head[col * V + id] = static_cast<T>(0.02 * std::numbers::sqrt2 * sn);
        head[(col + 1) * V + id] = static_cast<T>(0.02 * std::numbers::sqrt2 * cs);
      }
    }
  }
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameter_tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

template <typename T>
Tensor<T> Model<T>::parameter(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw IndexError("no parameter named " + name);
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

// --- building blocks --------------------------------------------------------

template <typename T>
Tensor<T> Model<T>::attention(const AttentionParams<T>& p, const Tensor<T>& queries, const Tensor<T>& keys,
                              const Tensor<T>& values, std::span<const std::uint8_t> keep) const {
  const Tensor<T> q = p.q(queries);
  const std::size_t width = q.dim(1);
  const auto heads = static_cast<std::size_t>(config_.heads);
  const std::size_t d = width / heads;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<T> qh = heads == 1 ? q : slice_cols(q, h * d, (h + 1) * d);
    Tensor<T> kh = heads == 1 ? keys : slice_cols(keys, h * d, (h + 1) * d);
    Tensor<T> vh = heads == 1 ? values : slice_cols(values, h * d, (h + 1) * d);
    Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
    Tensor<T> probs = keep.empty() ? softmax(scores, 1) : masked_softmax(scores, keep);
    outs.push_back(matmul(probs, vh));
  }
  Tensor<T> merged = heads == 1 ? outs[0] : concat_cols<T>(outs);
  return p.out(merged);
}

template <typename T>
Tensor<T> Model<T>::run_block(const BlockParams<T>& b, const Tensor<T>& x, std::span<const std::uint8_t> self_keep,
                              const Tensor<T>& cross_source, std::span<const std::uint8_t> cross_keep,
                              const Tensor<T>* cross_k, const Tensor<T>* cross_v) const {
  Tensor<T> h = b.norm_self(x);
  Tensor<T> y = add(x, attention(b.self_attn, h, b.self_attn.k(h), b.self_attn.v(h), self_keep));
  if (b.has_cross) {
    h = b.norm_cross(y);
    const Tensor<T> k = cross_k ? *cross_k : b.cross_attn.k(cross_source);
    const Tensor<T> v = cross_v ? *cross_v : b.cross_attn.v(cross_source);
    y = add(y, attention(b.cross_attn, h, k, v, cross_keep));
  }
  h = b.norm_mlp(y);
  return add(y, b.fc2(gelu(b.fc1(h))));
}

// --- video encoder ------------------------------------------------------------

template <typename T>
Tensor<T> Model<T>::patch_embed(const VideoClip& clip) const {
  const auto& c = config_;
  if (clip.frames != c.frames || clip.height != c.height || clip.width != c.width) {
    throw DimensionError("clip is " + std::to_string(clip.frames) + "x" + std::to_string(clip.height) + "x" +
                         std::to_string(clip.width) + ", model expects " + std::to_string(c.frames) + "x" +
                         std::to_string(c.height) + "x" + std::to_string(c.width));
  }
  const int hf = c.h_f(), wf = c.w_f(), p = c.patch;
  const std::size_t patch_dim = static_cast<std::size_t>(p * p * 3);
  const std::size_t rows = static_cast<std::size_t>(c.frames * hf * wf);
  std::vector<T> data(rows * patch_dim);
  std::size_t r = 0;
  for (int t = 0; t < c.frames; ++t) {
    for (int py = 0; py < hf; ++py) {
      for (int px = 0; px < wf; ++px, ++r) {
        T* dst = data.data() + r * patch_dim;
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            for (int ch = 0; ch < 3; ++ch) *dst++ = static_cast<T>(clip.at(t, py * p + y, px * p + x, ch));
      }
    }
  }
  return patch_proj_(Tensor<T>::from_data({rows, patch_dim}, std::move(data)));
}

template <typename T>
Tensor<T> Model<T>::encode_video(const VideoClip& clip) const {
  const auto& c = config_;
  const Tensor<T> embedded = patch_embed(clip);
  const auto P = static_cast<std::size_t>(c.h_f() * c.w_f());
  const int g = c.group();
  std::vector<Tensor<T>> slices;
  for (int s = 0; s < c.t_f; ++s) {
    Tensor<T> acc = slice_rows(embedded, static_cast<std::size_t>(s * g) * P, static_cast<std::size_t>(s * g + 1) * P);
    for (int k = 1; k < g; ++k) {
      const auto f = static_cast<std::size_t>(s * g + k);
      acc = add(acc, slice_rows(embedded, f * P, (f + 1) * P));
    }
    if (g > 1) acc = scale(acc, T(1) / static_cast<T>(g));
    Tensor<T> x = add(acc, spatial_pos_);
    for (const auto& b : video_blocks_) x = run_block(b, x, {}, Tensor<T>(), {});
    slices.push_back(video_norm_(x));
  }
  return reshape(concat_rows<T>(slices), {static_cast<std::size_t>(c.t_f), static_cast<std::size_t>(c.h_f()),
                                         static_cast<std::size_t>(c.w_f()), static_cast<std::size_t>(c.c_f)});
}

// --- language encoder ---------------------------------------------------------

template <typename T>
PromptFeatures<T> Model<T>::encode_prompts(const PromptTokens& prompt) const {
  const auto& c = config_;
  const auto cap = static_cast<std::size_t>(c.l_g);
  PromptTokens p = prompt;
  PromptFeatures<T> out;
  if (p.size() > cap) {
    out.layout.truncated = true;
    const std::size_t room = cap - 1;
    if (p.box.size() > room) p.box.resize(room);
    p.sentence.resize(std::min(p.sentence.size(), room - p.box.size()));
  }
  const std::vector<TokenId> ids = p.flatten();
  const std::size_t n = ids.size();
  out.layout.active = n;
  out.layout.sentence_begin = 1;
  out.layout.sentence_end = 1 + p.sentence.size();
  out.layout.box_begin = out.layout.sentence_end;
  out.layout.box_end = out.layout.box_begin + p.box.size();

  Tensor<T> x = add(embedding_lookup(text_embed_, ids), slice_rows(text_pos_, 0, n));
  for (const auto& b : text_blocks_) x = run_block(b, x, {}, Tensor<T>(), {});
  x = text_norm_(x);
  if (n < cap) {
    const std::vector<Tensor<T>> parts{x, Tensor<T>::zeros({cap - n, static_cast<std::size_t>(c.c_g)})};
    out.g = concat_rows<T>(parts);
  } else {
    out.g = x;
  }
  out.g_task = slice_rows(x, 0, 1);
  if (!p.sentence.empty()) out.g_sen = slice_rows(x, out.layout.sentence_begin, out.layout.sentence_end);
  if (!p.box.empty()) out.g_box = slice_rows(x, out.layout.box_begin, out.layout.box_end);
  return out;
}

// --- MQ-former ----------------------------------------------------------------

template <typename T>
Tensor<T> Model<T>::summed_queries(const Tensor<T>& g_sen, const Tensor<T>& g_box) const {
  const auto nq = static_cast<std::size_t>(config_.n_q);
  Tensor<T> q = q_con_;
  if (g_sen.defined()) q = add(q, repeat_rows(sen_proj_(mean_rows(g_sen)), nq));
  if (g_box.defined()) q = add(q, repeat_rows(box_proj_(mean_rows(g_box)), nq));
  return q;
}

template <typename T>
Tensor<T> Model<T>::mq_former(const Tensor<T>& video_features, const Tensor<T>& g_sen, const Tensor<T>& g_box) const {
  const auto& c = config_;
  const auto P = static_cast<std::size_t>(c.h_f() * c.w_f());
  const auto tf = static_cast<std::size_t>(c.t_f);
  const Shape expected{tf, static_cast<std::size_t>(c.h_f()), static_cast<std::size_t>(c.w_f()),
                       static_cast<std::size_t>(c.c_f)};
  if (video_features.shape() != expected) {
    throw DimensionError("mq_former: features " + shape_str(video_features.shape()) + ", expected " +
                         shape_str(expected));
  }
  const Tensor<T> flat = reshape(video_features, {tf * P, static_cast<std::size_t>(c.c_f)});
  const Tensor<T> queries = summed_queries(g_sen, g_box);
  std::vector<Tensor<T>> per_frame;
  per_frame.reserve(tf);
  for (std::size_t i = 0; i < tf; ++i) {
    const Tensor<T> frame = slice_rows(flat, i * P, (i + 1) * P);
    Tensor<T> x = queries;
    for (const auto& b : mq_blocks_) x = run_block(b, x, {}, frame, {});
    per_frame.push_back(mq_norm_(x));
  }
  return reshape(concat_rows<T>(per_frame), {tf, static_cast<std::size_t>(c.n_q), static_cast<std::size_t>(c.c_q)});
}

template <typename T>
Tensor<T> Model<T>::temporal_encode(const Tensor<T>& frame_queries) const {
  const auto& c = config_;
  const auto tf = static_cast<std::size_t>(c.t_f), nq = static_cast<std::size_t>(c.n_q),
             cq = static_cast<std::size_t>(c.c_q);
  if (frame_queries.shape() != Shape{tf, nq, cq}) {
    throw DimensionError("temporal_encode: got " + shape_str(frame_queries.shape()));
  }
  std::vector<Tensor<T>> pos;
  pos.reserve(tf);
  for (std::size_t i = 0; i < tf; ++i) pos.push_back(repeat_rows(slice_rows(temporal_pos_, i, i + 1), nq));
  const Tensor<T> x = add(reshape(frame_queries, {tf * nq, cq}), concat_rows<T>(pos));
  return run_block(temporal_block_, x, {}, Tensor<T>(), {});
}

template <typename T>
MultimodalContext<T> Model<T>::translate_and_fuse(const Tensor<T>& q, const PromptFeatures<T>& prompt) const {
  const Tensor<T> visual = translator_fc2_(gelu(translator_fc1_(q)));
  MultimodalContext<T> m;
  const std::vector<Tensor<T>> parts{prompt.g, visual};
  m.tokens = concat_rows<T>(parts);
  m.keep.assign(m.tokens.dim(0), 1);
  for (std::size_t i = prompt.layout.active; i < prompt.g.dim(0); ++i) m.keep[i] = 0;
  return m;
}

template <typename T>
MultimodalContext<T> Model<T>::build_context(const VideoClip& clip, const PromptTokens& prompt) const {
  const Tensor<T> f = encode_video(clip);
  const PromptFeatures<T> g = encode_prompts(prompt);
  const Tensor<T> per_frame = mq_former(f, g.g_sen, g.g_box);
  return translate_and_fuse(temporal_encode(per_frame), g);
}

// --- decoder --------------------------------------------------------------------

template <typename T>
Tensor<T> Model<T>::decoder_hidden(std::span<const TokenId> prefix, const std::vector<Tensor<T>>* cross_k,
                                   const std::vector<Tensor<T>>* cross_v, const Tensor<T>& context,
                                   std::span<const std::uint8_t> keep) const {
  std::vector<TokenId> ids;
  ids.reserve(prefix.size() + 1);
  ids.push_back(Vocabulary::kBos);
  ids.insert(ids.end(), prefix.begin(), prefix.end());
  const std::size_t n = ids.size();
  if (n > static_cast<std::size_t>(config_.max_target)) {
    throw IndexError("decoder input of " + std::to_string(n) + " positions exceeds max_target");
  }
  Tensor<T> x = add(embedding_lookup(dec_embed_, ids), slice_rows(dec_pos_, 0, n));
  const auto self_keep = causal_mask(n);
  const auto cross_keep = repeat_keep(keep, n);
  for (std::size_t l = 0; l < dec_blocks_.size(); ++l) {
    x = run_block(dec_blocks_[l], x, self_keep, context, cross_keep, cross_k ? &(*cross_k)[l] : nullptr,
                  cross_v ? &(*cross_v)[l] : nullptr);
  }
  return dec_norm_(x);
}

template <typename T>
Tensor<T> Model<T>::decode(const MultimodalContext<T>& context, std::span<const TokenId> prefix) const {
  return head_(decoder_hidden(prefix, nullptr, nullptr, context.tokens, context.keep));
}

template <typename T>
DecoderCache<T> Model<T>::prepare_decoder(const MultimodalContext<T>& context) const {
  NoGradGuard guard;
  DecoderCache<T> cache;
  cache.keep = context.keep;
  for (const auto& b : dec_blocks_) {
    cache.keys.push_back(b.cross_attn.k(context.tokens));
    cache.values.push_back(b.cross_attn.v(context.tokens));
  }
  return cache;
}

template <typename T>
std::vector<T> Model<T>::next_token_logits(const DecoderCache<T>& cache, std::span<const TokenId> prefix) const {
  NoGradGuard guard;
  const Tensor<T> hidden = decoder_hidden(prefix, &cache.keys, &cache.values, Tensor<T>(), cache.keep);
  const std::size_t n = hidden.dim(0);
  const Tensor<T> logits = head_(slice_rows(hidden, n - 1, n));
  return {logits.data().begin(), logits.data().end()};
}

template class Model<float>;
template class Model<double>;

}  // namespace vidseq
