#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "slt/corpus.hpp"
#include "slt/ops.hpp"
#include "slt/random.hpp"
#include "slt/tensor.hpp"

namespace slt {

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t d_model = 512;
  std::size_t num_heads = 8;
  std::size_t ffn_dim = 2048;
  double dropout = 0.1;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  bool tie_decoder_embeddings = false;
  std::size_t max_positions = 512;
  bool scale_embeddings = true;
  bool use_positions = true;
  // Width of the stored embedding tables; differs from d_model only after
  // loading pretrained vectors of another dimension.
  std::size_t src_embedding_dim = 0;
  std::size_t tgt_embedding_dim = 0;

  std::size_t src_dim() const { return src_embedding_dim ? src_embedding_dim : d_model; }
  std::size_t tgt_dim() const { return tgt_embedding_dim ? tgt_embedding_dim : d_model; }
  std::size_t head_dim() const { return d_model / num_heads; }

  void validate() const {
    if (num_layers == 0) throw ConfigError("num_layers must be positive");
    if (num_heads == 0 || d_model % num_heads != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by num_heads " +
                        std::to_string(num_heads));
    }
    if (ffn_dim == 0) throw ConfigError("ffn_dim must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0,1)");
    if (src_vocab == 0 || tgt_vocab == 0) throw ConfigError("vocabulary sizes must be positive");
    if (max_positions == 0) throw ConfigError("max_positions must be positive");
  }

  std::map<std::string, std::string> to_map() const {
    std::ostringstream drop;
    drop.precision(17);
    drop << dropout;
    return {{"num_layers", std::to_string(num_layers)},
            {"d_model", std::to_string(d_model)},
            {"num_heads", std::to_string(num_heads)},
            {"ffn_dim", std::to_string(ffn_dim)},
            {"dropout", drop.str()},
            {"src_vocab", std::to_string(src_vocab)},
            {"tgt_vocab", std::to_string(tgt_vocab)},
            {"tie_decoder_embeddings", tie_decoder_embeddings ? "true" : "false"},
            {"max_positions", std::to_string(max_positions)},
            {"scale_embeddings", scale_embeddings ? "true" : "false"},
            {"use_positions", use_positions ? "true" : "false"},
            {"src_embedding_dim", std::to_string(src_embedding_dim)},
            {"tgt_embedding_dim", std::to_string(tgt_embedding_dim)}};
  }

  static ModelConfig from_map(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    auto get = [&](const char* key) -> const std::string& {
      auto it = kv.find(key);
      if (it == kv.end()) throw ParseError(std::string("missing model key '") + key + "'", 0);
      return it->second;
    };
    auto num = [&](const char* key) { return static_cast<std::size_t>(std::stoull(get(key))); };
    auto flag = [&](const char* key) { return get(key) == "true"; };
    c.num_layers = num("num_layers");
    c.d_model = num("d_model");
    c.num_heads = num("num_heads");
    c.ffn_dim = num("ffn_dim");
    c.dropout = std::stod(get("dropout"));
    c.src_vocab = num("src_vocab");
    c.tgt_vocab = num("tgt_vocab");
    c.tie_decoder_embeddings = flag("tie_decoder_embeddings");
    c.max_positions = num("max_positions");
    c.scale_embeddings = flag("scale_embeddings");
    c.use_positions = flag("use_positions");
    c.src_embedding_dim = num("src_embedding_dim");
    c.tgt_embedding_dim = num("tgt_embedding_dim");
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Sinusoidal table: sin on even columns, cos on odd columns.
template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t d_model, std::size_t max_positions = 512) {
  if (length > max_positions) {
    throw ContractError("sequence length " + std::to_string(length) + " exceeds max_positions " +
                        std::to_string(max_positions));
  }
  std::vector<T> pe(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe[pos * d_model + i] = T(std::sin(angle));
      if (i + 1 < d_model) pe[pos * d_model + i + 1] = T(std::cos(angle));
    }
  }
  return Tensor<T>({length, d_model}, std::move(pe));
}

struct ForwardContext {
  bool training = false;
  CounterRng* rng = nullptr;
};

// Cross-attention weights for one query position.
struct AttentionTrace {
  std::vector<std::vector<double>> heads;  // [heads][T_src]
  std::vector<double> mean;                // head average
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Tensor<T> operator()(const Tensor<T>& x) const { return add_row(matmul(x, weight), bias); }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias, T(1e-6)); }
};

template <typename T>
struct AttentionParams {
  Linear<T> query, key, value, output;
};

template <typename T>
struct AttentionResult {
  Tensor<T> output;                      // [T_q, d_model]
  std::vector<Tensor<T>> head_weights;   // per head, [T_q, T_k]
};

// Scaled dot-product attention over `num_heads` column groups, followed by
// the output projection.
template <typename T>
AttentionResult<T> multi_head_attention(const AttentionParams<T>& p, const Tensor<T>& queries,
                                        const Tensor<T>& keys_values, const Mask* mask, std::size_t num_heads) {
  const std::size_t d_model = queries.cols();
  if (keys_values.cols() != d_model) {
    throw DimensionError("attention: query width " + std::to_string(d_model) + " vs key width " +
                         std::to_string(keys_values.cols()));
  }
  if (mask && (mask->rows != queries.rows() || mask->cols != keys_values.rows())) {
    throw DimensionError("attention mask shape does not match [T_q, T_k]");
  }
  const std::size_t hd = d_model / num_heads;
  const T inv_sqrt = T(1.0 / std::sqrt(static_cast<double>(hd)));
  const Tensor<T> q = p.query(queries);
  const Tensor<T> k = p.key(keys_values);
  const Tensor<T> v = p.value(keys_values);
  const Mask full = mask ? Mask{} : Mask::all(queries.rows(), keys_values.rows());
  const Mask& m = mask ? *mask : full;
  AttentionResult<T> result;
  std::vector<Tensor<T>> heads;
  heads.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const auto qh = slice_cols(q, h * hd, hd);
    const auto kh = slice_cols(k, h * hd, hd);
    const auto vh = slice_cols(v, h * hd, hd);
    auto weights = masked_softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), m);
    heads.push_back(matmul(weights, vh));
    result.head_weights.push_back(std::move(weights));
  }
  result.output = p.output(num_heads == 1 ? heads[0] : concat_cols(heads));
  return result;
}

template <typename T>
AttentionTrace trace_at(const std::vector<Tensor<T>>& head_weights, std::size_t row) {
  AttentionTrace trace;
  if (head_weights.empty()) return trace;
  const std::size_t t_src = head_weights[0].cols();
  trace.mean.assign(t_src, 0.0);
  for (const auto& w : head_weights) {
    std::vector<double> h(t_src);
    for (std::size_t c = 0; c < t_src; ++c) {
      h[c] = static_cast<double>(w.at(row, c));
      trace.mean[c] += h[c];
    }
    trace.heads.push_back(std::move(h));
  }
  for (auto& x : trace.mean) x /= static_cast<double>(head_weights.size());
  return trace;
}

template <typename T>
struct EncoderLayer {
  AttentionParams<T> self_attn;
  LayerNormParams<T> norm1;
  Linear<T> ff1, ff2;
  LayerNormParams<T> norm2;
};

template <typename T>
struct DecoderLayer {
  AttentionParams<T> self_attn;
  LayerNormParams<T> norm1;
  AttentionParams<T> cross_attn;
  LayerNormParams<T> norm2;
  Linear<T> ff1, ff2;
  LayerNormParams<T> norm3;
};

template <typename T>
struct DecoderResult {
  Tensor<T> logits;                       // [T_prefix, V_tgt]
  std::vector<Tensor<T>> cross_weights;   // final layer, per head [T_prefix, T_src]
};

template <typename T>
struct StepOutput {
  Tensor<T> logits;  // [V_tgt]
  AttentionTrace trace;
};

// Post-norm encoder-decoder Transformer.
template <typename T>
class TransformerModel {
 public:
  TransformerModel(const ModelConfig& config, CounterRng& rng) : config_(config) {
    config_.validate();
    init(rng);
  }

  const ModelConfig& config() const { return config_; }

  // Parameters in a fixed order. With tied embeddings the output projection
  // is the target embedding and is listed only once.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    auto lin = [&](const std::string& n, const Linear<T>& l) {
      out.emplace_back(n + ".weight", l.weight);
      out.emplace_back(n + ".bias", l.bias);
    };
    auto norm = [&](const std::string& n, const LayerNormParams<T>& l) {
      out.emplace_back(n + ".gain", l.gain);
      out.emplace_back(n + ".bias", l.bias);
    };
    auto attn = [&](const std::string& n, const AttentionParams<T>& a) {
      lin(n + ".query", a.query);
      lin(n + ".key", a.key);
      lin(n + ".value", a.value);
      lin(n + ".output", a.output);
    };
    out.emplace_back("encoder.embedding", src_embedding_);
    if (src_projection_.defined()) out.emplace_back("encoder.embedding_projection", src_projection_);
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      const std::string p = "encoder.layer" + std::to_string(i);
      attn(p + ".self_attn", encoder_[i].self_attn);
      norm(p + ".norm1", encoder_[i].norm1);
      lin(p + ".ff1", encoder_[i].ff1);
      lin(p + ".ff2", encoder_[i].ff2);
      norm(p + ".norm2", encoder_[i].norm2);
    }
    out.emplace_back("decoder.embedding", tgt_embedding_);
    if (tgt_projection_.defined()) out.emplace_back("decoder.embedding_projection", tgt_projection_);
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const std::string p = "decoder.layer" + std::to_string(i);
      attn(p + ".self_attn", decoder_[i].self_attn);
      norm(p + ".norm1", decoder_[i].norm1);
      attn(p + ".cross_attn", decoder_[i].cross_attn);
      norm(p + ".norm2", decoder_[i].norm2);
      lin(p + ".ff1", decoder_[i].ff1);
      lin(p + ".ff2", decoder_[i].ff2);
      norm(p + ".norm3", decoder_[i].norm3);
    }
    if (!config_.tie_decoder_embeddings) out.emplace_back("generator.weight", output_weight_);
    out.emplace_back("generator.bias", output_bias_);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : named_parameters()) t.zero_grad();
  }

  // Output projection as an [d_model, V] view for untied models; for tied
  // models it is the target embedding itself.
  const Tensor<T>& target_embedding() const { return tgt_embedding_; }
  const Tensor<T>& output_weight() const { return config_.tie_decoder_embeddings ? tgt_embedding_ : output_weight_; }

  // Lookup, optional projection, sqrt(d_model) scaling, positions, dropout.
  Tensor<T> embed(std::span<const TokenId> ids, bool source, ForwardContext& ctx) const {
    const auto& table = source ? src_embedding_ : tgt_embedding_;
    const auto& proj = source ? src_projection_ : tgt_projection_;
    if (ids.size() > config_.max_positions) {
      throw ContractError("sequence of length " + std::to_string(ids.size()) + " exceeds max_positions " +
                          std::to_string(config_.max_positions));
    }
    Tensor<T> x = embedding<T, TokenId>(table, ids);
    if (proj.defined()) x = matmul(x, proj);
    if (config_.scale_embeddings) x = scale(x, T(std::sqrt(static_cast<double>(config_.d_model))));
    if (config_.use_positions) x = add(x, slice_rows(positions_, 0, ids.size()));
    return dropout(x, config_.dropout, ctx.training, ctx.rng);
  }

  Tensor<T> encode_source(std::span<const TokenId> source, ForwardContext& ctx) const {
    if (source.empty()) throw ContractError("cannot encode an empty source sentence");
    Tensor<T> x = embed(source, true, ctx);
    for (const auto& layer : encoder_) {
      auto attn = multi_head_attention(layer.self_attn, x, x, nullptr, config_.num_heads);
      x = layer.norm1(add(x, dropout(attn.output, config_.dropout, ctx.training, ctx.rng)));
      x = layer.norm2(add(x, dropout(feed_forward(layer.ff1, layer.ff2, x, ctx), config_.dropout, ctx.training, ctx.rng)));
    }
    return x;
  }

  // Teacher-forced decoder pass over a full prefix (starting with bos).
  DecoderResult<T> decode(const Tensor<T>& memory, std::span<const TokenId> prefix, ForwardContext& ctx) const {
    if (prefix.empty()) throw ContractError("decoder prefix must not be empty");
    if (prefix.size() > config_.max_positions) {
      throw ContractError("decoder prefix of length " + std::to_string(prefix.size()) + " exceeds max_positions " +
                          std::to_string(config_.max_positions));
    }
    const Mask causal = Mask::causal(prefix.size());
    Tensor<T> x = embed(prefix, false, ctx);
    DecoderResult<T> result;
    for (const auto& layer : decoder_) {
      auto self = multi_head_attention(layer.self_attn, x, x, &causal, config_.num_heads);
      x = layer.norm1(add(x, dropout(self.output, config_.dropout, ctx.training, ctx.rng)));
      auto cross = multi_head_attention(layer.cross_attn, x, memory, nullptr, config_.num_heads);
      x = layer.norm2(add(x, dropout(cross.output, config_.dropout, ctx.training, ctx.rng)));
      x = layer.norm3(add(x, dropout(feed_forward(layer.ff1, layer.ff2, x, ctx), config_.dropout, ctx.training, ctx.rng)));
      result.cross_weights = std::move(cross.head_weights);
    }
    result.logits = generate(x);
    return result;
  }

  // Next-token logits after `prefix`, with the final layer's cross-attention.
  StepOutput<T> decode_step(const Tensor<T>& memory, std::span<const TokenId> prefix) const {
    ForwardContext ctx;
    auto res = decode(memory, prefix, ctx);
    const std::size_t last = prefix.size() - 1;
    StepOutput<T> out;
    const auto row = slice_rows(res.logits, last, 1);
    out.logits = Tensor<T>({config_.tgt_vocab}, std::vector<T>(row.data().begin(), row.data().end()));
    out.trace = trace_at(res.cross_weights, last);
    return out;
  }

  // Label-smoothed loss of `target` (without framing) given `source`.
  Tensor<T> loss(std::span<const TokenId> source, std::span<const TokenId> target, double label_smoothing,
                 ForwardContext& ctx, double denominator = 0.0) const {
    std::vector<TokenId> input{Vocabulary::bos_id};
    input.insert(input.end(), target.begin(), target.end());
    std::vector<TokenId> output(target.begin(), target.end());
    output.push_back(Vocabulary::eos_id);
    const auto memory = encode_source(source, ctx);
    const auto res = decode(memory, input, ctx);
    return cross_entropy_label_smoothed<T, TokenId>(res.logits, output, label_smoothing, Vocabulary::pad_id,
                                                    denominator);
  }

  // Replaces the embedding table of one side, adding a learned projection to
  // d_model when `dim` differs from it. Used by pretrained-vector loading.
  void reshape_embedding(bool source, std::size_t dim, CounterRng& rng) {
    auto& table = source ? src_embedding_ : tgt_embedding_;
    auto& proj = source ? src_projection_ : tgt_projection_;
    const std::size_t vocab = source ? config_.src_vocab : config_.tgt_vocab;
    table = normal_matrix(vocab, dim, rng);
    proj = dim == config_.d_model ? Tensor<T>() : xavier(dim, config_.d_model, rng);
    (source ? config_.src_embedding_dim : config_.tgt_embedding_dim) = dim == config_.d_model ? 0 : dim;
  }

  Tensor<T>& mutable_embedding(bool source) { return source ? src_embedding_ : tgt_embedding_; }

  // Copy with every parameter converted to another precision.
  template <typename U>
  TransformerModel<U> cast() const {
    CounterRng rng(0);
    TransformerModel<U> other(config_, rng);
    auto dst = other.named_parameters();
    auto src = named_parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto d = dst[i].second.mutable_data();
      auto s = src[i].second.data();
      for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<U>(s[k]);
    }
    return other;
  }

  // Deep copy of parameter values; the copy shares no storage with this model.
  TransformerModel clone() const { return cast<T>(); }

 private:
  template <typename>
  friend class TransformerModel;

  Tensor<T> feed_forward(const Linear<T>& ff1, const Linear<T>& ff2, const Tensor<T>& x, ForwardContext& ctx) const {
    return ff2(dropout(relu(ff1(x)), config_.dropout, ctx.training, ctx.rng));
  }

  Tensor<T> generate(const Tensor<T>& hidden) const {
    if (!config_.tie_decoder_embeddings) return add_row(matmul(hidden, output_weight_), output_bias_);
    Tensor<T> h = tgt_projection_.defined() ? matmul_nt(hidden, tgt_projection_) : hidden;
    return add_row(matmul_nt(h, tgt_embedding_), output_bias_);
  }

  static Tensor<T> xavier(std::size_t in, std::size_t out, CounterRng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<T> w(in * out);
    for (auto& x : w) x = T(rng.uniform(-a, a));
    return Tensor<T>({in, out}, std::move(w), true);
  }

  static Tensor<T> normal_matrix(std::size_t rows, std::size_t cols, CounterRng& rng) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(cols));
    std::vector<T> w(rows * cols);
    for (auto& x : w) x = T(rng.normal(0.0, sd));
    return Tensor<T>({rows, cols}, std::move(w), true);
  }

  static Tensor<T> filled(std::size_t n, T v) { return Tensor<T>({n}, std::vector<T>(n, v), true); }

  Linear<T> linear(std::size_t in, std::size_t out, CounterRng& rng) const { return {xavier(in, out, rng), filled(out, T(0))}; }
  LayerNormParams<T> norm() const { return {filled(config_.d_model, T(1)), filled(config_.d_model, T(0))}; }
  AttentionParams<T> attention(CounterRng& rng) const {
    const auto d = config_.d_model;
    return {linear(d, d, rng), linear(d, d, rng), linear(d, d, rng), linear(d, d, rng)};
  }

  void init(CounterRng& rng) {
    const auto d = config_.d_model;
    src_embedding_ = normal_matrix(config_.src_vocab, config_.src_dim(), rng);
    if (config_.src_dim() != d) src_projection_ = xavier(config_.src_dim(), d, rng);
    tgt_embedding_ = normal_matrix(config_.tgt_vocab, config_.tgt_dim(), rng);
    if (config_.tgt_dim() != d) tgt_projection_ = xavier(config_.tgt_dim(), d, rng);
    for (std::size_t i = 0; i < config_.num_layers; ++i) {
      EncoderLayer<T> l;
      l.self_attn = attention(rng);
      l.norm1 = norm();
      l.ff1 = linear(d, config_.ffn_dim, rng);
      l.ff2 = linear(config_.ffn_dim, d, rng);
      l.norm2 = norm();
      encoder_.push_back(std::move(l));
    }
    for (std::size_t i = 0; i < config_.num_layers; ++i) {
      DecoderLayer<T> l;
      l.self_attn = attention(rng);
      l.norm1 = norm();
      l.cross_attn = attention(rng);
      l.norm2 = norm();
      l.ff1 = linear(d, config_.ffn_dim, rng);
      l.ff2 = linear(config_.ffn_dim, d, rng);
      l.norm3 = norm();
      decoder_.push_back(std::move(l));
    }
    if (!config_.tie_decoder_embeddings) output_weight_ = xavier(d, config_.tgt_vocab, rng);
    output_bias_ = filled(config_.tgt_vocab, T(0));
    positions_ = positional_encoding<T>(config_.max_positions, d, config_.max_positions);
  }

  ModelConfig config_;
  Tensor<T> src_embedding_, src_projection_;
  Tensor<T> tgt_embedding_, tgt_projection_;
  std::vector<EncoderLayer<T>> encoder_;
  std::vector<DecoderLayer<T>> decoder_;
  Tensor<T> output_weight_, output_bias_;
  Tensor<T> positions_;
};

}  // namespace slt
