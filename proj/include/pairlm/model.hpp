// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pairlm/ops.hpp"
#include "pairlm/rng.hpp"
#include "pairlm/sha256.hpp"
#include "pairlm/tensor.hpp"

namespace pairlm {

enum class AttentionMode { Bidirectional, Causal };

inline std::string to_string(AttentionMode m) {
  return m == AttentionMode::Bidirectional ? "bidirectional" : "causal";
}

inline AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "bidirectional") return AttentionMode::Bidirectional;
  if (s == "causal") return AttentionMode::Causal;
  throw ConfigError("unknown attention mode: " + s);
}

enum class AttentionKind { Global, Local };

/// One model size: shared by the encoder and the decoder, which differ only
/// in attention pattern and objective at run time.
struct ModelConfig {
  int num_layers = 0;
  int hidden_size = 0;
  int intermediate_size = 0;
  int num_heads = 0;
  int vocab_size = 50368;
  int max_seq_len = 1024;
  double rope_base_global = 10000.0;
  double rope_base_local = 10000.0;
  int sliding_window = 128;
  int global_every = 3;
  double norm_eps = 1e-12;
  double attn_output_dropout = 0.1;
  bool embedding_norm = true;
  bool final_norm = true;
  bool skip_first_prenorm = true;
  bool tie_embeddings = true;

  int head_dim() const { return num_heads > 0 ? hidden_size / num_heads : 0; }

  void validate() const {
    if (num_layers < 1) throw ConfigError("model: num_layers must be >= 1");
    if (hidden_size < 1 || num_heads < 1 || intermediate_size < 1)
      throw ConfigError("model: sizes must be positive");
    if (vocab_size < 1) throw ConfigError("model: vocab_size must be positive");
    if (hidden_size % num_heads != 0)
      throw ConfigError("model: hidden_size not divisible by num_heads");
    if (head_dim() % 2 != 0)
      throw ConfigError("model: head dimension must be even for rotary pairing");
    if (sliding_window < 2 || sliding_window % 2 != 0)
      throw ConfigError("model: sliding_window must be even and >= 2");
    if (global_every < 1) throw ConfigError("model: global_every must be >= 1");
    if (rope_base_global <= 0.0 || rope_base_local <= 0.0)
      throw ConfigError("model: rope bases must be positive");
    if (max_seq_len < 1) throw ConfigError("model: max_seq_len must be >= 1");
    if (attn_output_dropout < 0.0 || attn_output_dropout >= 1.0)
      throw ConfigError("model: attn_output_dropout must be in [0,1)");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"num_layers", num_layers},
                          {"hidden_size", hidden_size},
                          {"intermediate_size", intermediate_size},
                          {"num_heads", num_heads},
                          {"vocab_size", vocab_size},
                          {"max_seq_len", max_seq_len},
                          {"rope_base_global", rope_base_global},
                          {"rope_base_local", rope_base_local},
                          {"sliding_window", sliding_window},
                          {"global_every", global_every},
                          {"norm_eps", norm_eps},
                          {"attn_output_dropout", attn_output_dropout},
                          {"embedding_norm", embedding_norm},
                          {"final_norm", final_norm},
                          {"skip_first_prenorm", skip_first_prenorm},
                          {"tie_embeddings", tie_embeddings}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<int>();
    c.hidden_size = j.at("hidden_size").get<int>();
    c.intermediate_size = j.at("intermediate_size").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.rope_base_global = j.value("rope_base_global", c.rope_base_global);
    c.rope_base_local = j.value("rope_base_local", c.rope_base_local);
    c.sliding_window = j.value("sliding_window", c.sliding_window);
    c.global_every = j.value("global_every", c.global_every);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
    c.attn_output_dropout = j.value("attn_output_dropout", c.attn_output_dropout);
    c.embedding_norm = j.value("embedding_norm", c.embedding_norm);
    c.final_norm = j.value("final_norm", c.final_norm);
    c.skip_first_prenorm = j.value("skip_first_prenorm", c.skip_first_prenorm);
    c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
    return c;
  }

  /// Canonical digest used to detect config drift between checkpoint and run.
  std::string digest() const { return sha256_hex(to_json().dump()); }
};

struct ParamCount {
  std::uint64_t total = 0;
  std::uint64_t embedding = 0;      // token-embedding matrix only
  std::uint64_t non_embedding = 0;
};

/// Global attention every `global_every` layers starting at layer 0; all
/// other layers use the sliding window.
inline AttentionKind attention_layout(const ModelConfig& cfg, int layer_idx) {
  if (layer_idx < 0 || layer_idx >= cfg.num_layers)
    throw InputError("attention_layout: layer index out of range");
  return layer_idx % cfg.global_every == 0 ? AttentionKind::Global : AttentionKind::Local;
}

/// Analytic parameter count of the exact build below.
inline ParamCount count_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const std::uint64_t v = static_cast<std::uint64_t>(cfg.vocab_size);
  const std::uint64_t h = static_cast<std::uint64_t>(cfg.hidden_size);
  const std::uint64_t inter = static_cast<std::uint64_t>(cfg.intermediate_size);
  ParamCount pc;
  pc.embedding = v * h;
  std::uint64_t rest = 0;
  if (cfg.embedding_norm) rest += h;
  for (int l = 0; l < cfg.num_layers; ++l) {
    if (!(l == 0 && cfg.skip_first_prenorm)) rest += h;  // attention prenorm gain
    rest += h * 3 * h;                                   // fused qkv projection
    rest += h * h;                                       // attention output projection
    rest += h;                                           // mlp prenorm gain
    rest += h * 2 * inter;                               // glu input projection
    rest += inter * h;                                   // mlp output projection
  }
  if (cfg.final_norm) rest += h;
  if (!cfg.tie_embeddings) rest += v * h;
  pc.non_embedding = rest;
  pc.total = pc.embedding + pc.non_embedding;
  return pc;
}

/// ModernBERT-style prenorm transformer: token embedding + embedding norm,
/// per layer a bias-free fused-QKV attention block (rotary positions, global
/// or sliding-window mask) and a bias-free GLU MLP, final norm, and an LM
/// head tied to the embedding table.
template <typename Scalar>
class TransformerModel {
 public:
  static TransformerModel build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    TransformerModel m;
    m.cfg_ = cfg;
    m.rope_global_ = cfg.rope_base_global;
    m.rope_local_ = cfg.rope_base_local;
    Rng rng = Rng::derive(seed, "model-init");
    const double init_std = 0.02;
    const Eigen::Index h = cfg.hidden_size;
    const Eigen::Index inter = cfg.intermediate_size;
    const Eigen::Index v = cfg.vocab_size;

    m.tok_embed_ = m.add_param("embed.tok", normal_init(rng, v, h, init_std));
    if (cfg.embedding_norm) m.embed_norm_g_ = m.add_param("embed.norm.g", ones(1, h));
    m.layers_.resize(cfg.num_layers);
    for (int l = 0; l < cfg.num_layers; ++l) {
      const std::string p = "layer" + pad2(l) + ".";
      Layer& ly = m.layers_[l];
      if (!(l == 0 && cfg.skip_first_prenorm))
        ly.attn_norm_g = m.add_param(p + "attn.norm.g", ones(1, h));
      ly.wqkv = m.add_param(p + "attn.wqkv", normal_init(rng, h, 3 * h, init_std));
      ly.wo = m.add_param(p + "attn.wo", normal_init(rng, h, h, init_std));
      ly.mlp_norm_g = m.add_param(p + "mlp.norm.g", ones(1, h));
      ly.wi = m.add_param(p + "mlp.wi", normal_init(rng, h, 2 * inter, init_std));
      ly.wo_mlp = m.add_param(p + "mlp.wo", normal_init(rng, inter, h, init_std));
    }
    if (cfg.final_norm) m.final_norm_g_ = m.add_param("final.norm.g", ones(1, h));
    if (cfg.tie_embeddings) {
      m.head_ = m.tok_embed_;  // shared storage: gradients from both uses accumulate
    } else {
      m.head_ = m.add_param("head.w", normal_init(rng, v, h, init_std));
    }
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  double rope_base_global() const { return rope_global_; }
  double rope_base_local() const { return rope_local_; }

  void set_rope_base(double base_global, double base_local) {
    if (base_global <= 0.0 || base_local <= 0.0)
      throw ConfigError("set_rope_base: bases must be positive");
    rope_global_ = base_global;
    rope_local_ = base_local;
  }

  /// Forward pass over one token sequence; logits are [seq x vocab].
  /// Dropout fires only when train is set (and needs an rng stream).
  Tensor<Scalar> forward(std::span<const std::int32_t> ids, AttentionMode mode,
                         bool train = false, Rng* dropout_rng = nullptr) const {
    const Eigen::Index t = static_cast<Eigen::Index>(ids.size());
    if (t < 1) throw InputError("forward: empty sequence");
    if (t > cfg_.max_seq_len)
      throw InputError("forward: sequence length " + std::to_string(t) +
                       " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    for (std::int32_t id : ids)
      if (id < 0 || id >= cfg_.vocab_size)
        throw InputError("forward: token id " + std::to_string(id) + " out of range");
    if (train && cfg_.attn_output_dropout > 0.0 && dropout_rng == nullptr)
      throw UsageError("forward: train mode needs a dropout rng");

    const ByteMask global_mask = build_mask(t, mode, AttentionKind::Global);
    const ByteMask local_mask = build_mask(t, mode, AttentionKind::Local);
    std::vector<long> positions(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<long>(i);

    std::vector<std::int32_t> idvec(ids.begin(), ids.end());
    Tensor<Scalar> x = embedding_rows(tok_embed_, idvec);
    if (cfg_.embedding_norm) x = layer_norm(x, embed_norm_g_, cfg_.norm_eps);

    const int heads = cfg_.num_heads;
    const Eigen::Index h = cfg_.hidden_size;
    const Eigen::Index dh = cfg_.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = 0; l < cfg_.num_layers; ++l) {
      const Layer& ly = layers_[l];
      const AttentionKind kind = attention_layout(cfg_, l);
      const ByteMask& mask = kind == AttentionKind::Global ? global_mask : local_mask;
      const double base = kind == AttentionKind::Global ? rope_global_ : rope_local_;

      Tensor<Scalar> hin =
          (l == 0 && cfg_.skip_first_prenorm) ? x : layer_norm(x, ly.attn_norm_g, cfg_.norm_eps);
      Tensor<Scalar> qkv = matmul(hin, ly.wqkv);
      Tensor<Scalar> q = rotary_apply(slice_cols(qkv, 0, h), heads, base, positions);
      Tensor<Scalar> k = rotary_apply(slice_cols(qkv, h, h), heads, base, positions);
      Tensor<Scalar> v = slice_cols(qkv, 2 * h, h);

      std::vector<Tensor<Scalar>> head_out;
      head_out.reserve(heads);
      for (int hd = 0; hd < heads; ++hd) {
        Tensor<Scalar> qh = slice_cols(q, hd * dh, dh);
        Tensor<Scalar> kh = slice_cols(k, hd * dh, dh);
        Tensor<Scalar> vh = slice_cols(v, hd * dh, dh);
        Tensor<Scalar> scores = scale(matmul_transposed(qh, kh), inv_sqrt_dh);
        Tensor<Scalar> attn = softmax_last(scores, &mask);
        head_out.push_back(matmul(attn, vh));
      }
      Tensor<Scalar> attn_out = heads == 1 ? head_out[0] : concat_cols(head_out);
      Tensor<Scalar> proj = matmul(attn_out, ly.wo);
      if (train && cfg_.attn_output_dropout > 0.0)
        proj = dropout(proj, cfg_.attn_output_dropout, *dropout_rng);
      x = add(x, proj);

      Tensor<Scalar> hm = layer_norm(x, ly.mlp_norm_g, cfg_.norm_eps);
      Tensor<Scalar> wi_out = matmul(hm, ly.wi);
      Tensor<Scalar> gated = mul(gelu(slice_cols(wi_out, 0, cfg_.intermediate_size)),
                                 slice_cols(wi_out, cfg_.intermediate_size, cfg_.intermediate_size));
      x = add(x, matmul(gated, ly.wo_mlp));
    }

    if (cfg_.final_norm) x = layer_norm(x, final_norm_g_, cfg_.norm_eps);
    return matmul_transposed(x, head_);
  }

  std::vector<std::pair<std::string, Tensor<Scalar>>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor<Scalar>>>& parameters() const {
    return params_;
  }

  Tensor<Scalar> param(std::string_view name) const {
    for (const auto& [n, t] : params_)
      if (n == name) return t;
    throw InputError("no parameter named " + std::string(name));
  }

  /// Enumerated element count over the actually built tensors.
  std::uint64_t parameter_count() const {
    std::uint64_t n = 0;
    for (const auto& [name, t] : params_) n += static_cast<std::uint64_t>(t.numel());
    return n;
  }

  /// Digest over raw parameter bytes in registration order.
  std::string weights_digest() const {
    Sha256Stream h;
    for (const auto& [name, t] : params_) {
      h.update(name.data(), name.size());
      h.update(t.value().data(), sizeof(Scalar) * static_cast<std::size_t>(t.numel()));
    }
    Sha256Digest d = h.finish();
    return to_hex(d);
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

 private:
  struct Layer {
    Tensor<Scalar> attn_norm_g;  // undefined on layer 0 when skip_first_prenorm
    Tensor<Scalar> wqkv, wo;
    Tensor<Scalar> mlp_norm_g, wi, wo_mlp;
  };

  static std::string pad2(int l) {
    std::string s = std::to_string(l);
    return l < 10 ? "0" + s : s;
  }

  static Matrix<Scalar> normal_init(Rng& rng, Eigen::Index r, Eigen::Index c, double std) {
    Matrix<Scalar> m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = static_cast<Scalar>(rng.normal(0.0, std));
    return m;
  }

  static Matrix<Scalar> ones(Eigen::Index r, Eigen::Index c) {
    return Matrix<Scalar>::Ones(r, c);
  }

  Tensor<Scalar> add_param(const std::string& name, Matrix<Scalar> value) {
    Tensor<Scalar> t = Tensor<Scalar>::from_matrix(std::move(value), /*requires_grad=*/true);
    params_.emplace_back(name, t);
    return t;
  }

  ByteMask build_mask(Eigen::Index t, AttentionMode mode, AttentionKind kind) const {
    ByteMask m(t, t);
    const Eigen::Index half = cfg_.sliding_window / 2;
    for (Eigen::Index i = 0; i < t; ++i)
      for (Eigen::Index j = 0; j < t; ++j) {
        bool ok = true;
        if (mode == AttentionMode::Causal && j > i) ok = false;
        if (kind == AttentionKind::Local && (j > i + half || j < i - half)) ok = false;
        m(i, j) = ok ? 1 : 0;
      }
    return m;
  }

  ModelConfig cfg_;
  double rope_global_ = 10000.0;
  double rope_local_ = 10000.0;
  Tensor<Scalar> tok_embed_, embed_norm_g_, final_norm_g_, head_;
  std::vector<Layer> layers_;
  std::vector<std::pair<std::string, Tensor<Scalar>>> params_;
};

}  // namespace pairlm
