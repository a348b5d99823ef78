#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gtrans/nn.hpp"

namespace gtrans {

struct AttentionMask {
  std::vector<std::uint8_t> blocked;  // [queries, keys], 1 = blocked
  std::size_t queries = 0;
  std::size_t keys = 0;
};

/// Blocks key j for query i whenever j > i.
AttentionMask make_causal_mask(std::size_t steps);

template <typename Real>
struct AttentionResult {
  Tensor<Real> output;   // [..., Tq, Dh]
  Tensor<Real> weights;  // [..., Tq, Tk]
};

/// softmax(q k^T / sqrt(d_h) + mask) v over the last two axes.
/// q: [..., Tq, Dh], k and v: [..., Tk, Dh]. Blocked positions get exactly zero
/// weight. Dropout, when active, applies to the weights used for the output;
/// the returned weights are the undropped ones.
template <typename Real>
AttentionResult<Real> scaled_dot_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                                           const AttentionMask* mask, double dropout_rate = 0.0,
                                           const ForwardMode& mode = {});

/// Multi-head attention with a joint query/key/value projection H_qkv
/// ([d, 3d], no bias) and an output projection H_msa ([d, d], no bias). Heads
/// take contiguous d/heads column blocks of each of q, k and v.
template <typename Real>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t model_dim, std::size_t heads, Rng& rng);

  /// Self-attention over z: [B, T, d].
  Tensor<Real> forward(const Tensor<Real>& z, const AttentionMask* mask, double dropout_rate,
                       const ForwardMode& mode, Tensor<Real>* weights_out = nullptr) const;

  /// Queries from x: [B, Tq, d]; keys and values from memory: [B, Tk, d].
  Tensor<Real> cross(const Tensor<Real>& x, const Tensor<Real>& memory, double dropout_rate,
                     const ForwardMode& mode, Tensor<Real>* weights_out = nullptr) const;

  void collect(ParameterSet<Real>& out, const std::string& prefix) const;

  std::size_t model_dim() const { return output_weight.dim(0); }
  std::size_t head_dim() const { return model_dim() / heads; }

  Tensor<Real> qkv_weight;     // H_qkv
  Tensor<Real> output_weight;  // H_msa
  std::size_t heads = 1;

 private:
  Tensor<Real> attend(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v, const AttentionMask* mask,
                      double dropout_rate, const ForwardMode& mode, Tensor<Real>* weights_out) const;
  Tensor<Real> split_heads(const Tensor<Real>& x) const;
};

/// z_t = E x_t + e_pos[t]. The position table is zero at initialization.
template <typename Real>
class PositionalEmbedding {
 public:
  PositionalEmbedding() = default;
  PositionalEmbedding(std::size_t input_dim, std::size_t model_dim, std::size_t max_steps, Rng& rng);

  /// x: [B, T, input_dim] -> [B, T, model_dim]. Throws if T exceeds the table.
  Tensor<Real> forward(const Tensor<Real>& x) const;
  void collect(ParameterSet<Real>& out, const std::string& prefix) const;

  std::size_t max_steps() const { return positions.dim(0); }

  Tensor<Real> projection;  // E: [input_dim, model_dim]
  Tensor<Real> positions;   // e_pos: [max_steps, model_dim]
};

template <typename Real>
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(std::size_t model_dim, std::size_t heads, std::size_t ff_width, Rng& rng);

  Tensor<Real> forward(const Tensor<Real>& x, double dropout_rate, const ForwardMode& mode,
                       Tensor<Real>* weights_out = nullptr) const;
  void collect(ParameterSet<Real>& out, const std::string& prefix) const;

  LayerNorm<Real> attention_norm;
  MultiHeadAttention<Real> attention;
  LayerNorm<Real> ff_norm;
  FeedForward<Real> ff;
};

template <typename Real>
class DecoderBlock {
 public:
  DecoderBlock() = default;
  DecoderBlock(std::size_t model_dim, std::size_t heads, std::size_t ff_width, Rng& rng);

  Tensor<Real> forward(const Tensor<Real>& x, const Tensor<Real>& memory, double dropout_rate,
                       const ForwardMode& mode, Tensor<Real>* self_weights_out = nullptr,
                       Tensor<Real>* cross_weights_out = nullptr) const;
  void collect(ParameterSet<Real>& out, const std::string& prefix) const;

  LayerNorm<Real> self_norm;
  MultiHeadAttention<Real> self_attention;
  LayerNorm<Real> cross_norm;
  MultiHeadAttention<Real> cross_attention;
  LayerNorm<Real> ff_norm;
  FeedForward<Real> ff;
};

struct TransformerConfig {
  std::size_t nodes = 1;
  std::size_t embed_dim = 1;  // per node; model width is nodes * embed_dim
  std::size_t heads = 1;
  std::size_t encoder_blocks = 2;
  std::size_t decoder_blocks = 2;
  std::size_t ff_multiplier = 4;
  std::size_t max_steps = 16;
  double dropout = 0.1;

  std::size_t model_dim() const { return nodes * embed_dim; }
};

/// Attention weights captured from one forward pass, one entry per block.
template <typename Real>
struct AttentionTrace {
  std::vector<Tensor<Real>> encoder;
  std::vector<Tensor<Real>> decoder_self;
  std::vector<Tensor<Real>> decoder_cross;
};

/// Transformer encoder/decoder over flattened graph embeddings, followed by
/// the temporal projection back to the node embedding width.
template <typename Real>
class SpatiotemporalTransformer {
 public:
  SpatiotemporalTransformer() = default;
  SpatiotemporalTransformer(const TransformerConfig& config, Rng& rng);

  /// e: [B, T, N, D] -> memory [B, T, N, D].
  Tensor<Real> encode(const Tensor<Real>& e, const ForwardMode& mode, AttentionTrace<Real>* trace = nullptr) const;

  /// Causal decoding of tgt [B, T, N, D] against memory [B, T, N, D],
  /// then the temporal projection. Returns [B, T, N, D].
  Tensor<Real> decode(const Tensor<Real>& tgt, const Tensor<Real>& memory, const ForwardMode& mode,
                      AttentionTrace<Real>* trace = nullptr) const;

  /// Decoder stack output before the temporal projection: [B, T, model_dim].
  Tensor<Real> decode_hidden(const Tensor<Real>& tgt, const Tensor<Real>& memory, const ForwardMode& mode,
                             AttentionTrace<Real>* trace = nullptr) const;

  /// h: [B, T, model_dim] -> [B, T, N, D].
  Tensor<Real> temporal_projection(const Tensor<Real>& h) const;

  void collect(ParameterSet<Real>& out, const std::string& prefix) const;
  const TransformerConfig& config() const { return config_; }

  PositionalEmbedding<Real> encoder_embedding;
  std::vector<EncoderBlock<Real>> encoder_blocks;
  LayerNorm<Real> encoder_norm;
  PositionalEmbedding<Real> decoder_embedding;
  std::vector<DecoderBlock<Real>> decoder_blocks;
  LayerNorm<Real> decoder_norm;
  Linear<Real> projection;

 private:
  Tensor<Real> flatten(const Tensor<Real>& e, const char* who) const;
  TransformerConfig config_;
};

extern template class MultiHeadAttention<float>;
extern template class MultiHeadAttention<double>;
extern template class PositionalEmbedding<float>;
extern template class PositionalEmbedding<double>;
extern template class EncoderBlock<float>;
extern template class EncoderBlock<double>;
extern template class DecoderBlock<float>;
extern template class DecoderBlock<double>;
extern template class SpatiotemporalTransformer<float>;
extern template class SpatiotemporalTransformer<double>;

}  // namespace gtrans
