#include "gtrans/transformer.hpp"

#include <cmath>

#include "gtrans/errors.hpp"

namespace gtrans {

namespace {

// Large finite fill keeps every tensor finite while exp() still underflows to 0.
constexpr double kBlockedScore = -1e30;

}  // namespace

AttentionMask make_causal_mask(std::size_t steps) {
  AttentionMask mask{std::vector<std::uint8_t>(steps * steps, 0), steps, steps};
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t j = i + 1; j < steps; ++j) mask.blocked[i * steps + j] = 1;
  }
  return mask;
}

template <typename Real>
AttentionResult<Real> scaled_dot_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                                           const AttentionMask* mask, double dropout_rate,
                                           const ForwardMode& mode) {
  if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank() || q.shape().back() != k.shape().back()) {
    throw DimensionError("attention: incompatible q " + to_string(q.shape()) + ", k " + to_string(k.shape()) +
                         ", v " + to_string(v.shape()));
  }
  const std::size_t r = q.rank();
  const Real inv_scale = Real(1) / std::sqrt(static_cast<Real>(q.shape().back()));
  auto scores = scale(matmul(q, transpose(k, r - 2, r - 1)), inv_scale);
  if (mask != nullptr) {
    const std::size_t tq = q.dim(r - 2);
    const std::size_t tk = k.dim(r - 2);
    if (mask->queries != tq || mask->keys != tk) {
      throw DimensionError("attention: mask [" + std::to_string(mask->queries) + ", " + std::to_string(mask->keys) +
                           "] does not match scores [" + std::to_string(tq) + ", " + std::to_string(tk) + "]");
    }
    scores = masked_fill(scores, std::span<const std::uint8_t>(mask->blocked), Shape{tq, tk},
                         static_cast<Real>(kBlockedScore));
  }
  auto weights = softmax(scores, r - 1);
  return {matmul(apply_dropout(weights, dropout_rate, mode), v), weights};
}

// ---------------------------------------------------------------------------

template <typename Real>
MultiHeadAttention<Real>::MultiHeadAttention(std::size_t model_dim, std::size_t heads, Rng& rng)
    : qkv_weight(xavier_uniform<Real>(model_dim, 3 * model_dim, rng)),
      output_weight(xavier_uniform<Real>(model_dim, model_dim, rng)),
      heads(heads) {
  if (heads == 0 || model_dim % heads != 0) {
    throw ContractError("model width " + std::to_string(model_dim) + " is not divisible by " +
                        std::to_string(heads) + " heads");
  }
}

template <typename Real>
Tensor<Real> MultiHeadAttention<Real>::split_heads(const Tensor<Real>& x) const {
  // [B, T, d] -> [B, heads, T, d_h]
  return transpose(reshape(x, {x.dim(0), x.dim(1), heads, head_dim()}), 1, 2);
}

template <typename Real>
Tensor<Real> MultiHeadAttention<Real>::attend(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                                              const AttentionMask* mask, double dropout_rate,
                                              const ForwardMode& mode, Tensor<Real>* weights_out) const {
  const std::size_t batch = q.dim(0);
  const std::size_t steps = q.dim(1);
  auto result = scaled_dot_attention(split_heads(q), split_heads(k), split_heads(v), mask, dropout_rate, mode);
  if (weights_out != nullptr) *weights_out = result.weights;
  auto merged = reshape(transpose(result.output, 1, 2), {batch, steps, model_dim()});
  return matmul(merged, output_weight);
}

template <typename Real>
Tensor<Real> MultiHeadAttention<Real>::forward(const Tensor<Real>& z, const AttentionMask* mask, double dropout_rate,
                                               const ForwardMode& mode, Tensor<Real>* weights_out) const {
  if (z.rank() != 3 || z.dim(2) != model_dim()) {
    throw DimensionError("attention: input " + to_string(z.shape()) + " does not match width " +
                         std::to_string(model_dim()));
  }
  const std::size_t d = model_dim();
  auto qkv = matmul(z, qkv_weight);
  return attend(slice(qkv, 2, 0, d), slice(qkv, 2, d, d), slice(qkv, 2, 2 * d, d), mask, dropout_rate, mode,
                weights_out);
}

template <typename Real>
Tensor<Real> MultiHeadAttention<Real>::cross(const Tensor<Real>& x, const Tensor<Real>& memory, double dropout_rate,
                                             const ForwardMode& mode, Tensor<Real>* weights_out) const {
  const std::size_t d = model_dim();
  if (x.rank() != 3 || memory.rank() != 3 || x.dim(2) != d || memory.dim(2) != d || x.dim(0) != memory.dim(0)) {
    throw DimensionError("cross attention: query " + to_string(x.shape()) + " and memory " +
                         to_string(memory.shape()) + " do not match width " + std::to_string(d));
  }
  auto q = matmul(x, slice(qkv_weight, 1, 0, d));
  auto kv = matmul(memory, slice(qkv_weight, 1, d, 2 * d));
  return attend(q, slice(kv, 2, 0, d), slice(kv, 2, d, d), nullptr, dropout_rate, mode, weights_out);
}

template <typename Real>
void MultiHeadAttention<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  out.push_back({prefix + ".qkv_weight", qkv_weight});
  out.push_back({prefix + ".output_weight", output_weight});
}

// ---------------------------------------------------------------------------

template <typename Real>
PositionalEmbedding<Real>::PositionalEmbedding(std::size_t input_dim, std::size_t model_dim, std::size_t max_steps,
                                               Rng& rng)
    : projection(xavier_uniform<Real>(input_dim, model_dim, rng)),
      positions(zeros_parameter<Real>({max_steps, model_dim})) {}

template <typename Real>
Tensor<Real> PositionalEmbedding<Real>::forward(const Tensor<Real>& x) const {
  if (x.rank() != 3 || x.dim(2) != projection.dim(0)) {
    throw DimensionError("positional embedding: input " + to_string(x.shape()) + " does not match projection " +
                         to_string(projection.shape()));
  }
  const std::size_t steps = x.dim(1);
  if (steps > max_steps()) {
    throw ContractError("window of " + std::to_string(steps) + " steps exceeds the position table (" +
                        std::to_string(max_steps()) + ")");
  }
  return add(matmul(x, projection), slice(positions, 0, 0, steps));
}

template <typename Real>
void PositionalEmbedding<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  out.push_back({prefix + ".projection", projection});
  out.push_back({prefix + ".positions", positions});
}

// ---------------------------------------------------------------------------

template <typename Real>
EncoderBlock<Real>::EncoderBlock(std::size_t model_dim, std::size_t heads, std::size_t ff_width, Rng& rng)
    : attention_norm(model_dim),
      attention(model_dim, heads, rng),
      ff_norm(model_dim),
      ff(model_dim, ff_width, rng) {}

template <typename Real>
Tensor<Real> EncoderBlock<Real>::forward(const Tensor<Real>& x, double dropout_rate, const ForwardMode& mode,
                                         Tensor<Real>* weights_out) const {
  auto h = add(x, apply_dropout(attention.forward(attention_norm.forward(x), nullptr, dropout_rate, mode, weights_out),
                                dropout_rate, mode));
  return add(h, apply_dropout(ff.forward(ff_norm.forward(h), dropout_rate, mode), dropout_rate, mode));
}

template <typename Real>
void EncoderBlock<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  attention_norm.collect(out, prefix + ".attention_norm");
  attention.collect(out, prefix + ".attention");
  ff_norm.collect(out, prefix + ".ff_norm");
  ff.collect(out, prefix + ".ff");
}

template <typename Real>
DecoderBlock<Real>::DecoderBlock(std::size_t model_dim, std::size_t heads, std::size_t ff_width, Rng& rng)
    : self_norm(model_dim),
      self_attention(model_dim, heads, rng),
      cross_norm(model_dim),
      cross_attention(model_dim, heads, rng),
      ff_norm(model_dim),
      ff(model_dim, ff_width, rng) {}

template <typename Real>
Tensor<Real> DecoderBlock<Real>::forward(const Tensor<Real>& x, const Tensor<Real>& memory, double dropout_rate,
                                         const ForwardMode& mode, Tensor<Real>* self_weights_out,
                                         Tensor<Real>* cross_weights_out) const {
  const AttentionMask causal = make_causal_mask(x.dim(1));
  auto h = add(x, apply_dropout(self_attention.forward(self_norm.forward(x), &causal, dropout_rate, mode,
                                                       self_weights_out),
                                dropout_rate, mode));
  h = add(h, apply_dropout(cross_attention.cross(cross_norm.forward(h), memory, dropout_rate, mode, cross_weights_out),
                           dropout_rate, mode));
  return add(h, apply_dropout(ff.forward(ff_norm.forward(h), dropout_rate, mode), dropout_rate, mode));
}

template <typename Real>
void DecoderBlock<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  self_norm.collect(out, prefix + ".self_norm");
  self_attention.collect(out, prefix + ".self_attention");
  cross_norm.collect(out, prefix + ".cross_norm");
  cross_attention.collect(out, prefix + ".cross_attention");
  ff_norm.collect(out, prefix + ".ff_norm");
  ff.collect(out, prefix + ".ff");
}

// ---------------------------------------------------------------------------

template <typename Real>
SpatiotemporalTransformer<Real>::SpatiotemporalTransformer(const TransformerConfig& config, Rng& rng)
    : config_(config) {
  const std::size_t d = config.model_dim();
  const std::size_t ff_width = config.ff_multiplier * d;
  encoder_embedding = PositionalEmbedding<Real>(d, d, config.max_steps, rng);
  for (std::size_t i = 0; i < config.encoder_blocks; ++i) encoder_blocks.emplace_back(d, config.heads, ff_width, rng);
  encoder_norm = LayerNorm<Real>(d);
  decoder_embedding = PositionalEmbedding<Real>(d, d, config.max_steps, rng);
  for (std::size_t i = 0; i < config.decoder_blocks; ++i) decoder_blocks.emplace_back(d, config.heads, ff_width, rng);
  decoder_norm = LayerNorm<Real>(d);
  projection = Linear<Real>(d, d, rng);
}

template <typename Real>
Tensor<Real> SpatiotemporalTransformer<Real>::flatten(const Tensor<Real>& e, const char* who) const {
  if (e.rank() == 3 && e.dim(2) == config_.model_dim()) return e;
  if (e.rank() != 4 || e.dim(2) != config_.nodes || e.dim(3) != config_.embed_dim) {
    throw DimensionError(std::string(who) + ": expected [B, T, " + std::to_string(config_.nodes) + ", " +
                         std::to_string(config_.embed_dim) + "], got " + to_string(e.shape()));
  }
  // Node-major flattening: column n * D + d holds node n, channel d.
  return reshape(e, {e.dim(0), e.dim(1), config_.model_dim()});
}

template <typename Real>
Tensor<Real> SpatiotemporalTransformer<Real>::encode(const Tensor<Real>& e, const ForwardMode& mode,
                                                     AttentionTrace<Real>* trace) const {
  auto z = encoder_embedding.forward(flatten(e, "transformer encode"));
  for (const auto& block : encoder_blocks) {
    Tensor<Real> weights;
    z = block.forward(z, config_.dropout, mode, trace ? &weights : nullptr);
    if (trace) trace->encoder.push_back(weights);
  }
  z = encoder_norm.forward(z);
  return reshape(z, {z.dim(0), z.dim(1), config_.nodes, config_.embed_dim});
}

template <typename Real>
Tensor<Real> SpatiotemporalTransformer<Real>::decode_hidden(const Tensor<Real>& tgt, const Tensor<Real>& memory,
                                                            const ForwardMode& mode,
                                                            AttentionTrace<Real>* trace) const {
  auto mem = flatten(memory, "transformer decode (memory)");
  auto x = decoder_embedding.forward(flatten(tgt, "transformer decode"));
  if (mem.dim(0) != x.dim(0)) {
    throw DimensionError("decode: target batch " + to_string(tgt.shape()) + " vs memory " + to_string(memory.shape()));
  }
  for (const auto& block : decoder_blocks) {
    Tensor<Real> self_w;
    Tensor<Real> cross_w;
    x = block.forward(x, mem, config_.dropout, mode, trace ? &self_w : nullptr, trace ? &cross_w : nullptr);
    if (trace) {
      trace->decoder_self.push_back(self_w);
      trace->decoder_cross.push_back(cross_w);
    }
  }
  return decoder_norm.forward(x);
}

template <typename Real>
Tensor<Real> SpatiotemporalTransformer<Real>::temporal_projection(const Tensor<Real>& h) const {
  if (h.rank() != 3 || h.dim(2) != config_.model_dim()) {
    throw DimensionError("temporal projection: expected [B, T, " + std::to_string(config_.model_dim()) + "], got " +
                         to_string(h.shape()));
  }
  auto y = projection.forward(h);
  return reshape(y, {h.dim(0), h.dim(1), config_.nodes, config_.embed_dim});
}

template <typename Real>
Tensor<Real> SpatiotemporalTransformer<Real>::decode(const Tensor<Real>& tgt, const Tensor<Real>& memory,
                                                     const ForwardMode& mode, AttentionTrace<Real>* trace) const {
  return temporal_projection(decode_hidden(tgt, memory, mode, trace));
}

template <typename Real>
void SpatiotemporalTransformer<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  encoder_embedding.collect(out, prefix + ".encoder_embedding");
  for (std::size_t i = 0; i < encoder_blocks.size(); ++i) {
    encoder_blocks[i].collect(out, prefix + ".encoder." + std::to_string(i));
  }
  encoder_norm.collect(out, prefix + ".encoder_norm");
  decoder_embedding.collect(out, prefix + ".decoder_embedding");
  for (std::size_t i = 0; i < decoder_blocks.size(); ++i) {
    decoder_blocks[i].collect(out, prefix + ".decoder." + std::to_string(i));
  }
  decoder_norm.collect(out, prefix + ".decoder_norm");
  projection.collect(out, prefix + ".projection");
}

template AttentionResult<float> scaled_dot_attention(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                                     const AttentionMask*, double, const ForwardMode&);
template AttentionResult<double> scaled_dot_attention(const Tensor<double>&, const Tensor<double>&,
                                                      const Tensor<double>&, const AttentionMask*, double,
                                                      const ForwardMode&);
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class PositionalEmbedding<float>;
template class PositionalEmbedding<double>;
template class EncoderBlock<float>;
template class EncoderBlock<double>;
template class DecoderBlock<float>;
template class DecoderBlock<double>;
template class SpatiotemporalTransformer<float>;
template class SpatiotemporalTransformer<double>;

}  // namespace gtrans
