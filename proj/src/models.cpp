#include "gtrans/models.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "gtrans/binary_io.hpp"
#include "gtrans/errors.hpp"

namespace gtrans {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::gtrans: return "gtrans";
    case ModelKind::mlp_ae: return "mlp-ae";
    case ModelKind::lstm_ae: return "lstm-ae";
    case ModelKind::gcn_lstm: return "gcn-lstm";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  for (auto kind : {ModelKind::gtrans, ModelKind::mlp_ae, ModelKind::lstm_ae, ModelKind::gcn_lstm}) {
    if (to_string(kind) == name) return kind;
  }
  throw ValidationError("unknown model kind '" + name + "' (expected gtrans, mlp-ae, lstm-ae or gcn-lstm)");
}

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError(msg); };
  if (window < 2) fail("window must be at least 2");
  if (nodes < 1) fail("nodes must be at least 1");
  if (features < 1) fail("features must be at least 1");
  if (embed_dim < 1) fail("embed_dim must be at least 1");
  if (heads < 1) fail("heads must be at least 1");
  if ((nodes * embed_dim) % heads != 0) {
    fail("nodes * embed_dim (" + std::to_string(nodes * embed_dim) + ") must be divisible by heads (" +
         std::to_string(heads) + ")");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must lie in [0, 1]");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
}

KeyValues ModelConfig::to_key_values() const {
  KeyValues kv;
  kv.set("model", to_string(kind));
  kv.set("window", std::to_string(window));
  kv.set("nodes", std::to_string(nodes));
  kv.set("features", std::to_string(features));
  kv.set("embed_dim", std::to_string(embed_dim));
  kv.set("heads", std::to_string(heads));
  kv.set("encoder_blocks", std::to_string(encoder_blocks));
  kv.set("decoder_blocks", std::to_string(decoder_blocks));
  kv.set("gamma", format_double(gamma));
  kv.set("lambda", format_double(lambda));
  kv.set("dropout", format_double(dropout));
  kv.set("learning_rate", format_double(learning_rate));
  kv.set("epochs", std::to_string(epochs));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("seed", std::to_string(seed));
  return kv;
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) {
  ModelConfig c;
  c.kind = parse_model_kind(kv.get_string("model", to_string(c.kind)));
  c.window = kv.get_uint("window", c.window);
  c.nodes = kv.get_uint("nodes", c.nodes);
  c.features = kv.get_uint("features", c.features);
  c.embed_dim = kv.get_uint("embed_dim", c.embed_dim);
  c.heads = kv.get_uint("heads", c.heads);
  c.encoder_blocks = kv.get_uint("encoder_blocks", c.encoder_blocks);
  c.decoder_blocks = kv.get_uint("decoder_blocks", c.decoder_blocks);
  c.gamma = kv.get_double("gamma", c.gamma);
  c.lambda = kv.get_double("lambda", c.lambda);
  c.dropout = kv.get_double("dropout", c.dropout);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.epochs = kv.get_uint("epochs", c.epochs);
  c.batch_size = kv.get_uint("batch_size", c.batch_size);
  c.seed = kv.get_uint("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Forecaster

template <typename Real>
Forecaster<Real>::Forecaster(const ModelConfig& config) : config_(config), rng_(config.seed) {
  config_.validate();
}

template <typename Real>
void Forecaster<Real>::check_input(const Tensor<Real>& x, const GraphSpec& g) const {
  const Shape& s = x.shape();
  if (g.size() != config_.nodes) {
    throw DimensionError("graph has " + std::to_string(g.size()) + " nodes, model expects " +
                         std::to_string(config_.nodes));
  }
  if (s.size() != 4 || s[1] < 1 || s[1] > config_.window || s[2] != config_.nodes || s[3] != config_.features) {
    throw DimensionError("model expects [T <= " + std::to_string(config_.window) + ", " +
                         std::to_string(config_.nodes) + ", " + std::to_string(config_.features) +
                         "] windows, got " + to_string(s));
  }
}

namespace {

template <typename Real>
Tensor<Real> as_batch(const Tensor<Real>& x) {
  if (x.rank() == 3) return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  return x;
}

}  // namespace

template <typename Real>
Tensor<Real> Forecaster<Real>::forward(const Tensor<Real>& x, const GraphSpec& g, const ForwardMode& mode) const {
  const auto batch = as_batch(x);
  check_input(batch, g);
  auto y = forward_batch(batch, g, mode);
  return x.rank() == 3 ? reshape(y, x.shape()) : y;
}

template <typename Real>
Tensor<Real> Forecaster<Real>::latent(const Tensor<Real>& x, const GraphSpec& g) const {
  const auto batch = as_batch(x);
  check_input(batch, g);
  auto z = latent_batch(batch, g);
  return x.rank() == 3 ? reshape(z, {z.dim(1)}) : z;
}

template <typename Real>
std::vector<Tensor<Real>> Forecaster<Real>::parameter_tensors() const {
  std::vector<Tensor<Real>> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

template <typename Real>
std::size_t Forecaster<Real>::graph_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.name.rfind("graph_", 0) == 0) n += p.tensor.size();
  }
  return n;
}

template <typename Real>
void Forecaster<Real>::load_parameters(const ParameterSet<Real>& other) {
  if (other.size() != params_.size()) {
    throw DataError("parameter count mismatch: model has " + std::to_string(params_.size()) + ", source has " +
                    std::to_string(other.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& dst = params_[i];
    const auto& src = other[i];
    if (dst.name != src.name || dst.tensor.shape() != src.tensor.shape()) {
      throw DataError("parameter " + std::to_string(i) + ": expected " + dst.name + " " +
                      to_string(dst.tensor.shape()) + ", got " + src.name + " " + to_string(src.tensor.shape()));
    }
    auto values = dst.tensor.mutable_data();
    std::copy(src.tensor.data().begin(), src.tensor.data().end(), values.begin());
  }
}

template <typename Real>
void Forecaster<Real>::permute_nodes(const std::vector<std::size_t>&) {
  throw ContractError(to_string(config_.kind) + " is not node-equivariant");
}

namespace {

// Index map over node-major flattened features: slot n * width + d comes from
// node perm[n].
std::vector<std::size_t> flattened_permutation(const std::vector<std::size_t>& perm, std::size_t width) {
  std::vector<std::size_t> out(perm.size() * width);
  for (std::size_t n = 0; n < perm.size(); ++n) {
    for (std::size_t d = 0; d < width; ++d) out[n * width + d] = perm[n] * width + d;
  }
  return out;
}

template <typename Real>
void permute_rows(Tensor<Real>& t, const std::vector<std::size_t>& map) {
  const std::size_t cols = t.size() / t.dim(0);
  const std::vector<Real> old(t.data().begin(), t.data().end());
  auto out = t.mutable_data();
  for (std::size_t r = 0; r < map.size(); ++r) {
    std::copy_n(old.begin() + map[r] * cols, cols, out.begin() + r * cols);
  }
}

// Permutes columns within each of `blocks` equal column blocks.
template <typename Real>
void permute_columns(Tensor<Real>& t, const std::vector<std::size_t>& map, std::size_t blocks = 1) {
  const std::size_t cols = t.rank() == 1 ? t.size() : t.dim(1);
  const std::size_t rows = t.size() / cols;
  const std::size_t block = cols / blocks;
  const std::vector<Real> old(t.data().begin(), t.data().end());
  auto out = t.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t b = 0; b < blocks; ++b) {
      for (std::size_t j = 0; j < block; ++j) out[r * cols + b * block + j] = old[r * cols + b * block + map[j]];
    }
  }
}

void check_permutation(const std::vector<std::size_t>& perm, std::size_t n) {
  std::vector<bool> seen(n, false);
  if (perm.size() != n) throw DimensionError("permutation has wrong length");
  for (auto p : perm) {
    if (p >= n || seen[p]) throw ContractError("not a permutation");
    seen[p] = true;
  }
}

template <typename Real>
TransformerConfig transformer_config(const ModelConfig& c) {
  TransformerConfig t;
  t.nodes = c.nodes;
  t.embed_dim = c.embed_dim;
  t.heads = c.heads;
  t.encoder_blocks = c.encoder_blocks;
  t.decoder_blocks = c.decoder_blocks;
  t.max_steps = c.window;
  t.dropout = c.dropout;
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// GTrans

template <typename Real>
GTransModel<Real>::GTransModel(const ModelConfig& config)
    : Forecaster<Real>(config),
      graph_encoder(config.features, config.embed_dim, config.gamma, this->rng_),
      transformer(transformer_config<Real>(config), this->rng_),
      graph_decoder(config.embed_dim, config.features, config.gamma, this->rng_) {
  graph_encoder.collect(this->params_, "graph_encoder");
  transformer.collect(this->params_, "transformer");
  graph_decoder.collect(this->params_, "graph_decoder");
}

template <typename Real>
Tensor<Real> GTransModel<Real>::forward_batch(const Tensor<Real>& x, const GraphSpec& g,
                                              const ForwardMode& mode) const {
  const auto embeddings = graph_encoder.forward(x, g);
  const auto memory = transformer.encode(embeddings, mode);
  const auto predicted = transformer.decode(embeddings, memory, mode);
  return graph_decoder.forward(predicted, g);
}

template <typename Real>
Tensor<Real> GTransModel<Real>::latent_batch(const Tensor<Real>& x, const GraphSpec& g) const {
  const auto memory = transformer.encode(graph_encoder.forward(x, g), ForwardMode{});
  return mean(reshape(memory, {memory.dim(0), memory.dim(1), memory.dim(2) * memory.dim(3)}), 1);
}

template <typename Real>
void GTransModel<Real>::permute_nodes(const std::vector<std::size_t>& perm) {
  check_permutation(perm, this->config_.nodes);
  const auto map = flattened_permutation(perm, this->config_.embed_dim);
  permute_rows(transformer.encoder_embedding.projection, map);
  permute_rows(transformer.decoder_embedding.projection, map);
  permute_columns(transformer.projection.weight, map);
  permute_columns(transformer.projection.bias, map);
}

// ---------------------------------------------------------------------------
// MLP-AE

template <typename Real>
MlpAutoencoder<Real>::MlpAutoencoder(const ModelConfig& config) : Forecaster<Real>(config) {
  const std::size_t frame = config.nodes * config.features;
  const std::size_t hidden = config.nodes * config.embed_dim;
  auto& rng = this->rng_;
  encoder_in = Linear<Real>(frame, 2 * hidden, rng);
  encoder_out = Linear<Real>(2 * hidden, hidden, rng);
  window_projection = Linear<Real>(config.window * hidden, config.window * hidden, rng);
  decoder_in = Linear<Real>(hidden, 2 * hidden, rng);
  decoder_out = Linear<Real>(2 * hidden, frame, rng);
  encoder_in.collect(this->params_, "encoder.0");
  encoder_out.collect(this->params_, "encoder.1");
  window_projection.collect(this->params_, "projection");
  decoder_in.collect(this->params_, "decoder.0");
  decoder_out.collect(this->params_, "decoder.1");
}

template <typename Real>
Tensor<Real> MlpAutoencoder<Real>::project(const Tensor<Real>& x, const ForwardMode& mode) const {
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.dim(1);
  if (steps != this->config_.window) {
    throw DimensionError("mlp-ae needs exactly " + std::to_string(this->config_.window) + " steps, got " +
                         std::to_string(steps));
  }
  const std::size_t hidden = encoder_out.out_features();
  auto frames = reshape(x, {batch, steps, x.dim(2) * x.dim(3)});
  auto h = encoder_out.forward(apply_dropout(relu(encoder_in.forward(frames)), this->config_.dropout, mode));
  auto flat = reshape(h, {batch, steps * hidden});
  return reshape(window_projection.forward(flat), {batch, steps, hidden});
}

template <typename Real>
Tensor<Real> MlpAutoencoder<Real>::forward_batch(const Tensor<Real>& x, const GraphSpec&,
                                                 const ForwardMode& mode) const {
  auto h = project(x, mode);
  auto y = decoder_out.forward(apply_dropout(relu(decoder_in.forward(h)), this->config_.dropout, mode));
  return reshape(y, x.shape());
}

template <typename Real>
Tensor<Real> MlpAutoencoder<Real>::latent_batch(const Tensor<Real>& x, const GraphSpec&) const {
  return mean(project(x, ForwardMode{}), 1);
}

// ---------------------------------------------------------------------------
// LSTM-AE

template <typename Real>
LstmAutoencoder<Real>::LstmAutoencoder(const ModelConfig& config) : Forecaster<Real>(config) {
  const std::size_t frame = config.nodes * config.features;
  const std::size_t hidden = config.nodes * config.embed_dim;
  auto& rng = this->rng_;
  encoder_first = Lstm<Real>(frame, hidden, rng);
  encoder_second = Lstm<Real>(hidden, hidden, rng);
  decoder_first = Lstm<Real>(hidden, hidden, rng);
  decoder_second = Lstm<Real>(hidden, hidden, rng);
  readout = Linear<Real>(hidden, frame, rng);
  encoder_first.collect(this->params_, "encoder.0");
  encoder_second.collect(this->params_, "encoder.1");
  decoder_first.collect(this->params_, "decoder.0");
  decoder_second.collect(this->params_, "decoder.1");
  readout.collect(this->params_, "readout");
}

template <typename Real>
Tensor<Real> LstmAutoencoder<Real>::encode(const Tensor<Real>& x) const {
  auto frames = reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)});
  return encoder_second.forward(encoder_first.forward(frames).sequence).hidden;
}

template <typename Real>
Tensor<Real> LstmAutoencoder<Real>::forward_batch(const Tensor<Real>& x, const GraphSpec&,
                                                  const ForwardMode& mode) const {
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.dim(1);
  const auto state = encode(x);
  const std::size_t hidden = state.dim(1);
  auto step = reshape(apply_dropout(state, this->config_.dropout, mode), {batch, 1, hidden});
  std::vector<Tensor<Real>> repeated(steps, step);
  auto decoded = decoder_second.forward(decoder_first.forward(concat(repeated, 1)).sequence).sequence;
  return reshape(readout.forward(decoded), x.shape());
}

template <typename Real>
Tensor<Real> LstmAutoencoder<Real>::latent_batch(const Tensor<Real>& x, const GraphSpec&) const {
  return encode(x);
}

// ---------------------------------------------------------------------------
// GCN-LSTM

template <typename Real>
GcnLstmModel<Real>::GcnLstmModel(const ModelConfig& config)
    : Forecaster<Real>(config),
      graph_encoder(config.features, config.embed_dim, config.gamma, this->rng_),
      recurrent(config.nodes * config.embed_dim, config.nodes * config.embed_dim, this->rng_),
      graph_decoder(config.embed_dim, config.features, config.gamma, this->rng_) {
  graph_encoder.collect(this->params_, "graph_encoder");
  recurrent.collect(this->params_, "recurrent");
  graph_decoder.collect(this->params_, "graph_decoder");
}

template <typename Real>
Tensor<Real> GcnLstmModel<Real>::hidden_sequence(const Tensor<Real>& x, const GraphSpec& g) const {
  const auto e = graph_encoder.forward(x, g);
  return recurrent.forward(reshape(e, {e.dim(0), e.dim(1), e.dim(2) * e.dim(3)})).sequence;
}

template <typename Real>
Tensor<Real> GcnLstmModel<Real>::forward_batch(const Tensor<Real>& x, const GraphSpec& g,
                                               const ForwardMode& mode) const {
  auto h = apply_dropout(hidden_sequence(x, g), this->config_.dropout, mode);
  return graph_decoder.forward(reshape(h, {x.dim(0), x.dim(1), x.dim(2), this->config_.embed_dim}), g);
}

template <typename Real>
Tensor<Real> GcnLstmModel<Real>::latent_batch(const Tensor<Real>& x, const GraphSpec& g) const {
  return mean(hidden_sequence(x, g), 1);
}

template <typename Real>
void GcnLstmModel<Real>::permute_nodes(const std::vector<std::size_t>& perm) {
  check_permutation(perm, this->config_.nodes);
  const auto map = flattened_permutation(perm, this->config_.embed_dim);
  permute_rows(recurrent.input_weight, map);
  permute_columns(recurrent.input_weight, map, 4);
  permute_rows(recurrent.recurrent_weight, map);
  permute_columns(recurrent.recurrent_weight, map, 4);
  permute_columns(recurrent.bias, map, 4);
}

// ---------------------------------------------------------------------------

template <typename Real>
std::unique_ptr<Forecaster<Real>> make_forecaster(const ModelConfig& config) {
  switch (config.kind) {
    case ModelKind::gtrans: return std::make_unique<GTransModel<Real>>(config);
    case ModelKind::mlp_ae: return std::make_unique<MlpAutoencoder<Real>>(config);
    case ModelKind::lstm_ae: return std::make_unique<LstmAutoencoder<Real>>(config);
    case ModelKind::gcn_lstm: return std::make_unique<GcnLstmModel<Real>>(config);
  }
  throw ValidationError("unknown model kind");
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[9] = "GTRSCKPT";

}  // namespace

template <typename Real>
void write_checkpoint(std::ostream& out, const Forecaster<Real>& model) {
  BinaryWriter w(out);
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(to_string(model.kind()));
  w.str(model.config().to_key_values().serialize());
  const auto& params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (Real v : p.tensor.data()) w.f32(static_cast<float>(v));
  }
  if (!out) throw DataError("failed writing checkpoint");
}

template <typename Real>
std::unique_ptr<Forecaster<Real>> read_checkpoint(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic(kCheckpointMagic, "checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto kind = parse_model_kind(r.str());
  auto config = ModelConfig::from_key_values(KeyValues::parse(r.str()));
  if (config.kind != kind) throw DataError("checkpoint header and config disagree on model kind");
  auto model = make_forecaster<Real>(config);
  const auto count = r.u32();
  ParameterSet<Real> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.u32();
    if (rank > 8) throw DataError("implausible parameter rank in checkpoint");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<Real> values(element_count(shape));
    if (values.size() > (std::size_t{1} << 32)) throw DataError("implausible parameter size in checkpoint");
    for (auto& v : values) v = static_cast<Real>(r.f32());
    loaded.push_back({std::move(name), Tensor<Real>(std::move(shape), std::move(values))});
  }
  model->load_parameters(loaded);
  return model;
}

void save_checkpoint(const std::string& path, const Forecaster<float>& model) {
  std::ostringstream buf(std::ios::binary);
  write_checkpoint(buf, model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  const std::string bytes = buf.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path);
}

std::unique_ptr<Forecaster<float>> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return read_checkpoint<float>(in);
}

template <typename Real>
std::uint64_t parameter_checksum(const Forecaster<Real>& model) {
  std::uint64_t hash = 1469598103934665603ull;
  for (const auto& p : model.parameters()) {
    for (Real v : p.tensor.data()) {
      unsigned char bytes[sizeof(Real)];
      std::memcpy(bytes, &v, sizeof(Real));
      for (unsigned char b : bytes) {
        hash ^= b;
        hash *= 1099511628211ull;
      }
    }
  }
  return hash;
}

template class Forecaster<float>;
template class Forecaster<double>;
template class GTransModel<float>;
template class GTransModel<double>;
template class MlpAutoencoder<float>;
template class MlpAutoencoder<double>;
template class LstmAutoencoder<float>;
template class LstmAutoencoder<double>;
template class GcnLstmModel<float>;
template class GcnLstmModel<double>;
template std::unique_ptr<Forecaster<float>> make_forecaster<float>(const ModelConfig&);
template std::unique_ptr<Forecaster<double>> make_forecaster<double>(const ModelConfig&);
template void write_checkpoint<float>(std::ostream&, const Forecaster<float>&);
template void write_checkpoint<double>(std::ostream&, const Forecaster<double>&);
template std::unique_ptr<Forecaster<float>> read_checkpoint<float>(std::istream&);
template std::unique_ptr<Forecaster<double>> read_checkpoint<double>(std::istream&);
template std::uint64_t parameter_checksum<float>(const Forecaster<float>&);
template std::uint64_t parameter_checksum<double>(const Forecaster<double>&);

}  // namespace gtrans
