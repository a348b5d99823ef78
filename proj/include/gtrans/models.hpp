#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "gtrans/config.hpp"
#include "gtrans/graph.hpp"
#include "gtrans/nn.hpp"
#include "gtrans/transformer.hpp"

namespace gtrans {

enum class ModelKind { gtrans, mlp_ae, lstm_ae, gcn_lstm };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Hyperparameters for every model kind. `nodes` and `features` come from the
/// dataset; the rest have defaults.
struct ModelConfig {
  ModelKind kind = ModelKind::gtrans;
  std::size_t window = 10;
  std::size_t nodes = 1;
  std::size_t features = 1;
  std::size_t embed_dim = 4;
  std::size_t heads = 4;
  std::size_t encoder_blocks = 2;
  std::size_t decoder_blocks = 2;
  double gamma = 0.5;
  double lambda = 0.9;
  double dropout = 0.1;
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the offending field.
  void validate() const;

  KeyValues to_key_values() const;
  /// Reads known keys over the defaults; unknown keys are ignored.
  static ModelConfig from_key_values(const KeyValues& kv);

  bool operator==(const ModelConfig&) const = default;
};

/// Common interface of GTrans and the baselines: a [T, N, C] window in, a
/// same-shaped one-step-ahead window out. Inputs may carry a leading batch axis.
template <typename Real>
class Forecaster {
 public:
  explicit Forecaster(const ModelConfig& config);
  virtual ~Forecaster() = default;
  Forecaster(const Forecaster&) = delete;
  Forecaster& operator=(const Forecaster&) = delete;

  ModelKind kind() const { return config_.kind; }
  const ModelConfig& config() const { return config_; }

  Tensor<Real> forward(const Tensor<Real>& x, const GraphSpec& g, const ForwardMode& mode = {}) const;

  /// One latent vector per window: [B, L] (or [L] for unbatched input).
  Tensor<Real> latent(const Tensor<Real>& x, const GraphSpec& g) const;

  const ParameterSet<Real>& parameters() const { return params_; }
  std::vector<Tensor<Real>> parameter_tensors() const;
  /// Parameters belonging to the graph encoder and decoder (zero if none).
  std::size_t graph_parameter_count() const;

  /// Copies values from `other` by name; shapes must match exactly.
  void load_parameters(const ParameterSet<Real>& other);

  /// Reorders node-indexed parameters so that the model applied to a graph
  /// permuted by `perm` reproduces the permuted output of this model.
  virtual void permute_nodes(const std::vector<std::size_t>& perm);
  virtual bool node_equivariant() const { return false; }

  Rng& rng() const { return rng_; }

 protected:
  virtual Tensor<Real> forward_batch(const Tensor<Real>& x, const GraphSpec& g, const ForwardMode& mode) const = 0;
  virtual Tensor<Real> latent_batch(const Tensor<Real>& x, const GraphSpec& g) const = 0;
  void check_input(const Tensor<Real>& x, const GraphSpec& g) const;

  ModelConfig config_;
  mutable Rng rng_;
  ParameterSet<Real> params_;
};

template <typename Real>
class GTransModel final : public Forecaster<Real> {
 public:
  explicit GTransModel(const ModelConfig& config);

  void permute_nodes(const std::vector<std::size_t>& perm) override;
  bool node_equivariant() const override { return true; }

  GraphEncoder<Real> graph_encoder;
  SpatiotemporalTransformer<Real> transformer;
  GraphDecoder<Real> graph_decoder;

 protected:
  Tensor<Real> forward_batch(const Tensor<Real>& x, const GraphSpec& g, const ForwardMode& mode) const override;
  Tensor<Real> latent_batch(const Tensor<Real>& x, const GraphSpec& g) const override;
};

/// Dense autoencoder: per-frame encoder, linear projection across the
/// flattened window, mirrored per-frame decoder. Ignores the graph.
template <typename Real>
class MlpAutoencoder final : public Forecaster<Real> {
 public:
  explicit MlpAutoencoder(const ModelConfig& config);

  Linear<Real> encoder_in;
  Linear<Real> encoder_out;
  Linear<Real> window_projection;
  Linear<Real> decoder_in;
  Linear<Real> decoder_out;

 protected:
  Tensor<Real> forward_batch(const Tensor<Real>& x, const GraphSpec& g, const ForwardMode& mode) const override;
  Tensor<Real> latent_batch(const Tensor<Real>& x, const GraphSpec& g) const override;

 private:
  Tensor<Real> project(const Tensor<Real>& x, const ForwardMode& mode) const;
};

/// Recurrent autoencoder: two stacked LSTMs encode the window, the final
/// hidden state is repeated T times and decoded by two mirrored LSTMs and a
/// per-step linear readout. Ignores the graph.
template <typename Real>
class LstmAutoencoder final : public Forecaster<Real> {
 public:
  explicit LstmAutoencoder(const ModelConfig& config);

  Lstm<Real> encoder_first;
  Lstm<Real> encoder_second;
  Lstm<Real> decoder_first;
  Lstm<Real> decoder_second;
  Linear<Real> readout;

 protected:
  Tensor<Real> forward_batch(const Tensor<Real>& x, const GraphSpec& g, const ForwardMode& mode) const override;
  Tensor<Real> latent_batch(const Tensor<Real>& x, const GraphSpec& g) const override;

 private:
  Tensor<Real> encode(const Tensor<Real>& x) const;
};

/// GTrans with the transformer replaced by one LSTM layer over the flattened
/// graph embeddings (hidden width N * D).
template <typename Real>
class GcnLstmModel final : public Forecaster<Real> {
 public:
  explicit GcnLstmModel(const ModelConfig& config);

  void permute_nodes(const std::vector<std::size_t>& perm) override;
  bool node_equivariant() const override { return true; }

  GraphEncoder<Real> graph_encoder;
  Lstm<Real> recurrent;
  GraphDecoder<Real> graph_decoder;

 protected:
  Tensor<Real> forward_batch(const Tensor<Real>& x, const GraphSpec& g, const ForwardMode& mode) const override;
  Tensor<Real> latent_batch(const Tensor<Real>& x, const GraphSpec& g) const override;

 private:
  Tensor<Real> hidden_sequence(const Tensor<Real>& x, const GraphSpec& g) const;
};

template <typename Real>
std::unique_ptr<Forecaster<Real>> make_forecaster(const ModelConfig& config);

/// Checkpoint container: magic "GTRSCKPT", u32 version, model kind, config
/// text, then named records (name, rank, dims, little-endian float32 values).
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Real>
void write_checkpoint(std::ostream& out, const Forecaster<Real>& model);
template <typename Real>
std::unique_ptr<Forecaster<Real>> read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const Forecaster<float>& model);
std::unique_ptr<Forecaster<float>> load_checkpoint(const std::string& path);

/// FNV-1a over the raw parameter bytes in registry order.
template <typename Real>
std::uint64_t parameter_checksum(const Forecaster<Real>& model);

extern template class Forecaster<float>;
extern template class Forecaster<double>;

}  // namespace gtrans
