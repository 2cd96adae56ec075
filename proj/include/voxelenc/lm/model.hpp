#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "voxelenc/matrix.hpp"

namespace voxelenc::lm {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t vocab = 512;
  std::size_t context = 128;
  std::size_t d_ff = 256;

  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Per-layer tensors in storage order.
enum class LayerTensor : std::size_t {
  Ln1Gain,
  Ln1Bias,
  Wq,
  Bq,
  Wk,
  Bk,
  Wv,
  Bv,
  Wo,
  Bo,
  Ln2Gain,
  Ln2Bias,
  W1,
  B1,
  W2,
  B2,
  Count
};

inline constexpr std::size_t kLayerTensorCount = static_cast<std::size_t>(LayerTensor::Count);

struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  // -1 for embeddings, 0..n-1 for transformer layers, n for the output head.
  int group = 0;
  std::vector<double> data;
};

// The pretrained set: token and position embeddings, n pre-LayerNorm
// transformer blocks and the output matrix (d_model x V).
class ToyLmParams {
 public:
  ToyLmParams() = default;
  explicit ToyLmParams(const ModelConfig& cfg);  // zero-initialised

  // Normal(0, init_std) matrices, unit LayerNorm gains, zero biases.
  static ToyLmParams random(const ModelConfig& cfg, std::uint64_t seed, double init_std = 0.08);

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t tensor_count() const noexcept { return tensors_.size(); }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }

  static constexpr std::size_t kTokenEmbedding = 0;
  static constexpr std::size_t kPositionEmbedding = 1;
  std::size_t layer_index(std::size_t layer, LayerTensor t) const {
    return 2 + layer * kLayerTensorCount + static_cast<std::size_t>(t);
  }
  std::size_t output_index() const { return 2 + cfg_.n_layers * kLayerTensorCount; }

  const Tensor& layer(std::size_t layer, LayerTensor t) const {
    return tensors_[layer_index(layer, t)];
  }
  Tensor& layer(std::size_t layer, LayerTensor t) { return tensors_[layer_index(layer, t)]; }

  std::size_t parameter_count() const;
  static std::size_t expected_parameter_count(const ModelConfig& cfg);

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);

  friend bool operator==(const ToyLmParams& a, const ToyLmParams& b);

 private:
  ModelConfig cfg_;
  std::vector<Tensor> tensors_;
};

// Trainable prefix M: prefix_len x (n_layers * d_model). Slice j of row i is
// the residual state of prefix position i entering layer j.
struct PrefixBank {
  std::size_t prefix_len = 0;
  std::size_t width = 0;
  std::vector<double> data;

  static PrefixBank random(const ModelConfig& cfg, std::size_t prefix_len, std::uint64_t seed,
                           double scale = 1.0);
  static PrefixBank empty(const ModelConfig& cfg);
  void validate(const ModelConfig& cfg) const;
  std::span<const double> slice(std::size_t position, std::size_t layer,
                                std::size_t d_model) const {
    return {data.data() + position * width + layer * d_model, d_model};
  }
  friend bool operator==(const PrefixBank& a, const PrefixBank& b);
};

struct TokenSequence {
  std::vector<int> x;  // context ids
  std::vector<int> y;  // continuation ids, the positions that carry loss

  std::vector<int> tokens() const;
};

// Activations kept for the backward pass.
struct LayerCache {
  DenseMatrix x_in;    // T x d
  DenseMatrix a;       // LN1 output, T x d
  std::vector<double> ln1_mean, ln1_rstd;
  DenseMatrix ap;      // LN1 of the prefix slice, P x d
  std::vector<double> lnp_mean, lnp_rstd;
  DenseMatrix q;       // T x d
  DenseMatrix k;       // (P + T) x d
  DenseMatrix v;       // (P + T) x d
  std::vector<double> att;  // heads x T x (P + T)
  DenseMatrix ctx;     // T x d
  DenseMatrix x_mid;   // T x d
  DenseMatrix b;       // LN2 output
  std::vector<double> ln2_mean, ln2_rstd;
  DenseMatrix f;       // T x d_ff pre-activation
  DenseMatrix g;       // GELU output
};

struct ForwardResult {
  DenseMatrix logits;  // T x V
  DenseMatrix probs;   // T x V
  // Activation stack: layer_outputs[j] is h^{j+1}, T x d.
  std::vector<DenseMatrix> layer_outputs;
  std::vector<LayerCache> cache;  // only with keep_cache
  std::size_t prefix_len = 0;
};

struct ForwardOptions {
  bool keep_cache = false;
};

// Causal decoder pass over the real tokens. Prefix positions have no position
// ids and never attend; every real position attends to all of them.
ForwardResult forward(const ToyLmParams& params, const PrefixBank* prefix,
                      std::span<const int> tokens, const ForwardOptions& opts = {});

// Mean over real positions of the last layer's hidden states.
std::vector<double> embed_sequence(const ToyLmParams& params, const PrefixBank* prefix,
                                   std::span<const int> tokens);

// -sum log p(y_i | z_<i) over the continuation positions.
double sequence_loss(const ToyLmParams& params, const PrefixBank* prefix,
                     const TokenSequence& seq);

double log_softmax_at(std::span<const double> logits, std::size_t target);

double gelu(double x);
double gelu_derivative(double x);

}  // namespace voxelenc::lm
