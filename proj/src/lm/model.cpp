#include "voxelenc/lm/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <random>

#include "kernels.hpp"
#include "voxelenc/error.hpp"

namespace voxelenc::lm {

namespace kernels {

void layer_norm(const double* x, const double* gain, const double* bias, double* out,
                double* mean, double* rstd, std::size_t n, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    mean[i] = mu;
    rstd[i] = rs;
    double* o = out + i * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = gain[j] * (row[j] - mu) * rs + bias[j];
  }
}

void layer_norm_backward(const double* x, const double* gain, const double* mean,
                         const double* rstd, const double* dy, double* dx, double* dgain,
                         double* dbias, std::size_t n, std::size_t d) {
  std::vector<double> xhat(d);
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x + i * d;
    const double* drow = dy + i * d;
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (row[j] - mean[i]) * rstd[i];
      dxhat[j] = drow[j] * gain[j];
      sum_dxhat += dxhat[j];
      sum_dxhat_xhat += dxhat[j] * xhat[j];
      if (dgain != nullptr) dgain[j] += drow[j] * xhat[j];
      if (dbias != nullptr) dbias[j] += drow[j];
    }
    if (dx == nullptr) continue;
    const double inv_d = 1.0 / static_cast<double>(d);
    double* out = dx + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      out[j] += rstd[i] * (dxhat[j] - sum_dxhat * inv_d - xhat[j] * sum_dxhat_xhat * inv_d);
    }
  }
}

}  // namespace kernels

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

const char* const kLayerTensorNames[kLayerTensorCount] = {
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo",  "attn.bo",  "ln2.gain", "ln2.bias", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"};

void layer_tensor_shape(const ModelConfig& cfg, LayerTensor t, std::size_t& rows,
                        std::size_t& cols) {
  const std::size_t d = cfg.d_model;
  switch (t) {
    case LayerTensor::Wq:
    case LayerTensor::Wk:
    case LayerTensor::Wv:
    case LayerTensor::Wo:
      rows = d;
      cols = d;
      return;
    case LayerTensor::W1:
      rows = d;
      cols = cfg.d_ff;
      return;
    case LayerTensor::W2:
      rows = cfg.d_ff;
      cols = d;
      return;
    case LayerTensor::B1:
      rows = 1;
      cols = cfg.d_ff;
      return;
    default:
      rows = 1;
      cols = d;
      return;
  }
}

bool is_matrix(LayerTensor t) {
  return t == LayerTensor::Wq || t == LayerTensor::Wk || t == LayerTensor::Wv ||
         t == LayerTensor::Wo || t == LayerTensor::W1 || t == LayerTensor::W2;
}

bool is_gain(LayerTensor t) { return t == LayerTensor::Ln1Gain || t == LayerTensor::Ln2Gain; }

void softmax_rows(const DenseMatrix& logits, DenseMatrix& probs) {
  probs = DenseMatrix(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto in = logits.row(i);
    auto out = probs.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - mx);
      sum += out[j];
    }
    for (double& p : out) p /= sum;
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1 || d_model < 1 || n_heads < 1 || vocab < 2 || context < 1 || d_ff < 1) {
    throw ArgumentError("model config: all dimensions must be >= 1 and vocab >= 2");
  }
  if (d_model % n_heads != 0) {
    throw ArgumentError("model config: d_model " + std::to_string(d_model) +
                        " is not divisible by n_heads " + std::to_string(n_heads));
  }
}

ToyLmParams::ToyLmParams(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg.d_model;
  tensors_.push_back({"tok_emb", cfg.vocab, d, -1, {}});
  tensors_.push_back({"pos_emb", cfg.context, d, -1, {}});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t t = 0; t < kLayerTensorCount; ++t) {
      Tensor tensor;
      tensor.name = "layer" + std::to_string(l) + "." + kLayerTensorNames[t];
      layer_tensor_shape(cfg, static_cast<LayerTensor>(t), tensor.rows, tensor.cols);
      tensor.group = static_cast<int>(l);
      tensors_.push_back(std::move(tensor));
    }
  }
  tensors_.push_back({"w_out", d, cfg.vocab, static_cast<int>(cfg.n_layers), {}});
  for (auto& t : tensors_) t.data.assign(t.rows * t.cols, 0.0);
}

ToyLmParams ToyLmParams::random(const ModelConfig& cfg, std::uint64_t seed, double init_std) {
  ToyLmParams p(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_std);
  for (auto& v : p.tensors_[kTokenEmbedding].data) v = normal(rng);
  for (auto& v : p.tensors_[kPositionEmbedding].data) v = normal(rng);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t t = 0; t < kLayerTensorCount; ++t) {
      const auto kind = static_cast<LayerTensor>(t);
      auto& data = p.layer(l, kind).data;
      if (is_matrix(kind)) {
        for (auto& v : data) v = normal(rng);
      } else if (is_gain(kind)) {
        std::fill(data.begin(), data.end(), 1.0);
      }
    }
  }
  for (auto& v : p.tensors_[p.output_index()].data) v = normal(rng);
  return p;
}

std::size_t ToyLmParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.data.size();
  return n;
}

std::size_t ToyLmParams::expected_parameter_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t ff = cfg.d_ff;
  const std::size_t per_layer = 4 * d      // two LayerNorms
                                + 4 * (d * d + d)  // q, k, v, o
                                + d * ff + ff + ff * d + d;
  return cfg.vocab * d + cfg.context * d + cfg.n_layers * per_layer + d * cfg.vocab;
}

std::vector<double> ToyLmParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& t : tensors_) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

void ToyLmParams::unflatten(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw ShapeError("unflatten: expected " + std::to_string(parameter_count()) +
                     " values, got " + std::to_string(values.size()));
  }
  std::size_t pos = 0;
  for (auto& t : tensors_) {
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(pos),
              values.begin() + static_cast<std::ptrdiff_t>(pos + t.data.size()), t.data.begin());
    pos += t.data.size();
  }
}

bool operator==(const ToyLmParams& a, const ToyLmParams& b) {
  if (!(a.cfg_ == b.cfg_) || a.tensors_.size() != b.tensors_.size()) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    const auto& x = a.tensors_[i].data;
    const auto& y = b.tensors_[i].data;
    if (x.size() != y.size()) return false;
    if (!std::equal(x.begin(), x.end(), y.begin(), [](double p, double q) {
          return std::bit_cast<std::uint64_t>(p) == std::bit_cast<std::uint64_t>(q);
        })) {
      return false;
    }
  }
  return true;
}

PrefixBank PrefixBank::random(const ModelConfig& cfg, std::size_t prefix_len, std::uint64_t seed,
                              double scale) {
  PrefixBank p;
  p.prefix_len = prefix_len;
  p.width = cfg.n_layers * cfg.d_model;
  p.data.resize(prefix_len * p.width);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (double& v : p.data) v = normal(rng);
  return p;
}

PrefixBank PrefixBank::empty(const ModelConfig& cfg) {
  PrefixBank p;
  p.width = cfg.n_layers * cfg.d_model;
  return p;
}

void PrefixBank::validate(const ModelConfig& cfg) const {
  if (width != cfg.n_layers * cfg.d_model) {
    throw ShapeError("prefix bank width " + std::to_string(width) + " != n_layers * d_model (" +
                     std::to_string(cfg.n_layers * cfg.d_model) + ")");
  }
  if (data.size() != prefix_len * width) {
    throw ShapeError("prefix bank holds " + std::to_string(data.size()) + " values, expected " +
                     std::to_string(prefix_len * width));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw DomainError("prefix bank: non-finite value at row " + std::to_string(i / width) +
                        ", column " + std::to_string(i % width));
    }
  }
}

bool operator==(const PrefixBank& a, const PrefixBank& b) {
  return a.prefix_len == b.prefix_len && a.width == b.width &&
         std::equal(a.data.begin(), a.data.end(), b.data.begin(), b.data.end(),
                    [](double p, double q) {
                      return std::bit_cast<std::uint64_t>(p) == std::bit_cast<std::uint64_t>(q);
                    });
}

std::vector<int> TokenSequence::tokens() const {
  std::vector<int> z = x;
  z.insert(z.end(), y.begin(), y.end());
  return z;
}

double log_softmax_at(std::span<const double> logits, std::size_t target) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return logits[target] - mx - std::log(sum);
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_derivative(double x) {
  const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

ForwardResult forward(const ToyLmParams& params, const PrefixBank* prefix,
                      std::span<const int> tokens, const ForwardOptions& opts) {
  const ModelConfig& cfg = params.config();
  const std::size_t T = tokens.size();
  if (T == 0) throw ArgumentError("forward: empty token sequence");
  std::size_t P = 0;
  if (prefix != nullptr && prefix->prefix_len > 0) {
    prefix->validate(cfg);
    P = prefix->prefix_len;
  }
  if (T + P > cfg.context) {
    throw ArgumentError("forward: sequence length " + std::to_string(T) + " + prefix " +
                        std::to_string(P) + " exceeds context " + std::to_string(cfg.context));
  }
  for (std::size_t t = 0; t < T; ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= cfg.vocab) {
      throw ArgumentError("forward: token id " + std::to_string(tokens[t]) + " at position " +
                          std::to_string(t) + " outside [0, " + std::to_string(cfg.vocab) + ")");
    }
  }

  const std::size_t d = cfg.d_model;
  const std::size_t H = cfg.n_heads;
  const std::size_t hd = cfg.head_dim();
  const std::size_t ff = cfg.d_ff;
  const std::size_t S = P + T;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  ForwardResult res;
  res.prefix_len = P;
  DenseMatrix x(T, d);
  const auto& tok = params.tensor(ToyLmParams::kTokenEmbedding).data;
  const auto& pos = params.tensor(ToyLmParams::kPositionEmbedding).data;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t id = static_cast<std::size_t>(tokens[t]);
    for (std::size_t j = 0; j < d; ++j) x(t, j) = tok[id * d + j] + pos[t * d + j];
  }

  std::vector<double> scores(S);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerCache c;
    auto w = [&](LayerTensor t) { return params.layer(l, t).data.data(); };
    c.x_in = x;
    c.a = DenseMatrix(T, d);
    c.ln1_mean.resize(T);
    c.ln1_rstd.resize(T);
    kernels::layer_norm(x.data().data(), w(LayerTensor::Ln1Gain), w(LayerTensor::Ln1Bias),
                        c.a.data().data(), c.ln1_mean.data(), c.ln1_rstd.data(), T, d);
    c.ap = DenseMatrix(P, d);
    c.lnp_mean.resize(P);
    c.lnp_rstd.resize(P);
    if (P > 0) {
      DenseMatrix slices(P, d);
      for (std::size_t i = 0; i < P; ++i) {
        const auto s = prefix->slice(i, l, d);
        std::copy(s.begin(), s.end(), slices.row(i).begin());
      }
      kernels::layer_norm(slices.data().data(), w(LayerTensor::Ln1Gain), w(LayerTensor::Ln1Bias),
                          c.ap.data().data(), c.lnp_mean.data(), c.lnp_rstd.data(), P, d);
    }

    c.q = DenseMatrix(T, d);
    c.k = DenseMatrix(S, d);
    c.v = DenseMatrix(S, d);
    for (std::size_t i = 0; i < T; ++i) {
      std::copy_n(w(LayerTensor::Bq), d, c.q.row(i).begin());
    }
    for (std::size_t i = 0; i < S; ++i) {
      std::copy_n(w(LayerTensor::Bk), d, c.k.row(i).begin());
      std::copy_n(w(LayerTensor::Bv), d, c.v.row(i).begin());
    }
    kernels::matmul_add(c.a.data().data(), w(LayerTensor::Wq), c.q.data().data(), T, d, d);
    if (P > 0) {
      kernels::matmul_add(c.ap.data().data(), w(LayerTensor::Wk), c.k.data().data(), P, d, d);
      kernels::matmul_add(c.ap.data().data(), w(LayerTensor::Wv), c.v.data().data(), P, d, d);
    }
    kernels::matmul_add(c.a.data().data(), w(LayerTensor::Wk), c.k.data().data() + P * d, T, d,
                        d);
    kernels::matmul_add(c.a.data().data(), w(LayerTensor::Wv), c.v.data().data() + P * d, T, d,
                        d);

    c.att.assign(H * T * S, 0.0);
    c.ctx = DenseMatrix(T, d);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t visible = P + t + 1;
        const double* qrow = c.q.row(t).data() + off;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u < visible; ++u) {
          const double* krow = c.k.row(u).data() + off;
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) s += qrow[e] * krow[e];
          scores[u] = s * scale;
          mx = std::max(mx, scores[u]);
        }
        double sum = 0.0;
        for (std::size_t u = 0; u < visible; ++u) {
          scores[u] = std::exp(scores[u] - mx);
          sum += scores[u];
        }
        double* arow = c.att.data() + (h * T + t) * S;
        double* crow = c.ctx.row(t).data() + off;
        for (std::size_t u = 0; u < visible; ++u) {
          arow[u] = scores[u] / sum;
          const double* vrow = c.v.row(u).data() + off;
          for (std::size_t e = 0; e < hd; ++e) crow[e] += arow[u] * vrow[e];
        }
      }
    }

    c.x_mid = x;
    for (std::size_t i = 0; i < T; ++i) {
      auto row = c.x_mid.row(i);
      const double* bo = w(LayerTensor::Bo);
      for (std::size_t j = 0; j < d; ++j) row[j] += bo[j];
    }
    kernels::matmul_add(c.ctx.data().data(), w(LayerTensor::Wo), c.x_mid.data().data(), T, d, d);

    c.b = DenseMatrix(T, d);
    c.ln2_mean.resize(T);
    c.ln2_rstd.resize(T);
    kernels::layer_norm(c.x_mid.data().data(), w(LayerTensor::Ln2Gain), w(LayerTensor::Ln2Bias),
                        c.b.data().data(), c.ln2_mean.data(), c.ln2_rstd.data(), T, d);
    c.f = DenseMatrix(T, ff);
    for (std::size_t i = 0; i < T; ++i) std::copy_n(w(LayerTensor::B1), ff, c.f.row(i).begin());
    kernels::matmul_add(c.b.data().data(), w(LayerTensor::W1), c.f.data().data(), T, d, ff);
    c.g = DenseMatrix(T, ff);
    for (std::size_t i = 0; i < c.f.size(); ++i) c.g.data()[i] = gelu(c.f.data()[i]);

    x = c.x_mid;
    for (std::size_t i = 0; i < T; ++i) {
      auto row = x.row(i);
      const double* b2 = w(LayerTensor::B2);
      for (std::size_t j = 0; j < d; ++j) row[j] += b2[j];
    }
    kernels::matmul_add(c.g.data().data(), w(LayerTensor::W2), x.data().data(), T, ff, d);
    res.layer_outputs.push_back(x);
    if (opts.keep_cache) res.cache.push_back(std::move(c));
  }

  res.logits = DenseMatrix(T, cfg.vocab);
  kernels::matmul_add(x.data().data(), params.tensor(params.output_index()).data.data(),
                      res.logits.data().data(), T, d, cfg.vocab);
  softmax_rows(res.logits, res.probs);
  return res;
}

std::vector<double> embed_sequence(const ToyLmParams& params, const PrefixBank* prefix,
                                   std::span<const int> tokens) {
  if (tokens.empty()) throw ArgumentError("embed_sequence: empty token sequence");
  const auto res = forward(params, prefix, tokens);
  const DenseMatrix& h = res.layer_outputs.back();
  std::vector<double> out(h.cols(), 0.0);
  for (std::size_t t = 0; t < h.rows(); ++t) {
    for (std::size_t j = 0; j < h.cols(); ++j) out[j] += h(t, j);
  }
  for (double& v : out) v /= static_cast<double>(h.rows());
  return out;
}

double sequence_loss(const ToyLmParams& params, const PrefixBank* prefix,
                     const TokenSequence& seq) {
  if (seq.x.empty() || seq.y.empty()) {
    throw ArgumentError("sequence_loss: context and continuation must both be non-empty");
  }
  auto z = seq.tokens();
  z.pop_back();
  const auto res = forward(params, prefix, z);
  double loss = 0.0;
  for (std::size_t k = 0; k < seq.y.size(); ++k) {
    const std::size_t t = seq.x.size() + k - 1;
    if (seq.y[k] < 0 || static_cast<std::size_t>(seq.y[k]) >= params.config().vocab) {
      throw ArgumentError("sequence_loss: target id " + std::to_string(seq.y[k]) +
                          " outside the vocabulary");
    }
    loss -= log_softmax_at(res.logits.row(t), static_cast<std::size_t>(seq.y[k]));
  }
  return loss;
}

}  // namespace voxelenc::lm
