#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "voxelenc/error.hpp"
#include "voxelenc/lm/tune.hpp"
#include "voxelenc/parallel.hpp"

namespace voxelenc::lm {

namespace {

void add_row_sums(const double* m, std::size_t rows, std::size_t cols, double* out) {
  if (out == nullptr) return;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j] += m[i * cols + j];
  }
}

}  // namespace

std::size_t TrainableMask::parameter_count(const ToyLmParams& params) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < tensors.size() && i < params.tensor_count(); ++i) {
    if (tensors[i]) n += params.tensor(i).data.size();
  }
  return n;
}

std::size_t TrainableMask::lowest_layer(const ToyLmParams& params) const {
  std::size_t lowest = params.config().n_layers;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i]) continue;
    const int group = params.tensor(i).group;
    if (group < 0) return 0;
    lowest = std::min(lowest, static_cast<std::size_t>(group));
  }
  return lowest;
}

Gradients Gradients::zeros(const ToyLmParams& params, const PrefixBank* prefix,
                           const TrainableMask& mask) {
  Gradients g;
  g.tensors.resize(params.tensor_count());
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    if (i < mask.tensors.size() && mask.tensors[i]) {
      g.tensors[i].assign(params.tensor(i).data.size(), 0.0);
    }
  }
  if (mask.prefix && prefix != nullptr) g.prefix.assign(prefix->data.size(), 0.0);
  return g;
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    for (std::size_t j = 0; j < tensors[i].size(); ++j) tensors[i][j] += other.tensors[i][j];
  }
  for (std::size_t j = 0; j < prefix.size(); ++j) prefix[j] += other.prefix[j];
}

void Gradients::scale(double factor) {
  for (auto& t : tensors) {
    for (double& v : t) v *= factor;
  }
  for (double& v : prefix) v *= factor;
}

LossAndGradient loss_and_gradient(const ToyLmParams& params, const PrefixBank* prefix,
                                  const TokenSequence& seq, const TrainableMask& mask) {
  if (seq.x.empty() || seq.y.empty()) {
    throw ArgumentError("loss_and_gradient: context and continuation must both be non-empty");
  }
  const ModelConfig& cfg = params.config();
  auto z = seq.tokens();
  z.pop_back();
  ForwardOptions fopts;
  fopts.keep_cache = true;
  const ForwardResult fwd = forward(params, prefix, z, fopts);

  const std::size_t T = z.size();
  const std::size_t P = fwd.prefix_len;
  const std::size_t S = P + T;
  const std::size_t d = cfg.d_model;
  const std::size_t V = cfg.vocab;
  const std::size_t H = cfg.n_heads;
  const std::size_t hd = cfg.head_dim();
  const std::size_t ff = cfg.d_ff;
  const std::size_t n = cfg.n_layers;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  LossAndGradient out;
  out.grad = Gradients::zeros(params, prefix, mask);
  const bool want_prefix = !out.grad.prefix.empty() && P > 0;
  auto G = [&](std::size_t index) -> double* {
    auto& g = out.grad.tensors[index];
    return g.empty() ? nullptr : g.data();
  };

  DenseMatrix dlogits(T, V);
  for (std::size_t k = 0; k < seq.y.size(); ++k) {
    const std::size_t t = seq.x.size() + k - 1;
    if (seq.y[k] < 0 || static_cast<std::size_t>(seq.y[k]) >= V) {
      throw ArgumentError("loss_and_gradient: target id " + std::to_string(seq.y[k]) +
                          " outside the vocabulary");
    }
    const auto target = static_cast<std::size_t>(seq.y[k]);
    out.loss -= log_softmax_at(fwd.logits.row(t), target);
    auto drow = dlogits.row(t);
    const auto prow = fwd.probs.row(t);
    for (std::size_t j = 0; j < V; ++j) drow[j] += prow[j];
    drow[target] -= 1.0;
  }

  const DenseMatrix& top = fwd.layer_outputs.back();
  const auto& w_out = params.tensor(params.output_index()).data;
  if (double* gw = G(params.output_index())) {
    kernels::matmul_at_b_add(top.data().data(), dlogits.data().data(), gw, T, d, V);
  }
  const bool need_embed = G(ToyLmParams::kTokenEmbedding) != nullptr ||
                          G(ToyLmParams::kPositionEmbedding) != nullptr;
  const std::size_t lowest = (want_prefix || need_embed) ? 0 : mask.lowest_layer(params);
  if (lowest >= n) return out;

  DenseMatrix dh(T, d);
  kernels::matmul_a_bt_add(dlogits.data().data(), w_out.data(), dh.data().data(), T, V, d);

  for (std::size_t l = n; l-- > lowest;) {
    const LayerCache& c = fwd.cache[l];
    auto W = [&](LayerTensor t) { return params.layer(l, t).data.data(); };
    auto GL = [&](LayerTensor t) { return G(params.layer_index(l, t)); };

    // MLP branch
    if (double* g = GL(LayerTensor::W2)) {
      kernels::matmul_at_b_add(c.g.data().data(), dh.data().data(), g, T, ff, d);
    }
    add_row_sums(dh.data().data(), T, d, GL(LayerTensor::B2));
    DenseMatrix df(T, ff);
    kernels::matmul_a_bt_add(dh.data().data(), W(LayerTensor::W2), df.data().data(), T, d, ff);
    for (std::size_t i = 0; i < df.size(); ++i) df.data()[i] *= gelu_derivative(c.f.data()[i]);
    if (double* g = GL(LayerTensor::W1)) {
      kernels::matmul_at_b_add(c.b.data().data(), df.data().data(), g, T, d, ff);
    }
    add_row_sums(df.data().data(), T, ff, GL(LayerTensor::B1));
    DenseMatrix db(T, d);
    kernels::matmul_a_bt_add(df.data().data(), W(LayerTensor::W1), db.data().data(), T, ff, d);
    DenseMatrix dx_mid = dh;
    kernels::layer_norm_backward(c.x_mid.data().data(), W(LayerTensor::Ln2Gain),
                                 c.ln2_mean.data(), c.ln2_rstd.data(), db.data().data(),
                                 dx_mid.data().data(), GL(LayerTensor::Ln2Gain),
                                 GL(LayerTensor::Ln2Bias), T, d);

    // attention branch
    if (double* g = GL(LayerTensor::Wo)) {
      kernels::matmul_at_b_add(c.ctx.data().data(), dx_mid.data().data(), g, T, d, d);
    }
    add_row_sums(dx_mid.data().data(), T, d, GL(LayerTensor::Bo));
    DenseMatrix dctx(T, d);
    kernels::matmul_a_bt_add(dx_mid.data().data(), W(LayerTensor::Wo), dctx.data().data(), T, d,
                             d);

    DenseMatrix dq(T, d);
    DenseMatrix dk(S, d);
    DenseMatrix dv(S, d);
    std::vector<double> dA(S);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t visible = P + t + 1;
        const double* arow = c.att.data() + (h * T + t) * S;
        const double* dc = dctx.row(t).data() + off;
        double weighted = 0.0;
        for (std::size_t u = 0; u < visible; ++u) {
          const double* vrow = c.v.row(u).data() + off;
          double* dvrow = dv.row(u).data() + off;
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) {
            s += dc[e] * vrow[e];
            dvrow[e] += arow[u] * dc[e];
          }
          dA[u] = s;
          weighted += arow[u] * s;
        }
        const double* qrow = c.q.row(t).data() + off;
        double* dqrow = dq.row(t).data() + off;
        for (std::size_t u = 0; u < visible; ++u) {
          const double ds = arow[u] * (dA[u] - weighted) * att_scale;
          const double* krow = c.k.row(u).data() + off;
          double* dkrow = dk.row(u).data() + off;
          for (std::size_t e = 0; e < hd; ++e) {
            dqrow[e] += ds * krow[e];
            dkrow[e] += ds * qrow[e];
          }
        }
      }
    }
    add_row_sums(dq.data().data(), T, d, GL(LayerTensor::Bq));
    add_row_sums(dk.data().data(), S, d, GL(LayerTensor::Bk));
    add_row_sums(dv.data().data(), S, d, GL(LayerTensor::Bv));
    const double* dk_real = dk.data().data() + P * d;
    const double* dv_real = dv.data().data() + P * d;
    if (double* g = GL(LayerTensor::Wq)) {
      kernels::matmul_at_b_add(c.a.data().data(), dq.data().data(), g, T, d, d);
    }
    if (double* g = GL(LayerTensor::Wk)) {
      kernels::matmul_at_b_add(c.a.data().data(), dk_real, g, T, d, d);
      if (P > 0) kernels::matmul_at_b_add(c.ap.data().data(), dk.data().data(), g, P, d, d);
    }
    if (double* g = GL(LayerTensor::Wv)) {
      kernels::matmul_at_b_add(c.a.data().data(), dv_real, g, T, d, d);
      if (P > 0) kernels::matmul_at_b_add(c.ap.data().data(), dv.data().data(), g, P, d, d);
    }

    DenseMatrix da(T, d);
    kernels::matmul_a_bt_add(dq.data().data(), W(LayerTensor::Wq), da.data().data(), T, d, d);
    kernels::matmul_a_bt_add(dk_real, W(LayerTensor::Wk), da.data().data(), T, d, d);
    kernels::matmul_a_bt_add(dv_real, W(LayerTensor::Wv), da.data().data(), T, d, d);
    DenseMatrix dx_in = dx_mid;
    kernels::layer_norm_backward(c.x_in.data().data(), W(LayerTensor::Ln1Gain),
                                 c.ln1_mean.data(), c.ln1_rstd.data(), da.data().data(),
                                 dx_in.data().data(), GL(LayerTensor::Ln1Gain),
                                 GL(LayerTensor::Ln1Bias), T, d);

    double* g_ln1_gain = GL(LayerTensor::Ln1Gain);
    double* g_ln1_bias = GL(LayerTensor::Ln1Bias);
    if (P > 0 && (want_prefix || g_ln1_gain != nullptr || g_ln1_bias != nullptr)) {
      DenseMatrix dap(P, d);
      kernels::matmul_a_bt_add(dk.data().data(), W(LayerTensor::Wk), dap.data().data(), P, d, d);
      kernels::matmul_a_bt_add(dv.data().data(), W(LayerTensor::Wv), dap.data().data(), P, d, d);
      DenseMatrix slices(P, d);
      for (std::size_t i = 0; i < P; ++i) {
        const auto s = prefix->slice(i, l, d);
        std::copy(s.begin(), s.end(), slices.row(i).begin());
      }
      DenseMatrix dslices(P, d);
      kernels::layer_norm_backward(slices.data().data(), W(LayerTensor::Ln1Gain),
                                   c.lnp_mean.data(), c.lnp_rstd.data(), dap.data().data(),
                                   want_prefix ? dslices.data().data() : nullptr, g_ln1_gain,
                                   g_ln1_bias, P, d);
      if (want_prefix) {
        for (std::size_t i = 0; i < P; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            out.grad.prefix[i * prefix->width + l * d + j] += dslices(i, j);
          }
        }
      }
    }
    dh = std::move(dx_in);
  }

  if (need_embed) {
    double* gtok = G(ToyLmParams::kTokenEmbedding);
    double* gpos = G(ToyLmParams::kPositionEmbedding);
    for (std::size_t t = 0; t < T; ++t) {
      const auto id = static_cast<std::size_t>(z[t]);
      for (std::size_t j = 0; j < d; ++j) {
        if (gtok != nullptr) gtok[id * d + j] += dh(t, j);
        if (gpos != nullptr) gpos[t * d + j] += dh(t, j);
      }
    }
  }
  return out;
}

LossAndGradient batch_loss_and_gradient(const ToyLmParams& params, const PrefixBank* prefix,
                                        const std::vector<const TokenSequence*>& batch,
                                        const TrainableMask& mask, std::size_t workers) {
  if (batch.empty()) throw ArgumentError("batch_loss_and_gradient: empty batch");
  std::vector<LossAndGradient> parts(batch.size());
  parallel_for(
      batch.size(),
      [&](std::size_t i) { parts[i] = loss_and_gradient(params, prefix, *batch[i], mask); },
      workers);
  LossAndGradient total;
  total.grad = Gradients::zeros(params, prefix, mask);
  for (const auto& part : parts) {
    total.loss += part.loss;
    total.grad.add(part.grad);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  total.loss *= inv;
  total.grad.scale(inv);
  return total;
}

}  // namespace voxelenc::lm
