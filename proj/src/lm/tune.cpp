#include "voxelenc/lm/tune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "voxelenc/error.hpp"
#include "voxelenc/parallel.hpp"

namespace voxelenc::lm {

namespace {

constexpr std::uint64_t kPrefixSeedSalt = 0x5052454649580000ULL;

bool all_finite(const Gradients& g) {
  for (const auto& t : g.tensors) {
    for (double v : t) {
      if (!std::isfinite(v)) return false;
    }
  }
  for (double v : g.prefix) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

struct AdamState {
  Gradients m;
  Gradients v;
  std::size_t t = 0;
};

void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, const TuneConfig& cfg,
                 double bias1, double bias2) {
  for (std::size_t j = 0; j < grad.size(); ++j) {
    m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * grad[j];
    v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * grad[j] * grad[j];
    const double mhat = m[j] / bias1;
    const double vhat = v[j] / bias2;
    param[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

}  // namespace

TrainableMask select_trainable(const ToyLmParams& params, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ArgumentError("select_trainable: proportion " + std::to_string(p) +
                        " outside [0, 1]");
  }
  const std::size_t n = params.config().n_layers;
  TrainableMask mask;
  mask.tensors.assign(params.tensor_count(), false);
  mask.tensors[params.output_index()] = true;
  if (p == 1.0) {
    std::fill(mask.tensors.begin(), mask.tensors.end(), true);
    return mask;
  }
  // guard against p * n landing a rounding error above an integer
  const auto top = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-9));
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    const int group = params.tensor(i).group;
    if (group >= 0 && static_cast<std::size_t>(group) < n &&
        static_cast<std::size_t>(group) >= n - std::min(top, n)) {
      mask.tensors[i] = true;
    }
  }
  return mask;
}

TuneMode parse_tune_mode(const std::string& name) {
  if (name == "full" || name == "full-ft") return TuneMode::Full;
  if (name == "partial" || name == "partial-ft") return TuneMode::Partial;
  if (name == "prefix") return TuneMode::Prefix;
  throw ArgumentError("unknown tuning mode '" + name + "' (expected full, partial or prefix)");
}

std::string to_string(TuneMode mode) {
  switch (mode) {
    case TuneMode::Full:
      return "full-ft";
    case TuneMode::Partial:
      return "partial-ft";
    default:
      return "prefix";
  }
}

Optimizer parse_optimizer(const std::string& name) {
  if (name == "sgd") return Optimizer::Sgd;
  if (name == "adam") return Optimizer::Adam;
  throw ArgumentError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(Optimizer opt) { return opt == Optimizer::Sgd ? "sgd" : "adam"; }

TuneConfig TuneConfig::full() { return TuneConfig{}; }

TuneConfig TuneConfig::partial(double p) {
  TuneConfig c;
  c.mode = TuneMode::Partial;
  c.proportion = p;
  return c;
}

TuneConfig TuneConfig::prefix(std::size_t len) {
  TuneConfig c;
  c.mode = TuneMode::Prefix;
  c.prefix_len = len;
  return c;
}

void TuneConfig::validate() const {
  switch (mode) {
    case TuneMode::Full:
      if (proportion || prefix_len) {
        throw ArgumentError("tune config: full-ft takes neither proportion nor prefix_len");
      }
      break;
    case TuneMode::Partial:
      if (!proportion) throw ArgumentError("tune config: partial-ft needs a proportion");
      if (prefix_len) throw ArgumentError("tune config: partial-ft does not take prefix_len");
      if (!(*proportion >= 0.0 && *proportion <= 1.0)) {
        throw ArgumentError("tune config: proportion must lie in [0, 1]");
      }
      break;
    case TuneMode::Prefix:
      if (!prefix_len) throw ArgumentError("tune config: prefix mode needs prefix_len");
      if (proportion) throw ArgumentError("tune config: prefix mode does not take a proportion");
      if (*prefix_len < 1) throw ArgumentError("tune config: prefix_len must be >= 1");
      break;
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ArgumentError("tune config: learning_rate must be > 0");
  }
  if (batch_size < 1) throw ArgumentError("tune config: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
    throw ArgumentError("tune config: invalid Adam hyperparameters");
  }
}

TrainableMask mask_for(const ToyLmParams& params, const TuneConfig& cfg) {
  switch (cfg.mode) {
    case TuneMode::Full:
      return select_trainable(params, 1.0);
    case TuneMode::Partial:
      return select_trainable(params, cfg.proportion.value_or(1.0));
    default: {
      TrainableMask mask;
      mask.tensors.assign(params.tensor_count(), false);
      mask.prefix = true;
      return mask;
    }
  }
}

TunedModel tune(const ToyLmParams& base, const TaskDataset& data, const TuneConfig& cfg,
                const PrefixBank* initial_prefix) {
  cfg.validate();
  data.validate(base.config());
  TunedModel model{base, std::nullopt, mask_for(base, cfg), {}};
  if (cfg.mode == TuneMode::Prefix) {
    if (initial_prefix != nullptr) {
      if (initial_prefix->prefix_len != *cfg.prefix_len) {
        throw ArgumentError("tune: initial prefix has length " +
                            std::to_string(initial_prefix->prefix_len) + ", config asks for " +
                            std::to_string(*cfg.prefix_len));
      }
      initial_prefix->validate(base.config());
      model.prefix = *initial_prefix;
    } else {
      model.prefix = PrefixBank::random(base.config(), *cfg.prefix_len, cfg.seed ^ kPrefixSeedSalt,
                                        cfg.prefix_init_scale);
    }
  }
  const PrefixBank* prefix = model.prefix ? &*model.prefix : nullptr;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  AdamState adam;
  if (cfg.optimizer == Optimizer::Adam) {
    adam.m = Gradients::zeros(model.params, prefix, model.mask);
    adam.v = adam.m;
  }

  std::vector<const TokenSequence*> batch;
  model.loss_history.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&data.examples[order[cursor++]]);
    }
    const auto lg = batch_loss_and_gradient(model.params, prefix, batch, model.mask, cfg.workers);
    if (!std::isfinite(lg.loss) || !all_finite(lg.grad)) {
      throw TrainingError("tune: loss diverged at step " + std::to_string(step), step);
    }
    model.loss_history.push_back(lg.loss);

    if (cfg.optimizer == Optimizer::Sgd) {
      for (std::size_t i = 0; i < lg.grad.tensors.size(); ++i) {
        auto& param = model.params.tensor(i).data;
        const auto& g = lg.grad.tensors[i];
        for (std::size_t j = 0; j < g.size(); ++j) param[j] -= cfg.learning_rate * g[j];
      }
      if (model.prefix) {
        for (std::size_t j = 0; j < lg.grad.prefix.size(); ++j) {
          model.prefix->data[j] -= cfg.learning_rate * lg.grad.prefix[j];
        }
      }
    } else {
      ++adam.t;
      const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.t));
      const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.t));
      for (std::size_t i = 0; i < lg.grad.tensors.size(); ++i) {
        if (lg.grad.tensors[i].empty()) continue;
        adam_update(model.params.tensor(i).data, lg.grad.tensors[i], adam.m.tensors[i],
                    adam.v.tensors[i], cfg, bias1, bias2);
      }
      if (model.prefix && !lg.grad.prefix.empty()) {
        adam_update(model.prefix->data, lg.grad.prefix, adam.m.prefix, adam.v.prefix, cfg, bias1,
                    bias2);
      }
    }
  }
  return model;
}

double dataset_loss(const ToyLmParams& params, const PrefixBank* prefix, const TaskDataset& data,
                    std::size_t workers) {
  if (data.examples.empty()) throw ArgumentError("dataset_loss: empty dataset");
  std::vector<double> losses(data.examples.size());
  parallel_for(
      data.examples.size(),
      [&](std::size_t i) { losses[i] = sequence_loss(params, prefix, data.examples[i]); },
      workers);
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(losses.size());
}

std::vector<std::size_t> smoothed_loss_increases(const std::vector<double>& losses,
                                                 std::size_t window, std::size_t steps) {
  std::vector<std::size_t> flagged;
  if (window == 0) return flagged;
  const std::size_t n = std::min(steps, losses.size());
  double previous = 0.0;
  for (std::size_t i = window - 1; i < n; ++i) {
    double avg = 0.0;
    for (std::size_t j = i + 1 - window; j <= i; ++j) avg += losses[j];
    avg /= static_cast<double>(window);
    if (i >= window && avg > previous) flagged.push_back(i);
    previous = avg;
  }
  return flagged;
}

GradCheckReport grad_check(const ToyLmParams& params, const PrefixBank* prefix,
                           const TuneConfig& cfg, const TokenSequence& sample,
                           const GradCheckOptions& opts) {
  cfg.validate();
  const TrainableMask mask = mask_for(params, cfg);
  PrefixBank local;
  if (cfg.mode == TuneMode::Prefix && (prefix == nullptr || prefix->prefix_len == 0)) {
    local = PrefixBank::random(params.config(), *cfg.prefix_len, opts.seed ^ kPrefixSeedSalt, 0.5);
    prefix = &local;
  }
  const auto analytic = loss_and_gradient(params, prefix, sample, mask);

  const double floor = opts.floor_scale * std::max(1.0, std::abs(analytic.loss));
  GradCheckReport report;
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    if (!mask.tensors[i] && !analytic.grad.tensors[i].empty()) ++report.frozen_with_gradient;
  }

  ToyLmParams work = params;
  PrefixBank work_prefix = prefix != nullptr ? *prefix : PrefixBank{};
  const PrefixBank* work_prefix_ptr = prefix != nullptr ? &work_prefix : nullptr;
  std::mt19937_64 rng(opts.seed);

  auto pick = [&](const std::vector<double>& g) {
    std::vector<std::size_t> idx(g.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t want = std::min(opts.entries_per_tensor, g.size());
    const std::size_t largest = want / 2;
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(largest), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        return std::abs(g[a]) > std::abs(g[b]) ||
                               (std::abs(g[a]) == std::abs(g[b]) && a < b);
                      });
    std::shuffle(idx.begin() + static_cast<std::ptrdiff_t>(largest), idx.end(), rng);
    idx.resize(want);
    return idx;
  };

  auto check = [&](const std::string& name, std::vector<double>& values,
                   const std::vector<double>& grad) {
    TensorCheck tc;
    tc.name = name;
    for (std::size_t e : pick(grad)) {
      const double original = values[e];
      values[e] = original + opts.step;
      const double plus = sequence_loss(work, work_prefix_ptr, sample);
      values[e] = original - opts.step;
      const double minus = sequence_loss(work, work_prefix_ptr, sample);
      values[e] = original;
      const double numeric = (plus - minus) / (2.0 * opts.step);
      const double a = grad[e];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      tc.max_rel_error = std::max(tc.max_rel_error, std::abs(a - numeric) / denom);
      ++tc.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, tc.max_rel_error);
    report.checked += tc.checked;
    report.tensors.push_back(std::move(tc));
  };

  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    if (!mask.tensors[i]) continue;
    check(params.tensor(i).name, work.tensor(i).data, analytic.grad.tensors[i]);
  }
  if (mask.prefix && prefix != nullptr) {
    check("prefix", work_prefix.data, analytic.grad.prefix);
  }
  return report;
}

}  // namespace voxelenc::lm
