#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "voxelenc/lm/model.hpp"
#include "voxelenc/lm/tasks.hpp"

namespace voxelenc::lm {

struct TrainableMask {
  std::vector<bool> tensors;  // indexed like ToyLmParams tensors
  bool prefix = false;

  // Number of trainable entries of the pretrained set.
  std::size_t parameter_count(const ToyLmParams& params) const;
  // Lowest transformer layer whose output needs a gradient; n_layers when
  // only the head is trainable.
  std::size_t lowest_layer(const ToyLmParams& params) const;
};

// Top ceil(p * n) layers nearest the output plus the output matrix.
// p = 0 leaves only the output matrix; p = 1 also includes the embeddings.
TrainableMask select_trainable(const ToyLmParams& params, double p);

struct Gradients {
  std::vector<std::vector<double>> tensors;  // empty for frozen tensors
  std::vector<double> prefix;                // empty unless the prefix trains

  static Gradients zeros(const ToyLmParams& params, const PrefixBank* prefix,
                         const TrainableMask& mask);
  void add(const Gradients& other);
  void scale(double factor);
};

struct LossAndGradient {
  double loss = 0.0;
  Gradients grad;
};

// Loss -sum log p(y | z_<) for one sequence and its gradient w.r.t. the
// masked tensors (and the prefix when mask.prefix is set).
LossAndGradient loss_and_gradient(const ToyLmParams& params, const PrefixBank* prefix,
                                  const TokenSequence& seq, const TrainableMask& mask);

// Mean over the batch. Examples run in parallel; gradients are reduced in
// example order.
LossAndGradient batch_loss_and_gradient(const ToyLmParams& params, const PrefixBank* prefix,
                                        const std::vector<const TokenSequence*>& batch,
                                        const TrainableMask& mask, std::size_t workers = 1);

enum class TuneMode { Full, Partial, Prefix };
enum class Optimizer { Sgd, Adam };

TuneMode parse_tune_mode(const std::string& name);
std::string to_string(TuneMode mode);
Optimizer parse_optimizer(const std::string& name);
std::string to_string(Optimizer opt);

struct TuneConfig {
  TuneMode mode = TuneMode::Full;
  std::optional<double> proportion;       // partial only
  std::optional<std::size_t> prefix_len;  // prefix only
  Optimizer optimizer = Optimizer::Sgd;
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t steps = 100;
  std::size_t batch_size = 16;
  double prefix_init_scale = 1.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  static TuneConfig full();
  static TuneConfig partial(double p);
  static TuneConfig prefix(std::size_t len = 8);

  void validate() const;
};

TrainableMask mask_for(const ToyLmParams& params, const TuneConfig& cfg);

struct TunedModel {
  ToyLmParams params;
  std::optional<PrefixBank> prefix;
  TrainableMask mask;
  std::vector<double> loss_history;  // mean batch loss before each step
};

// Minimises the continuation loss (i.e. maximises sum log p over id_y) with
// mini-batch steps. Batches are drawn from per-epoch shuffles of the data.
TunedModel tune(const ToyLmParams& base, const TaskDataset& data, const TuneConfig& cfg,
                const PrefixBank* initial_prefix = nullptr);

// Mean loss over every example of the dataset.
double dataset_loss(const ToyLmParams& params, const PrefixBank* prefix, const TaskDataset& data,
                    std::size_t workers = 1);

// Indices i in [window, steps) where the moving average (window wide) of the
// loss rises above the previous one.
std::vector<std::size_t> smoothed_loss_increases(const std::vector<double>& losses,
                                                 std::size_t window = 5, std::size_t steps = 10);

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t entries_per_tensor = 12;  // half largest |g|, half random
  std::uint64_t seed = 0;
  // The relative error |a - n| / max(|a|, |n|, floor) uses
  // floor = floor_scale * max(1, |loss|), the size of the roundoff in the
  // central difference.
  double floor_scale = 1e-6;
};

struct TensorCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<TensorCheck> tensors;
  // Number of frozen pretrained tensors for which a gradient was produced.
  std::size_t frozen_with_gradient = 0;
};

// Central differences of sequence_loss against loss_and_gradient for the
// tensors trainable under cfg.mode. Prefix mode builds a random prefix when
// none is given.
GradCheckReport grad_check(const ToyLmParams& params, const PrefixBank* prefix,
                           const TuneConfig& cfg, const TokenSequence& sample,
                           const GradCheckOptions& opts = {});

}  // namespace voxelenc::lm
