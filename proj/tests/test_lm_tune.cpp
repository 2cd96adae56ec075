#include <cmath>
#include <random>

#include "doctest.h"
#include "voxelenc/error.hpp"
#include "voxelenc/lm/tasks.hpp"
#include "voxelenc/lm/tune.hpp"

using namespace voxelenc;

namespace {

lm::ModelConfig small(std::size_t layers = 2) {
  lm::ModelConfig c;
  c.n_layers = layers;
  c.d_model = 16;
  c.n_heads = 4;
  c.vocab = 40;
  c.context = 24;
  c.d_ff = 24;
  return c;
}

lm::TaskDataset corpus(std::size_t n = 24, std::uint64_t seed = 5) {
  const lm::MarkovGrammar grammar(40, seed, 3);
  return lm::make_lm_corpus(grammar, n, 4, 8, seed + 1);
}

lm::TokenSequence sample_sequence() { return {{3, 17, 8}, {22, 5, 39, 1}}; }

double gradient_norm(const lm::Gradients& g) {
  double s = 0.0;
  for (const auto& t : g.tensors)
    for (double v : t) s += v * v;
  for (double v : g.prefix) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("analytic gradients match central differences") {
  const auto params = lm::ToyLmParams::random(small(), 31, 0.3);
  const auto seq = sample_sequence();
  lm::GradCheckOptions opts;
  opts.entries_per_tensor = 16;

  SUBCASE("full fine-tuning") {
    const auto rep = lm::grad_check(params, nullptr, lm::TuneConfig::full(), seq, opts);
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.tensors.size() == params.tensor_count());
    CHECK(rep.frozen_with_gradient == 0);
  }
  SUBCASE("partial fine-tuning") {
    const auto rep = lm::grad_check(params, nullptr, lm::TuneConfig::partial(0.5), seq, opts);
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.tensors.size() == lm::kLayerTensorCount + 1);
    CHECK(rep.frozen_with_gradient == 0);
  }
  SUBCASE("prefix tuning") {
    const auto rep = lm::grad_check(params, nullptr, lm::TuneConfig::prefix(3), seq, opts);
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.checked > 0);
    CHECK(rep.frozen_with_gradient == 0);
  }
}

TEST_CASE("prefix gradients leave the pretrained tensors without a gradient") {
  const auto params = lm::ToyLmParams::random(small(), 2);
  const auto prefix = lm::PrefixBank::random(small(), 4, 3);
  const auto mask = lm::mask_for(params, lm::TuneConfig::prefix(4));
  const auto lg = lm::loss_and_gradient(params, &prefix, sample_sequence(), mask);
  for (const auto& g : lg.grad.tensors) CHECK(g.empty());
  CHECK(lg.grad.prefix.size() == prefix.data.size());
  CHECK(gradient_norm(lg.grad) > 0.0);
}

TEST_CASE("a model that already predicts its targets has a vanishing gradient") {
  // Zero weights pass the embeddings straight through every block, so
  // component 0 of the final state is 1 and the head puts all mass on token 7.
  lm::ToyLmParams params(small());
  for (std::size_t tok = 0; tok < 40; ++tok) params.tensor(lm::ToyLmParams::kTokenEmbedding).data[tok * 16] = 1.0;
  params.tensor(params.output_index()).data[7] = 60.0;
  const lm::TokenSequence seq{{3, 7}, {7, 7, 7}};
  const auto lg = lm::loss_and_gradient(params, nullptr, seq, lm::select_trainable(params, 1.0));
  CHECK(lg.loss < 1e-20);
  CHECK(gradient_norm(lg.grad) < 1e-6);
}

TEST_CASE("selected layers follow ceil(p * n) from the top") {
  const auto params = lm::ToyLmParams::random(small(4), 1);
  const std::size_t per_layer = [&] {
    std::size_t n = 0;
    for (std::size_t t = 0; t < lm::kLayerTensorCount; ++t)
      n += params.layer(0, static_cast<lm::LayerTensor>(t)).data.size();
    return n;
  }();
  const std::size_t head = 16 * 40;
  const std::size_t embeddings = 40 * 16 + 24 * 16;
  const std::vector<std::pair<double, std::size_t>> cases = {
      {0.0, head}, {0.25, head + per_layer}, {0.5, head + 2 * per_layer},
      {0.75, head + 3 * per_layer}, {1.0, params.parameter_count()}};
  for (const auto& [p, count] : cases) {
    const auto mask = lm::select_trainable(params, p);
    CHECK(mask.parameter_count(params) == count);
    CHECK(mask.tensors[params.output_index()]);
  }
  CHECK(params.parameter_count() == head + embeddings + 4 * per_layer);

  const auto half = lm::select_trainable(params, 0.5);
  for (std::size_t l = 0; l < 4; ++l) {
    CHECK(half.tensors[params.layer_index(l, lm::LayerTensor::Wq)] == (l >= 2));
  }
  CHECK_FALSE(half.tensors[lm::ToyLmParams::kTokenEmbedding]);
  CHECK(half.lowest_layer(params) == 2);
  CHECK(lm::select_trainable(params, 0.0).lowest_layer(params) == 4);
  CHECK(lm::select_trainable(params, 0.3).parameter_count(params) == head + 2 * per_layer);
  CHECK_THROWS_AS(lm::select_trainable(params, 1.5), ArgumentError);
}

TEST_CASE("prefix tuning never touches the pretrained tensors") {
  const auto base = lm::ToyLmParams::random(small(), 41);
  auto cfg = lm::TuneConfig::prefix(4);
  cfg.steps = 500;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.05;
  const auto initial = lm::PrefixBank::random(small(), 4, 8);
  const auto tuned = lm::tune(base, corpus(), cfg, &initial);
  for (std::size_t i = 0; i < base.tensor_count(); ++i) {
    CHECK(tuned.params.tensor(i).data == base.tensor(i).data);
  }
  REQUIRE(tuned.prefix.has_value());
  CHECK(tuned.prefix->prefix_len == 4);
  CHECK(tuned.loss_history.size() == 500);
  CHECK_FALSE(tuned.prefix->data == initial.data);
}

TEST_CASE("partial tuning leaves unselected tensors bit-identical") {
  const auto base = lm::ToyLmParams::random(small(4), 42);
  auto cfg = lm::TuneConfig::partial(0.25);
  cfg.steps = 40;
  cfg.batch_size = 4;
  const auto tuned = lm::tune(base, corpus(), cfg);
  for (std::size_t i = 0; i < base.tensor_count(); ++i) {
    if (tuned.mask.tensors[i]) {
      const bool bias = base.tensor(i).name.find(".b") != std::string::npos;
      if (!bias) CHECK_FALSE(tuned.params.tensor(i).data == base.tensor(i).data);
    } else {
      CHECK(tuned.params.tensor(i).data == base.tensor(i).data);
    }
  }
  CHECK_FALSE(tuned.prefix.has_value());
}

TEST_CASE("tuning is deterministic and independent of the worker count") {
  const auto base = lm::ToyLmParams::random(small(), 43);
  for (auto cfg : {lm::TuneConfig::full(), lm::TuneConfig::partial(0.5), lm::TuneConfig::prefix(2)}) {
    cfg.steps = 15;
    cfg.batch_size = 5;
    cfg.seed = 9;
    const auto a = lm::tune(base, corpus(), cfg);
    const auto b = lm::tune(base, corpus(), cfg);
    cfg.workers = 3;
    const auto c = lm::tune(base, corpus(), cfg);
    CHECK(a.params == b.params);
    CHECK(a.params == c.params);
    CHECK(a.loss_history == c.loss_history);
    CHECK(a.prefix == c.prefix);
  }
}

TEST_CASE("smoothed loss does not rise over the first ten steps") {
  const auto base = lm::ToyLmParams::random(small(), 44);
  const auto data = corpus(16);
  for (auto cfg : {lm::TuneConfig::full(), lm::TuneConfig::partial(0.5), lm::TuneConfig::prefix(3)}) {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      cfg.steps = 10;
      cfg.batch_size = data.examples.size();
      cfg.learning_rate = 0.02;
      cfg.seed = seed;
      const auto tuned = lm::tune(base, data, cfg);
      CAPTURE(lm::to_string(cfg.mode));
      CHECK(lm::smoothed_loss_increases(tuned.loss_history).empty());
      CHECK(tuned.loss_history.back() < tuned.loss_history.front());
    }
  }
}

TEST_CASE("smoothed increases are flagged") {
  const std::vector<double> flat{5, 5, 5, 5, 5, 5, 5};
  CHECK(lm::smoothed_loss_increases(flat).empty());
  const std::vector<double> bump{10, 9, 8, 7, 6, 5, 20, 4, 3, 2};
  CHECK(lm::smoothed_loss_increases(bump) == std::vector<std::size_t>{6});
}

TEST_CASE("full fine-tuning fits a small corpus") {
  const auto base = lm::ToyLmParams::random(small(), 45);
  const auto data = corpus(4);
  const double before = lm::dataset_loss(base, nullptr, data);
  auto cfg = lm::TuneConfig::full();
  cfg.optimizer = lm::Optimizer::Adam;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 4;
  cfg.steps = 300;
  const auto tuned = lm::tune(base, data, cfg);
  CHECK(lm::dataset_loss(tuned.params, nullptr, data) < 0.1 * before);
}

TEST_CASE("divergence stops training with the failing step") {
  const auto base = lm::ToyLmParams::random(small(), 46);
  auto cfg = lm::TuneConfig::full();
  cfg.steps = 5;
  cfg.learning_rate = 1e200;
  try {
    lm::tune(base, corpus(), cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.step() >= 1);
    CHECK_FALSE(e.is_validation());
  }
}

TEST_CASE("tuning configuration checks") {
  CHECK_NOTHROW(lm::TuneConfig::full().validate());
  CHECK_NOTHROW(lm::TuneConfig::partial(0.0).validate());
  CHECK_THROWS_AS(lm::TuneConfig::partial(1.2).validate(), ArgumentError);
  CHECK_THROWS_AS(lm::TuneConfig::prefix(0).validate(), ArgumentError);
  auto c = lm::TuneConfig::full();
  c.proportion = 0.5;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = lm::TuneConfig::prefix(4);
  c.proportion = 0.5;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = lm::TuneConfig::partial(0.5);
  c.prefix_len = 2;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = lm::TuneConfig::full();
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = lm::TuneConfig::full();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  CHECK(lm::parse_tune_mode("partial-ft") == lm::TuneMode::Partial);
  CHECK_THROWS_AS(lm::parse_tune_mode("lora"), ArgumentError);
  CHECK(lm::parse_optimizer("adam") == lm::Optimizer::Adam);

  const auto base = lm::ToyLmParams::random(small(), 47);
  const auto wrong = lm::PrefixBank::random(small(), 3, 1);
  CHECK_THROWS_AS(lm::tune(base, corpus(), lm::TuneConfig::prefix(4), &wrong), ArgumentError);
}
