#include "voxelenc/pipeline/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "voxelenc/parallel.hpp"

namespace voxelenc::pipeline {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string join_problems(const std::vector<std::string>& problems) {
  std::ostringstream out;
  out << "invalid config (" << problems.size() << " problem" << (problems.size() == 1 ? "" : "s")
      << ")";
  for (const auto& p : problems) out << "\n  - " << p;
  return out.str();
}

// Typed access to one JSON object that records every problem and flags keys
// nobody asked for.
class Section {
 public:
  Section(const json* obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {
    if (obj_ != nullptr && !obj_->is_object()) {
      errors_.push_back(where() + " must be an object");
      obj_ = nullptr;
    }
  }

  ~Section() {
    if (obj_ == nullptr) return;
    for (const auto& item : obj_->items()) {
      if (seen_.count(item.key()) == 0) errors_.push_back("unknown key '" + name(item.key()) + "'");
    }
  }

  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_ != nullptr && obj_->contains(key) && !obj_->at(key).is_null();
  }

  const json* child(const std::string& key) {
    if (!has(key)) return nullptr;
    return &obj_->at(key);
  }

  std::string name(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void error(const std::string& key, const std::string& message) {
    errors_.push_back(name(key) + ": " + message);
  }

  bool get(const std::string& key, double& out) {
    if (!has(key)) return false;
    const auto& v = obj_->at(key);
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf" || s == "Infinity") {
        out = std::numeric_limits<double>::infinity();
        return true;
      }
    }
    if (!v.is_number()) {
      error(key, "expected a number");
      return false;
    }
    out = v.get<double>();
    return true;
  }

  bool get(const std::string& key, std::size_t& out) {
    if (!has(key)) return false;
    const auto& v = obj_->at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      error(key, "expected a non-negative integer");
      return false;
    }
    out = v.get<std::size_t>();
    return true;
  }

  bool get(const std::string& key, std::uint64_t& out, int /*seed*/) {
    std::size_t tmp = 0;
    if (!get(key, tmp)) return false;
    out = tmp;
    return true;
  }

  bool get(const std::string& key, bool& out) {
    if (!has(key)) return false;
    const auto& v = obj_->at(key);
    if (!v.is_boolean()) {
      error(key, "expected true or false");
      return false;
    }
    out = v.get<bool>();
    return true;
  }

  bool get(const std::string& key, std::string& out) {
    if (!has(key)) return false;
    const auto& v = obj_->at(key);
    if (!v.is_string()) {
      error(key, "expected a string");
      return false;
    }
    out = v.get<std::string>();
    return true;
  }

  bool get(const std::string& key, std::vector<double>& out) {
    if (!has(key)) return false;
    const auto& v = obj_->at(key);
    if (!v.is_array()) {
      error(key, "expected an array of numbers");
      return false;
    }
    std::vector<double> values;
    for (const auto& x : v) {
      if (x.is_string() && (x.get<std::string>() == "inf" || x.get<std::string>() == "Infinity")) {
        values.push_back(std::numeric_limits<double>::infinity());
        continue;
      }
      if (!x.is_number()) {
        error(key, "expected an array of numbers");
        return false;
      }
      values.push_back(x.get<double>());
    }
    out = std::move(values);
    return true;
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json* obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

template <class Fn>
void capture(std::vector<std::string>& errors, const std::string& context, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    errors.push_back(context + ": " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

void check_exists(std::vector<std::string>& errors, const std::string& field, const fs::path& p,
                  bool check) {
  if (check && !fs::exists(p)) errors.push_back(field + ": path '" + p.string() + "' does not exist");
}

void parse_hrf(Section& s, hrf::HrfParams& h) {
  s.get("peak_shape", h.peak_shape);
  s.get("undershoot_shape", h.undershoot_shape);
  s.get("peak_scale", h.peak_scale);
  s.get("undershoot_scale", h.undershoot_scale);
  s.get("undershoot_ratio", h.undershoot_ratio);
  s.get("length_s", h.length_s);
  s.get("oversample_hz", h.oversample_hz);
}

void parse_model(Section& s, lm::ModelConfig& m) {
  s.get("n_layers", m.n_layers);
  s.get("d_model", m.d_model);
  s.get("n_heads", m.n_heads);
  s.get("vocab", m.vocab);
  s.get("context", m.context);
  s.get("d_ff", m.d_ff);
}

void parse_sweep(const json* node, std::vector<std::string>& errors, SweepSettings& sw) {
  Section s(node, "sweep", errors);
  if (s.get("proportions", sw.proportions)) {
    for (std::size_t i = 0; i < sw.proportions.size(); ++i) {
      if (!(sw.proportions[i] >= 0.0 && sw.proportions[i] <= 1.0)) {
        s.error("proportions", "entry " + std::to_string(i) + " (" +
                                   std::to_string(sw.proportions[i]) + ") outside [0, 1]");
      }
    }
  }
  s.get("seed", sw.seed, 0);
  s.get("grammar_tokens", sw.grammar_tokens);
  s.get("sentence_min_len", sw.sentence_min_len);
  s.get("sentence_max_len", sw.sentence_max_len);
  {
    Section m(s.child("model"), "sweep.model", errors);
    parse_model(m, sw.model);
  }
  capture(errors, "sweep.model", [&] { sw.model.validate(); });
  {
    Section p(s.child("pretrain"), "sweep.pretrain", errors);
    p.get("corpus_size", sw.pretrain.corpus_size);
    p.get("min_len", sw.pretrain.min_len);
    p.get("max_len", sw.pretrain.max_len);
    p.get("steps", sw.pretrain.steps);
    p.get("learning_rate", sw.pretrain.learning_rate);
    p.get("batch_size", sw.pretrain.batch_size);
    if (sw.pretrain.min_len < 2 || sw.pretrain.max_len < sw.pretrain.min_len) {
      errors.push_back("sweep.pretrain: need 2 <= min_len <= max_len");
    }
  }
  {
    Section t(s.child("task"), "sweep.task", errors);
    t.get("n_examples", sw.task.n_examples);
    t.get("n_labels", sw.task.n_labels);
    t.get("topic_words", sw.task.topic_words);
    t.get("min_len", sw.task.min_len);
    t.get("max_len", sw.task.max_len);
    t.get("topic_rate", sw.task.topic_rate);
    t.get("seed", sw.task.seed, 0);
  }
  {
    Section t(s.child("tune"), "sweep.tune", errors);
    t.get("steps", sw.tune.steps);
    t.get("learning_rate", sw.tune.learning_rate);
    t.get("batch_size", sw.tune.batch_size);
    if (!(sw.tune.learning_rate > 0.0)) errors.push_back("sweep.tune.learning_rate: must be > 0");
    if (sw.tune.batch_size < 1) errors.push_back("sweep.tune.batch_size: must be >= 1");
  }
  {
    Section b(s.child("brain"), "sweep.brain", errors);
    b.get("n_subjects", sw.brain.n_subjects);
    b.get("n_voxels", sw.brain.n_voxels);
    b.get("n_trs", sw.brain.n_trs);
    b.get("planted_snr", sw.brain.planted_snr);
    b.get("background_snr", sw.brain.background_snr);
    std::string noise;
    if (b.get("noise", noise)) {
      capture(errors, "sweep.brain.noise", [&] { sw.brain.noise = synth::parse_noise_model(noise); });
    }
    b.get("rho", sw.brain.rho);
    if (sw.brain.n_subjects < 2) errors.push_back("sweep.brain.n_subjects: need at least 2");
    if (sw.brain.n_voxels < 4) errors.push_back("sweep.brain.n_voxels: need at least 4");
    if (!(sw.brain.planted_snr >= 0.0) || !(sw.brain.background_snr >= 0.0)) {
      errors.push_back("sweep.brain: snr values must be >= 0");
    }
  }
  if (sw.grammar_tokens + sw.task.n_labels > sw.model.vocab) {
    errors.push_back("sweep: grammar_tokens + task.n_labels exceeds model.vocab");
  }
  if (sw.sentence_min_len < 1 || sw.sentence_max_len < sw.sentence_min_len) {
    errors.push_back("sweep: need 1 <= sentence_min_len <= sentence_max_len");
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : ValidationError(join_problems(problems)), problems_(std::move(problems)) {}

PipelineConfig parse_config(const json& j, const fs::path& base_dir, bool check_paths) {
  std::vector<std::string> errors;
  PipelineConfig cfg;
  {
    Section root(&j, "", errors);
    if (!root.get("tr_s", cfg.tr_s)) {
      if (!root.has("tr_s")) errors.push_back("tr_s: required key is missing");
    } else if (!(cfg.tr_s > 0.0) || !std::isfinite(cfg.tr_s)) {
      errors.push_back("tr_s: must be a finite number > 0");
    }
    root.get("zscore_design", cfg.zscore_design);
    root.get("workers", cfg.workers);
    std::string out_dir;
    cfg.output_dir = resolve(base_dir, root.get("output_dir", out_dir) ? out_dir : "out");

    {
      Section h(root.child("hrf"), "hrf", errors);
      parse_hrf(h, cfg.hrf);
    }
    capture(errors, "hrf", [&] { cfg.hrf.validate(); });

    {
      Section r(root.child("ridge"), "ridge", errors);
      if (r.get("lambdas", cfg.ridge.lambdas)) {
        if (cfg.ridge.lambdas.empty()) r.error("lambdas", "must not be empty");
        for (std::size_t i = 0; i < cfg.ridge.lambdas.size(); ++i) {
          const double l = cfg.ridge.lambdas[i];
          if (!std::isfinite(l) || l < 0.0) {
            r.error("lambdas", "entry " + std::to_string(i) + " must be finite and >= 0");
          }
          if (i > 0 && l < cfg.ridge.lambdas[i - 1]) {
            r.error("lambdas", "not sorted ascending (entry " + std::to_string(i) + " = " +
                                   std::to_string(l) + " follows " +
                                   std::to_string(cfg.ridge.lambdas[i - 1]) + ")");
          }
        }
      }
      std::string penalty;
      if (r.get("penalty", penalty)) {
        capture(errors, "ridge.penalty", [&] { cfg.ridge.penalty = ridge::parse_penalty(penalty); });
      }
      r.get("standardize", cfg.ridge.standardize);
      r.get("fit_intercept", cfg.ridge.fit_intercept);
    }

    {
      Section f(root.child("folds"), "folds", errors);
      if (f.get("n_folds", cfg.n_folds) && cfg.n_folds < 2) {
        f.error("n_folds", "must be >= 2");
      }
      std::string scheme;
      if (f.get("scheme", scheme)) {
        capture(errors, "folds.scheme", [&] { cfg.fold_scheme = cv::parse_fold_scheme(scheme); });
      }
      f.get("seed", cfg.fold_seed, 0);
    }

    {
      Section c(root.child("compare"), "compare", errors);
      if (c.get("alpha", cfg.compare.alpha) &&
          !(cfg.compare.alpha > 0.0 && cfg.compare.alpha < 1.0)) {
        c.error("alpha", "must lie in (0, 1)");
      }
      c.get("fisher_z", cfg.compare.fisher_z);
      if (const json* pairs = c.child("pairs")) {
        if (!pairs->is_array()) {
          c.error("pairs", "expected an array");
        } else {
          for (std::size_t i = 0; i < pairs->size(); ++i) {
            const std::string where = "compare.pairs[" + std::to_string(i) + "]";
            Section p(&(*pairs)[i], where, errors);
            ComparePair pair;
            std::string a;
            std::string b;
            p.get("name", pair.name);
            if (!p.get("a", a)) errors.push_back(where + ".a: required key is missing");
            if (!p.get("b", b)) errors.push_back(where + ".b: required key is missing");
            pair.a = resolve(base_dir, a);
            pair.b = resolve(base_dir, b);
            if (!a.empty()) check_exists(errors, where + ".a", pair.a, check_paths);
            if (!b.empty()) check_exists(errors, where + ".b", pair.b, check_paths);
            if (pair.name.empty()) pair.name = "pair" + std::to_string(i);
            cfg.pairs.push_back(std::move(pair));
          }
        }
      }
    }

    {
      Section d(root.child("dataset"), "dataset", errors);
      std::string p;
      if (d.get("stimulus", p)) {
        cfg.dataset.stimulus = resolve(base_dir, p);
        check_exists(errors, "dataset.stimulus", *cfg.dataset.stimulus, check_paths);
      }
      if (d.get("design", p)) {
        cfg.dataset.design = resolve(base_dir, p);
        check_exists(errors, "dataset.design", *cfg.dataset.design, check_paths);
      }
      if (d.get("atlas", p)) {
        cfg.dataset.atlas = resolve(base_dir, p);
        check_exists(errors, "dataset.atlas", *cfg.dataset.atlas, check_paths);
      }
      if (const json* bold = d.child("bold")) {
        if (!bold->is_array()) {
          d.error("bold", "expected an array of paths");
        } else {
          for (std::size_t i = 0; i < bold->size(); ++i) {
            if (!(*bold)[i].is_string()) {
              d.error("bold", "entry " + std::to_string(i) + " is not a string");
              continue;
            }
            cfg.dataset.bold.push_back(resolve(base_dir, (*bold)[i].get<std::string>()));
            check_exists(errors, "dataset.bold[" + std::to_string(i) + "]",
                         cfg.dataset.bold.back(), check_paths);
          }
        }
      }
    }

    parse_sweep(root.child("sweep"), errors, cfg.sweep);
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

PipelineConfig validate_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path(), true);
}

json to_json(const PipelineConfig& cfg) {
  auto path_or_null = [](const std::optional<fs::path>& p) -> json {
    return p ? json(p->generic_string()) : json(nullptr);
  };
  json bold = json::array();
  for (const auto& b : cfg.dataset.bold) bold.push_back(b.generic_string());
  json pairs = json::array();
  for (const auto& p : cfg.pairs) {
    pairs.push_back({{"name", p.name}, {"a", p.a.generic_string()}, {"b", p.b.generic_string()}});
  }
  const auto& sw = cfg.sweep;
  return {
      {"tr_s", cfg.tr_s},
      {"hrf",
       {{"peak_shape", cfg.hrf.peak_shape},
        {"undershoot_shape", cfg.hrf.undershoot_shape},
        {"peak_scale", cfg.hrf.peak_scale},
        {"undershoot_scale", cfg.hrf.undershoot_scale},
        {"undershoot_ratio", cfg.hrf.undershoot_ratio},
        {"length_s", cfg.hrf.length_s},
        {"oversample_hz", cfg.hrf.oversample_hz}}},
      {"zscore_design", cfg.zscore_design},
      {"ridge",
       {{"lambdas", cfg.ridge.lambdas},
        {"penalty", ridge::to_string(cfg.ridge.penalty)},
        {"standardize", cfg.ridge.standardize},
        {"fit_intercept", cfg.ridge.fit_intercept}}},
      {"folds",
       {{"n_folds", cfg.n_folds},
        {"scheme", cv::to_string(cfg.fold_scheme)},
        {"seed", cfg.fold_seed}}},
      {"compare",
       {{"alpha", cfg.compare.alpha}, {"fisher_z", cfg.compare.fisher_z}, {"pairs", pairs}}},
      {"dataset",
       {{"stimulus", path_or_null(cfg.dataset.stimulus)},
        {"design", path_or_null(cfg.dataset.design)},
        {"bold", bold},
        {"atlas", path_or_null(cfg.dataset.atlas)}}},
      {"output_dir", cfg.output_dir.generic_string()},
      {"sweep",
       {{"proportions", sw.proportions},
        {"seed", sw.seed},
        {"model",
         {{"n_layers", sw.model.n_layers},
          {"d_model", sw.model.d_model},
          {"n_heads", sw.model.n_heads},
          {"vocab", sw.model.vocab},
          {"context", sw.model.context},
          {"d_ff", sw.model.d_ff}}},
        {"grammar_tokens", sw.grammar_tokens},
        {"sentence_min_len", sw.sentence_min_len},
        {"sentence_max_len", sw.sentence_max_len},
        {"pretrain",
         {{"corpus_size", sw.pretrain.corpus_size},
          {"min_len", sw.pretrain.min_len},
          {"max_len", sw.pretrain.max_len},
          {"steps", sw.pretrain.steps},
          {"learning_rate", sw.pretrain.learning_rate},
          {"batch_size", sw.pretrain.batch_size}}},
        {"task",
         {{"n_examples", sw.task.n_examples},
          {"n_labels", sw.task.n_labels},
          {"topic_words", sw.task.topic_words},
          {"min_len", sw.task.min_len},
          {"max_len", sw.task.max_len},
          {"topic_rate", sw.task.topic_rate},
          {"seed", sw.task.seed}}},
        {"tune",
         {{"steps", sw.tune.steps},
          {"learning_rate", sw.tune.learning_rate},
          {"batch_size", sw.tune.batch_size}}},
        {"brain",
         {{"n_subjects", sw.brain.n_subjects},
          {"n_voxels", sw.brain.n_voxels},
          {"n_trs", sw.brain.n_trs},
          {"planted_snr", sw.brain.planted_snr},
          {"background_snr", sw.brain.background_snr},
          {"noise", synth::to_string(sw.brain.noise)},
          {"rho", sw.brain.rho}}}}}};
}

synth::SynthSpec parse_synth_spec(const json& j) {
  std::vector<std::string> errors;
  synth::SynthSpec spec;
  {
    Section s(&j, "", errors);
    if (!s.get("tr_s", spec.tr_s) && !s.has("tr_s")) {
      errors.push_back("tr_s: required key is missing");
    }
    s.get("n_subjects", spec.n_subjects);
    s.get("n_voxels", spec.n_voxels);
    s.get("n_trs", spec.n_trs);
    s.get("dim", spec.dim);
    if (s.has("snr")) {
      const auto& v = j.at("snr");
      if (v.is_array()) {
        s.get("snr", spec.snr);
      } else {
        double one = 0.0;
        if (s.get("snr", one)) spec.snr = {one};
      }
    }
    std::string noise;
    if (s.get("noise", noise)) {
      capture(errors, "noise", [&] { spec.noise = synth::parse_noise_model(noise); });
    }
    s.get("rho", spec.rho);
    s.get("seed", spec.seed, 0);
    s.get("min_duration_s", spec.min_duration_s);
    s.get("max_duration_s", spec.max_duration_s);
    s.get("min_gap_s", spec.min_gap_s);
    s.get("max_gap_s", spec.max_gap_s);
    Section h(s.child("hrf"), "hrf", errors);
    parse_hrf(h, spec.hrf);
  }
  if (errors.empty()) capture(errors, "spec", [&] { spec.validate(); });
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return spec;
}

json to_json(const synth::SynthSpec& spec) {
  json snr = json::array();
  for (double v : spec.snr) snr.push_back(std::isinf(v) ? json("inf") : json(v));
  return {{"tr_s", spec.tr_s},
          {"n_subjects", spec.n_subjects},
          {"n_voxels", spec.n_voxels},
          {"n_trs", spec.n_trs},
          {"dim", spec.dim},
          {"snr", snr},
          {"noise", synth::to_string(spec.noise)},
          {"rho", spec.rho},
          {"seed", spec.seed},
          {"min_duration_s", spec.min_duration_s},
          {"max_duration_s", spec.max_duration_s},
          {"min_gap_s", spec.min_gap_s},
          {"max_gap_s", spec.max_gap_s},
          {"hrf",
           {{"peak_shape", spec.hrf.peak_shape},
            {"undershoot_shape", spec.hrf.undershoot_shape},
            {"peak_scale", spec.hrf.peak_scale},
            {"undershoot_scale", spec.hrf.undershoot_scale},
            {"undershoot_ratio", spec.hrf.undershoot_ratio},
            {"length_s", spec.hrf.length_s},
            {"oversample_hz", spec.hrf.oversample_hz}}}};
}

std::size_t resolve_workers(std::size_t requested) {
  return requested == 0 ? default_workers() : requested;
}

}  // namespace voxelenc::pipeline
