// voxelenc command-line entry point.
//
// Exit codes: 0 success, 2 validation error, 3 runtime or numerical error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "voxelenc/cv.hpp"
#include "voxelenc/error.hpp"
#include "voxelenc/hrf.hpp"
#include "voxelenc/io.hpp"
#include "voxelenc/lm/model.hpp"
#include "voxelenc/lm/serialize.hpp"
#include "voxelenc/lm/tasks.hpp"
#include "voxelenc/lm/tune.hpp"
#include "voxelenc/pipeline/config.hpp"
#include "voxelenc/pipeline/provenance.hpp"
#include "voxelenc/pipeline/sweep.hpp"
#include "voxelenc/ridge.hpp"
#include "voxelenc/stats.hpp"
#include "voxelenc/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace voxelenc;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

std::size_t g_threads = 0;

std::size_t workers() { return pipeline::resolve_workers(g_threads); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Content digest of an input file, so provenance does not depend on where
// the file lives.
std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return pipeline::hex64(pipeline::fnv1a64(bytes));
}

std::vector<double> bool_values(const std::vector<bool>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] ? 1.0 : 0.0;
  return out;
}

std::vector<bool> read_mask(const fs::path& path) {
  const auto v = io::read_vector(path);
  std::vector<bool> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] != 0.0;
  return out;
}

json hrf_json(const hrf::HrfParams& h) {
  return {{"peak_shape", h.peak_shape},
          {"undershoot_shape", h.undershoot_shape},
          {"peak_scale", h.peak_scale},
          {"undershoot_scale", h.undershoot_scale},
          {"undershoot_ratio", h.undershoot_ratio},
          {"length_s", h.length_s},
          {"oversample_hz", h.oversample_hz}};
}

json roi_json(const stats::RoiSummary& roi) {
  json out = json::array();
  for (const auto& n : roi.networks) {
    out.push_back({{"code", n.code},
                   {"name", n.name},
                   {"n_voxels", n.n_voxels},
                   {"n_scored", n.n_scored},
                   {"mean_r", n.mean ? json(*n.mean) : json(nullptr)},
                   {"std_r", n.std ? json(*n.std) : json(nullptr)}});
  }
  return out;
}

// Shared settings for the verbs that accept --config plus flag overrides.
struct Common {
  std::string config;
  std::optional<double> tr_s;
  std::vector<double> lambdas;
  std::string penalty;
  bool no_standardize = false;
  bool no_intercept = false;
  bool no_zscore = false;

  pipeline::PipelineConfig resolve() const {
    pipeline::PipelineConfig cfg;
    if (!config.empty()) cfg = pipeline::validate_config(config);
    if (tr_s) cfg.tr_s = *tr_s;
    if (!lambdas.empty()) cfg.ridge.lambdas = lambdas;
    if (!penalty.empty()) cfg.ridge.penalty = ridge::parse_penalty(penalty);
    if (no_standardize) cfg.ridge.standardize = false;
    if (no_intercept) cfg.ridge.fit_intercept = false;
    if (no_zscore) cfg.zscore_design = false;
    cfg.ridge.validate();
    return cfg;
  }

  json ridge_json(const pipeline::PipelineConfig& cfg) const {
    return {{"lambdas", cfg.ridge.lambdas},
            {"penalty", ridge::to_string(cfg.ridge.penalty)},
            {"standardize", cfg.ridge.standardize},
            {"fit_intercept", cfg.ridge.fit_intercept}};
  }
};

void add_config_flag(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Pipeline config JSON; flags override it")
      ->check(CLI::ExistingFile);
}

void add_tr_flag(CLI::App* app, Common& c) {
  app->add_option("--tr", c.tr_s, "Repetition time in seconds (never defaulted)");
}

void add_ridge_flags(CLI::App* app, Common& c) {
  app->add_option("--lambda,--lambdas", c.lambdas, "Penalty grid (ascending)")->delimiter(',');
  app->add_option("--penalty", c.penalty, "l2 (default) or l1");
  app->add_flag("--no-standardize", c.no_standardize, "Fit on raw design columns");
  app->add_flag("--no-intercept", c.no_intercept, "Do not center targets");
}

double require_tr(const pipeline::PipelineConfig& cfg) {
  if (!(cfg.tr_s > 0.0)) {
    throw ArgumentError("tr_s is required: pass --tr or a config with tr_s");
  }
  return cfg.tr_s;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
  auto spec = pipeline::parse_synth_spec(read_json(a.spec));
  if (a.seed) spec.seed = *a.seed;
  const auto data = synth::generate(spec);
  const auto prov = pipeline::provenance("synth", pipeline::to_json(spec), {{"seed", spec.seed}});
  synth::save_dataset(data, a.out, prov);
  std::cout << "synth: " << spec.n_subjects << " subjects, " << spec.n_voxels << " voxels, "
            << spec.n_trs << " TRs -> " << a.out << "\n";
  return 0;
}

// ---- convolve -------------------------------------------------------------

struct ConvolveArgs {
  Common common;
  std::string track;
  std::size_t n_trs = 0;
  std::string out;
  bool impulse = false;
};

int run_convolve(const ConvolveArgs& a) {
  const auto cfg = a.common.resolve();
  const double tr = require_tr(cfg);
  const auto track = io::load_stimulus_track(a.track);
  hrf::ConvolveOptions opts;
  opts.impulse = a.impulse;
  auto res = hrf::convolve_track(track, cfg.hrf, tr, a.n_trs, opts);
  if (cfg.zscore_design) hrf::zscore_columns(res.design);
  io::write_matrix(res.design, a.out);
  const json canonical = {{"track", file_digest(a.track)},
                          {"tr_s", tr},
                          {"n_trs", a.n_trs},
                          {"impulse", a.impulse},
                          {"zscore_design", cfg.zscore_design},
                          {"hrf", hrf_json(cfg.hrf)}};
  fs::path side(a.out);
  side.replace_extension(".json");
  pipeline::write_json_file({{"rows", res.design.rows()},
                             {"cols", res.design.cols()},
                             {"tr_s", tr},
                             {"truncated_events", res.truncated_events},
                             {"zscored", cfg.zscore_design},
                             {"provenance", pipeline::provenance("convolve", canonical)}},
                            side);
  if (res.truncated_events > 0) {
    std::cerr << "warning: " << res.truncated_events
              << " event(s) extend past the last TR plus the HRF length\n";
  }
  std::cout << "convolve: " << res.design.shape_string() << " -> " << a.out << "\n";
  return 0;
}

// ---- fit ------------------------------------------------------------------

struct FitArgs {
  Common common;
  std::string design;
  std::string bold;
  std::string out;
};

int run_fit(const FitArgs& a) {
  const auto cfg = a.common.resolve();
  const auto design = io::read_matrix(a.design);
  const auto bold = io::read_matrix(a.bold);
  const auto path = ridge::fit_ridge_path(design, bold, cfg.ridge, workers());
  const std::size_t nd = design.cols();
  const std::size_t nv = bold.cols();
  const std::size_t nl = path.lambdas.size();
  DenseMatrix weights(nl * nd, nv);
  DenseMatrix intercepts(nl, nv);
  for (std::size_t l = 0; l < nl; ++l) {
    for (std::size_t d = 0; d < nd; ++d) {
      const auto src = path.weights[l].weights.row(d);
      std::copy(src.begin(), src.end(), weights.row(l * nd + d).begin());
    }
    const auto& ic = path.weights[l].intercepts;
    std::copy(ic.begin(), ic.end(), intercepts.row(l).begin());
  }
  fs::create_directories(a.out);
  const fs::path out(a.out);
  io::write_matrix(weights, out / "weights.vem");
  io::write_matrix(intercepts, out / "intercepts.vem");
  io::write_matrix(row_vector(path.lambdas), out / "lambdas.vem");
  io::write_matrix(row_vector(bool_values(path.excluded)), out / "excluded.vem");
  const json canonical = {{"design", file_digest(a.design)},
                          {"bold", file_digest(a.bold)},
                          {"ridge", a.common.ridge_json(cfg)}};
  std::size_t excluded = std::count(path.excluded.begin(), path.excluded.end(), true);
  pipeline::write_json_file({{"lambdas", path.lambdas},
                             {"n_features", nd},
                             {"n_voxels", nv},
                             {"n_excluded", excluded},
                             {"weights_layout", "lambda-major stack of n_features rows"},
                             {"provenance", pipeline::provenance("fit", canonical)}},
                            out / "fit.json");
  std::cout << "fit: " << nl << " lambda(s), " << nd << " features, " << nv << " voxels -> "
            << a.out << "\n";
  return 0;
}

// ---- score ----------------------------------------------------------------

struct ScoreArgs {
  Common common;
  std::string design;
  std::string track;
  std::string bold;
  std::string runs;
  std::string atlas;
  std::string out;
  std::optional<std::size_t> folds;
  std::string scheme;
  std::optional<std::uint64_t> seed;
  bool keep_predictions = false;
};

int run_score(const ScoreArgs& a) {
  auto cfg = a.common.resolve();
  if (a.folds) cfg.n_folds = *a.folds;
  if (!a.scheme.empty()) cfg.fold_scheme = cv::parse_fold_scheme(a.scheme);
  if (a.seed) cfg.fold_seed = *a.seed;

  const auto bold = io::read_matrix(a.bold);
  DenseMatrix design;
  json design_source;
  if (!a.design.empty()) {
    design = io::read_matrix(a.design);
    design_source = {{"design", file_digest(a.design)}};
  } else if (!a.track.empty()) {
    const double tr = require_tr(cfg);
    design = pipeline::design_from_track(io::load_stimulus_track(a.track), cfg, bold.rows());
    design_source = {{"track", file_digest(a.track)},
                     {"tr_s", tr},
                     {"zscore_design", cfg.zscore_design},
                     {"hrf", hrf_json(cfg.hrf)}};
  } else {
    throw ArgumentError("score: pass --design or --track");
  }

  std::vector<int> run_ids;
  if (!a.runs.empty()) {
    for (double v : io::read_vector(a.runs)) run_ids.push_back(static_cast<int>(v));
  }
  const auto plan = cv::make_folds(bold.rows(), cfg.n_folds, cfg.fold_scheme, cfg.fold_seed, run_ids);
  cv::CvOptions opts;
  opts.workers = workers();
  opts.keep_predictions = a.keep_predictions;
  const auto report = cv::cross_validate(design, bold, plan, cfg.ridge, opts);

  fs::create_directories(a.out);
  const fs::path out(a.out);
  io::write_matrix(row_vector(report.r), out / "r.vem");
  io::write_matrix(row_vector(report.chosen_lambda), out / "chosen_lambda.vem");
  io::write_matrix(report.per_fold_r, out / "per_fold_r.vem");
  io::write_matrix(row_vector(bool_values(report.excluded)), out / "excluded.vem");
  if (a.keep_predictions) io::write_matrix(report.predictions, out / "predictions.vem");

  std::size_t excluded = std::count(report.excluded.begin(), report.excluded.end(), true);
  double mean_r = 0.0;
  for (std::size_t v = 0; v < report.r.size(); ++v) {
    if (!report.excluded[v]) mean_r += report.r[v];
  }
  const std::size_t scored = report.r.size() - excluded;
  json j = {{"n_trs", bold.rows()},
            {"n_voxels", bold.cols()},
            {"n_excluded", excluded},
            {"mean_r", scored > 0 ? json(mean_r / static_cast<double>(scored)) : json(nullptr)},
            {"lambdas", report.lambdas},
            {"n_folds", plan.n_folds},
            {"fold_scheme", cv::to_string(plan.scheme)}};
  json canonical = {{"source", design_source},
                    {"bold", file_digest(a.bold)},
                    {"ridge", a.common.ridge_json(cfg)},
                    {"n_folds", cfg.n_folds},
                    {"fold_scheme", cv::to_string(cfg.fold_scheme)},
                    {"fold_seed", cfg.fold_seed}};
  if (!a.runs.empty()) canonical["runs"] = file_digest(a.runs);
  if (!a.atlas.empty()) {
    const auto atlas = io::load_atlas(a.atlas);
    j["roi"] = roi_json(stats::summarize_roi(report, atlas));
    canonical["atlas"] = file_digest(a.atlas);
  }
  j["provenance"] = pipeline::provenance("score", canonical, {{"fold_seed", cfg.fold_seed}});
  pipeline::write_json_file(j, out / "report.json");
  std::cout << "score: " << bold.cols() << " voxels, " << excluded << " excluded -> " << a.out
            << "\n";
  return 0;
}

// ---- groupstats -----------------------------------------------------------

// Relative directory -> score directory, for every r.vem below root.
std::map<std::string, fs::path> find_scores(const fs::path& root) {
  if (!fs::is_directory(root)) throw ArgumentError("not a directory: " + root.string());
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().filename() == "r.vem") {
      const auto dir = entry.path().parent_path();
      out[fs::relative(dir, root).generic_string()] = dir;
    }
  }
  if (out.empty()) throw ArgumentError("no r.vem found under " + root.string());
  return out;
}

struct GroupArgs {
  std::string a;
  std::string b;
  std::string out;
  double alpha = 0.05;
  bool fisher_z = false;
  std::string config;
};

int run_groupstats(const GroupArgs& g) {
  stats::CompareOptions opts;
  if (!g.config.empty()) opts = pipeline::validate_config(g.config).compare;
  if (g.alpha != 0.05 || g.config.empty()) opts.alpha = g.alpha;
  if (g.fisher_z) opts.fisher_z = true;

  const auto sa = find_scores(g.a);
  const auto sb = find_scores(g.b);
  std::vector<std::vector<double>> maps_a;
  std::vector<std::vector<double>> maps_b;
  json subjects = json::array();
  json digests = json::array();
  for (const auto& [rel, dir] : sa) {
    const auto it = sb.find(rel);
    if (it == sb.end()) {
      throw ArgumentError("groupstats: subject '" + rel + "' has no counterpart under " + g.b);
    }
    maps_a.push_back(io::read_vector(dir / "r.vem"));
    maps_b.push_back(io::read_vector(it->second / "r.vem"));
    subjects.push_back(rel);
    digests.push_back({file_digest(dir / "r.vem"), file_digest(it->second / "r.vem")});
  }
  if (sb.size() != sa.size()) {
    throw ArgumentError("groupstats: " + g.a + " and " + g.b + " hold different subject sets");
  }
  const auto res = stats::compare_models(maps_a, maps_b, opts);

  fs::create_directories(g.out);
  const fs::path out(g.out);
  std::vector<double> direction(res.direction.begin(), res.direction.end());
  io::write_matrix(row_vector(res.t), out / "t.vem");
  io::write_matrix(row_vector(res.p), out / "p.vem");
  io::write_matrix(row_vector(res.q), out / "q.vem");
  io::write_matrix(row_vector(bool_values(res.reject)), out / "reject.vem");
  io::write_matrix(row_vector(direction), out / "direction.vem");
  std::size_t rejected = std::count(res.reject.begin(), res.reject.end(), true);
  std::size_t a_greater = 0;
  std::size_t b_greater = 0;
  for (std::size_t v = 0; v < res.reject.size(); ++v) {
    if (!res.reject[v]) continue;
    if (res.direction[v] > 0) ++a_greater;
    if (res.direction[v] < 0) ++b_greater;
  }
  const json canonical = {{"inputs", digests},
                          {"alpha", opts.alpha},
                          {"fisher_z", opts.fisher_z}};
  pipeline::write_json_file({{"subjects", subjects},
                             {"n_voxels", res.t.size()},
                             {"df", res.df},
                             {"alpha", opts.alpha},
                             {"fisher_z", opts.fisher_z},
                             {"sidedness", "two-sided"},
                             {"n_rejected", rejected},
                             {"n_a_greater", a_greater},
                             {"n_b_greater", b_greater},
                             {"degenerate_voxels", res.degenerate_voxels},
                             {"provenance", pipeline::provenance("groupstats", canonical)}},
                            out / "groupstats.json");
  std::cout << "groupstats: " << maps_a.size() << " subjects, " << rejected
            << " voxel(s) rejected at q <= " << opts.alpha << " -> " << g.out << "\n";
  return 0;
}

// ---- report ---------------------------------------------------------------

struct ReportArgs {
  std::string score;
  std::string atlas;
  std::string groupstats;
  std::string out;
};

int run_report(const ReportArgs& r) {
  const auto atlas = io::load_atlas(r.atlas);
  const auto scores = find_scores(r.score);
  std::ostringstream csv;
  csv << "subject,network,n_voxels,n_scored,mean_r,std_r\n";
  json subjects = json::object();
  json digests = json::array();
  for (const auto& [rel, dir] : scores) {
    const auto rv = io::read_vector(dir / "r.vem");
    std::vector<bool> excluded(rv.size(), false);
    if (fs::exists(dir / "excluded.vem")) excluded = read_mask(dir / "excluded.vem");
    const auto roi = stats::summarize_roi(rv, excluded, atlas);
    const std::string name = rel == "." ? "all" : rel;
    for (const auto& n : roi.networks) {
      csv << name << "," << n.name << "," << n.n_voxels << "," << n.n_scored << ","
          << (n.mean ? pipeline::format_double(*n.mean) : "nan") << ","
          << (n.std ? pipeline::format_double(*n.std) : "nan") << "\n";
    }
    subjects[name] = roi_json(roi);
    digests.push_back(file_digest(dir / "r.vem"));
  }
  json j = {{"subjects", subjects}};
  json canonical = {{"scores", digests}, {"atlas", file_digest(r.atlas)}};
  if (!r.groupstats.empty()) {
    const fs::path gdir(r.groupstats);
    const auto reject = read_mask(gdir / "reject.vem");
    const auto direction = io::read_vector(gdir / "direction.vem");
    atlas.validate(reject.size());
    json nets = json::array();
    for (const auto& [code, name] : atlas.names) {
      std::size_t n = 0, rej = 0, ag = 0, bg = 0;
      for (std::size_t v = 0; v < reject.size(); ++v) {
        if (atlas.labels[v] != code) continue;
        ++n;
        if (!reject[v]) continue;
        ++rej;
        if (direction[v] > 0) ++ag;
        if (direction[v] < 0) ++bg;
      }
      nets.push_back({{"network", name},
                      {"n_voxels", n},
                      {"n_rejected", rej},
                      {"n_a_greater", ag},
                      {"n_b_greater", bg}});
    }
    j["groupstats"] = nets;
    canonical["groupstats"] = file_digest(gdir / "reject.vem");
  }
  j["provenance"] = pipeline::provenance("report", canonical);
  const fs::path out(r.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  {
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw IoError("cannot write " + out.string());
    f << csv.str();
  }
  fs::path side = out;
  side.replace_extension(".json");
  pipeline::write_json_file(j, side);
  std::cout << "report: " << scores.size() << " score set(s) -> " << r.out << "\n";
  return 0;
}

// ---- toydata / toytune / embed -------------------------------------------

struct ModelDims {
  lm::ModelConfig cfg;
  void add(CLI::App* app) {
    app->add_option("--layers", cfg.n_layers, "Transformer layers")->capture_default_str();
    app->add_option("--d-model", cfg.d_model, "Hidden width")->capture_default_str();
    app->add_option("--heads", cfg.n_heads, "Attention heads")->capture_default_str();
    app->add_option("--vocab", cfg.vocab, "Vocabulary size")->capture_default_str();
    app->add_option("--context", cfg.context, "Context length")->capture_default_str();
    app->add_option("--d-ff", cfg.d_ff, "MLP width")->capture_default_str();
  }
};

struct ToyDataArgs {
  ModelDims dims;
  std::size_t grammar_tokens = 400;
  std::size_t examples = 200;
  std::size_t labels = 4;
  std::size_t sentences = 40;
  std::uint64_t seed = 0;
  std::string task_out;
  std::string sentences_out;
};

int run_toydata(const ToyDataArgs& a) {
  a.dims.cfg.validate();
  const lm::MarkovGrammar grammar(a.grammar_tokens, synth::derive_seed(a.seed, "toydata", "grammar"));
  lm::TopicTaskSpec spec;
  spec.n_examples = a.examples;
  spec.n_labels = a.labels;
  spec.seed = synth::derive_seed(a.seed, "toydata", "task");
  lm::save_task(lm::make_topic_task(a.dims.cfg, grammar, spec), a.task_out);
  if (!a.sentences_out.empty()) {
    const auto sentences = lm::make_sentences(grammar, a.sentences, 5, 10,
                                              synth::derive_seed(a.seed, "toydata", "sentences"));
    lm::save_sentences(lm::schedule_sentences(sentences, 2.0, 4.0, 0.5, 1.5,
                                              synth::derive_seed(a.seed, "toydata", "schedule")),
                       a.sentences_out);
  }
  std::cout << "toydata: " << a.examples << " examples -> " << a.task_out << "\n";
  return 0;
}

struct ToyTuneArgs {
  ModelDims dims;
  std::string mode;
  std::optional<double> proportion;
  std::optional<std::size_t> prefix_len;
  std::string task;
  std::string base;
  std::uint64_t seed = 0;
  std::uint64_t model_seed = 0;
  std::size_t steps = 100;
  double lr = 0.05;
  std::size_t batch = 16;
  std::string optimizer = "sgd";
  std::string out;
};

int run_toytune(const ToyTuneArgs& a) {
  lm::TuneConfig tc;
  tc.mode = lm::parse_tune_mode(a.mode);
  if (tc.mode == lm::TuneMode::Partial) {
    if (!a.proportion) throw ArgumentError("toytune: --mode partial needs --proportion");
    tc.proportion = a.proportion;
  } else if (a.proportion) {
    throw ArgumentError("toytune: --proportion only applies to --mode partial");
  }
  if (tc.mode == lm::TuneMode::Prefix) {
    tc.prefix_len = a.prefix_len.value_or(8);
  } else if (a.prefix_len) {
    throw ArgumentError("toytune: --prefix-len only applies to --mode prefix");
  }
  tc.seed = a.seed;
  tc.steps = a.steps;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch;
  tc.optimizer = lm::parse_optimizer(a.optimizer);
  tc.workers = workers();
  tc.validate();

  lm::ToyLmParams base;
  json base_source;
  if (!a.base.empty()) {
    base = lm::load_model(a.base).params;
    base_source = file_digest(a.base);
  } else {
    base = lm::ToyLmParams::random(a.dims.cfg, a.model_seed);
    base_source = {{"init_seed", a.model_seed}};
  }
  const auto task = lm::load_task(a.task);
  auto tuned = lm::tune(base, task, tc);

  const json canonical = {{"base", base_source},
                          {"task", file_digest(a.task)},
                          {"mode", lm::to_string(tc.mode)},
                          {"proportion", tc.proportion ? json(*tc.proportion) : json(nullptr)},
                          {"prefix_len", tc.prefix_len ? json(*tc.prefix_len) : json(nullptr)},
                          {"optimizer", lm::to_string(tc.optimizer)},
                          {"learning_rate", tc.learning_rate},
                          {"steps", tc.steps},
                          {"batch_size", tc.batch_size}};
  const json meta = {
      {"mode", lm::to_string(tc.mode)},
      {"proportion", tc.proportion ? json(*tc.proportion) : json(nullptr)},
      {"prefix_len", tc.prefix_len ? json(*tc.prefix_len) : json(nullptr)},
      {"trainable_parameters", tuned.mask.parameter_count(base)},
      {"loss_first", tuned.loss_history.empty() ? json(nullptr) : json(tuned.loss_history.front())},
      {"loss_last", tuned.loss_history.empty() ? json(nullptr) : json(tuned.loss_history.back())},
      {"loss_history", tuned.loss_history},
      {"provenance", pipeline::provenance("toytune", canonical,
                                          {{"seed", a.seed}, {"model_seed", a.model_seed}})}};
  lm::ModelFile file{tuned.params, tuned.prefix, meta.dump()};
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  lm::save_model(file, a.out);
  std::cout << "toytune: " << lm::to_string(tc.mode) << ", " << tc.steps << " steps, loss "
            << (tuned.loss_history.empty() ? 0.0 : tuned.loss_history.front()) << " -> "
            << (tuned.loss_history.empty() ? 0.0 : tuned.loss_history.back()) << " -> " << a.out
            << "\n";
  return 0;
}

struct EmbedArgs {
  std::string model;
  std::string sentences;
  std::string out;
  bool no_prefix = false;
};

int run_embed(const EmbedArgs& a) {
  const auto model = lm::load_model(a.model);
  const auto manifest = lm::load_sentences(a.sentences);
  const lm::PrefixBank* prefix = (model.prefix && !a.no_prefix) ? &*model.prefix : nullptr;
  const auto track = lm::embed_sentences(model.params, prefix, manifest, workers());
  fs::path out(a.out);
  if (out.extension() != ".json") out.replace_extension(".json");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  io::save_stimulus_track(track, out);
  fs::path side = out;
  side.replace_extension(".provenance.json");
  const json canonical = {{"model", file_digest(a.model)},
                          {"sentences", file_digest(a.sentences)},
                          {"prefix", prefix != nullptr}};
  pipeline::write_json_file({{"events", track.events.size()},
                             {"dim", track.dim},
                             {"provenance", pipeline::provenance("embed", canonical)}},
                            side);
  std::cout << "embed: " << track.events.size() << " sentences x " << track.dim << " -> "
            << out.string() << "\n";
  return 0;
}

// ---- sweep / validate -----------------------------------------------------

struct SweepArgs {
  std::string config;
  std::optional<double> tr_s;
  std::vector<double> proportions;
  bool proportions_given = false;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_sweep_verb(SweepArgs& a, CLI::App* app) {
  pipeline::PipelineConfig cfg;
  if (!a.config.empty()) cfg = pipeline::validate_config(a.config);
  if (a.tr_s) cfg.tr_s = *a.tr_s;
  if (!(cfg.tr_s > 0.0)) throw ArgumentError("sweep: tr_s is required (--tr or config)");
  if (app->count("--proportions") > 0) cfg.sweep.proportions = a.proportions;
  if (a.seed) cfg.sweep.seed = *a.seed;
  cfg.workers = g_threads;
  const fs::path out = a.out.empty() ? cfg.output_dir : fs::path(a.out);
  const auto report = pipeline::run_sweep(cfg, out);
  std::cout << pipeline::sweep_csv(report);
  return 0;
}

int run_validate(const std::string& config) {
  const auto cfg = pipeline::validate_config(config);
  std::cout << pipeline::to_json(cfg).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxelenc: voxel-wise fMRI encoding toolkit"};
  app.set_version_flag("--version", std::string("voxelenc ") + VOXELENC_VERSION);
  app.require_subcommand(1);
  app.add_option("--threads", g_threads, "Worker threads (default: VOXELENC_THREADS or all cores)");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-subject dataset");
  synth->add_option("--spec", synth_args.spec, "SynthSpec JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_args.out, "Output directory")->required();
  synth->add_option("--seed", synth_args.seed, "Override the spec seed");

  ConvolveArgs conv_args;
  auto* conv = app.add_subcommand("convolve", "Convolve a stimulus track into a design matrix");
  add_config_flag(conv, conv_args.common);
  add_tr_flag(conv, conv_args.common);
  conv->add_option("--track", conv_args.track, "StimulusTrack JSON")->required()->check(CLI::ExistingFile);
  conv->add_option("--n-trs", conv_args.n_trs, "Number of TRs")->required();
  conv->add_option("--out", conv_args.out, "Design matrix output (.vem)")->required();
  conv->add_flag("--impulse", conv_args.impulse, "Unit-area impulses at onsets instead of boxcars");
  conv->add_flag("--no-zscore", conv_args.common.no_zscore, "Keep raw convolved columns");

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Fit ridge (or lasso) encoding weights");
  add_config_flag(fit, fit_args.common);
  add_ridge_flags(fit, fit_args.common);
  fit->add_option("--design", fit_args.design, "Design matrix (.vem)")->required()->check(CLI::ExistingFile);
  fit->add_option("--bold", fit_args.bold, "BOLD matrix (.vem)")->required()->check(CLI::ExistingFile);
  fit->add_option("--out", fit_args.out, "Output directory")->required();

  ScoreArgs score_args;
  auto* score = app.add_subcommand("score", "Cross-validated voxel-wise Pearson scores");
  add_config_flag(score, score_args.common);
  add_tr_flag(score, score_args.common);
  add_ridge_flags(score, score_args.common);
  score->add_option("--design", score_args.design, "Design matrix (.vem)")->check(CLI::ExistingFile);
  score->add_option("--track", score_args.track, "StimulusTrack JSON, convolved on the BOLD grid")
      ->check(CLI::ExistingFile);
  score->add_option("--bold", score_args.bold, "BOLD matrix (.vem)")->required()->check(CLI::ExistingFile);
  score->add_option("--runs", score_args.runs, "Run id per TR (.vem), for --scheme by-run")
      ->check(CLI::ExistingFile);
  score->add_option("--atlas", score_args.atlas, "ROI atlas (.vem)")->check(CLI::ExistingFile);
  score->add_option("--folds", score_args.folds, "Number of folds (default 5)");
  score->add_option("--scheme", score_args.scheme, "contiguous (default) or by-run");
  score->add_option("--seed", score_args.seed, "Fold seed");
  score->add_flag("--keep-predictions", score_args.keep_predictions, "Write out-of-fold predictions");
  score->add_flag("--no-zscore", score_args.common.no_zscore, "Keep raw convolved columns");
  score->add_option("--out", score_args.out, "Output directory")->required();

  GroupArgs group_args;
  auto* group = app.add_subcommand("groupstats", "Paired t-test of two score sets with BH-FDR");
  group->add_option("--a", group_args.a, "Score directory of model A")->required();
  group->add_option("--b", group_args.b, "Score directory of model B")->required();
  group->add_option("--alpha", group_args.alpha, "FDR level")->capture_default_str();
  group->add_flag("--fisher-z", group_args.fisher_z, "Test on atanh(r)");
  group->add_option("--config", group_args.config, "Pipeline config JSON")->check(CLI::ExistingFile);
  group->add_option("--out", group_args.out, "Output directory")->required();

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "ROI summary CSV of score outputs");
  report->add_option("--score", report_args.score, "Score directory")->required();
  report->add_option("--atlas", report_args.atlas, "ROI atlas (.vem)")->required()->check(CLI::ExistingFile);
  report->add_option("--groupstats", report_args.groupstats, "groupstats output directory");
  report->add_option("--out", report_args.out, "CSV output")->required();

  ToyDataArgs toydata_args;
  auto* toydata = app.add_subcommand("toydata", "Write a toy classification task and sentences");
  toydata_args.dims.add(toydata);
  toydata->add_option("--grammar-tokens", toydata_args.grammar_tokens, "Markov grammar size")
      ->capture_default_str();
  toydata->add_option("--examples", toydata_args.examples, "Task examples")->capture_default_str();
  toydata->add_option("--labels", toydata_args.labels, "Label tokens")->capture_default_str();
  toydata->add_option("--sentences", toydata_args.sentences, "Stimulus sentences")
      ->capture_default_str();
  toydata->add_option("--seed", toydata_args.seed, "Seed")->capture_default_str();
  toydata->add_option("--task-out", toydata_args.task_out, "Task JSON output")->required();
  toydata->add_option("--sentences-out", toydata_args.sentences_out, "Sentence manifest output");

  ToyTuneArgs tune_args;
  auto* toytune = app.add_subcommand("toytune", "Tune the toy transformer on a task");
  tune_args.dims.add(toytune);
  toytune->add_option("--mode", tune_args.mode, "full | partial | prefix")->required();
  toytune->add_option("--proportion", tune_args.proportion, "Layer proportion for partial");
  toytune->add_option("--prefix-len", tune_args.prefix_len, "Prefix length (default 8)");
  toytune->add_option("--task", tune_args.task, "Task JSON")->required()->check(CLI::ExistingFile);
  toytune->add_option("--base", tune_args.base, "Pretrained model (.vem)")->check(CLI::ExistingFile);
  toytune->add_option("--model-seed", tune_args.model_seed, "Init seed without --base")
      ->capture_default_str();
  toytune->add_option("--seed", tune_args.seed, "Tuning seed")->capture_default_str();
  toytune->add_option("--steps", tune_args.steps, "Optimizer steps")->capture_default_str();
  toytune->add_option("--lr", tune_args.lr, "Learning rate")->capture_default_str();
  toytune->add_option("--batch", tune_args.batch, "Batch size")->capture_default_str();
  toytune->add_option("--optimizer", tune_args.optimizer, "sgd | adam")->capture_default_str();
  toytune->add_option("--out", tune_args.out, "Model output (.vem)")->required();

  EmbedArgs embed_args;
  auto* embed = app.add_subcommand("embed", "Mean-pooled sentence embeddings as a StimulusTrack");
  embed->add_option("--model", embed_args.model, "Model (.vem)")->required()->check(CLI::ExistingFile);
  embed->add_option("--sentences", embed_args.sentences, "Sentence manifest JSON")
      ->required()
      ->check(CLI::ExistingFile);
  embed->add_option("--out", embed_args.out, "Track output (.json, plus sibling .vem)")->required();
  embed->add_flag("--no-prefix", embed_args.no_prefix, "Ignore a stored prefix bank");

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "Tuned-proportion sweep on the synthetic fixture");
  sweep->add_option("--config", sweep_args.config, "Pipeline config JSON")->check(CLI::ExistingFile);
  sweep->add_option("--tr", sweep_args.tr_s, "Repetition time in seconds");
  sweep->add_option("--proportions", sweep_args.proportions, "Comma-separated proportions")
      ->delimiter(',')
      ->expected(0, -1);
  sweep->add_option("--seed", sweep_args.seed, "Sweep seed");
  sweep->add_option("--out", sweep_args.out, "Output directory");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a pipeline config and print it with defaults");
  validate->add_option("--config", validate_path, "Pipeline config JSON")->required();

  try {
    app.parse(argc, argv);
    // The environment variable wins over the flag.
    if (std::getenv("VOXELENC_THREADS") != nullptr) g_threads = 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*synth) return run_synth(synth_args);
    if (*conv) return run_convolve(conv_args);
    if (*fit) return run_fit(fit_args);
    if (*score) return run_score(score_args);
    if (*group) return run_groupstats(group_args);
    if (*report) return run_report(report_args);
    if (*toydata) return run_toydata(toydata_args);
    if (*toytune) return run_toytune(tune_args);
    if (*embed) return run_embed(embed_args);
    if (*sweep) return run_sweep_verb(sweep_args, sweep);
    if (*validate) return run_validate(validate_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_validation() ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
