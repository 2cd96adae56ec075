#include "voxelenc/pipeline/sweep.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "voxelenc/cv.hpp"
#include "voxelenc/hrf.hpp"
#include "voxelenc/lm/serialize.hpp"
#include "voxelenc/lm/tune.hpp"
#include "voxelenc/pipeline/provenance.hpp"
#include "voxelenc/stats.hpp"

namespace voxelenc::pipeline {

namespace {

using nlohmann::json;

constexpr double kSentenceMinDuration = 2.0;
constexpr double kSentenceMaxDuration = 4.0;
constexpr double kSentenceMinGap = 0.5;
constexpr double kSentenceMaxGap = 1.5;

template <class Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.what(), e.is_validation());
  } catch (const std::exception& e) {
    throw StageError(name, e.what(), false);
  }
}

std::uint64_t sub_seed(std::uint64_t seed, const std::string& stream) {
  return synth::derive_seed(seed, "sweep", stream);
}

std::string proportion_label(const std::optional<double>& p) {
  return p ? format_double(*p) : "untuned";
}

struct SubjectNetworkMeans {
  // [network code] -> per-subject network mean r
  std::map<int, std::vector<double>> values;
};

std::vector<SweepRow> aggregate(const std::optional<double>& proportion,
                                const std::vector<stats::RoiSummary>& per_subject,
                                const io::RoiAtlas& atlas) {
  SubjectNetworkMeans means;
  for (const auto& summary : per_subject) {
    for (const auto& n : summary.networks) {
      if (n.mean) means.values[n.code].push_back(*n.mean);
    }
  }
  std::vector<SweepRow> rows;
  for (const auto& [code, name] : atlas.names) {
    SweepRow row;
    row.proportion = proportion;
    row.network = code;
    row.network_name = name;
    const auto it = means.values.find(code);
    if (it == means.values.end() || it->second.empty()) {
      row.mean_r = std::numeric_limits<double>::quiet_NaN();
      row.std_r = std::numeric_limits<double>::quiet_NaN();
      rows.push_back(row);
      continue;
    }
    const auto& v = it->second;
    row.n_subjects = v.size();
    double sum = 0.0;
    for (double x : v) sum += x;
    row.mean_r = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - row.mean_r) * (x - row.mean_r);
    row.std_r = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1))
                             : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(row);
  }
  return rows;
}

json report_json(const SweepReport& report, const json& prov) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"proportion", r.proportion ? json(*r.proportion) : json("untuned")},
                    {"network", r.network_name},
                    {"mean_r", std::isfinite(r.mean_r) ? json(r.mean_r) : json(nullptr)},
                    {"std_r", std::isfinite(r.std_r) ? json(r.std_r) : json(nullptr)},
                    {"n_subjects", r.n_subjects}});
  }
  json conditions = json::array();
  for (const auto& c : report.conditions) {
    conditions.push_back({{"proportion", c.proportion ? json(*c.proportion) : json("untuned")},
                          {"trainable_parameters", c.trainable_parameters},
                          {"task_loss_before", c.task_loss_before},
                          {"task_loss_after", c.task_loss_after}});
  }
  json rank = json::object();
  for (const auto& [name, value] : report.rank_correlation) {
    rank[name] = value ? json(*value) : json(nullptr);
  }
  return {{"provenance", prov},
          {"rows", rows},
          {"conditions", conditions},
          {"rank_correlation", rank}};
}

void write_outputs(const SweepReport& report, const json& prov,
                   const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "sweep.csv", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (out_dir / "sweep.csv").string());
    out << sweep_csv(report);
  }
  write_json_file(report_json(report, prov), out_dir / "sweep.json");
}

}  // namespace

DenseMatrix design_from_track(const io::StimulusTrack& track, const PipelineConfig& cfg,
                              std::size_t n_trs) {
  auto design = hrf::convolve_track(track, cfg.hrf, cfg.tr_s, n_trs).design;
  if (cfg.zscore_design) hrf::zscore_columns(design);
  return design;
}

SweepFixture build_sweep_fixture(const PipelineConfig& cfg) {
  const SweepSettings& sw = cfg.sweep;
  const std::size_t workers = resolve_workers(cfg.workers);
  SweepFixture fx;

  const lm::MarkovGrammar grammar(sw.grammar_tokens, sub_seed(sw.seed, "grammar"));
  stage("pretrain", [&] {
    const auto init = lm::ToyLmParams::random(sw.model, sub_seed(sw.seed, "init"));
    const auto corpus = lm::make_lm_corpus(grammar, sw.pretrain.corpus_size, sw.pretrain.min_len,
                                           sw.pretrain.max_len, sub_seed(sw.seed, "corpus"));
    lm::TuneConfig tc = lm::TuneConfig::full();
    tc.steps = sw.pretrain.steps;
    tc.learning_rate = sw.pretrain.learning_rate;
    tc.batch_size = sw.pretrain.batch_size;
    tc.seed = sub_seed(sw.seed, "pretrain");
    tc.workers = workers;
    fx.pretrain_initial_loss = lm::dataset_loss(init, nullptr, corpus, workers);
    fx.base = sw.pretrain.steps > 0 ? lm::tune(init, corpus, tc).params : init;
    fx.pretrain_final_loss = lm::dataset_loss(fx.base, nullptr, corpus, workers);
  });

  stage("task", [&] {
    lm::TopicTaskSpec spec = sw.task;
    spec.seed = synth::derive_seed(sw.seed, "task", std::to_string(sw.task.seed));
    fx.task = lm::make_topic_task(sw.model, grammar, spec);
  });

  stage("stimulus", [&] {
    const double total_s = static_cast<double>(sw.brain.n_trs) * cfg.tr_s;
    const auto n_max = static_cast<std::size_t>(
        std::ceil(total_s / (kSentenceMinDuration + kSentenceMinGap))) + 1;
    const auto sentences = lm::make_sentences(grammar, n_max, sw.sentence_min_len,
                                              sw.sentence_max_len, sub_seed(sw.seed, "sentences"));
    auto manifest = lm::schedule_sentences(sentences, kSentenceMinDuration, kSentenceMaxDuration,
                                           kSentenceMinGap, kSentenceMaxGap,
                                           sub_seed(sw.seed, "schedule"));
    while (!manifest.sentences.empty() &&
           manifest.sentences.back().onset_s + manifest.sentences.back().duration_s > total_s) {
      manifest.sentences.pop_back();
    }
    fx.stimuli = std::move(manifest);
  });

  stage("brain", [&] {
    const auto track = lm::embed_sentences(fx.base, nullptr, fx.stimuli, workers);
    const auto design = design_from_track(track, cfg, sw.brain.n_trs);
    synth::SynthSpec spec;
    spec.n_subjects = sw.brain.n_subjects;
    spec.n_voxels = sw.brain.n_voxels;
    spec.n_trs = sw.brain.n_trs;
    spec.tr_s = cfg.tr_s;
    spec.dim = sw.model.d_model;
    spec.noise = sw.brain.noise;
    spec.rho = sw.brain.rho;
    spec.seed = sub_seed(sw.seed, "brain");
    spec.hrf = cfg.hrf;
    spec.validate();
    fx.atlas = synth::make_atlas(spec.n_voxels);
    fx.voxel_snr.resize(spec.n_voxels);
    for (std::size_t v = 0; v < spec.n_voxels; ++v) {
      fx.voxel_snr[v] = fx.atlas.labels[v] == 0 ? sw.brain.planted_snr : sw.brain.background_snr;
    }
    for (std::size_t s = 0; s < spec.n_subjects; ++s) {
      fx.subjects.push_back(synth::generate_subject_from_design(spec, design, s, fx.voxel_snr));
    }
  });
  return fx;
}

std::string sweep_csv(const SweepReport& report) {
  std::ostringstream out;
  out << "proportion,network,mean_r,std_r\n";
  for (const auto& r : report.rows) {
    out << proportion_label(r.proportion) << "," << r.network_name << ","
        << format_double(r.mean_r) << "," << format_double(r.std_r) << "\n";
  }
  return out.str();
}

SweepReport run_sweep(const PipelineConfig& cfg, const std::filesystem::path& out_dir) {
  const SweepSettings& sw = cfg.sweep;
  for (double p : sw.proportions) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ArgumentError("run_sweep: proportion " + format_double(p) + " outside [0, 1]");
    }
  }
  const std::size_t workers = resolve_workers(cfg.workers);
  const json prov = provenance("sweep", to_json(cfg), {{"sweep_seed", sw.seed},
                                                        {"fold_seed", cfg.fold_seed}});

  const SweepFixture fx = build_sweep_fixture(cfg);
  const auto plan = stage("folds", [&] {
    return cv::make_folds(sw.brain.n_trs, cfg.n_folds, cfg.fold_scheme, cfg.fold_seed);
  });

  SweepReport report;
  std::vector<std::optional<double>> conditions = {std::nullopt};
  for (double p : sw.proportions) conditions.emplace_back(p);

  for (const auto& proportion : conditions) {
    const std::string name = "condition " + proportion_label(proportion);
    SweepCondition cond;
    cond.proportion = proportion;
    lm::ToyLmParams model = fx.base;
    stage(name + " / tune", [&] {
      cond.task_loss_before = lm::dataset_loss(fx.base, nullptr, fx.task, workers);
      cond.task_loss_after = cond.task_loss_before;
      if (!proportion) return;
      lm::TuneConfig tc = lm::TuneConfig::partial(*proportion);
      tc.steps = sw.tune.steps;
      tc.learning_rate = sw.tune.learning_rate;
      tc.batch_size = sw.tune.batch_size;
      tc.seed = sub_seed(sw.seed, "tune");
      tc.workers = workers;
      auto tuned = lm::tune(fx.base, fx.task, tc);
      cond.trainable_parameters = tuned.mask.parameter_count(fx.base);
      model = std::move(tuned.params);
      cond.task_loss_after = lm::dataset_loss(model, nullptr, fx.task, workers);
    });

    const auto design = stage(name + " / embed", [&] {
      const auto track = lm::embed_sentences(model, nullptr, fx.stimuli, workers);
      return design_from_track(track, cfg, sw.brain.n_trs);
    });

    const auto summaries = stage(name + " / score", [&] {
      std::vector<stats::RoiSummary> out;
      cv::CvOptions opts;
      opts.workers = workers;
      for (const auto& subject : fx.subjects) {
        const auto cvr = cv::cross_validate(design, subject.bold.signal, plan, cfg.ridge, opts);
        out.push_back(stats::summarize_roi(cvr, fx.atlas));
      }
      return out;
    });

    const auto rows = aggregate(proportion, summaries, fx.atlas);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    report.conditions.push_back(cond);
    write_outputs(report, prov, out_dir);
  }

  for (const auto& [code, network] : fx.atlas.names) {
    std::vector<double> ps;
    std::vector<double> rs;
    for (const auto& r : report.rows) {
      if (r.proportion && r.network == code && std::isfinite(r.mean_r)) {
        ps.push_back(*r.proportion);
        rs.push_back(r.mean_r);
      }
    }
    std::optional<double> rho;
    if (ps.size() >= 3) rho = stats::spearman(ps, rs);
    report.rank_correlation[network] = rho;
  }
  write_outputs(report, prov, out_dir);
  return report;
}

}  // namespace voxelenc::pipeline
