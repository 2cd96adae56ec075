// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support/group_effect.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"
#include "voxelenc/cv.hpp"
#include "voxelenc/hrf.hpp"
#include "voxelenc/lm/tasks.hpp"
#include "voxelenc/lm/tune.hpp"
#include "voxelenc/ridge.hpp"
#include "voxelenc/stats.hpp"
#include "voxelenc/synth.hpp"

namespace fs = std::filesystem;
using namespace voxelenc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int sh(const std::string& args, const fs::path& stdout_path = "/dev/null") {
  const std::string cmd = "'" VOXELENC_CLI_PATH "' " + args + " > '" + stdout_path.string() +
                          "' 2>> '" + (fs::temp_directory_path() / "voxelenc-acceptance.log").string() + "'";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Relative path -> bytes for every regular file under root.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return out;
}

// ---- 1 -------------------------------------------------------------------

Outcome ridge_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> ne(12, 50), nd(1, 10), nv(1, 8);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = nd(rng);
    const std::size_t n = std::max<std::size_t>(ne(rng), d + 2);
    const auto z = oracle::random_matrix(n, d, rng);
    const auto x = oracle::random_matrix(n, nv(rng), rng, 3.0);
    ridge::RidgeConfig cfg;
    cfg.lambdas = {0.0, 0.1, 1.0, 10.0, 1000.0};
    const auto path = ridge::fit_ridge_path(z, x, cfg);
    for (std::size_t l = 0; l < cfg.lambdas.size(); ++l) {
      const auto ref = oracle::ridge_normal_equations(z, x, cfg.lambdas[l], true, true);
      const auto& w = path.weights[l];
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t v = 0; v < x.cols(); ++v)
          worst = std::max(worst, std::abs(w.weights(j, v) - ref.w(j, v)));
      for (std::size_t v = 0; v < x.cols(); ++v)
        worst = std::max(worst, std::abs(w.intercepts[v] - ref.b(v)));
    }
  }
  return {worst < 1e-8, "50 instances, max abs error " + fmt("%.2e", worst)};
}

// ---- 2 -------------------------------------------------------------------

double lasso_objective(const DenseMatrix& z, const std::vector<double>& x,
                       const std::vector<double>& w, double lambda) {
  double rss = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double r = x[i];
    for (std::size_t j = 0; j < z.cols(); ++j) r -= z(i, j) * w[j];
    rss += r * r;
  }
  for (double v : w) l1 += std::abs(v);
  return 0.5 * rss + lambda * l1;
}

Outcome lasso_optimality() {
  std::mt19937_64 rng(55);
  std::uniform_int_distribution<int> ne(10, 40), nd(1, 8);
  std::uniform_real_distribution<double> lam(0.01, 5.0);
  double worst_kkt = 0.0;
  bool objective_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = ne(rng), d = nd(rng);
    const auto z = oracle::random_matrix(n, d, rng);
    const auto x = oracle::random_matrix(n, 2, rng, 2.0);
    const double lambda = lam(rng);
    const auto fit = ridge::fit_lasso(z, x, lambda, {1e-12, 100000});
    const auto l2 = oracle::ridge_normal_equations(z, x, lambda, false, false);
    for (std::size_t v = 0; v < 2; ++v) {
      std::vector<double> w(d), wr(d), target = x.column(v);
      for (std::size_t j = 0; j < d; ++j) w[j] = fit.weights(j, v), wr[j] = l2.w(j, v);
      for (std::size_t j = 0; j < d; ++j) {
        double g = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          double r = target[i];
          for (std::size_t k = 0; k < d; ++k) r -= z(i, k) * w[k];
          g += z(i, j) * r;
        }
        const double viol = w[j] != 0.0 ? std::abs(g - lambda * (w[j] > 0 ? 1.0 : -1.0))
                                        : std::max(0.0, std::abs(g) - lambda);
        worst_kkt = std::max(worst_kkt, viol);
      }
      const double obj = lasso_objective(z, target, w, lambda);
      objective_ok &= obj <= lasso_objective(z, target, std::vector<double>(d, 0.0), lambda) + 1e-12;
      objective_ok &= obj <= lasso_objective(z, target, wr, lambda) + 1e-12;
    }
  }
  return {worst_kkt < 1e-6 && objective_ok,
          "20 instances, max subgradient violation " + fmt("%.2e", worst_kkt) +
              (objective_ok ? ", objective below W=0 and L2" : ", objective check failed")};
}

// ---- 3 -------------------------------------------------------------------

Outcome hrf_shape() {
  const hrf::HrfParams p;
  double peak_t = 0.0, peak = -1.0, min_t = 0.0, min_v = 1.0;
  for (int i = 0; i <= 32000; ++i) {
    const double t = i * 1e-3;
    const double v = hrf::sample_hrf(p, t);
    if (v > peak) peak = v, peak_t = t;
    if (v < min_v) min_v = v, min_t = t;
  }
  const bool ok = peak_t >= 4.5 && peak_t <= 5.5 && min_v < 0.0 && min_t >= 10.0 && min_t <= 20.0;
  return {ok, "peak at " + fmt("%.3f", peak_t) + " s, undershoot minimum " + fmt("%.3g", min_v) +
                  " at " + fmt("%.3f", min_t) + " s"};
}

// ---- 4 -------------------------------------------------------------------

io::StimulusTrack random_track(std::mt19937_64& rng, std::size_t n_events, double span_s) {
  std::uniform_real_distribution<double> onset(0.0, span_s), dur(0.0, 3.0);
  std::uniform_int_distribution<int> q(-16, 16);
  std::vector<double> onsets(n_events);
  for (double& o : onsets) o = onset(rng);
  std::sort(onsets.begin(), onsets.end());
  io::StimulusTrack t;
  t.dim = 2;
  for (double o : onsets) {
    t.events.push_back({o, dur(rng), {static_cast<float>(q(rng)) / 8.0F, static_cast<float>(q(rng)) / 8.0F}});
  }
  return t;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

Outcome convolution_oracle() {
  const hrf::HrfParams p;
  io::StimulusTrack fixture;
  fixture.dim = 2;
  fixture.events = {{1.0, 2.0, {1.0F, -0.5F}}, {4.5, 0.5, {2.0F, 1.0F}}, {9.25, 1.25, {-1.0F, 3.0F}}};
  const double fixture_err =
      max_abs_diff(hrf::convolve_track(fixture, p, 2.0, 30).design, oracle::convolve(fixture, p, 2.0, 30));

  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> q(-16, 16), shift(1, 5);
  double lin_err = 0.0, shift_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_track(rng, 5, 40.0);
    auto b = a;
    for (auto& e : b.events)
      for (auto& v : e.vector) v = static_cast<float>(q(rng)) / 8.0F;
    const double alpha = q(rng) / 4.0, beta = q(rng) / 4.0;
    auto mix = a;
    for (std::size_t i = 0; i < mix.events.size(); ++i)
      for (std::size_t d = 0; d < 2; ++d)
        mix.events[i].vector[d] =
            static_cast<float>(alpha * a.events[i].vector[d] + beta * b.events[i].vector[d]);
    const auto ya = hrf::convolve_track(a, p, 2.0, 40).design;
    const auto yb = hrf::convolve_track(b, p, 2.0, 40).design;
    const auto ym = hrf::convolve_track(mix, p, 2.0, 40).design;
    for (std::size_t i = 0; i < ym.size(); ++i)
      lin_err = std::max(lin_err, std::abs(ym.data()[i] - alpha * ya.data()[i] - beta * yb.data()[i]));

    const int m = shift(rng);
    auto s = a;
    for (auto& e : s.events) e.onset_s += m * 2.0;
    const auto ys = hrf::convolve_track(s, p, 2.0, 40).design;
    for (std::size_t k = 0; k < 40; ++k)
      for (std::size_t d = 0; d < 2; ++d) {
        const double expect = k >= static_cast<std::size_t>(m) ? ya(k - m, d) : 0.0;
        shift_err = std::max(shift_err, std::abs(ys(k, d) - expect));
      }
  }
  const bool ok = fixture_err < 1e-9 && lin_err < 1e-9 && shift_err < 1e-9;
  return {ok, "fixture " + fmt("%.2e", fixture_err) + ", linearity " + fmt("%.2e", lin_err) +
                  ", shift " + fmt("%.2e", shift_err) + " over 100 tracks"};
}

// ---- 5 -------------------------------------------------------------------

Outcome cv_recovery() {
  double min_clean = 1.0, noise_sum = 0.0;
  std::size_t noise_n = 0, scored = 0;
  for (double snr : {std::numeric_limits<double>::infinity(), 0.0}) {
    synth::SynthSpec spec;
    spec.n_subjects = 12;
    spec.n_voxels = 2000;
    spec.n_trs = 600;
    spec.dim = 32;
    spec.snr = {snr};
    spec.seed = 5;
    const auto data = synth::generate(spec);
    const auto plan = cv::make_folds(spec.n_trs, 5, cv::FoldScheme::ContiguousBlocks, 0);
    for (const auto& s : data.subjects) {
      const auto rep = cv::cross_validate(data.stimulus.design, s.bold.signal, plan, {});
      for (std::size_t v = 0; v < rep.r.size(); ++v) {
        if (rep.excluded[v]) continue;
        if (std::isinf(snr)) {
          min_clean = std::min(min_clean, rep.r[v]);
          ++scored;
        } else {
          noise_sum += rep.r[v];
          ++noise_n;
        }
      }
    }
  }
  const double noise_mean = noise_sum / static_cast<double>(noise_n);
  const bool ok = scored > 0 && min_clean >= 0.999 && noise_mean >= -0.05 && noise_mean <= 0.05;
  return {ok, "noise-free min r " + fmt("%.6f", min_clean) + " over " + std::to_string(scored) +
                  " voxels, pure-noise mean r " + fmt("%.4f", noise_mean)};
}

// ---- 6 -------------------------------------------------------------------

Outcome statistics() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> m_dist(1, 12);
  std::uniform_real_distribution<double> u(0.0, 1.0), small(0.0, 0.02);
  int bh_mismatch = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(m_dist(rng));
    for (double& x : p) x = trial % 2 == 0 ? u(rng) : (u(rng) < 0.5 ? small(rng) : u(rng));
    if (trial % 7 == 0 && p.size() > 1) p[1] = p[0];
    const double alpha = trial % 3 == 0 ? 0.05 : 0.2;
    if (stats::fdr_bh(p, alpha).reject != oracle::bh_reject(p, alpha)) ++bh_mismatch;
  }
  const std::vector<double> d = {1.2, 0.8, 1.1, 0.9, 1.0};
  const auto tt = stats::paired_ttest(d, std::vector<double>(5, 0.0));
  const bool t_ok = std::abs(tt.t - 14.142) / 14.142 < 1e-3 && std::abs(tt.p - 1.45e-4) / 1.45e-4 < 1e-3;
  const std::vector<double> a = {1, 2, 3}, b = {1, 2, 2};
  const auto r = stats::pearson(a, b);
  const bool r_ok = r && std::abs(*r - std::sqrt(3.0) / 2.0) < 1e-12;
  return {bh_mismatch == 0 && t_ok && r_ok,
          "BH mismatches " + std::to_string(bh_mismatch) + "/1000, t " + fmt("%.4f", tt.t) + " p " +
              fmt("%.4e", tt.p) + ", pearson error " +
              fmt("%.1e", r ? std::abs(*r - std::sqrt(3.0) / 2.0) : 1.0)};
}

// ---- 7 -------------------------------------------------------------------

Outcome group_effect() {
  const auto fixture = nlohmann::json::parse(slurp(fs::path(VOXELENC_FIXTURE_DIR) / "group_effect.json"));
  const auto setup = test::GroupEffectSetup::from_json(fixture);
  if (fixture.at("planted") != nlohmann::json(setup.planted())) return {false, "fixture planted set differs"};
  const auto o = test::run_group_effect(setup, setup.seed);
  const auto& mc = fixture.at("monte_carlo");
  return {o.jaccard >= 0.8 && o.directions_ok,
          "seed " + std::to_string(setup.seed) + ": Jaccard " + fmt("%.3f", o.jaccard) + ", " +
              std::to_string(o.rejected) + " rejected, direction " +
              (o.directions_ok ? "B > A" : "wrong") + " (baseline pass rate " +
              fmt("%.2f", mc.at("pass_rate").get<double>()) + " over " +
              std::to_string(mc.at("n_runs").get<int>()) + " runs)"};
}

// ---- 8 -------------------------------------------------------------------

Outcome tuning_math() {
  const lm::ModelConfig cfg;  // 4 layers
  const auto params = lm::ToyLmParams::random(cfg, 7);
  const lm::TokenSequence sample{{3, 17, 99, 4, 250}, {8, 400, 2}};
  double worst = 0.0;
  std::size_t frozen_grads = 0;
  for (const auto& tc : {lm::TuneConfig::full(), lm::TuneConfig::partial(0.5), lm::TuneConfig::prefix(8)}) {
    const auto rep = lm::grad_check(params, nullptr, tc, sample);
    worst = std::max(worst, rep.max_rel_error);
    frozen_grads += rep.frozen_with_gradient;
  }

  const lm::MarkovGrammar grammar(cfg.vocab, 11);
  const auto corpus = lm::make_lm_corpus(grammar, 64, 6, 12, 12);
  auto tc = lm::TuneConfig::prefix(8);
  tc.steps = 500;
  tc.batch_size = 4;
  const auto tuned = lm::tune(params, corpus, tc);
  bool frozen = tuned.params == params;

  bool counts = true;
  const std::size_t n = cfg.n_layers;
  for (double p : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const auto mask = lm::select_trainable(params, p);
    const auto top = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    std::size_t expect = params.tensor(params.output_index()).data.size();
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
      const auto& t = params.tensor(i);
      if (t.group >= 0 && static_cast<std::size_t>(t.group) < n && static_cast<std::size_t>(t.group) >= n - top)
        expect += t.data.size();
      if (t.group < 0 && p == 1.0) expect += t.data.size();
    }
    counts &= mask.parameter_count(params) == expect;
  }
  return {worst < 1e-4 && frozen_grads == 0 && frozen && counts,
          "max rel error " + fmt("%.2e", worst) + ", pretrained tensors " +
              (frozen ? "bit-identical" : "CHANGED") + " after 500 prefix steps, trainable counts " +
              (counts ? "match" : "differ")};
}

// ---- 9 -------------------------------------------------------------------

Outcome sweep_end_to_end(const test::TempDir& dir) {
  const auto a = dir / "sweep-a";
  const auto b = dir / "sweep-b";
  if (sh("sweep --tr 2 --out " + q(a)) != 0) return {false, "first sweep run failed"};
  if (sh("sweep --tr 2 --out " + q(b)) != 0) return {false, "second sweep run failed"};
  const auto csv = slurp(a / "sweep.csv");
  const bool same = csv == slurp(b / "sweep.csv") && slurp(a / "sweep.json") == slurp(b / "sweep.json");
  std::map<std::string, double> language;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() == 4 && f[1] == "language") language[f[0]] = std::stod(f[2]);
  }
  if (!language.count("1") || !language.count("0.25")) return {false, "sweep.csv lacks language rows"};
  const bool shape = language["1"] <= language["0.25"];
  return {same && shape, std::string(same ? "identical reruns" : "reruns DIFFER") +
                             ", language mean_r p=0.25 " + fmt("%.4f", language["0.25"]) +
                             ", p=1 " + fmt("%.4f", language["1"])};
}

// ---- 10 ------------------------------------------------------------------

Outcome determinism(const test::TempDir& dir) {
  const auto w = dir / "verbs";
  fs::create_directories(w);
  std::ofstream(w / "spec.json")
      << R"({"tr_s": 2.0, "n_subjects": 3, "n_voxels": 40, "n_trs": 120, "dim": 4, "snr": [1.0, 0.5, 0.0, 0.0], "seed": 7})";
  std::ofstream(w / "config.json") << R"({"tr_s": 2.0, "folds": {"n_folds": 3},
    "sweep": {"proportions": [0.5, 1.0], "grammar_tokens": 60,
      "model": {"n_layers": 2, "d_model": 8, "n_heads": 2, "vocab": 64, "context": 24, "d_ff": 16},
      "pretrain": {"corpus_size": 16, "steps": 3, "batch_size": 4},
      "task": {"n_examples": 12, "n_labels": 2, "topic_words": 6},
      "tune": {"steps": 3, "batch_size": 4},
      "brain": {"n_subjects": 3, "n_voxels": 16, "n_trs": 60}}})";
  const std::string dims = " --layers 2 --d-model 16 --heads 2 --vocab 120 --context 32 --d-ff 32";

  // inputs the checked verbs read
  const auto ds = w / "ds";
  if (sh("synth --spec " + q(w / "spec.json") + " --out " + q(ds)) != 0) return {false, "setup synth failed"};
  if (sh("convolve --impulse --tr 2 --track " + q(ds / "stimulus.json") + " --n-trs 120 --out " +
         q(w / "impulse.vem")) != 0)
    return {false, "setup convolve failed"};
  for (int s = 1; s <= 3; ++s) {
    const std::string sub = "sub-0" + std::to_string(s);
    sh("score --folds 3 --design " + q(ds / "design.vem") + " --bold " + q(ds / sub / "bold.vem") +
       " --out " + q(w / "A" / sub));
    sh("score --folds 3 --design " + q(w / "impulse.vem") + " --bold " + q(ds / sub / "bold.vem") +
       " --out " + q(w / "B" / sub));
  }
  if (sh("toydata" + dims + " --grammar-tokens 100 --examples 24 --labels 2 --sentences 20 --task-out " +
         q(w / "task.json") + " --sentences-out " + q(w / "sentences.json")) != 0)
    return {false, "setup toydata failed"};
  if (sh("toytune" + dims + " --mode prefix --prefix-len 4 --steps 5 --batch 4 --task " +
         q(w / "task.json") + " --out " + q(w / "model.vem")) != 0)
    return {false, "setup toytune failed"};

  struct Verb {
    std::string name;
    std::function<std::string(const fs::path&)> args;  // output directory -> arguments
    bool to_stdout = false;
  };
  const std::vector<Verb> verbs = {
      {"synth", [&](const fs::path& o) { return "synth --spec " + q(w / "spec.json") + " --out " + q(o); }},
      {"convolve",
       [&](const fs::path& o) {
         return "convolve --tr 2 --track " + q(ds / "stimulus.json") + " --n-trs 120 --out " + q(o / "d.vem");
       }},
      {"fit",
       [&](const fs::path& o) {
         return "fit --design " + q(ds / "design.vem") + " --bold " + q(ds / "sub-01" / "bold.vem") +
                " --out " + q(o);
       }},
      {"score",
       [&](const fs::path& o) {
         return "score --folds 3 --keep-predictions --tr 2 --track " + q(ds / "stimulus.json") +
                " --bold " + q(ds / "sub-02" / "bold.vem") + " --atlas " + q(ds / "atlas.vem") +
                " --out " + q(o);
       }},
      {"groupstats",
       [&](const fs::path& o) { return "groupstats --a " + q(w / "A") + " --b " + q(w / "B") + " --out " + q(o); }},
      {"report",
       [&](const fs::path& o) {
         return "report --score " + q(w / "A" / "sub-01") + " --atlas " + q(ds / "atlas.vem") + " --out " +
                q(o / "roi.csv");
       }},
      {"toydata",
       [&](const fs::path& o) {
         return "toydata" + dims + " --grammar-tokens 100 --examples 24 --labels 2 --sentences 20 --task-out " +
                q(o / "task.json") + " --sentences-out " + q(o / "sentences.json");
       }},
      {"toytune",
       [&](const fs::path& o) {
         return "toytune" + dims + " --mode partial --proportion 0.5 --steps 5 --batch 4 --task " +
                q(w / "task.json") + " --out " + q(o / "model.vem");
       }},
      {"embed",
       [&](const fs::path& o) {
         return "embed --model " + q(w / "model.vem") + " --sentences " + q(w / "sentences.json") +
                " --out " + q(o / "track.json");
       }},
      {"sweep",
       [&](const fs::path& o) { return "sweep --config " + q(w / "config.json") + " --out " + q(o); }},
      {"validate", [&](const fs::path&) { return "validate --config " + q(w / "config.json"); }, true},
  };

  std::vector<std::string> failed;
  for (const auto& v : verbs) {
    const auto out = w / ("out-" + v.name);
    const auto first = w / ("first-" + v.name);
    bool ok = true;
    for (int run = 0; run < 2 && ok; ++run) {
      fs::create_directories(out);
      ok = sh(v.args(out), v.to_stdout ? out / "stdout.txt" : fs::path("/dev/null")) == 0;
      if (ok && run == 0) fs::rename(out, first);
    }
    if (!ok || tree(first).empty() || tree(first) != tree(out)) failed.push_back(v.name);
  }
  std::string detail = std::to_string(verbs.size() - failed.size()) + "/" + std::to_string(verbs.size()) +
                       " verbs byte-identical on rerun";
  for (const auto& f : failed) detail += (f == failed.front() ? "; differing: " : ", ") + f;
  return {failed.empty(), detail};
}

}  // namespace

int main() {
  test::TempDir dir;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"ridge SVD path equals normal equations", ridge_oracle},
      {"lasso optimality", lasso_optimality},
      {"HRF shape", hrf_shape},
      {"convolution oracle, linearity and shift", convolution_oracle},
      {"cross-validated recovery", cv_recovery},
      {"statistics", statistics},
      {"group comparison on the planted fixture", group_effect},
      {"tuning gradients and frozen sets", tuning_math},
      {"end-to-end sweep", [&] { return sweep_end_to_end(dir); }},
      {"determinism of every verb", [&] { return determinism(dir); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %zu: %s -- %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
