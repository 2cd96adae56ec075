#include "voxelenc/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "voxelenc/cv.hpp"
#include "voxelenc/error.hpp"

namespace voxelenc::stats {

namespace {

constexpr double kTiny = 1e-300;
constexpr double kCfEps = 1e-16;
constexpr int kCfMaxIter = 10000;

// Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double a, double b, double x) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kCfMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kCfEps) return h;
  }
  throw ConvergenceError("incomplete beta continued fraction did not converge", 0.0);
}

// I_x(a, b) with y = 1 - x supplied separately to keep precision near 1.
double incomplete_beta_xy(double a, double b, double x, double y) {
  if (x <= 0.0) return 0.0;
  if (y <= 0.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log(y);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, y) / b;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("pearson: lengths differ (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
  if (a.size() < 3) throw ArgumentError("pearson: need at least 3 samples");
  const auto n = static_cast<double>(a.size());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  const double r = sab / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman: lengths differ");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("incomplete_beta: a and b must be > 0");
  if (x < 0.0 || x > 1.0 || std::isnan(x)) {
    throw DomainError("incomplete_beta: x must lie in [0, 1]");
  }
  return incomplete_beta_xy(a, b, x, 1.0 - x);
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw DomainError("student t: df must be > 0");
  if (std::isnan(t)) throw DomainError("student t: t is NaN");
  if (std::isinf(t)) return 0.0;
  const double t2 = t * t;
  const double x = df / (df + t2);
  const double y = t2 / (df + t2);
  return std::clamp(incomplete_beta_xy(0.5 * df, 0.5, x, y), 0.0, 1.0);
}

double student_t_cdf(double t, double df) {
  const double tail = 0.5 * student_t_two_sided_p(t, df);
  return t > 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("paired_ttest: sample sizes differ (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
  const std::size_t s = a.size();
  if (s < 2) throw ArgumentError("paired_ttest: need at least 2 pairs (df = 0)");
  std::vector<double> d(s);
  double mean = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    d[i] = a[i] - b[i];
    mean += d[i];
  }
  mean /= static_cast<double>(s);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(s - 1));
  TTestResult out;
  out.df = s - 1;
  if (sd == 0.0) {
    if (mean == 0.0) return out;
    throw DegenerateTestError("paired_ttest: all differences equal " + std::to_string(mean) +
                              " (zero spread)");
  }
  out.t = mean / (sd / std::sqrt(static_cast<double>(s)));
  out.p = student_t_two_sided_p(out.t, static_cast<double>(out.df));
  return out;
}

FdrResult fdr_bh(std::span<const double> p, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("fdr_bh: alpha must lie in (0, 1)");
  const std::size_t m = p.size();
  FdrResult out{std::vector<bool>(m, false), std::vector<double>(m, 1.0)};
  if (m == 0) return out;
  for (std::size_t i = 0; i < m; ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) {
      throw ArgumentError("fdr_bh: p[" + std::to_string(i) + "] outside [0, 1]");
    }
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return p[i] < p[j]; });

  const auto md = static_cast<double>(m);
  std::size_t cutoff = 0;  // number of rejections
  for (std::size_t k = m; k >= 1; --k) {
    if (p[order[k - 1]] <= static_cast<double>(k) * alpha / md) {
      cutoff = k;
      break;
    }
  }
  if (cutoff > 0) {
    const double threshold = p[order[cutoff - 1]];
    for (std::size_t i = 0; i < m; ++i) out.reject[i] = p[i] <= threshold;
  }
  double running = 1.0;
  for (std::size_t k = m; k >= 1; --k) {
    const double candidate = md * p[order[k - 1]] / static_cast<double>(k);
    running = std::min(running, candidate);
    out.q[order[k - 1]] = std::min(running, 1.0);
  }
  return out;
}

GroupStatMap compare_models(const std::vector<std::vector<double>>& maps_a,
                            const std::vector<std::vector<double>>& maps_b,
                            const CompareOptions& opts) {
  if (maps_a.size() != maps_b.size()) {
    throw ArgumentError("compare_models: " + std::to_string(maps_a.size()) +
                        " subjects for A but " + std::to_string(maps_b.size()) + " for B");
  }
  const std::size_t subjects = maps_a.size();
  if (subjects < 2) {
    throw ArgumentError("compare_models: need at least 2 subjects (df = subjects - 1)");
  }
  const std::size_t n_voxels = maps_a.front().size();
  for (std::size_t s = 0; s < subjects; ++s) {
    if (maps_a[s].size() != n_voxels || maps_b[s].size() != n_voxels) {
      throw ShapeError("compare_models: subject " + std::to_string(s) +
                       " voxel count differs from subject 0");
    }
  }
  auto transform = [&](double r) {
    if (!opts.fisher_z) return r;
    return std::atanh(std::clamp(r, -1.0 + 1e-12, 1.0 - 1e-12));
  };

  GroupStatMap out;
  out.df = subjects - 1;
  out.alpha = opts.alpha;
  out.t.assign(n_voxels, 0.0);
  out.p.assign(n_voxels, 1.0);
  out.direction.assign(n_voxels, 0);
  std::vector<double> a(subjects);
  std::vector<double> b(subjects);
  for (std::size_t v = 0; v < n_voxels; ++v) {
    for (std::size_t s = 0; s < subjects; ++s) {
      a[s] = transform(maps_a[s][v]);
      b[s] = transform(maps_b[s][v]);
    }
    try {
      const auto res = paired_ttest(a, b);
      out.t[v] = res.t;
      out.p[v] = res.p;
    } catch (const DegenerateTestError&) {
      // identical non-zero difference in every subject
      const double diff = a[0] - b[0];
      out.t[v] = std::copysign(std::numeric_limits<double>::infinity(), diff);
      out.p[v] = 0.0;
      ++out.degenerate_voxels;
    }
    out.direction[v] = out.t[v] > 0.0 ? 1 : (out.t[v] < 0.0 ? -1 : 0);
  }
  auto fdr = fdr_bh(out.p, opts.alpha);
  out.q = std::move(fdr.q);
  out.reject = std::move(fdr.reject);
  return out;
}

GroupStatMap compare_models(std::span<const cv::CvReport> reports_a,
                            std::span<const cv::CvReport> reports_b,
                            const CompareOptions& opts) {
  std::vector<std::vector<double>> a;
  std::vector<std::vector<double>> b;
  for (const auto& r : reports_a) a.push_back(r.r);
  for (const auto& r : reports_b) b.push_back(r.r);
  return compare_models(a, b, opts);
}

RoiSummary summarize_roi(std::span<const double> r, const std::vector<bool>& excluded,
                         const io::RoiAtlas& atlas) {
  atlas.validate(r.size());
  if (!excluded.empty() && excluded.size() != r.size()) {
    throw ShapeError("summarize_roi: excluded mask length differs from voxel count");
  }
  RoiSummary out;
  for (const auto& [code, name] : atlas.names) {
    NetworkStat stat;
    stat.code = code;
    stat.name = name;
    double sum = 0.0;
    for (std::size_t v = 0; v < r.size(); ++v) {
      if (atlas.labels[v] != code) continue;
      ++stat.n_voxels;
      if (!excluded.empty() && excluded[v]) continue;
      ++stat.n_scored;
      sum += r[v];
    }
    if (stat.n_scored > 0) {
      const double mean = sum / static_cast<double>(stat.n_scored);
      stat.mean = mean;
      if (stat.n_scored > 1) {
        double ss = 0.0;
        for (std::size_t v = 0; v < r.size(); ++v) {
          if (atlas.labels[v] != code || (!excluded.empty() && excluded[v])) continue;
          ss += (r[v] - mean) * (r[v] - mean);
        }
        stat.std = std::sqrt(ss / static_cast<double>(stat.n_scored - 1));
      }
    }
    out.networks.push_back(std::move(stat));
  }
  return out;
}

RoiSummary summarize_roi(const cv::CvReport& report, const io::RoiAtlas& atlas) {
  return summarize_roi(report.r, report.excluded, atlas);
}

}  // namespace voxelenc::stats
