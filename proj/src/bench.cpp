#include "cmml/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace cmml {

SlopeFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw std::invalid_argument("fit_line: need at least two matched points");
  }
  double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  SlopeFit fit;
  double denom = n * sxx - sx * sx;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss_tot = 0, ss_res = 0;
  double mean_y = sy / n;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double pred = fit.intercept + fit.slope * xs[i];
    ss_res += (ys[i] - pred) * (ys[i] - pred);
    ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
  }
  fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

namespace {

using Clock = std::chrono::steady_clock;

double clock_resolution_seconds() {
  double best = 1.0;
  for (int i = 0; i < 200; ++i) {
    auto a = Clock::now();
    auto b = Clock::now();
    while (b == a) b = Clock::now();
    best = std::min(best, std::chrono::duration<double>(b - a).count());
  }
  return best;
}

struct Workload {
  std::vector<Interaction> support;
  std::vector<Interaction> query;
};

Workload make_workload(const FeatureSchema& schema, int m, RngStream& rng) {
  Workload w;
  int user_vocab = schema.user_fields[0].vocab_size;
  int item_vocab = schema.item_fields[0].vocab_size;
  auto draw_rows = [&](int count) {
    std::vector<Interaction> rows;
    rows.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      Interaction x;
      x.user_id = rng.uniform_int(user_vocab);
      x.item_id = rng.uniform_int(item_vocab);
      x.label = 1.0 + 4.0 * rng.uniform();
      rows.push_back(x);
    }
    return rows;
  };
  w.support = draw_rows(m);
  w.query = draw_rows(m);
  return w;
}

template <typename F>
BenchResult time_rounds(const std::string& method, int m, std::optional<int> k, F&& body,
                        int warmup, int repeats, double resolution) {
  for (int i = 0; i < warmup; ++i) body();
  std::vector<double> times;
  std::vector<std::uint64_t> alloc_bytes, peaks;
  times.reserve(static_cast<std::size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    AllocSnapshot before = alloc_snapshot();
    alloc_reset_peak();
    auto t0 = Clock::now();
    body();
    auto t1 = Clock::now();
    AllocSnapshot after = alloc_snapshot();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
    alloc_bytes.push_back(after.allocated_bytes - before.allocated_bytes);
    peaks.push_back(after.peak_outstanding_bytes);
  }
  auto median_of = [](auto v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  BenchResult r;
  r.method = method;
  r.m = m;
  r.k = k;
  r.median_seconds = median_of(times);
  r.alloc_bytes = median_of(alloc_bytes);
  r.peak_bytes = median_of(peaks);
  r.repeats = repeats;
  if (resolution > 0.05 * r.median_seconds) {
    throw std::runtime_error("run_inference_bench: timer resolution (" +
                             std::to_string(resolution) + "s) exceeds 5% of the measured median (" +
                             std::to_string(r.median_seconds) + "s); increase m");
  }
  return r;
}

}  // namespace

BenchReport run_inference_bench(const ModelBundle& bundle, const BaselineBundle& baseline,
                                const BenchOptions& options) {
  if (options.repeats < 5) {
    throw std::invalid_argument("run_inference_bench: need at least 5 repeats");
  }
  if (bundle.config.backbone.hidden_sizes != baseline.backbone.hidden_sizes &&
      bundle.config.modulation.variant != ModulationConfig::Variant::kSoftModular) {
    throw std::invalid_argument(
        "run_inference_bench: bundle and baseline backbones are not comparable");
  }
  if (bundle.config.schema.pair_dim() != baseline.schema.pair_dim()) {
    throw std::invalid_argument("run_inference_bench: embedding widths differ");
  }

  const double resolution = clock_resolution_seconds();
  BenchReport report;

  for (int m : options.m_values) {
    RngStream rng(options.seed, static_cast<std::uint64_t>(m));
    Workload w = make_workload(bundle.config.schema, m, rng);

    std::vector<double> ks, times;
    for (int k : options.k_values) {
      BaselineConfig cfg;
      cfg.inner_steps = k;
      cfg.inner_lr = options.inner_lr;
      BenchResult bres = time_rounds(
          "baseline", m, k,
          [&] {
            baseline_adapt_and_score(baseline, w.support, w.query, LossMode::kMse, cfg);
          },
          options.warmup, options.repeats, resolution);
      report.results.push_back(bres);
      ks.push_back(static_cast<double>(k));
      times.push_back(bres.median_seconds);

      // same number of CMML measurements; the feed-forward path never sees k
      BenchResult cres = time_rounds(
          "cmml", m, std::nullopt,
          [&] { cmml_infer(bundle, w.support, w.query); }, options.warmup, options.repeats,
          resolution);
      report.results.push_back(cres);
    }
    report.baseline_slope_by_m.emplace_back(m, fit_line(ks, times));
  }
  return report;
}

void BenchReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("BenchReport: cannot open " + path);
  out << "method,m,k,median_seconds,alloc_bytes,repeats\n";
  char buf[32];
  for (const BenchResult& r : results) {
    std::snprintf(buf, sizeof buf, "%.9g", r.median_seconds);
    out << r.method << ',' << r.m << ',';
    if (r.k) out << *r.k;
    out << ',' << buf << ',' << r.alloc_bytes << ',' << r.repeats << "\n";
  }
}

}  // namespace cmml
