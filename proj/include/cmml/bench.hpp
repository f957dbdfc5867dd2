#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmml/metalearn.hpp"

namespace cmml {

// Counters fed by the replacement operator new/delete in alloc_hooks.cpp.
// Strictly single-threaded use during timed regions.
struct AllocSnapshot {
  std::uint64_t allocations = 0;
  std::uint64_t allocated_bytes = 0;  // cumulative
  std::uint64_t peak_outstanding_bytes = 0;
};

AllocSnapshot alloc_snapshot();
void alloc_reset_peak();

struct BenchResult {
  std::string method;              // "cmml" or "baseline"
  int m = 0;                       // support/query size
  std::optional<int> k;            // inner steps; empty for the feed-forward path
  double median_seconds = 0.0;
  std::uint64_t alloc_bytes = 0;   // cumulative allocation volume per adaptation
  std::uint64_t peak_bytes = 0;    // peak outstanding during one adaptation
  int repeats = 0;
};

struct BenchOptions {
  std::vector<int> m_values{64, 256};
  std::vector<int> k_values{1, 5, 10, 20};
  int repeats = 7;
  int warmup = 2;
  double inner_lr = 0.01;
  std::uint64_t seed = 0;
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

SlopeFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys);

struct BenchReport {
  std::vector<BenchResult> results;
  // least-squares fit of baseline median time against k, per m value
  std::vector<std::pair<int, SlopeFit>> baseline_slope_by_m;

  void write_csv(const std::string& path) const;
};

// Times cmml_infer against baseline_adapt_and_score on synthetic tasks of
// matched sizes. The two bundles must share the same backbone architecture
// (asserted). Median over `repeats` timed rounds after `warmup` discarded
// rounds; errors out if the clock resolution exceeds 5% of a median.
BenchReport run_inference_bench(const ModelBundle& bundle, const BaselineBundle& baseline,
                                const BenchOptions& options);

}  // namespace cmml
