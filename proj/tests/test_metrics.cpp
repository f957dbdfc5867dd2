#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "cmml/metrics.hpp"
#include "cmml/rng.hpp"

using namespace cmml;

namespace {

// Brute-force top-N: repeatedly pick the best remaining item by
// (score desc, id asc), independent of the library's sort.
std::set<int> brute_force_top_n(std::vector<ScoredItem> items, int n) {
  std::set<int> out;
  for (int pick = 0; pick < n; ++pick) {
    int best = -1;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].item_id < 0) continue;
      if (best < 0 || items[i].score > items[static_cast<std::size_t>(best)].score ||
          (items[i].score == items[static_cast<std::size_t>(best)].score &&
           items[i].item_id < items[static_cast<std::size_t>(best)].item_id)) {
        best = static_cast<int>(i);
      }
    }
    out.insert(items[static_cast<std::size_t>(best)].item_id);
    items[static_cast<std::size_t>(best)].item_id = -1;  // remove
  }
  return out;
}

double dcg_at_k(const std::vector<RatedItem>& order, int k) {
  double dcg = 0.0;
  for (int r = 1; r <= std::min<int>(k, static_cast<int>(order.size())); ++r) {
    dcg += (std::pow(2.0, order[static_cast<std::size_t>(r - 1)].rating) - 1.0) /
           std::log2(r + 1.0);
  }
  return dcg;
}

}  // namespace

TEST_CASE("recall is 1 when every positive ranks first or N spans the catalog") {
  std::vector<ScoredItem> scores;
  for (int i = 0; i < 10; ++i) scores.push_back({i, i < 3 ? 10.0 + i : static_cast<double>(i)});
  std::set<int> positives = {0, 1, 2};
  CHECK(recall_at_n(scores, positives, 3) == doctest::Approx(1.0));
  CHECK(recall_at_n(scores, positives, 10) == doctest::Approx(1.0));  // N = catalog size
}

TEST_CASE("recall against the brute-force oracle on random 20-item cases") {
  RngStream rng(1, 0);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<ScoredItem> scores;
    for (int i = 0; i < 20; ++i) scores.push_back({i, rng.uniform(-1, 1)});
    std::set<int> positives;
    while (positives.size() < 5) positives.insert(rng.uniform_int(20));
    int n = 1 + rng.uniform_int(20);
    std::set<int> top = brute_force_top_n(scores, n);
    int hits = 0;
    for (int p : positives) hits += top.count(p) ? 1 : 0;
    double expect = hits / 5.0;
    CHECK(recall_at_n(scores, positives, n) == doctest::Approx(expect));
  }
}

TEST_CASE("recall is nondecreasing in N") {
  RngStream rng(2, 0);
  std::vector<ScoredItem> scores;
  for (int i = 0; i < 15; ++i) scores.push_back({i, rng.normal()});
  std::set<int> positives = {1, 4, 7};
  double prev = 0.0;
  for (int n = 1; n <= 15; ++n) {
    double r = recall_at_n(scores, positives, n);
    CHECK(r >= prev);
    prev = r;
  }
}

TEST_CASE("recall error contracts") {
  std::vector<ScoredItem> scores = {{0, 1.0}, {1, 0.5}};
  CHECK_THROWS_AS(recall_at_n(scores, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS(recall_at_n(scores, {0}, 3), std::invalid_argument);
  CHECK_THROWS_AS(recall_at_n(scores, {0}, 0), std::invalid_argument);
}

TEST_CASE("ndcg is 1 for the ideal order and for K=1 with the best item first") {
  std::vector<RatedItem> items = {{0, 5.0, 5.0}, {1, 4.0, 3.0}, {2, 3.0, 1.0}};
  CHECK(ndcg_at_k(items, 3) == doctest::Approx(1.0));
  CHECK(ndcg_at_k(items, 1) == doctest::Approx(1.0));
}

TEST_CASE("ndcg against the exhaustive-permutation ideal on 5 items") {
  RngStream rng(3, 0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<RatedItem> items;
    for (int i = 0; i < 5; ++i) {
      items.push_back({i, rng.normal(), static_cast<double>(rng.uniform_int(5) + (i == 0 ? 1 : 0))});
    }
    int k = 1 + rng.uniform_int(5);

    // ideal DCG by trying every permutation
    std::vector<int> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 0.0;
    do {
      std::vector<RatedItem> order;
      for (int idx : perm) order.push_back(items[static_cast<std::size_t>(idx)]);
      best = std::max(best, dcg_at_k(order, k));
    } while (std::next_permutation(perm.begin(), perm.end()));

    std::vector<RatedItem> by_pred = items;
    std::sort(by_pred.begin(), by_pred.end(), [](const RatedItem& a, const RatedItem& b) {
      if (a.predicted != b.predicted) return a.predicted > b.predicted;
      return a.item_id < b.item_id;
    });
    double expect = dcg_at_k(by_pred, k) / best;
    CHECK(ndcg_at_k(items, k) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("ndcg lies in [0,1] and only the prediction order matters") {
  RngStream rng(4, 0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<RatedItem> items;
    for (int i = 0; i < 8; ++i) {
      items.push_back({i, rng.normal(), static_cast<double>(rng.uniform_int(6))});
    }
    bool any = false;
    for (auto& it : items) any = any || it.rating > 0;
    if (!any) items[0].rating = 1.0;
    int k = 1 + rng.uniform_int(8);
    double v = ndcg_at_k(items, k);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);

    // strictly monotone transform of predictions leaves NDCG unchanged
    std::vector<RatedItem> transformed = items;
    for (auto& it : transformed) it.predicted = std::exp(2.0 * it.predicted) + 7.0;
    CHECK(ndcg_at_k(transformed, k) == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("ndcg rejects all-zero gains") {
  std::vector<RatedItem> items = {{0, 1.0, 0.0}, {1, 0.5, 0.0}};
  CHECK_THROWS_AS(ndcg_at_k(items, 2), std::invalid_argument);
}

TEST_CASE("mae basics and translation detection") {
  std::vector<double> y = {1.0, 2.0, 3.0};
  CHECK(mae(y, y) == doctest::Approx(0.0));
  std::vector<double> shifted = {1.7, 2.7, 3.7};
  CHECK(mae(shifted, y) == doctest::Approx(0.7));
  CHECK_THROWS_AS(mae({1.0}, {1.0, 2.0}), std::invalid_argument);

  RngStream rng(5, 0);
  std::vector<double> a, b;
  double hand = 0.0;
  for (int i = 0; i < 50; ++i) {
    a.push_back(rng.normal());
    b.push_back(rng.normal());
    hand += std::fabs(a.back() - b.back());
  }
  CHECK(mae(a, b) == doctest::Approx(hand / 50.0));
}

TEST_CASE("eval report aggregates unweighted means and writes csv") {
  EvalReport report;
  report.add(1, "mae", 0.5);
  report.add(2, "mae", 1.5);
  report.add(1, "ndcg@3", 0.9);
  auto agg = report.aggregates();
  CHECK(agg["mae"] == doctest::Approx(1.0));
  CHECK(agg["ndcg@3"] == doctest::Approx(0.9));
  CHECK_THROWS_AS(report.add(3, "mae", std::nan("")), std::invalid_argument);

  report.write_csv("tmp_report.csv");
  std::ifstream in("tmp_report.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "task_id,metric,value");
  int aggregate_rows = 0;
  while (std::getline(in, line)) {
    if (line.rfind("AGGREGATE", 0) == 0) ++aggregate_rows;
  }
  CHECK(aggregate_rows == 2);
  std::remove("tmp_report.csv");
}
