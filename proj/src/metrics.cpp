#include "cmml/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace cmml {

double recall_at_n(const std::vector<ScoredItem>& scores, const std::set<int>& positives, int n) {
  if (n < 1) throw std::invalid_argument("recall_at_n: N must be >= 1");
  if (positives.empty()) throw std::invalid_argument("recall_at_n: empty positive set");
  if (static_cast<int>(scores.size()) < n) {
    throw std::invalid_argument("recall_at_n: only " + std::to_string(scores.size()) +
                                " scored items for N = " + std::to_string(n));
  }
  std::vector<ScoredItem> ranked = scores;
  std::sort(ranked.begin(), ranked.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item_id < b.item_id;
  });
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    if (positives.count(ranked[static_cast<std::size_t>(i)].item_id)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(positives.size());
}

double ndcg_at_k(const std::vector<RatedItem>& items, int k) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: K must be >= 1");
  if (items.empty()) throw std::invalid_argument("ndcg_at_k: no items");
  auto gain = [](double y) { return std::pow(2.0, y) - 1.0; };
  bool any_gain = false;
  for (const RatedItem& it : items) {
    if (gain(it.rating) > 0.0) any_gain = true;
  }
  if (!any_gain) {
    throw std::invalid_argument("ndcg_at_k: all gains are zero, normalization undefined");
  }

  auto dcg_of = [&](const std::vector<RatedItem>& order) {
    double dcg = 0.0;
    int top = std::min(k, static_cast<int>(order.size()));
    for (int rank = 1; rank <= top; ++rank) {
      dcg += gain(order[static_cast<std::size_t>(rank - 1)].rating) /
             std::log2(static_cast<double>(rank) + 1.0);
    }
    return dcg;
  };

  std::vector<RatedItem> by_pred = items;
  std::sort(by_pred.begin(), by_pred.end(), [](const RatedItem& a, const RatedItem& b) {
    if (a.predicted != b.predicted) return a.predicted > b.predicted;
    return a.item_id < b.item_id;
  });
  std::vector<RatedItem> by_rating = items;
  std::sort(by_rating.begin(), by_rating.end(), [](const RatedItem& a, const RatedItem& b) {
    if (a.rating != b.rating) return a.rating > b.rating;
    return a.item_id < b.item_id;
  });
  return dcg_of(by_pred) / dcg_of(by_rating);
}

double mae(const std::vector<double>& predictions, const std::vector<double>& labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("mae: " + std::to_string(predictions.size()) +
                                " predictions vs " + std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) throw std::invalid_argument("mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    s += std::fabs(predictions[i] - labels[i]);
  }
  return s / static_cast<double>(predictions.size());
}

void EvalReport::add(int task_id, const std::string& metric, double value) {
  if (!std::isfinite(value)) {
    throw std::invalid_argument("EvalReport: non-finite " + metric + " for task " +
                                std::to_string(task_id));
  }
  rows_.emplace_back(task_id, metric, value);
}

std::map<std::string, double> EvalReport::aggregates() const {
  std::map<std::string, double> sums;
  std::map<std::string, int> counts;
  for (const auto& [task, metric, value] : rows_) {
    sums[metric] += value;
    counts[metric] += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [metric, s] : sums) out[metric] = s / counts[metric];
  return out;
}

void EvalReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("EvalReport: cannot open " + path);
  out << "task_id,metric,value\n";
  char buf[32];
  for (const auto& [task, metric, value] : rows_) {
    std::snprintf(buf, sizeof buf, "%.17g", value);
    out << task << ',' << metric << ',' << buf << "\n";
  }
  for (const auto& [metric, value] : aggregates()) {
    std::snprintf(buf, sizeof buf, "%.17g", value);
    out << "AGGREGATE," << metric << ',' << buf << "\n";
  }
}

}  // namespace cmml
