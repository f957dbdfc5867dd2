#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace cmml {

struct ScoredItem {
  int item_id = -1;
  double score = 0.0;
};

// |top-N by score intersected with positives| / |positives|. Ties break by
// ascending item id. Requires N >= 1, at least N scored items, and a
// nonempty positive set.
double recall_at_n(const std::vector<ScoredItem>& scores, const std::set<int>& positives, int n);

struct RatedItem {
  int item_id = -1;
  double predicted = 0.0;
  double rating = 0.0;
};

// DCG with gain 2^y - 1 and discount log2(rank + 1) over the top-K predicted
// order, normalized by the ideal DCG. Ties break by ascending item id;
// all-zero gains are an error (undefined normalization).
double ndcg_at_k(const std::vector<RatedItem>& items, int k);

double mae(const std::vector<double>& predictions, const std::vector<double>& labels);

// Per-task metric rows plus unweighted aggregate means.
class EvalReport {
 public:
  void add(int task_id, const std::string& metric, double value);
  std::map<std::string, double> aggregates() const;
  const std::vector<std::tuple<int, std::string, double>>& rows() const { return rows_; }

  // CSV: `task_id,metric,value` plus one AGGREGATE row per metric.
  void write_csv(const std::string& path) const;

 private:
  std::vector<std::tuple<int, std::string, double>> rows_;
};

}  // namespace cmml
