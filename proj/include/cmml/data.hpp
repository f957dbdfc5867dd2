#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmml/backbone.hpp"
#include "cmml/rng.hpp"
#include "cmml/tensor.hpp"

namespace cmml {

struct Interaction {
  int user_id = -1;
  int item_id = -1;
  double label = 0.0;   // +1 implicit click or a rating in [1, 5]
  int scenario_id = -1; // -1 when absent
  long long timestamp = -1;
};

enum class LabelMode { kImplicit, kRating };

struct CsvSchema {
  std::string user_col = "user_id";
  std::string item_col = "item_id";
  std::string rating_col = "rating";
  std::string timestamp_col = "timestamp";   // optional column
  std::string scenario_col = "scenario_id";  // optional column
  LabelMode label_mode = LabelMode::kRating;
};

struct LoadReport {
  std::vector<Interaction> interactions;
  int skipped = 0;
  int data_rows = 0;
};

// Reads `user_id,item_id,rating,timestamp[,scenario_id]` with a header row.
// Malformed rows are skipped and tallied; more than 10% skipped is an error.
// Implicit mode turns every rated row into a +1 label.
LoadReport load_interactions_csv(const std::string& path, const CsvSchema& schema);

enum class TaskSetting { kScenario, kUser };

// One cold-start unit. Support and query are disjoint by (user, item); for
// scenario tasks they partition the scenario's positives into the pools that
// episode sampling draws from.
struct Task {
  int task_id = -1;
  TaskSetting setting = TaskSetting::kScenario;
  std::vector<Interaction> support;
  std::vector<Interaction> query;
};

struct TaskSplit {
  std::vector<Task> train;
  std::vector<Task> test;
};

struct ScenarioTaskOptions {
  int min_items = 100;
  int max_items = 1000;
  double train_fraction = 0.75;
  double support_fraction = 1.0 / 3.0;  // positives routed to the support pool
  std::uint64_t seed = 0;
};

// One task per scenario whose distinct item count lies within
// [min_items, max_items]; meta-train/meta-test split by scenario id hash.
TaskSplit build_scenario_tasks(const std::vector<Interaction>& interactions,
                               const ScenarioTaskOptions& options);

struct UserTaskOptions {
  int per_user_cap = 50;
  int query_size = 10;
  double train_fraction = 0.75;
  std::uint64_t seed = 0;
};

// One task per user with rating labels: at most `per_user_cap` records (the
// earliest by timestamp), `query_size` random records as query, the rest as
// support. Users with fewer than query_size + 1 records are dropped.
TaskSplit build_user_tasks(const std::vector<Interaction>& interactions,
                           const UserTaskOptions& options);

struct EpisodeOptions {
  int n_pos_support = 64;
  int n_query = 128;  // positive pairs in the query half
};

// One sampled (support, query) realization of a scenario task: positives are
// drawn from the task pools and matched 1:1 with negatives sampled uniformly
// from pairs absent from the task's positive set. The support order is
// re-permuted on every call.
struct Episode {
  std::vector<Interaction> support;    // positives + negatives, permuted
  std::vector<Interaction> query_pos;
  std::vector<Interaction> query_neg;
  bool sampled_with_replacement = false;
  std::vector<int> support_permutation;  // the draw applied to the support order
};

Episode sample_episode(const Task& task, const EpisodeOptions& options,
                       const std::vector<int>& negative_pool, RngStream& rng);

struct SyntheticTaskSpec {
  int latent_dim = 8;
  int feature_dim = 8;  // must equal latent_dim (labels are w . x)
  double noise_sd = 0.1;
  int support_size = 20;
  int query_size = 20;
  int task_count = 500;
  std::uint64_t seed = 0;
  bool ctr_mode = false;  // sign labels instead of raw regression targets

  void validate() const;
};

// Synthetic tasks with a known generative oracle: each task draws a hidden
// vector w_t (coordinates N(0, 1/latent_dim)), each example draws features
// x ~ N(0, 1) stored as a frozen item embedding row, and the label is
// w_t . x plus noise. Hidden vectors are returned for oracle evaluation.
struct SyntheticData {
  std::vector<Task> tasks;
  Tensor item_features;  // one row per generated example
  Tensor user_features;  // single all-zero row shared by every example
  std::vector<std::vector<double>> hidden_vectors;

  FeatureSchema schema() const;
};

SyntheticData generate_synthetic_tasks(const SyntheticTaskSpec& spec);

// Deterministic id-hash split of any task list.
TaskSplit split_tasks(const std::vector<Task>& tasks, double train_fraction, std::uint64_t seed);

struct MfConfig {
  int dim = 32;
  int epochs = 20;
  double lr = 0.01;
  double reg = 0.01;
  std::uint64_t seed = 0;
};

struct MfTables {
  Tensor user;  // user_vocab x dim
  Tensor item;  // item_vocab x dim
};

// SGD matrix factorization with L2 regularization; deterministic given the
// seed. Vocabulary sizes of 0 mean "max id + 1".
MfTables mf_pretrain_embeddings(const std::vector<Interaction>& interactions,
                                const MfConfig& config, int user_vocab = 0, int item_vocab = 0);

// Embedding-table CSV: `entity_id,v0,...,v{dim-1}`.
void write_embedding_csv(const std::string& path, const Tensor& table);
Tensor read_embedding_csv(const std::string& path);

// Task file: `task_id,split,role,user_id,item_id,label,scenario_id,timestamp`.
void write_tasks_csv(const std::string& path, const TaskSplit& split, TaskSetting setting);
TaskSplit read_tasks_csv(const std::string& path, TaskSetting setting);

}  // namespace cmml
