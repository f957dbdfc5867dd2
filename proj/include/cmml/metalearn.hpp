#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmml/backbone.hpp"
#include "cmml/context.hpp"
#include "cmml/data.hpp"
#include "cmml/modulation.hpp"
#include "cmml/optim.hpp"
#include "cmml/params.hpp"

namespace cmml {

enum class LossMode { kHinge, kMse };

LossMode loss_mode_from_string(const std::string& s);
std::string to_string(LossMode mode);

struct BundleConfig {
  FeatureSchema schema;
  BackboneConfig backbone;
  EncoderConfig encoder;
  GeneratorConfig generator;
  ModulationConfig modulation;

  void validate() const;
  int conditioning_dim() const;  // width of the hybrid context
};

// Backbone parameters phi plus the meta parameters theta_M (encoder,
// generator, hypernetwork/route). The name set is fixed at construction and
// the two subsets are disjoint by prefix.
struct ModelBundle {
  BundleConfig config;
  ParamMap params;

  // Fresh bundle; embedding tables are Glorot-initialized.
  static ModelBundle build(const BundleConfig& config, std::uint64_t seed);
  // Bundle with preloaded embedding tables (pre-generated by collaborative
  // filtering in the scenario setting).
  static ModelBundle build(const BundleConfig& config, std::uint64_t seed,
                           const Tensor& user_table, const Tensor& item_table);

  static bool is_phi(const std::string& name);   // backbone.*, embed.*, soft.*
  static bool is_meta(const std::string& name);  // encoder.*, generator.*, hyper.*, route.*
  bool is_trainable(const std::string& name) const;

  std::vector<std::string> phi_names() const;
  std::vector<std::string> meta_names() const;
  std::uint64_t checksum() const { return param_checksum(params); }
};

// One training realization of a task, in the shape the loss consumes.
struct TaskEpisode {
  int task_id = -1;
  std::vector<Interaction> support;
  std::vector<Interaction> query;      // mse mode
  std::vector<Interaction> query_pos;  // hinge mode
  std::vector<Interaction> query_neg;
  std::vector<int> support_permutation;
  bool sampled_with_replacement = false;
};

// Scenario tasks sample a fresh episode (support positives + negatives, query
// positives + negatives); user tasks reuse their fixed support/query but
// re-permute the support order every call.
TaskEpisode episode_for_task(const Task& task, LossMode mode, const EpisodeOptions& options,
                             const std::vector<int>& negative_pool, RngStream& rng);

struct TaskScores {
  Tensor context;  // C, 1 x d_c
  Tensor scores;   // one per query row
  std::vector<RouteTensor> routes;  // soft-modular only
};

// The full feed-forward pipeline: support -> C -> per-query C_h -> modulated
// score. `zero_context` forces C = 0 (the ablation used at evaluation time).
TaskScores score_queries(const BundleConfig& config, const std::vector<Interaction>& support,
                         const std::vector<Interaction>& query_pairs, const ParamLookup& params,
                         bool zero_context = false);

// Mean per-example loss over the episode's query set. Hinge pairs positives
// and negatives by position; MSE compares scores with labels. A non-finite
// loss throws with the offending task id.
Tensor cmml_loss_on_task(const BundleConfig& config, const TaskEpisode& episode, LossMode mode,
                         const ParamLookup& params);

struct TrainConfig {
  int task_batch_size = 16;
  int epochs = 100;
  double lr = 1e-4;
  LossMode loss_mode = LossMode::kHinge;
  std::uint64_t seed = 0;
  EpisodeOptions episode;

  void validate() const;
};

struct EpochStats {
  double mean_loss = 0.0;
  int batches = 0;
  int tasks = 0;
  double seconds = 0.0;
  int permutation_draws = 0;
};

// One pass over the meta-training tasks: per batch, L_meta is the mean of
// per-task losses and a single Adam step updates phi and theta_M jointly.
// Deterministic given the rng state.
EpochStats train_epoch(ModelBundle& bundle, const std::vector<Task>& tasks,
                       const TrainConfig& config, AdamState& optimizer,
                       const std::vector<int>& negative_pool, RngStream& rng);

// Pure feed-forward inference: adapts via context only, never writes a
// parameter. Callers can checksum the bundle around it.
Tensor cmml_infer(const ModelBundle& bundle, const std::vector<Interaction>& support,
                  const std::vector<Interaction>& query_pairs, bool zero_context = false);

TaskScores cmml_infer_detailed(const ModelBundle& bundle,
                               const std::vector<Interaction>& support,
                               const std::vector<Interaction>& query_pairs,
                               bool zero_context = false);

// Just the task-level context C for a support set (export path).
Tensor task_context(const ModelBundle& bundle, const std::vector<Interaction>& support);

// ---------------------------------------------------------------------------
// Gradient-based inner-loop baseline (first-order)
// ---------------------------------------------------------------------------

struct BaselineConfig {
  int inner_steps = 5;
  double inner_lr = 0.01;
  enum class Scope { kHeadOnly, kHiddenAndHead };
  Scope scope = Scope::kHiddenAndHead;

  void validate() const;
};

// Plain backbone recommender adapted per task by gradient steps.
struct BaselineBundle {
  FeatureSchema schema;
  BackboneConfig backbone;
  ParamMap params;

  static BaselineBundle build(const FeatureSchema& schema, const BackboneConfig& config,
                              std::uint64_t seed);
  static BaselineBundle build(const FeatureSchema& schema, const BackboneConfig& config,
                              std::uint64_t seed, const Tensor& user_table,
                              const Tensor& item_table);
  std::uint64_t checksum() const { return param_checksum(params); }
};

struct AdaptResult {
  Tensor scores;
  double delta_norm = 0.0;  // parameter movement over the inner loop
  double final_support_loss = 0.0;
};

// Clones the adaptable scope, takes `inner_steps` full-batch gradient steps
// on the support loss, then scores the query pairs with the adapted clone.
// The bundle itself is never written.
AdaptResult baseline_adapt_and_score(const BaselineBundle& bundle,
                                     const std::vector<Interaction>& support,
                                     const std::vector<Interaction>& query_pairs, LossMode mode,
                                     const BaselineConfig& config);

// First-order meta-training for the baseline: inner adaptation is detached
// and the outer gradient of the query loss at the adapted parameters is
// applied to the initial parameters.
EpochStats train_epoch_baseline(BaselineBundle& bundle, const std::vector<Task>& tasks,
                                const TrainConfig& config, const BaselineConfig& baseline,
                                AdamState& optimizer, const std::vector<int>& negative_pool,
                                RngStream& rng);

}  // namespace cmml
