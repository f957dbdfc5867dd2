#include "cmml/metalearn.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace cmml {

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "hinge") return LossMode::kHinge;
  if (s == "mse") return LossMode::kMse;
  throw std::invalid_argument("unknown loss mode: " + s);
}

std::string to_string(LossMode mode) { return mode == LossMode::kHinge ? "hinge" : "mse"; }

void BundleConfig::validate() const {
  schema.validate();
  backbone.validate();
  encoder.validate();
  generator.validate();
  modulation.validate();
  if (generator.variant == GeneratorConfig::Variant::kDot && encoder.context_dim != 0 &&
      encoder.context_dim != schema.pair_dim()) {
    throw std::invalid_argument(
        "BundleConfig: the dot generator needs context_dim == concat(e_u, e_i) width (" +
        std::to_string(schema.pair_dim()) + "), got " + std::to_string(encoder.context_dim));
  }
}

int BundleConfig::conditioning_dim() const {
  return generator.resolved_hybrid_dim(schema.pair_dim());
}

bool ModelBundle::is_phi(const std::string& name) {
  return name.rfind("backbone.", 0) == 0 || name.rfind("embed.", 0) == 0 ||
         name.rfind("soft.", 0) == 0;
}

bool ModelBundle::is_meta(const std::string& name) {
  return name.rfind("encoder.", 0) == 0 || name.rfind("generator.", 0) == 0 ||
         name.rfind("hyper.", 0) == 0 || name.rfind("route.", 0) == 0;
}

bool ModelBundle::is_trainable(const std::string& name) const {
  if (config.backbone.frozen_embeddings && name.rfind("embed.", 0) == 0) return false;
  return true;
}

std::vector<std::string> ModelBundle::phi_names() const {
  std::vector<std::string> out;
  for (const auto& [name, p] : params) {
    if (is_phi(name)) out.push_back(name);
  }
  return out;
}

std::vector<std::string> ModelBundle::meta_names() const {
  std::vector<std::string> out;
  for (const auto& [name, p] : params) {
    if (is_meta(name)) out.push_back(name);
  }
  return out;
}

namespace {

ModelBundle build_bundle(const BundleConfig& config, std::uint64_t seed, const Tensor* user_table,
                         const Tensor* item_table) {
  config.validate();
  ModelBundle bundle;
  bundle.config = config;
  ParamMap& params = bundle.params;

  RngStream embed_rng(seed, 100), backbone_rng(seed, 101), encoder_rng(seed, 102),
      generator_rng(seed, 103), modulation_rng(seed, 104);

  if (user_table && item_table) {
    if (config.schema.user_fields.size() != 1 || config.schema.item_fields.size() != 1) {
      throw std::invalid_argument("ModelBundle: preloaded tables need single-field entities");
    }
    const FieldSpec& uf = config.schema.user_fields[0];
    const FieldSpec& itf = config.schema.item_fields[0];
    if (user_table->rows() != uf.vocab_size || user_table->cols() != uf.dim ||
        item_table->rows() != itf.vocab_size || item_table->cols() != itf.dim) {
      throw std::invalid_argument("ModelBundle: preloaded table shapes do not match the schema");
    }
    params["embed.user." + uf.name] = *user_table;
    params["embed.item." + itf.name] = *item_table;
  } else {
    init_embedding_params(config.schema, params, embed_rng);
  }

  const int pair_dim = config.schema.pair_dim();
  const int d_c = config.encoder.resolved_context_dim(pair_dim);
  const int d_h = config.conditioning_dim();

  switch (config.modulation.variant) {
    case ModulationConfig::Variant::kWeight:
      init_backbone_params(config.backbone, pair_dim, params, backbone_rng,
                           /*include_head=*/false);
      init_hyper_params(config.modulation, d_h, config.backbone, params, modulation_rng);
      break;
    case ModulationConfig::Variant::kSigmoidLayer:
    case ModulationConfig::Variant::kFilm:
      init_backbone_params(config.backbone, pair_dim, params, backbone_rng);
      init_hyper_params(config.modulation, d_h, config.backbone, params, modulation_rng);
      break;
    case ModulationConfig::Variant::kSoftModular:
      init_soft_params(config.modulation, d_h, pair_dim, config.backbone, params, modulation_rng);
      break;
  }

  init_encoder_params(config.encoder, pair_dim, params, encoder_rng);
  init_generator_params(config.generator, d_c, pair_dim, params, generator_rng);
  return bundle;
}

std::vector<int> user_ids_of(const std::vector<Interaction>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (const auto& x : rows) out.push_back(x.user_id);
  return out;
}

std::vector<int> item_ids_of(const std::vector<Interaction>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (const auto& x : rows) out.push_back(x.item_id);
  return out;
}

Tensor labels_of(const std::vector<Interaction>& rows) {
  std::vector<double> v;
  v.reserve(rows.size());
  for (const auto& x : rows) v.push_back(x.label);
  return Tensor::column(std::move(v));
}

// n x (pair_dim [+1]) encoder input for the support set.
Tensor support_matrix(const BundleConfig& config, const std::vector<Interaction>& support,
                      const ParamLookup& params) {
  auto [e_u, e_i] = embed(config.schema, user_ids_of(support), item_ids_of(support), params);
  Tensor m = concat(e_u, e_i, 1);
  if (config.encoder.include_labels) m = concat(m, labels_of(support), 1);
  return m;
}

}  // namespace

ModelBundle ModelBundle::build(const BundleConfig& config, std::uint64_t seed) {
  return build_bundle(config, seed, nullptr, nullptr);
}

ModelBundle ModelBundle::build(const BundleConfig& config, std::uint64_t seed,
                               const Tensor& user_table, const Tensor& item_table) {
  return build_bundle(config, seed, &user_table, &item_table);
}

TaskEpisode episode_for_task(const Task& task, LossMode mode, const EpisodeOptions& options,
                             const std::vector<int>& negative_pool, RngStream& rng) {
  TaskEpisode ep;
  ep.task_id = task.task_id;
  if (task.setting == TaskSetting::kScenario) {
    Episode e = sample_episode(task, options, negative_pool, rng);
    ep.support = std::move(e.support);
    ep.query_pos = std::move(e.query_pos);
    ep.query_neg = std::move(e.query_neg);
    ep.support_permutation = std::move(e.support_permutation);
    ep.sampled_with_replacement = e.sampled_with_replacement;
    // regression over +-1 labels still works through the unified query list
    ep.query = ep.query_pos;
    ep.query.insert(ep.query.end(), ep.query_neg.begin(), ep.query_neg.end());
    return ep;
  }

  if (task.support.empty() || task.query.empty()) {
    throw std::invalid_argument("episode_for_task: task " + std::to_string(task.task_id) +
                                " has an empty support or query set");
  }
  ep.support_permutation = rng.permutation(static_cast<int>(task.support.size()));
  ep.support.reserve(task.support.size());
  for (int idx : ep.support_permutation) {
    ep.support.push_back(task.support[static_cast<std::size_t>(idx)]);
  }
  ep.query = task.query;
  if (mode == LossMode::kHinge) {
    for (const Interaction& x : task.query) {
      (x.label > 0 ? ep.query_pos : ep.query_neg).push_back(x);
    }
    if (ep.query_pos.empty() || ep.query_neg.empty()) {
      throw std::invalid_argument("episode_for_task: task " + std::to_string(task.task_id) +
                                  " lacks positive/negative queries for hinge loss");
    }
    rng.shuffle(ep.query_pos);
    rng.shuffle(ep.query_neg);
  }
  return ep;
}

TaskScores score_queries(const BundleConfig& config, const std::vector<Interaction>& support,
                         const std::vector<Interaction>& query_pairs, const ParamLookup& params,
                         bool zero_context) {
  if (support.empty()) throw std::invalid_argument("score_queries: empty support set");
  if (query_pairs.empty()) throw std::invalid_argument("score_queries: empty query set");

  const int pair_dim = config.schema.pair_dim();
  TaskScores out;
  if (zero_context) {
    out.context = Tensor::zeros(1, config.encoder.resolved_context_dim(pair_dim));
  } else {
    Tensor s = support_matrix(config, support, params);
    out.context = encode_context(s, config.encoder, params);
  }

  auto [e_u, e_i] = embed(config.schema, user_ids_of(query_pairs), item_ids_of(query_pairs),
                          params);
  Tensor pair = concat(e_u, e_i, 1);
  Tensor c_h = hybrid_context(out.context, pair, config.generator, params);

  switch (config.modulation.variant) {
    case ModulationConfig::Variant::kWeight: {
      auto acts = backbone_forward(e_u, e_i, config.backbone, params, nullptr,
                                   /*include_head=*/false);
      out.scores = weight_modulation(c_h, acts.h_ui, config.modulation, params);
      break;
    }
    case ModulationConfig::Variant::kSigmoidLayer:
      out.scores = layer_mod_sigmoid(c_h, e_u, e_i, config.backbone, config.modulation, params);
      break;
    case ModulationConfig::Variant::kFilm:
      out.scores = layer_mod_film(c_h, e_u, e_i, config.backbone, config.modulation, params);
      break;
    case ModulationConfig::Variant::kSoftModular: {
      auto [scores, routes] = soft_modular_forward(c_h, e_u, e_i, config.modulation, params);
      out.scores = std::move(scores);
      out.routes = std::move(routes);
      break;
    }
  }
  return out;
}

Tensor cmml_loss_on_task(const BundleConfig& config, const TaskEpisode& episode, LossMode mode,
                         const ParamLookup& params) {
  Tensor loss;
  if (mode == LossMode::kHinge) {
    const std::size_t n_pairs = std::min(episode.query_pos.size(), episode.query_neg.size());
    if (n_pairs == 0) {
      throw std::invalid_argument("cmml_loss_on_task: task " + std::to_string(episode.task_id) +
                                  " has no positive/negative query pairs");
    }
    std::vector<Interaction> combined(episode.query_pos.begin(),
                                      episode.query_pos.begin() + static_cast<long>(n_pairs));
    combined.insert(combined.end(), episode.query_neg.begin(),
                    episode.query_neg.begin() + static_cast<long>(n_pairs));
    Tensor scores = score_queries(config, episode.support, combined, params).scores;
    std::vector<int> pos_rows(n_pairs), neg_rows(n_pairs);
    for (std::size_t i = 0; i < n_pairs; ++i) {
      pos_rows[i] = static_cast<int>(i);
      neg_rows[i] = static_cast<int>(n_pairs + i);
    }
    Tensor s_pos = take_rows(scores, pos_rows);
    Tensor s_neg = take_rows(scores, neg_rows);
    Tensor margin = relu(sub(add(Tensor::full(static_cast<int>(n_pairs), 1, 1.0), s_neg), s_pos));
    loss = mean(margin);
  } else {
    if (episode.query.empty()) {
      throw std::invalid_argument("cmml_loss_on_task: task " + std::to_string(episode.task_id) +
                                  " has an empty query set");
    }
    Tensor scores = score_queries(config, episode.support, episode.query, params).scores;
    Tensor diff = sub(scores, labels_of(episode.query));
    loss = mean(elementwise_mul(diff, diff));
  }
  if (!loss.all_finite()) {
    throw std::runtime_error("cmml_loss_on_task: non-finite loss on task " +
                             std::to_string(episode.task_id));
  }
  return loss;
}

void TrainConfig::validate() const {
  if (task_batch_size <= 0) throw std::invalid_argument("TrainConfig: batch size must be positive");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (lr < 0.0) throw std::invalid_argument("TrainConfig: learning rate must be >= 0");
}

EpochStats train_epoch(ModelBundle& bundle, const std::vector<Task>& tasks,
                       const TrainConfig& config, AdamState& optimizer,
                       const std::vector<int>& negative_pool, RngStream& rng) {
  config.validate();
  if (tasks.empty()) throw std::invalid_argument("train_epoch: no tasks");
  auto started = std::chrono::steady_clock::now();

  EpochStats stats;
  std::vector<int> order = rng.permutation(static_cast<int>(tasks.size()));
  double loss_sum = 0.0;

  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.task_batch_size)) {
    std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.task_batch_size));
    const int batch_size = static_cast<int>(end - start);

    Tape tape;
    ParamMap bound;
    for (auto& [name, p] : bundle.params) {
      if (bundle.is_trainable(name)) bound[name] = tape.watch(p);
    }
    ParamLookup params(bundle.params, bound);

    Tensor total;
    for (std::size_t b = start; b < end; ++b) {
      const Task& task = tasks[static_cast<std::size_t>(order[b])];
      RngStream task_rng(rng.next_u64(), static_cast<std::uint64_t>(task.task_id));
      TaskEpisode episode =
          episode_for_task(task, config.loss_mode, config.episode, negative_pool, task_rng);
      stats.permutation_draws += episode.support_permutation.empty() ? 0 : 1;
      Tensor task_loss = cmml_loss_on_task(bundle.config, episode, config.loss_mode, params);
      total = total.empty() ? task_loss : add(total, task_loss);
    }
    Tensor batch_loss = scale(total, 1.0 / batch_size);

    Gradients grads_result = tape.backward(batch_loss);
    ParamMap grads;
    for (auto& [name, p] : bound) grads[name] = grads_result.at(p);
    optimizer.step(bundle.params, grads);

    loss_sum += batch_loss.item() * batch_size;
    ++stats.batches;
    stats.tasks += batch_size;
  }

  stats.mean_loss = loss_sum / stats.tasks;
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return stats;
}

Tensor cmml_infer(const ModelBundle& bundle, const std::vector<Interaction>& support,
                  const std::vector<Interaction>& query_pairs, bool zero_context) {
  return cmml_infer_detailed(bundle, support, query_pairs, zero_context).scores;
}

TaskScores cmml_infer_detailed(const ModelBundle& bundle,
                               const std::vector<Interaction>& support,
                               const std::vector<Interaction>& query_pairs, bool zero_context) {
  ParamLookup params(bundle.params);
  return score_queries(bundle.config, support, query_pairs, params, zero_context);
}

Tensor task_context(const ModelBundle& bundle, const std::vector<Interaction>& support) {
  if (support.empty()) throw std::invalid_argument("task_context: empty support set");
  ParamLookup params(bundle.params);
  Tensor s = support_matrix(bundle.config, support, params);
  return encode_context(s, bundle.config.encoder, params);
}

// ---------------------------------------------------------------------------
// Baseline
// ---------------------------------------------------------------------------

void BaselineConfig::validate() const {
  if (inner_steps < 1) throw std::invalid_argument("BaselineConfig: inner steps must be >= 1");
  if (inner_lr < 0.0) throw std::invalid_argument("BaselineConfig: inner lr must be >= 0");
}

BaselineBundle BaselineBundle::build(const FeatureSchema& schema, const BackboneConfig& config,
                                     std::uint64_t seed) {
  schema.validate();
  config.validate();
  BaselineBundle bundle;
  bundle.schema = schema;
  bundle.backbone = config;
  RngStream embed_rng(seed, 100), backbone_rng(seed, 101);
  init_embedding_params(schema, bundle.params, embed_rng);
  init_backbone_params(config, schema.pair_dim(), bundle.params, backbone_rng);
  return bundle;
}

BaselineBundle BaselineBundle::build(const FeatureSchema& schema, const BackboneConfig& config,
                                     std::uint64_t seed, const Tensor& user_table,
                                     const Tensor& item_table) {
  BaselineBundle bundle = build(schema, config, seed);
  if (schema.user_fields.size() != 1 || schema.item_fields.size() != 1) {
    throw std::invalid_argument("BaselineBundle: preloaded tables need single-field entities");
  }
  bundle.params["embed.user." + schema.user_fields[0].name] = user_table;
  bundle.params["embed.item." + schema.item_fields[0].name] = item_table;
  return bundle;
}

namespace {

Tensor baseline_scores(const BaselineBundle& bundle, const std::vector<Interaction>& rows,
                       const ParamLookup& params) {
  auto [e_u, e_i] = embed(bundle.schema, user_ids_of(rows), item_ids_of(rows), params);
  return backbone_forward(e_u, e_i, bundle.backbone, params).score;
}

Tensor baseline_loss(const BaselineBundle& bundle, const std::vector<Interaction>& rows,
                     LossMode mode, const ParamLookup& params) {
  if (mode == LossMode::kMse) {
    Tensor diff = sub(baseline_scores(bundle, rows, params), labels_of(rows));
    return mean(elementwise_mul(diff, diff));
  }
  std::vector<Interaction> pos, neg;
  for (const Interaction& x : rows) (x.label > 0 ? pos : neg).push_back(x);
  std::size_t n_pairs = std::min(pos.size(), neg.size());
  if (n_pairs == 0) {
    throw std::invalid_argument("baseline_loss: need both positive and negative examples");
  }
  pos.resize(n_pairs);
  neg.resize(n_pairs);
  std::vector<Interaction> combined = pos;
  combined.insert(combined.end(), neg.begin(), neg.end());
  Tensor scores = baseline_scores(bundle, combined, params);
  std::vector<int> pos_rows(n_pairs), neg_rows(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    pos_rows[i] = static_cast<int>(i);
    neg_rows[i] = static_cast<int>(n_pairs + i);
  }
  Tensor margin = relu(sub(add(Tensor::full(static_cast<int>(n_pairs), 1, 1.0),
                               take_rows(scores, neg_rows)),
                           take_rows(scores, pos_rows)));
  return mean(margin);
}

bool in_scope(const std::string& name, BaselineConfig::Scope scope) {
  if (scope == BaselineConfig::Scope::kHeadOnly) return name.rfind("backbone.out.", 0) == 0;
  return name.rfind("backbone.", 0) == 0;
}

// k detached gradient steps on the support loss over the adaptable scope.
ParamMap inner_adapt(const BaselineBundle& bundle, const std::vector<Interaction>& support,
                     LossMode mode, const BaselineConfig& config, double* final_loss) {
  ParamMap adapted;
  for (const auto& [name, p] : bundle.params) {
    if (in_scope(name, config.scope)) adapted[name] = p;
  }
  double last = 0.0;
  for (int step = 0; step < config.inner_steps; ++step) {
    Tape tape;
    ParamMap bound;
    for (auto& [name, p] : adapted) bound[name] = tape.watch(p);
    ParamLookup params(bundle.params, bound);
    Tensor loss = baseline_loss(bundle, support, mode, params);
    if (!loss.all_finite()) {
      throw std::runtime_error("baseline adaptation: non-finite inner loss");
    }
    last = loss.item();
    Gradients grads = tape.backward(loss);
    for (auto& [name, p] : adapted) {
      Tensor g = grads.at(bound[name]);
      std::vector<double> v = p.values();
      const auto& gv = g.values();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= config.inner_lr * gv[i];
      p = Tensor(p.rows(), p.cols(), std::move(v));
    }
  }
  if (final_loss) *final_loss = last;
  return adapted;
}

}  // namespace

AdaptResult baseline_adapt_and_score(const BaselineBundle& bundle,
                                     const std::vector<Interaction>& support,
                                     const std::vector<Interaction>& query_pairs, LossMode mode,
                                     const BaselineConfig& config) {
  config.validate();
  if (support.empty()) throw std::invalid_argument("baseline_adapt_and_score: empty support");
  AdaptResult result;
  ParamMap adapted = inner_adapt(bundle, support, mode, config, &result.final_support_loss);

  double sq = 0.0;
  for (const auto& [name, p] : adapted) {
    const auto& before = bundle.params.at(name).values();
    const auto& after = p.values();
    for (std::size_t i = 0; i < after.size(); ++i) {
      double d = after[i] - before[i];
      sq += d * d;
    }
  }
  result.delta_norm = std::sqrt(sq);

  ParamLookup params(bundle.params, adapted);
  result.scores = baseline_scores(bundle, query_pairs, params);
  return result;
}

EpochStats train_epoch_baseline(BaselineBundle& bundle, const std::vector<Task>& tasks,
                                const TrainConfig& config, const BaselineConfig& baseline,
                                AdamState& optimizer, const std::vector<int>& negative_pool,
                                RngStream& rng) {
  config.validate();
  baseline.validate();
  if (tasks.empty()) throw std::invalid_argument("train_epoch_baseline: no tasks");
  auto started = std::chrono::steady_clock::now();

  EpochStats stats;
  std::vector<int> order = rng.permutation(static_cast<int>(tasks.size()));
  double loss_sum = 0.0;

  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.task_batch_size)) {
    std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.task_batch_size));
    const int batch_size = static_cast<int>(end - start);

    Tape tape;
    ParamMap bound;
    bool frozen = bundle.backbone.frozen_embeddings;
    for (auto& [name, p] : bundle.params) {
      if (frozen && name.rfind("embed.", 0) == 0) continue;
      bound[name] = tape.watch(p);
    }

    Tensor total;
    for (std::size_t b = start; b < end; ++b) {
      const Task& task = tasks[static_cast<std::size_t>(order[b])];
      RngStream task_rng(rng.next_u64(), static_cast<std::uint64_t>(task.task_id));
      TaskEpisode episode =
          episode_for_task(task, config.loss_mode, config.episode, negative_pool, task_rng);

      // First-order outer gradient: the detached inner-loop delta shifts the
      // watched initial parameters, so dL/d(adapted) lands on the initials.
      ParamMap adapted = inner_adapt(bundle, episode.support, config.loss_mode, baseline, nullptr);
      ParamMap shifted = bound;
      for (auto& [name, p] : adapted) {
        const auto& before = bundle.params.at(name).values();
        std::vector<double> delta = p.values();
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= before[i];
        shifted[name] = add(bound.at(name), Tensor(p.rows(), p.cols(), std::move(delta)));
      }
      ParamLookup params(bundle.params, shifted);

      Tensor task_loss;
      if (config.loss_mode == LossMode::kHinge) {
        std::vector<Interaction> rows = episode.query_pos;
        rows.insert(rows.end(), episode.query_neg.begin(), episode.query_neg.end());
        task_loss = baseline_loss(bundle, rows, config.loss_mode, params);
      } else {
        task_loss = baseline_loss(bundle, episode.query, config.loss_mode, params);
      }
      total = total.empty() ? task_loss : add(total, task_loss);
    }
    Tensor batch_loss = scale(total, 1.0 / batch_size);
    Gradients grads_result = tape.backward(batch_loss);
    ParamMap grads;
    for (auto& [name, p] : bound) grads[name] = grads_result.at(p);
    optimizer.step(bundle.params, grads);

    loss_sum += batch_loss.item() * batch_size;
    ++stats.batches;
    stats.tasks += batch_size;
  }

  stats.mean_loss = loss_sum / stats.tasks;
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return stats;
}

}  // namespace cmml
