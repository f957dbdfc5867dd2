// Command-line entry point: data preparation, meta-training, evaluation,
// benchmarking, and context/route exports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "cmml/bench.hpp"
#include "cmml/checkpoint.hpp"
#include "cmml/config.hpp"
#include "cmml/data.hpp"
#include "cmml/metalearn.hpp"
#include "cmml/metrics.hpp"

namespace fs = std::filesystem;
using namespace cmml;

namespace {

struct CliFlags {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  std::string encoder, generator, modulation, loss;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common_flags(CLI::App* cmd, CliFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_option("--seed", flags.seed, "random seed")->each([&](const std::string&) {
    flags.seed_set = true;
  });
  cmd->add_option("--encoder", flags.encoder, "pooling-mean|pooling-max|sequential");
  cmd->add_option("--generator", flags.generator, "dot|mlp");
  cmd->add_option("--modulation", flags.modulation, "weight|sigmoid|film|soft");
  cmd->add_option("--loss", flags.loss, "hinge|mse");
  cmd->allow_extras();
}

RunConfig resolve_config(const CLI::App* cmd, const CliFlags& flags) {
  RunConfig cfg;
  if (!flags.config_path.empty()) cfg = RunConfig::from_file(flags.config_path);
  if (flags.seed_set) cfg.seed = flags.seed;
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (!flags.encoder.empty()) cfg.model.encoder = flags.encoder;
  if (!flags.generator.empty()) cfg.model.generator = flags.generator;
  if (!flags.modulation.empty()) cfg.model.modulation = flags.modulation;
  if (!flags.loss.empty()) cfg.train.loss = flags.loss;
  for (const std::string& extra : cmd->remaining()) {
    if (extra.rfind("--", 0) != 0) throw std::invalid_argument("unexpected argument: " + extra);
    auto eq = extra.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("override must be --key=value, got: " + extra);
    }
    cfg.apply_override(extra.substr(2, eq - 2), extra.substr(eq + 1));
  }
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  return cfg;
}

std::string default_path(const RunConfig& cfg, const std::string& explicit_path,
                         const std::string& name) {
  if (!explicit_path.empty()) return explicit_path;
  return (fs::path(cfg.out_dir) / name).string();
}

// User-specific setting: user identity reaches the model only through the
// support context, so every example shares embedding row 0.
void remap_user_ids(TaskSplit& split) {
  for (auto* tasks : {&split.train, &split.test}) {
    for (Task& t : *tasks) {
      for (auto* rows : {&t.support, &t.query}) {
        for (Interaction& x : *rows) x.user_id = 0;
      }
    }
  }
}

std::vector<int> distinct_items(const TaskSplit& split) {
  std::set<int> items;
  for (const auto* tasks : {&split.train, &split.test}) {
    for (const Task& t : *tasks) {
      for (const auto* rows : {&t.support, &t.query}) {
        for (const Interaction& x : *rows) items.insert(x.item_id);
      }
    }
  }
  return {items.begin(), items.end()};
}

int max_item_id(const TaskSplit& split) {
  int m = -1;
  for (int id : distinct_items(split)) m = std::max(m, id);
  return m;
}

struct LoadedModel {
  TaskSplit tasks;
  FeatureSchema schema;
  Tensor user_table;  // empty when embeddings are learned
  Tensor item_table;
  std::vector<int> negative_pool;
};

LoadedModel load_model_inputs(const RunConfig& cfg) {
  LoadedModel m;
  std::string tasks_path = default_path(cfg, cfg.data.tasks_csv, "tasks.csv");
  if (!fs::exists(tasks_path)) {
    throw std::runtime_error("tasks file not found: " + tasks_path +
                             " (run `prepare` or `gen-synthetic` first, or set data.tasks_csv)");
  }
  TaskSetting setting = cfg.scenario_setting() ? TaskSetting::kScenario : TaskSetting::kUser;
  m.tasks = read_tasks_csv(tasks_path, setting);
  if (!cfg.scenario_setting()) remap_user_ids(m.tasks);
  m.negative_pool = distinct_items(m.tasks);

  bool frozen = cfg.resolved_frozen_embeddings();
  std::string user_csv = default_path(cfg, cfg.data.user_embeddings_csv, "user_embeddings.csv");
  std::string item_csv = default_path(cfg, cfg.data.item_embeddings_csv, "item_embeddings.csv");
  bool have_tables = fs::exists(user_csv) && fs::exists(item_csv);
  if (frozen && !have_tables) {
    throw std::runtime_error("frozen embeddings requested but tables are missing: " + user_csv +
                             ", " + item_csv);
  }
  if (have_tables) {
    m.user_table = read_embedding_csv(user_csv);
    m.item_table = read_embedding_csv(item_csv);
    int needed = max_item_id(m.tasks);
    if (m.item_table.rows() <= needed) {
      throw std::runtime_error("item embedding table covers ids < " +
                               std::to_string(m.item_table.rows()) + " but tasks reference id " +
                               std::to_string(needed));
    }
    m.schema.user_fields = {{"user_id", m.user_table.rows(), m.user_table.cols()}};
    m.schema.item_fields = {{"item_id", m.item_table.rows(), m.item_table.cols()}};
  } else {
    int user_vocab = cfg.scenario_setting() ? 0 : 1;
    if (cfg.scenario_setting()) {
      for (const auto* tasks : {&m.tasks.train, &m.tasks.test}) {
        for (const Task& t : *tasks) {
          for (const auto* rows : {&t.support, &t.query}) {
            for (const Interaction& x : *rows) user_vocab = std::max(user_vocab, x.user_id + 1);
          }
        }
      }
    }
    m.schema.user_fields = {{"user_id", std::max(user_vocab, 1), cfg.model.embed_dim}};
    m.schema.item_fields = {{"item_id", max_item_id(m.tasks) + 1, cfg.model.embed_dim}};
  }
  return m;
}

ModelBundle bundle_for(const RunConfig& cfg, const LoadedModel& m) {
  BundleConfig bc = cfg.bundle_config(m.schema);
  if (!m.user_table.empty()) {
    return ModelBundle::build(bc, cfg.seed, m.user_table, m.item_table);
  }
  return ModelBundle::build(bc, cfg.seed);
}

FeatureSchema schema_from_params(const ParamMap& params) {
  FeatureSchema schema;
  for (const auto& [name, p] : params) {
    if (name.rfind("embed.user.", 0) == 0) {
      schema.user_fields.push_back({name.substr(11), p.rows(), p.cols()});
    } else if (name.rfind("embed.item.", 0) == 0) {
      schema.item_fields.push_back({name.substr(11), p.rows(), p.cols()});
    }
  }
  schema.validate();
  return schema;
}

ModelBundle bundle_from_checkpoint(const RunConfig& cfg, const Checkpoint& ck) {
  ModelBundle bundle;
  bundle.config = cfg.bundle_config(schema_from_params(ck.params));
  bundle.params = ck.params;
  return bundle;
}

// Fixed-seed episode for validation and evaluation; comparable across epochs.
TaskEpisode eval_episode(const Task& task, const RunConfig& cfg, LossMode mode,
                         const std::vector<int>& pool) {
  RngStream rng(cfg.seed, 0xE7A1u ^ (static_cast<std::uint64_t>(task.task_id) << 8));
  return episode_for_task(task, mode, cfg.episode_options(), pool, rng);
}

double validation_loss(const ModelBundle& bundle, const std::vector<Task>& tasks,
                       const RunConfig& cfg, const std::vector<int>& pool) {
  if (tasks.empty()) return 0.0;
  LossMode mode = cfg.resolved_loss();
  ParamLookup params(bundle.params);
  double sum = 0.0;
  for (const Task& task : tasks) {
    TaskEpisode ep = eval_episode(task, cfg, mode, pool);
    sum += cmml_loss_on_task(bundle.config, ep, mode, params).item();
  }
  return sum / static_cast<double>(tasks.size());
}

Checkpoint make_checkpoint(const RunConfig& cfg, const ParamMap& params, const AdamState& adam,
                           int epoch) {
  Checkpoint ck;
  ck.epoch = epoch;
  ck.config_json = cfg.to_json_string();
  ck.params = params;
  ck.adam_m = adam.first_moments();
  ck.adam_v = adam.second_moments();
  ck.adam_t = adam.step_count();
  return ck;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_gen_synthetic(const RunConfig& cfg) {
  SyntheticTaskSpec spec;
  spec.latent_dim = cfg.synthetic.latent_dim;
  spec.feature_dim = cfg.synthetic.feature_dim;
  spec.noise_sd = cfg.synthetic.noise_sd;
  spec.support_size = cfg.synthetic.support_size;
  spec.query_size = cfg.synthetic.query_size;
  spec.task_count = cfg.synthetic.task_count;
  spec.ctr_mode = cfg.synthetic.ctr;
  spec.seed = cfg.seed;
  SyntheticData data = generate_synthetic_tasks(spec);
  TaskSplit split = split_tasks(data.tasks, cfg.data.train_fraction, cfg.seed);

  fs::path out(cfg.out_dir);
  write_tasks_csv((out / "tasks.csv").string(), split, TaskSetting::kUser);
  write_embedding_csv((out / "item_embeddings.csv").string(), data.item_features);
  write_embedding_csv((out / "user_embeddings.csv").string(), data.user_features);
  {
    std::ofstream oracle(out / "oracle.csv");
    oracle << "task_id";
    for (int j = 0; j < spec.latent_dim; ++j) oracle << ",w" << j;
    oracle << "\n";
    char buf[32];
    for (std::size_t t = 0; t < data.hidden_vectors.size(); ++t) {
      oracle << t;
      for (double v : data.hidden_vectors[t]) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        oracle << ',' << buf;
      }
      oracle << "\n";
    }
  }
  std::cout << "generated " << data.tasks.size() << " synthetic tasks (" << split.train.size()
            << " train, " << split.test.size() << " test) in " << cfg.out_dir << "\n";
  return 0;
}

int cmd_prepare(const RunConfig& cfg) {
  if (cfg.data.ratings_csv.empty()) {
    throw std::runtime_error("prepare needs data.ratings_csv");
  }
  CsvSchema schema;
  schema.label_mode = cfg.resolved_label_mode();
  LoadReport report = load_interactions_csv(cfg.data.ratings_csv, schema);
  if (report.skipped > 0) {
    std::cout << "warning: skipped " << report.skipped << " malformed rows\n";
  }

  fs::path out(cfg.out_dir);
  TaskSplit split;
  if (cfg.scenario_setting()) {
    ScenarioTaskOptions options;
    options.min_items = cfg.data.min_items;
    options.max_items = cfg.data.max_items;
    options.train_fraction = cfg.data.train_fraction;
    options.seed = cfg.seed;
    split = build_scenario_tasks(report.interactions, options);

    // implicit feedback has no informative magnitude, so the factorization
    // sees positives against uniformly sampled zero-label pairs
    std::vector<Interaction> mf_rows = report.interactions;
    if (schema.label_mode == LabelMode::kImplicit) {
      int max_item = 0, max_user = 0;
      for (const auto& x : report.interactions) {
        max_item = std::max(max_item, x.item_id);
        max_user = std::max(max_user, x.user_id);
      }
      std::set<std::pair<int, int>> seen;
      for (const auto& x : report.interactions) seen.insert({x.user_id, x.item_id});
      RngStream rng(cfg.seed, 0x4E67);
      for (std::size_t i = 0; i < report.interactions.size(); ++i) {
        for (int attempt = 0; attempt < 100; ++attempt) {
          Interaction neg;
          neg.user_id = rng.uniform_int(max_user + 1);
          neg.item_id = rng.uniform_int(max_item + 1);
          neg.label = 0.0;
          if (seen.insert({neg.user_id, neg.item_id}).second) {
            mf_rows.push_back(neg);
            break;
          }
        }
      }
    }
    MfConfig mf;
    mf.dim = cfg.mf.dim;
    mf.epochs = cfg.mf.epochs;
    mf.lr = cfg.mf.lr;
    mf.reg = cfg.mf.reg;
    mf.seed = cfg.seed;
    MfTables tables = mf_pretrain_embeddings(mf_rows, mf);
    write_embedding_csv((out / "user_embeddings.csv").string(), tables.user);
    write_embedding_csv((out / "item_embeddings.csv").string(), tables.item);
  } else {
    UserTaskOptions options;
    options.per_user_cap = cfg.data.per_user_cap;
    options.query_size = cfg.data.query_size;
    options.train_fraction = cfg.data.train_fraction;
    options.seed = cfg.seed;
    split = build_user_tasks(report.interactions, options);
  }
  write_tasks_csv((out / "tasks.csv").string(), split,
                  cfg.scenario_setting() ? TaskSetting::kScenario : TaskSetting::kUser);
  std::cout << "prepared " << split.train.size() << " train and " << split.test.size()
            << " test tasks in " << cfg.out_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  LoadedModel inputs = load_model_inputs(cfg);
  if (inputs.tasks.train.empty()) throw std::runtime_error("train: no meta-training tasks");
  TrainConfig tc = cfg.train_config();

  // hold out validation tasks for checkpoint selection
  TaskSplit val_split = split_tasks(inputs.tasks.train, 1.0 - cfg.train.val_fraction, cfg.seed + 1);
  const std::vector<Task>& train_tasks = val_split.train;
  const std::vector<Task>& val_tasks = val_split.test;

  fs::path out(cfg.out_dir);
  std::ofstream log(out / "train_log.csv");
  log << "epoch,mean_loss,tasks,seconds\n";

  RngStream rng(cfg.seed, 0x7124);
  char buf[32];

  if (cfg.train.method == "baseline") {
    BaselineBundle bundle =
        !inputs.user_table.empty()
            ? BaselineBundle::build(inputs.schema, cfg.backbone_config(), cfg.seed,
                                    inputs.user_table, inputs.item_table)
            : BaselineBundle::build(inputs.schema, cfg.backbone_config(), cfg.seed);
    AdamState adam(bundle.params, {.lr = tc.lr});
    BaselineConfig inner = cfg.baseline_config();
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
      EpochStats stats = train_epoch_baseline(bundle, train_tasks, tc, inner, adam,
                                              inputs.negative_pool, rng);
      std::snprintf(buf, sizeof buf, "%.17g", stats.mean_loss);
      log << epoch << ',' << buf << ',' << stats.tasks << ',' << stats.seconds << "\n";
      log.flush();
    }
    save_checkpoint((out / "checkpoint_final.ckpt").string(),
                    make_checkpoint(cfg, bundle.params, adam, tc.epochs));
    std::cout << "baseline training done; checkpoint_final.ckpt written\n";
    return 0;
  }

  ModelBundle bundle = bundle_for(cfg, inputs);
  AdamState adam(bundle.params, {.lr = tc.lr});
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    EpochStats stats = train_epoch(bundle, train_tasks, tc, adam, inputs.negative_pool, rng);
    std::snprintf(buf, sizeof buf, "%.17g", stats.mean_loss);
    log << epoch << ',' << buf << ',' << stats.tasks << ',' << stats.seconds << "\n";
    log.flush();
    double val = val_tasks.empty()
                     ? stats.mean_loss
                     : validation_loss(bundle, val_tasks, cfg, inputs.negative_pool);
    if (val < best_val) {
      best_val = val;
      best_epoch = epoch;
      save_checkpoint((out / "checkpoint_best.ckpt").string(),
                      make_checkpoint(cfg, bundle.params, adam, epoch));
    }
  }
  save_checkpoint((out / "checkpoint_final.ckpt").string(),
                  make_checkpoint(cfg, bundle.params, adam, tc.epochs));
  std::cout << "training done; best validation loss " << best_val << " at epoch " << best_epoch
            << "\n";
  return 0;
}

ModelBundle load_or_fresh_bundle(const RunConfig& cfg, const std::string& checkpoint_flag,
                                 const LoadedModel& inputs) {
  std::string path = checkpoint_flag;
  if (path.empty()) {
    fs::path best = fs::path(cfg.out_dir) / "checkpoint_best.ckpt";
    fs::path final_ = fs::path(cfg.out_dir) / "checkpoint_final.ckpt";
    if (fs::exists(best)) {
      path = best.string();
    } else if (fs::exists(final_)) {
      path = final_.string();
    }
  } else if (!fs::exists(path)) {
    throw std::runtime_error("checkpoint not found: " + path);
  }
  if (path.empty()) {
    std::cout << "note: no checkpoint found, evaluating an untrained bundle\n";
    return bundle_for(cfg, inputs);
  }
  Checkpoint ck = load_checkpoint(path);
  ModelBundle bundle = bundle_from_checkpoint(cfg, ck);
  // the checkpoint's name set must match what the config would build
  ModelBundle fresh = bundle_for(cfg, inputs);
  if (fresh.params.size() != bundle.params.size()) {
    throw std::runtime_error("checkpoint " + path + " does not match the configured model (" +
                             std::to_string(bundle.params.size()) + " vs " +
                             std::to_string(fresh.params.size()) + " parameters)");
  }
  for (const auto& [name, p] : fresh.params) {
    if (!bundle.params.count(name)) {
      throw std::runtime_error("checkpoint " + path + " is missing parameter " + name);
    }
  }
  std::cout << "loaded checkpoint " << path << " (epoch " << ck.epoch << ")\n";
  return bundle;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_flag) {
  LoadedModel inputs = load_model_inputs(cfg);
  if (inputs.tasks.test.empty()) throw std::runtime_error("eval: no meta-test tasks");
  ModelBundle bundle = load_or_fresh_bundle(cfg, checkpoint_flag, inputs);

  EvalReport report;
  LossMode mode = cfg.resolved_loss();
  for (const Task& task : inputs.tasks.test) {
    if (mode == LossMode::kMse) {
      Tensor scores = cmml_infer(bundle, task.support, task.query);
      std::vector<double> preds, labels;
      std::vector<RatedItem> rated;
      for (std::size_t i = 0; i < task.query.size(); ++i) {
        preds.push_back(scores.at(static_cast<int>(i), 0));
        labels.push_back(task.query[i].label);
        rated.push_back({task.query[i].item_id, preds.back(), task.query[i].label});
      }
      report.add(task.task_id, "mae", mae(preds, labels));
      report.add(task.task_id, "ndcg@" + std::to_string(cfg.eval.ndcg_k),
                 ndcg_at_k(rated, cfg.eval.ndcg_k));
    } else {
      TaskEpisode ep = eval_episode(task, cfg, mode, inputs.negative_pool);
      // candidate catalog: query positives plus neg_per_pos sampled negatives
      RngStream rng(cfg.seed, 0xCAFE ^ static_cast<std::uint64_t>(task.task_id));
      std::vector<Interaction> candidates = ep.query_pos;
      std::set<std::pair<int, int>> positive_pairs;
      std::set<int> positive_items;
      for (const auto& x : ep.query_pos) {
        positive_pairs.insert({x.user_id, x.item_id});
        positive_items.insert(x.item_id);
      }
      int wanted = static_cast<int>(ep.query_pos.size()) * cfg.eval.neg_per_pos;
      int attempts = 0;
      while (wanted > 0 && attempts < 100000) {
        ++attempts;
        Interaction neg = ep.query_pos[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(ep.query_pos.size())))];
        neg.item_id = inputs.negative_pool[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(inputs.negative_pool.size())))];
        neg.label = -1.0;
        if (positive_pairs.count({neg.user_id, neg.item_id})) continue;
        if (positive_items.count(neg.item_id)) continue;  // keep item-level recall clean
        candidates.push_back(neg);
        --wanted;
      }
      Tensor scores = cmml_infer(bundle, ep.support, candidates);
      std::map<int, double> best_score;  // item-level score: max over candidate rows
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        double s = scores.at(static_cast<int>(i), 0);
        auto it = best_score.find(candidates[i].item_id);
        if (it == best_score.end() || s > it->second) best_score[candidates[i].item_id] = s;
      }
      std::vector<ScoredItem> scored;
      for (const auto& [item, s] : best_score) scored.push_back({item, s});
      for (int n : cfg.eval.recall_n) {
        if (n <= static_cast<int>(scored.size())) {
          report.add(task.task_id, "recall@" + std::to_string(n),
                     recall_at_n(scored, positive_items, n));
        }
      }
    }
  }
  std::string path = (fs::path(cfg.out_dir) / "eval_report.csv").string();
  report.write_csv(path);
  std::cout << "eval report written to " << path << "\n";
  for (const auto& [metric, value] : report.aggregates()) {
    std::cout << "  " << metric << " = " << value << "\n";
  }
  return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& checkpoint_flag) {
  LoadedModel inputs = load_model_inputs(cfg);
  ModelBundle bundle = load_or_fresh_bundle(cfg, checkpoint_flag, inputs);
  BaselineBundle baseline =
      !inputs.user_table.empty()
          ? BaselineBundle::build(inputs.schema, cfg.backbone_config(), cfg.seed,
                                  inputs.user_table, inputs.item_table)
          : BaselineBundle::build(inputs.schema, cfg.backbone_config(), cfg.seed);

  BenchReport report = run_inference_bench(bundle, baseline, cfg.bench_options());
  std::string path = (fs::path(cfg.out_dir) / "bench.csv").string();
  report.write_csv(path);
  std::cout << "bench results written to " << path << "\n";
  for (const auto& [m, fit] : report.baseline_slope_by_m) {
    std::cout << "  m=" << m << ": baseline time vs k slope " << fit.slope << " s/step, R^2 "
              << fit.r_squared << "\n";
  }
  return 0;
}

int cmd_export_context(const RunConfig& cfg, const std::string& checkpoint_flag) {
  LoadedModel inputs = load_model_inputs(cfg);
  ModelBundle bundle = load_or_fresh_bundle(cfg, checkpoint_flag, inputs);
  std::string path = (fs::path(cfg.out_dir) / "context.csv").string();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  int d_c = bundle.config.encoder.resolved_context_dim(bundle.config.schema.pair_dim());
  out << "task_id";
  for (int j = 0; j < d_c; ++j) out << ",c" << j;
  out << "\n";
  char buf[32];
  LossMode mode = cfg.resolved_loss();
  for (const auto* tasks : {&inputs.tasks.train, &inputs.tasks.test}) {
    for (const Task& task : *tasks) {
      std::vector<Interaction> support = task.support;
      if (task.setting == TaskSetting::kScenario) {
        support = eval_episode(task, cfg, mode, inputs.negative_pool).support;
      }
      Tensor c = task_context(bundle, support);
      out << task.task_id;
      for (int j = 0; j < c.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", c.at(0, j));
        out << ',' << buf;
      }
      out << "\n";
    }
  }
  std::cout << "context export written to " << path << "\n";
  return 0;
}

int cmd_export_routes(const RunConfig& cfg, const std::string& checkpoint_flag) {
  if (cfg.model.modulation != "soft") {
    throw std::runtime_error("export-routes needs model.modulation=soft");
  }
  LoadedModel inputs = load_model_inputs(cfg);
  ModelBundle bundle = load_or_fresh_bundle(cfg, checkpoint_flag, inputs);
  std::string path = (fs::path(cfg.out_dir) / "routes.csv").string();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "task_id,layer,from_module,to_module,probability\n";
  char buf[32];
  LossMode mode = cfg.resolved_loss();
  for (const auto* tasks : {&inputs.tasks.train, &inputs.tasks.test}) {
    for (const Task& task : *tasks) {
      TaskEpisode ep;
      if (task.setting == TaskSetting::kScenario) {
        ep = eval_episode(task, cfg, mode, inputs.negative_pool);
      } else {
        ep.support = task.support;
        ep.query = task.query;
      }
      const auto& queries = ep.query.empty() ? ep.query_pos : ep.query;
      TaskScores ts = cmml_infer_detailed(bundle, ep.support, queries);
      const int m = bundle.config.modulation.soft_modules;
      const int k = bundle.config.modulation.soft_layers;
      // mean route over the task's query examples
      for (int layer = 0; layer < k; ++layer) {
        for (int to = 0; to < m; ++to) {
          for (int from = 0; from < m; ++from) {
            double sum = 0.0;
            for (const RouteTensor& r : ts.routes) sum += r.p[static_cast<std::size_t>(layer)].at(to, from);
            std::snprintf(buf, sizeof buf, "%.17g", sum / static_cast<double>(ts.routes.size()));
            out << task.task_id << ',' << layer << ',' << from << ',' << to << ',' << buf << "\n";
          }
        }
      }
    }
  }
  std::cout << "route export written to " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CMML: contextual-modulation meta learning for cold-start recommendation"};
  app.require_subcommand(1);

  std::map<std::string, CliFlags> flags;
  std::map<std::string, CLI::App*> commands;
  for (const char* name : {"gen-synthetic", "prepare", "train", "eval", "bench", "export-context",
                           "export-routes"}) {
    CLI::App* cmd = app.add_subcommand(name, "");
    add_common_flags(cmd, flags[name]);
    commands[name] = cmd;
  }
  commands["gen-synthetic"]->description("generate synthetic tasks with a known oracle");
  commands["prepare"]->description("build meta-tasks (and MF embeddings) from a ratings CSV");
  commands["train"]->description("meta-train CMML or the gradient baseline");
  commands["eval"]->description("evaluate a checkpoint on the meta-test tasks");
  commands["bench"]->description("benchmark feed-forward vs gradient adaptation cost");
  commands["export-context"]->description("export per-task context vectors");
  commands["export-routes"]->description("export soft-modular route probabilities");
  std::string checkpoint_flag;
  for (const char* name : {"eval", "bench", "export-context", "export-routes"}) {
    commands[name]->add_option("--checkpoint", checkpoint_flag, "checkpoint file to load");
  }

  try {
    app.parse(argc, argv);
    for (auto& [name, cmd] : commands) {
      if (!cmd->parsed()) continue;
      RunConfig cfg = resolve_config(cmd, flags[name]);
      if (name == "gen-synthetic") return cmd_gen_synthetic(cfg);
      if (name == "prepare") return cmd_prepare(cfg);
      if (name == "train") return cmd_train(cfg);
      if (name == "eval") return cmd_eval(cfg, checkpoint_flag);
      if (name == "bench") return cmd_bench(cfg, checkpoint_flag);
      if (name == "export-context") return cmd_export_context(cfg, checkpoint_flag);
      if (name == "export-routes") return cmd_export_routes(cfg, checkpoint_flag);
    }
    throw std::runtime_error("no command given");
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
