#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmml/backbone.hpp"
#include "cmml/bench.hpp"
#include "cmml/context.hpp"
#include "cmml/data.hpp"
#include "cmml/metalearn.hpp"
#include "cmml/modulation.hpp"

namespace cmml {

// Every runtime knob in one structure. Defaults mirror the reference
// hyper-parameters: (64,64,64) backbone, GRU + (128,128) encoder MLP,
// (64,64,64) FiLM hypernetwork, k=3/m=4/d=32 soft modularization, Adam at
// 1e-4, 64/128 episode sampling, 50-record user trim with 10-item queries.
// Unknown keys in the config file or overrides are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  struct Data {
    std::string setting = "scenario";  // "scenario" | "user"
    std::string ratings_csv;
    std::string tasks_csv;
    std::string user_embeddings_csv;
    std::string item_embeddings_csv;
    std::string label_mode = "auto";  // "auto" | "implicit" | "rating"
    int min_items = 100;
    int max_items = 1000;
    double train_fraction = 0.75;
    int per_user_cap = 50;
    int query_size = 10;
  } data;

  struct EpisodeCfg {
    int support_pos = 64;
    int query_pos = 128;
  } episode;

  struct Synthetic {
    int latent_dim = 8;
    int feature_dim = 8;
    double noise_sd = 0.1;
    int support_size = 20;
    int query_size = 20;
    int task_count = 500;
    bool ctr = false;
  } synthetic;

  struct Mf {
    int dim = 32;
    int epochs = 20;
    double lr = 0.01;
    double reg = 0.01;
  } mf;

  struct Model {
    int embed_dim = 32;
    std::vector<int> hidden{64, 64, 64};
    std::string encoder = "sequential";
    std::vector<int> encoder_mlp{128, 128};
    int gru_hidden = 64;
    int context_dim = 0;
    bool include_labels = true;
    std::string generator = "dot";
    std::vector<int> generator_mlp{64, 64};
    int hybrid_dim = 0;
    std::string modulation = "film";
    std::vector<int> hyper_hidden{64, 64, 64};
    int soft_layers = 3;
    int soft_modules = 4;
    int soft_width = 32;
    int route_width = 64;
    std::string embeddings = "auto";  // "auto" | "frozen" | "learned"
  } model;

  struct Train {
    std::string method = "cmml";  // "cmml" | "baseline"
    int epochs = 100;
    int batch_size = 16;
    double lr = 1e-4;
    std::string loss = "auto";  // "auto" | "hinge" | "mse"
    double val_fraction = 0.1;
  } train;

  struct Baseline {
    int inner_steps = 5;
    double inner_lr = 0.01;
    std::string scope = "hidden+head";  // "hidden+head" | "head-only"
  } baseline;

  struct Eval {
    std::vector<int> recall_n{10, 20, 50};
    int ndcg_k = 3;
    int neg_per_pos = 4;
  } eval;

  struct Bench {
    std::vector<int> m_values{64, 256};
    std::vector<int> k_values{1, 5, 10, 20};
    int repeats = 7;
    int warmup = 2;
    double inner_lr = 0.01;
  } bench;

  static RunConfig from_file(const std::string& path);
  void apply_override(const std::string& key, const std::string& value);

  // Canonical single-line JSON of the full effective configuration.
  std::string to_json_string() const;

  bool scenario_setting() const { return data.setting == "scenario"; }
  LabelMode resolved_label_mode() const;
  LossMode resolved_loss() const;
  bool resolved_frozen_embeddings() const;

  BackboneConfig backbone_config() const;
  EncoderConfig encoder_config() const;
  GeneratorConfig generator_config() const;
  ModulationConfig modulation_config() const;
  BundleConfig bundle_config(const FeatureSchema& schema) const;
  TrainConfig train_config() const;
  BaselineConfig baseline_config() const;
  EpisodeOptions episode_options() const;
  BenchOptions bench_options() const;

  void validate() const;
};

}  // namespace cmml
