#include "cmml/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace cmml {

namespace {

using nlohmann::json;

struct Registry {
  std::map<std::string, std::function<void(const json&)>> setters;

  void bind(const std::string& key, std::string* field) {
    setters[key] = [field, key](const json& v) {
      if (!v.is_string()) throw std::invalid_argument("config key " + key + " expects a string");
      *field = v.get<std::string>();
    };
  }
  void bind(const std::string& key, bool* field) {
    setters[key] = [field, key](const json& v) {
      if (!v.is_boolean()) throw std::invalid_argument("config key " + key + " expects a bool");
      *field = v.get<bool>();
    };
  }
  void bind(const std::string& key, int* field) {
    setters[key] = [field, key](const json& v) {
      if (!v.is_number_integer()) {
        throw std::invalid_argument("config key " + key + " expects an integer");
      }
      *field = v.get<int>();
    };
  }
  void bind(const std::string& key, std::uint64_t* field) {
    setters[key] = [field, key](const json& v) {
      if (!v.is_number_unsigned() && !v.is_number_integer()) {
        throw std::invalid_argument("config key " + key + " expects an integer");
      }
      *field = v.get<std::uint64_t>();
    };
  }
  void bind(const std::string& key, double* field) {
    setters[key] = [field, key](const json& v) {
      if (!v.is_number()) throw std::invalid_argument("config key " + key + " expects a number");
      *field = v.get<double>();
    };
  }
  void bind(const std::string& key, std::vector<int>* field) {
    setters[key] = [field, key](const json& v) {
      if (!v.is_array()) {
        throw std::invalid_argument("config key " + key + " expects an integer array");
      }
      std::vector<int> out;
      for (const auto& e : v) {
        if (!e.is_number_integer()) {
          throw std::invalid_argument("config key " + key + " expects an integer array");
        }
        out.push_back(e.get<int>());
      }
      *field = std::move(out);
    };
  }
};

Registry make_registry(RunConfig& c) {
  Registry r;
  r.bind("seed", &c.seed);
  r.bind("out_dir", &c.out_dir);
  r.bind("data.setting", &c.data.setting);
  r.bind("data.ratings_csv", &c.data.ratings_csv);
  r.bind("data.tasks_csv", &c.data.tasks_csv);
  r.bind("data.user_embeddings_csv", &c.data.user_embeddings_csv);
  r.bind("data.item_embeddings_csv", &c.data.item_embeddings_csv);
  r.bind("data.label_mode", &c.data.label_mode);
  r.bind("data.min_items", &c.data.min_items);
  r.bind("data.max_items", &c.data.max_items);
  r.bind("data.train_fraction", &c.data.train_fraction);
  r.bind("data.per_user_cap", &c.data.per_user_cap);
  r.bind("data.query_size", &c.data.query_size);
  r.bind("episode.support_pos", &c.episode.support_pos);
  r.bind("episode.query_pos", &c.episode.query_pos);
  r.bind("synthetic.latent_dim", &c.synthetic.latent_dim);
  r.bind("synthetic.feature_dim", &c.synthetic.feature_dim);
  r.bind("synthetic.noise_sd", &c.synthetic.noise_sd);
  r.bind("synthetic.support_size", &c.synthetic.support_size);
  r.bind("synthetic.query_size", &c.synthetic.query_size);
  r.bind("synthetic.task_count", &c.synthetic.task_count);
  r.bind("synthetic.ctr", &c.synthetic.ctr);
  r.bind("mf.dim", &c.mf.dim);
  r.bind("mf.epochs", &c.mf.epochs);
  r.bind("mf.lr", &c.mf.lr);
  r.bind("mf.reg", &c.mf.reg);
  r.bind("model.embed_dim", &c.model.embed_dim);
  r.bind("model.hidden", &c.model.hidden);
  r.bind("model.encoder", &c.model.encoder);
  r.bind("model.encoder_mlp", &c.model.encoder_mlp);
  r.bind("model.gru_hidden", &c.model.gru_hidden);
  r.bind("model.context_dim", &c.model.context_dim);
  r.bind("model.include_labels", &c.model.include_labels);
  r.bind("model.generator", &c.model.generator);
  r.bind("model.generator_mlp", &c.model.generator_mlp);
  r.bind("model.hybrid_dim", &c.model.hybrid_dim);
  r.bind("model.modulation", &c.model.modulation);
  r.bind("model.hyper_hidden", &c.model.hyper_hidden);
  r.bind("model.soft_layers", &c.model.soft_layers);
  r.bind("model.soft_modules", &c.model.soft_modules);
  r.bind("model.soft_width", &c.model.soft_width);
  r.bind("model.route_width", &c.model.route_width);
  r.bind("model.embeddings", &c.model.embeddings);
  r.bind("train.method", &c.train.method);
  r.bind("train.epochs", &c.train.epochs);
  r.bind("train.batch_size", &c.train.batch_size);
  r.bind("train.lr", &c.train.lr);
  r.bind("train.loss", &c.train.loss);
  r.bind("train.val_fraction", &c.train.val_fraction);
  r.bind("baseline.inner_steps", &c.baseline.inner_steps);
  r.bind("baseline.inner_lr", &c.baseline.inner_lr);
  r.bind("baseline.scope", &c.baseline.scope);
  r.bind("eval.recall_n", &c.eval.recall_n);
  r.bind("eval.ndcg_k", &c.eval.ndcg_k);
  r.bind("eval.neg_per_pos", &c.eval.neg_per_pos);
  r.bind("bench.m_values", &c.bench.m_values);
  r.bind("bench.k_values", &c.bench.k_values);
  r.bind("bench.repeats", &c.bench.repeats);
  r.bind("bench.warmup", &c.bench.warmup);
  r.bind("bench.inner_lr", &c.bench.inner_lr);
  return r;
}

void apply_flat(const Registry& registry, const json& node, const std::string& prefix) {
  if (!node.is_object()) {
    throw std::invalid_argument("config: expected an object at '" +
                                (prefix.empty() ? "<root>" : prefix) + "'");
  }
  for (auto it = node.begin(); it != node.end(); ++it) {
    std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object()) {
      apply_flat(registry, it.value(), key);
      continue;
    }
    auto setter = registry.setters.find(key);
    if (setter == registry.setters.end()) {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    setter->second(it.value());
  }
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config: parse error in " + path + ": " + e.what());
  }
  RunConfig config;
  Registry registry = make_registry(config);
  apply_flat(registry, j, "");
  return config;
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  Registry registry = make_registry(*this);
  auto setter = registry.setters.find(key);
  if (setter == registry.setters.end()) {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;  // bare strings need no quotes on the command line
  }
  setter->second(v);
}

std::string RunConfig::to_json_string() const {
  json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["data"]["setting"] = data.setting;
  j["data"]["ratings_csv"] = data.ratings_csv;
  j["data"]["tasks_csv"] = data.tasks_csv;
  j["data"]["user_embeddings_csv"] = data.user_embeddings_csv;
  j["data"]["item_embeddings_csv"] = data.item_embeddings_csv;
  j["data"]["label_mode"] = data.label_mode;
  j["data"]["min_items"] = data.min_items;
  j["data"]["max_items"] = data.max_items;
  j["data"]["train_fraction"] = data.train_fraction;
  j["data"]["per_user_cap"] = data.per_user_cap;
  j["data"]["query_size"] = data.query_size;
  j["episode"]["support_pos"] = episode.support_pos;
  j["episode"]["query_pos"] = episode.query_pos;
  j["synthetic"]["latent_dim"] = synthetic.latent_dim;
  j["synthetic"]["feature_dim"] = synthetic.feature_dim;
  j["synthetic"]["noise_sd"] = synthetic.noise_sd;
  j["synthetic"]["support_size"] = synthetic.support_size;
  j["synthetic"]["query_size"] = synthetic.query_size;
  j["synthetic"]["task_count"] = synthetic.task_count;
  j["synthetic"]["ctr"] = synthetic.ctr;
  j["mf"]["dim"] = mf.dim;
  j["mf"]["epochs"] = mf.epochs;
  j["mf"]["lr"] = mf.lr;
  j["mf"]["reg"] = mf.reg;
  j["model"]["embed_dim"] = model.embed_dim;
  j["model"]["hidden"] = model.hidden;
  j["model"]["encoder"] = model.encoder;
  j["model"]["encoder_mlp"] = model.encoder_mlp;
  j["model"]["gru_hidden"] = model.gru_hidden;
  j["model"]["context_dim"] = model.context_dim;
  j["model"]["include_labels"] = model.include_labels;
  j["model"]["generator"] = model.generator;
  j["model"]["generator_mlp"] = model.generator_mlp;
  j["model"]["hybrid_dim"] = model.hybrid_dim;
  j["model"]["modulation"] = model.modulation;
  j["model"]["hyper_hidden"] = model.hyper_hidden;
  j["model"]["soft_layers"] = model.soft_layers;
  j["model"]["soft_modules"] = model.soft_modules;
  j["model"]["soft_width"] = model.soft_width;
  j["model"]["route_width"] = model.route_width;
  j["model"]["embeddings"] = model.embeddings;
  j["train"]["method"] = train.method;
  j["train"]["epochs"] = train.epochs;
  j["train"]["batch_size"] = train.batch_size;
  j["train"]["lr"] = train.lr;
  j["train"]["loss"] = train.loss;
  j["train"]["val_fraction"] = train.val_fraction;
  j["baseline"]["inner_steps"] = baseline.inner_steps;
  j["baseline"]["inner_lr"] = baseline.inner_lr;
  j["baseline"]["scope"] = baseline.scope;
  j["eval"]["recall_n"] = eval.recall_n;
  j["eval"]["ndcg_k"] = eval.ndcg_k;
  j["eval"]["neg_per_pos"] = eval.neg_per_pos;
  j["bench"]["m_values"] = bench.m_values;
  j["bench"]["k_values"] = bench.k_values;
  j["bench"]["repeats"] = bench.repeats;
  j["bench"]["warmup"] = bench.warmup;
  j["bench"]["inner_lr"] = bench.inner_lr;
  return j.dump();
}

LabelMode RunConfig::resolved_label_mode() const {
  if (data.label_mode == "implicit") return LabelMode::kImplicit;
  if (data.label_mode == "rating") return LabelMode::kRating;
  if (data.label_mode != "auto") {
    throw std::invalid_argument("config: data.label_mode must be auto/implicit/rating");
  }
  return scenario_setting() ? LabelMode::kImplicit : LabelMode::kRating;
}

LossMode RunConfig::resolved_loss() const {
  if (train.loss == "hinge") return LossMode::kHinge;
  if (train.loss == "mse") return LossMode::kMse;
  if (train.loss != "auto") {
    throw std::invalid_argument("config: train.loss must be auto/hinge/mse");
  }
  return scenario_setting() ? LossMode::kHinge : LossMode::kMse;
}

bool RunConfig::resolved_frozen_embeddings() const {
  if (model.embeddings == "frozen") return true;
  if (model.embeddings == "learned") return false;
  if (model.embeddings != "auto") {
    throw std::invalid_argument("config: model.embeddings must be auto/frozen/learned");
  }
  return scenario_setting();
}

BackboneConfig RunConfig::backbone_config() const {
  BackboneConfig b;
  b.hidden_sizes = model.hidden;
  b.frozen_embeddings = resolved_frozen_embeddings();
  return b;
}

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig e;
  e.variant = encoder_variant_from_string(model.encoder);
  e.mlp_hidden = model.encoder_mlp;
  e.gru_hidden = model.gru_hidden;
  e.context_dim = model.context_dim;
  e.include_labels = model.include_labels;
  return e;
}

GeneratorConfig RunConfig::generator_config() const {
  GeneratorConfig g;
  g.variant = generator_variant_from_string(model.generator);
  g.mlp_hidden = model.generator_mlp;
  g.hybrid_dim = model.hybrid_dim;
  return g;
}

ModulationConfig RunConfig::modulation_config() const {
  ModulationConfig m;
  m.variant = modulation_variant_from_string(model.modulation);
  m.hyper_hidden = model.hyper_hidden;
  m.soft_layers = model.soft_layers;
  m.soft_modules = model.soft_modules;
  m.soft_width = model.soft_width;
  m.route_width = model.route_width;
  return m;
}

BundleConfig RunConfig::bundle_config(const FeatureSchema& schema) const {
  BundleConfig b;
  b.schema = schema;
  b.backbone = backbone_config();
  b.encoder = encoder_config();
  b.generator = generator_config();
  b.modulation = modulation_config();
  b.validate();
  return b;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.task_batch_size = train.batch_size;
  t.epochs = train.epochs;
  t.lr = train.lr;
  t.loss_mode = resolved_loss();
  t.seed = seed;
  t.episode = episode_options();
  t.validate();
  return t;
}

BaselineConfig RunConfig::baseline_config() const {
  BaselineConfig b;
  b.inner_steps = baseline.inner_steps;
  b.inner_lr = baseline.inner_lr;
  if (baseline.scope == "head-only") {
    b.scope = BaselineConfig::Scope::kHeadOnly;
  } else if (baseline.scope == "hidden+head") {
    b.scope = BaselineConfig::Scope::kHiddenAndHead;
  } else {
    throw std::invalid_argument("config: baseline.scope must be hidden+head or head-only");
  }
  b.validate();
  return b;
}

EpisodeOptions RunConfig::episode_options() const {
  EpisodeOptions e;
  e.n_pos_support = episode.support_pos;
  e.n_query = episode.query_pos;
  return e;
}

BenchOptions RunConfig::bench_options() const {
  BenchOptions b;
  b.m_values = bench.m_values;
  b.k_values = bench.k_values;
  b.repeats = bench.repeats;
  b.warmup = bench.warmup;
  b.inner_lr = bench.inner_lr;
  b.seed = seed;
  return b;
}

void RunConfig::validate() const {
  if (data.setting != "scenario" && data.setting != "user") {
    throw std::invalid_argument("config: data.setting must be scenario or user");
  }
  resolved_label_mode();
  resolved_loss();
  resolved_frozen_embeddings();
  encoder_config().validate();
  generator_config().validate();
  modulation_config().validate();
  backbone_config().validate();
  train_config();
  baseline_config();
  if (train.method != "cmml" && train.method != "baseline") {
    throw std::invalid_argument("config: train.method must be cmml or baseline");
  }
  if (model.embed_dim <= 0) throw std::invalid_argument("config: model.embed_dim must be positive");
  if (train.val_fraction < 0.0 || train.val_fraction >= 1.0) {
    throw std::invalid_argument("config: train.val_fraction must be in [0, 1)");
  }
}

}  // namespace cmml
