#include "cmml/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace cmml {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return end && *end == '\0';
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end && *end == '\0' && std::isfinite(out);
}

std::uint64_t id_bucket(std::uint64_t seed, int id) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(id) + 0x517CC1B727220A95ULL)) %
         10000;
}

}  // namespace

LoadReport load_interactions_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_interactions_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("load_interactions_csv: " + path + " is empty (header required)");
  }
  std::vector<std::string> header = split_csv_line(line);
  auto column = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  };
  int user_c = column(schema.user_col);
  int item_c = column(schema.item_col);
  int rating_c = column(schema.rating_col);
  if (user_c < 0 || item_c < 0 || rating_c < 0) {
    throw std::runtime_error("load_interactions_csv: " + path + " is missing required column " +
                             (user_c < 0 ? schema.user_col : item_c < 0 ? schema.item_col
                                                                        : schema.rating_col));
  }
  int ts_c = column(schema.timestamp_col);
  int scen_c = column(schema.scenario_col);

  LoadReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++report.data_rows;
    std::vector<std::string> f = split_csv_line(line);
    auto field = [&](int c) -> const std::string& {
      static const std::string empty;
      return (c >= 0 && c < static_cast<int>(f.size())) ? f[static_cast<std::size_t>(c)] : empty;
    };
    long long user = 0, item = 0;
    double rating = 0.0;
    bool ok = parse_int(field(user_c), user) && parse_int(field(item_c), item) &&
              parse_double(field(rating_c), rating) && user >= 0 && item >= 0;
    if (ok && schema.label_mode == LabelMode::kRating && (rating < 1.0 || rating > 5.0)) {
      ok = false;
    }
    if (!ok) {
      ++report.skipped;
      continue;
    }
    Interaction x;
    x.user_id = static_cast<int>(user);
    x.item_id = static_cast<int>(item);
    x.label = schema.label_mode == LabelMode::kImplicit ? 1.0 : rating;
    long long ts = -1;
    if (ts_c >= 0 && parse_int(field(ts_c), ts)) x.timestamp = ts;
    long long scen = -1;
    if (scen_c >= 0 && parse_int(field(scen_c), scen)) x.scenario_id = static_cast<int>(scen);
    report.interactions.push_back(x);
  }
  if (report.data_rows > 0 && report.skipped * 10 > report.data_rows) {
    throw std::runtime_error("load_interactions_csv: " + std::to_string(report.skipped) + " of " +
                             std::to_string(report.data_rows) + " rows malformed in " + path);
  }
  return report;
}

TaskSplit build_scenario_tasks(const std::vector<Interaction>& interactions,
                               const ScenarioTaskOptions& options) {
  std::map<int, std::vector<Interaction>> by_scenario;
  for (const Interaction& x : interactions) {
    if (x.scenario_id < 0) {
      throw std::invalid_argument("build_scenario_tasks: interaction without scenario_id");
    }
    by_scenario[x.scenario_id].push_back(x);
  }

  TaskSplit split;
  for (auto& [scenario_id, rows] : by_scenario) {
    // dedupe by (user, item), keeping first occurrence
    std::set<std::pair<int, int>> seen;
    std::vector<Interaction> unique;
    std::set<int> items;
    for (const Interaction& x : rows) {
      if (seen.insert({x.user_id, x.item_id}).second) {
        unique.push_back(x);
        items.insert(x.item_id);
      }
    }
    int item_count = static_cast<int>(items.size());
    if (item_count < options.min_items || item_count > options.max_items) continue;

    Task task;
    task.task_id = scenario_id;
    task.setting = TaskSetting::kScenario;
    RngStream rng(options.seed, static_cast<std::uint64_t>(scenario_id) * 2 + 1);
    std::vector<int> order = rng.permutation(static_cast<int>(unique.size()));
    auto n_support = static_cast<std::size_t>(
        std::max(1.0, std::floor(options.support_fraction * static_cast<double>(unique.size()))));
    for (std::size_t i = 0; i < order.size(); ++i) {
      const Interaction& x = unique[static_cast<std::size_t>(order[i])];
      (i < n_support ? task.support : task.query).push_back(x);
    }
    if (task.support.empty() || task.query.empty()) continue;

    bool is_train =
        id_bucket(options.seed, scenario_id) < static_cast<std::uint64_t>(options.train_fraction * 10000);
    (is_train ? split.train : split.test).push_back(std::move(task));
  }
  if (split.train.empty() && split.test.empty()) {
    throw std::runtime_error("build_scenario_tasks: no scenario has an item count within [" +
                             std::to_string(options.min_items) + ", " +
                             std::to_string(options.max_items) + "]");
  }
  return split;
}

TaskSplit build_user_tasks(const std::vector<Interaction>& interactions,
                           const UserTaskOptions& options) {
  std::map<int, std::vector<Interaction>> by_user;
  for (const Interaction& x : interactions) {
    if (x.label < 1.0 || x.label > 5.0) {
      throw std::invalid_argument("build_user_tasks: expects rating labels in [1, 5]");
    }
    by_user[x.user_id].push_back(x);
  }

  TaskSplit split;
  for (auto& [user_id, rows] : by_user) {
    std::set<std::pair<int, int>> seen;
    std::vector<Interaction> unique;
    for (const Interaction& x : rows) {
      if (seen.insert({x.user_id, x.item_id}).second) unique.push_back(x);
    }
    // cold-start trim: keep the earliest records up to the cap
    std::stable_sort(unique.begin(), unique.end(), [](const Interaction& a, const Interaction& b) {
      if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
      return a.item_id < b.item_id;
    });
    if (static_cast<int>(unique.size()) > options.per_user_cap) {
      unique.resize(static_cast<std::size_t>(options.per_user_cap));
    }
    if (static_cast<int>(unique.size()) < options.query_size + 1) continue;

    Task task;
    task.task_id = user_id;
    task.setting = TaskSetting::kUser;
    RngStream rng(options.seed, static_cast<std::uint64_t>(user_id) * 2 + 1);
    std::vector<int> order = rng.permutation(static_cast<int>(unique.size()));
    for (std::size_t i = 0; i < order.size(); ++i) {
      const Interaction& x = unique[static_cast<std::size_t>(order[i])];
      (i < static_cast<std::size_t>(options.query_size) ? task.query : task.support).push_back(x);
    }

    bool is_train =
        id_bucket(options.seed, user_id) < static_cast<std::uint64_t>(options.train_fraction * 10000);
    (is_train ? split.train : split.test).push_back(std::move(task));
  }
  if (split.train.empty() && split.test.empty()) {
    throw std::runtime_error("build_user_tasks: no user has more than " +
                             std::to_string(options.query_size) + " rating records");
  }
  return split;
}

namespace {

// Draws `count` elements; falls back to replacement when the pool is short.
std::vector<Interaction> draw(const std::vector<Interaction>& pool, int count, RngStream& rng,
                              bool& replaced) {
  std::vector<Interaction> out;
  out.reserve(static_cast<std::size_t>(count));
  if (static_cast<int>(pool.size()) >= count) {
    std::vector<int> order = rng.permutation(static_cast<int>(pool.size()));
    for (int i = 0; i < count; ++i) out.push_back(pool[static_cast<std::size_t>(order[i])]);
  } else {
    replaced = true;
    for (int i = 0; i < count; ++i) {
      out.push_back(pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))]);
    }
  }
  return out;
}

}  // namespace

Episode sample_episode(const Task& task, const EpisodeOptions& options,
                       const std::vector<int>& negative_pool, RngStream& rng) {
  if (task.setting != TaskSetting::kScenario) {
    throw std::invalid_argument("sample_episode: task " + std::to_string(task.task_id) +
                                " is not a scenario task");
  }
  if (negative_pool.empty()) throw std::invalid_argument("sample_episode: empty negative pool");
  if (task.support.empty() || task.query.empty()) {
    throw std::invalid_argument("sample_episode: task " + std::to_string(task.task_id) +
                                " has an empty pool");
  }

  std::unordered_set<long long> positive_pairs;
  auto key = [](int u, int i) { return (static_cast<long long>(u) << 32) | static_cast<unsigned>(i); };
  std::vector<int> task_users;
  {
    std::set<int> users;
    for (const auto* pool : {&task.support, &task.query}) {
      for (const Interaction& x : *pool) {
        positive_pairs.insert(key(x.user_id, x.item_id));
        users.insert(x.user_id);
      }
    }
    task_users.assign(users.begin(), users.end());
  }

  Episode ep;
  auto sample_negatives = [&](int count) {
    std::vector<Interaction> negs;
    negs.reserve(static_cast<std::size_t>(count));
    long long attempts = 0;
    const long long max_attempts = 1000LL * count + 1000;
    while (static_cast<int>(negs.size()) < count) {
      if (++attempts > max_attempts) {
        throw std::runtime_error("sample_episode: negative pool exhausted for task " +
                                 std::to_string(task.task_id));
      }
      int u = task_users[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(task_users.size())))];
      int i = negative_pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(negative_pool.size())))];
      if (positive_pairs.count(key(u, i))) continue;
      Interaction x;
      x.user_id = u;
      x.item_id = i;
      x.label = -1.0;
      x.scenario_id = task.task_id;
      negs.push_back(x);
    }
    return negs;
  };

  std::vector<Interaction> support_pos = draw(task.support, options.n_pos_support, rng,
                                              ep.sampled_with_replacement);
  std::vector<Interaction> support_neg = sample_negatives(options.n_pos_support);
  ep.query_pos = draw(task.query, options.n_query, rng, ep.sampled_with_replacement);
  ep.query_neg = sample_negatives(options.n_query);

  std::vector<Interaction> support;
  support.reserve(support_pos.size() + support_neg.size());
  for (Interaction x : support_pos) {
    x.label = 1.0;
    support.push_back(x);
  }
  support.insert(support.end(), support_neg.begin(), support_neg.end());
  ep.support_permutation = rng.permutation(static_cast<int>(support.size()));
  ep.support.reserve(support.size());
  for (int idx : ep.support_permutation) ep.support.push_back(support[static_cast<std::size_t>(idx)]);
  return ep;
}

void SyntheticTaskSpec::validate() const {
  if (latent_dim <= 0 || feature_dim <= 0 || support_size <= 0 || query_size <= 0 ||
      task_count <= 0) {
    throw std::invalid_argument("SyntheticTaskSpec: sizes must be positive");
  }
  if (noise_sd < 0.0) throw std::invalid_argument("SyntheticTaskSpec: noise sd must be >= 0");
  if (latent_dim != feature_dim) {
    throw std::invalid_argument("SyntheticTaskSpec: labels are w . x, so latent and feature "
                                "dimensions must match");
  }
}

FeatureSchema SyntheticData::schema() const {
  FeatureSchema s;
  s.user_fields = {{"user_id", 1, user_features.cols()}};
  s.item_fields = {{"item_id", item_features.rows(), item_features.cols()}};
  return s;
}

SyntheticData generate_synthetic_tasks(const SyntheticTaskSpec& spec) {
  spec.validate();
  SyntheticData data;
  const int per_task = spec.support_size + spec.query_size;
  std::vector<double> features;
  features.reserve(static_cast<std::size_t>(spec.task_count) * per_task * spec.feature_dim);
  double w_sd = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));

  for (int t = 0; t < spec.task_count; ++t) {
    RngStream rng(spec.seed, static_cast<std::uint64_t>(t) * 2 + 1);
    std::vector<double> w(static_cast<std::size_t>(spec.latent_dim));
    for (double& v : w) v = rng.normal(0.0, w_sd);

    Task task;
    task.task_id = t;
    task.setting = TaskSetting::kUser;
    for (int e = 0; e < per_task; ++e) {
      std::vector<double> x(static_cast<std::size_t>(spec.feature_dim));
      double dot = 0.0;
      for (int j = 0; j < spec.feature_dim; ++j) {
        x[static_cast<std::size_t>(j)] = rng.normal();
        dot += w[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
      }
      double y = dot + (spec.noise_sd > 0.0 ? rng.normal(0.0, spec.noise_sd) : 0.0);
      if (spec.ctr_mode) y = y >= 0.0 ? 1.0 : -1.0;

      Interaction row;
      row.user_id = 0;
      row.item_id = t * per_task + e;
      row.label = y;
      (e < spec.support_size ? task.support : task.query).push_back(row);
      features.insert(features.end(), x.begin(), x.end());
    }
    data.tasks.push_back(std::move(task));
    data.hidden_vectors.push_back(std::move(w));
  }
  data.item_features =
      Tensor(spec.task_count * per_task, spec.feature_dim, std::move(features));
  data.user_features = Tensor::zeros(1, spec.feature_dim);
  return data;
}

TaskSplit split_tasks(const std::vector<Task>& tasks, double train_fraction, std::uint64_t seed) {
  TaskSplit split;
  for (const Task& t : tasks) {
    bool is_train = id_bucket(seed, t.task_id) < static_cast<std::uint64_t>(train_fraction * 10000);
    (is_train ? split.train : split.test).push_back(t);
  }
  return split;
}

MfTables mf_pretrain_embeddings(const std::vector<Interaction>& interactions,
                                const MfConfig& config, int user_vocab, int item_vocab) {
  if (config.dim <= 0) throw std::invalid_argument("mf_pretrain_embeddings: dim must be positive");
  if (interactions.empty()) {
    throw std::invalid_argument("mf_pretrain_embeddings: no interactions");
  }
  for (const Interaction& x : interactions) {
    user_vocab = std::max(user_vocab, x.user_id + 1);
    item_vocab = std::max(item_vocab, x.item_id + 1);
  }

  RngStream rng(config.seed, 0xAF17);
  double init_scale = 0.1 / std::sqrt(static_cast<double>(config.dim));
  auto init_table = [&](int rows) {
    std::vector<double> v(static_cast<std::size_t>(rows) * config.dim);
    for (double& x : v) x = rng.uniform(-init_scale, init_scale);
    return v;
  };
  std::vector<double> P = init_table(user_vocab);
  std::vector<double> Q = init_table(item_vocab);

  std::vector<int> order(interactions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (int idx : order) {
      const Interaction& x = interactions[static_cast<std::size_t>(idx)];
      double* p = P.data() + static_cast<std::size_t>(x.user_id) * config.dim;
      double* q = Q.data() + static_cast<std::size_t>(x.item_id) * config.dim;
      double pred = 0.0;
      for (int j = 0; j < config.dim; ++j) pred += p[j] * q[j];
      double err = x.label - pred;
      for (int j = 0; j < config.dim; ++j) {
        double pj = p[j];
        p[j] += config.lr * (err * q[j] - config.reg * pj);
        q[j] += config.lr * (err * pj - config.reg * q[j]);
      }
    }
  }
  MfTables tables;
  tables.user = Tensor(user_vocab, config.dim, std::move(P));
  tables.item = Tensor(item_vocab, config.dim, std::move(Q));
  return tables;
}

void write_embedding_csv(const std::string& path, const Tensor& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_embedding_csv: cannot open " + path);
  out << "entity_id";
  for (int j = 0; j < table.cols(); ++j) out << ",v" << j;
  out << "\n";
  char buf[32];
  for (int i = 0; i < table.rows(); ++i) {
    out << i;
    for (int j = 0; j < table.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", table.at(i, j));
      out << ',' << buf;
    }
    out << "\n";
  }
}

Tensor read_embedding_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_embedding_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_embedding_csv: empty file " + path);
  int dim = static_cast<int>(split_csv_line(line).size()) - 1;
  if (dim <= 0) throw std::runtime_error("read_embedding_csv: no value columns in " + path);
  std::map<int, std::vector<double>> rows;
  int max_id = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (static_cast<int>(f.size()) != dim + 1) {
      throw std::runtime_error("read_embedding_csv: ragged row in " + path);
    }
    long long id = 0;
    if (!parse_int(f[0], id) || id < 0) {
      throw std::runtime_error("read_embedding_csv: bad entity id in " + path);
    }
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j) {
      if (!parse_double(f[static_cast<std::size_t>(j + 1)], v[static_cast<std::size_t>(j)])) {
        throw std::runtime_error("read_embedding_csv: bad value in " + path);
      }
    }
    rows[static_cast<int>(id)] = std::move(v);
    max_id = std::max(max_id, static_cast<int>(id));
  }
  std::vector<double> all(static_cast<std::size_t>(max_id + 1) * dim, 0.0);
  for (auto& [id, v] : rows) {
    std::copy(v.begin(), v.end(), all.begin() + static_cast<std::size_t>(id) * dim);
  }
  return Tensor(max_id + 1, dim, std::move(all));
}

void write_tasks_csv(const std::string& path, const TaskSplit& split, TaskSetting setting) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_tasks_csv: cannot open " + path);
  out << "task_id,split,role,user_id,item_id,label,scenario_id,timestamp\n";
  char buf[32];
  auto dump = [&](const std::vector<Task>& tasks, const char* split_name) {
    for (const Task& t : tasks) {
      auto dump_rows = [&](const std::vector<Interaction>& rows, const char* role) {
        for (const Interaction& x : rows) {
          std::snprintf(buf, sizeof buf, "%.17g", x.label);
          out << t.task_id << ',' << split_name << ',' << role << ',' << x.user_id << ','
              << x.item_id << ',' << buf << ',' << x.scenario_id << ',' << x.timestamp << "\n";
        }
      };
      dump_rows(t.support, "support");
      dump_rows(t.query, "query");
    }
  };
  dump(split.train, "train");
  dump(split.test, "test");
  (void)setting;
}

TaskSplit read_tasks_csv(const std::string& path, TaskSetting setting) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_tasks_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_tasks_csv: empty file " + path);
  if (split_csv_line(line).size() != 8) {
    throw std::runtime_error("read_tasks_csv: unexpected header in " + path);
  }
  // (task_id, is_train) -> task, in file order
  std::map<std::pair<int, bool>, Task> tasks;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 8) throw std::runtime_error("read_tasks_csv: ragged row in " + path);
    long long task_id = 0, user = 0, item = 0, scen = 0, ts = 0;
    double label = 0.0;
    if (!parse_int(f[0], task_id) || !parse_int(f[3], user) || !parse_int(f[4], item) ||
        !parse_double(f[5], label) || !parse_int(f[6], scen) || !parse_int(f[7], ts)) {
      throw std::runtime_error("read_tasks_csv: bad row in " + path);
    }
    bool is_train = f[1] == "train";
    if (!is_train && f[1] != "test") throw std::runtime_error("read_tasks_csv: bad split column");
    Task& t = tasks[{static_cast<int>(task_id), is_train}];
    t.task_id = static_cast<int>(task_id);
    t.setting = setting;
    Interaction x;
    x.user_id = static_cast<int>(user);
    x.item_id = static_cast<int>(item);
    x.label = label;
    x.scenario_id = static_cast<int>(scen);
    x.timestamp = ts;
    if (f[2] == "support") {
      t.support.push_back(x);
    } else if (f[2] == "query") {
      t.query.push_back(x);
    } else {
      throw std::runtime_error("read_tasks_csv: bad role column");
    }
  }
  TaskSplit split;
  for (auto& [key, task] : tasks) {
    (key.second ? split.train : split.test).push_back(std::move(task));
  }
  return split;
}

}  // namespace cmml
