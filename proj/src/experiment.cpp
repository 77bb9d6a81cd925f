#include "neuse/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "neuse/metrics.hpp"

namespace neuse {

using json = nlohmann::json;

BaseAlgorithm parse_base_algorithm(std::string_view text) {
  if (text == "rsvd") return BaseAlgorithm::Rsvd;
  if (text == "fm" || text == "fm-sgd") return BaseAlgorithm::FmSgd;
  if (text == "userknn") return BaseAlgorithm::UserKnn;
  if (text == "itemknn") return BaseAlgorithm::ItemKnn;
  throw ConfigError("base.algorithm: unknown algorithm '" + std::string(text) +
                    "' (expected rsvd, fm, userknn or itemknn)");
}

std::string_view to_string(BaseAlgorithm algorithm) {
  switch (algorithm) {
    case BaseAlgorithm::Rsvd: return "rsvd";
    case BaseAlgorithm::FmSgd: return "fm";
    case BaseAlgorithm::UserKnn: return "userknn";
    case BaseAlgorithm::ItemKnn: return "itemknn";
  }
  return "rsvd";
}

bool is_sgd(BaseAlgorithm algorithm) {
  return algorithm == BaseAlgorithm::Rsvd || algorithm == BaseAlgorithm::FmSgd;
}

Method parse_method(std::string_view text) {
  if (text == "single") return Method::Single;
  if (text == "average") return Method::Average;
  if (text == "hse") return Method::Hse;
  if (text == "se") return Method::Se;
  if (text == "neuse") return Method::NeuSE;
  throw ConfigError("methods: unknown method '" + std::string(text) +
                    "' (expected single, average, hse, se or neuse)");
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::Single: return "single";
    case Method::Average: return "average";
    case Method::Hse: return "hse";
    case Method::Se: return "se";
    case Method::NeuSE: return "neuse";
  }
  return "single";
}

std::vector<Method> parse_methods(std::string_view text) {
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::size_t stop = comma == std::string_view::npos ? text.size() : comma;
    const auto name = text.substr(start, stop - start);
    if (name.empty()) throw ConfigError("methods: empty entry in '" + std::string(text) + "'");
    out.push_back(parse_method(name));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

void RunConfig::validate() const {
  if (dataset.empty()) throw ConfigError("dataset.path is required");
  if (methods.empty()) throw ConfigError("methods: at least one method is required");
  std::set<Method> seen;
  for (Method m : methods)
    if (!seen.insert(m).second) throw ConfigError("methods: '" + std::string(to_string(m)) + "' listed twice");
  if (seen.count(Method::Se) && !is_sgd(base.algorithm))
    throw ConfigError("methods: se applies only to SGD-trained base models, not " +
                      std::string(to_string(base.algorithm)));
  if (cutoff < 1) throw ConfigError("cutoff must be at least 1");
  if (num_negatives < 1) throw ConfigError("num_negatives must be at least 1");
  if (neighbor_cap < 1) throw ConfigError("neighbor_cap must be at least 1");
  if (task == Task::Ranking && train_negatives < 1)
    throw ConfigError("train_negatives must be at least 1 for the ranking task");
  if (base.factors < 1) throw ConfigError("base.factors must be at least 1");
  if (!(base.lr > 0.0)) throw ConfigError("base.lr must be positive");
  if (base.reg < 0.0) throw ConfigError("base.reg must be non-negative");
  if (base.init_std < 0.0) throw ConfigError("base.init_std must be non-negative");
  if (is_sgd(base.algorithm)) {
    SnapshotSchedule::every(base.delta_t, base.max_epoch).validate();
  } else {
    SnapshotSchedule::knn(base.k_list).validate();
  }
  if (seen.count(Method::Se)) {
    SnapshotSchedule::cyclic(se.cycle_len, se.cycles).validate();
    if (!(se.lr > 0.0)) throw ConfigError("se.lr must be positive");
  }
  if (task == Task::Ranking && base.implicit_negatives < 1)
    throw ConfigError("base.implicit_negatives must be at least 1 for the ranking task");
  neuse.validate();
  hse.validate();
}

namespace {

json config_json(const RunConfig& c, bool with_paths) {
  json j;
  if (with_paths) {
    j["dataset"] = {{"path", c.dataset.string()}};
    if (c.snapshots_dir) j["snapshots_dir"] = c.snapshots_dir->string();
    j["out"] = c.out.string();
  } else {
    j["dataset"] = json::object();
  }
  j["dataset"]["format"] = c.format == RatingFormat::MovielensTab ? "movielens-tab" : "generic-csv";
  j["task"] = std::string(to_string(c.task));
  j["seed"] = c.seed;
  j["methods"] = json::array();
  for (Method m : c.methods) j["methods"].push_back(std::string(to_string(m)));
  j["cutoff"] = c.cutoff;
  j["num_negatives"] = c.num_negatives;
  j["neighbor_cap"] = c.neighbor_cap;
  j["train_negatives"] = c.train_negatives;
  j["base"] = {{"algorithm", std::string(to_string(c.base.algorithm))},
               {"factors", c.base.factors},
               {"lr", c.base.lr},
               {"reg", c.base.reg},
               {"init_std", c.base.init_std},
               {"delta_t", c.base.delta_t},
               {"max_epoch", c.base.max_epoch},
               {"k_list", c.base.k_list},
               {"knn_prediction", std::string(to_string(c.base.knn_prediction))},
               {"implicit_negatives", c.base.implicit_negatives}};
  j["se"] = {{"cycle_len", c.se.cycle_len}, {"cycles", c.se.cycles}, {"lr", c.se.lr}};
  j["neuse"] = {{"embed_dim", c.neuse.embed_dim},
                {"hops", c.neuse.hops},
                {"activation", std::string(to_string(c.neuse.activation))},
                {"dropout", c.neuse.dropout},
                {"alpha", c.neuse.alpha},
                {"lr", c.neuse.lr},
                {"batch_size", c.neuse.batch_size},
                {"beta1", c.neuse.beta1},
                {"beta2", c.neuse.beta2},
                {"eps", c.neuse.eps},
                {"init_std", c.neuse.init_std},
                {"max_epochs", c.neuse.max_epochs}};
  j["hse"] = {{"hidden", c.hse.hidden},
              {"alpha", c.hse.alpha},
              {"lr", c.hse.lr},
              {"batch_size", c.hse.batch_size},
              {"beta1", c.hse.beta1},
              {"beta2", c.hse.beta2},
              {"eps", c.hse.eps},
              {"init_std", c.hse.init_std},
              {"max_epochs", c.hse.max_epochs}};
  return j;
}

// Reads the members of one JSON object, rejecting unknown keys on finish().
class Fields {
 public:
  Fields(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ConfigError(name("") + ": expected an object");
  }

  bool has(const char* key) const { return obj_.contains(key); }

  const json& raw(const char* key) {
    used_.insert(key);
    return obj_.at(key);
  }

  void get(const char* key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number_unsigned()) throw ConfigError(name(key) + ": expected a non-negative integer");
    out = v.get<std::size_t>();
  }
  void get(const char* key, std::uint64_t& out, int) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number_unsigned()) throw ConfigError(name(key) + ": expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  void get(const char* key, double& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(name(key) + ": expected a number");
    out = v.get<double>();
  }
  void get(const char* key, std::string& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(name(key) + ": expected a string");
    out = v.get<std::string>();
  }
  void get(const char* key, std::vector<std::size_t>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(name(key) + ": expected an array of integers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_unsigned()) throw ConfigError(name(key) + ": expected an array of integers");
      out.push_back(e.get<std::size_t>());
    }
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items())
      if (!used_.count(key)) throw ConfigError(name(key) + ": unknown field");
  }

  std::string name(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::set<std::string> used_;
};

std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

}  // namespace

std::string RunConfig::to_json() const { return config_json(*this, true).dump(2) + "\n"; }

std::string RunConfig::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, derive_seed(0, config_json(*this, false).dump()));
  return buf;
}

RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Fields top(root, "");
  if (top.has("dataset")) {
    Fields f(top.raw("dataset"), "dataset");
    std::string path, format = "movielens-tab";
    f.get("path", path);
    f.get("format", format);
    f.finish();
    if (!path.empty()) c.dataset = resolve(base_dir, path);
    try {
      c.format = parse_rating_format(format);
    } catch (const Error& e) {
      throw ConfigError(std::string("dataset.format: ") + e.what());
    }
  }
  std::string text;
  if (top.has("task")) {
    top.get("task", text);
    try {
      c.task = parse_task(text);
    } catch (const Error& e) {
      throw ConfigError(std::string("task: ") + e.what());
    }
  }
  top.get("seed", c.seed, 0);
  if (top.has("methods")) {
    const json& m = top.raw("methods");
    if (!m.is_array()) throw ConfigError("methods: expected an array of method names");
    c.methods.clear();
    for (const auto& e : m) {
      if (!e.is_string()) throw ConfigError("methods: expected an array of method names");
      c.methods.push_back(parse_method(e.get<std::string>()));
    }
  }
  top.get("cutoff", c.cutoff);
  top.get("num_negatives", c.num_negatives);
  top.get("neighbor_cap", c.neighbor_cap);
  top.get("train_negatives", c.train_negatives);
  if (top.has("snapshots_dir")) {
    top.get("snapshots_dir", text);
    c.snapshots_dir = resolve(base_dir, text);
  }
  if (top.has("out")) {
    top.get("out", text);
    c.out = resolve(base_dir, text);
  }
  if (top.has("base")) {
    Fields f(top.raw("base"), "base");
    if (f.has("algorithm")) {
      f.get("algorithm", text);
      c.base.algorithm = parse_base_algorithm(text);
    }
    f.get("factors", c.base.factors);
    f.get("lr", c.base.lr);
    f.get("reg", c.base.reg);
    f.get("init_std", c.base.init_std);
    f.get("delta_t", c.base.delta_t);
    f.get("max_epoch", c.base.max_epoch);
    f.get("k_list", c.base.k_list);
    if (f.has("knn_prediction")) {
      f.get("knn_prediction", text);
      c.base.knn_prediction = parse_knn_prediction(text);
    }
    f.get("implicit_negatives", c.base.implicit_negatives);
    f.finish();
  }
  if (top.has("se")) {
    Fields f(top.raw("se"), "se");
    f.get("cycle_len", c.se.cycle_len);
    f.get("cycles", c.se.cycles);
    f.get("lr", c.se.lr);
    f.finish();
  }
  if (top.has("neuse")) {
    Fields f(top.raw("neuse"), "neuse");
    f.get("embed_dim", c.neuse.embed_dim);
    f.get("hops", c.neuse.hops);
    if (f.has("activation")) {
      f.get("activation", text);
      c.neuse.activation = parse_activation(text);
    }
    f.get("dropout", c.neuse.dropout);
    f.get("alpha", c.neuse.alpha);
    f.get("lr", c.neuse.lr);
    f.get("batch_size", c.neuse.batch_size);
    f.get("beta1", c.neuse.beta1);
    f.get("beta2", c.neuse.beta2);
    f.get("eps", c.neuse.eps);
    f.get("init_std", c.neuse.init_std);
    f.get("max_epochs", c.neuse.max_epochs);
    f.finish();
  }
  if (top.has("hse")) {
    Fields f(top.raw("hse"), "hse");
    f.get("hidden", c.hse.hidden);
    f.get("alpha", c.hse.alpha);
    f.get("lr", c.hse.lr);
    f.get("batch_size", c.hse.batch_size);
    f.get("beta1", c.hse.beta1);
    f.get("beta2", c.hse.beta2);
    f.get("eps", c.hse.eps);
    f.get("init_std", c.hse.init_std);
    f.get("max_epochs", c.hse.max_epochs);
    f.finish();
  }
  top.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

ExperimentData prepare_data(const RunConfig& config) {
  if (!std::filesystem::exists(config.dataset))
    throw DatasetError("dataset '" + config.dataset.string() + "' does not exist");
  ExperimentData d;
  d.ratings = load_ratings(config.dataset, config.format);
  d.split = chronological_leave_one_out(d.ratings);
  if (d.split.test.empty()) throw DatasetError("no user has the three interactions a held-out split needs");
  d.neighbors = build_neighbor_index(d.split.train, config.neighbor_cap);
  d.test_negatives = sample_negatives(d.split, config.num_negatives, derive_seed(config.seed, "negatives"));
  d.validation_negatives = sample_negatives_for(d.split, d.split.validation, config.num_negatives,
                                                derive_seed(config.seed, "validation-negatives"));
  if (config.task == Task::Rating) {
    for (const auto& x : d.split.train.interactions()) {
      d.train_pairs.push_back({x.user, x.item});
      d.train_targets.push_back(x.rating);
    }
  } else {
    const NegativeSamples sampled = sample_negatives_for(d.split, d.split.train, config.train_negatives,
                                                         derive_seed(config.seed, "train-negatives"));
    std::set<UserItem> added;
    for (const auto& list : sampled.lists) {
      d.train_pairs.push_back({list.user, list.positive});
      d.train_targets.push_back(1.0);
      for (std::size_t item : list.negatives) {
        if (!added.insert({list.user, item}).second) continue;
        d.train_pairs.push_back({list.user, item});
        d.train_targets.push_back(0.0);
      }
    }
  }
  return d;
}

void write_prepared(const ExperimentData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_ratings_csv(data.split.train, dir / "train.csv");
  write_ratings_csv(data.split.validation, dir / "validation.csv");
  write_ratings_csv(data.split.test, dir / "test.csv");
  write_negatives_csv(data.test_negatives, dir / "test_negatives.csv");
  write_negatives_csv(data.validation_negatives, dir / "validation_negatives.csv");
  write_neighbor_index(data.neighbors, dir / "neighbors.txt");
}

namespace {

std::vector<UserItem> heldout_pairs(const RatingDataset& heldout) {
  std::vector<UserItem> out;
  for (const auto& x : heldout.interactions()) out.push_back({x.user, x.item});
  return out;
}

std::vector<UserItem> candidate_pairs(const NegativeSamples& samples) {
  std::vector<UserItem> out;
  for (const auto& list : samples.lists) {
    out.push_back({list.user, list.positive});
    for (std::size_t item : list.negatives) out.push_back({list.user, item});
  }
  return out;
}

std::vector<UserItem> validation_pairs(const RunConfig& config, const ExperimentData& d) {
  return config.task == Task::Rating ? heldout_pairs(d.split.validation)
                                     : candidate_pairs(d.validation_negatives);
}

std::vector<UserItem> test_pairs(const RunConfig& config, const ExperimentData& d) {
  return config.task == Task::Rating ? heldout_pairs(d.split.test) : candidate_pairs(d.test_negatives);
}

EvalTarget validation_target(const RunConfig& config, const ExperimentData& d, const SnapshotSet& set) {
  return config.task == Task::Rating ? rating_target(set, d.split.validation)
                                     : ranking_target(set, d.validation_negatives, config.cutoff);
}

EvalTarget test_target(const RunConfig& config, const ExperimentData& d, const SnapshotSet& set) {
  return config.task == Task::Rating ? rating_target(set, d.split.test)
                                     : ranking_target(set, d.test_negatives, config.cutoff);
}

void score_snapshots(const RunConfig& config, const ExperimentData& d, SnapshotBundle& b) {
  const EvalTarget target = validation_target(config, d, b.validation);
  std::vector<double> metrics;
  for (std::size_t s = 0; s < b.validation.num_snapshots(); ++s)
    metrics.push_back(selection_metric(target, [&](std::size_t r) { return b.validation.row(r)[s]; }));
  b.validation.set_validation_metrics(selection_metric_name(target), metrics);
  b.train.copy_metrics_from(b.validation);
  b.test.copy_metrics_from(b.validation);
}

std::unique_ptr<SnapshotSource> base_source(const RunConfig& config, const RatingDataset& train,
                                            const SnapshotSchedule& schedule, double lr,
                                            std::string_view seed_name,
                                            std::vector<double>* epoch_rmse) {
  SgdConfig sgd;
  sgd.factors = config.base.factors;
  sgd.lr = lr;
  sgd.reg = config.base.reg;
  sgd.init_std = config.base.init_std;
  sgd.seed = derive_seed(config.seed, seed_name);
  if (config.task == Task::Ranking) sgd.implicit_negatives = config.base.implicit_negatives;
  const bool implicit = config.task == Task::Ranking;
  switch (config.base.algorithm) {
    case BaseAlgorithm::Rsvd: {
      auto r = train_rsvd(train, sgd, schedule);
      if (epoch_rmse) *epoch_rmse = r.epoch_rmse;
      return make_source(std::move(r.snapshots));
    }
    case BaseAlgorithm::FmSgd: {
      auto r = train_fm_sgd(train, sgd, schedule);
      if (epoch_rmse) *epoch_rmse = r.epoch_rmse;
      return make_source(std::move(r.snapshots));
    }
    case BaseAlgorithm::UserKnn:
      return make_source(knn_snapshots(train, KnnKind::User, config.base.k_list, implicit,
                                       config.base.knn_prediction));
    case BaseAlgorithm::ItemKnn:
      return make_source(knn_snapshots(train, KnnKind::Item, config.base.k_list, implicit,
                                       config.base.knn_prediction));
  }
  throw ConfigError("base.algorithm: unsupported");
}

bool wants(const RunConfig& config, Method m) {
  return std::find(config.methods.begin(), config.methods.end(), m) != config.methods.end();
}

}  // namespace

std::vector<double> targets_for(const SnapshotSet& set, const RatingDataset& train, Task task) {
  std::map<UserItem, double> observed;
  for (const auto& x : train.interactions()) observed[{x.user, x.item}] = x.rating;
  std::vector<double> out;
  out.reserve(set.num_pairs());
  for (const UserItem& p : set.pairs()) {
    const auto it = observed.find(p);
    if (task == Task::Rating) {
      if (it == observed.end())
        throw DatasetError("training pair (" + std::to_string(p.user) + ", " + std::to_string(p.item) +
                           ") has no observed rating");
      out.push_back(it->second);
    } else {
      out.push_back(it == observed.end() ? 0.0 : 1.0);
    }
  }
  return out;
}

SnapshotBundle train_base(const RunConfig& config, const ExperimentData& data) {
  config.validate();
  const std::optional<RatingScale> scale =
      config.task == Task::Rating ? std::optional<RatingScale>(data.ratings.scale()) : std::nullopt;
  const SnapshotSchedule schedule = is_sgd(config.base.algorithm)
                                        ? SnapshotSchedule::every(config.base.delta_t, config.base.max_epoch)
                                        : SnapshotSchedule::knn(config.base.k_list);
  SnapshotBundle b;
  const auto source = base_source(config, data.split.train, schedule, config.base.lr, "base",
                                  &b.base_epoch_rmse);
  b.train = materialize(*source, data.train_pairs, scale);
  b.validation = materialize(*source, validation_pairs(config, data), scale);
  b.test = materialize(*source, test_pairs(config, data), scale);
  score_snapshots(config, data, b);
  if (wants(config, Method::Se)) {
    const auto cyclic = SnapshotSchedule::cyclic(config.se.cycle_len, config.se.cycles);
    const auto se_source = base_source(config, data.split.train, cyclic, config.se.lr, "se-base", nullptr);
    b.se_test = materialize(*se_source, test_pairs(config, data), scale);
  }
  return b;
}

void save_bundle(const SnapshotBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_snapshots(bundle.train, dir / "train.snapens");
  save_snapshots(bundle.validation, dir / "validation.snapens");
  save_snapshots(bundle.test, dir / "test.snapens");
  if (bundle.se_test) save_snapshots(*bundle.se_test, dir / "se_test.snapens");
}

SnapshotBundle load_bundle(const RunConfig& config, const ExperimentData& data,
                           const std::filesystem::path& dir) {
  SnapshotBundle b;
  b.train = load_snapshots(dir / "train.snapens");
  b.validation = load_snapshots(dir / "validation.snapens");
  b.test = load_snapshots(dir / "test.snapens");
  if (b.train.tags() != b.validation.tags() || b.train.tags() != b.test.tags())
    throw FormatError("snapshot files in '" + dir.string() + "' disagree on their snapshots");
  score_snapshots(config, data, b);
  if (wants(config, Method::Se)) {
    const auto path = dir / "se_test.snapens";
    if (!std::filesystem::exists(path))
      throw ConfigError("methods: se requested but '" + path.string() + "' does not exist");
    b.se_test = load_snapshots(path);
  }
  return b;
}

ExperimentResult run_methods(const RunConfig& config, const ExperimentData& data,
                             const SnapshotBundle& bundle) {
  config.validate();
  const EvalTarget validation = validation_target(config, data, bundle.validation);
  const EvalTarget test = test_target(config, data, bundle.test);
  const std::vector<double> train_targets = targets_for(bundle.train, data.split.train, config.task);
  const std::string fingerprint = config.fingerprint();

  ExperimentResult result;
  for (Method method : config.methods) {
    const auto start = std::chrono::steady_clock::now();
    Scores scores;
    switch (method) {
      case Method::Single: {
        const std::size_t s = single_select(bundle.validation);
        result.single_index = s;
        scores = evaluate(test, [&](std::size_t r) { return bundle.test.row(r)[s]; });
        break;
      }
      case Method::Average:
        scores = evaluate(test, [&](std::size_t r) { return average_combine(bundle.test.row(r)); });
        break;
      case Method::Se: {
        if (!bundle.se_test) throw ConfigError("methods: se requested without cyclic snapshots");
        const SnapshotSet& se = *bundle.se_test;
        scores = evaluate(test, [&](std::size_t r) {
          const UserItem p = bundle.test.pairs()[r];
          return se_combine(se.at(p.user, p.item));
        });
        break;
      }
      case Method::Hse: {
        HSEConfig hc = config.hse;
        hc.seed = derive_seed(config.seed, "hse");
        result.hse = hse_train(bundle.train, train_targets, bundle.validation, validation, hc);
        const HSEModel& m = result.hse->model;
        scores = evaluate(test, [&](std::size_t r) { return hse_predict(m, bundle.test.row(r)); });
        break;
      }
      case Method::NeuSE: {
        NeuSEConfig nc = config.neuse;
        nc.seed = derive_seed(config.seed, "neuse");
        result.neuse = train_neuse(bundle.train, train_targets, bundle.validation, validation,
                                   data.neighbors, nc);
        const NeuSEParams& p = result.neuse->params;
        scores = evaluate(test, [&](std::size_t r) { return neuse_score(p, nc, data.neighbors, bundle.test, r); });
        break;
      }
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    result.reports.push_back({std::string(to_string(method)), config.task, scores.rmse, scores.hr, scores.ndcg,
                              config.cutoff, fingerprint, elapsed.count()});
  }
  return result;
}

ExperimentResult run_experiment(const RunConfig& config) {
  config.validate();
  const ExperimentData data = prepare_data(config);
  const SnapshotBundle bundle =
      config.snapshots_dir ? load_bundle(config, data, *config.snapshots_dir) : train_base(config, data);
  return run_methods(config, data, bundle);
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

std::string format_reports_csv(const std::vector<EvalReport>& reports) {
  std::string out = "method,task,metric,value\n";
  for (const auto& r : reports) {
    const std::string prefix = r.method + "," + std::string(to_string(r.task)) + ",";
    const std::string n = std::to_string(r.cutoff);
    if (r.rmse) out += prefix + "rmse," + fmt(*r.rmse) + "\n";
    if (r.hr) out += prefix + "hr@" + n + "," + fmt(*r.hr) + "\n";
    if (r.ndcg) out += prefix + "ndcg@" + n + "," + fmt(*r.ndcg) + "\n";
  }
  return out;
}

std::string format_reports_table(const std::vector<EvalReport>& reports) {
  std::string out;
  char line[128];
  const bool ranking = !reports.empty() && reports.front().task == Task::Ranking;
  const std::string n = reports.empty() ? "" : std::to_string(reports.front().cutoff);
  if (ranking)
    std::snprintf(line, sizeof line, "%-10s %10s %10s %10s\n", "method", ("hr@" + n).c_str(),
                  ("ndcg@" + n).c_str(), "seconds");
  else
    std::snprintf(line, sizeof line, "%-10s %10s %10s\n", "method", "rmse", "seconds");
  out += line;
  for (const auto& r : reports) {
    if (ranking)
      std::snprintf(line, sizeof line, "%-10s %10s %10s %10.1f\n", r.method.c_str(),
                    r.hr ? fixed(*r.hr).c_str() : "-", r.ndcg ? fixed(*r.ndcg).c_str() : "-", r.seconds);
    else
      std::snprintf(line, sizeof line, "%-10s %10s %10.1f\n", r.method.c_str(),
                    r.rmse ? fixed(*r.rmse).c_str() : "-", r.seconds);
    out += line;
  }
  return out;
}

std::string format_timings_csv(const std::vector<EvalReport>& reports) {
  std::string out = "method,seconds\n";
  for (const auto& r : reports) out += r.method + "," + fmt(r.seconds) + "\n";
  return out;
}

std::string format_history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_kl,validation_metric\n";
  for (const auto& h : history)
    out += std::to_string(h.epoch) + "," + fmt(h.train_kl) + "," + fmt(h.validation_metric) + "\n";
  return out;
}

void write_outputs(const RunConfig& config, const ExperimentResult& result) {
  std::filesystem::create_directories(config.out);
  write_text(config.out / "reports.csv", format_reports_csv(result.reports));
  write_text(config.out / "timings.csv", format_timings_csv(result.reports));
  write_text(config.out / "config.json", config.to_json());
  if (result.neuse) {
    write_text(config.out / "neuse_history.csv", format_history_csv(result.neuse->history));
    save_params(result.neuse->params, config.out / "neuse.params");
  }
  if (result.hse) write_text(config.out / "hse_history.csv", format_history_csv(result.hse->history));
}

}  // namespace neuse
