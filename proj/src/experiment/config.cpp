#include "conml/experiment/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace conml {
namespace {

using nlohmann::json;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

/// A JSON object being consumed; finish() rejects keys nobody asked for.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  Node child(const std::string& key) { return Node(j_.at(key), join(path_, key)); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (has(key)) read(j_.at(key), join(path_, key), out);
  }

  template <typename E>
  void get_enum(const std::string& key, E& out, E (*parse)(const std::string&)) {
    if (!has(key)) return;
    std::string s;
    read(j_.at(key), join(path_, key), s);
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(join(path_, key), e.what());
    }
  }

  void get_range(const std::string& key, double& lo, double& hi) {
    if (!has(key)) return;
    std::vector<double> v;
    read(j_.at(key), join(path_, key), v);
    if (v.size() != 2) throw ConfigError(join(path_, key), "expected [min, max]");
    lo = v[0];
    hi = v[1];
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(join(path_, key), "unknown key");
    }
  }

 private:
  static void read(const json& v, const std::string& path, int& out) {
    if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
    const auto x = v.get<long long>();
    if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(path, "integer out of range");
    out = static_cast<int>(x);
  }
  static void read(const json& v, const std::string& path, long& out) {
    if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
    out = v.get<long>();
  }
  static void read(const json& v, const std::string& path, std::uint64_t& out) {
    if (!v.is_number_unsigned()) throw ConfigError(path, "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  static void read(const json& v, const std::string& path, double& out) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    out = v.get<double>();
  }
  static void read(const json& v, const std::string& path, bool& out) {
    if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
    out = v.get<bool>();
  }
  static void read(const json& v, const std::string& path, std::string& out) {
    if (!v.is_string()) throw ConfigError(path, "expected a string");
    out = v.get<std::string>();
  }
  template <typename T>
  static void read(const json& v, const std::string& path, std::vector<T>& out) {
    if (!v.is_array()) throw ConfigError(path, "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      T x{};
      read(v[i], path + "[" + std::to_string(i) + "]", x);
      out.push_back(x);
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_learner(Node n, LearnerConfig& c) {
  n.get_enum("kind", c.kind, learner_kind_from_string);
  if (n.has("maml")) {
    Node m = n.child("maml");
    m.get("hidden", c.maml.hidden);
    m.get("inner_lr", c.maml.inner_lr);
    m.get("inner_steps", c.maml.inner_steps);
    m.get("test_steps", c.maml.test_steps);
    m.get_enum("order", c.maml.order, maml_order_from_string);
    m.get("bias", c.maml.bias);
    m.finish();
  }
  if (n.has("protonet")) {
    Node p = n.child("protonet");
    p.get("hidden", c.proto.hidden);
    p.get("embedding_dim", c.proto.embedding_dim);
    p.finish();
  }
  if (n.has("hypernet")) {
    Node h = n.child("hypernet");
    h.get("encoder_hidden", c.hyper.encoder_hidden);
    h.get("task_dim", c.hyper.task_dim);
    h.get("decoder_hidden", c.hyper.decoder_hidden);
    h.finish();
  }
  n.finish();
}

void parse_tasks(Node n, TaskDistributionConfig& c) {
  n.get_enum("kind", c.kind, task_kind_from_string);
  if (n.has("sinusoid")) {
    Node s = n.child("sinusoid");
    s.get_range("amplitude", c.sinusoid.amplitude_min, c.sinusoid.amplitude_max);
    s.get_range("phase", c.sinusoid.phase_min, c.sinusoid.phase_max);
    s.get_range("input", c.sinusoid.input_min, c.sinusoid.input_max);
    s.finish();
  }
  if (n.has("blobs")) {
    Node b = n.child("blobs");
    b.get("num_ways", c.blobs.num_ways);
    b.get("dim", c.blobs.dim);
    b.get("spread", c.blobs.spread);
    b.get_range("mean_range", c.blobs.mean_min, c.blobs.mean_max);
    b.finish();
  }
  n.get("shots", c.shots);
  n.get("val_size", c.val_size);
  n.get("amplitude_shift", c.amplitude_shift);
  n.finish();
}

void parse_contrastive(Node n, bool& enabled, ContrastiveConfig& c) {
  n.get("enabled", enabled);
  n.get("lambda", c.lambda);
  n.get("k", c.k);
  if (n.has("strategy")) {
    Node s = n.child("strategy");
    s.get_enum("kind", c.strategy.kind, subset_kind_from_string);
    s.get("m", c.strategy.m);
    s.get("class_balanced", c.strategy.class_balanced);
    s.finish();
  }
  n.get_enum("distance", c.distance, distance_kind_from_string);
  n.get_enum("form", c.form, loss_form_from_string);
  n.get_enum("terms", c.terms, contrast_terms_from_string);
  n.get("stop_grad_e_star", c.stop_grad_e_star);
  n.finish();
}

void parse_training(Node n, EpisodeConfig& c) {
  n.get("batch_size", c.batch_size);
  n.get("episodes", c.episodes);
  n.get("checkpoint_every", c.checkpoint_every);
  if (n.has("optimizer")) {
    Node o = n.child("optimizer");
    o.get_enum("kind", c.optimizer.kind, optimizer_kind_from_string);
    o.get("lr", c.optimizer.lr);
    o.get("beta1", c.optimizer.beta1);
    o.get("beta2", c.optimizer.beta2);
    o.get("eps", c.optimizer.eps);
    o.finish();
  }
  n.finish();
}

void parse_eval(Node n, EvalSection& c) {
  n.get("num_tasks", c.test.num_tasks);
  n.get("test_points", c.test.test_points);
  n.get("jobs", c.test.jobs);
  n.get("shots", c.shots);
  n.get("deltas", c.deltas);
  n.get("shot_list", c.shot_list);
  if (n.has("cluster")) {
    Node k = n.child("cluster");
    k.get("tasks", c.cluster.tasks);
    k.get("subsets", c.cluster.subsets);
    k.get("subset_size", c.cluster.subset_size);
    k.finish();
  }
  if (n.has("distances")) {
    Node d = n.child("distances");
    d.get("tasks", c.distances.tasks);
    d.get("subsets", c.distances.subsets);
    d.get("subset_size", c.distances.subset_size);
    d.get("bins", c.distances.bins);
    d.finish();
  }
  n.finish();
}

json tasks_json(const TaskDistributionConfig& c) {
  json j{{"kind", to_string(c.kind)},
         {"shots", c.shots},
         {"val_size", c.val_size},
         {"amplitude_shift", c.amplitude_shift}};
  if (c.kind == TaskKind::kSinusoid) {
    j["sinusoid"] = {{"amplitude", {c.sinusoid.amplitude_min, c.sinusoid.amplitude_max}},
                     {"phase", {c.sinusoid.phase_min, c.sinusoid.phase_max}},
                     {"input", {c.sinusoid.input_min, c.sinusoid.input_max}}};
  } else {
    j["blobs"] = {{"num_ways", c.blobs.num_ways},
                  {"dim", c.blobs.dim},
                  {"spread", c.blobs.spread},
                  {"mean_range", {c.blobs.mean_min, c.blobs.mean_max}}};
  }
  return j;
}

json contrastive_json(bool enabled, const ContrastiveConfig& c) {
  if (!enabled) return {{"enabled", false}};
  return {{"enabled", true},
          {"lambda", c.lambda},
          {"k", c.k},
          {"strategy",
           {{"kind", to_string(c.strategy.kind)},
            {"m", c.strategy.m},
            {"class_balanced", c.strategy.class_balanced}}},
          {"distance", to_string(c.distance)},
          {"form", to_string(c.form)},
          {"terms", to_string(c.terms)},
          {"stop_grad_e_star", c.stop_grad_e_star}};
}

json training_json(const EpisodeConfig& c) {
  return {{"batch_size", c.batch_size},
          {"episodes", c.episodes},
          {"checkpoint_every", c.checkpoint_every},
          {"optimizer",
           {{"kind", to_string(c.optimizer.kind)},
            {"lr", c.optimizer.lr},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps}}}};
}

json eval_json(const EvalSection& c) {
  return {{"num_tasks", c.test.num_tasks},
          {"test_points", c.test.test_points},
          {"shots", c.shots},
          {"deltas", c.deltas},
          {"shot_list", c.shot_list},
          {"cluster",
           {{"tasks", c.cluster.tasks},
            {"subsets", c.cluster.subsets},
            {"subset_size", c.cluster.subset_size}}},
          {"distances",
           {{"tasks", c.distances.tasks},
            {"subsets", c.distances.subsets},
            {"subset_size", c.distances.subset_size},
            {"bins", c.distances.bins}}}};
}

}  // namespace

void ExperimentConfig::validate() const {
  training_spec().validate();
  if (eval.test.num_tasks < 1 || eval.test.test_points < 1) {
    throw std::invalid_argument("eval.num_tasks and eval.test_points must be >= 1");
  }
  if (eval.test.jobs < 1) throw std::invalid_argument("eval.jobs must be >= 1");
  if (eval.shots < 1) throw std::invalid_argument("eval.shots must be >= 1");
  for (int s : eval.shot_list) {
    if (s < 1) throw std::invalid_argument("eval.shot_list entries must be >= 1");
  }
  eval.cluster.validate();
  eval.distances.validate();
}

TrainingSpec ExperimentConfig::training_spec() const {
  TrainingSpec spec;
  spec.learner = learner;
  spec.tasks = tasks;
  spec.conml = contrastive_enabled;
  spec.contrastive = contrastive;
  spec.episode = training;
  spec.seed = seed;
  return spec;
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  Node root(j, "");
  if (root.has("learner")) parse_learner(root.child("learner"), cfg.learner);
  if (root.has("tasks")) parse_tasks(root.child("tasks"), cfg.tasks);
  if (root.has("contrastive")) {
    parse_contrastive(root.child("contrastive"), cfg.contrastive_enabled, cfg.contrastive);
  }
  if (root.has("training")) parse_training(root.child("training"), cfg.training);
  if (root.has("eval")) parse_eval(root.child("eval"), cfg.eval);
  root.get("seed", cfg.seed);
  root.get("output_dir", cfg.output_dir);
  root.finish();
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config", e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), e.what());
  }
  return parse_config(j);
}

json semantic_json(const ExperimentConfig& cfg) {
  return {{"learner", to_json(cfg.learner)},
          {"tasks", tasks_json(cfg.tasks)},
          {"contrastive", contrastive_json(cfg.contrastive_enabled, cfg.contrastive)},
          {"training", training_json(cfg.training)},
          {"eval", eval_json(cfg.eval)},
          {"seed", cfg.seed}};
}

json to_json(const ExperimentConfig& cfg) {
  json j = semantic_json(cfg);
  j["eval"]["jobs"] = cfg.eval.test.jobs;
  j["output_dir"] = cfg.output_dir;
  return j;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(semantic_json(cfg).dump())));
  return buf;
}

}  // namespace conml
