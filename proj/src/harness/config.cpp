#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "plasbench/errors.hpp"
#include "plasbench/harness.hpp"

namespace plasbench {

using nlohmann::json;

namespace {

constexpr Protocol kProtocols[] = {Protocol::warm_start, Protocol::fresh,   Protocol::blending,  Protocol::multistage,
                                   Protocol::reset,      Protocol::lr_grid, Protocol::arch_sweep};

void reject_unknown(const json& obj, std::initializer_list<std::string_view> known, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError(where + ": unknown field '" + it.key() + "'");
    }
  }
}

template <typename T>
T get(const json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (obj.contains(key)) out = get<T>(obj, key, where);
}

std::size_t read_count(const json& obj, const char* key, std::size_t fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(where + "." + key + ": expected a nonnegative integer");
  }
  return v.get<std::size_t>();
}

std::vector<std::size_t> read_counts(const json& obj, const char* key, const std::string& where) {
  std::vector<std::size_t> out;
  const json& arr = obj.at(key);
  if (!arr.is_array()) throw ConfigError(where + "." + key + ": expected an array");
  for (const json& v : arr) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(where + "." + key + ": expected nonnegative integers");
    }
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

std::set<int> read_group_set(const json& arr, const std::string& where) {
  if (!arr.is_array()) throw ConfigError(where + ": expected an array of group ids");
  std::set<int> out;
  for (const json& v : arr) {
    if (!v.is_number_integer()) throw ConfigError(where + ": group ids must be integers");
    const int g = v.get<int>();
    if (g < kFirstGroup || g > kLastGroup) {
      throw ConfigError(where + ": group id " + std::to_string(g) + " outside [1, 6]");
    }
    out.insert(g);
  }
  return out;
}

OptimizerConfig parse_optimizer(const json& obj, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(obj, {"kind", "lr", "momentum_mu", "rmsprop_rho", "adam_beta1", "adam_beta2", "eps"}, where);
  OptimizerConfig cfg;
  if (obj.contains("kind")) cfg.kind = parse_optimizer_kind(get<std::string>(obj, "kind", where));
  read(obj, "lr", cfg.lr, where);
  read(obj, "momentum_mu", cfg.momentum_mu, where);
  read(obj, "rmsprop_rho", cfg.rmsprop_rho, where);
  read(obj, "adam_beta1", cfg.adam_beta1, where);
  read(obj, "adam_beta2", cfg.adam_beta2, where);
  read(obj, "eps", cfg.eps, where);
  return cfg;
}

json optimizer_json(const OptimizerConfig& c) {
  return {{"kind", to_string(c.kind)},           {"lr", c.lr},
          {"momentum_mu", c.momentum_mu},        {"rmsprop_rho", c.rmsprop_rho},
          {"adam_beta1", c.adam_beta1},          {"adam_beta2", c.adam_beta2},
          {"eps", c.eps}};
}

DataSource parse_source(const std::string& text, std::size_t& stage_index, const std::string& where) {
  if (text == "full") return DataSource::full;
  if (text == "pretrain_half") return DataSource::pretrain_half;
  if (text == "blending") return DataSource::blending;
  if (text.rfind("stage_", 0) == 0) {
    const std::string num = text.substr(6);
    if (num.empty() || !std::all_of(num.begin(), num.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw ConfigError(where + ": bad stage source '" + text + "'");
    }
    stage_index = std::stoul(num);
    return DataSource::stage;
  }
  throw ConfigError(where + ": unknown data_source '" + text + "'");
}

PhaseSpec parse_phase(const json& obj, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(obj,
                 {"name", "data_source", "epochs", "optimizer", "reset_optimizer_state_at_start",
                  "reset_groups_at_start", "blending_gamma", "blending_exponent_scale"},
                 where);
  PhaseSpec p;
  read(obj, "name", p.name, where);
  if (obj.contains("data_source")) {
    p.data_source = parse_source(get<std::string>(obj, "data_source", where), p.stage_index, where);
  }
  if (!obj.contains("epochs")) throw ConfigError(where + ".epochs: required");
  p.epochs = read_count(obj, "epochs", 0, where);
  if (obj.contains("optimizer")) p.optimizer = parse_optimizer(obj.at("optimizer"), where + ".optimizer");
  read(obj, "reset_optimizer_state_at_start", p.reset_optimizer_state_at_start, where);
  if (obj.contains("reset_groups_at_start")) {
    p.reset_groups_at_start = read_group_set(obj.at("reset_groups_at_start"), where + ".reset_groups_at_start");
  }
  read(obj, "blending_gamma", p.blending_gamma, where);
  read(obj, "blending_exponent_scale", p.blending_exponent_scale, where);
  return p;
}

json phase_json(const PhaseSpec& p) {
  std::string source = to_string(p.data_source);
  if (p.data_source == DataSource::stage) source += "_" + std::to_string(p.stage_index);
  json j = {{"name", p.name},
            {"data_source", source},
            {"epochs", p.epochs},
            {"optimizer", optimizer_json(p.optimizer)},
            {"reset_optimizer_state_at_start", p.reset_optimizer_state_at_start},
            {"reset_groups_at_start", std::vector<int>(p.reset_groups_at_start.begin(), p.reset_groups_at_start.end())}};
  if (p.data_source == DataSource::blending) {
    j["blending_gamma"] = p.blending_gamma;
    j["blending_exponent_scale"] = p.blending_exponent_scale;
  }
  return j;
}

ModelConfig parse_model(const json& obj, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(obj, {"kind", "width_w", "depth_d", "num_classes", "input_shape", "hidden_sizes"}, where);
  ModelConfig m;
  if (obj.contains("kind")) m.kind = parse_model_kind(get<std::string>(obj, "kind", where));
  m.width_w = read_count(obj, "width_w", m.width_w, where);
  m.depth_d = read_count(obj, "depth_d", m.depth_d, where);
  m.num_classes = read_count(obj, "num_classes", m.num_classes, where);
  if (obj.contains("input_shape")) {
    const auto shape = read_counts(obj, "input_shape", where);
    if (shape.size() != 3) throw ConfigError(where + ".input_shape: expected [C, H, W]");
    m.input_shape = {shape[0], shape[1], shape[2]};
  }
  if (obj.contains("hidden_sizes")) m.hidden_sizes = read_counts(obj, "hidden_sizes", where);
  return m;
}

json model_json(const ModelConfig& m) {
  return {{"kind", to_string(m.kind)},
          {"width_w", m.width_w},
          {"depth_d", m.depth_d},
          {"num_classes", m.num_classes},
          {"input_shape", std::vector<std::size_t>(m.input_shape.begin(), m.input_shape.end())},
          {"hidden_sizes", m.hidden_sizes}};
}

DatasetConfig parse_dataset(const json& obj, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(obj,
                 {"name", "num_classes", "per_class", "test_per_class", "example_shape", "margin", "noise_std",
                  "label_noise", "seed", "train_images", "train_labels", "test_images", "test_labels", "dir",
                  "train_limit", "test_limit", "standardize"},
                 where);
  DatasetConfig d;
  read(obj, "name", d.name, where);
  SyntheticSpec& s = d.synthetic;
  s.num_classes = read_count(obj, "num_classes", s.num_classes, where);
  s.per_class = read_count(obj, "per_class", s.per_class, where);
  d.test_per_class = read_count(obj, "test_per_class", d.test_per_class, where);
  if (obj.contains("example_shape")) {
    const auto shape = read_counts(obj, "example_shape", where);
    s.example_shape = Shape(shape.begin(), shape.end());
    s.input_dim = shape_numel(s.example_shape);
  }
  read(obj, "margin", s.margin, where);
  read(obj, "noise_std", s.noise_std, where);
  read(obj, "label_noise", s.label_noise, where);
  if (obj.contains("seed")) {
    s.seed = get<std::uint64_t>(obj, "seed", where);
    d.synthetic_seed_given = true;
  }
  read(obj, "train_images", d.train_images, where);
  read(obj, "train_labels", d.train_labels, where);
  read(obj, "test_images", d.test_images, where);
  read(obj, "test_labels", d.test_labels, where);
  read(obj, "dir", d.dir, where);
  d.train_limit = read_count(obj, "train_limit", 0, where);
  d.test_limit = read_count(obj, "test_limit", 0, where);
  read(obj, "standardize", d.standardize, where);
  return d;
}

json dataset_json(const DatasetConfig& d) {
  json j = {{"name", d.name}, {"train_limit", d.train_limit}, {"test_limit", d.test_limit},
            {"standardize", d.standardize}};
  if (d.name == "synthetic") {
    const SyntheticSpec& s = d.synthetic;
    j["num_classes"] = s.num_classes;
    j["per_class"] = s.per_class;
    j["test_per_class"] = d.test_per_class;
    j["example_shape"] = s.example_shape.empty() ? Shape{1, 1, s.input_dim} : s.example_shape;
    j["margin"] = s.margin;
    j["noise_std"] = s.noise_std;
    j["label_noise"] = s.label_noise;
    if (d.synthetic_seed_given) j["seed"] = s.seed;
  } else if (d.name == "mnist") {
    j["train_images"] = d.train_images;
    j["train_labels"] = d.train_labels;
    j["test_images"] = d.test_images;
    j["test_labels"] = d.test_labels;
  } else {
    j["dir"] = d.dir;
  }
  return j;
}

ProbeConfig parse_probes(const json& obj, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  reject_unknown(obj, {"kinds", "every_epochs", "batch_size", "num_batches", "probe_batch", "max_iters", "tol", "delta"},
                 where);
  ProbeConfig p;
  if (obj.contains("kinds")) {
    for (const json& k : obj.at("kinds")) {
      const std::string kind = k.get<std::string>();
      if (kind == "gradient_noise") {
        p.gradient_noise = true;
      } else if (kind == "sharpness") {
        p.sharpness = true;
      } else {
        throw ConfigError(where + ".kinds: unknown probe '" + kind + "'");
      }
    }
  }
  p.every_epochs = read_count(obj, "every_epochs", p.every_epochs, where);
  p.batch_size = read_count(obj, "batch_size", p.batch_size, where);
  p.num_batches = read_count(obj, "num_batches", p.num_batches, where);
  p.probe_batch = read_count(obj, "probe_batch", p.probe_batch, where);
  p.power.max_iters = read_count(obj, "max_iters", p.power.max_iters, where);
  read(obj, "tol", p.power.tol, where);
  read(obj, "delta", p.power.delta, where);
  return p;
}

json probes_json(const ProbeConfig& p) {
  std::vector<std::string> kinds;
  if (p.gradient_noise) kinds.emplace_back("gradient_noise");
  if (p.sharpness) kinds.emplace_back("sharpness");
  return {{"kinds", kinds},
          {"every_epochs", p.every_epochs},
          {"batch_size", p.batch_size},
          {"num_batches", p.num_batches},
          {"probe_batch", p.probe_batch},
          {"max_iters", p.power.max_iters},
          {"tol", p.power.tol},
          {"delta", p.power.delta}};
}

std::size_t evaluations(std::size_t epochs, std::size_t every) {
  if (every == 0) return 0;
  return epochs / every + (epochs % every != 0 ? 1 : 0);
}

}  // namespace

std::string to_string(Protocol protocol) {
  switch (protocol) {
    case Protocol::warm_start: return "warm_start";
    case Protocol::fresh: return "fresh";
    case Protocol::blending: return "blending";
    case Protocol::multistage: return "multistage";
    case Protocol::reset: return "reset";
    case Protocol::lr_grid: return "lr_grid";
    case Protocol::arch_sweep: return "arch_sweep";
  }
  return "unknown";
}

Protocol parse_protocol(const std::string& name) {
  for (Protocol p : kProtocols) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown protocol '" + name + "'");
}

std::string to_string(DataSource source) {
  switch (source) {
    case DataSource::full: return "full";
    case DataSource::pretrain_half: return "pretrain_half";
    case DataSource::stage: return "stage";
    case DataSource::blending: return "blending";
  }
  return "unknown";
}

void PhaseSpec::validate() const {
  const std::string where = "phase '" + name + "'";
  if (epochs == 0) throw ConfigError(where + ": epochs must be positive");
  if (data_source == DataSource::stage && stage_index == 0) throw ConfigError(where + ": stage index is 1-based");
  if (data_source == DataSource::blending && !(blending_gamma > 0 && blending_gamma < 1)) {
    throw ConfigError(where + ": blending_gamma must lie in (0, 1)");
  }
  if (data_source == DataSource::blending && !(blending_exponent_scale > 0)) {
    throw ConfigError(where + ": blending_exponent_scale must be positive");
  }
  for (int g : reset_groups_at_start) {
    if (g < kFirstGroup || g > kLastGroup) throw ConfigError(where + ": reset group outside [1, 6]");
  }
  optimizer.validate();
}

std::size_t ExperimentConfig::tune_evaluations() const {
  if (phases.empty()) return 0;
  return evaluations(tune_phase().epochs, eval_every_epochs);
}

std::size_t ExperimentConfig::effective_last_k() const {
  if (last_k != 0) return last_k;
  return std::min<std::size_t>(100, std::max<std::size_t>(1, tune_evaluations() / 5));
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (eval_every_epochs == 0) throw ConfigError("eval_every_epochs must be positive");
  if (eval_batch == 0) throw ConfigError("eval_batch must be positive");
  if (phases.empty()) throw ConfigError("phases must be nonempty");
  std::set<std::string> names;
  for (const PhaseSpec& p : phases) {
    p.validate();
    if (!names.insert(p.name).second) throw ConfigError("duplicate phase name '" + p.name + "'");
  }
  model.validate();
  if (effective_last_k() > tune_evaluations()) {
    throw ConfigError("last_k = " + std::to_string(effective_last_k()) + " exceeds the " +
                      std::to_string(tune_evaluations()) + " evaluated tuning epochs");
  }
  if (probes.any()) {
    if (probes.num_batches < 2) throw ConfigError("probes.num_batches must be at least 2");
    if (probes.batch_size == 0 || probes.probe_batch == 0) throw ConfigError("probe batch sizes must be positive");
    if (probes.power.max_iters == 0) throw ConfigError("probes.max_iters must be positive");
  }

  const bool needs_pretrain = protocol == Protocol::warm_start || protocol == Protocol::reset ||
                              protocol == Protocol::lr_grid || protocol == Protocol::arch_sweep;
  if (needs_pretrain && phases.size() < 2) {
    throw ConfigError(to_string(protocol) + " needs a pretraining phase and a tuning phase");
  }
  if (tune_phase().data_source != DataSource::full) {
    throw ConfigError("the final phase must train on the full set");
  }
  for (std::size_t i = 0; i + 1 < phases.size(); ++i) {
    if (phases[i].data_source == DataSource::stage) {
      throw ConfigError("stage sources are built by the multistage protocol");
    }
  }
  switch (protocol) {
    case Protocol::blending:
      if (gammas.empty()) throw ConfigError("gammas must be nonempty");
      for (double g : gammas) {
        if (!(g > 0 && g < 1)) throw ConfigError("every gamma must lie in (0, 1)");
      }
      if (!(exponent_scale > 0)) throw ConfigError("exponent_scale must be positive");
      break;
    case Protocol::multistage:
      if (n_stages.empty() || ratios.empty()) throw ConfigError("n_stages and ratios must be nonempty");
      for (double r : ratios) {
        if (!(r >= 0 && r <= 1)) throw ConfigError("ratios must lie in [0, 1]");
      }
      break;
    case Protocol::lr_grid:
      if (pretrain_lrs.empty() || tune_lrs.empty()) throw ConfigError("pretrain_lrs and tune_lrs must be nonempty");
      for (double lr : pretrain_lrs) {
        if (!(lr > 0)) throw ConfigError("learning rates must be positive");
      }
      for (double lr : tune_lrs) {
        if (!(lr > 0)) throw ConfigError("learning rates must be positive");
      }
      break;
    case Protocol::arch_sweep:
      if (widths.empty() || depths.empty()) throw ConfigError("widths and depths must be nonempty");
      for (std::size_t w : widths) {
        for (std::size_t d : depths) {
          ModelConfig m = model;
          m.width_w = w;
          m.depth_d = d;
          m.validate();
        }
      }
      break;
    default:
      break;
  }
}

ExperimentConfig parse_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text.begin(), json_text.end(), nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  const std::string where = "config";
  reject_unknown(doc,
                 {"protocol", "name", "master_seed", "seeds", "dataset", "model", "batch_size", "phases",
                  "eval_every_epochs", "last_k", "eval_batch", "max_diverged_runs", "record_wallclock",
                  "match_arm_seeds", "save_checkpoints", "pretrain_epochs", "gammas", "exponent_scale", "n_stages",
                  "ratios", "epochs_per_stage", "reset_optimizer_between_stages", "reset_group_sets", "pretrain_lrs",
                  "tune_lrs", "widths", "depths", "probes"},
                 where);

  ExperimentConfig cfg;
  if (!doc.contains("protocol")) throw ConfigError("config.protocol: required");
  cfg.protocol = parse_protocol(get<std::string>(doc, "protocol", where));
  read(doc, "name", cfg.name, where);
  read(doc, "master_seed", cfg.master_seed, where);
  read(doc, "seeds", cfg.seeds, where);
  if (doc.contains("dataset")) cfg.dataset = parse_dataset(doc.at("dataset"), where + ".dataset");
  if (doc.contains("model")) cfg.model = parse_model(doc.at("model"), where + ".model");
  cfg.batch_size = read_count(doc, "batch_size", cfg.batch_size, where);
  if (!doc.contains("phases") || !doc.at("phases").is_array()) throw ConfigError("config.phases: required array");
  const json& phases = doc.at("phases");
  for (std::size_t i = 0; i < phases.size(); ++i) {
    PhaseSpec p = parse_phase(phases[i], where + ".phases[" + std::to_string(i) + "]");
    if (p.name.empty()) {
      p.name = (i + 1 == phases.size()) ? "tune" : (phases.size() == 2 ? "pretrain" : "phase" + std::to_string(i + 1));
    }
    cfg.phases.push_back(std::move(p));
  }
  cfg.eval_every_epochs = read_count(doc, "eval_every_epochs", cfg.eval_every_epochs, where);
  cfg.last_k = read_count(doc, "last_k", cfg.last_k, where);
  cfg.eval_batch = read_count(doc, "eval_batch", cfg.eval_batch, where);
  cfg.max_diverged_runs = read_count(doc, "max_diverged_runs", cfg.max_diverged_runs, where);
  read(doc, "record_wallclock", cfg.record_wallclock, where);
  read(doc, "match_arm_seeds", cfg.match_arm_seeds, where);
  read(doc, "save_checkpoints", cfg.save_checkpoints, where);
  if (doc.contains("pretrain_epochs")) cfg.pretrain_epochs = read_counts(doc, "pretrain_epochs", where);
  read(doc, "gammas", cfg.gammas, where);
  read(doc, "exponent_scale", cfg.exponent_scale, where);
  if (doc.contains("n_stages")) cfg.n_stages = read_counts(doc, "n_stages", where);
  read(doc, "ratios", cfg.ratios, where);
  cfg.epochs_per_stage = read_count(doc, "epochs_per_stage", cfg.epochs_per_stage, where);
  read(doc, "reset_optimizer_between_stages", cfg.reset_optimizer_between_stages, where);
  if (doc.contains("reset_group_sets")) {
    const json& sets = doc.at("reset_group_sets");
    if (!sets.is_array()) throw ConfigError("config.reset_group_sets: expected an array");
    for (std::size_t i = 0; i < sets.size(); ++i) {
      cfg.reset_group_sets.push_back(read_group_set(sets[i], where + ".reset_group_sets[" + std::to_string(i) + "]"));
    }
  }
  read(doc, "pretrain_lrs", cfg.pretrain_lrs, where);
  read(doc, "tune_lrs", cfg.tune_lrs, where);
  if (doc.contains("widths")) cfg.widths = read_counts(doc, "widths", where);
  if (doc.contains("depths")) cfg.depths = read_counts(doc, "depths", where);
  if (doc.contains("probes")) cfg.probes = parse_probes(doc.at("probes"), where + ".probes");

  if (cfg.reset_group_sets.empty()) {
    for (int first = kLastGroup + 1; first >= kFirstGroup; --first) {
      std::set<int> s;
      for (int g = first; g <= kLastGroup; ++g) s.insert(g);
      cfg.reset_group_sets.push_back(s);
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json phases = json::array();
  for (const PhaseSpec& p : c.phases) phases.push_back(phase_json(p));
  json sets = json::array();
  for (const auto& s : c.reset_group_sets) sets.push_back(std::vector<int>(s.begin(), s.end()));
  json j = {{"protocol", to_string(c.protocol)},
            {"name", c.name},
            {"master_seed", c.master_seed},
            {"seeds", c.seeds},
            {"dataset", dataset_json(c.dataset)},
            {"model", model_json(c.model)},
            {"batch_size", c.batch_size},
            {"phases", phases},
            {"eval_every_epochs", c.eval_every_epochs},
            {"last_k", c.last_k},
            {"eval_batch", c.eval_batch},
            {"max_diverged_runs", c.max_diverged_runs},
            {"record_wallclock", c.record_wallclock},
            {"match_arm_seeds", c.match_arm_seeds},
            {"save_checkpoints", c.save_checkpoints},
            {"pretrain_epochs", c.pretrain_epochs},
            {"gammas", c.gammas},
            {"exponent_scale", c.exponent_scale},
            {"n_stages", c.n_stages},
            {"ratios", c.ratios},
            {"epochs_per_stage", c.epochs_per_stage},
            {"reset_optimizer_between_stages", c.reset_optimizer_between_stages},
            {"reset_group_sets", sets},
            {"pretrain_lrs", c.pretrain_lrs},
            {"tune_lrs", c.tune_lrs},
            {"widths", c.widths},
            {"depths", c.depths},
            {"probes", probes_json(c.probes)}};
  return j.dump(2);
}

void apply_environment(ExperimentConfig& config) {
  const char* value = std::getenv("PLASBENCH_SEED");
  if (value == nullptr || *value == '\0') return;
  const std::string text(value);
  if (!std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw ConfigError("PLASBENCH_SEED must be an unsigned integer, got '" + text + "'");
  }
  try {
    config.master_seed = std::stoull(text);
  } catch (const std::exception&) {
    throw ConfigError("PLASBENCH_SEED out of range: '" + text + "'");
  }
}

}  // namespace plasbench
