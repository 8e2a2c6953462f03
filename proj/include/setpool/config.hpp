#pragma once

#include <cstdlib>

#include "setpool/checkpoint.hpp"
#include "setpool/data.hpp"
#include "setpool/train.hpp"

namespace setpool {

/// Every tunable of the artifact, with its documented default. Configs load
/// from a flat key=value file; CLI flags override file values. Unknown keys
/// fail the parse naming the key.
struct RunConfig {
  // model
  int dim = 32;
  std::vector<int> trunk_hidden = {32};   // tanh trunk widths
  std::vector<int> reward_hidden = {};    // reward-head hidden widths ({} = linear)
  // reinforcement learning
  double gamma = 0.9;
  double lambda = 0.1;
  double lr_pi = 0.01;
  double lr_v = 0.05;
  double lr_h = 0.05;
  double momentum = 0.0;  // reward-head optimizer momentum
  // off-policy / trust region
  double xi = 1.0;
  double alpha = 0.99;
  double rho_clip = 10.0;
  int pool_capacity = 5000;
  int minibatch = 16;
  int warmup = 32;
  // run
  int episodes = 2000;
  uint64_t seed = 1;
  std::string mode = "on";         // on | off
  std::string distance = "plain";  // plain | pgr
  std::string data_path;           // empty -> synthetic dataset
  double test_fraction = 0.5;
  std::string out_dir = "out";
  int workers = 1;
  // synthetic dataset
  int ids = 50;
  int sets_per_id = 4;
  int set_min = 2;
  int set_max = 20;
  double noise = 0.4;
  double outlier_rate = 0.15;
  double profile_rate = 0.3;
  double pose_shift = 0.8;

  SyntheticConfig synthetic() const {
    SyntheticConfig s;
    s.num_identities = ids;
    s.sets_per_identity = sets_per_id;
    s.set_size_min = set_min;
    s.set_size_max = set_max;
    s.dim = dim;
    s.noise_scale = noise;
    s.outlier_rate = outlier_rate;
    s.profile_rate = profile_rate;
    s.pose_shift_scale = pose_shift;
    return s;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.episodes = episodes;
    t.gamma = gamma;
    t.rates = {lr_pi, lr_v, lr_h, alpha};
    t.trust = {xi, alpha, rho_clip};
    t.h_momentum = momentum;
    t.pool_capacity = static_cast<size_t>(pool_capacity);
    t.minibatch = minibatch;
    t.warmup = warmup;
    t.seed = seed;
    return t;
  }
};

namespace detail {

inline int parse_int(const std::string& s, const std::string& key) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "': not an integer: '" + s + "'");
  }
}

inline double parse_num(const std::string& s, const std::string& key) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "': not a number: '" + s + "'");
  }
}

inline uint64_t parse_u64(const std::string& s, const std::string& key) {
  try {
    size_t pos = 0;
    const uint64_t v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "': not a non-negative integer: '" + s + "'");
  }
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  if (s.empty()) return out;
  std::string cur;
  for (const char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(parse_int(cur, key));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  return out;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_int;
  using detail::parse_int_list;
  using detail::parse_num;
  using detail::parse_u64;
  if (key == "dim") cfg.dim = parse_int(value, key);
  else if (key == "trunk_hidden") cfg.trunk_hidden = parse_int_list(value, key);
  else if (key == "reward_hidden") cfg.reward_hidden = parse_int_list(value, key);
  else if (key == "gamma") cfg.gamma = parse_num(value, key);
  else if (key == "lambda") cfg.lambda = parse_num(value, key);
  else if (key == "lr_pi") cfg.lr_pi = parse_num(value, key);
  else if (key == "lr_v") cfg.lr_v = parse_num(value, key);
  else if (key == "lr_h") cfg.lr_h = parse_num(value, key);
  else if (key == "momentum") cfg.momentum = parse_num(value, key);
  else if (key == "xi") cfg.xi = parse_num(value, key);
  else if (key == "alpha") cfg.alpha = parse_num(value, key);
  else if (key == "rho_clip") cfg.rho_clip = parse_num(value, key);
  else if (key == "pool_capacity") cfg.pool_capacity = parse_int(value, key);
  else if (key == "minibatch") cfg.minibatch = parse_int(value, key);
  else if (key == "warmup") cfg.warmup = parse_int(value, key);
  else if (key == "episodes") cfg.episodes = parse_int(value, key);
  else if (key == "seed") cfg.seed = parse_u64(value, key);
  else if (key == "mode") cfg.mode = value;
  else if (key == "distance") cfg.distance = value;
  else if (key == "data_path") cfg.data_path = value;
  else if (key == "test_fraction") cfg.test_fraction = parse_num(value, key);
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "workers") cfg.workers = parse_int(value, key);
  else if (key == "ids") cfg.ids = parse_int(value, key);
  else if (key == "sets_per_id") cfg.sets_per_id = parse_int(value, key);
  else if (key == "set_min") cfg.set_min = parse_int(value, key);
  else if (key == "set_max") cfg.set_max = parse_int(value, key);
  else if (key == "noise") cfg.noise = parse_num(value, key);
  else if (key == "outlier_rate") cfg.outlier_rate = parse_num(value, key);
  else if (key == "profile_rate") cfg.profile_rate = parse_num(value, key);
  else if (key == "pose_shift") cfg.pose_shift = parse_num(value, key);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
  for (const auto& [key, value] : read_kv_file(path)) apply_config_key(cfg, key, value);
}

inline void validate(const RunConfig& cfg) {
  if (cfg.dim < 2) throw ConfigError("dim must be >= 2");
  if (cfg.gamma < 0.0 || cfg.gamma >= 1.0) throw ConfigError("gamma must be in [0, 1)");
  if (cfg.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  for (const auto& [v, name] : {std::pair<double, const char*>{cfg.lr_pi, "lr_pi"},
                                {cfg.lr_v, "lr_v"},
                                {cfg.lr_h, "lr_h"}})
    if (v <= 0.0) throw ConfigError(std::string(name) + " must be > 0");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (cfg.xi < 0.0) throw ConfigError("xi must be >= 0");
  if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
  if (cfg.rho_clip <= 0.0) throw ConfigError("rho_clip must be > 0");
  if (cfg.pool_capacity < 1) throw ConfigError("pool_capacity must be >= 1");
  if (cfg.minibatch < 1) throw ConfigError("minibatch must be >= 1");
  if (cfg.warmup < 0) throw ConfigError("warmup must be >= 0");
  if (cfg.episodes < 0) throw ConfigError("episodes must be >= 0");  // 0 = untrained checkpoint
  if (cfg.mode != "on" && cfg.mode != "off") throw ConfigError("mode must be on|off");
  if (cfg.distance != "plain" && cfg.distance != "pgr")
    throw ConfigError("distance must be plain|pgr");
  if (cfg.test_fraction <= 0.0 || cfg.test_fraction >= 1.0)
    throw ConfigError("test_fraction must be in (0, 1)");
  if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
  if (cfg.ids < 2) throw ConfigError("ids must be >= 2");
  if (cfg.sets_per_id < 1) throw ConfigError("sets_per_id must be >= 1");
  if (cfg.set_min < 1) throw ConfigError("set_min must be >= 1");
  if (cfg.set_max < cfg.set_min) throw ConfigError("set_max must be >= set_min");
  if (cfg.trunk_hidden.empty()) throw ConfigError("trunk_hidden must not be empty");
  for (const int w : cfg.trunk_hidden)
    if (w < 1) throw ConfigError("trunk_hidden widths must be >= 1");
  for (const int w : cfg.reward_hidden)
    if (w < 1) throw ConfigError("reward_hidden widths must be >= 1");
  for (const auto& [v, name] :
       {std::pair<double, const char*>{cfg.noise, "noise"}, {cfg.pose_shift, "pose_shift"}})
    if (v < 0.0) throw ConfigError(std::string(name) + " must be >= 0");
  for (const auto& [v, name] : {std::pair<double, const char*>{cfg.outlier_rate, "outlier_rate"},
                                {cfg.profile_rate, "profile_rate"}})
    if (v < 0.0 || v > 1.0) throw ConfigError(std::string(name) + " must be in [0, 1]");
}

/// Full echo of the configuration, as written into run manifests.
inline std::map<std::string, std::string> to_kv(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["dim"] = std::to_string(cfg.dim);
  kv["trunk_hidden"] = detail::join_ints(cfg.trunk_hidden);
  kv["reward_hidden"] = detail::join_ints(cfg.reward_hidden);
  kv["gamma"] = fmt_double(cfg.gamma);
  kv["lambda"] = fmt_double(cfg.lambda);
  kv["lr_pi"] = fmt_double(cfg.lr_pi);
  kv["lr_v"] = fmt_double(cfg.lr_v);
  kv["lr_h"] = fmt_double(cfg.lr_h);
  kv["momentum"] = fmt_double(cfg.momentum);
  kv["xi"] = fmt_double(cfg.xi);
  kv["alpha"] = fmt_double(cfg.alpha);
  kv["rho_clip"] = fmt_double(cfg.rho_clip);
  kv["pool_capacity"] = std::to_string(cfg.pool_capacity);
  kv["minibatch"] = std::to_string(cfg.minibatch);
  kv["warmup"] = std::to_string(cfg.warmup);
  kv["episodes"] = std::to_string(cfg.episodes);
  kv["seed"] = std::to_string(cfg.seed);
  kv["mode"] = cfg.mode;
  kv["distance"] = cfg.distance;
  kv["data_path"] = cfg.data_path;
  kv["test_fraction"] = fmt_double(cfg.test_fraction);
  kv["out_dir"] = cfg.out_dir;
  kv["workers"] = std::to_string(cfg.workers);
  kv["ids"] = std::to_string(cfg.ids);
  kv["sets_per_id"] = std::to_string(cfg.sets_per_id);
  kv["set_min"] = std::to_string(cfg.set_min);
  kv["set_max"] = std::to_string(cfg.set_max);
  kv["noise"] = fmt_double(cfg.noise);
  kv["outlier_rate"] = fmt_double(cfg.outlier_rate);
  kv["profile_rate"] = fmt_double(cfg.profile_rate);
  kv["pose_shift"] = fmt_double(cfg.pose_shift);
  return kv;
}

/// SETPOOL_SEED is the seed fallback when neither a config file nor a flag
/// provides one.
inline std::optional<uint64_t> env_seed() {
  const char* v = std::getenv("SETPOOL_SEED");
  if (!v || !*v) return std::nullopt;
  return detail::parse_u64(v, "SETPOOL_SEED");
}

}  // namespace setpool
