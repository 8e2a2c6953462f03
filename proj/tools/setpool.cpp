#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>

#include "setpool/selfcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace setpool;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitMismatch = 4;

/// Layered configuration: defaults, then the config file, then any flag the
/// user actually passed.
class ConfigBinder {
 public:
  explicit ConfigBinder(CLI::App* cmd) : cmd_(cmd) {
    cmd->add_option("--config", config_path_, "key=value config file");
    bind_num("--dim", &RunConfig::dim, "embedding dimension d");
    bind_list("--trunk-hidden", &RunConfig::trunk_hidden, "trunk widths, comma separated");
    bind_list("--reward-hidden", &RunConfig::reward_hidden,
              "reward-head hidden widths (empty = linear)");
    bind_num("--gamma", &RunConfig::gamma, "discount factor");
    bind_num("--lambda", &RunConfig::lambda, "hinge regularizer coefficient");
    bind_num("--lr-pi", &RunConfig::lr_pi, "policy learning rate");
    bind_num("--lr-v", &RunConfig::lr_v, "value learning rate");
    bind_num("--lr-h", &RunConfig::lr_h, "reward-head learning rate");
    bind_num("--momentum", &RunConfig::momentum, "reward-head optimizer momentum");
    bind_num("--xi", &RunConfig::xi, "KL trust-region bound");
    bind_num("--alpha", &RunConfig::alpha, "average-policy mixing");
    bind_num("--rho-clip", &RunConfig::rho_clip, "IS ratio truncation");
    bind_num("--pool-capacity", &RunConfig::pool_capacity, "replay pool capacity");
    bind_num("--minibatch", &RunConfig::minibatch, "replay minibatch size");
    bind_num("--warmup", &RunConfig::warmup, "pool size before updates start");
    bind_num("--episodes", &RunConfig::episodes, "training episode budget");
    seed_opt_ = cmd->add_option("--seed", flags_.seed, "global seed (SETPOOL_SEED fallback)");
    bind_str("--mode", &RunConfig::mode, "on | off");
    bind_str("--distance", &RunConfig::distance, "plain | pgr");
    bind_str("--data", &RunConfig::data_path, "embedding CSV (default: synthetic)");
    bind_num("--test-fraction", &RunConfig::test_fraction, "identity fraction held out");
    bind_str("--out-dir", &RunConfig::out_dir, "output directory");
    bind_num("--workers", &RunConfig::workers, "parallel pair-scoring threads");
    bind_num("--ids", &RunConfig::ids, "synthetic: identities");
    bind_num("--sets", &RunConfig::sets_per_id, "synthetic: sets per identity");
    bind_num("--size-min", &RunConfig::set_min, "synthetic: min set size");
    bind_num("--size-max", &RunConfig::set_max, "synthetic: max set size");
    bind_num("--noise", &RunConfig::noise, "synthetic: noise scale");
    bind_num("--outliers", &RunConfig::outlier_rate, "synthetic: outlier rate");
    bind_num("--profiles", &RunConfig::profile_rate, "synthetic: profile rate");
    bind_num("--pose-shift", &RunConfig::pose_shift, "synthetic: pose shift scale");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    bool seed_given = false;
    if (!config_path_.empty()) {
      for (const auto& [key, value] : read_kv_file(config_path_)) {
        apply_config_key(cfg, key, value);
        if (key == "seed") seed_given = true;
      }
    }
    for (const auto& [opt, apply] : binds_)
      if (opt->count() > 0) apply(cfg, flags_);
    if (seed_opt_->count() > 0) {
      cfg.seed = flags_.seed;
      seed_given = true;
    }
    if (!seed_given) {
      if (const auto env = env_seed()) cfg.seed = *env;
    }
    validate(cfg);
    return cfg;
  }

 private:
  template <class T>
  void bind_num(const std::string& flag, T RunConfig::* member, const std::string& help) {
    CLI::Option* opt = cmd_->add_option(flag, flags_.*member, help);
    binds_.emplace_back(opt, [member](RunConfig& cfg, const RunConfig& flags) {
      cfg.*member = flags.*member;
    });
  }

  void bind_str(const std::string& flag, std::string RunConfig::* member, const std::string& help) {
    CLI::Option* opt = cmd_->add_option(flag, flags_.*member, help);
    binds_.emplace_back(opt, [member](RunConfig& cfg, const RunConfig& flags) {
      cfg.*member = flags.*member;
    });
  }

  void bind_list(const std::string& flag, std::vector<int> RunConfig::* member,
                 const std::string& help) {
    // accepted as a comma-separated string so "32,16" works in configs and flags alike
    auto holder = std::make_shared<std::string>();
    CLI::Option* opt = cmd_->add_option(flag, *holder, help);
    binds_.emplace_back(opt, [member, holder, flag](RunConfig& cfg, const RunConfig&) {
      cfg.*member = setpool::detail::parse_int_list(*holder, flag);
    });
  }

  CLI::App* cmd_;
  RunConfig flags_;
  std::string config_path_;
  CLI::Option* seed_opt_ = nullptr;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&, const RunConfig&)>>> binds_;
};

Dataset load_source(const RunConfig& cfg) {
  if (!cfg.data_path.empty()) return load_embeddings(cfg.data_path);
  return gen_synthetic(cfg.synthetic(), cfg.seed);
}

ActorCriticParams fresh_params(const RunConfig& cfg, int num_classes) {
  Rng rng = substream(cfg.seed, "init");
  return make_actor_critic(cfg.dim, cfg.trunk_hidden, cfg.reward_hidden, num_classes, cfg.lambda,
                           rng);
}

int cmd_gen(const RunConfig& cfg, const std::string& out_path) {
  const Dataset ds = gen_synthetic(cfg.synthetic(), cfg.seed);
  save_csv(ds, out_path);
  std::cout << "wrote " << out_path << ": " << ds.sets.size() << " sets, " << ds.num_identities
            << " identities, dim " << ds.dim << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
  const Dataset full = load_source(cfg);
  auto [train_ds, test_ds] = split(full, cfg.test_fraction, cfg.seed);
  if (!cfg.data_path.empty() && full.dim != cfg.dim)
    throw ArtifactMismatch("data file dim " + std::to_string(full.dim) +
                           " does not match configured dim " + std::to_string(cfg.dim));
  ActorCriticParams p = fresh_params(cfg, train_ds.num_identities);

  const TrainConfig tc = cfg.train();
  const std::vector<MetricsRow> rows = cfg.mode == "on" ? train_on_policy(p, train_ds, tc)
                                                        : train_off_policy(p, train_ds, tc);

  fs::create_directories(cfg.out_dir);
  write_metrics_csv(rows, (fs::path(cfg.out_dir) / "metrics.csv").string());
  auto manifest = to_kv(cfg);
  manifest["train_identities"] = std::to_string(train_ds.num_identities);
  manifest["test_identities"] = std::to_string(test_ds.num_identities);
  save_checkpoint(p, (fs::path(cfg.out_dir) / "checkpoint").string(), manifest);
  std::cout << "trained DAC(" << cfg.mode << ") for " << cfg.episodes << " episodes; wrote "
            << cfg.out_dir << "/checkpoint and metrics.csv";
  if (!rows.empty()) std::cout << " (final xent " << fmt_double(rows.back().xent_loss) << ")";
  std::cout << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_dir, bool baseline_avepool,
             const std::string& split_name) {
  const Dataset full = load_source(cfg);
  Dataset target;
  if (split_name == "all") {
    target = full;
  } else {
    auto [train_ds, test_ds] = split(full, cfg.test_fraction, cfg.seed);
    target = split_name == "train" ? std::move(train_ds) : std::move(test_ds);
  }

  ActorCriticParams params;
  const ActorCriticParams* p = nullptr;
  if (!baseline_avepool) {
    if (checkpoint_dir.empty())
      throw ConfigError("eval: need --checkpoint or --baseline avepool");
    params = load_checkpoint(checkpoint_dir);
    p = &params;
  }
  const std::vector<SetRepresentation> reps = build_representations(target, p);
  const EvalResult res = evaluate(target, reps, cfg.distance == "pgr", cfg.workers);

  fs::create_directories(cfg.out_dir);
  write_roc_csv(res.verification, (fs::path(cfg.out_dir) / "roc.csv").string());
  write_cmc_csv(res.cmc, (fs::path(cfg.out_dir) / "cmc.csv").string());
  write_open_set_csv(res.open_set, (fs::path(cfg.out_dir) / "openset.csv").string());
  json j;
  for (const auto& [key, value] : res.summary) j[key] = value;
  j["distance"] = cfg.distance;
  j["split"] = split_name;
  j["sets"] = target.sets.size();
  j["representation"] = baseline_avepool ? "avepool" : "dac";
  std::ofstream os((fs::path(cfg.out_dir) / "metrics.json").string());
  os << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_weights(const RunConfig& cfg, const std::string& checkpoint_dir,
                const std::string& set_id) {
  const Dataset full = load_source(cfg);
  const FeatureSet* set = nullptr;
  for (const FeatureSet& s : full.sets)
    if (s.set_id == set_id) set = &s;
  if (!set) {
    std::cerr << "unknown set_id '" << set_id << "'\n";
    return kExitConfig;
  }
  const ActorCriticParams params = load_checkpoint(checkpoint_dir);
  if (params.state_dim() != 2 * full.dim)
    throw ArtifactMismatch("checkpoint expects feature dim " +
                           std::to_string(params.state_dim() / 2) + ", dataset has " +
                           std::to_string(full.dim));
  const Vec weights = infer_weights(*set, PolicySampler{params}).first;

  std::vector<int> order(weights.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return weights[static_cast<size_t>(a)] > weights[static_cast<size_t>(b)];
  });
  std::cout << "member,yaw,quality,weight\n";
  for (const int i : order) {
    const Member& m = set->members[static_cast<size_t>(i)];
    std::cout << i << "," << fmt_double(m.yaw) << ","
              << (m.quality ? fmt_double(*m.quality) : std::string("-")) << ","
              << fmt_double(weights[static_cast<size_t>(i)]) << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"setpool: attention-weighted set aggregation trained with actor-critic RL"};
  app.require_subcommand(1);

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic embedding CSV");
  ConfigBinder gen_cfg(gen);
  std::string gen_out;
  gen->add_option("--out", gen_out, "output CSV path")->required();

  CLI::App* train = app.add_subcommand("train", "train DAC(on) or DAC(off)");
  ConfigBinder train_cfg(train);

  CLI::App* eval = app.add_subcommand("eval", "verification/identification metrics");
  ConfigBinder eval_cfg(eval);
  std::string eval_checkpoint, eval_baseline, eval_split = "test";
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint directory from train");
  eval->add_option("--baseline", eval_baseline, "avepool: score mean pooling instead");
  eval->add_option("--split", eval_split, "train | test | all (default test)");

  CLI::App* weights = app.add_subcommand("weights", "per-member weight table for one set");
  ConfigBinder weights_cfg(weights);
  std::string weights_checkpoint, weights_set_id;
  weights->add_option("--checkpoint", weights_checkpoint, "checkpoint directory")->required();
  weights->add_option("--set-id", weights_set_id, "set to inspect")->required();

  CLI::App* selfcheck = app.add_subcommand("selfcheck", "gradient/estimator/projection checks");
  uint64_t selfcheck_seed = 7;
  bool corrupt = false;
  selfcheck->add_option("--seed", selfcheck_seed, "seed for randomized checks");
  selfcheck->add_flag("--corrupt-backward", corrupt,
                      "test hook: corrupt one analytic gradient (must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_cfg.resolve(), gen_out);
    if (train->parsed()) return cmd_train(train_cfg.resolve());
    if (eval->parsed()) {
      if (!eval_baseline.empty() && eval_baseline != "avepool")
        throw ConfigError("--baseline supports only 'avepool'");
      if (eval_split != "train" && eval_split != "test" && eval_split != "all")
        throw ConfigError("--split must be train|test|all");
      return cmd_eval(eval_cfg.resolve(), eval_checkpoint, eval_baseline == "avepool", eval_split);
    }
    if (weights->parsed())
      return cmd_weights(weights_cfg.resolve(), weights_checkpoint, weights_set_id);
    if (selfcheck->parsed()) {
      const auto results = run_selfchecks(selfcheck_seed, corrupt);
      const bool ok = print_check_report(results, std::cout);
      return ok ? kExitOk : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ArtifactMismatch& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
