#pragma once

#include "setpool/replay.hpp"

namespace setpool {

struct TrainConfig {
  int episodes = 2000;
  double gamma = 0.9;
  UpdateRates rates;
  TrustRegionConfig trust;     // xi / alpha / rho_clip (rates.alpha mirrors trust.alpha)
  double h_momentum = 0.0;     // reward-head optimizer momentum
  size_t pool_capacity = 5000;
  int minibatch = 16;
  int warmup = 32;  // updates start once the pool holds more than this
  uint64_t seed = 1;
};

/// One metrics-log row per training iteration.
struct MetricsRow {
  long iter = 0;
  long episodes_seen = 0;
  double mean_reward = 0.0;    // mean step reward of the episode collected
  double xent_loss = 0.0;      // reward-head loss on its final aggregate
  double mean_kl = 0.0;        // KL(pi_theta_a || pi_theta) over update states
  double clip_fraction = 0.0;  // fraction of IS ratios truncated at rho_clip
};

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, std::ostream& os) {
  os << "iter,episodes_seen,mean_reward,xent_loss,mean_KL,clip_fraction\n";
  for (const MetricsRow& r : rows)
    os << r.iter << "," << r.episodes_seen << "," << fmt_double(r.mean_reward) << ","
       << fmt_double(r.xent_loss) << "," << fmt_double(r.mean_kl) << ","
       << fmt_double(r.clip_fraction) << "\n";
}

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  write_metrics_csv(rows, os);
}

namespace detail {

class DivergenceWatch {
 public:
  void observe(double loss) {
    streak_ = std::isfinite(loss) ? 0 : streak_ + 1;
    if (streak_ >= 10)
      throw DivergenceError("training diverged: non-finite loss for 10 consecutive iterations");
  }

 private:
  int streak_ = 0;
};

inline double episode_mean_reward(const Trajectory& traj) {
  double total = 0.0;
  for (const TrajStep& s : traj.steps) total += s.reward;
  return total / static_cast<double>(traj.length());
}

inline std::vector<const Vec*> trajectory_states(const std::vector<const Trajectory*>& batch) {
  std::vector<const Vec*> states;
  for (const Trajectory* traj : batch)
    for (const TrajStep& s : traj->steps) states.push_back(&s.state);
  return states;
}

}  // namespace detail

/// DAC(on): one stochastic episode followed by one A2C update, per episode.
inline std::vector<MetricsRow> train_on_policy(ActorCriticParams& p, const Dataset& train,
                                               const TrainConfig& cfg) {
  if (train.sets.empty()) throw std::invalid_argument("train_on_policy: empty dataset");
  Rng rollout = substream(cfg.seed, "rollout");
  std::vector<MetricsRow> rows;
  detail::DivergenceWatch watch;
  Optimizer h_opt(cfg.rates.lr_h, cfg.h_momentum);
  for (int e = 1; e <= cfg.episodes; ++e) {
    const FeatureSet& set = train.sets[rollout.below(train.sets.size())];
    const Trajectory traj =
        run_episode(set, PolicySampler{p}, &p.reward_head, ActionMode::Stochastic, rollout);
    const UpdateDiag diag = a2c_update(p, set, traj, cfg.rates, cfg.gamma, &h_opt);
    MetricsRow row;
    row.iter = e;
    row.episodes_seen = e;
    row.mean_reward = detail::episode_mean_reward(traj);
    row.xent_loss = diag.xent;
    std::vector<const Vec*> states;
    for (const TrajStep& s : traj.steps) states.push_back(&s.state);
    row.mean_kl = kl_divergence(p, states);
    rows.push_back(row);
    watch.observe(diag.xent);
  }
  return rows;
}

/// DAC(off): each episode is collected with the current policy and pushed to
/// the replay pool; once the pool exceeds the warm-up size, every episode is
/// followed by one minibatch update of Eq-style off-policy gradients with the
/// trust-region projected policy step. The reward head trains on the fresh
/// episode throughout.
inline std::vector<MetricsRow> train_off_policy(ActorCriticParams& p, const Dataset& train,
                                                const TrainConfig& cfg) {
  if (train.sets.empty()) throw std::invalid_argument("train_off_policy: empty dataset");
  Rng rollout = substream(cfg.seed, "rollout");
  Rng replay_rng = substream(cfg.seed, "replay-sampling");
  ReplayPool pool(cfg.pool_capacity);
  std::vector<MetricsRow> rows;
  detail::DivergenceWatch watch;
  Optimizer h_opt(cfg.rates.lr_h, cfg.h_momentum);
  long iter = 0;
  for (int e = 1; e <= cfg.episodes; ++e) {
    const FeatureSet& set = train.sets[rollout.below(train.sets.size())];
    Trajectory traj =
        run_episode(set, PolicySampler{p}, &p.reward_head, ActionMode::Stochastic, rollout);
    const double mean_reward = detail::episode_mean_reward(traj);

    Gradient hg = make_gradient(p.reward_head.h);
    const Vec final_agg = aggregate(feature_list(set), final_weights(traj));
    const double xent = reward_head_xent_grad(p.reward_head, final_agg, set.identity, hg);
    if (hg.finite()) h_opt.step(p.reward_head.h, hg);
    watch.observe(xent);

    pool.push(std::move(traj));
    if (pool.size() <= static_cast<size_t>(cfg.warmup)) continue;

    const size_t batch_n = std::min<size_t>(static_cast<size_t>(cfg.minibatch), pool.size());
    std::vector<const Trajectory*> batch = pool.sample(batch_n, replay_rng);

    PolicyGrad dtheta = make_policy_grad(p);
    ValueGrad domega = make_value_grad(p);
    size_t used = 0, clipped = 0, ratios = 0;
    for (const Trajectory* sampled : batch) {
      Vec rho;
      try {
        rho = is_ratios(*sampled, p, cfg.trust.rho_clip);
      } catch (const std::runtime_error&) {
        continue;  // stale or degenerate density: drop this trajectory
      }
      for (const double r : rho) {
        ++ratios;
        if (r >= cfg.trust.rho_clip) ++clipped;
      }
      dtheta.add_scaled(policy_grad_off(*sampled, rho, p, cfg.gamma), 1.0);
      domega.add_scaled(value_grad_off(*sampled, rho, p, cfg.gamma), 1.0);
      ++used;
    }
    if (used == 0) continue;
    dtheta.scale_by(1.0 / static_cast<double>(used));
    const double inv_used = 1.0 / static_cast<double>(used);

    PolicyGrad k = make_policy_grad(p);
    const double mean_kl = kl_grad(p, detail::trajectory_states(batch), k);
    const Vec z = trust_region_project(flatten(dtheta), flatten(k), cfg.trust.xi);

    PolicyGrad projected = make_policy_grad(p);
    unflatten(z, projected);
    if (projected.finite() && domega.finite()) {
      net_axpy(p.trunk, projected.trunk, cfg.rates.lr_pi);
      net_axpy(p.policy_head, projected.head, cfg.rates.lr_pi);
      net_axpy(p.trunk, domega.trunk, cfg.rates.lr_v * inv_used);
      net_axpy(p.value_head, domega.head, cfg.rates.lr_v * inv_used);
    }
    average_policy_update(p, cfg.trust.alpha);

    MetricsRow row;
    row.iter = ++iter;
    row.episodes_seen = e;
    row.mean_reward = mean_reward;
    row.xent_loss = xent;
    row.mean_kl = mean_kl;
    row.clip_fraction = ratios == 0 ? 0.0 : static_cast<double>(clipped) / static_cast<double>(ratios);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace setpool
