#pragma once

#include <filesystem>

#include "setpool/checkpoint.hpp"
#include "setpool/env.hpp"

namespace setpool {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5*log(2*pi)
inline constexpr double kActionFloor = 1e-3;

/// Gaussian over the raw (pre-softplus) action u.
struct GaussianParams {
  double mean = 0.0;
  double log_std = 0.0;  // clamped to [kLogStdMin, kLogStdMax]
};

inline double gaussian_logdensity(double u, const GaussianParams& g) {
  const double s = std::exp(g.log_std);
  const double z = (u - g.mean) / s;
  return -0.5 * z * z - g.log_std - kLogSqrt2Pi;
}

/// Actor, critic and reward head. The trunk is fully shared between the
/// policy and value heads; theta = (trunk, policy_head) is the policy
/// parameter space, omega = (trunk, value_head) the value one. avg_* hold the
/// average-policy copy theta_a anchoring the trust region.
struct ActorCriticParams {
  DenseNet trunk;            // input 2d, all-tanh
  DenseNet policy_head;      // trunk out -> (mean, log_std), linear
  DenseNet value_head;       // trunk out -> scalar, linear
  DenseNet avg_trunk;        // theta_a
  DenseNet avg_policy_head;  //
  RewardHead reward_head;    // aggregated feature -> train-identity logits

  int state_dim() const { return trunk.input_dim(); }
  int feature_dim() const { return reward_head.h.input_dim(); }
  int num_classes() const { return reward_head.h.output_dim(); }
};

/// Trunk is Glorot-initialized; both heads start at zero so the untrained
/// policy emits one constant weight for every state (uniform attention, i.e.
/// mean pooling) and the initial value estimate is 0.
inline ActorCriticParams make_actor_critic(int feature_dim, const std::vector<int>& trunk_hidden,
                                           const std::vector<int>& reward_hidden, int num_classes,
                                           double lambda, Rng& rng) {
  if (feature_dim < 1) throw ConfigError("make_actor_critic: feature_dim must be >= 1");
  if (num_classes < 2) throw ConfigError("make_actor_critic: need at least 2 classes");
  if (trunk_hidden.empty()) throw ConfigError("make_actor_critic: trunk needs at least one layer");
  ActorCriticParams p;
  std::vector<int> tdims{2 * feature_dim};
  tdims.insert(tdims.end(), trunk_hidden.begin(), trunk_hidden.end());
  p.trunk = make_net(tdims, Activation::Tanh, Activation::Tanh, rng);
  const int trunk_out = p.trunk.output_dim();
  p.policy_head = make_net({trunk_out, 2}, Activation::Identity, Activation::Identity, rng,
                           /*zero_last=*/true);
  p.value_head = make_net({trunk_out, 1}, Activation::Identity, Activation::Identity, rng,
                          /*zero_last=*/true);
  p.avg_trunk = p.trunk;
  p.avg_policy_head = p.policy_head;
  std::vector<int> rdims{feature_dim};
  rdims.insert(rdims.end(), reward_hidden.begin(), reward_hidden.end());
  rdims.push_back(num_classes);
  p.reward_head.h = make_net(rdims, Activation::Tanh, Activation::Identity, rng);
  p.reward_head.lambda = lambda;
  return p;
}

namespace detail {

struct HeadEval {
  GaussianParams dist;
  bool clamped = false;  // log_std hit a clamp bound; its gradient is gated off
  Tape trunk_tape;
  Tape head_tape;
};

inline HeadEval eval_policy(const DenseNet& trunk, const DenseNet& head, const Vec& state) {
  HeadEval ev;
  const Vec hidden = forward(trunk, state, &ev.trunk_tape);
  const Vec out = forward(head, hidden, &ev.head_tape);
  if (out.size() != 2) throw std::invalid_argument("policy head must emit (mean, log_std)");
  ev.dist.mean = out[0];
  ev.dist.log_std = std::clamp(out[1], kLogStdMin, kLogStdMax);
  ev.clamped = out[1] < kLogStdMin || out[1] > kLogStdMax;
  return ev;
}

}  // namespace detail

inline GaussianParams policy_forward(const ActorCriticParams& p, const Vec& state) {
  return detail::eval_policy(p.trunk, p.policy_head, state).dist;
}

inline double value_forward(const ActorCriticParams& p, const Vec& state) {
  return forward(p.value_head, forward(p.trunk, state))[0];
}

struct ActionSample {
  double raw = 0.0;         // u ~ N(mean, std^2)
  double weight = 0.0;      // softplus(u) + floor, always > 0
  double logdensity = 0.0;  // log N(u; mean, std), raw space
};

inline ActionSample sample_action(const GaussianParams& dist, Rng& rng, ActionMode mode,
                                  double floor = kActionFloor) {
  ActionSample a;
  a.raw = mode == ActionMode::Deterministic ? dist.mean
                                            : rng.normal(dist.mean, std::exp(dist.log_std));
  a.weight = softplus(a.raw) + floor;
  a.logdensity = gaussian_logdensity(a.raw, dist);
  return a;
}

/// delta = r + gamma * v_next * (terminal ? 0 : 1) - v_t
inline double td_error(double r, double v_t, double v_next, double gamma, bool terminal) {
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("td_error: gamma in [0, 1)");
  return r + gamma * (terminal ? 0.0 : v_next) - v_t;
}

/// Gradient over the policy parameter space theta = (trunk, policy_head).
struct PolicyGrad {
  Gradient trunk;
  Gradient head;

  void zero() {
    trunk.zero();
    head.zero();
  }
  void add_scaled(const PolicyGrad& g, double c) {
    trunk.add_scaled(g.trunk, c);
    head.add_scaled(g.head, c);
  }
  void scale_by(double c) {
    trunk.scale_by(c);
    head.scale_by(c);
  }
  bool finite() const { return trunk.finite() && head.finite(); }
};

inline PolicyGrad make_policy_grad(const ActorCriticParams& p) {
  return {make_gradient(p.trunk), make_gradient(p.policy_head)};
}

/// Same layout over omega = (trunk, value_head).
struct ValueGrad {
  Gradient trunk;
  Gradient head;

  void zero() {
    trunk.zero();
    head.zero();
  }
  void add_scaled(const ValueGrad& g, double c) {
    trunk.add_scaled(g.trunk, c);
    head.add_scaled(g.head, c);
  }
  bool finite() const { return trunk.finite() && head.finite(); }
};

inline ValueGrad make_value_grad(const ActorCriticParams& p) {
  return {make_gradient(p.trunk), make_gradient(p.value_head)};
}

inline Vec flatten(const PolicyGrad& g) {
  Vec out = flatten(g.trunk);
  const Vec h = flatten(g.head);
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

inline void unflatten(const Vec& flat, PolicyGrad& g) {
  size_t trunk_n = 0;
  for (const Vec& v : g.trunk.dw) trunk_n += v.size();
  for (const Vec& v : g.trunk.db) trunk_n += v.size();
  unflatten(flat, 0, g.trunk);
  unflatten(flat, trunk_n, g.head);
}

// net += c * grad
inline void net_axpy(DenseNet& net, const Gradient& g, double c) {
  for (size_t i = 0; i < net.layers.size(); ++i) {
    axpy(c, g.dw[i], net.layers[i].w);
    axpy(c, g.db[i], net.layers[i].b);
  }
}

namespace detail {

/// d logpi / d (mean, pre-clamp log_std) of a Gaussian sample u.
inline Vec logpi_head_upstream(double u, const GaussianParams& dist, bool clamped) {
  const double s = std::exp(dist.log_std);
  const double z = (u - dist.mean) / s;
  Vec up(2);
  up[0] = z / s;                           // d/d mean
  up[1] = clamped ? 0.0 : (z * z - 1.0);   // d/d log_std, gated at the clamp
  return up;
}

}  // namespace detail

/// log pi_theta(u|s) and its gradient, accumulated into `g` scaled by `c`.
inline double accumulate_logpi_grad(const ActorCriticParams& p, const Vec& state, double u,
                                    double c, PolicyGrad& g) {
  detail::HeadEval ev = detail::eval_policy(p.trunk, p.policy_head, state);
  Vec up = detail::logpi_head_upstream(u, ev.dist, ev.clamped);
  scale(up, c);
  const Vec d_hidden = backward(p.policy_head, ev.head_tape, up, g.head, /*accumulate=*/true);
  backward(p.trunk, ev.trunk_tape, d_hidden, g.trunk, /*accumulate=*/true);
  return gaussian_logdensity(u, ev.dist);
}

/// V(s) and dV/d omega, accumulated into `g` scaled by `c`.
inline double accumulate_value_grad(const ActorCriticParams& p, const Vec& state, double c,
                                    ValueGrad& g) {
  Tape trunk_tape, head_tape;
  const Vec hidden = forward(p.trunk, state, &trunk_tape);
  const Vec out = forward(p.value_head, hidden, &head_tape);
  const Vec d_hidden = backward(p.value_head, head_tape, Vec{c}, g.head, /*accumulate=*/true);
  backward(p.trunk, trunk_tape, d_hidden, g.trunk, /*accumulate=*/true);
  return out[0];
}

/// Cross-entropy of the reward head on one aggregated feature; gradient into `g`.
inline double reward_head_xent_grad(const RewardHead& head, const Vec& aggregated, int label,
                                    Gradient& g) {
  Tape tape;
  const Vec logits = forward(head.h, aggregated, &tape);
  auto [loss, dlogits] = softmax_xent(logits, label);
  backward(head.h, tape, dlogits, g, /*accumulate=*/true);
  return loss;
}

/// Adapter giving run_episode the sampling interface for these params.
struct PolicySampler {
  const ActorCriticParams& p;

  ActionSample sample(const Vec& state, ActionMode mode, Rng& rng) const {
    return sample_action(policy_forward(p, state), rng, mode);
  }
};

struct UpdateRates {
  double lr_pi = 0.01;
  double lr_v = 0.05;
  double lr_h = 0.05;
  double alpha = 0.99;  // average-policy mixing
};

struct UpdateDiag {
  double mean_td = 0.0;
  double xent = 0.0;          // reward-head loss on the final aggregate
  double policy_grad_norm = 0.0;
  bool skipped = false;       // non-finite gradient; parameters untouched
};

inline void average_policy_update(ActorCriticParams& p, double alpha);

/// On-policy advantage actor-critic update from one trajectory: the policy
/// ascends sum_t delta_t * grad log pi(u_t|s_t) with the TD error delta as
/// the (constant) advantage; the value head descends the squared TD loss;
/// the reward head takes a cross-entropy step on the final aggregate
/// (through `h_opt` when a trainer carries momentum state).
inline UpdateDiag a2c_update(ActorCriticParams& p, const FeatureSet& set, const Trajectory& traj,
                             const UpdateRates& rates, double gamma,
                             Optimizer* h_opt = nullptr) {
  const int t_len = traj.length();
  if (t_len == 0) throw std::invalid_argument("a2c_update: empty trajectory");
  UpdateDiag diag;

  Vec values(static_cast<size_t>(t_len) + 1, 0.0);
  for (int t = 0; t < t_len; ++t)
    values[static_cast<size_t>(t)] = value_forward(p, traj.steps[static_cast<size_t>(t)].state);
  values[static_cast<size_t>(t_len)] = 0.0;  // terminal

  PolicyGrad pg = make_policy_grad(p);
  ValueGrad vg = make_value_grad(p);
  for (int t = 0; t < t_len; ++t) {
    const TrajStep& st = traj.steps[static_cast<size_t>(t)];
    const bool terminal = t + 1 == t_len;
    const double delta = td_error(st.reward, values[static_cast<size_t>(t)],
                                  values[static_cast<size_t>(t) + 1], gamma, terminal);
    diag.mean_td += delta / t_len;
    accumulate_logpi_grad(p, st.state, st.raw, delta, pg);
    accumulate_value_grad(p, st.state, delta, vg);
  }

  Gradient hg = make_gradient(p.reward_head.h);
  const Vec final_agg = aggregate(feature_list(set), final_weights(traj));
  diag.xent = reward_head_xent_grad(p.reward_head, final_agg, set.identity, hg);

  if (!pg.finite() || !vg.finite() || !hg.finite()) {
    diag.skipped = true;
    return diag;
  }
  diag.policy_grad_norm = norm2(flatten(pg));

  // ascent on J for the policy, ascent on the value fit, descent on xent
  net_axpy(p.trunk, pg.trunk, rates.lr_pi);
  net_axpy(p.policy_head, pg.head, rates.lr_pi);
  net_axpy(p.trunk, vg.trunk, rates.lr_v);
  net_axpy(p.value_head, vg.head, rates.lr_v);
  if (h_opt)
    h_opt->step(p.reward_head.h, hg);
  else
    net_axpy(p.reward_head.h, hg, -rates.lr_h);
  average_policy_update(p, rates.alpha);
  return diag;
}

/// theta_a <- alpha * theta_a + (1 - alpha) * theta, elementwise.
inline void average_policy_update(ActorCriticParams& p, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("average_policy_update: alpha in [0,1]");
  auto mix = [alpha](DenseNet& avg, const DenseNet& cur) {
    for (size_t i = 0; i < avg.layers.size(); ++i) {
      Vec& aw = avg.layers[i].w;
      const Vec& cw = cur.layers[i].w;
      for (size_t k = 0; k < aw.size(); ++k) aw[k] = alpha * aw[k] + (1.0 - alpha) * cw[k];
      Vec& ab = avg.layers[i].b;
      const Vec& cb = cur.layers[i].b;
      for (size_t k = 0; k < ab.size(); ++k) ab[k] = alpha * ab[k] + (1.0 - alpha) * cb[k];
    }
  };
  mix(p.avg_trunk, p.trunk);
  mix(p.avg_policy_head, p.policy_head);
}

// ---------------------------------------------------------------------------
// Checkpointing: one parameter file per net plus a key=value manifest.

inline void save_checkpoint(const ActorCriticParams& p, const std::string& dir,
                            std::map<std::string, std::string> manifest = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_net(p.trunk, (fs::path(dir) / "trunk.spnet").string());
  save_net(p.policy_head, (fs::path(dir) / "policy_head.spnet").string());
  save_net(p.value_head, (fs::path(dir) / "value_head.spnet").string());
  save_net(p.avg_trunk, (fs::path(dir) / "avg_trunk.spnet").string());
  save_net(p.avg_policy_head, (fs::path(dir) / "avg_policy_head.spnet").string());
  save_net(p.reward_head.h, (fs::path(dir) / "reward_head.spnet").string());
  manifest["lambda"] = fmt_double(p.reward_head.lambda);
  manifest["eps_floor"] = fmt_double(kActionFloor);
  manifest["state_dim"] = std::to_string(p.state_dim());
  manifest["feature_dim"] = std::to_string(p.feature_dim());
  manifest["num_classes"] = std::to_string(p.num_classes());
  manifest["version"] = kVersion;
  write_kv_file((fs::path(dir) / "manifest.txt").string(), manifest);
}

inline ActorCriticParams load_checkpoint(const std::string& dir,
                                         std::map<std::string, std::string>* manifest_out = nullptr) {
  namespace fs = std::filesystem;
  ActorCriticParams p;
  p.trunk = load_net((fs::path(dir) / "trunk.spnet").string());
  p.policy_head = load_net((fs::path(dir) / "policy_head.spnet").string());
  p.value_head = load_net((fs::path(dir) / "value_head.spnet").string());
  p.avg_trunk = load_net((fs::path(dir) / "avg_trunk.spnet").string());
  p.avg_policy_head = load_net((fs::path(dir) / "avg_policy_head.spnet").string());
  p.reward_head.h = load_net((fs::path(dir) / "reward_head.spnet").string());
  const auto manifest = read_kv_file((fs::path(dir) / "manifest.txt").string());
  if (auto it = manifest.find("lambda"); it != manifest.end())
    p.reward_head.lambda = std::stod(it->second);
  if (p.trunk.input_dim() != 2 * p.reward_head.h.input_dim())
    throw ArtifactMismatch("checkpoint: trunk input dim " + std::to_string(p.trunk.input_dim()) +
                           " does not match feature dim " +
                           std::to_string(p.reward_head.h.input_dim()));
  if (manifest_out) *manifest_out = manifest;
  return p;
}

}  // namespace setpool
