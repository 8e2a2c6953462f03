#pragma once

#include "setpool/data.hpp"
#include "setpool/nn.hpp"

namespace setpool {

/// Weighted average of the features: sum(a_i f_i) / sum(a_i). The function is
/// scale-invariant in the weights, so they are divided by their maximum
/// before combining; a uniform weight vector then reduces bit-exactly to
/// plain averaging, and intermediate sums stay bounded.
inline Vec aggregate(const std::vector<Vec>& features, const Vec& weights) {
  if (features.empty()) throw std::invalid_argument("aggregate: empty input");
  if (features.size() != weights.size())
    throw std::invalid_argument("aggregate: features/weights length mismatch");
  const double wmax = *std::max_element(weights.begin(), weights.end());
  if (!(wmax > 0.0)) throw std::invalid_argument("aggregate: weights must be > 0");
  for (const double w : weights)
    if (!(w > 0.0)) throw std::invalid_argument("aggregate: weights must be > 0");
  const size_t d = features[0].size();
  Vec out(d, 0.0);
  double wsum = 0.0;
  for (size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != d) throw std::invalid_argument("aggregate: ragged features");
    const double a = weights[i] / wmax;
    wsum += a;
    for (size_t k = 0; k < d; ++k) out[k] += a * features[i][k];
  }
  for (size_t k = 0; k < d; ++k) out[k] /= wsum;
  return out;
}

inline std::vector<Vec> feature_list(const FeatureSet& set) {
  std::vector<Vec> f;
  f.reserve(set.members.size());
  for (const Member& m : set.members) f.push_back(m.feature);
  return f;
}

/// The MDP state for visiting member `idx`: concat of the weighted average of
/// the remaining features, (sum a_i f_i - f_idx) / (sum a_i - 1), with f_idx
/// itself. Requires weights[idx] == 1 (not yet re-weighted). For singleton
/// sets the remaining-aggregate half is the zero vector.
inline Vec build_state(const std::vector<Vec>& features, const Vec& weights, int idx) {
  const int t = static_cast<int>(features.size());
  if (idx < 0 || idx >= t) throw std::invalid_argument("build_state: index out of range");
  if (features.size() != weights.size())
    throw std::invalid_argument("build_state: features/weights length mismatch");
  assert(weights[static_cast<size_t>(idx)] == 1.0);
  const size_t d = features[0].size();
  Vec state(2 * d, 0.0);
  if (t > 1) {
    double wsum = 0.0;
    for (const double w : weights) wsum += w;
    Vec num(d, 0.0);
    for (size_t i = 0; i < features.size(); ++i)
      for (size_t k = 0; k < d; ++k) num[k] += weights[i] * features[i][k];
    const double denom = wsum - 1.0;
    for (size_t k = 0; k < d; ++k) state[k] = (num[k] - features[static_cast<size_t>(idx)][k]) / denom;
  }
  for (size_t k = 0; k < d; ++k) state[d + k] = features[static_cast<size_t>(idx)][k];
  return state;
}

/// Classifier head that defines the reward: h maps an aggregated feature to
/// identity logits; lambda weights the hinge regularizer of the reward.
struct RewardHead {
  DenseNet h;
  double lambda = 0.1;

  double loss(const Vec& aggregated, int label) const {
    return softmax_xent(forward(h, aggregated), label).first;
  }
};

struct EpisodeState {
  Vec weights;             // length T, all start at 1
  int step = 0;            // 0-based count of members already visited
  std::vector<int> order;  // visit order, a permutation of member indices
  Vec state_vec;           // state for the member about to be visited
};

inline EpisodeState episode_begin(const FeatureSet& set, std::vector<int> order) {
  const int t = set.size();
  if (t < 1) throw std::invalid_argument("episode_begin: empty set");
  if (static_cast<int>(order.size()) != t)
    throw std::invalid_argument("episode_begin: order length mismatch");
  EpisodeState es;
  es.weights.assign(static_cast<size_t>(t), 1.0);
  es.order = std::move(order);
  es.state_vec = build_state(feature_list(set), es.weights, es.order[0]);
  return es;
}

struct StepResult {
  double reward = 0.0;
  bool terminal = false;
};

/// One environment transition: assign `action` as the weight of the member
/// being visited. Reward is the classification-loss improvement of the
/// aggregate plus the hinge term lambda * max(0, 1 - action). `head` may be
/// null (inference), in which case the loss term is skipped and reward is 0.
inline StepResult env_step(const FeatureSet& set, EpisodeState& es, const RewardHead* head,
                           double action) {
  const int t = set.size();
  if (es.step >= t) throw std::invalid_argument("env_step: episode already terminal");
  if (!(action > 0.0) || !std::isfinite(action))
    throw std::invalid_argument("env_step: action must be finite and > 0, got " +
                                fmt_double(action));
  const std::vector<Vec> features = feature_list(set);
  StepResult res;
  const int idx = es.order[static_cast<size_t>(es.step)];
  if (head) {
    const double loss_before = head->loss(aggregate(features, es.weights), set.identity);
    es.weights[static_cast<size_t>(idx)] = action;
    const double loss_after = head->loss(aggregate(features, es.weights), set.identity);
    res.reward = (loss_before - loss_after) + head->lambda * std::max(0.0, 1.0 - action);
  } else {
    es.weights[static_cast<size_t>(idx)] = action;
  }
  es.step += 1;
  res.terminal = es.step == t;
  if (!res.terminal)
    es.state_vec = build_state(features, es.weights, es.order[static_cast<size_t>(es.step)]);
  else
    es.state_vec.clear();
  return res;
}

/// Recorded episode; the unit of replay.
struct TrajStep {
  Vec state;          // Eq-1 state at visit time
  double raw = 0.0;   // pre-softplus action sample u
  double weight = 0.0;
  double logmu = 0.0;  // behavior log-density of u, raw space
  double reward = 0.0;
};

struct Trajectory {
  std::string set_id;
  int identity = 0;
  std::vector<int> order;
  std::vector<TrajStep> steps;
  bool terminal = false;

  int length() const { return static_cast<int>(steps.size()); }
};

/// Final per-member weights of a finished episode.
inline Vec final_weights(const Trajectory& traj) {
  Vec w(traj.order.size(), 1.0);
  for (size_t i = 0; i < traj.steps.size(); ++i)
    w[static_cast<size_t>(traj.order[i])] = traj.steps[i].weight;
  return w;
}

enum class ActionMode { Stochastic, Deterministic };

/// Drives one full episode. `policy` is anything with
///   sample(const Vec& state, ActionMode, Rng&) -> {raw, weight, logdensity}.
/// Training uses a fresh random permutation per episode; inference visits
/// members in the given order.
template <class PolicyT>
Trajectory run_episode(const FeatureSet& set, const PolicyT& policy, const RewardHead* head,
                       ActionMode mode, Rng& rng) {
  const int t = set.size();
  std::vector<int> order;
  if (mode == ActionMode::Stochastic) {
    order = rng.permutation(t);
  } else {
    order.resize(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) order[static_cast<size_t>(i)] = i;
  }
  EpisodeState es = episode_begin(set, order);
  Trajectory traj;
  traj.set_id = set.set_id;
  traj.identity = set.identity;
  traj.order = es.order;
  while (true) {
    const Vec state = es.state_vec;
    const auto sample = policy.sample(state, mode, rng);
    const StepResult res = env_step(set, es, head, sample.weight);
    traj.steps.push_back({state, sample.raw, sample.weight, sample.logdensity, res.reward});
    if (res.terminal) break;
  }
  traj.terminal = true;
  return traj;
}

/// Deterministic-mode episode over the canonical member order; returns the
/// final weights and the aggregated set feature.
template <class PolicyT>
std::pair<Vec, Vec> infer_weights(const FeatureSet& set, const PolicyT& policy) {
  Rng unused(0);
  const Trajectory traj = run_episode(set, policy, nullptr, ActionMode::Deterministic, unused);
  Vec w = final_weights(traj);
  Vec f = aggregate(feature_list(set), w);
  return {std::move(w), std::move(f)};
}

}  // namespace setpool
