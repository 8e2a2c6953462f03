#pragma once

#include "setpool/actor_critic.hpp"

namespace setpool {

/// Fixed-capacity FIFO ring of trajectories with their behavior densities.
class ReplayPool {
 public:
  explicit ReplayPool(size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("ReplayPool: capacity must be > 0");
  }

  size_t capacity() const { return capacity_; }
  size_t size() const { return entries_.size(); }
  uint64_t inserted() const { return inserted_; }

  void push(Trajectory traj) {
    if (traj.steps.empty()) throw std::invalid_argument("ReplayPool::push: empty trajectory");
    for (const TrajStep& s : traj.steps)
      if (!std::isfinite(s.logmu) || !std::isfinite(s.raw) || !std::isfinite(s.reward))
        throw std::invalid_argument("ReplayPool::push: non-finite trajectory record");
    if (entries_.size() < capacity_) {
      entries_.push_back(std::move(traj));
    } else {
      entries_[next_] = std::move(traj);
      next_ = (next_ + 1) % capacity_;
    }
    ++inserted_;
  }

  /// Uniform sample of n distinct entries; n must not exceed the pool size.
  std::vector<const Trajectory*> sample(size_t n, Rng& rng) const {
    if (entries_.empty()) throw std::invalid_argument("ReplayPool::sample: pool is empty");
    if (n > entries_.size())
      throw std::invalid_argument("ReplayPool::sample: n exceeds pool size");
    std::vector<const Trajectory*> out;
    out.reserve(n);
    for (const int i : rng.choose(static_cast<int>(entries_.size()), static_cast<int>(n)))
      out.push_back(&entries_[static_cast<size_t>(i)]);
    return out;
  }

  /// Entries oldest-first (the eviction order).
  std::vector<const Trajectory*> all() const {
    std::vector<const Trajectory*> out;
    out.reserve(entries_.size());
    for (size_t i = 0; i < entries_.size(); ++i)
      out.push_back(&entries_[(next_ + i) % entries_.size()]);
    return out;
  }

 private:
  size_t capacity_;
  std::vector<Trajectory> entries_;
  size_t next_ = 0;  // eviction slot once full
  uint64_t inserted_ = 0;
};

// Spill format: magic "SPPOOL1\n", version u32, state_dim u32, count u32;
// per trajectory: set_id (u32 length + bytes), T u32, then T records of
// state_vec/raw/logmu/reward as little-endian f64. Only what the off-policy
// estimators consume is kept; visit order and identity are not retained.
inline constexpr char kPoolMagic[] = "SPPOOL1\n";
inline constexpr uint32_t kPoolVersion = 1;

inline void save_pool(const ReplayPool& pool, std::ostream& os) {
  const auto entries = pool.all();
  uint32_t state_dim = 0;
  if (!entries.empty()) state_dim = static_cast<uint32_t>(entries[0]->steps[0].state.size());
  os.write(kPoolMagic, sizeof(kPoolMagic) - 1);
  detail::put_u32(os, kPoolVersion);
  detail::put_u32(os, state_dim);
  detail::put_u32(os, static_cast<uint32_t>(entries.size()));
  for (const Trajectory* traj : entries) {
    detail::put_u32(os, static_cast<uint32_t>(traj->set_id.size()));
    os.write(traj->set_id.data(), static_cast<std::streamsize>(traj->set_id.size()));
    detail::put_u32(os, static_cast<uint32_t>(traj->steps.size()));
    for (const TrajStep& s : traj->steps) {
      if (s.state.size() != state_dim) throw std::invalid_argument("save_pool: ragged state dims");
      for (const double v : s.state) detail::put_f64(os, v);
      detail::put_f64(os, s.raw);
      detail::put_f64(os, s.logmu);
      detail::put_f64(os, s.reward);
    }
  }
  if (!os) throw std::runtime_error("save_pool: write failed");
}

inline ReplayPool load_pool(std::istream& is, size_t capacity) {
  char magic[sizeof(kPoolMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kPoolMagic, sizeof(magic)) != 0)
    throw ParseError("pool file: bad magic");
  if (detail::get_u32(is) != kPoolVersion) throw ParseError("pool file: unsupported version");
  const uint32_t state_dim = detail::get_u32(is);
  const uint32_t count = detail::get_u32(is);
  ReplayPool pool(capacity);
  for (uint32_t i = 0; i < count; ++i) {
    Trajectory traj;
    const uint32_t id_len = detail::get_u32(is);
    traj.set_id.resize(id_len);
    is.read(traj.set_id.data(), id_len);
    if (!is) throw ParseError("pool file: truncated set_id");
    const uint32_t t_len = detail::get_u32(is);
    if (t_len == 0) throw ParseError("pool file: empty trajectory");
    traj.identity = -1;  // not retained in the spill format
    traj.terminal = true;
    for (uint32_t t = 0; t < t_len; ++t) {
      TrajStep s;
      s.state.resize(state_dim);
      for (double& v : s.state) v = detail::get_f64(is);
      s.raw = detail::get_f64(is);
      s.logmu = detail::get_f64(is);
      s.reward = detail::get_f64(is);
      s.weight = softplus(s.raw) + kActionFloor;
      traj.steps.push_back(std::move(s));
      traj.order.push_back(static_cast<int>(t));
    }
    pool.push(std::move(traj));
  }
  return pool;
}

inline void save_pool(const ReplayPool& pool, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_pool: cannot open " + path);
  save_pool(pool, os);
}

inline ReplayPool load_pool(const std::string& path, size_t capacity) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_pool: cannot open " + path);
  return load_pool(is, capacity);
}

struct TrustRegionConfig {
  double xi = 1.0;        // KL-gradient constraint magnitude, > 0
  double alpha = 0.99;    // average-policy mixing, [0, 1]
  double rho_clip = 10.0; // IS truncation bound, > 0 (may be infinity)
};

/// Importance-sampling ratios rho_t = min(pi(u_t|s_t) / mu_t, rho_clip),
/// densities in raw action space. Throws if a density is non-finite; callers
/// discard the trajectory.
inline Vec is_ratios(const Trajectory& traj, const ActorCriticParams& p,
                     double rho_clip = std::numeric_limits<double>::infinity()) {
  Vec rho;
  rho.reserve(traj.steps.size());
  for (const TrajStep& s : traj.steps) {
    const double logpi = gaussian_logdensity(s.raw, policy_forward(p, s.state));
    if (!std::isfinite(logpi) || !std::isfinite(s.logmu))
      throw std::runtime_error("is_ratios: non-finite density for set " + traj.set_id);
    rho.push_back(std::min(std::exp(logpi - s.logmu), rho_clip));
  }
  return rho;
}

/// Off-policy Monte-Carlo return per step, by the backward recursion
/// Rbar_t = r_t + gamma * rho_{t+1} * Rbar_{t+1}.
inline Vec off_policy_return(const Trajectory& traj, const Vec& rho, double gamma) {
  const size_t t_len = traj.steps.size();
  if (rho.size() != t_len) throw std::invalid_argument("off_policy_return: rho length mismatch");
  Vec ret(t_len, 0.0);
  for (size_t t = t_len; t-- > 0;) {
    ret[t] = traj.steps[t].reward;
    if (t + 1 < t_len) ret[t] += gamma * rho[t + 1] * ret[t + 1];
  }
  return ret;
}

/// Off-policy value gradient (ascent on the value fit):
/// sum_t (Rbar_t - V(s_t)) * grad V(s_t) * prod_{i<=t} rho_i.
inline ValueGrad value_grad_off(const Trajectory& traj, const Vec& rho,
                                const ActorCriticParams& p, double gamma) {
  const Vec ret = off_policy_return(traj, rho, gamma);
  ValueGrad g = make_value_grad(p);
  double cum = 1.0;
  for (size_t t = 0; t < traj.steps.size(); ++t) {
    cum *= rho[t];
    const double v = value_forward(p, traj.steps[t].state);
    accumulate_value_grad(p, traj.steps[t].state, (ret[t] - v) * cum, g);
  }
  return g;
}

/// Off-policy policy gradient: sum_t rho_t * grad log pi(u_t|s_t) * delta_t,
/// with the TD error delta_t = r_t + gamma*V(s_{t+1}) - V(s_t) held constant
/// and V(s_{T+1}) = 0 at the terminal step.
inline PolicyGrad policy_grad_off(const Trajectory& traj, const Vec& rho,
                                  const ActorCriticParams& p, double gamma) {
  const size_t t_len = traj.steps.size();
  if (rho.size() != t_len) throw std::invalid_argument("policy_grad_off: rho length mismatch");
  Vec values(t_len + 1, 0.0);
  for (size_t t = 0; t < t_len; ++t) values[t] = value_forward(p, traj.steps[t].state);
  PolicyGrad g = make_policy_grad(p);
  for (size_t t = 0; t < t_len; ++t) {
    const double delta = td_error(traj.steps[t].reward, values[t], values[t + 1], gamma,
                                  /*terminal=*/t + 1 == t_len);
    accumulate_logpi_grad(p, traj.steps[t].state, traj.steps[t].raw, rho[t] * delta, g);
  }
  return g;
}

/// Closed-form KL between the raw-space Gaussians pi_{theta_a}(s), pi_theta(s).
inline double gaussian_kl(const GaussianParams& a, const GaussianParams& cur) {
  const double var_a = std::exp(2.0 * a.log_std);
  const double var = std::exp(2.0 * cur.log_std);
  const double dm = a.mean - cur.mean;
  return cur.log_std - a.log_std + (var_a + dm * dm) / (2.0 * var) - 0.5;
}

/// Mean over states of D_KL[pi_{theta_a}(s) || pi_theta(s)], differentiated
/// with respect to theta only. Returns the mean KL; the gradient goes to `g`.
inline double kl_grad(const ActorCriticParams& p, const std::vector<const Vec*>& states,
                      PolicyGrad& g) {
  if (states.empty()) throw std::invalid_argument("kl_grad: empty state batch");
  g = make_policy_grad(p);
  const double inv_n = 1.0 / static_cast<double>(states.size());
  double mean_kl = 0.0;
  for (const Vec* state : states) {
    const GaussianParams avg = detail::eval_policy(p.avg_trunk, p.avg_policy_head, *state).dist;
    detail::HeadEval cur = detail::eval_policy(p.trunk, p.policy_head, *state);
    mean_kl += gaussian_kl(avg, cur.dist) * inv_n;
    const double var = std::exp(2.0 * cur.dist.log_std);
    const double var_a = std::exp(2.0 * avg.log_std);
    const double dm = avg.mean - cur.dist.mean;
    Vec up(2);
    up[0] = -dm / var;  // d KL / d mean
    up[1] = cur.clamped ? 0.0 : 1.0 - (var_a + dm * dm) / var;  // d KL / d log_std
    scale(up, inv_n);
    const Vec d_hidden = backward(p.policy_head, cur.head_tape, up, g.head, /*accumulate=*/true);
    backward(p.trunk, cur.trunk_tape, d_hidden, g.trunk, /*accumulate=*/true);
  }
  return mean_kl;
}

inline double kl_divergence(const ActorCriticParams& p, const std::vector<const Vec*>& states) {
  if (states.empty()) throw std::invalid_argument("kl_divergence: empty state batch");
  double kl = 0.0;
  for (const Vec* state : states)
    kl += gaussian_kl(detail::eval_policy(p.avg_trunk, p.avg_policy_head, *state).dist,
                      policy_forward(p, *state));
  return kl / static_cast<double>(states.size());
}

/// KKT projection of the update direction onto {z : k.z <= xi}:
/// z* = dtheta - max{(k.dtheta - xi) / ||k||^2, 0} * k; identity when k = 0.
inline Vec trust_region_project(const Vec& dtheta, const Vec& k, double xi) {
  if (xi < 0.0) throw std::invalid_argument("trust_region_project: xi must be >= 0");
  if (dtheta.size() != k.size())
    throw std::invalid_argument("trust_region_project: size mismatch");
  Vec z = dtheta;
  const double k2 = dot(k, k);
  if (k2 > 0.0) {
    const double excess = (dot(k, dtheta) - xi) / k2;
    if (excess > 0.0) axpy(-excess, k, z);
  }
  return z;
}

}  // namespace setpool
