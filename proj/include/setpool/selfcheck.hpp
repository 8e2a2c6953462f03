#pragma once

#include <iomanip>
#include <iostream>

#include "setpool/config.hpp"
#include "setpool/eval.hpp"

namespace setpool {

struct CheckResult {
  std::string name;
  double max_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace detail {

inline std::vector<double*> theta_ptrs(ActorCriticParams& p) {
  std::vector<double*> ptrs = param_ptrs(p.trunk);
  const std::vector<double*> head = param_ptrs(p.policy_head);
  ptrs.insert(ptrs.end(), head.begin(), head.end());
  return ptrs;
}

inline std::vector<double*> omega_ptrs(ActorCriticParams& p) {
  std::vector<double*> ptrs = param_ptrs(p.trunk);
  const std::vector<double*> head = param_ptrs(p.value_head);
  ptrs.insert(ptrs.end(), head.begin(), head.end());
  return ptrs;
}

inline Vec flatten_omega(const ValueGrad& g) {
  Vec out = flatten(g.trunk);
  const Vec h = flatten(g.head);
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

/// Single-constraint QP solved by explicit case analysis, then verified
/// against the KKT conditions and random feasible perturbations. Kept
/// separate from trust_region_project on purpose.
inline Vec qp_oracle(const Vec& dtheta, const Vec& k, double xi, Rng& rng) {
  const double k2 = dot(k, k);
  Vec z = dtheta;
  if (k2 > 0.0 && dot(k, dtheta) > xi) {
    // constraint active: minimize ||dtheta - z|| on the hyperplane k.z = xi
    const double nu = (dot(k, dtheta) - xi) / k2;
    for (size_t i = 0; i < z.size(); ++i) z[i] = dtheta[i] - nu * k[i];
    if (std::abs(dot(k, z) - xi) > 1e-9 * std::max(1.0, std::abs(xi)))
      throw std::runtime_error("qp_oracle: active-set solution infeasible");
  }
  if (dot(k, z) > xi + 1e-9) throw std::runtime_error("qp_oracle: infeasible solution");
  // optimality probe: no feasible neighbor may be closer to dtheta
  Vec diff(z.size());
  for (size_t i = 0; i < z.size(); ++i) diff[i] = dtheta[i] - z[i];
  const double base = dot(diff, diff);
  for (int trial = 0; trial < 64; ++trial) {
    Vec cand = z;
    for (double& v : cand) v += 1e-3 * rng.normal();
    if (dot(k, cand) > xi) continue;
    Vec cd(cand.size());
    for (size_t i = 0; i < cand.size(); ++i) cd[i] = dtheta[i] - cand[i];
    if (dot(cd, cd) < base - 1e-9) throw std::runtime_error("qp_oracle: solution not optimal");
  }
  return z;
}

}  // namespace detail

/// Gradient, estimator-reduction, projection and telescoping checks over
/// randomized instances. `corrupt_backward` is a test hook that perturbs one
/// analytic component so the harness can prove the checks have teeth.
inline std::vector<CheckResult> run_selfchecks(uint64_t seed = 7, bool corrupt_backward = false) {
  std::vector<CheckResult> results;
  auto record = [&results](const std::string& name, double err, double tol) {
    results.push_back({name, err, tol, std::isfinite(err) && err < tol});
  };
  Rng rng = substream(seed, "selfcheck");

  // --- backward vs central finite differences, every activation kind ---
  {
    double worst = 0.0;
    for (const Activation act :
         {Activation::Tanh, Activation::Relu, Activation::Identity, Activation::Softplus}) {
      DenseNet net = make_net({4, 6, 3}, act, Activation::Identity, rng);
      Vec x(4), upstream(3);
      for (double& v : x) v = rng.normal();
      for (double& v : upstream) v = rng.uniform(0.5, 1.5);
      Tape tape;
      forward(net, x, &tape);
      auto [g, dx] = backward(net, tape, upstream);
      Vec analytic = flatten(g);
      if (corrupt_backward && !analytic.empty()) analytic[0] += 1e-2;
      const std::vector<double*> ptrs = param_ptrs(net);
      const double err = grad_check([&] { return dot(upstream, forward(net, x)); }, ptrs,
                                    analytic, 1e-5);
      worst = std::max(worst, err);
    }
    record("backward_vs_fd", worst, 1e-4);
  }

  // --- softmax cross-entropy gradient (absolute error) ---
  {
    Vec logits(7);
    for (double& v : logits) v = rng.normal(0.0, 2.0);
    const int label = static_cast<int>(rng.below(7));
    const Vec dl = softmax_xent(logits, label).second;
    double worst = 0.0;
    const double eps = 1e-6;
    for (size_t i = 0; i < logits.size(); ++i) {
      Vec lp = logits, lm = logits;
      lp[i] += eps;
      lm[i] -= eps;
      const double numeric =
          (softmax_xent(lp, label).first - softmax_xent(lm, label).first) / (2.0 * eps);
      worst = std::max(worst, std::abs(numeric - dl[i]));
    }
    record("softmax_xent_vs_fd", worst, 1e-6);
  }

  ActorCriticParams p = make_actor_critic(4, {8}, {}, 3, 0.1, rng);
  // move the heads off zero so the checks exercise a generic point
  for (Layer& l : p.policy_head.layers)
    for (double& v : l.w) v = rng.normal(0.0, 0.3);
  for (Layer& l : p.value_head.layers)
    for (double& v : l.w) v = rng.normal(0.0, 0.3);
  Vec state(8);
  for (double& v : state) v = rng.normal();

  // --- policy-gradient surrogate delta * log pi on a single step ---
  {
    const GaussianParams dist = policy_forward(p, state);
    const double u = rng.normal(dist.mean, std::exp(dist.log_std));
    const double delta = 0.7;
    PolicyGrad g = make_policy_grad(p);
    accumulate_logpi_grad(p, state, u, delta, g);
    const std::vector<double*> ptrs = detail::theta_ptrs(p);
    const double err = grad_check(
        [&] { return delta * gaussian_logdensity(u, policy_forward(p, state)); }, ptrs,
        flatten(g), 1e-5);
    record("policy_surrogate_vs_fd", err, 1e-4);
  }

  // --- value loss 0.5 * sum (V(s) - y)^2 on a random batch ---
  {
    std::vector<Vec> states(3, Vec(8));
    Vec targets(3);
    for (Vec& s : states)
      for (double& v : s) v = rng.normal();
    for (double& y : targets) y = rng.normal();
    ValueGrad g = make_value_grad(p);
    for (size_t i = 0; i < states.size(); ++i)
      accumulate_value_grad(p, states[i], value_forward(p, states[i]) - targets[i], g);
    const std::vector<double*> ptrs = detail::omega_ptrs(p);
    const double err = grad_check(
        [&] {
          double loss = 0.0;
          for (size_t i = 0; i < states.size(); ++i) {
            const double r = value_forward(p, states[i]) - targets[i];
            loss += 0.5 * r * r;
          }
          return loss;
        },
        ptrs, detail::flatten_omega(g), 1e-5);
    record("value_loss_vs_fd", err, 1e-4);
  }

  // --- reward-head cross-entropy gradient ---
  {
    Vec feat(4);
    for (double& v : feat) v = rng.normal();
    Gradient g = make_gradient(p.reward_head.h);
    reward_head_xent_grad(p.reward_head, feat, 1, g);
    const std::vector<double*> ptrs = param_ptrs(p.reward_head.h);
    const double err =
        grad_check([&] { return p.reward_head.loss(feat, 1); }, ptrs, flatten(g), 1e-5);
    record("reward_head_xent_vs_fd", err, 1e-4);
  }

  // --- KL gradient vs finite differences of the averaged KL ---
  {
    // separate the average policy from the current one
    for (Layer& l : p.avg_policy_head.layers)
      for (double& v : l.w) v += rng.normal(0.0, 0.2);
    std::vector<Vec> states(4, Vec(8));
    for (Vec& s : states)
      for (double& v : s) v = rng.normal();
    std::vector<const Vec*> views;
    for (const Vec& s : states) views.push_back(&s);
    PolicyGrad g = make_policy_grad(p);
    kl_grad(p, views, g);
    const std::vector<double*> ptrs = detail::theta_ptrs(p);
    const double err =
        grad_check([&] { return kl_divergence(p, views); }, ptrs, flatten(g), 1e-5);
    record("kl_grad_vs_fd", err, 1e-4);
  }

  // --- estimator reductions at mu = pi (rho = 1) ---
  {
    SyntheticConfig scfg;
    scfg.num_identities = 3;
    scfg.sets_per_identity = 1;
    scfg.set_size_min = scfg.set_size_max = 4;
    scfg.dim = 4;
    const Dataset ds = gen_synthetic(scfg, 11);
    Rng rollout = substream(seed, "selfcheck-rollout");
    const Trajectory traj =
        run_episode(ds.sets[0], PolicySampler{p}, &p.reward_head, ActionMode::Stochastic, rollout);
    const Vec rho = is_ratios(traj, p, 10.0);
    double worst = 0.0;
    for (const double r : rho) worst = std::max(worst, std::abs(r - 1.0));
    const Vec ret = off_policy_return(traj, rho, 0.9);
    Vec plain(traj.steps.size(), 0.0);
    for (size_t t = traj.steps.size(); t-- > 0;)
      plain[t] = traj.steps[t].reward + (t + 1 < traj.steps.size() ? 0.9 * plain[t + 1] : 0.0);
    for (size_t t = 0; t < ret.size(); ++t) worst = std::max(worst, std::abs(ret[t] - plain[t]));
    const Vec off = flatten(policy_grad_off(traj, rho, p, 0.9));
    PolicyGrad onp = make_policy_grad(p);
    Vec values(traj.steps.size() + 1, 0.0);
    for (size_t t = 0; t < traj.steps.size(); ++t) values[t] = value_forward(p, traj.steps[t].state);
    for (size_t t = 0; t < traj.steps.size(); ++t) {
      const double delta = td_error(traj.steps[t].reward, values[t], values[t + 1], 0.9,
                                    t + 1 == traj.steps.size());
      accumulate_logpi_grad(p, traj.steps[t].state, traj.steps[t].raw, delta, onp);
    }
    const Vec on = flatten(onp);
    for (size_t i = 0; i < on.size(); ++i) worst = std::max(worst, std::abs(on[i] - off[i]));
    record("on_policy_reduction", worst, 1e-10);
  }

  // --- hand-unrolled off-policy return ---
  {
    Trajectory traj;
    traj.order = {0, 1, 2};
    for (int t = 0; t < 3; ++t) traj.steps.push_back({Vec{}, 0.0, 1.0, 0.0, 1.0});
    const Vec ret = off_policy_return(traj, Vec{1.0, 2.0, 0.5}, 0.9);
    const double err = std::max({std::abs(ret[0] - 3.61), std::abs(ret[1] - 1.45),
                                 std::abs(ret[2] - 1.0)});
    record("off_policy_return_hand_case", err, 1e-12);
  }

  // --- trust-region projection vs QP oracle, random 20-dim instances ---
  {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Vec dtheta(20), k(20);
      for (double& v : dtheta) v = rng.normal(0.0, 2.0);
      for (double& v : k) v = rng.normal(0.0, 2.0);
      const double xi = std::abs(rng.normal(0.0, 2.0));
      const Vec z = trust_region_project(dtheta, k, xi);
      const Vec oracle = detail::qp_oracle(dtheta, k, xi, rng);
      for (size_t i = 0; i < z.size(); ++i) worst = std::max(worst, std::abs(z[i] - oracle[i]));
      if (dot(k, z) > xi + 1e-10) worst = std::max(worst, dot(k, z) - xi);
    }
    record("trust_region_vs_qp_oracle", worst, 1e-10);
  }

  // --- reward telescoping over random episodes ---
  {
    SyntheticConfig scfg;
    scfg.num_identities = 3;
    scfg.sets_per_identity = 2;
    scfg.set_size_min = 1;
    scfg.set_size_max = 6;
    scfg.dim = 4;
    const Dataset ds = gen_synthetic(scfg, 23);
    Rng rollout = substream(seed, "selfcheck-telescope");
    double worst = 0.0;
    for (const FeatureSet& set : ds.sets) {
      const Trajectory traj =
          run_episode(set, PolicySampler{p}, &p.reward_head, ActionMode::Stochastic, rollout);
      const std::vector<Vec> features = feature_list(set);
      const Vec ones(static_cast<size_t>(set.size()), 1.0);
      const double initial = p.reward_head.loss(aggregate(features, ones), set.identity);
      const double final_loss =
          p.reward_head.loss(aggregate(features, final_weights(traj)), set.identity);
      double sum = 0.0;
      for (const TrajStep& s : traj.steps)
        sum += s.reward - p.reward_head.lambda * std::max(0.0, 1.0 - s.weight);
      worst = std::max(worst, std::abs(sum - (initial - final_loss)));
    }
    record("reward_telescoping", worst, 1e-9);
  }

  return results;
}

inline bool print_check_report(const std::vector<CheckResult>& results, std::ostream& os) {
  bool all_pass = true;
  for (const CheckResult& r : results) {
    os << (r.pass ? "PASS" : "FAIL") << "  " << std::left << std::setw(32) << r.name
       << " max_err=" << fmt_double(r.max_err) << " tol=" << fmt_double(r.tolerance) << "\n";
    all_pass = all_pass && r.pass;
  }
  return all_pass;
}

}  // namespace setpool
