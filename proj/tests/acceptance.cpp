// Acceptance suite: one binary, one pass/fail line per criterion.
// Criteria marked *bitwise* compare doubles with operator== on purpose.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "setpool/config.hpp"
#include "setpool/eval.hpp"
#include "setpool/selfcheck.hpp"
#include "setpool/train.hpp"
#include "test_oracles.hpp"

using namespace setpool;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Criterion> g_results;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  g_results.push_back({id, name, pass, detail});
  std::printf("%s  criterion %2d  %-24s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// The synthetic benchmark of the learning-effect criterion.
RunConfig benchmark_config() {
  RunConfig cfg;  // documented defaults are the benchmark values
  cfg.seed = 1;
  return cfg;
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name = "-";
  bool pass = true;
  // randomized instances across several seeds, all four gradient families
  for (const uint64_t seed : {11ull, 12ull, 13ull}) {
    for (const CheckResult& r : run_selfchecks(seed)) {
      if (r.name == "backward_vs_fd" || r.name == "softmax_xent_vs_fd" ||
          r.name == "policy_surrogate_vs_fd" || r.name == "value_loss_vs_fd" ||
          r.name == "reward_head_xent_vs_fd" || r.name == "kl_grad_vs_fd") {
        pass = pass && r.pass;
        if (r.max_err > worst) {
          worst = r.max_err;
          worst_name = r.name;
        }
      }
    }
  }
  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 30.0;
  report(1, "gradient integrity", pass,
         "max rel err " + fmt_double(worst) + " (" + worst_name + ") < 1e-4, " +
             fmt_double(elapsed) + "s < 30s");
}

// ---------------------------------------------------------------------------
// 2. Estimator reductions (mu = pi)

void criterion_estimator_reductions() {
  Rng init(101);
  ActorCriticParams p = make_actor_critic(6, {10}, {}, 4, 0.1, init);
  for (Layer& l : p.policy_head.layers)
    for (double& v : l.w) v = init.normal(0.0, 0.3);
  for (Layer& l : p.value_head.layers)
    for (double& v : l.w) v = init.normal(0.0, 0.3);
  SyntheticConfig scfg;
  scfg.num_identities = 4;
  scfg.sets_per_identity = 2;
  scfg.set_size_min = 2;
  scfg.set_size_max = 9;
  scfg.dim = 6;
  const Dataset ds = gen_synthetic(scfg, 102);
  Rng rollout(103);
  double worst = 0.0;
  for (const FeatureSet& set : ds.sets) {
    const Trajectory traj =
        run_episode(set, PolicySampler{p}, &p.reward_head, ActionMode::Stochastic, rollout);
    const Vec rho = is_ratios(traj, p, 1.0);  // rho_clip >= 1 keeps exact ones
    for (const double r : rho) worst = std::max(worst, std::abs(r - 1.0));
    const Vec ret = off_policy_return(traj, rho, 0.9);
    Vec plain(traj.steps.size(), 0.0);
    for (size_t t = traj.steps.size(); t-- > 0;)
      plain[t] = traj.steps[t].reward + (t + 1 < traj.steps.size() ? 0.9 * plain[t + 1] : 0.0);
    for (size_t t = 0; t < ret.size(); ++t) worst = std::max(worst, std::abs(ret[t] - plain[t]));

    const Vec off = flatten(policy_grad_off(traj, rho, p, 0.9));
    PolicyGrad onp = make_policy_grad(p);
    Vec values(traj.steps.size() + 1, 0.0);
    for (size_t t = 0; t < traj.steps.size(); ++t)
      values[t] = value_forward(p, traj.steps[t].state);
    for (size_t t = 0; t < traj.steps.size(); ++t) {
      const double delta = td_error(traj.steps[t].reward, values[t], values[t + 1], 0.9,
                                    t + 1 == traj.steps.size());
      accumulate_logpi_grad(p, traj.steps[t].state, traj.steps[t].raw, delta, onp);
    }
    const Vec on = flatten(onp);
    for (size_t i = 0; i < on.size(); ++i) worst = std::max(worst, std::abs(on[i] - off[i]));
  }

  // hand-unrolled Eq-7 case
  Trajectory traj;
  for (int t = 0; t < 3; ++t) {
    traj.steps.push_back({Vec{}, 0.0, 1.0, 0.0, 1.0});
    traj.order.push_back(t);
  }
  const Vec ret = off_policy_return(traj, {1.0, 2.0, 0.5}, 0.9);
  const bool hand_exact = ret[0] == 3.61 && ret[1] == 1.45 && ret[2] == 1.0;
  const bool pass = worst < 1e-10 && hand_exact;
  report(2, "estimator reductions", pass,
         "max deviation " + fmt_double(worst) + " < 1e-10, hand case (3.61, 1.45, 1) " +
             (hand_exact ? "exact" : "WRONG"));
}

// ---------------------------------------------------------------------------
// 3. Trust-region correctness

void criterion_trust_region() {
  Rng rng(201);
  double worst = 0.0, worst_violation = 0.0;
  bool identity_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    Vec d(20), k(20);
    for (double& v : d) v = rng.normal(0.0, 2.0);
    for (double& v : k) v = rng.normal(0.0, 2.0);
    const double xi = std::abs(rng.normal(0.0, 2.0));
    const Vec z = trust_region_project(d, k, xi);
    const Vec want = oracle::qp_project(d, k, xi, rng);
    for (size_t i = 0; i < z.size(); ++i) worst = std::max(worst, std::abs(z[i] - want[i]));
    worst_violation = std::max(worst_violation, dot(k, z) - xi);
    if (dot(k, d) <= xi && z != d) identity_ok = false;
  }
  const bool pass = worst < 1e-10 && worst_violation <= 1e-10 && identity_ok;
  report(3, "trust-region projection", pass,
         "200 instances: max |z - oracle| " + fmt_double(worst) + ", max k.z - xi " +
             fmt_double(worst_violation) + ", inactive-case identity " +
             (identity_ok ? "exact" : "VIOLATED"));
}

// ---------------------------------------------------------------------------
// 4. Reward telescoping

void criterion_telescoping() {
  Rng init(301);
  ActorCriticParams p = make_actor_critic(8, {12}, {}, 5, 0.1, init);
  for (Layer& l : p.policy_head.layers)
    for (double& v : l.w) v = init.normal(0.0, 0.4);
  SyntheticConfig scfg;
  scfg.num_identities = 5;
  scfg.sets_per_identity = 4;
  scfg.set_size_min = 1;
  scfg.set_size_max = 12;
  scfg.dim = 8;
  const Dataset ds = gen_synthetic(scfg, 302);
  Rng rollout(303);
  double worst = 0.0;
  int episodes = 0;
  for (const FeatureSet& set : ds.sets) {
    const Trajectory traj =
        run_episode(set, PolicySampler{p}, &p.reward_head, ActionMode::Stochastic, rollout);
    const std::vector<Vec> features = feature_list(set);
    double sum = 0.0;
    for (const TrajStep& s : traj.steps)
      sum += s.reward - p.reward_head.lambda * std::max(0.0, 1.0 - s.weight);
    const double initial =
        p.reward_head.loss(aggregate(features, Vec(features.size(), 1.0)), set.identity);
    const double final_loss =
        p.reward_head.loss(aggregate(features, final_weights(traj)), set.identity);
    worst = std::max(worst, std::abs(sum - (initial - final_loss)));
    ++episodes;
  }
  report(4, "reward telescoping", worst <= 1e-9,
         std::to_string(episodes) + " episodes, max |sum - (initial - final)| " +
             fmt_double(worst) + " <= 1e-9");
}

// ---------------------------------------------------------------------------
// 5. Uniform-policy equivalence (bitwise)

void criterion_uniform_equivalence() {
  RunConfig cfg = benchmark_config();
  cfg.ids = 12;  // small but structurally rich
  const Dataset ds = gen_synthetic(cfg.synthetic(), cfg.seed);
  Rng init = substream(cfg.seed, "init");
  const ActorCriticParams untrained =
      make_actor_critic(cfg.dim, cfg.trunk_hidden, cfg.reward_hidden, ds.num_identities,
                        cfg.lambda, init);
  bool pass = true;
  std::string detail;
  for (const bool use_pgr : {false, true}) {
    const auto reps_dac = build_representations(ds, &untrained);
    const auto reps_avg = build_representations(ds, nullptr);
    const EvalResult a = evaluate(ds, reps_dac, use_pgr);
    const EvalResult b = evaluate(ds, reps_avg, use_pgr);
    const bool pairs_equal = a.pair_distances == b.pair_distances;        // bitwise
    const bool ident_equal = a.ident_dist.values == b.ident_dist.values;  // bitwise
    pass = pass && pairs_equal && ident_equal;
    detail += std::string(use_pgr ? "pgr" : "plain") + ": " +
              (pairs_equal && ident_equal ? "bitwise equal" : "MISMATCH") + "; ";
  }
  report(5, "uniform-policy = avepool", pass,
         detail + std::to_string(
                      evaluate(ds, build_representations(ds, nullptr), false).pair_distances.size()) +
             " pair distances compared");
}

// ---------------------------------------------------------------------------
// 6. Learning effect on the synthetic benchmark

void criterion_learning_effect() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = benchmark_config();
  const Dataset full = gen_synthetic(cfg.synthetic(), cfg.seed);
  const auto [train_ds, test_ds] = split(full, cfg.test_fraction, cfg.seed);

  Rng init = substream(cfg.seed, "init");
  ActorCriticParams p = make_actor_critic(cfg.dim, cfg.trunk_hidden, cfg.reward_hidden,
                                          train_ds.num_identities, cfg.lambda, init);
  train_on_policy(p, train_ds, cfg.train());

  const auto reps_dac = build_representations(test_ds, &p);
  const auto reps_avg = build_representations(test_ds, nullptr);
  const double tar_dac = evaluate(test_ds, reps_dac, false).summary.at("tar_at_far_0.01");
  const double tar_avg = evaluate(test_ds, reps_avg, false).summary.at("tar_at_far_0.01");

  // planted outliers vs the median member weight, per test set
  int with_outliers = 0, below_median = 0;
  for (const FeatureSet& set : test_ds.sets) {
    if (set.size() < 2) continue;
    bool any_outlier = false;
    const Vec w = infer_weights(set, PolicySampler{p}).first;
    Vec sorted = w;
    std::sort(sorted.begin(), sorted.end());
    const size_t n = sorted.size();
    const double median =
        n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    bool all_below = true;
    for (size_t i = 0; i < set.members.size(); ++i) {
      if (!set.members[i].outlier) continue;
      any_outlier = true;
      if (!(w[i] < median)) all_below = false;
    }
    if (any_outlier) {
      ++with_outliers;
      if (all_below) ++below_median;
    }
  }
  const double outlier_rate =
      with_outliers == 0 ? 0.0 : static_cast<double>(below_median) / with_outliers;
  const double elapsed = seconds_since(t0);

  // order sensitivity, measured: weight spread across random visit orders
  double order_spread = 0.0;
  {
    Rng perm_rng(4242);
    const FeatureSet& probe_set = test_ds.sets.front();
    Vec reference = infer_weights(probe_set, PolicySampler{p}).first;
    for (int rep = 0; rep < 5; ++rep) {
      FeatureSet shuffled = probe_set;
      const std::vector<int> perm = perm_rng.permutation(probe_set.size());
      for (int i = 0; i < probe_set.size(); ++i)
        shuffled.members[static_cast<size_t>(i)] =
            probe_set.members[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      const Vec w = infer_weights(shuffled, PolicySampler{p}).first;
      for (int i = 0; i < probe_set.size(); ++i)
        order_spread = std::max(
            order_spread,
            std::abs(w[static_cast<size_t>(i)] -
                     reference[static_cast<size_t>(perm[static_cast<size_t>(i)])]));
    }
  }

  const bool pass = tar_dac > tar_avg && outlier_rate >= 0.8 && elapsed < 300.0;
  std::ostringstream detail;
  detail << "TAR@FAR=0.01 dac " << tar_dac << " vs avepool " << tar_avg << "; outliers below median in "
         << below_median << "/" << with_outliers << " = " << outlier_rate
         << " >= 0.8; order spread " << fmt_double(order_spread) << "; " << fmt_double(elapsed)
         << "s < 300s";
  report(6, "learning effect", pass, detail.str());
}

// ---------------------------------------------------------------------------
// 7. Sample efficiency of DAC(off)

double window_mean_loss(const std::vector<MetricsRow>& rows, size_t window) {
  double sum = 0.0;
  size_t n = 0;
  for (size_t i = rows.size() > window ? rows.size() - window : 0; i < rows.size(); ++i) {
    sum += rows[i].xent_loss;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::infinity();
}

void criterion_sample_efficiency() {
  // Rule, fixed here: per seed, find the first episode where DAC(off)'s
  // running-mean loss (window 50) reaches DAC(on)'s final running-mean loss
  // at the full budget; the mean ratio over seeds must be <= 0.7. If it is
  // not, the criterion still passes when DAC(off)'s mean final loss at the
  // equal budget is lower (the claim is directional).
  RunConfig cfg = benchmark_config();
  cfg.episodes = 400;
  const size_t window = 50;
  std::vector<double> ratios;
  double final_on = 0.0, final_off = 0.0;
  std::ostringstream per_seed;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.seed = seed;
    const Dataset full = gen_synthetic(cfg.synthetic(), cfg.seed);
    const auto [train_ds, test_ds] = split(full, cfg.test_fraction, cfg.seed);
    Rng init_on = substream(cfg.seed, "init");
    ActorCriticParams on_p = make_actor_critic(cfg.dim, cfg.trunk_hidden, cfg.reward_hidden,
                                               train_ds.num_identities, cfg.lambda, init_on);
    ActorCriticParams off_p = on_p;
    const std::vector<MetricsRow> on_rows = train_on_policy(on_p, train_ds, cfg.train());
    const std::vector<MetricsRow> off_rows = train_off_policy(off_p, train_ds, cfg.train());

    const double target = window_mean_loss(on_rows, window);
    double reached_at = static_cast<double>(cfg.episodes);
    std::vector<double> losses;
    for (size_t i = 0; i < off_rows.size(); ++i) {
      losses.push_back(off_rows[i].xent_loss);
      if (losses.size() < window) continue;
      double mean = 0.0;
      for (size_t j = losses.size() - window; j < losses.size(); ++j) mean += losses[j] / window;
      if (mean <= target) {
        reached_at = static_cast<double>(off_rows[i].episodes_seen);
        break;
      }
    }
    const double ratio = reached_at / static_cast<double>(cfg.episodes);
    ratios.push_back(ratio);
    final_on += target / 5.0;
    final_off += window_mean_loss(off_rows, window) / 5.0;
    per_seed << "s" << seed << ":" << ratio << " ";
  }
  double mean_ratio = 0.0;
  for (const double r : ratios) mean_ratio += r / ratios.size();
  const bool ratio_ok = mean_ratio <= 0.7;
  const bool directional_ok = final_off < final_on;
  const bool pass = ratio_ok || directional_ok;
  std::ostringstream detail;
  detail << "mean episode ratio " << mean_ratio << " (" << per_seed.str() << ")"
         << (ratio_ok ? "<= 0.7" : "> 0.7") << "; equal-budget mean final loss off " << final_off
         << " vs on " << final_on
         << (directional_ok ? " (off lower)" : " (off NOT lower)");
  report(7, "sample efficiency", pass, detail.str());
}

// ---------------------------------------------------------------------------
// 8. PGR identities

void criterion_pgr() {
  bool pass = true;
  std::string detail;
  {
    SetRepresentation rep;
    rep.f0 = {0.0, 0.0};
    rep.f1 = Vec{1.0, 0.0};
    rep.f2 = Vec{0.0, 1.0};
    rep.p1 = rep.p2 = 0.5;
    const double d = pgr_distance(rep, rep);
    const double err = std::abs(d - std::sqrt(2.0) / 4.0);
    pass = pass && err <= 1e-12;
    detail += "hand case err " + fmt_double(err) + "; ";
  }
  {
    FeatureSet s;
    s.members.push_back({{1.0, 2.0}, 10.0, std::nullopt, false});
    s.members.push_back({{3.0, 4.0}, 25.0, std::nullopt, false});
    const SetRepresentation rep = pgr_represent(s, {1.5, 0.5});
    const bool collapse =
        rep.f1.has_value() && !rep.f2.has_value() && *rep.f1 == rep.f0 && rep.p1 == 1.0 &&
        rep.p2 == 0.0;
    pass = pass && collapse;
    detail += std::string("all-frontal collapse ") + (collapse ? "ok" : "WRONG") + "; ";
  }
  {
    Rng rng(801);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      auto random_rep = [&rng]() {
        FeatureSet s;
        const size_t t = 1 + rng.below(6);
        Vec w(t);
        for (size_t i = 0; i < t; ++i) {
          Vec f(3);
          for (double& v : f) v = rng.normal();
          s.members.push_back({f, rng.uniform() * 90.0, std::nullopt, false});
          w[i] = rng.uniform(0.05, 3.0);
        }
        return pgr_represent(s, w);
      };
      const SetRepresentation a = random_rep();
      const SetRepresentation b = random_rep();
      worst = std::max(worst, std::abs(pgr_distance(a, b) - pgr_distance(b, a)));
    }
    pass = pass && worst < 1e-12;
    detail += "symmetry worst " + fmt_double(worst) + " over 1000 pairs";
  }
  report(8, "pgr identities", pass, detail);
}

// ---------------------------------------------------------------------------
// 9. Metric oracles

void criterion_metric_oracles() {
  Rng rng(901);
  int trials = 0;
  bool pass = true;
  for (int trial = 0; trial < 1000 && pass; ++trial) {
    const size_t g = 2 + rng.below(7), pr = 2 + rng.below(7);
    DistanceMatrix m;
    m.probes = pr;
    m.gallery = g;
    m.values.resize(pr * g);
    for (double& v : m.values)
      v = trial % 2 == 0 ? static_cast<double>(rng.below(4)) : rng.uniform();

    // verification pairs from the same instance
    std::vector<ScoredPair> pairs;
    for (size_t i = 0; i < pr; ++i)
      pairs.push_back({-m.values[i * g], rng.uniform() < 0.5});
    pairs.push_back({-0.5, true});
    pairs.push_back({-0.25, false});
    const auto res = roc_curve(pairs);
    for (const double target : {0.0, 0.01, 0.1, 0.5, 1.0})
      pass = pass && tar_at_far(res, target) == oracle::tar_at_far_bruteforce(pairs, target);

    std::vector<int> gallery_ids(g);
    for (size_t i = 0; i < g; ++i) gallery_ids[i] = static_cast<int>(rng.below(g));
    std::vector<int> probe_ids(pr);
    for (size_t i = 0; i < pr; ++i) probe_ids[i] = gallery_ids[rng.below(g)];
    const Vec acc = cmc_curve(m, gallery_ids, probe_ids);
    for (size_t k = 0; k < acc.size() && pass; ++k) {
      size_t hits = 0;
      for (size_t i = 0; i < pr; ++i)
        if (oracle::cmc_rank_bruteforce(m, gallery_ids, i, probe_ids[i]) <= k + 1) ++hits;
      pass = pass && acc[k] == static_cast<double>(hits) / static_cast<double>(pr);
    }

    std::vector<bool> known(pr);
    for (size_t i = 0; i < pr; ++i) known[i] = i % 2 == 0;
    std::vector<int> open_ids = probe_ids;
    for (size_t i = 0; i < pr; ++i)
      if (!known[i]) open_ids[i] = 1000 + static_cast<int>(i);
    const auto curve = open_set_curve(m, gallery_ids, open_ids, known);
    std::vector<double> taus;
    for (size_t i = 0; i < pr; ++i) {
      double dmin = std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < g; ++j) dmin = std::min(dmin, m.at(i, j));
      taus.push_back(dmin);
    }
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
    for (size_t i = 0; i < taus.size() && pass; ++i) {
      const auto want = oracle::open_set_at(m, gallery_ids, open_ids, known, taus[i]);
      pass = pass && curve[i + 1].fpir == want.fpir && curve[i + 1].tpir == want.tpir;
    }
    ++trials;
  }
  report(9, "metric oracles", pass,
         std::to_string(trials) + "/1000 random instances match exhaustive enumeration exactly");
}

// ---------------------------------------------------------------------------
// 10. End-to-end determinism through the CLI

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void criterion_determinism() {
  const fs::path dir = fs::temp_directory_path() / "setpool_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string common =
      " --ids 10 --sets 2 --size-min 2 --size-max 6 --dim 8 --trunk-hidden 8 --seed 4 ";
  bool pass = true;
  std::string detail;
  for (const char* run : {"r1", "r2"}) {
    const std::string out = (dir / run).string();
    const std::string train_cmd = std::string(SETPOOL_CLI_PATH) + " train --mode off --episodes 60" +
                                  common + "--out-dir " + out + " > /dev/null 2>&1";
    const std::string eval_cmd = std::string(SETPOOL_CLI_PATH) + " eval" + common +
                                 "--checkpoint " + out + "/checkpoint --distance pgr --out-dir " +
                                 out + "/eval > /dev/null 2>&1";
    pass = pass && std::system(train_cmd.c_str()) == 0;
    pass = pass && std::system(eval_cmd.c_str()) == 0;
  }
  if (pass) {
    for (const char* f :
         {"metrics.csv", "checkpoint/trunk.spnet", "checkpoint/policy_head.spnet",
          "checkpoint/value_head.spnet", "checkpoint/avg_trunk.spnet",
          "checkpoint/avg_policy_head.spnet", "checkpoint/reward_head.spnet",
          "eval/metrics.json", "eval/roc.csv", "eval/cmc.csv", "eval/openset.csv"}) {
      const bool same = slurp(dir / "r1" / f) == slurp(dir / "r2" / f);
      pass = pass && same;
      if (!same) detail += std::string(f) + " differs; ";
    }
  } else {
    detail = "CLI invocation failed; ";
  }
  fs::remove_all(dir);
  report(10, "train+eval determinism", pass,
         detail.empty() ? "11 output files bitwise identical across two runs" : detail);
}

}  // namespace

int main() {
  std::printf("setpool acceptance suite\n");
  criterion_gradients();
  criterion_estimator_reductions();
  criterion_trust_region();
  criterion_telescoping();
  criterion_uniform_equivalence();
  criterion_learning_effect();
  criterion_sample_efficiency();
  criterion_pgr();
  criterion_metric_oracles();
  criterion_determinism();

  int failed = 0;
  for (const Criterion& c : g_results)
    if (!c.pass) ++failed;
  std::printf("%d/%zu criteria passed\n", static_cast<int>(g_results.size()) - failed,
              g_results.size());
  return failed == 0 ? 0 : 1;
}
