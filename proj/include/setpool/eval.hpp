#pragma once

#include <thread>

#include "setpool/actor_critic.hpp"
#include "setpool/metrics.hpp"
#include "setpool/pgr.hpp"

namespace setpool {

/// Per-set representations: attention weights from the policy (deterministic
/// inference over the canonical order), or all-ones for the average-pooling
/// baseline. A uniform policy and the baseline produce bit-identical
/// representations.
inline std::vector<SetRepresentation> build_representations(const Dataset& ds,
                                                            const ActorCriticParams* p) {
  std::vector<SetRepresentation> reps;
  reps.reserve(ds.sets.size());
  for (const FeatureSet& set : ds.sets) {
    Vec weights;
    if (p) {
      if (p->state_dim() != 2 * ds.dim)
        throw ArtifactMismatch("checkpoint expects feature dim " +
                               std::to_string(p->state_dim() / 2) + ", dataset has " +
                               std::to_string(ds.dim));
      weights = infer_weights(set, PolicySampler{*p}).first;
    } else {
      weights.assign(static_cast<size_t>(set.size()), 1.0);
    }
    reps.push_back(pgr_represent(set, weights));
  }
  return reps;
}

namespace detail {

template <class Fn>
void parallel_for(size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n < 2) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const size_t n_threads = std::min<size_t>(static_cast<size_t>(workers), n);
  std::vector<std::thread> threads;
  for (size_t t = 0; t < n_threads; ++t)
    threads.emplace_back([&, t] {
      for (size_t i = t; i < n; i += n_threads) fn(i);
    });
  for (std::thread& th : threads) th.join();
}

}  // namespace detail

/// The identification protocol on an identity-dense dataset: the first half
/// of the identities (by index) are enrolled; the first set of each enrolled
/// identity forms the gallery, its remaining sets are genuine probes, and
/// every set of a non-enrolled identity probes as an impostor.
struct IdentificationProtocol {
  std::vector<size_t> gallery_sets;
  std::vector<size_t> probe_sets;
  std::vector<int> gallery_ids;
  std::vector<int> probe_ids;
  std::vector<bool> known_mask;
};

inline IdentificationProtocol make_identification_protocol(const Dataset& ds) {
  if (ds.num_identities < 2)
    throw std::invalid_argument("identification protocol needs at least 2 identities");
  const int n_known = (ds.num_identities + 1) / 2;
  IdentificationProtocol proto;
  std::vector<bool> enrolled(static_cast<size_t>(ds.num_identities), false);
  for (size_t i = 0; i < ds.sets.size(); ++i) {
    const int id = ds.sets[i].identity;
    if (id < n_known && !enrolled[static_cast<size_t>(id)]) {
      proto.gallery_sets.push_back(i);
      proto.gallery_ids.push_back(id);
      enrolled[static_cast<size_t>(id)] = true;
    } else {
      proto.probe_sets.push_back(i);
      proto.probe_ids.push_back(id);
      proto.known_mask.push_back(id < n_known);
    }
  }
  return proto;
}

struct EvalResult {
  VerificationResult verification;
  Vec cmc;
  std::vector<OpenSetPoint> open_set;
  Vec pair_distances;         // verification pair distances, pair order (i<j)
  DistanceMatrix ident_dist;  // probe x gallery
  std::map<std::string, double> summary;
};

/// Verification over all unordered set pairs plus closed-/open-set
/// identification under the protocol above. `use_pgr` selects the routed
/// distance; verification scores are negated distances.
inline EvalResult evaluate(const Dataset& ds, const std::vector<SetRepresentation>& reps,
                           bool use_pgr, int workers = 1) {
  if (reps.size() != ds.sets.size())
    throw std::invalid_argument("evaluate: representation count mismatch");
  const auto dist_fn = [use_pgr](const SetRepresentation& a, const SetRepresentation& b) {
    return use_pgr ? pgr_distance(a, b) : plain_distance(a, b);
  };

  EvalResult out;
  const size_t n = reps.size();
  std::vector<std::pair<size_t, size_t>> pairs;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  out.pair_distances.resize(pairs.size());
  detail::parallel_for(pairs.size(), workers, [&](size_t k) {
    out.pair_distances[k] = dist_fn(reps[pairs[k].first], reps[pairs[k].second]);
  });
  std::vector<ScoredPair> scored(pairs.size());
  for (size_t k = 0; k < pairs.size(); ++k)
    scored[k] = {-out.pair_distances[k],
                 ds.sets[pairs[k].first].identity == ds.sets[pairs[k].second].identity};
  out.verification = roc_curve(std::move(scored));

  const IdentificationProtocol proto = make_identification_protocol(ds);
  out.ident_dist.probes = proto.probe_sets.size();
  out.ident_dist.gallery = proto.gallery_sets.size();
  out.ident_dist.values.resize(out.ident_dist.probes * out.ident_dist.gallery);
  detail::parallel_for(out.ident_dist.probes, workers, [&](size_t pr) {
    for (size_t g = 0; g < out.ident_dist.gallery; ++g)
      out.ident_dist.values[pr * out.ident_dist.gallery + g] =
          dist_fn(reps[proto.probe_sets[pr]], reps[proto.gallery_sets[g]]);
  });

  // Closed-set CMC over the genuine probes only.
  DistanceMatrix closed;
  closed.gallery = out.ident_dist.gallery;
  std::vector<int> closed_ids;
  for (size_t pr = 0; pr < proto.probe_sets.size(); ++pr) {
    if (!proto.known_mask[pr]) continue;
    closed_ids.push_back(proto.probe_ids[pr]);
    for (size_t g = 0; g < closed.gallery; ++g)
      closed.values.push_back(out.ident_dist.at(pr, g));
    ++closed.probes;
  }
  out.cmc = cmc_curve(closed, proto.gallery_ids, closed_ids);
  out.open_set = open_set_curve(out.ident_dist, proto.gallery_ids, proto.probe_ids,
                                proto.known_mask);

  out.summary["tar_at_far_0.01"] = tar_at_far(out.verification, 0.01);
  out.summary["tar_at_far_0.10"] = tar_at_far(out.verification, 0.1);
  out.summary["rank1"] = out.cmc.empty() ? 0.0 : out.cmc[0];
  out.summary["tpir_at_fpir_0.01"] = tpir_at_fpir(out.open_set, 0.01);
  out.summary["tpir_at_fpir_0.10"] = tpir_at_fpir(out.open_set, 0.1);
  return out;
}

}  // namespace setpool
