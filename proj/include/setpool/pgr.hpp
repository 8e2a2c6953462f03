#pragma once

#include <optional>

#include "setpool/env.hpp"

namespace setpool {

/// General / frontal / profile aggregations with group masses. p1 + p2 = 1;
/// an empty pose group has no F and mass 0.
///
/// Note that the routed distance below is positive even between a set and
/// itself whenever both pose groups are populated: the cross terms
/// S(F1, F2) enter with positive mass. That is a property of the distance as
/// defined, so it is excluded from metric-axiom expectations.
struct SetRepresentation {
  Vec f0;
  std::optional<Vec> f1;  // frontal
  std::optional<Vec> f2;  // profile
  double p1 = 0.0;
  double p2 = 0.0;
};

/// Partition member indices by yaw: <= threshold is frontal (boundary
/// inclusive), > threshold profile.
inline std::pair<std::vector<int>, std::vector<int>> route_by_pose(const FeatureSet& set,
                                                                   double threshold_deg = 30.0) {
  std::vector<int> frontal, profile;
  for (int i = 0; i < set.size(); ++i)
    (set.members[static_cast<size_t>(i)].yaw <= threshold_deg ? frontal : profile).push_back(i);
  return {std::move(frontal), std::move(profile)};
}

/// Build the pose-guided representation from the full-set attention weights.
/// Group masses are weight masses, p_i = sum of group weights / total, so the
/// learned quality of each pose group carries into the routing. Weights are
/// pre-scaled by their maximum exactly as in aggregate(), keeping the uniform
/// case bit-identical to count-based masses and plain group means.
inline SetRepresentation pgr_represent(const FeatureSet& set, const Vec& weights,
                                       double threshold_deg = 30.0) {
  if (static_cast<size_t>(set.size()) != weights.size())
    throw std::invalid_argument("pgr_represent: weights length mismatch");
  const std::vector<Vec> features = feature_list(set);
  SetRepresentation rep;
  rep.f0 = aggregate(features, weights);
  const auto [frontal, profile] = route_by_pose(set, threshold_deg);

  const double wmax = *std::max_element(weights.begin(), weights.end());
  auto group_mass = [&](const std::vector<int>& idx) {
    double s = 0.0;
    for (const int i : idx) s += weights[static_cast<size_t>(i)] / wmax;
    return s;
  };
  auto group_aggregate = [&](const std::vector<int>& idx) -> std::optional<Vec> {
    if (idx.empty()) return std::nullopt;
    std::vector<Vec> f;
    Vec w;
    for (const int i : idx) {
      f.push_back(features[static_cast<size_t>(i)]);
      w.push_back(weights[static_cast<size_t>(i)]);
    }
    return aggregate(f, w);
  };

  const double m1 = group_mass(frontal);
  const double m2 = group_mass(profile);
  rep.p1 = frontal.empty() ? 0.0 : m1 / (m1 + m2);
  rep.p2 = profile.empty() ? 0.0 : m2 / (m1 + m2);
  rep.f1 = group_aggregate(frontal);
  rep.f2 = group_aggregate(profile);
  return rep;
}

/// Eq-style routed set distance:
/// d = 1/2 S(F0_a, F0_b) + 1/2 sum_{i,j in {1,2}} S(Fi_a, Fj_b) pi_a pj_b,
/// with S the L2 distance; terms with an absent group contribute 0.
inline double pgr_distance(const SetRepresentation& a, const SetRepresentation& b) {
  double d = 0.5 * l2_distance(a.f0, b.f0);
  const std::optional<Vec>* fa[2] = {&a.f1, &a.f2};
  const std::optional<Vec>* fb[2] = {&b.f1, &b.f2};
  const double pa[2] = {a.p1, a.p2};
  const double pb[2] = {b.p1, b.p2};
  double routed = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      if (!fa[i]->has_value() || !fb[j]->has_value()) continue;  // mass 0
      routed += l2_distance(**fa[i], **fb[j]) * pa[i] * pb[j];
    }
  return d + 0.5 * routed;
}

/// L2 distance of the general aggregations only (the non-routed path).
inline double plain_distance(const SetRepresentation& a, const SetRepresentation& b) {
  return l2_distance(a.f0, b.f0);
}

}  // namespace setpool
