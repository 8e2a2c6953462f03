#pragma once

#include <fstream>
#include <map>

#include "setpool/common.hpp"

namespace setpool {

struct ScoredPair {
  double score = 0.0;  // similarity, higher = more alike (negated distance)
  bool same_identity = false;
};

struct RocPoint {
  double far = 0.0;
  double tar = 0.0;
};

struct VerificationResult {
  std::vector<ScoredPair> pairs;
  std::vector<RocPoint> roc;                  // monotone sweep, strictest first
  std::map<double, double> operating_points;  // far -> tar
};

/// Threshold sweep over all distinct scores (accept when score >= threshold).
/// FAR = accepted negatives / negatives, TAR = accepted positives / positives.
inline VerificationResult roc_curve(std::vector<ScoredPair> pairs,
                                    const std::vector<double>& far_targets = {0.01, 0.1}) {
  size_t n_pos = 0, n_neg = 0;
  for (const ScoredPair& p : pairs) (p.same_identity ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("roc_curve: need at least one positive and one negative pair");
  std::sort(pairs.begin(), pairs.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.score > b.score; });
  VerificationResult res;
  res.roc.push_back({0.0, 0.0});  // accept nothing
  size_t tp = 0, fp = 0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    (pairs[i].same_identity ? tp : fp)++;
    const bool last_at_threshold = i + 1 == pairs.size() || pairs[i + 1].score != pairs[i].score;
    if (last_at_threshold)
      res.roc.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                         static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  for (const double target : far_targets) {
    double best = 0.0;
    for (const RocPoint& pt : res.roc)
      if (pt.far <= target) best = std::max(best, pt.tar);
    res.operating_points[target] = best;
  }
  res.pairs = std::move(pairs);
  return res;
}

inline double tar_at_far(const VerificationResult& res, double target) {
  const auto it = res.operating_points.find(target);
  if (it != res.operating_points.end()) return it->second;
  double best = 0.0;
  for (const RocPoint& pt : res.roc)
    if (pt.far <= target) best = std::max(best, pt.tar);
  return best;
}

/// Distance matrix access: dist[probe * gallery_count + g].
struct DistanceMatrix {
  Vec values;
  size_t probes = 0;
  size_t gallery = 0;

  double at(size_t p, size_t g) const { return values[p * gallery + g]; }
};

namespace detail {

/// Pessimistic rank-1 count: number of wrong-identity gallery entries at
/// distance <= the best correct entry (ties count as closer). Returns the
/// best correct distance through `best_correct`.
inline size_t wrong_not_after(const DistanceMatrix& dist, const std::vector<int>& gallery_ids,
                              size_t probe, int probe_id, double& best_correct) {
  best_correct = std::numeric_limits<double>::infinity();
  for (size_t g = 0; g < dist.gallery; ++g)
    if (gallery_ids[g] == probe_id) best_correct = std::min(best_correct, dist.at(probe, g));
  size_t count = 0;
  for (size_t g = 0; g < dist.gallery; ++g)
    if (gallery_ids[g] != probe_id && dist.at(probe, g) <= best_correct) ++count;
  return count;
}

}  // namespace detail

/// Closed-set CMC: accuracy(k) = fraction of probes whose best same-identity
/// gallery entry has pessimistic rank <= k (tied wrong entries count as
/// closer). Index k-1 holds rank-k accuracy; length = gallery size.
inline Vec cmc_curve(const DistanceMatrix& dist, const std::vector<int>& gallery_ids,
                     const std::vector<int>& probe_ids) {
  if (gallery_ids.size() != dist.gallery || probe_ids.size() != dist.probes)
    throw std::invalid_argument("cmc_curve: id list sizes do not match the matrix");
  if (dist.probes == 0 || dist.gallery == 0) throw std::invalid_argument("cmc_curve: empty input");
  std::vector<size_t> rank_hist(dist.gallery + 1, 0);
  for (size_t pr = 0; pr < dist.probes; ++pr) {
    const int id = probe_ids[pr];
    if (std::find(gallery_ids.begin(), gallery_ids.end(), id) == gallery_ids.end())
      throw std::invalid_argument("cmc_curve: probe identity " + std::to_string(id) +
                                  " absent from gallery (closed-set only)");
    double best_correct = 0.0;
    const size_t rank = 1 + detail::wrong_not_after(dist, gallery_ids, pr, id, best_correct);
    rank_hist[std::min(rank, dist.gallery)] += 1;
  }
  Vec acc(dist.gallery, 0.0);
  size_t cum = 0;
  for (size_t k = 1; k <= dist.gallery; ++k) {
    cum += rank_hist[k];
    acc[k - 1] = static_cast<double>(cum) / static_cast<double>(dist.probes);
  }
  return acc;
}

struct OpenSetPoint {
  double fpir = 0.0;
  double tpir = 0.0;
};

/// Open-set sweep: a probe is accepted at threshold tau when its nearest
/// gallery distance is <= tau. FPIR counts accepted impostors; TPIR counts
/// genuine probes that are accepted AND whose pessimistic rank is 1.
inline std::vector<OpenSetPoint> open_set_curve(const DistanceMatrix& dist,
                                                const std::vector<int>& gallery_ids,
                                                const std::vector<int>& probe_ids,
                                                const std::vector<bool>& known_mask) {
  if (known_mask.size() != dist.probes || probe_ids.size() != dist.probes)
    throw std::invalid_argument("open_set_curve: mask/id sizes do not match the matrix");
  size_t n_genuine = 0, n_impostor = 0;
  for (const bool known : known_mask) (known ? n_genuine : n_impostor)++;
  if (n_impostor == 0) throw std::invalid_argument("open_set_curve: no impostor probes");
  if (n_genuine == 0) throw std::invalid_argument("open_set_curve: no genuine probes");

  struct ProbeStat {
    double dmin;
    bool impostor;
    bool rank1;  // genuine only
  };
  std::vector<ProbeStat> stats;
  stats.reserve(dist.probes);
  for (size_t pr = 0; pr < dist.probes; ++pr) {
    double dmin = std::numeric_limits<double>::infinity();
    for (size_t g = 0; g < dist.gallery; ++g) dmin = std::min(dmin, dist.at(pr, g));
    ProbeStat st{dmin, !known_mask[pr], false};
    if (known_mask[pr]) {
      const bool in_gallery = std::find(gallery_ids.begin(), gallery_ids.end(), probe_ids[pr]) !=
                              gallery_ids.end();
      if (!in_gallery)
        throw std::invalid_argument("open_set_curve: genuine probe identity absent from gallery");
      double best_correct = 0.0;
      st.rank1 = detail::wrong_not_after(dist, gallery_ids, pr, probe_ids[pr], best_correct) == 0;
    }
    stats.push_back(st);
  }

  Vec thresholds;
  for (const ProbeStat& st : stats) thresholds.push_back(st.dmin);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<OpenSetPoint> curve;
  curve.push_back({0.0, 0.0});  // tau below every distance
  for (const double tau : thresholds) {
    size_t fp = 0, tp = 0;
    for (const ProbeStat& st : stats) {
      if (st.impostor && st.dmin <= tau) ++fp;
      if (!st.impostor && st.rank1 && st.dmin <= tau) ++tp;
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(n_impostor),
                     static_cast<double>(tp) / static_cast<double>(n_genuine)});
  }
  return curve;
}

inline double tpir_at_fpir(const std::vector<OpenSetPoint>& curve, double target) {
  double best = 0.0;
  for (const OpenSetPoint& pt : curve)
    if (pt.fpir <= target) best = std::max(best, pt.tpir);
  return best;
}

// Curve CSV emitters (far,tar / rank,acc / fpir,tpir), one header line each.

inline void write_roc_csv(const VerificationResult& res, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_roc_csv: cannot open " + path);
  os << "far,tar\n";
  for (const RocPoint& pt : res.roc) os << fmt_double(pt.far) << "," << fmt_double(pt.tar) << "\n";
}

inline void write_cmc_csv(const Vec& cmc, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_cmc_csv: cannot open " + path);
  os << "rank,acc\n";
  for (size_t k = 0; k < cmc.size(); ++k) os << (k + 1) << "," << fmt_double(cmc[k]) << "\n";
}

inline void write_open_set_csv(const std::vector<OpenSetPoint>& curve, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_open_set_csv: cannot open " + path);
  os << "fpir,tpir\n";
  for (const OpenSetPoint& pt : curve)
    os << fmt_double(pt.fpir) << "," << fmt_double(pt.tpir) << "\n";
}

}  // namespace setpool
