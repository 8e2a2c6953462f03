#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "setpool/common.hpp"
#include "setpool/rng.hpp"

namespace setpool {

/// One embedding with its yaw attribute. Quality (and the outlier flag) exist
/// only for synthetic data as evaluation diagnostics; they are never part of
/// the file format and never visible to the learner.
struct Member {
  Vec feature;
  double yaw = 0.0;  // degrees in [0, 90]; left/right folded by symmetry
  std::optional<double> quality;
  bool outlier = false;
};

/// An identity-labeled, unordered set of embeddings.
struct FeatureSet {
  std::string set_id;
  int identity = 0;
  std::vector<Member> members;

  int size() const { return static_cast<int>(members.size()); }
};

struct Dataset {
  std::vector<FeatureSet> sets;
  int num_identities = 0;
  int dim = 0;
};

inline void validate(const Dataset& ds) {
  std::vector<int> seen(ds.num_identities, 0);
  for (const FeatureSet& s : ds.sets) {
    if (s.members.empty()) throw std::invalid_argument("dataset: empty set " + s.set_id);
    if (s.identity < 0 || s.identity >= ds.num_identities)
      throw std::invalid_argument("dataset: identity out of range in set " + s.set_id);
    seen[static_cast<size_t>(s.identity)] = 1;
    for (const Member& m : s.members) {
      if (static_cast<int>(m.feature.size()) != ds.dim)
        throw std::invalid_argument("dataset: dim mismatch in set " + s.set_id);
      if (!all_finite(m.feature))
        throw std::invalid_argument("dataset: non-finite feature in set " + s.set_id);
      if (m.yaw < 0.0 || m.yaw > 90.0)
        throw std::invalid_argument("dataset: yaw out of [0,90] in set " + s.set_id);
    }
  }
  for (int id = 0; id < ds.num_identities; ++id)
    if (!seen[static_cast<size_t>(id)])
      throw std::invalid_argument("dataset: identity " + std::to_string(id) + " has no set");
}

struct SyntheticConfig {
  int num_identities = 50;
  int sets_per_identity = 4;
  int set_size_min = 2;
  int set_size_max = 20;
  int dim = 32;
  double noise_scale = 0.4;
  double outlier_rate = 0.15;
  double profile_rate = 0.3;
  double pose_shift_scale = 0.8;
};

inline void normalize_in_place(Vec& v) {
  const double n = norm2(v);
  if (n == 0.0) throw std::invalid_argument("normalize: zero vector");
  scale(v, 1.0 / n);
}

namespace detail {

inline Vec random_unit(Rng& rng, int dim) {
  Vec v(dim);
  for (double& x : v) x = rng.normal();
  normalize_in_place(v);
  return v;
}

}  // namespace detail

/// Synthetic stand-in for the CNN front-end. Per identity, a unit prototype u
/// and a shifted "profile" prototype u' model the frontal/profile appearance
/// gap; members draw a yaw, pick the prototype on the 30 degree boundary, add
/// quality-scaled noise, renormalize. Outliers are unrelated unit vectors.
/// Deterministic for a fixed (cfg, seed).
inline Dataset gen_synthetic(const SyntheticConfig& cfg, uint64_t seed) {
  if (cfg.dim < 2) throw ConfigError("gen_synthetic: dim must be >= 2");
  if (cfg.num_identities < 1) throw ConfigError("gen_synthetic: num_identities must be >= 1");
  if (cfg.sets_per_identity < 1) throw ConfigError("gen_synthetic: sets_per_identity must be >= 1");
  if (cfg.set_size_min < 1) throw ConfigError("gen_synthetic: set_size_range min must be >= 1");
  if (cfg.set_size_max < cfg.set_size_min) throw ConfigError("gen_synthetic: set_size_range empty");
  if (cfg.noise_scale < 0.0) throw ConfigError("gen_synthetic: noise_scale must be >= 0");
  for (const double rate : {cfg.outlier_rate, cfg.profile_rate})
    if (rate < 0.0 || rate > 1.0) throw ConfigError("gen_synthetic: rates must be in [0,1]");

  Rng rng = substream(seed, "data");
  Dataset ds;
  ds.dim = cfg.dim;
  ds.num_identities = cfg.num_identities;
  for (int id = 0; id < cfg.num_identities; ++id) {
    const Vec frontal = detail::random_unit(rng, cfg.dim);
    Vec profile = frontal;
    {
      const Vec v = detail::random_unit(rng, cfg.dim);
      axpy(cfg.pose_shift_scale, v, profile);
      normalize_in_place(profile);
    }
    for (int si = 0; si < cfg.sets_per_identity; ++si) {
      FeatureSet set;
      set.identity = id;
      set.set_id = "id" + std::to_string(id) + "_s" + std::to_string(si);
      const int count =
          cfg.set_size_min +
          static_cast<int>(rng.below(static_cast<uint64_t>(cfg.set_size_max - cfg.set_size_min + 1)));
      for (int t = 0; t < count; ++t) {
        Member m;
        const bool profile_draw = rng.uniform() < cfg.profile_rate;
        // frontal yaw uniform [0, 30), profile uniform (30, 90]
        m.yaw = profile_draw ? 90.0 - rng.uniform() * 60.0 : rng.uniform() * 30.0;
        m.quality = 1.0 - rng.uniform() * 0.7;  // (0.3, 1]
        if (rng.uniform() < cfg.outlier_rate) {
          m.feature = detail::random_unit(rng, cfg.dim);
          m.quality = 0.3;
          m.outlier = true;
        } else {
          m.feature = m.yaw > 30.0 ? profile : frontal;
          if (cfg.noise_scale > 0.0) {
            const double sigma = cfg.noise_scale / *m.quality;
            for (double& x : m.feature) x += sigma * rng.normal();
            normalize_in_place(m.feature);
          }
        }
        set.members.push_back(std::move(m));
      }
      ds.sets.push_back(std::move(set));
    }
  }
  return ds;
}

// Embedding file: UTF-8 CSV, header `set_id,identity,yaw,f0,...,f{d-1}`,
// one member per row, features printed with enough digits to round-trip.

inline void save_csv(const Dataset& ds, std::ostream& os) {
  if (ds.sets.empty()) throw std::invalid_argument("save_csv: empty dataset");
  os << "set_id,identity,yaw";
  for (int i = 0; i < ds.dim; ++i) os << ",f" << i;
  os << "\n";
  for (const FeatureSet& s : ds.sets) {
    for (const Member& m : s.members) {
      os << s.set_id << "," << s.identity << "," << fmt_double(m.yaw);
      for (const double v : m.feature) os << "," << fmt_double(v);
      os << "\n";
    }
  }
  if (!os) throw std::runtime_error("save_csv: write failed");
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_csv: cannot open " + path);
  save_csv(ds, os);
}

namespace detail {

inline double parse_double(const std::string& field, const std::string& where) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    throw ParseError(where + ": not a number: '" + field + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

/// Loads an embedding CSV. Rows sharing a set_id form one set (order of first
/// appearance); identities are re-indexed densely; dim comes from the header.
inline Dataset load_embeddings(std::istream& is, const std::string& name = "<stream>") {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(name + ":1: empty file");
  const std::vector<std::string> header = detail::split_csv_line(line);
  if (header.size() < 4 || header[0] != "set_id" || header[1] != "identity" || header[2] != "yaw")
    throw ParseError(name + ":1: expected header set_id,identity,yaw,f0,...");
  const int dim = static_cast<int>(header.size()) - 3;
  for (int i = 0; i < dim; ++i)
    if (header[static_cast<size_t>(i) + 3] != "f" + std::to_string(i))
      throw ParseError(name + ":1: expected feature column f" + std::to_string(i));

  Dataset ds;
  ds.dim = dim;
  std::map<std::string, size_t> set_index;
  std::map<std::string, int> identity_index;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::string where = name + ":" + std::to_string(lineno);
    const std::vector<std::string> f = detail::split_csv_line(line);
    if (static_cast<int>(f.size()) != dim + 3)
      throw ParseError(where + ": expected " + std::to_string(dim + 3) + " fields, got " +
                       std::to_string(f.size()));
    Member m;
    m.yaw = detail::parse_double(f[2], where);
    if (m.yaw < 0.0 || m.yaw > 90.0)
      throw ParseError(where + ": yaw " + f[2] + " out of [0, 90]");
    m.feature.resize(static_cast<size_t>(dim));
    for (int i = 0; i < dim; ++i) {
      m.feature[static_cast<size_t>(i)] = detail::parse_double(f[static_cast<size_t>(i) + 3], where);
      if (!std::isfinite(m.feature[static_cast<size_t>(i)]))
        throw ParseError(where + ": non-finite feature");
    }
    const std::string& raw_identity = f[1];
    if (raw_identity.empty()) throw ParseError(where + ": empty identity");
    auto [id_it, id_new] = identity_index.try_emplace(raw_identity, static_cast<int>(identity_index.size()));
    auto [set_it, set_new] = set_index.try_emplace(f[0], ds.sets.size());
    if (set_new) {
      FeatureSet s;
      s.set_id = f[0];
      s.identity = id_it->second;
      ds.sets.push_back(std::move(s));
    } else if (ds.sets[set_it->second].identity != id_it->second) {
      throw ParseError(where + ": set " + f[0] + " has conflicting identities");
    }
    ds.sets[set_it->second].members.push_back(std::move(m));
  }
  if (ds.sets.empty()) throw ParseError(name + ": no data rows");
  ds.num_identities = static_cast<int>(identity_index.size());
  return ds;
}

inline Dataset load_embeddings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_embeddings: cannot open " + path);
  return load_embeddings(is, path);
}

/// Identity-disjoint split: identities (not sets) are partitioned so the test
/// side holds unseen identities, as the open-set protocol requires. Each side
/// is re-indexed densely, order-preserving. Deterministic per seed.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, uint64_t seed) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0)
    throw ConfigError("split: test_fraction must be in (0, 1)");
  const int m = ds.num_identities;
  const int n_test = static_cast<int>(std::lround(m * test_fraction));
  if (n_test < 1 || n_test >= m)
    throw ConfigError("split: too few identities (" + std::to_string(m) + ") for fraction " +
                      std::to_string(test_fraction));
  Rng rng = substream(seed, "split");
  const std::vector<int> order = rng.permutation(m);
  std::vector<bool> is_test(static_cast<size_t>(m), false);
  for (int i = 0; i < n_test; ++i) is_test[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;

  std::vector<int> remap(static_cast<size_t>(m), -1);
  Dataset train, test;
  train.dim = test.dim = ds.dim;
  for (int id = 0; id < m; ++id) {
    Dataset& side = is_test[static_cast<size_t>(id)] ? test : train;
    remap[static_cast<size_t>(id)] = side.num_identities++;
  }
  for (const FeatureSet& s : ds.sets) {
    FeatureSet copy = s;
    copy.identity = remap[static_cast<size_t>(s.identity)];
    (is_test[static_cast<size_t>(s.identity)] ? test : train).sets.push_back(std::move(copy));
  }
  return {std::move(train), std::move(test)};
}

}  // namespace setpool
