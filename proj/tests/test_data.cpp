#include <gtest/gtest.h>

#include <sstream>

#include "setpool/data.hpp"

using namespace setpool;

namespace {

SyntheticConfig benchmark_cfg() {
  SyntheticConfig cfg;  // the defaults are the synthetic benchmark
  return cfg;
}

double cosine(const Vec& a, const Vec& b) { return dot(a, b) / (norm2(a) * norm2(b)); }

bool datasets_equal(const Dataset& a, const Dataset& b) {
  if (a.dim != b.dim || a.num_identities != b.num_identities || a.sets.size() != b.sets.size())
    return false;
  for (size_t i = 0; i < a.sets.size(); ++i) {
    if (a.sets[i].set_id != b.sets[i].set_id || a.sets[i].identity != b.sets[i].identity ||
        a.sets[i].members.size() != b.sets[i].members.size())
      return false;
    for (size_t j = 0; j < a.sets[i].members.size(); ++j) {
      if (a.sets[i].members[j].feature != b.sets[i].members[j].feature) return false;  // bitwise
      if (a.sets[i].members[j].yaw != b.sets[i].members[j].yaw) return false;
    }
  }
  return true;
}

}  // namespace

TEST(GenSynthetic, ZeroNoiseLimitReproducesPrototypes) {
  SyntheticConfig cfg = benchmark_cfg();
  cfg.noise_scale = 0.0;
  cfg.outlier_rate = 0.0;
  cfg.profile_rate = 0.0;
  cfg.num_identities = 5;
  const Dataset ds = gen_synthetic(cfg, 3);
  // every member of an identity equals the identity prototype exactly
  std::map<int, Vec> prototype;
  for (const FeatureSet& s : ds.sets)
    for (const Member& m : s.members) {
      const auto [it, fresh] = prototype.try_emplace(s.identity, m.feature);
      if (!fresh) {
        EXPECT_EQ(m.feature, it->second);  // bitwise
      }
      EXPECT_NEAR(norm2(m.feature), 1.0, 1e-12);
      EXPECT_LE(m.yaw, 30.0);
    }
  EXPECT_EQ(prototype.size(), 5u);
}

TEST(GenSynthetic, DeterministicPerSeed) {
  const Dataset a = gen_synthetic(benchmark_cfg(), 7);
  const Dataset b = gen_synthetic(benchmark_cfg(), 7);
  EXPECT_TRUE(datasets_equal(a, b));
  const Dataset c = gen_synthetic(benchmark_cfg(), 8);
  EXPECT_FALSE(datasets_equal(a, c));
}

TEST(GenSynthetic, WithinIdentitySimilarityExceedsCross) {
  const Dataset ds = gen_synthetic(benchmark_cfg(), 1);
  double within = 0.0, cross = 0.0;
  size_t n_within = 0, n_cross = 0;
  Rng rng(5);
  for (int trial = 0; trial < 4000; ++trial) {
    const FeatureSet& sa = ds.sets[rng.below(ds.sets.size())];
    const FeatureSet& sb = ds.sets[rng.below(ds.sets.size())];
    const Member& ma = sa.members[rng.below(sa.members.size())];
    const Member& mb = sb.members[rng.below(sb.members.size())];
    const double c = cosine(ma.feature, mb.feature);
    if (sa.identity == sb.identity) {
      within += c;
      ++n_within;
    } else {
      cross += c;
      ++n_cross;
    }
  }
  ASSERT_GT(n_within, 0u);
  ASSERT_GT(n_cross, 0u);
  EXPECT_GT(within / n_within, cross / n_cross);
}

TEST(GenSynthetic, InvariantsHoldOverRandomConfigs) {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    SyntheticConfig cfg;
    cfg.num_identities = 2 + static_cast<int>(rng.below(6));
    cfg.sets_per_identity = 1 + static_cast<int>(rng.below(3));
    cfg.set_size_min = 1 + static_cast<int>(rng.below(3));
    cfg.set_size_max = cfg.set_size_min + static_cast<int>(rng.below(6));
    cfg.dim = 2 + static_cast<int>(rng.below(12));
    cfg.noise_scale = rng.uniform();
    cfg.outlier_rate = rng.uniform();
    cfg.profile_rate = rng.uniform();
    cfg.pose_shift_scale = rng.uniform() * 2.0;
    const Dataset ds = gen_synthetic(cfg, trial);
    EXPECT_NO_THROW(validate(ds));
    for (const FeatureSet& s : ds.sets) {
      EXPECT_GE(s.size(), cfg.set_size_min);
      EXPECT_LE(s.size(), cfg.set_size_max);
    }
  }
}

TEST(GenSynthetic, ConfigErrors) {
  SyntheticConfig cfg = benchmark_cfg();
  cfg.set_size_min = 0;
  EXPECT_THROW(gen_synthetic(cfg, 1), ConfigError);
  cfg = benchmark_cfg();
  cfg.dim = 1;
  EXPECT_THROW(gen_synthetic(cfg, 1), ConfigError);
  cfg = benchmark_cfg();
  cfg.outlier_rate = 1.5;
  EXPECT_THROW(gen_synthetic(cfg, 1), ConfigError);
}

TEST(Csv, RoundTripEqualsOriginal) {
  SyntheticConfig cfg = benchmark_cfg();
  cfg.num_identities = 8;
  const Dataset ds = gen_synthetic(cfg, 13);
  std::stringstream ss;
  save_csv(ds, ss);
  const Dataset back = load_embeddings(ss, "mem");
  EXPECT_TRUE(datasets_equal(ds, back));
}

TEST(Csv, SingleRowIsSingletonSet) {
  std::stringstream ss;
  ss << "set_id,identity,yaw,f0,f1\nonly,4,12.5,0.25,-1.5\n";
  const Dataset ds = load_embeddings(ss, "mem");
  ASSERT_EQ(ds.sets.size(), 1u);
  EXPECT_EQ(ds.sets[0].set_id, "only");
  EXPECT_EQ(ds.sets[0].identity, 0);  // densely re-indexed
  ASSERT_EQ(ds.sets[0].members.size(), 1u);
  EXPECT_EQ(ds.sets[0].members[0].feature, (Vec{0.25, -1.5}));
  EXPECT_EQ(ds.num_identities, 1);
}

TEST(Csv, MismatchedDimNamesLine) {
  std::stringstream ss;
  ss << "set_id,identity,yaw,f0,f1\na,0,0,1,2\nb,1,0,1\n";
  try {
    load_embeddings(ss, "mem");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("mem:3"), std::string::npos) << e.what();
  }
}

TEST(Csv, LoaderRejectsMutations) {
  const std::string good = "set_id,identity,yaw,f0,f1\na,0,10,0.5,0.5\nb,1,40,0.1,0.9\n";
  {
    std::stringstream ok(good);
    EXPECT_NO_THROW(load_embeddings(ok, "mem"));
  }
  const std::vector<std::string> mutants = {
      "set,identity,yaw,f0,f1\na,0,10,0.5,0.5\n",          // bad header key
      "set_id,identity,pitch,f0,f1\na,0,10,0.5,0.5\n",     // bad yaw column
      "set_id,identity,yaw,f1,f0\na,0,10,0.5,0.5\n",       // feature columns out of order
      "set_id,identity,yaw\na,0,10\n",                     // no feature columns
      "set_id,identity,yaw,f0,f1\na,0,ten,0.5,0.5\n",      // non-numeric yaw
      "set_id,identity,yaw,f0,f1\na,0,10,x,0.5\n",         // non-numeric feature
      "set_id,identity,yaw,f0,f1\na,0,95,0.5,0.5\n",       // yaw out of range
      "set_id,identity,yaw,f0,f1\na,0,-2,0.5,0.5\n",       // negative yaw
      "set_id,identity,yaw,f0,f1\na,0,10,0.5\n",           // ragged row
      "set_id,identity,yaw,f0,f1\na,0,10,0.5,0.5,9\n",     // extra field
      "set_id,identity,yaw,f0,f1\na,0,10,inf,0.5\n",       // non-finite feature
      "set_id,identity,yaw,f0,f1\na,0,10,0.5,0.5\na,1,10,0.5,0.5\n",  // conflicting identity
      "",                                                  // empty file
      "set_id,identity,yaw,f0,f1\n",                       // header only
  };
  for (const std::string& text : mutants) {
    std::stringstream ss(text);
    EXPECT_THROW(load_embeddings(ss, "mem"), ParseError) << "accepted: " << text;
  }
}

TEST(Split, HalvesTenIdentities) {
  SyntheticConfig cfg = benchmark_cfg();
  cfg.num_identities = 10;
  const Dataset ds = gen_synthetic(cfg, 2);
  const auto [train, test] = split(ds, 0.5, 42);
  EXPECT_EQ(train.num_identities, 5);
  EXPECT_EQ(test.num_identities, 5);
  EXPECT_EQ(train.sets.size() + test.sets.size(), ds.sets.size());
  EXPECT_NO_THROW(validate(train));
  EXPECT_NO_THROW(validate(test));
}

TEST(Split, DeterministicAndDisjoint) {
  SyntheticConfig cfg = benchmark_cfg();
  cfg.num_identities = 9;
  const Dataset ds = gen_synthetic(cfg, 2);
  const auto [train_a, test_a] = split(ds, 0.4, 7);
  const auto [train_b, test_b] = split(ds, 0.4, 7);
  EXPECT_TRUE(datasets_equal(train_a, train_b));
  EXPECT_TRUE(datasets_equal(test_a, test_b));

  // every original set lands on exactly one side
  std::map<std::string, int> seen;
  for (const FeatureSet& s : train_a.sets) seen[s.set_id]++;
  for (const FeatureSet& s : test_a.sets) seen[s.set_id]++;
  EXPECT_EQ(seen.size(), ds.sets.size());
  for (const auto& [id, n] : seen) EXPECT_EQ(n, 1) << id;

  // identity-disjoint: a set_id family (one identity) never straddles sides
  std::map<int, int> train_ids_by_orig;
  for (const FeatureSet& s : ds.sets) {
    const bool in_train = std::any_of(train_a.sets.begin(), train_a.sets.end(),
                                      [&](const FeatureSet& t) { return t.set_id == s.set_id; });
    auto [it, fresh] = train_ids_by_orig.try_emplace(s.identity, in_train);
    if (!fresh) {
      EXPECT_EQ(it->second, static_cast<int>(in_train));
    }
  }
}

TEST(Split, Errors) {
  SyntheticConfig cfg = benchmark_cfg();
  cfg.num_identities = 2;
  cfg.sets_per_identity = 1;
  const Dataset ds = gen_synthetic(cfg, 1);
  EXPECT_THROW(split(ds, 0.0, 1), ConfigError);
  EXPECT_THROW(split(ds, 1.0, 1), ConfigError);
  EXPECT_THROW(split(ds, 0.01, 1), ConfigError);  // rounds to zero test identities
}
