#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <numeric>
#include <set>

#include "faq_agg/query_aggregation.hpp"

using namespace faq;
using ag::Var;

namespace {

Var<double> random_var(Shape shape, std::mt19937_64& gen, bool grad = false) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& x : t.values()) x = n(gen);
  return Var<double>(t, grad);
}

FrameFeatures<double> pooled_only(const Var<double>& pooled) {
  return {ag::reshape(pooled, {pooled.dim(0), 1, 1}), pooled};
}

FrameFeatures<double> random_features(int d, std::mt19937_64& gen) { return pooled_only(random_var({d}, gen)); }

void set_identity(ParameterStore<double>& store, const std::string& linear) {
  Var<double> w = store.at(linear + ".weight");
  Var<double> b = store.at(linear + ".bias");
  w.value_mut().fill(0.0);
  for (int i = 0; i < w.dim(0); ++i) w.value_mut()(i, i) = 1.0;
  b.value_mut().fill(0.0);
}

AggregationConfig agg_config(AggMode mode, AggMethod method, int l, int r, int m) {
  AggregationConfig c;
  c.mode = mode;
  c.method = method;
  c.l = l;
  c.r = r;
  c.m = m;
  return c;
}

QuerySet<double> basic_set(int m, int r, int f, std::mt19937_64& gen) {
  return {random_var({m * r, f}, gen), QueryKind::basic, GroupShape{m, r}};
}

}  // namespace

TEST(Neighborhood, NearestAndSampled) {
  const auto nb = nearest_neighborhood(3, 8, 5);
  EXPECT_EQ(nb.members, (std::vector<int>{3, 1, 2, 4, 5}));
  EXPECT_EQ(nearest_neighborhood(0, 1, 5).members, (std::vector<int>{0}));
  EXPECT_EQ(nearest_neighborhood(7, 8, 3).members, (std::vector<int>{7, 5, 6}));
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = sample_neighborhood(4, 8, 4, 2, rng);
    EXPECT_NO_THROW(s.validate(8, 4));
    EXPECT_EQ(s.size(), 4);
    for (int j : s.members) EXPECT_LE(std::abs(j - 4), 2);
  }
  Neighborhood bad{2, {1, 2}};
  EXPECT_THROW(bad.validate(8, 5), ValidationError);
  EXPECT_THROW(nearest_neighborhood(8, 8, 2), ValidationError);
}

TEST(Grouping, IndicesArePermutations) {
  for (Grouping g : {Grouping::consecutive, Grouping::shuffled, Grouping::random_cluster}) {
    const auto idx = make_grouping_index(g, 8, 4, 11);
    std::set<int> seen(idx.begin(), idx.end());
    EXPECT_EQ(seen.size(), 32u);
    EXPECT_EQ(*seen.begin(), 0);
    EXPECT_EQ(*seen.rbegin(), 31);
  }
  const auto c = make_grouping_index(Grouping::consecutive, 3, 2, 0);
  EXPECT_EQ(c, (std::vector<int>{0, 1, 2, 3, 4, 5}));
  const auto rc = make_grouping_index(Grouping::random_cluster, 8, 4, 5);
  for (int g = 0; g < 8; ++g)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(rc[g * 4 + j] / 8, j);
}

TEST(SimilarityWeight, HandCases) {
  ParameterStore<double> store;
  Rng rng(1);
  QueryAggregator<double> agg(store, agg_config(AggMode::vanilla, AggMethod::cosine, 2, 1, 1), 3, rng);
  set_identity(store, "agg.alpha");
  set_identity(store, "agg.beta");
  auto v = [](std::vector<double> x) { return pooled_only(Var<double>(Tensor<double>(Shape{3}, std::move(x)))); };
  EXPECT_NEAR(agg.similarity_weight(v({0.3, -1.0, 2.0}), v({0.3, -1.0, 2.0})).value.item(), 1.0, 1e-12);
  EXPECT_NEAR(agg.similarity_weight(v({1, 0, 0}), v({0, 1, 0})).value.item(), 0.0, 1e-12);
  EXPECT_NEAR(agg.similarity_weight(v({1, 2, 2}), v({2, 1, 2})).value.item(), 8.0 / 9.0, 1e-12);
  const auto z = agg.similarity_weight(v({0, 0, 0}), v({1, 1, 1}));
  EXPECT_TRUE(z.degenerate);
  EXPECT_EQ(z.value.item(), 0.0);
}

TEST(AggregationWeights, SingletonIsOne) {
  std::mt19937_64 gen(1);
  for (AggMethod method : {AggMethod::cosine, AggMethod::simple_net, AggMethod::transformer}) {
    ParameterStore<double> store;
    Rng rng(2);
    QueryAggregator<double> agg(store, agg_config(AggMode::dynamic, method, 1, 2, 3), 6, rng);
    const auto f = random_features(6, gen);
    const auto w = agg.aggregation_weights(f, {f}, method);
    ASSERT_EQ(w.numel(), 1u);
    EXPECT_EQ(w.value()[0], 1.0);
  }
}

TEST(AggregationWeights, IdenticalNeighborsAreUniform) {
  ParameterStore<double> store;
  Rng rng(2);
  QueryAggregator<double> agg(store, agg_config(AggMode::vanilla, AggMethod::cosine, 4, 1, 1), 5, rng);
  std::mt19937_64 gen(3);
  const auto f = random_features(5, gen);
  const auto w = agg.aggregation_weights(f, {f, f, f, f}, AggMethod::cosine);
  for (double x : w.value().values()) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(AggregationWeights, CosineScoresSoftmax) {
  ParameterStore<double> store;
  Rng rng(2);
  QueryAggregator<double> agg(store, agg_config(AggMode::vanilla, AggMethod::cosine, 2, 1, 1), 2, rng);
  set_identity(store, "agg.alpha");
  set_identity(store, "agg.beta");
  auto v = [](double a, double b) { return pooled_only(Var<double>(Tensor<double>(Shape{2}, {a, b}))); };
  // Scores: cos(center, [0,1]) = 0 and cos(center, center) = 1.
  const auto w = agg.aggregation_weights(v(1, 0), {v(0, 1), v(1, 0)}, AggMethod::cosine).value();
  const double e0 = std::exp(0.0), e1 = std::exp(1.0);
  EXPECT_NEAR(w[0], e0 / (e0 + e1), 1e-12);
  EXPECT_NEAR(w[1], e1 / (e0 + e1), 1e-12);
  EXPECT_NEAR(w[0], 0.26894, 1e-5);
}

TEST(AggregationWeights, NormalizedForEveryMethod) {
  std::mt19937_64 gen(9);
  for (AggMethod method : {AggMethod::cosine, AggMethod::simple_net, AggMethod::transformer}) {
    ParameterStore<double> store;
    Rng rng(4);
    QueryAggregator<double> agg(store, agg_config(AggMode::dynamic, method, 5, 2, 3), 8, rng);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<FrameFeatures<double>> members;
      for (int i = 0; i < 5; ++i) members.push_back(random_features(8, gen));
      const auto w = agg.aggregation_weights(members[0], members, method).value();
      double s = 0.0;
      for (double x : w.values()) {
        EXPECT_GE(x, 0.0);
        s += x;
      }
      EXPECT_LE(std::abs(s - 1.0), 1e-6);
    }
  }
}

TEST(AggregateQueries, IdentityAndMean) {
  std::mt19937_64 gen(1);
  QuerySet<double> a{random_var({3, 4}, gen), QueryKind::basic, std::nullopt};
  const auto one = aggregate_queries<double>({a}, ag::constant(Tensor<double>(Shape{1}, 1.0)));
  EXPECT_EQ(one.vectors.value(), a.vectors.value());
  EXPECT_EQ(one.kind, QueryKind::aggregated);
  QuerySet<double> p{Var<double>(Tensor<double>(Shape{1, 2}, {0, 2})), QueryKind::basic, std::nullopt};
  QuerySet<double> q{Var<double>(Tensor<double>(Shape{1, 2}, {4, 6})), QueryKind::basic, std::nullopt};
  const auto mean = aggregate_queries<double>({p, q}, ag::constant(Tensor<double>(Shape{2}, {0.5, 0.5})));
  EXPECT_EQ(mean.vectors.value()[0], 2.0);
  EXPECT_EQ(mean.vectors.value()[1], 4.0);
}

TEST(AggregateQueries, MatchesTripleLoop) {
  std::mt19937_64 gen(2);
  std::vector<QuerySet<double>> sets;
  for (int i = 0; i < 3; ++i) sets.push_back({random_var({2, 3}, gen), QueryKind::basic, std::nullopt});
  const auto w = random_var({3}, gen);
  const auto out = aggregate_queries(sets, w).vectors.value();
  for (int k = 0; k < 2; ++k) {
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int i = 0; i < 3; ++i) acc += w.value()[i] * sets[i].vectors.value()(k, c);
      EXPECT_NEAR(out(k, c), acc, 1e-12);
    }
  }
  EXPECT_THROW(aggregate_queries(sets, random_var({2}, gen)), ValidationError);
}

TEST(GroupWeights, InitializedToGroupMean) {
  ParameterStore<double> store;
  Rng rng(1);
  QueryAggregator<double> agg(store, agg_config(AggMode::dynamic, AggMethod::transformer, 2, 4, 300), 32, rng);
  std::mt19937_64 gen(1);
  const auto v = agg.group_weights(random_features(32, gen));
  EXPECT_EQ(v.shape(), (Shape{4, 300}));
  for (double x : v.value().values()) EXPECT_EQ(x, 0.25);
}

TEST(GroupWeights, HandProjection) {
  ParameterStore<double> store;
  Rng rng(1);
  QueryAggregator<double> agg(store, agg_config(AggMode::dynamic, AggMethod::transformer, 2, 2, 1), 2, rng);
  Var<double> w = store.at("agg.G.weight");
  Var<double> b = store.at("agg.G.bias");
  // weight is (in, out): column j produces V entry j.
  w.value_mut() = Tensor<double>(Shape{2, 2}, {0.5, -1.0, 2.0, 3.0});
  b.value_mut() = Tensor<double>(Shape{2}, {0.1, 0.2});
  const auto v = agg.group_weights(pooled_only(Var<double>(Tensor<double>(Shape{2}, {1.0, -1.0})))).value();
  EXPECT_NEAR(v[0], 1.0 * 0.5 - 1.0 * 2.0 + 0.1, 1e-12);
  EXPECT_NEAR(v[1], 1.0 * -1.0 - 1.0 * 3.0 + 0.2, 1e-12);
}

TEST(DynamicQueries, OneHotSelectsAndUniformAverages) {
  std::mt19937_64 gen(3);
  const int m = 3, r = 4, f = 5;
  const auto basic = basic_set(m, r, f, gen);
  for (Grouping g : {Grouping::consecutive, Grouping::shuffled, Grouping::random_cluster}) {
    const auto idx = make_grouping_index(g, m, r, 17);
    Tensor<double> onehot(Shape{r, m});
    for (int gi = 0; gi < m; ++gi) onehot(2, gi) = 1.0;
    const auto sel = make_dynamic_queries(basic, Var<double>(onehot), idx);
    EXPECT_EQ(sel.kind, QueryKind::dynamic);
    EXPECT_EQ(sel.size(), m);
    for (int gi = 0; gi < m; ++gi)
      for (int c = 0; c < f; ++c) EXPECT_EQ(sel.vectors.value()(gi, c), basic.vectors.value()(idx[gi * r + 2], c));
    const auto mean = make_dynamic_queries(basic, Var<double>(Tensor<double>(Shape{r, m}, 1.0 / r)), idx);
    for (int gi = 0; gi < m; ++gi) {
      for (int c = 0; c < f; ++c) {
        double acc = 0.0;
        for (int j = 0; j < r; ++j) acc += basic.vectors.value()(idx[gi * r + j], c);
        EXPECT_NEAR(mean.vectors.value()(gi, c), acc / r, 1e-12);
      }
    }
  }
}

TEST(DynamicQueries, HandWeightedSum) {
  QuerySet<double> basic{Var<double>(Tensor<double>(Shape{2, 2}, {1, 1, 3, 5})), QueryKind::basic, GroupShape{1, 2}};
  const auto out = make_dynamic_queries(basic, Var<double>(Tensor<double>(Shape{2, 1}, {0.3, 0.7})), {0, 1});
  EXPECT_NEAR(out.vectors.value()[0], 2.4, 1e-12);
  EXPECT_NEAR(out.vectors.value()[1], 3.8, 1e-12);
  EXPECT_THROW(make_dynamic_queries(basic, Var<double>(Tensor<double>(Shape{3, 1})), {0, 1, 2}), ValidationError);
}

TEST(DynamicQueries, WithinGroupJointPermutationInvariance) {
  std::mt19937_64 gen(4);
  const int m = 4, r = 3, f = 6;
  const auto idx = make_grouping_index(Grouping::consecutive, m, r, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto basic = basic_set(m, r, f, gen);
    const auto v = random_var({r, m}, gen);
    const auto ref = make_dynamic_queries(basic, v, idx).vectors.value();
    Tensor<double> pb = basic.vectors.value(), pv = v.value();
    for (int g = 0; g < m; ++g) {
      std::vector<int> perm(r);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), gen);
      for (int j = 0; j < r; ++j) {
        pv(j, g) = v.value()(perm[j], g);
        for (int c = 0; c < f; ++c) pb(idx[g * r + j], c) = basic.vectors.value()(idx[g * r + perm[j]], c);
      }
    }
    const auto out = make_dynamic_queries(QuerySet<double>{Var<double>(pb), QueryKind::basic, GroupShape{m, r}},
                                          Var<double>(pv), idx)
                         .vectors.value();
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_LE(std::abs(out[i] - ref[i]), 1e-6);
  }
}

TEST(DynamicQueries, GroupPermutationEquivariance) {
  std::mt19937_64 gen(5);
  const int m = 5, r = 2, f = 4;
  const auto idx = make_grouping_index(Grouping::consecutive, m, r, 0);
  const auto basic = basic_set(m, r, f, gen);
  const auto v = random_var({r, m}, gen);
  const auto ref = make_dynamic_queries(basic, v, idx).vectors.value();
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  Tensor<double> pb(basic.vectors.shape()), pv(v.shape());
  for (int g = 0; g < m; ++g) {
    for (int j = 0; j < r; ++j) {
      pv(j, g) = v.value()(j, perm[g]);
      for (int c = 0; c < f; ++c) pb(g * r + j, c) = basic.vectors.value()(perm[g] * r + j, c);
    }
  }
  const auto out = make_dynamic_queries(QuerySet<double>{Var<double>(pb), QueryKind::basic, GroupShape{m, r}},
                                        Var<double>(pv), idx)
                       .vectors.value();
  for (int g = 0; g < m; ++g)
    for (int c = 0; c < f; ++c) EXPECT_LE(std::abs(out(g, c) - ref(perm[g], c)), 1e-6);
}

TEST(BuildFrameQueries, SingletonReducesToMemberQueries) {
  std::mt19937_64 gen(6);
  const int d = 6, f = 4;
  {
    ParameterStore<double> store;
    Rng rng(1);
    QueryAggregator<double> agg(store, agg_config(AggMode::vanilla, AggMethod::cosine, 1, 1, 3), d, rng);
    QuerySet<double> q{random_var({3, f}, gen), QueryKind::basic, std::nullopt};
    const auto fq = agg.build_frame_queries({random_features(d, gen)}, {q}, false);
    EXPECT_EQ(fq.aggregated.vectors.value(), q.vectors.value());
  }
  {
    ParameterStore<double> store;
    Rng rng(1);
    QueryAggregator<double> agg(store, agg_config(AggMode::dynamic, AggMethod::transformer, 1, 2, 3), d, rng);
    Var<double>(store.at("agg.G.weight")).value_mut() = random_var({d, 6}, gen).value();
    const auto basic = basic_set(3, 2, f, gen);
    const auto fq = agg.build_frame_queries({random_features(d, gen)}, {basic}, true);
    EXPECT_EQ(fq.aggregated.vectors.value(), fq.dynamic[0].vectors.value());
    ASSERT_TRUE(fq.basic_aggregated.has_value());
    EXPECT_EQ(fq.basic_aggregated->vectors.value(), basic.vectors.value());
  }
}

TEST(BuildFrameQueries, IdenticalMembersGiveIdenticalDynamicQueries) {
  std::mt19937_64 gen(7);
  ParameterStore<double> store;
  Rng rng(1);
  QueryAggregator<double> agg(store, agg_config(AggMode::dynamic, AggMethod::cosine, 3, 2, 4), 6, rng);
  Var<double>(store.at("agg.G.weight")).value_mut() = random_var({6, 8}, gen).value();
  const auto f = random_features(6, gen);
  const auto basic = basic_set(4, 2, 5, gen);
  const auto fq = agg.build_frame_queries({f, f, f}, {basic}, false);
  for (const auto& dq : fq.dynamic) EXPECT_EQ(dq.vectors.value(), fq.dynamic[0].vectors.value());
  const auto& a = fq.aggregated.vectors.value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], fq.dynamic[0].vectors.value()[i], 1e-12);
  EXPECT_FALSE(fq.basic_aggregated.has_value());
}

TEST(BuildFrameQueries, MatchesIndependentComposition) {
  std::mt19937_64 gen(8);
  ParameterStore<double> store;
  Rng rng(1);
  QueryAggregator<double> agg(store, agg_config(AggMode::dynamic, AggMethod::transformer, 3, 2, 2), 6, rng);
  Var<double>(store.at("agg.G.weight")).value_mut() = random_var({6, 4}, gen).value();
  std::vector<FrameFeatures<double>> members;
  for (int i = 0; i < 3; ++i) members.push_back(random_features(6, gen));
  const auto basic = basic_set(2, 2, 3, gen);
  const auto fq = agg.build_frame_queries(members, {basic}, true);

  const auto w = agg.aggregation_weights(members[0], members, AggMethod::transformer).value();
  Tensor<double> expect(Shape{2, 3});
  for (int i = 0; i < 3; ++i) {
    const auto dq = agg.make_dynamic_queries(basic, agg.group_weights(members[i])).vectors.value();
    for (std::size_t k = 0; k < dq.size(); ++k) expect[k] += w[i] * dq[k];
  }
  for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(fq.aggregated.vectors.value()[k], expect[k], 1e-12);
}

TEST(BuildFrameQueries, AggregatedLiesInConvexHull) {
  std::mt19937_64 gen(9);
  ParameterStore<double> store;
  Rng rng(1);
  QueryAggregator<double> agg(store, agg_config(AggMode::vanilla, AggMethod::cosine, 4, 1, 3), 5, rng);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<FrameFeatures<double>> members;
    std::vector<QuerySet<double>> sets;
    for (int i = 0; i < 4; ++i) {
      members.push_back(random_features(5, gen));
      sets.push_back({random_var({3, 4}, gen), QueryKind::basic, std::nullopt});
    }
    const auto a = agg.build_frame_queries(members, sets, false).aggregated.vectors.value();
    for (std::size_t k = 0; k < a.size(); ++k) {
      double lo = 1e300, hi = -1e300;
      for (const auto& s : sets) {
        lo = std::min(lo, s.vectors.value()[k]);
        hi = std::max(hi, s.vectors.value()[k]);
      }
      EXPECT_GE(a[k], lo - 1e-12);
      EXPECT_LE(a[k], hi + 1e-12);
    }
  }
}

TEST(BuildFrameQueries, VanillaNeedsOneSetPerMember) {
  std::mt19937_64 gen(10);
  ParameterStore<double> store;
  Rng rng(1);
  QueryAggregator<double> agg(store, agg_config(AggMode::vanilla, AggMethod::cosine, 2, 1, 3), 5, rng);
  QuerySet<double> q{random_var({3, 4}, gen), QueryKind::basic, std::nullopt};
  EXPECT_THROW(agg.build_frame_queries({random_features(5, gen), random_features(5, gen)}, {q}, false),
               ValidationError);
}

TEST(Parsing, EnumsRoundTrip) {
  for (AggMode m : {AggMode::none, AggMode::vanilla, AggMode::dynamic}) EXPECT_EQ(parse_agg_mode(to_string(m)), m);
  for (AggMethod m : {AggMethod::cosine, AggMethod::simple_net, AggMethod::transformer})
    EXPECT_EQ(parse_agg_method(to_string(m)), m);
  for (Grouping g : {Grouping::consecutive, Grouping::shuffled, Grouping::random_cluster})
    EXPECT_EQ(parse_grouping(to_string(g)), g);
  EXPECT_THROW(parse_agg_mode("fancy"), ValidationError);
}
