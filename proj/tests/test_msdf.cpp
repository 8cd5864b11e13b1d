#include "helpers.hpp"
#include "oracles.hpp"

#include "mldr/errors.hpp"
#include "mldr/gradcheck.hpp"
#include "mldr/msdf.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mldr;
using testing_util::max_abs_diff;
using testing_util::pick;
using testing_util::randn;
using testing_util::values;

namespace {

MsdfParams make_params(std::vector<StageShape> stages, std::size_t token_dim, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MsdfLayout layout;
  layout.stages = std::move(stages);
  layout.token_dim = token_dim;
  layout.n_classes = n;
  return MsdfParams::init(layout, rng);
}

void randomize(ParameterSet& ps, std::mt19937_64& rng, double sd) {
  for (auto& p : ps.items()) {
    std::normal_distribution<double> d(0.0, sd);
    for (double& v : p.value.data()) v = d(rng);
  }
}

void zero(ParameterSet& ps) {
  for (auto& p : ps.items())
    for (double& v : p.value.data()) v = 0.0;
}

}  // namespace

TEST(ExtractToken, TokenStageSlicesPositionZero) {
  std::mt19937_64 rng(41);
  MsdfParams mp = make_params({{ArchKind::TokenBased, 3}}, 3, 4, 1);
  Tensor x = randn({2, 5, 3}, rng);
  Tape t;
  ExtractedToken ex = extract_token(t.constant(x), ArchKind::TokenBased, mp, 0);
  ASSERT_EQ(ex.token.shape(), (Shape{2, 3}));
  ASSERT_EQ(ex.features.shape(), (Shape{2, 4, 3}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t d = 0; d < 3; ++d) {
      EXPECT_EQ(ex.token.value().at({b, d}), x.at({b, 0, d}));
      for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(ex.features.value().at({b, l, d}), x.at({b, l + 1, d}));
    }
}

TEST(ExtractToken, ConstantSpatialMapPoolsToTheConstant) {
  MsdfParams mp = make_params({{ArchKind::Spatial, 2}}, 2, 3, 2);
  // Identity token map isolates the pooling.
  Tensor& w = mp.params["msdf.s0.token.w"];
  w = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor x(Shape{1, 2, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) {
    x[i] = 2.5;
    x[9 + i] = -1.0;
  }
  Tape t;
  Tensor tok = extract_token(t.constant(x), ArchKind::Spatial, mp, 0).token.value();
  EXPECT_DOUBLE_EQ(tok[0], 2.5);
  EXPECT_DOUBLE_EQ(tok[1], -1.0);
}

TEST(ExtractToken, SpatialTokenMatchesLoopOracle) {
  std::mt19937_64 rng(42);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t b = pick(rng, 1, 3), c = pick(rng, 1, 4), h = pick(rng, 1, 4), d = pick(rng, 1, 5);
    MsdfParams mp = make_params({{ArchKind::Spatial, c}}, d, 3, rep);
    randomize(mp.params, rng, 0.5);
    Tensor x = randn({b, c, h, h}, rng);
    Tape t;
    Tensor tok = extract_token(t.constant(x), ArchKind::Spatial, mp, 0).token.value();
    const auto pooled = oracle::spatial_mean(values(x), b, c, h * h);
    auto expected = oracle::matmul(pooled, values(mp.params["msdf.s0.token.w"]), b, c, d);
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t j = 0; j < d; ++j) expected[r * d + j] += mp.params["msdf.s0.token.b"][j];
    EXPECT_LE(max_abs_diff(values(tok), expected), 1e-12);
  }
}

TEST(ExtractToken, ShapeErrors) {
  MsdfParams mp = make_params({{ArchKind::TokenBased, 3}}, 3, 4, 3);
  Tape t;
  EXPECT_THROW(extract_token(t.constant(Tensor(Shape{2, 1, 3})), ArchKind::TokenBased, mp, 0), DimensionError);
  EXPECT_THROW(extract_token(t.constant(Tensor(Shape{2, 4, 5})), ArchKind::TokenBased, mp, 0), ConfigError);
  EXPECT_THROW(extract_token(t.constant(Tensor(Shape{2, 4, 3})), ArchKind::TokenBased, mp, 1), ConfigError);
}

TEST(ProjectStage, ZeroFeaturesGiveBiasOnly) {
  MsdfParams mp = make_params({{ArchKind::Spatial, 3}}, 4, 5, 4);
  Tape t;
  Tensor out = project_stage(t.constant(Tensor(Shape{2, 3, 2, 2})), ArchKind::Spatial, mp, 0).value();
  ASSERT_EQ(out.shape(), (Shape{2, 5}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(ProjectStage, IdentityProjectionReturnsPooledFeatures) {
  std::mt19937_64 rng(43);
  MsdfParams mp = make_params({{ArchKind::TokenBased, 3}}, 3, 3, 5);
  mp.params["msdf.s0.proj.w"] = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor f = randn({2, 4, 3}, rng);
  Tape t;
  Tensor out = project_stage(t.constant(f), ArchKind::TokenBased, mp, 0).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t d = 0; d < 3; ++d) {
      double m = 0.0;
      for (std::size_t l = 0; l < 4; ++l) m += f.at({b, l, d});
      EXPECT_NEAR(out.at({b, d}), m / 4.0, 1e-15);
    }
}

TEST(ProjectStage, SpatialIsPoolThenLinear) {
  std::mt19937_64 rng(44);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t b = pick(rng, 1, 3), c = pick(rng, 1, 4), h = pick(rng, 1, 3), n = pick(rng, 2, 5);
    MsdfParams mp = make_params({{ArchKind::Spatial, c}}, 2, n, rep);
    randomize(mp.params, rng, 0.7);
    Tensor x = randn({b, c, h, h}, rng);
    Tape t;
    Tensor out = project_stage(t.constant(x), ArchKind::Spatial, mp, 0).value();
    auto expected = oracle::matmul(oracle::spatial_mean(values(x), b, c, h * h), values(mp.params["msdf.s0.proj.w"]), b, c, n);
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t j = 0; j < n; ++j) expected[r * n + j] += mp.params["msdf.s0.proj.b"][j];
    EXPECT_LE(max_abs_diff(values(out), expected), 1e-12);
  }
}

TEST(Gate, ZeroParametersGiveUniformWeights) {
  std::mt19937_64 rng(45);
  MsdfParams mp = make_params({{ArchKind::Spatial, 2}, {ArchKind::Spatial, 2}, {ArchKind::Spatial, 2}}, 4, 3, 6);
  zero(mp.params);
  Tape t;
  std::vector<Var> toks{t.constant(randn({2, 4}, rng)), t.constant(randn({2, 4}, rng)), t.constant(randn({2, 4}, rng))};
  Tensor w = gate_weights(toks, mp).value();
  ASSERT_EQ(w.shape(), (Shape{2, 3}));
  for (double v : w.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Gate, FreshInitIsUniform) {
  std::mt19937_64 rng(46);
  MsdfParams mp = make_params({{ArchKind::Spatial, 2}, {ArchKind::Spatial, 2}}, 4, 3, 7);
  Tape t;
  std::vector<Var> toks{t.constant(randn({3, 4}, rng)), t.constant(randn({3, 4}, rng))};
  for (double v : gate_weights(toks, mp).value().data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Gate, SingleStageWeightIsOne) {
  std::mt19937_64 rng(47);
  MsdfParams mp = make_params({{ArchKind::Spatial, 2}}, 4, 3, 8);
  randomize(mp.params, rng, 1.0);
  Tape t;
  std::vector<Var> toks{t.constant(randn({3, 4}, rng))};
  for (double v : gate_weights(toks, mp).value().data()) EXPECT_EQ(v, 1.0);
}

TEST(Gate, MatchesLoopOracle) {
  std::mt19937_64 rng(48);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t s = 4, b = 2, d = pick(rng, 1, 4);
    std::vector<StageShape> shapes(s, StageShape{ArchKind::Spatial, 2});
    MsdfParams mp = make_params(shapes, d, 3, rep);
    randomize(mp.params, rng, 0.8);
    Tape t;
    std::vector<Var> toks;
    std::vector<std::vector<double>> raw;
    for (std::size_t k = 0; k < s; ++k) {
      Tensor x = randn({b, d}, rng);
      raw.push_back(values(x));
      toks.push_back(t.constant(x));
    }
    const auto expected = oracle::gate(raw, values(mp.params["msdf.gate1.w"]), values(mp.params["msdf.gate1.b"]),
                                       values(mp.params["msdf.gate2.w"]), values(mp.params["msdf.gate2.b"]), b, d,
                                       mp.layout.hidden());
    Tensor w = gate_weights(toks, mp).value();
    EXPECT_LE(max_abs_diff(values(w), expected), 1e-10);
    for (std::size_t r = 0; r < b; ++r) {
      double total = 0.0;
      for (std::size_t k = 0; k < s; ++k) total += w.at({r, k});
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Fuse, IdenticalLogitsAreReturnedUnchanged) {
  std::mt19937_64 rng(49);
  Tensor z = randn({3, 4}, rng);
  Tensor w = Tensor::from({3, 2}, {0.3, 0.7, 0.9, 0.1, 0.5, 0.5});
  Tape t;
  std::vector<Var> logits{t.constant(z), t.constant(z)};
  Tensor fused = fuse(logits, t.constant(w)).values.value();
  EXPECT_LE(max_abs_diff(values(fused), values(z)), 1e-15);
}

TEST(Fuse, OneHotWeightsSelectAStage) {
  std::mt19937_64 rng(50);
  Tensor a = randn({2, 3}, rng), b = randn({2, 3}, rng);
  Tape t;
  std::vector<Var> logits{t.constant(a), t.constant(b)};
  Tensor fused = fuse(logits, t.constant(Tensor::from({2, 2}, {0, 1, 1, 0}))).values.value();
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(fused.at({0, j}), b.at({0, j}));
    EXPECT_EQ(fused.at({1, j}), a.at({1, j}));
  }
}

TEST(Fuse, UniformWeightsAverage) {
  std::mt19937_64 rng(51);
  Tensor a = randn({2, 3}, rng), b = randn({2, 3}, rng), c = randn({2, 3}, rng);
  Tape t;
  std::vector<Var> logits{t.constant(a), t.constant(b), t.constant(c)};
  Tensor fused = fuse(logits, t.constant(Tensor(Shape{2, 3}, 1.0 / 3.0))).values.value();
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(fused[i], (a[i] + b[i] + c[i]) / 3.0, 1e-15);
}

TEST(Fuse, StaysInsideTheConvexHull) {
  std::mt19937_64 rng(52);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t s = pick(rng, 1, 5), b = pick(rng, 1, 4), n = pick(rng, 2, 5);
    Tape t;
    std::vector<Var> logits;
    std::vector<std::vector<double>> raw;
    for (std::size_t k = 0; k < s; ++k) {
      Tensor z = randn({b, n}, rng, 3.0);
      raw.push_back(values(z));
      logits.push_back(t.constant(z));
    }
    Var w = softmax(t.constant(randn({b, s}, rng, 2.0)), -1);
    Tensor fused = fuse(logits, w).values.value();
    EXPECT_LE(max_abs_diff(values(fused), oracle::fuse(raw, values(w.value()), b, n)), 1e-12);
    for (std::size_t i = 0; i < b * n; ++i) {
      double lo = 1e300, hi = -1e300;
      for (const auto& r : raw) {
        lo = std::min(lo, r[i]);
        hi = std::max(hi, r[i]);
      }
      EXPECT_GE(fused[i], lo - 1e-12);
      EXPECT_LE(fused[i], hi + 1e-12);
    }
  }
}

TEST(Fuse, ShapeErrors) {
  Tape t;
  std::vector<Var> logits{t.constant(Tensor(Shape{2, 3})), t.constant(Tensor(Shape{2, 3}))};
  EXPECT_THROW(fuse(logits, t.constant(Tensor(Shape{2, 3}))), DimensionError);
  std::vector<Var> ragged{t.constant(Tensor(Shape{2, 3})), t.constant(Tensor(Shape{2, 4}))};
  EXPECT_THROW(fuse(ragged, t.constant(Tensor(Shape{2, 2}))), DimensionError);
}

namespace {

struct FusionFixture {
  MsdfParams params;
  std::vector<Tensor> inputs;
};

FusionFixture random_fixture(std::mt19937_64& rng, std::size_t stages, std::size_t b) {
  std::vector<StageShape> shapes;
  for (std::size_t k = 0; k < stages; ++k) shapes.push_back(k % 2 ? StageShape{ArchKind::TokenBased, 3} : StageShape{ArchKind::Spatial, 2 + k});
  FusionFixture fx{make_params(shapes, 3, 4, rng()), {}};
  randomize(fx.params.params, rng, 0.5);
  for (std::size_t k = 0; k < stages; ++k) {
    fx.inputs.push_back(k % 2 ? randn({b, 4, 3}, rng) : randn({b, 2 + k, 2, 2}, rng));
  }
  return fx;
}

std::vector<StageOutput> as_stages(Tape& t, const FusionFixture& fx) {
  std::vector<StageOutput> out;
  for (std::size_t k = 0; k < fx.inputs.size(); ++k) {
    out.push_back({t.constant(fx.inputs[k]), k % 2 ? ArchKind::TokenBased : ArchKind::Spatial, k + 1});
  }
  return out;
}

}  // namespace

TEST(MsdfLoss, FusedEqualToTeacherGivesZero) {
  std::mt19937_64 rng(53);
  FusionFixture fx = random_fixture(rng, 3, 2);
  Tape t;
  auto stages = as_stages(t, fx);
  Tensor fused = msdf_forward(stages, fx.params).values.value();
  EXPECT_NEAR(msdf_loss(stages, t.constant(fused), fx.params, DistillHyperparams{}).item(), 0.0, 1e-12);
}

TEST(MsdfLoss, SingleStageReducesToDfraOfItsProjection) {
  std::mt19937_64 rng(54);
  FusionFixture fx = random_fixture(rng, 1, 3);
  Tensor teacher = randn({3, 4}, rng);
  Tape t;
  auto stages = as_stages(t, fx);
  ExtractedToken ex = extract_token(stages[0].features, stages[0].kind, fx.params, 0);
  Var p1 = project_stage(ex.features, stages[0].kind, fx.params, 0);
  EXPECT_EQ(msdf_loss(stages, t.constant(teacher), fx.params, DistillHyperparams{}).item(),
            dfra_loss(p1, t.constant(teacher), DistillHyperparams{}).item());
}

TEST(MsdfLoss, EqualsDfraOfTheFusedLogit) {
  std::mt19937_64 rng(55);
  for (int rep = 0; rep < 10; ++rep) {
    FusionFixture fx = random_fixture(rng, 4, 2);
    Tensor teacher = randn({2, 4}, rng);
    Tape t;
    auto stages = as_stages(t, fx);
    FusedLogit f = msdf_forward(stages, fx.params);
    const double direct = dfra_loss(f.values, t.constant(teacher), DistillHyperparams{}).item();
    EXPECT_EQ(msdf_loss(stages, t.constant(teacher), fx.params, DistillHyperparams{}).item(), direct);
    oracle::DfraSettings o;
    EXPECT_NEAR(direct, oracle::dfra(values(f.values.value()), values(teacher), 2, 4, o), 1e-9);
  }
}

TEST(MsdfLoss, GradientsReachEveryParameterButNotTheTeacher) {
  std::mt19937_64 rng(56);
  FusionFixture fx = random_fixture(rng, 2, 3);
  Tensor teacher = randn({3, 4}, rng);
  teacher.set_requires_grad(true);
  Tape t;
  auto stages = as_stages(t, fx);
  t.backward(msdf_loss(stages, t.leaf(teacher), fx.params, DistillHyperparams{}));
  for (double g : teacher.grad()) EXPECT_EQ(g, 0.0);
  for (const auto& p : fx.params.params.items()) {
    double norm = 0.0;
    for (double g : p.value.grad()) norm += g * g;
    EXPECT_GT(norm, 0.0) << p.name;
  }
}

TEST(MsdfParams, LayoutValidation) {
  std::mt19937_64 rng(57);
  MsdfLayout empty;
  EXPECT_THROW(MsdfParams::init(empty, rng), ConfigError);
  MsdfLayout wide;
  wide.stages = {{ArchKind::TokenBased, 5}, {ArchKind::TokenBased, 4}};
  wide.token_dim = 4;
  MsdfParams adapted = MsdfParams::init(wide, rng);
  EXPECT_TRUE(adapted.params.contains("msdf.s0.token.w"));
  EXPECT_FALSE(adapted.params.contains("msdf.s1.token.w"));
  EXPECT_EQ(adapted.params["msdf.s0.token.w"].shape(), (Shape{5, 4}));
  MsdfParams ok = make_params({{ArchKind::Spatial, 3}, {ArchKind::TokenBased, 4}}, 4, 5, 9);
  // token(3*4+4) + proj(3*5+5) + proj(4*5+5) + gate1(8*4+4) + gate2(4*2+2)
  EXPECT_EQ(ok.params.count(), 16u + 20u + 25u + 36u + 10u);
  EXPECT_EQ(parse_arch_kind("token"), ArchKind::TokenBased);
  EXPECT_THROW(parse_arch_kind("conv"), ConfigError);
}

TEST(MsdfLoss, StagePermutationWithMatchingGateBlocksIsInvariant) {
  std::mt19937_64 rng(58);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t s = 3, b = 2, d = 3, n = 4;
    const std::vector<std::size_t> perm = rep % 2 ? std::vector<std::size_t>{2, 0, 1} : std::vector<std::size_t>{1, 2, 0};
    std::vector<StageShape> shapes{{ArchKind::Spatial, 2}, {ArchKind::TokenBased, d}, {ArchKind::Spatial, 5}};
    MsdfParams a = make_params(shapes, d, n, rep);
    randomize(a.params, rng, 0.6);
    std::vector<StageShape> permuted;
    for (std::size_t k : perm) permuted.push_back(shapes[k]);
    MsdfParams p = make_params(permuted, d, n, rep + 100);
    // slot k of the permuted module is slot perm[k] of the original
    for (std::size_t k = 0; k < s; ++k) {
      for (const char* what : {"token.w", "token.b", "proj.w", "proj.b"}) {
        const std::string from = "msdf.s" + std::to_string(perm[k]) + "." + what;
        if (a.params.contains(from)) p.params["msdf.s" + std::to_string(k) + "." + what] = a.params[from];
      }
    }
    const Tensor& w1 = a.params["msdf.gate1.w"];
    const Tensor& w2 = a.params["msdf.gate2.w"];
    const std::size_t h = w1.dim(1);
    Tensor pw1(w1.shape()), pw2(w2.shape()), pb2(Shape{s});
    for (std::size_t k = 0; k < s; ++k) {
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t u = 0; u < h; ++u) pw1.at({k * d + i, u}) = w1.at({perm[k] * d + i, u});
      for (std::size_t u = 0; u < h; ++u) pw2.at({u, k}) = w2.at({u, perm[k]});
      pb2[k] = a.params["msdf.gate2.b"][perm[k]];
    }
    p.params["msdf.gate1.w"] = pw1;
    p.params["msdf.gate1.b"] = a.params["msdf.gate1.b"];
    p.params["msdf.gate2.w"] = pw2;
    p.params["msdf.gate2.b"] = pb2;

    std::vector<Tensor> inputs{randn({b, 2, 2, 2}, rng), randn({b, 3, d}, rng), randn({b, 5, 2, 2}, rng)};
    Tensor teacher = randn({b, n}, rng);
    Tape t;
    std::vector<StageOutput> original, reordered;
    for (std::size_t k = 0; k < s; ++k) original.push_back({t.constant(inputs[k]), shapes[k].kind, k + 1});
    for (std::size_t k : perm) reordered.push_back({t.constant(inputs[k]), shapes[k].kind, k + 1});
    EXPECT_NEAR(msdf_loss(original, t.constant(teacher), a, DistillHyperparams{}).item(),
                msdf_loss(reordered, t.constant(teacher), p, DistillHyperparams{}).item(), 1e-12);
  }
}

TEST(MsdfLoss, GradientsReachStageFeaturesAndMatchFiniteDifferences) {
  std::mt19937_64 rng(59);
  FusionFixture fx = random_fixture(rng, 3, 2);
  const Tensor teacher = randn({2, 4}, rng);
  std::vector<Tensor*> wrt;
  for (Tensor& x : fx.inputs) wrt.push_back(&x);
  const auto loss = [&](Tape& t) {
    std::vector<StageOutput> stages;
    for (std::size_t k = 0; k < fx.inputs.size(); ++k)
      stages.push_back({t.leaf(fx.inputs[k]), k % 2 ? ArchKind::TokenBased : ArchKind::Spatial, k + 1});
    return msdf_loss(stages, t.constant(teacher), fx.params, DistillHyperparams{});
  };
  EXPECT_LE(max_gradient_error(loss, wrt), 1e-4);
  for (const Tensor* x : wrt) {
    double norm = 0.0;
    for (double g : x->grad()) norm += g * g;
    EXPECT_GT(norm, 0.0);
  }
}

TEST(ExtractToken, WiderClassTokensAreMappedToTokenDim) {
  MsdfParams mp = make_params({{ArchKind::TokenBased, 5}}, 3, 4, 12);
  std::mt19937_64 rng(58);
  randomize(mp.params, rng, 0.5);
  const std::size_t b = 2, l = 3;
  Tensor x = randn({b, 1 + l, 5}, rng);
  Tape t;
  ExtractedToken ex = extract_token(t.constant(x), ArchKind::TokenBased, mp, 0);
  std::vector<double> cls;
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < 5; ++j) cls.push_back(x[r * (1 + l) * 5 + j]);
  auto expected = oracle::matmul(cls, values(mp.params["msdf.s0.token.w"]), b, 5, 3);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < 3; ++j) expected[r * 3 + j] += mp.params["msdf.s0.token.b"][j];
  EXPECT_LE(max_abs_diff(values(ex.token.value()), expected), 1e-12);
  EXPECT_EQ(ex.features.shape(), (Shape{b, l, 5}));
}
