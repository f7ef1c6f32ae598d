#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "sassha/optimizers.hpp"
#include "support/oracles.hpp"

using namespace sassha;

namespace {

QuadraticObjective scalar_quadratic(double h, double b = 0.0) {
  return QuadraticObjective(SymMat{{h}}, Vec64{b});
}

OptimizerConfig exact_cfg(Method m) {
  OptimizerConfig c;
  c.method = m;
  c.lr = Schedule::constant(1.0);
  c.beta1 = 0.0;
  c.beta2 = 0.0;
  c.k = 1;
  c.eps = 0.0;
  c.momentum = 0.0;
  return c;
}

double one_step(const Objective& f, const OptimizerConfig& c, double x0) {
  OptState s = OptState::init(Vec64{x0});
  RngStream rng(1);
  optimizer_step(s, f, f.full_batch(), rng, c);
  return s.x[0];
}

// Records the batch and evaluation point of every call.
class RecordingObjective final : public Objective {
 public:
  explicit RecordingObjective(std::size_t d) : h_(SymMat::diagonal(Vec64(d))) {
    Vec64 diag(d);
    for (std::size_t i = 0; i < d; ++i) diag[i] = 1.0 + static_cast<double>(i);
    h_ = SymMat::diagonal(diag);
  }
  std::size_t dim() const override { return h_.dim(); }
  std::size_t num_examples() const override { return 10; }
  double value(const Vec64& x, const Batch& b) const override {
    batches.push_back(b);
    return 0.5 * dot(x, h_.apply(x));
  }
  Vec64 grad(const Vec64& x, const Batch& b) const override {
    batches.push_back(b);
    grad_points.push_back(x);
    return h_.apply(x);
  }
  Vec64 hvp(const Vec64& x, const Vec64& v, const Batch& b) const override {
    batches.push_back(b);
    hvp_points.push_back(x);
    return h_.apply(v);
  }
  mutable std::vector<Batch> batches;
  mutable std::vector<Vec64> grad_points, hvp_points;

 private:
  SymMat h_;
};

}  // namespace

TEST(Perturbation, Examples) {
  const Vec64 e = perturbation(Vec64{3.0, 4.0}, 0.5);
  EXPECT_NEAR(e[0], 0.3, 1e-15);
  EXPECT_NEAR(e[1], 0.4, 1e-15);
  EXPECT_EQ(perturbation(Vec64(3), 0.5), Vec64(3));
  RngStream rng(2);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(norm2(perturbation(gaussian(rng, 7), 0.1)), 0.1, 1e-12);
  EXPECT_THROW(perturbation(Vec64{1.0}, -0.1), Error);
  EXPECT_THROW(perturbation(Vec64{std::nan("")}, 0.1), DivergenceError);
}

TEST(Sassha, NewtonStepOnScalarQuadratic) {
  const auto f = scalar_quadratic(1.0);
  EXPECT_EQ(one_step(f, exact_cfg(Method::kSassha), 1.0), 0.0);
}

TEST(Sassha, PerturbedStepHandExample) {
  const auto f = scalar_quadratic(1.0);
  auto c = exact_cfg(Method::kSassha);
  c.rho = Schedule::constant(0.1);
  EXPECT_NEAR(one_step(f, c, 1.0), -0.1, 1e-15);
}

TEST(Sassha, DampedNewtonClosedFormOnDiagonalQuadratic) {
  const Vec64 h{0.5, 2.0, 8.0};
  const Vec64 x0{1.0, -2.0, 0.25};
  for (double scale : {1.0, 2.0}) {
    const QuadraticObjective f(SymMat::diagonal(scale * h));
    auto c = exact_cfg(Method::kSassha);
    c.lr = Schedule::constant(0.3);
    c.eps = 1e-8;
    OptState s = OptState::init(x0);
    RngStream rng(3);
    sassha_step(s, f, f.full_batch(), rng, c);
    for (std::size_t i = 0; i < 3; ++i) {
      const double hi = scale * h[i];
      const double expected = x0[i] - 0.3 * hi * x0[i] / (std::sqrt(hi) + 1e-8);
      EXPECT_NEAR(s.x[i], expected, 1e-14);
    }
  }
}

TEST(Sassha, LazyFreezeKeepsPreconditionerBitwise) {
  RngStream hr(4);
  const QuadraticObjective f(random_spd(hr, 6, 20.0), gaussian(hr, 6));
  OptimizerConfig c;
  c.lr = Schedule::constant(0.05);
  c.rho = Schedule::constant(0.05);
  c.k = 10;
  OptState s = OptState::init(gaussian(hr, 6));
  RngStream rng(5);
  sassha_step(s, f, f.full_batch(), rng, c);
  const Vec64 frozen = s.d_bar;
  EXPECT_EQ(s.hvp_count, 1);
  for (int t = 2; t <= 10; ++t) {
    sassha_step(s, f, f.full_batch(), rng, c);
    for (std::size_t i = 0; i < 6; ++i)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(s.d_bar[i]), std::bit_cast<std::uint64_t>(frozen[i]));
    EXPECT_EQ(s.hvp_count, 1);
    EXPECT_EQ(s.t_hess, 1);
  }
  sassha_step(s, f, f.full_batch(), rng, c);
  EXPECT_EQ(s.hvp_count, 2);
  EXPECT_EQ(s.t_hess, 11);
  EXPECT_NE(s.d_bar, frozen);
}

TEST(Sassha, RefreshIntervalIrrelevantWhenHessianConstant) {
  // Diagonal H makes the Hutchinson estimate exact, and β₂ = 0 keeps D̄ fixed.
  const QuadraticObjective f(SymMat::diagonal(Vec64{1.0, 3.0, 0.2, 5.0}), Vec64{0.1, -0.3, 0.2, 0.0});
  OptimizerConfig base;
  base.lr = Schedule::constant(0.1);
  base.rho = Schedule::constant(0.05);
  base.beta2 = 0.0;
  const Vec64 x0{1.0, -1.0, 2.0, 0.5};
  OptimizerConfig c1 = base, ck = base;
  c1.k = 1;
  ck.k = 7;
  OptState s1 = OptState::init(x0), sk = OptState::init(x0);
  RngStream r1(6), rk(6);
  for (int t = 0; t < 50; ++t) {
    sassha_step(s1, f, f.full_batch(), r1, c1);
    sassha_step(sk, f, f.full_batch(), rk, ck);
    ASSERT_EQ(s1.x, sk.x) << "step " << t + 1;
  }
  EXPECT_EQ(s1.hvp_count, 50);
  EXPECT_EQ(sk.hvp_count, 8);
}

TEST(Sassha, AllEvaluationsShareTheBatchAndHessianIsAtPerturbedPoint) {
  RecordingObjective f(3);
  OptimizerConfig c;
  c.rho = Schedule::constant(0.2);
  c.k = 1;
  c.n_hutch = 3;
  OptState s = OptState::init(Vec64{1.0, 2.0, -1.0});
  RngStream rng(7);
  for (int t = 0; t < 4; ++t) {
    const Batch b({static_cast<std::size_t>(t), 5, 9}, 10);
    const Vec64 x = s.x;
    f.batches.clear();
    f.grad_points.clear();
    f.hvp_points.clear();
    sassha_step(s, f, b, rng, c);
    ASSERT_EQ(f.batches.size(), 5u);
    for (const Batch& seen : f.batches) EXPECT_EQ(seen, b);
    ASSERT_EQ(f.grad_points.size(), 2u);
    EXPECT_EQ(f.grad_points[0], x);
    const Vec64 x_pert = f.grad_points[1];
    EXPECT_NEAR(norm2(x_pert - x), 0.2, 1e-12);
    for (const Vec64& p : f.hvp_points) EXPECT_EQ(p, x_pert);
  }
}

TEST(Sassha, PreconditionerNonNegativeOnIndefiniteProblem) {
  const QuadraticObjective f(SymMat{{1.0, 2.0, 0.0}, {2.0, -1.0, 0.5}, {0.0, 0.5, -3.0}});
  OptimizerConfig c;
  c.lr = Schedule::constant(0.01);
  c.rho = Schedule::constant(0.05);
  c.k = 2;
  OptState s = OptState::init(Vec64{0.1, 0.2, 0.3});
  RngStream rng(8);
  for (int t = 0; t < 100; ++t) {
    sassha_step(s, f, f.full_batch(), rng, c);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_GE(s.d[i], 0.0);
      EXPECT_GE(s.d_bar[i], 0.0);
    }
  }
}

TEST(MSassha, FirstStepIsUnperturbedAndSecondUsesMomentumSign) {
  RecordingObjective f(1);
  auto c = exact_cfg(Method::kMSassha);
  c.lr = Schedule::constant(0.5);
  c.rho = Schedule::constant(0.1);
  OptState s = OptState::init(Vec64{1.0});
  RngStream rng(9);
  msassha_step(s, f, f.full_batch(), rng, c);
  // f = ½x²: m = 1, D̄ = 1, x = 1 − 0.5.
  EXPECT_EQ(f.grad_points.back(), Vec64{1.0});
  EXPECT_EQ(s.m, Vec64{1.0});
  EXPECT_EQ(s.x[0], 0.5);
  msassha_step(s, f, f.full_batch(), rng, c);
  EXPECT_NEAR(f.grad_points.back()[0], 0.6, 1e-15);
  EXPECT_NEAR(s.x[0], 0.5 - 0.5 * 0.6, 1e-15);
  EXPECT_EQ(s.gc_count, 2);
  EXPECT_EQ(f.grad_points.size(), 2u);
}

TEST(FirstOrder, AdamwHandExamples) {
  const auto f = scalar_quadratic(1.0);
  auto c = exact_cfg(Method::kAdamW);
  EXPECT_EQ(one_step(f, c, 1.0), 0.0);
  c.weight_decay = 0.1;
  EXPECT_NEAR(one_step(f, c, 1.0), -0.1, 1e-15);
}

TEST(FirstOrder, SgdmWithoutMomentumIsGradientDescent) {
  const auto f = scalar_quadratic(2.0, 1.0);
  auto c = exact_cfg(Method::kSgdm);
  c.lr = Schedule::constant(0.1);
  OptState s = OptState::init(Vec64{3.0});
  RngStream rng(10);
  double x = 3.0;
  for (int t = 0; t < 5; ++t) {
    optimizer_step(s, f, f.full_batch(), rng, c);
    x -= 0.1 * (2.0 * x + 1.0);
    EXPECT_NEAR(s.x[0], x, 1e-15);
  }
}

TEST(FirstOrder, SgdmHeavyBallAccumulates) {
  const auto f = scalar_quadratic(0.0, 1.0);  // constant gradient 1
  auto c = exact_cfg(Method::kSgdm);
  c.momentum = 0.5;
  OptState s = OptState::init(Vec64{0.0});
  RngStream rng(11);
  optimizer_step(s, f, f.full_batch(), rng, c);
  optimizer_step(s, f, f.full_batch(), rng, c);
  EXPECT_EQ(s.m[0], 1.5);
  EXPECT_EQ(s.x[0], -2.5);
}

TEST(Sam, SgdmHandExampleAndZeroRadius) {
  const auto f = scalar_quadratic(1.0);
  auto c = exact_cfg(Method::kSamSgdm);
  c.rho = Schedule::constant(0.1);
  EXPECT_NEAR(one_step(f, c, 1.0), -0.1, 1e-15);

  RngStream hr(12);
  const QuadraticObjective q(random_spd(hr, 4, 10.0), gaussian(hr, 4));
  for (auto [sam, plain] : {std::pair{Method::kSamSgdm, Method::kSgdm},
                            std::pair{Method::kSamAdamw, Method::kAdamW}}) {
    OptimizerConfig cs, cp;
    cs.method = sam;
    cp.method = plain;
    cs.lr = cp.lr = Schedule::constant(0.05);
    OptState a = OptState::init(Vec64{1, 2, 3, 4}), b = a;
    RngStream r(13);
    for (int t = 0; t < 20; ++t) {
      optimizer_step(a, q, q.full_batch(), r, cs);
      optimizer_step(b, q, q.full_batch(), r, cp);
    }
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.gc_count, 40);
    EXPECT_EQ(b.gc_count, 20);
  }
}

TEST(AdaHessian, NewtonLikeOnScalarQuadratic) {
  const auto f = scalar_quadratic(2.0);
  EXPECT_EQ(one_step(f, exact_cfg(Method::kAdaHessian), 1.0), 0.0);
}

TEST(AdaHessian, SquaredEstimateNonNegative) {
  const auto f = scalar_quadratic(-3.0);
  auto c = exact_cfg(Method::kAdaHessian);
  c.lr = Schedule::constant(1e-3);
  OptState s = OptState::init(Vec64{0.5});
  RngStream rng(14);
  optimizer_step(s, f, f.full_batch(), rng, c);
  EXPECT_EQ(s.d[0], 9.0);
  EXPECT_EQ(s.hvp_count, 1);
}

TEST(SophiaH, ClipSaturatesFloorsAndIsIdentityInside) {
  auto c = exact_cfg(Method::kSophiaH);
  c.clip = 0.01;
  c.hess_floor = 1e-2;
  // g = 1, h = 0.02: ratio 50 saturates at the clip.
  EXPECT_NEAR(one_step(scalar_quadratic(0.02, 1.0), c, 0.0), -0.01, 1e-15);

  const auto neg = scalar_quadratic(-5.0);
  OptState s = OptState::init(Vec64{1e-4});
  RngStream rng(15);
  sophiah_step(s, neg, neg.full_batch(), rng, c);
  EXPECT_EQ(s.d[0], 1e-2);

  // g = 0.005, h = 1: ratio 0.005 lies inside the clip.
  EXPECT_NEAR(one_step(scalar_quadratic(1.0), c, 0.005), 0.0, 1e-18);
}

TEST(Counters, MatchCostModelOverThousandSteps) {
  RngStream hr(16);
  const QuadraticObjective f(random_spd(hr, 3, 5.0));
  for (Method m : {Method::kSassha, Method::kMSassha, Method::kSamSgdm, Method::kSamAdamw,
                   Method::kAdaHessian, Method::kSophiaH, Method::kAdamW, Method::kSgdm}) {
    OptimizerConfig c;
    c.method = m;
    c.lr = Schedule::constant(1e-3);
    c.rho = Schedule::constant(0.01);
    OptState s = OptState::init(Vec64{1.0, 1.0, 1.0});
    RngStream rng(17);
    long prev_gc = 0, prev_hvp = 0;
    for (int t = 0; t < 1000; ++t) {
      optimizer_step(s, f, f.full_batch(), rng, c);
      ASSERT_GE(s.gc_count, prev_gc);
      ASSERT_GE(s.hvp_count, prev_hvp);
      prev_gc = s.gc_count;
      prev_hvp = s.hvp_count;
    }
    const CostCounts e = expected_counts(c, 1000);
    EXPECT_EQ(s.gc_count, e.gc) << to_string(m);
    EXPECT_EQ(s.hvp_count, e.hvp) << to_string(m);
  }
  OptimizerConfig c;
  EXPECT_EQ(expected_counts(c, 1000).gc, 2000);
  EXPECT_EQ(expected_counts(c, 1000).hvp, 100);
  c.method = Method::kMSassha;
  EXPECT_EQ(expected_counts(c, 1000).gc, 1000);
  EXPECT_EQ(expected_counts(c, 1000).hvp, 100);
  c.method = Method::kAdaHessian;
  EXPECT_EQ(expected_counts(c, 1000).hvp, 1000);
}

TEST(Divergence, ReportsStepAndQuantity) {
  const auto f = scalar_quadratic(1e3);
  auto c = exact_cfg(Method::kSgdm);
  OptState s = OptState::init(Vec64{1.0});
  RngStream rng(18);
  try {
    for (int t = 0; t < 1000; ++t) optimizer_step(s, f, f.full_batch(), rng, c);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.step(), 50);
    EXPECT_FALSE(e.quantity().empty());
  }
}

TEST(Validation, RejectsBadConfigs) {
  OptimizerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.k = 0;
  EXPECT_THROW(c.validate(), Error);
  c = OptimizerConfig{};
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = OptimizerConfig{};
  c.method = Method::kSophiaH;
  c.clip = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = OptimizerConfig{};
  c.rho = Schedule::constant(-1.0);
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(parse_method("sassha"), Method::kSassha);
  EXPECT_FALSE(parse_method("lion").has_value());
}

TEST(Schedules, Values) {
  const Schedule ms = Schedule::multistep(0.15, {80, 120}, 0.1);
  EXPECT_NEAR(schedule_value(ms, 100, 200), 0.015, 1e-15);
  EXPECT_EQ(schedule_value(ms, 79, 200), 0.15);
  EXPECT_NEAR(schedule_value(ms, 120, 200), 0.0015, 1e-16);
  EXPECT_EQ(schedule_value(Schedule::power_decay(1.0, 0.7), 1, 10), 1.0);
  EXPECT_NEAR(schedule_value(Schedule::power_decay(1.0, 0.5), 4, 10), 0.5, 1e-15);
  const Schedule cw = Schedule::cosine_warmup(0.3, 10);
  EXPECT_EQ(schedule_value(cw, 10, 100), 0.3);
  EXPECT_NEAR(schedule_value(cw, 5, 100), 0.15, 1e-15);
  EXPECT_NEAR(schedule_value(cw, 55, 100), 0.15, 1e-15);
  EXPECT_NEAR(schedule_value(cw, 100, 100), 0.0, 1e-15);
  EXPECT_NEAR(schedule_value(Schedule::polynomial(1.0, 2.0), 5, 10), 0.25, 1e-15);
  EXPECT_EQ(schedule_value(Schedule::constant(0.2), 1000, 10), 0.2);
  EXPECT_THROW(schedule_value(Schedule::constant(0.2), 0, 10), Error);
  EXPECT_THROW(Schedule::multistep(0.1, {5, 3}, 0.1).validate("lr"), Error);
}

TEST(Schedules, ConvergenceConditions) {
  EXPECT_TRUE(check_theorem_schedule(0.7, 0.4).ok);
  EXPECT_FALSE(check_theorem_schedule(0.4, 1.0).ok);
  EXPECT_FALSE(check_theorem_schedule(1.0, 0.0).ok);
  EXPECT_TRUE(check_theorem_schedule(1.0, 0.1).ok);
  EXPECT_FALSE(check_theorem_schedule(1.2, 0.5).ok);
  EXPECT_FALSE(check_theorem_schedule(-0.1, 0.5).ok);
  EXPECT_NE(check_theorem_schedule(0.4, 1.0).diagnostic.find("2p"), std::string::npos);
}
