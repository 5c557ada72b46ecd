#include "mvgame/mvcalculus.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace mvgame;
using testing_support::Rand;
using testing_support::rel_err;

namespace {

double particle_average(const EmpiricalMeasure& e, const std::function<double(const Vec2&)>& f) {
  double s = 0.0;
  for (const Vec2& x : e.particles()) s += f(x);
  return s / static_cast<double>(e.size());
}

/// One Euler step of dX = b dt + dW on a cloud of antithetic pairs whose noise is
/// whitened to identity covariance. Cross terms between state and noise cancel
/// within each pair, so the moment update is deterministic.
EmpiricalMeasure antithetic_step(const EmpiricalMeasure& mu, const Drift& drift, double dt, Rand& rng) {
  const std::size_t n = mu.size();
  std::vector<Vec2> xi(n);
  SymMat2 cov = SymMat2::zero();
  for (auto& z : xi) {
    z = rng.normal_vec();
    cov += SymMat2::outer(z) * (1.0 / static_cast<double>(n));
  }
  const Mat2 whiten = Eigen::LLT<Mat2>(cov.matrix()).matrixL().solve(Mat2::Identity());
  std::vector<Vec2> next;
  next.reserve(2 * n);
  const MeasureHandle handle(mu);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 x = mu.particles()[k];
    const Vec2 base = x + drift(handle, x) * dt;
    const Vec2 noise = std::sqrt(dt) * (whiten * xi[k]);
    next.push_back(base + noise);
    next.push_back(base - noise);
  }
  return EmpiricalMeasure(std::move(next));
}

EmpiricalMeasure doubled(const EmpiricalMeasure& mu) {
  std::vector<Vec2> ps;
  for (const Vec2& x : mu.particles()) {
    ps.push_back(x);
    ps.push_back(x);
  }
  return EmpiricalMeasure(std::move(ps));
}

}  // namespace

TEST(EvalValue, Examples) {
  Rand rng(21);
  EXPECT_EQ(eval_value(PolyValue{}, MeasureHandle(rng.gaussian())), 0.0);
  const PolyValue v{SymMat2::diag(1.0, 0.5), SymMat2::zero(), Vec2::Zero()};
  EXPECT_NEAR(eval_value(v, EmpiricalMeasure::dirac({1, 1})), 1.5, 1e-15);
  const PolyValue mean_only{SymMat2::zero(), SymMat2::identity(), Vec2::Zero()};
  const EmpiricalMeasure two({{1, 0}, {0, 1}});
  EXPECT_EQ(mean_vec(two), Vec2(0.5, 0.5));
  EXPECT_NEAR(eval_value(mean_only, two), 0.5, 1e-15);
}

TEST(FlatDerivative, Examples) {
  const PolyValue v{SymMat2::identity(), SymMat2::zero(), Vec2::Zero()};
  EXPECT_NEAR(flat_derivative(v, GaussianMeasure::standard(), Vec2(1, 1)), 0.0, 1e-15);
}

TEST(FlatDerivative, IntegratesToZeroAgainstTheMeasure) {
  Rand rng(22);
  for (int k = 0; k < 100; ++k) {
    const PolyValue v = rng.poly();
    const EmpiricalMeasure mu = rng.cloud(1 + k % 64);
    const double integral = particle_average(mu, [&](const Vec2& x) { return flat_derivative(v, mu, x); });
    EXPECT_LT(std::abs(integral), 1e-10);
  }
}

TEST(FlatDerivative, MatchesRichardsonDifferenceQuotient) {
  Rand rng(23);
  for (int k = 0; k < 100; ++k) {
    const PolyValue v = rng.poly();
    const MeasureHandle mu = k % 2 ? MeasureHandle(rng.gaussian()) : MeasureHandle(rng.cloud(10));
    Vec2 x = rng.vec(-3, 3);
    if (x.norm() > 3.0) x *= 3.0 / x.norm();
    const double h = 1e-5;
    const double rich = 2.0 * fd_flat_derivative(v, mu, x, h) - fd_flat_derivative(v, mu, x, 2.0 * h);
    EXPECT_LT(rel_err(rich, flat_derivative(v, mu, x)), 1e-4);
  }
}

TEST(FdFlatDerivative, ExactForLinearFunctionals) {
  Rand rng(24);
  for (int k = 0; k < 20; ++k) {
    PolyValue v = rng.poly();
    v.R = SymMat2::zero();
    const MeasureHandle mu(rng.gaussian());
    const Vec2 x = rng.vec(-3, 3);
    for (double h : {1e-3, 0.1, 0.5}) EXPECT_NEAR(fd_flat_derivative(v, mu, x, h), flat_derivative(v, mu, x), 1e-9);
  }
}

TEST(FdFlatDerivative, ZeroFunctionalAndStepValidation) {
  const MeasureHandle mu(GaussianMeasure::standard());
  for (double h : {1e-6, 0.25, 0.5}) EXPECT_EQ(fd_flat_derivative(PolyValue{}, mu, {1, 2}, h), 0.0);
  EXPECT_THROW(fd_flat_derivative(PolyValue{}, mu, {1, 2}, 0.0), std::invalid_argument);
  EXPECT_THROW(fd_flat_derivative(PolyValue{}, mu, {1, 2}, 0.6), std::invalid_argument);
}

TEST(GradXFlat, Examples) {
  const MeasureHandle mu(GaussianMeasure({3, -1}, SymMat2::identity()));
  EXPECT_EQ(grad_x_flat(PolyValue{SymMat2::zero(), SymMat2::zero(), Vec2(1, 2)}, mu, {5, 5}), Vec2(1, 2));
  EXPECT_EQ(grad_x_flat(PolyValue{SymMat2::identity(), SymMat2::zero(), Vec2::Zero()}, mu, {3, 4}), Vec2(6, 8));
}

TEST(GradXFlat, MatchesCentralDifference) {
  Rand rng(25);
  const double h = 1e-6;
  for (int k = 0; k < 100; ++k) {
    const PolyValue v = rng.poly();
    const MeasureHandle mu = k % 2 ? MeasureHandle(rng.gaussian()) : MeasureHandle(rng.cloud(7));
    const Vec2 x = rng.vec(-3, 3);
    const Vec2 g = grad_x_flat(v, mu, x);
    for (int c = 0; c < 2; ++c) {
      const double fd =
          (flat_derivative(v, mu, x + h * unit(c)) - flat_derivative(v, mu, x - h * unit(c))) / (2.0 * h);
      EXPECT_LT(rel_err(fd, g(c)), 1e-6);
    }
  }
}

TEST(HessXFlat, ExamplesAndSecondDifference) {
  EXPECT_EQ(hess_x_flat(PolyValue{}), SymMat2::zero());
  EXPECT_EQ(hess_x_flat(PolyValue{SymMat2::identity(), SymMat2::zero(), Vec2::Zero()}), SymMat2::diag(2, 2));

  Rand rng(26);
  const double h = 1e-4;
  for (int k = 0; k < 100; ++k) {
    const PolyValue v = rng.poly();
    const MeasureHandle mu(rng.gaussian());
    const Vec2 x = rng.vec(-3, 3);
    const auto f = [&](const Vec2& y) { return flat_derivative(v, mu, y); };
    const Mat2 want = hess_x_flat(v).matrix();
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        const Vec2 ea = h * unit(a), eb = h * unit(b);
        const double fd = (f(x + ea + eb) - f(x + ea - eb) - f(x - ea + eb) + f(x - ea - eb)) / (4.0 * h * h);
        EXPECT_LT(rel_err(fd, want(a, b)), 1e-5);
      }
    }
  }
}

TEST(ChainRule, Examples) {
  Rand rng(27);
  const PolyValue v = rng.poly();
  const Drift zero = [](const MeasureHandle&, const Vec2&) { return Vec2::Zero().eval(); };
  EXPECT_EQ(chain_rule_rhs(v, MeasureHandle(rng.cloud(5)), zero, SymMat2::zero()), 0.0);
  EXPECT_EQ(chain_rule_rhs(v, MeasureHandle(rng.gaussian()), zero, SymMat2::zero()), 0.0);

  const PolyValue half_norm{SymMat2::diag(0.5, 0.5), SymMat2::zero(), Vec2::Zero()};
  EXPECT_NEAR(chain_rule_rhs(half_norm, MeasureHandle(rng.gaussian()), zero, SymMat2::identity()), 1.0, 1e-15);
  EXPECT_NEAR(chain_rule_rhs(half_norm, MeasureHandle(rng.cloud(9)), zero, SymMat2::identity()), 1.0, 1e-15);
}

TEST(ChainRule, GaussianAndParticlePathsAgreeForAffineDrift) {
  Rand rng(28);
  for (int k = 0; k < 20; ++k) {
    const PolyValue v = rng.poly();
    const Mat2 b = Mat2::Random();
    const Mat2 l = Mat2::Random();
    const Vec2 c = rng.vec(-1, 1);
    const Drift drift = [&](const MeasureHandle& mu, const Vec2& x) { return (b * x + l * mean_vec(mu) + c).eval(); };
    const SymMat2 sigma = rng.spd(0.1, 1.5);
    const EmpiricalMeasure cloud = rng.cloud(50);
    const GaussianMeasure matched(mean_vec(cloud), second_moment(cloud) - SymMat2::outer(mean_vec(cloud)));
    EXPECT_NEAR(chain_rule_rhs(v, cloud, drift, sigma), chain_rule_rhs(v, matched, drift, sigma), 1e-10);
  }
}

TEST(ChainRule, DiscreteSlopeErrorIsFirstOrderInTimeStep) {
  Rand rng(29);
  for (int k = 0; k < 10; ++k) {
    const PolyValue v = rng.poly();
    const Mat2 g = Mat2::Identity() + 0.3 * Mat2::Random();
    const Mat2 l = 0.3 * Mat2::Random();
    const Drift drift = [&](const MeasureHandle& mu, const Vec2& x) { return (-(g * x) - l * mean_vec(mu)).eval(); };
    const EmpiricalMeasure mu = rng.cloud(200);
    const double rate = chain_rule_rhs(v, doubled(mu), drift, SymMat2::identity());
    std::vector<double> errs;
    for (double dt : {1e-2, 5e-3, 2.5e-3}) {
      const EmpiricalMeasure next = antithetic_step(mu, drift, dt, rng);
      const double slope = (eval_value(v, next) - eval_value(v, mu)) / dt;
      errs.push_back(std::abs(slope - rate));
    }
    EXPECT_NEAR(errs[0] / errs[1], 2.0, 0.02);
    EXPECT_NEAR(errs[1] / errs[2], 2.0, 0.02);
  }
}
