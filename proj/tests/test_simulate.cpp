#include "mvgame/simulate.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mvgame;
using testing_support::Rand;

namespace {

SimConfig config(std::size_t n, double dt, double t_final, double burn_in, std::uint64_t seed = 7) {
  SimConfig c;
  c.n_particles = n;
  c.dt = dt;
  c.t_final = t_final;
  c.burn_in = burn_in;
  c.seed = seed;
  return c;
}

/// Least-squares slope of log|y| against t, negated.
double decay_rate(const std::vector<double>& t, const std::vector<double>& y) {
  double st = 0, sy = 0, stt = 0, sty = 0;
  const double n = static_cast<double>(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double ly = std::log(std::abs(y[k]));
    st += t[k];
    sy += ly;
    stt += t[k] * t[k];
    sty += t[k] * ly;
  }
  return -(n * sty - st * sy) / (n * stt - st * st);
}

struct BatchStat {
  double mean = 0.0;
  double se = 0.0;
};

/// Batch-mean estimate of the post-burn-in time average of f(step).
template <class F>
BatchStat batch_mean(const SimTrace& t, F f, std::size_t batches = 10) {
  const std::size_t b0 = t.burn_steps();
  const std::size_t len = (t.steps() - b0) / batches;
  std::vector<double> m;
  for (std::size_t b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t n = b0 + b * len; n < b0 + (b + 1) * len; ++n) s += f(n);
    m.push_back(s / static_cast<double>(len));
  }
  BatchStat out;
  for (double v : m) out.mean += v;
  out.mean /= static_cast<double>(batches);
  double var = 0.0;
  for (double v : m) var += (v - out.mean) * (v - out.mean);
  out.se = std::sqrt(var / static_cast<double>(batches - 1) / static_cast<double>(batches));
  return out;
}

double centered_var(const SimTrace& t, std::size_t n, int k) {
  const Vec2 m = t.mean_path[n];
  const SymMat2 s = t.second_moment_path[n];
  return (k == 0 ? s.xx : s.yy) - m(k) * m(k);
}

}  // namespace

TEST(FeedbackFromSolution, Examples) {
  const FeedbackLaw a = feedback_from_solution(solve_ex1(1, 1, BranchSpec::positive()), 1, 1);
  EXPECT_EQ(a.control(Vec2(0.3, 0.0), Vec2(2, -3)), Vec2(-2, 3));

  const CostParams p = CostParams::ex2(1, 1, Vec2(1, 0), Vec2(0, 1));
  const FeedbackLaw d = feedback_from_solution(solve_ex2_diagonal(p, BranchSpec::positive()), 1, 1);
  const Vec2 x(0.7, -1.1), m(0.4, 0.2);
  EXPECT_NEAR(d.control(m, x)(0), -(x(0) + (std::sqrt(2.0) - 1) * m(0)), 1e-14);

  const FeedbackLaw z = feedback_from_solution(RiccatiSolution{}, 1, 1);
  EXPECT_TRUE(z.G.isZero() && z.L.isZero() && z.k.isZero());
}

TEST(SimConfig, Validation) {
  EXPECT_THROW(config(1, 0.01, 1, 0).validate(), std::invalid_argument);
  EXPECT_THROW(config(10, 0.1, 1, 0).validate(), std::invalid_argument);
  EXPECT_THROW(config(10, 0.0, 1, 0).validate(), std::invalid_argument);
  EXPECT_THROW(config(10, 0.01, 1, 1).validate(), std::invalid_argument);
  EXPECT_NO_THROW(config(10, 0.05, 1, 0.5).validate());
}

TEST(SimulateParticles, OrnsteinUhlenbeckMeanDecay) {
  FeedbackLaw law;
  law.G = Mat2::Identity();
  SimConfig cfg = config(4096, 0.001, 3.0, 0.0);
  cfg.init = GaussianMeasure::dirac({1, 1});
  const SimTrace t = simulate_particles(law, cfg);
  ASSERT_EQ(t.times.size(), 3001u);
  const double tol = cfg.dt + 4.0 / std::sqrt(4096.0);
  for (std::size_t n = 0; n < t.times.size(); n += 100) {
    EXPECT_NEAR(t.mean_path[n](0), std::exp(-t.times[n]), tol);
    EXPECT_NEAR(t.mean_path[n](1), std::exp(-t.times[n]), tol);
  }
  for (std::size_t n = 1; n < t.times.size(); ++n) EXPECT_GT(t.times[n], t.times[n - 1]);
}

TEST(SimulateParticles, NegativeBranchDiverges) {
  const FeedbackLaw law = feedback_from_solution(solve_ex1(1, 1, {-1, 1}), 1, 1);
  SimConfig cfg = config(512, 0.01, 50.0, 0.0);
  try {
    simulate_particles(law, cfg);
    FAIL() << "expected divergence";
  } catch (const Diverged& e) {
    EXPECT_GT(e.time(), 0.0);
    EXPECT_LT(e.time(), 50.0);
  }
}

TEST(SimulateParticles, BitwiseIdenticalAcrossThreadCounts) {
  const CostParams p = CostParams::ex2(1.0, 1.5, Vec2(1.0, -0.15), Vec2(0.2, 1.2));
  const FeedbackLaw law = feedback_from_solution(solve_ex2_newton(p), p.r1, p.r2);
  SimConfig cfg = config(3000, 0.01, 2.0, 0.0, 99);
  cfg.init = GaussianMeasure({1, -1}, SymMat2::identity());
  const SimTrace one = simulate_particles(law, cfg);
  for (unsigned threads : {2u, 3u, 0u}) {
    cfg.threads = threads;
    const SimTrace many = simulate_particles(law, cfg);
    ASSERT_EQ(one.mean_path.size(), many.mean_path.size());
    for (std::size_t n = 0; n < one.mean_path.size(); ++n) {
      EXPECT_EQ(one.mean_path[n], many.mean_path[n]);
      EXPECT_EQ(one.second_moment_path[n], many.second_moment_path[n]);
    }
    EXPECT_EQ(one.final_particles, many.final_particles);
  }
  cfg.seed = 100;
  EXPECT_NE(simulate_particles(law, cfg).final_particles, one.final_particles);
}

TEST(NoiseStream, StandardNormalMoments) {
  const NoiseStream noise(42);
  const std::size_t n = 1 << 20;
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0, cross = 0, lag = 0, tail = 0;
  Vec2 prev = noise.normal_pair(0, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 z = noise.normal_pair(k % 1024, k / 1024);
    for (double x : {z(0), z(1)}) {
      s1 += x;
      s2 += x * x;
      s3 += x * x * x;
      s4 += x * x * x * x;
      tail += std::abs(x) > 3.0;
    }
    cross += z(0) * z(1);
    lag += z(0) * prev(0);
    prev = z;
  }
  const double m = 2.0 * n;
  EXPECT_NEAR(s1 / m, 0.0, 5.0 / std::sqrt(m));
  EXPECT_NEAR(s2 / m, 1.0, 5.0 * std::sqrt(2.0 / m));
  EXPECT_NEAR(s3 / m, 0.0, 5.0 * std::sqrt(15.0 / m));
  EXPECT_NEAR(s4 / m, 3.0, 5.0 * std::sqrt(96.0 / m));
  EXPECT_NEAR(cross / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(lag / n, 0.0, 5.0 / std::sqrt(n));
  const double p3 = 0.0026997960632601866;
  EXPECT_NEAR(tail / m, p3, 5.0 * std::sqrt(p3 / m));
}

TEST(NoiseStream, CounterAddressed) {
  const NoiseStream a(9), b(9), c(10);
  EXPECT_EQ(a.normal_pair(17, 3), b.normal_pair(17, 3));
  EXPECT_NE(a.normal_pair(17, 3), a.normal_pair(17, 4));
  EXPECT_NE(a.normal_pair(17, 3), a.normal_pair(18, 3));
  EXPECT_NE(a.normal_pair(17, 3), c.normal_pair(17, 3));
  EXPECT_NE(a.normal_pair(0, kInitStep), a.normal_pair(0, 0));
}

TEST(SimulateClouds, EachCloudMatchesItsOwnRun) {
  const CostParams p = CostParams::ex2(1.0, 1.5, Vec2(1.0, -0.15), Vec2(0.2, 1.2));
  const FeedbackLaw law = feedback_from_solution(solve_ex2_newton(p), p.r1, p.r2);
  SimConfig cfg = config(2500, 0.01, 1.0, 0.0, 5);
  const std::vector<MeasureHandle> inits{EmpiricalMeasure::dirac({2, -1}), GaussianMeasure::standard()};
  for (unsigned threads : {1u, 3u}) {
    cfg.threads = threads;
    const auto both = detail::simulate_clouds(law, cfg, inits);
    ASSERT_EQ(both.size(), 2u);
    for (std::size_t c = 0; c < 2; ++c) {
      cfg.init = inits[c];
      const SimTrace alone = simulate_particles(law, cfg);
      EXPECT_EQ(both[c].mean_path, alone.mean_path);
      EXPECT_EQ(both[c].second_moment_path, alone.second_moment_path);
      EXPECT_EQ(both[c].final_particles, alone.final_particles);
    }
  }
}

TEST(SimulateClouds, DivergenceInAnyCloudThrows) {
  const RiccatiSolution s = solve_ex1(1, 1, BranchSpec{-1, -1});
  SimConfig cfg = config(256, 0.01, 50.0, 0.0);
  EXPECT_THROW(detail::simulate_clouds(feedback_from_solution(s, 1, 1), cfg,
                                       {EmpiricalMeasure::dirac({0, 0}), GaussianMeasure::standard()}),
               Diverged);
}

TEST(SimulateParticles, StationaryFromInvariantLaw) {
  const RiccatiSolution s = solve_ex1(1, 4, BranchSpec::positive());
  const FeedbackLaw law = feedback_from_solution(s, 1, 4);
  SimConfig cfg = config(2048, 0.01, 100.0, 0.0);
  cfg.init = invariant_gaussian(s, 1, 4);
  const SimTrace t = simulate_particles(law, cfg);
  for (int k = 0; k < 2; ++k) {
    const double g = law.G(k, k);
    // Stationary variance of the Euler recursion x ← (1 − g dt) x + √dt ξ.
    const double discrete = 1.0 / (g * (2.0 - g * cfg.dt));
    const BatchStat v = batch_mean(t, [&](std::size_t n) { return centered_var(t, n, k); });
    EXPECT_NEAR(v.mean, discrete, 3.0 * v.se + 1e-12) << k;
    const BatchStat m = batch_mean(t, [&](std::size_t n) { return t.mean_path[n](k); });
    EXPECT_NEAR(m.mean, 0.0, 3.0 * m.se) << k;
  }
}

TEST(SimulateParticles, EquilibriumTailMatchesInvariantGaussian) {
  const CostParams p = CostParams::ex2(1.0, 1.5, Vec2(1.0, -0.15), Vec2(0.2, 1.2));
  const RiccatiSolution s = solve_ex2_newton(p);
  SimConfig cfg = config(2048, 0.005, 40.0, 10.0);
  const SimTrace t = simulate_particles(feedback_from_solution(s, p.r1, p.r2), cfg);
  const GaussianMeasure want = invariant_gaussian(s, p.r1, p.r2);
  const GaussianMeasure got = t.tail_cloud_stats;
  EXPECT_NEAR(got.mean(0), want.mean(0), 0.05);
  EXPECT_NEAR(got.mean(1), want.mean(1), 0.05);
  EXPECT_NEAR(got.cov.xx / want.cov.xx, 1.0, 0.05);
  EXPECT_NEAR(got.cov.yy / want.cov.yy, 1.0, 0.05);
  EXPECT_NEAR(got.cov.xy, want.cov.xy, 0.05 * std::sqrt(want.cov.xx * want.cov.yy));
}

TEST(SimulateParticles, WeakOrderOneInTimeStep) {
  FeedbackLaw law;
  law.G = Mat2::Identity();
  std::vector<BatchStat> est;
  for (double dt : {0.01, 0.005, 0.0025}) {
    SimConfig cfg = config(2048, dt, 40.0, 5.0, 31);
    cfg.init = GaussianMeasure({0, 0}, SymMat2::diag(0.5, 0.5));
    const SimTrace t = simulate_particles(law, cfg);
    est.push_back(batch_mean(t, [&](std::size_t n) { return centered_var(t, n, 0); }));
    EXPECT_NEAR(est.back().mean, 1.0 / (2.0 - dt), 3.0 * est.back().se);
  }
  const double d1 = std::abs(est[0].mean - est[1].mean);
  const double d2 = std::abs(est[1].mean - est[2].mean);
  const double budget = 3.0 * (std::hypot(est[0].se, est[1].se) + std::hypot(est[1].se, est[2].se));
  EXPECT_LT(d1, 2.0 * d2 + budget);
}

TEST(CostPath, IsParticleAverageOfRunningCost) {
  Rand rng(51);
  const CostParams p = CostParams::ex2(1.3, 0.7, Vec2(0.5, -1.0), Vec2(0.3, 0.8));
  FeedbackLaw law;
  law.G = Mat2::Random();
  law.L = Mat2::Random();
  law.k = rng.vec(-1, 1);
  const EmpiricalMeasure cloud = rng.cloud(64);
  SimConfig cfg = config(64, 0.01, 0.01, 0.0);
  cfg.init = cloud;
  const SimTrace t = simulate_particles(law, cfg);
  const auto acc = cost_path(t, p);
  const Vec2 m = mean_vec(cloud);
  for (Player i : {Player::One, Player::Two}) {
    double sum = 0.0;
    for (const Vec2& x : cloud.particles())
      sum += running_cost(i, p, MeasureHandle(cloud), x, law.control(m, x)(index(i)));
    EXPECT_NEAR(acc[1][index(i)], 0.01 * sum / 64.0, 1e-12);
  }
}

TEST(CostPath, NondecreasingForNonnegativeCosts) {
  const CostParams p = CostParams::ex1(1, 4, 0.5);
  SimConfig cfg = config(256, 0.01, 5.0, 1.0);
  const SimTrace t = simulate_particles(feedback_from_solution(solve_ex1(1, 4, BranchSpec::positive()), 1, 4), cfg);
  const auto acc = cost_path(t, p);
  for (std::size_t n = 1; n < acc.size(); ++n) {
    EXPECT_GE(acc[n][0], acc[n - 1][0]);
    EXPECT_GE(acc[n][1], acc[n - 1][1]);
  }
  const auto c = ergodic_cost(t, p);
  const std::size_t b = t.burn_steps();
  EXPECT_NEAR(c[0], (acc.back()[0] - acc[b][0]) / 4.0, 1e-12);
}

TEST(ErgodicEstimate, Ex1ConstantsWithinStandardErrors) {
  const CostParams p = CostParams::ex1(1, 1, 0.3);
  const RiccatiSolution s = solve_ex1(1, 1, BranchSpec::positive());
  std::vector<SimTrace> traces;
  for (std::uint64_t seed : {1, 2}) {
    SimConfig cfg = config(2048, 0.005, 40.0, 10.0, seed);
    cfg.init = invariant_gaussian(s, 1, 1);
    traces.push_back(simulate_particles(feedback_from_solution(s, 1, 1), cfg));
  }
  const ErgodicEstimate e = ergodic_estimate(traces, p);
  for (int k = 0; k < 2; ++k) {
    EXPECT_GT(e.se[k], 0.0);
    EXPECT_LT(std::abs(e.value[k] - 1.5) / 1.5, 0.02);
  }
  EXPECT_THROW(ergodic_estimate({}, p), std::invalid_argument);
}

TEST(DeviationTrace, EquilibriumDeviationReproducesSimulation) {
  const RiccatiSolution s = solve_ex1(1, 1, BranchSpec::positive());
  const FeedbackLaw eq = feedback_from_solution(s, 1, 1);
  const SimConfig cfg = config(1500, 0.01, 3.0, 0.0, 5);
  const SimTrace a = simulate_particles(eq, cfg);
  const SimTrace b = deviation_trace(s, 1, 1, {Player::Two, eq}, cfg);
  EXPECT_EQ(a.mean_path, b.mean_path);
  EXPECT_EQ(a.second_moment_path, b.second_moment_path);
}

TEST(DeviationTrace, ScaledOwnGainRaisesCost) {
  const CostParams p = CostParams::ex1(1, 1, 0.0);
  const RiccatiSolution s = solve_ex1(1, 1, BranchSpec::positive());
  const FeedbackLaw eq = feedback_from_solution(s, 1, 1);
  for (double scale : {0.5, 1.5}) {
    std::vector<SimTrace> traces;
    for (std::uint64_t seed : {11, 12}) {
      SimConfig cfg = config(2048, 0.01, 60.0, 10.0, seed);
      traces.push_back(deviation_trace(s, 1, 1, {Player::One, eq.scaled_row(Player::One, scale)}, cfg));
    }
    const ErgodicEstimate e = ergodic_estimate(traces, p);
    EXPECT_GT(e.value[0], 1.5 + 3.0 * e.se[0]) << scale;
  }
}

TEST(FeedbackLaw, RowOperations) {
  FeedbackLaw a;
  a.G << 1, 2, 3, 4;
  a.L << 5, 6, 7, 8;
  a.k << 9, 10;
  const FeedbackLaw s = a.scaled_row(Player::Two, 2.0);
  EXPECT_EQ(s.G.row(0), a.G.row(0));
  EXPECT_EQ(s.G.row(1), 2.0 * a.G.row(1));
  EXPECT_EQ(s.L.row(1), 2.0 * a.L.row(1));
  EXPECT_EQ(s.k(1), 20.0);
  const FeedbackLaw w = a.with_row(Player::One, FeedbackLaw{});
  EXPECT_TRUE(w.G.row(0).isZero() && w.L.row(0).isZero() && w.k(0) == 0.0);
  EXPECT_EQ(w.G.row(1), a.G.row(1));
}

TEST(MeanPathAnalytic, Examples) {
  const std::vector<double> times{0.0, 0.5, 1.0, 2.0, 3.7};
  const RiccatiSolution ex1 = solve_ex1(1, 1, BranchSpec::positive());
  const auto a = mean_path_analytic(ex1, 1, 1, {1, 1}, times);
  for (std::size_t k = 0; k < times.size(); ++k) {
    EXPECT_NEAR(a[k](0), std::exp(-times[k]), 1e-13);
    EXPECT_NEAR(a[k](1), std::exp(-times[k]), 1e-13);
  }
  const RiccatiSolution d = solve_ex2_diagonal(CostParams::ex2(1, 1, Vec2(1, 0), Vec2(0, 2)), BranchSpec::positive());
  const auto b = mean_path_analytic(d, 1, 1, {1, 0}, times);
  for (std::size_t k = 0; k < times.size(); ++k) {
    EXPECT_NEAR(b[k](0), std::exp(-std::sqrt(2.0) * times[k]), 1e-13);
    EXPECT_NEAR(b[k](1), 0.0, 1e-13);
  }
  const auto c = mean_path_analytic(d, 1, 1, Vec2::Zero(), times);
  for (const Vec2& m : c) EXPECT_EQ(m, Vec2::Zero());
}

TEST(StabilizingBaseline, CovarianceAndMeanDecay) {
  SimConfig cfg = config(2048, 0.01, 30.0, 5.0);
  const SimTrace t = stabilizing_baseline(1.0, cfg);
  EXPECT_NEAR(t.tail_cloud_stats.cov.xx, 0.5, 0.025);
  EXPECT_NEAR(t.tail_cloud_stats.cov.yy, 0.5, 0.025);

  SimConfig slow = config(2048, 0.01, 40.0, 10.0);
  const SimTrace u = stabilizing_baseline(0.6, slow);
  EXPECT_NEAR(u.tail_cloud_stats.cov.xx, 1.0 / 1.2, 0.05 / 1.2);

  SimConfig far = config(8192, 0.005, 2.0, 0.0);
  far.init = GaussianMeasure({10, 10}, SymMat2::identity());
  const SimTrace f = stabilizing_baseline(1.0, far);
  std::vector<double> ts, ys;
  for (std::size_t n = 0; n < f.times.size(); ++n) {
    ts.push_back(f.times[n]);
    ys.push_back(f.mean_path[n](0));
  }
  EXPECT_NEAR(decay_rate(ts, ys), 1.0, 0.03);
  EXPECT_THROW(stabilizing_baseline(0.0, cfg), std::invalid_argument);
}

TEST(ChainRule, ValueIsStationaryAlongInvariantFlow) {
  for (const CostParams& p : {CostParams::ex2(1, 1, Vec2(1, 0), Vec2(0, 2)),
                              CostParams::ex2(1.0, 1.5, Vec2(1.0, -0.15), Vec2(0.2, 1.2))}) {
    const RiccatiSolution s = p.eta1(1) == 0.0 ? solve_ex2_diagonal(p, BranchSpec::positive()) : solve_ex2_newton(p);
    const FeedbackLaw law = feedback_from_solution(s, p.r1, p.r2);
    const Drift drift = [&](const MeasureHandle& mu, const Vec2& x) { return law.control(mean_vec(mu), x); };
    const GaussianMeasure inv = invariant_gaussian(s, p.r1, p.r2);
    for (Player i : {Player::One, Player::Two})
      EXPECT_NEAR(chain_rule_rhs(s.value(i), inv, drift, SymMat2::identity()), 0.0, 1e-12);
  }
}

TEST(FiniteHorizonValue, CoupledEstimatorVanishesAgainstItself) {
  const CostParams p = CostParams::ex1(1, 1, 0.0);
  const RiccatiSolution s = solve_ex1(1, 1, BranchSpec::positive());
  SimConfig cfg = config(512, 0.01, 5.0, 0.0);
  cfg.init = invariant_gaussian(s, 1, 1);
  const auto v = coupled_relative_value(feedback_from_solution(s, 1, 1), cfg, cfg.init, p);
  EXPECT_EQ(v[0], 0.0);
  EXPECT_EQ(v[1], 0.0);
}

TEST(FiniteHorizonValue, TrapezoidOfCostMinusConstant) {
  const CostParams p = CostParams::ex1(1, 1, 0.0);
  const RiccatiSolution s = solve_ex1(1, 1, BranchSpec::positive());
  SimConfig cfg = config(256, 0.01, 2.0, 0.0);
  const SimTrace t = simulate_particles(feedback_from_solution(s, 1, 1), cfg);
  const auto v = finite_horizon_value(t, p, 1.5, 1.5);
  double want = 0.0;
  for (std::size_t n = 0; n + 1 < t.times.size(); ++n)
    want += 0.5 * (mean_cost_at(t, p, n)[0] + mean_cost_at(t, p, n + 1)[0] - 3.0) * cfg.dt;
  EXPECT_NEAR(v[0], want, 1e-12);
}
