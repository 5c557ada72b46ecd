#pragma once

// Interacting-particle simulation of the closed loop
//
//   dX = −(G X + L m(μ_t) + k) dt + dW,
//
// with μ_t replaced by the empirical measure of N particles, plus the cost
// accounting used for ergodic constants, values and Nash deviations.

#include "mvgame/errors.hpp"
#include "mvgame/hamiltonian.hpp"
#include "mvgame/linalg.hpp"
#include "mvgame/measures.hpp"
#include "mvgame/riccati.hpp"
#include "mvgame/rng.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <barrier>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

namespace mvgame {

struct FeedbackLaw {
  Mat2 G = Mat2::Zero();
  Mat2 L = Mat2::Zero();
  Vec2 k = Vec2::Zero();

  Vec2 control(const Vec2& mean, const Vec2& x) const { return -(G * x + L * mean + k); }

  bool is_finite() const { return G.allFinite() && L.allFinite() && k.allFinite(); }

  /// This law with player i's row (state gain, mean gain, constant) multiplied by s.
  FeedbackLaw scaled_row(Player i, double s) const {
    FeedbackLaw out = *this;
    const int r = index(i);
    out.G.row(r) *= s;
    out.L.row(r) *= s;
    out.k(r) *= s;
    return out;
  }

  /// This law with player i's row taken from other.
  FeedbackLaw with_row(Player i, const FeedbackLaw& other) const {
    FeedbackLaw out = *this;
    const int r = index(i);
    out.G.row(r) = other.G.row(r);
    out.L.row(r) = other.L.row(r);
    out.k(r) = other.k(r);
    return out;
  }
};

struct SimConfig {
  std::size_t n_particles = 1024;
  double dt = 0.01;
  double t_final = 10.0;
  double burn_in = 0.0;
  std::uint64_t seed = 1;
  MeasureHandle init = GaussianMeasure::standard();
  unsigned threads = 1;  // 0 picks the hardware concurrency

  std::size_t steps() const { return static_cast<std::size_t>(std::llround(t_final / dt)); }
  std::size_t burn_steps() const { return static_cast<std::size_t>(std::llround(burn_in / dt)); }

  void validate() const {
    if (n_particles < 2) throw std::invalid_argument("n_particles must be at least 2");
    if (n_particles >= (std::size_t{1} << 24)) throw std::invalid_argument("n_particles must be below 2^24");
    if (!(dt > 0.0) || dt > 0.05) throw std::invalid_argument("dt must lie in (0, 0.05]");
    if (!(t_final > 0.0)) throw std::invalid_argument("t_final must be positive");
    if (!(burn_in >= 0.0 && burn_in < t_final)) throw std::invalid_argument("burn_in must lie in [0, t_final)");
    if (steps() == 0) throw std::invalid_argument("t_final shorter than one step");
  }
};

/// Per-step moments of the particle cloud. Entry n describes the cloud at
/// times[n] = n·dt, before the update of step n.
struct SimTrace {
  double dt = 0.0;
  double burn_in = 0.0;
  std::vector<double> times;
  std::vector<Vec2> mean_path;
  std::vector<SymMat2> second_moment_path;
  std::vector<std::array<double, 2>> control_sq_path;  // particle mean of a_i² under the law
  std::vector<Vec2> final_particles;
  GaussianMeasure tail_cloud_stats;

  std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }
  std::size_t burn_steps() const { return static_cast<std::size_t>(std::llround(burn_in / dt)); }
  EmpiricalMeasure final_cloud() const { return EmpiricalMeasure(final_particles); }
  Moments moments_at(std::size_t n) const { return {mean_path[n], second_moment_path[n]}; }
};

struct DeviationSpec {
  Player player = Player::One;
  FeedbackLaw law;
};

inline FeedbackLaw feedback_from_solution(const RiccatiSolution& s, double r1, double r2) {
  const GainSet g = gain_matrices(s, r1, r2);
  return {g.Qg, g.Rg, g.qg};
}

namespace detail {

inline constexpr std::size_t kBlock = 1024;
inline constexpr double kDivergenceGuard = 1e6;

struct BlockStats {
  Vec2 sum = Vec2::Zero();
  SymMat2 sum_sq;
};

/// Pairwise tree over block partial sums in index order.
inline BlockStats tree_reduce(const BlockStats* b, std::size_t n) {
  if (n == 1) return b[0];
  const std::size_t half = n / 2;
  const BlockStats lo = tree_reduce(b, half);
  const BlockStats hi = tree_reduce(b + half, n - half);
  return {lo.sum + hi.sum, lo.sum_sq + hi.sum_sq};
}

inline BlockStats block_stats(const std::vector<Vec2>& xs, std::size_t begin, std::size_t end) {
  BlockStats s;
  for (std::size_t i = begin; i < end; ++i) {
    s.sum += xs[i];
    s.sum_sq += SymMat2::outer(xs[i]);
  }
  return s;
}

inline std::vector<Vec2> sample_initial(const MeasureHandle& init, std::size_t n, const NoiseStream& noise) {
  std::vector<Vec2> xs(n);
  if (const auto* g = std::get_if<GaussianMeasure>(&init)) {
    const SymMat2 root = sqrt_psd(g->cov);
    for (std::size_t i = 0; i < n; ++i) xs[i] = g->mean + root * noise.normal_pair(i, kInitStep);
  } else {
    const auto& ps = std::get<EmpiricalMeasure>(init).particles();
    for (std::size_t i = 0; i < n; ++i) xs[i] = ps[i % ps.size()];
  }
  return xs;
}

/// E[a_i²] for a = −(G x + L m + k) from the cloud's moments.
inline std::array<double, 2> control_second_moments(const FeedbackLaw& law, const Moments& mom) {
  const Vec2 offset = law.L * mom.mean + law.k;
  std::array<double, 2> out{};
  for (int i = 0; i < 2; ++i) {
    const Vec2 g = law.G.row(i).transpose();
    out[i] = mom.second.quad(g) + 2.0 * offset(i) * g.dot(mom.mean) + offset(i) * offset(i);
  }
  return out;
}

inline GaussianMeasure tail_stats(const SimTrace& t) {
  const std::size_t first = std::min(t.burn_steps(), t.steps());
  Vec2 mean = Vec2::Zero();
  SymMat2 second;
  const std::size_t count = t.times.size() - first;
  for (std::size_t n = first; n < t.times.size(); ++n) {
    mean += t.mean_path[n];
    second += t.second_moment_path[n];
  }
  mean /= static_cast<double>(count);
  second *= 1.0 / static_cast<double>(count);
  SymMat2 cov = second - SymMat2::outer(mean);
  if (lambda_min(cov) < 0.0) cov = SymMat2::zero();
  return {mean, cov};
}

}  // namespace detail

namespace detail {

/// Runs one particle cloud per entry of inits under the same law and the same
/// noise stream; particle i of every cloud sees identical increments.
inline std::vector<SimTrace> simulate_clouds(const FeedbackLaw& law, const SimConfig& cfg,
                                             const std::vector<MeasureHandle>& inits) {
  cfg.validate();
  if (!law.is_finite()) throw std::invalid_argument("feedback law has non-finite entries");

  const std::size_t n = cfg.n_particles;
  const std::size_t steps = cfg.steps();
  const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
  const std::size_t n_clouds = inits.size();
  unsigned threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_blocks));

  const NoiseStream noise(cfg.seed);
  std::vector<std::vector<Vec2>> xs;
  std::vector<SimTrace> traces(n_clouds);
  for (std::size_t c = 0; c < n_clouds; ++c) {
    xs.push_back(sample_initial(inits[c], n, noise));
    SimTrace& trace = traces[c];
    trace.dt = cfg.dt;
    trace.burn_in = cfg.burn_in;
    trace.times.resize(steps + 1);
    trace.mean_path.resize(steps + 1);
    trace.second_moment_path.resize(steps + 1);
    trace.control_sq_path.resize(steps + 1);
  }

  // stats[parity][cloud * n_blocks + block]
  std::array<std::vector<BlockStats>, 2> stats{std::vector<BlockStats>(n_clouds * n_blocks),
                                               std::vector<BlockStats>(n_clouds * n_blocks)};
  std::atomic<bool> diverged{false};
  std::atomic<std::size_t> diverged_step{0};
  std::barrier sync(static_cast<std::ptrdiff_t>(threads));
  const double sqrt_dt = std::sqrt(cfg.dt);
  const double inv_n = 1.0 / static_cast<double>(n);

  auto worker = [&](unsigned id) {
    const std::size_t b_begin = n_blocks * id / threads;
    const std::size_t b_end = n_blocks * (id + 1) / threads;
    const std::size_t p_begin = b_begin * kBlock;
    const std::size_t p_end = std::min(n, b_end * kBlock);
    std::vector<Vec2> offsets(n_clouds);

    for (std::size_t step = 0; step <= steps; ++step) {
      auto& buf = stats[step % 2];
      for (std::size_t c = 0; c < n_clouds; ++c)
        for (std::size_t b = b_begin; b < b_end; ++b)
          buf[c * n_blocks + b] = block_stats(xs[c], b * kBlock, std::min(n, (b + 1) * kBlock));
      sync.arrive_and_wait();
      if (diverged.load(std::memory_order_relaxed)) return;

      for (std::size_t c = 0; c < n_clouds; ++c) {
        const BlockStats total = tree_reduce(buf.data() + c * n_blocks, n_blocks);
        const Moments mom{total.sum * inv_n, total.sum_sq * inv_n};
        if (id == 0) {
          SimTrace& trace = traces[c];
          trace.times[step] = static_cast<double>(step) * cfg.dt;
          trace.mean_path[step] = mom.mean;
          trace.second_moment_path[step] = mom.second;
          trace.control_sq_path[step] = control_second_moments(law, mom);
        }
        offsets[c] = law.L * mom.mean + law.k;
      }
      if (step == steps) return;

      bool bad = false;
      for (std::size_t i = p_begin; i < p_end; ++i) {
        const Vec2 dw = sqrt_dt * noise.normal_pair(i, step);
        for (std::size_t c = 0; c < n_clouds; ++c) {
          Vec2& x = xs[c][i];
          const Vec2 a = -(law.G * x + offsets[c]);
          x += a * cfg.dt + dw;
          bad |= !(std::abs(x.x()) <= kDivergenceGuard && std::abs(x.y()) <= kDivergenceGuard);
        }
      }
      if (bad) {
        diverged_step.store(step + 1, std::memory_order_relaxed);
        diverged.store(true, std::memory_order_relaxed);
      }
    }
  };

  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned id = 1; id < threads; ++id) pool.emplace_back(worker, id);
    worker(0);
  }

  if (diverged.load()) {
    const double t = static_cast<double>(diverged_step.load()) * cfg.dt;
    std::ostringstream msg;
    msg << "particle system diverged at t = " << t << " (|coordinate| > 1e6)";
    throw Diverged(msg.str(), t);
  }

  for (std::size_t c = 0; c < n_clouds; ++c) {
    traces[c].final_particles = std::move(xs[c]);
    traces[c].tail_cloud_stats = tail_stats(traces[c]);
  }
  return traces;
}

}  // namespace detail

/// Euler–Maruyama particle simulation. The empirical mean used by every
/// particle at a step comes from a fixed block/tree reduction, so traces are
/// bitwise identical for any thread count.
inline SimTrace simulate_particles(const FeedbackLaw& law, const SimConfig& cfg) {
  return std::move(detail::simulate_clouds(law, cfg, {cfg.init}).front());
}

/// Cumulative left-endpoint integrals ∫₀^{t_n} ℓ̄_i dt of the particle-averaged running costs.
inline std::vector<std::array<double, 2>> cost_path(const SimTrace& t, const CostParams& p) {
  std::vector<std::array<double, 2>> acc(t.times.size(), {0.0, 0.0});
  for (std::size_t n = 0; n + 1 < t.times.size(); ++n) {
    const Moments mom = t.moments_at(n);
    for (Player i : {Player::One, Player::Two}) {
      const int k = index(i);
      acc[n + 1][k] = acc[n][k] + mean_running_cost(i, p, mom, t.control_sq_path[n][k]) * t.dt;
    }
  }
  return acc;
}

/// Instantaneous particle-averaged running cost of both players at step n.
inline std::array<double, 2> mean_cost_at(const SimTrace& t, const CostParams& p, std::size_t n) {
  const Moments mom = t.moments_at(n);
  return {mean_running_cost(Player::One, p, mom, t.control_sq_path[n][0]),
          mean_running_cost(Player::Two, p, mom, t.control_sq_path[n][1])};
}

inline std::array<double, 2> ergodic_cost(const SimTrace& t, const CostParams& p) {
  const auto acc = cost_path(t, p);
  const std::size_t b = std::min(t.burn_steps(), t.steps());
  const double span = static_cast<double>(t.steps() - b) * t.dt;
  return {(acc.back()[0] - acc[b][0]) / span, (acc.back()[1] - acc[b][1]) / span};
}

struct ErgodicEstimate {
  std::array<double, 2> value{};
  std::array<double, 2> se{};
};

/// Pools batch means over the post-burn-in window of every trace. The value is
/// the mean of all batch means; se is their standard deviation over √(count).
inline ErgodicEstimate ergodic_estimate(const std::vector<SimTrace>& traces, const CostParams& p,
                                        std::size_t batches = 10) {
  if (traces.empty() || batches < 1) throw std::invalid_argument("ergodic_estimate: need traces and batches");
  std::array<std::vector<double>, 2> means;
  for (const SimTrace& t : traces) {
    const std::size_t b0 = std::min(t.burn_steps(), t.steps());
    const std::size_t len = (t.steps() - b0) / batches;
    if (len == 0) throw std::invalid_argument("ergodic_estimate: post burn-in window shorter than batch count");
    for (std::size_t b = 0; b < batches; ++b) {
      std::array<double, 2> sum{0.0, 0.0};
      for (std::size_t n = b0 + b * len; n < b0 + (b + 1) * len; ++n) {
        const auto c = mean_cost_at(t, p, n);
        sum[0] += c[0];
        sum[1] += c[1];
      }
      means[0].push_back(sum[0] / static_cast<double>(len));
      means[1].push_back(sum[1] / static_cast<double>(len));
    }
  }
  ErgodicEstimate est;
  for (int k = 0; k < 2; ++k) {
    const auto& m = means[k];
    const double cnt = static_cast<double>(m.size());
    double mean = 0.0;
    for (double v : m) mean += v;
    mean /= cnt;
    double var = 0.0;
    for (double v : m) var += (v - mean) * (v - mean);
    var = m.size() > 1 ? var / (cnt - 1.0) : 0.0;
    est.value[k] = mean;
    est.se[k] = std::sqrt(var / cnt);
  }
  return est;
}

/// ∫₀^T (ℓ̄_i − c_i) dt by the trapezoid rule over the whole trace.
inline std::array<double, 2> finite_horizon_value(const SimTrace& t, const CostParams& p, double c1, double c2) {
  std::array<double, 2> out{0.0, 0.0};
  const std::array<double, 2> c{c1, c2};
  std::array<double, 2> prev = mean_cost_at(t, p, 0);
  for (std::size_t n = 1; n < t.times.size(); ++n) {
    const auto cur = mean_cost_at(t, p, n);
    for (int k = 0; k < 2; ++k) out[k] += 0.5 * (prev[k] + cur[k] - 2.0 * c[k]) * t.dt;
    prev = cur;
  }
  return out;
}

/// ∫₀^T (ℓ̄_i(X) − ℓ̄_i(Y)) dt for X started from cfg.init and Y from reference,
/// both driven by the same noise. With Y stationary this estimates the same
/// quantity as finite_horizon_value with far smaller variance.
inline std::array<double, 2> coupled_relative_value(const FeedbackLaw& law, const SimConfig& cfg,
                                                    const MeasureHandle& reference, const CostParams& p) {
  const auto runs = detail::simulate_clouds(law, cfg, {cfg.init, reference});
  const SimTrace& x = runs[0];
  const SimTrace& y = runs[1];
  std::array<double, 2> out{0.0, 0.0};
  auto diff = [&](std::size_t n) {
    const auto a = mean_cost_at(x, p, n);
    const auto b = mean_cost_at(y, p, n);
    return std::array<double, 2>{a[0] - b[0], a[1] - b[1]};
  };
  std::array<double, 2> prev = diff(0);
  for (std::size_t n = 1; n < x.times.size(); ++n) {
    const auto cur = diff(n);
    for (int k = 0; k < 2; ++k) out[k] += 0.5 * (prev[k] + cur[k]) * x.dt;
    prev = cur;
  }
  return out;
}

/// Exact solution of dm/dt = −(Qg + Rg) m − qg on the given times.
inline std::vector<Vec2> mean_path_analytic(const RiccatiSolution& s, double r1, double r2, const Vec2& m0,
                                            const std::vector<double>& times) {
  const GainSet g = gain_matrices(s, r1, r2);
  const Mat2 m = g.Qg + g.Rg;
  Vec2 m_inf = Vec2::Zero();
  if (!g.qg.isZero(0.0)) {
    const Eigen::FullPivLU<Mat2> lu(m);
    if (!lu.isInvertible()) throw SingularMeanMatrix("Qg + Rg is singular with a nonzero constant gain");
    m_inf = -lu.solve(g.qg);
  }
  std::vector<Vec2> out;
  out.reserve(times.size());
  for (double t : times) out.push_back(m_inf + expm(-t * m) * (m0 - m_inf));
  return out;
}

/// Opponent keeps its equilibrium row; the deviating player's row comes from dev.law.
inline SimTrace deviation_trace(const RiccatiSolution& s, double r1, double r2, const DeviationSpec& dev,
                                const SimConfig& cfg) {
  const FeedbackLaw eq = feedback_from_solution(s, r1, r2);
  return simulate_particles(eq.with_row(dev.player, dev.law), cfg);
}

/// Ergodic cost of the deviating player, +inf when the deviation diverges.
inline double deviation_cost(const RiccatiSolution& s, const CostParams& p, const DeviationSpec& dev,
                             const SimConfig& cfg) {
  try {
    return ergodic_cost(deviation_trace(s, p.r1, p.r2, dev, cfg), p)[index(dev.player)];
  } catch (const Diverged&) {
    return std::numeric_limits<double>::infinity();
  }
}

/// α = −C x for both players.
inline SimTrace stabilizing_baseline(double c, const SimConfig& cfg) {
  if (!(c > 0.0)) throw std::invalid_argument("stabilizing_baseline: C must be positive");
  FeedbackLaw law;
  law.G = c * Mat2::Identity();
  return simulate_particles(law, cfg);
}

}  // namespace mvgame
