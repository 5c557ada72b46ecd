#pragma once

// Probability measures on the plane: closed-form Gaussians and particle clouds.
//
// Every functional in the library only ever needs the first two moments of a
// measure, so both representations reduce to (mean, second moment) through
// `moments()`.

#include "mvgame/linalg.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

namespace mvgame {

struct GaussianMeasure {
  Vec2 mean = Vec2::Zero();
  SymMat2 cov;

  GaussianMeasure() = default;
  /// Validates finiteness and clamps eigenvalues in [-1e-12, 0) to zero.
  GaussianMeasure(Vec2 m, SymMat2 c) : mean(std::move(m)), cov(c) {
    if (!is_finite(mean) || !cov.is_finite()) throw std::invalid_argument("Gaussian parameters must be finite");
    cov = clamp_psd(cov);
  }

  static GaussianMeasure standard() { return {Vec2::Zero(), SymMat2::identity()}; }
  static GaussianMeasure dirac(const Vec2& at) { return {at, SymMat2::zero()}; }
};

class EmpiricalMeasure {
 public:
  explicit EmpiricalMeasure(std::vector<Vec2> particles) : particles_(std::move(particles)) {
    if (particles_.empty()) throw std::invalid_argument("empirical measure needs at least one particle");
    for (const Vec2& p : particles_) {
      if (!is_finite(p)) throw std::invalid_argument("empirical measure has a non-finite particle");
    }
  }

  static EmpiricalMeasure dirac(const Vec2& at) { return EmpiricalMeasure({at}); }

  const std::vector<Vec2>& particles() const { return particles_; }
  std::size_t size() const { return particles_.size(); }

 private:
  std::vector<Vec2> particles_;
};

using MeasureHandle = std::variant<GaussianMeasure, EmpiricalMeasure>;

/// First and second moments, the only data any functional here depends on.
struct Moments {
  Vec2 mean = Vec2::Zero();
  SymMat2 second;  // ∫ x xᵀ dμ

  SymMat2 covariance() const { return second - SymMat2::outer(mean); }
};

inline Vec2 mean_vec(const MeasureHandle& mu) {
  if (const auto* g = std::get_if<GaussianMeasure>(&mu)) return g->mean;
  const auto& e = std::get<EmpiricalMeasure>(mu);
  Vec2 sum = Vec2::Zero();
  for (const Vec2& p : e.particles()) sum += p;
  return sum / static_cast<double>(e.size());
}

inline SymMat2 second_moment(const MeasureHandle& mu) {
  if (const auto* g = std::get_if<GaussianMeasure>(&mu)) return g->cov + SymMat2::outer(g->mean);
  const auto& e = std::get<EmpiricalMeasure>(mu);
  SymMat2 sum;
  for (const Vec2& p : e.particles()) sum += SymMat2::outer(p);
  return sum * (1.0 / static_cast<double>(e.size()));
}

inline Moments moments(const MeasureHandle& mu) { return {mean_vec(mu), second_moment(mu)}; }

/// [μ]_Q = ∫ xᵀQx μ(dx).
inline double quad_moment(const MeasureHandle& mu, const SymMat2& q) {
  if (const auto* g = std::get_if<GaussianMeasure>(&mu)) return trace_product(q, g->cov) + q.quad(g->mean);
  const auto& e = std::get<EmpiricalMeasure>(mu);
  double sum = 0.0;
  for (const Vec2& p : e.particles()) sum += q.quad(p);
  return sum / static_cast<double>(e.size());
}

/// [μ]_q = ∫ xᵀq μ(dx).
inline double lin_moment(const MeasureHandle& mu, const Vec2& q) { return mean_vec(mu).dot(q); }

/// Closed-form 2-Wasserstein distance between Gaussians. For 2x2 PSD M,
/// Tr √M = √(Tr M + 2√det M); with M = Σ₂^{1/2} Σ₁ Σ₂^{1/2} this needs only
/// Tr(Σ₁Σ₂) and det Σ₁ det Σ₂, which keeps the result exactly symmetric.
inline double w2_gaussian(const GaussianMeasure& mu, const GaussianMeasure& nu) {
  const double det = std::max(0.0, mu.cov.det()) * std::max(0.0, nu.cov.det());
  const double tr = std::max(0.0, trace_product(mu.cov, nu.cov));
  const double root_trace = std::sqrt(tr + 2.0 * std::sqrt(det));
  const double bures = mu.cov.trace() + nu.cov.trace() - 2.0 * root_trace;
  const double d2 = (mu.mean - nu.mean).squaredNorm() + std::max(0.0, bures);
  return std::sqrt(d2);
}

/// Moment-matched Gaussian: sample mean and unbiased sample covariance of the
/// trailing ceil(tail_fraction * N) particles.
inline GaussianMeasure gaussian_from_empirical(const EmpiricalMeasure& mu, double tail_fraction = 1.0) {
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) throw std::invalid_argument("tail_fraction must be in (0, 1]");
  const auto& ps = mu.particles();
  const auto used = static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(ps.size())));
  if (used < 2) throw std::invalid_argument("covariance needs at least two particles");
  const std::size_t first = ps.size() - used;

  Vec2 mean = Vec2::Zero();
  for (std::size_t i = first; i < ps.size(); ++i) mean += ps[i];
  mean /= static_cast<double>(used);
  SymMat2 cov;
  for (std::size_t i = first; i < ps.size(); ++i) cov += SymMat2::outer(ps[i] - mean);
  cov *= 1.0 / static_cast<double>(used - 1);
  return {mean, cov};
}

}  // namespace mvgame
