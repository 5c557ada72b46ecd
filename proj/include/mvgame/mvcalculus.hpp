#pragma once

// Flat-derivative calculus for quadratic measure functionals
//
//   v(μ) = [μ]_Q + m(μ)ᵀ R m(μ) + [μ]_q,       m(μ) = ∫ x μ(dx).
//
// The flat derivative is normalized so that ∫ δv/δμ(μ, x) μ(dx) = 0, and its
// x-gradient is the Lions derivative.

#include "mvgame/linalg.hpp"
#include "mvgame/measures.hpp"

#include <functional>
#include <stdexcept>
#include <variant>

namespace mvgame {

struct PolyValue {
  SymMat2 Q;
  SymMat2 R;
  Vec2 q = Vec2::Zero();
};

/// v evaluated from the first two moments of a measure.
inline double eval_value(const PolyValue& v, const Moments& mom) {
  return trace_product(v.Q, mom.second) + v.R.quad(mom.mean) + v.q.dot(mom.mean);
}

inline double eval_value(const PolyValue& v, const MeasureHandle& mu) {
  const Vec2 m = mean_vec(mu);
  return quad_moment(mu, v.Q) + v.R.quad(m) + lin_moment(mu, v.q);
}

/// δv/δμ(μ, x) = xᵀQx + (2mᵀR + qᵀ)x − C with C chosen so the μ-integral vanishes.
inline double flat_derivative(const PolyValue& v, const Moments& mom, const Vec2& x) {
  const Vec2 slope = 2.0 * (v.R * mom.mean) + v.q;
  const double c = trace_product(v.Q, mom.second) + 2.0 * v.R.quad(mom.mean) + v.q.dot(mom.mean);
  return v.Q.quad(x) + slope.dot(x) - c;
}

inline double flat_derivative(const PolyValue& v, const MeasureHandle& mu, const Vec2& x) {
  return flat_derivative(v, moments(mu), x);
}

/// D_x δv/δμ(μ, x) = 2Qx + 2R m(μ) + q.
inline Vec2 grad_x_flat(const PolyValue& v, const Vec2& mean, const Vec2& x) {
  return 2.0 * (v.Q * x) + 2.0 * (v.R * mean) + v.q;
}

inline Vec2 grad_x_flat(const PolyValue& v, const MeasureHandle& mu, const Vec2& x) {
  return grad_x_flat(v, mean_vec(mu), x);
}

/// D_xx δv/δμ = 2Q, independent of (μ, x).
inline SymMat2 hess_x_flat(const PolyValue& v) { return 2.0 * v.Q; }

/// Difference quotient (v((1−h)μ + hδ_x) − v(μ))/h. The mixture is formed on
/// moments, which combine affinely, so there is no sampling noise.
inline double fd_flat_derivative(const PolyValue& v, const MeasureHandle& mu, const Vec2& x, double h) {
  if (!(h > 0.0 && h <= 0.5)) throw std::invalid_argument("fd_flat_derivative: h must lie in (0, 0.5]");
  const Moments base = moments(mu);
  Moments mix;
  mix.mean = (1.0 - h) * base.mean + h * x;
  mix.second = (1.0 - h) * base.second + h * SymMat2::outer(x);
  return (eval_value(v, mix) - eval_value(v, base)) / h;
}

using Drift = std::function<Vec2(const MeasureHandle&, const Vec2&)>;

/// Rate d/dt v(μ_t) for dX = b(μ, X) dt + σ dW:
///   ∫ [D_x δv/δμ · b + ½ Tr(D_xx δv/δμ σσᵀ)] dμ.
/// Empirical μ is integrated by particle average. For Gaussian μ the drift must
/// be affine in x; its coefficients are recovered by probing x = 0, e1, e2.
inline double chain_rule_rhs(const PolyValue& v, const MeasureHandle& mu, const Drift& drift,
                             const SymMat2& diffusion) {
  const SymMat2 sst = symmetrize(diffusion.matrix() * diffusion.matrix());
  const double ito = 0.5 * trace_product(hess_x_flat(v), sst);

  if (const auto* e = std::get_if<EmpiricalMeasure>(&mu)) {
    const Vec2 m = mean_vec(mu);
    double sum = 0.0;
    for (const Vec2& x : e->particles()) sum += grad_x_flat(v, m, x).dot(drift(mu, x));
    return sum / static_cast<double>(e->size()) + ito;
  }

  const auto& g = std::get<GaussianMeasure>(mu);
  const Vec2 b0 = drift(mu, Vec2::Zero());
  Mat2 slope;
  slope.col(0) = drift(mu, Vec2::UnitX()) - b0;
  slope.col(1) = drift(mu, Vec2::UnitY()) - b0;
  const SymMat2 second = g.cov + SymMat2::outer(g.mean);
  const Vec2 offset = 2.0 * (v.R * g.mean) + v.q;
  // E[(2QX + offset) · (b0 + B X)]
  const double quad = 2.0 * trace_product(Mat2(v.Q.matrix() * slope), second);
  const double lin = 2.0 * (v.Q * g.mean).dot(b0) + offset.dot(slope * g.mean);
  return quad + lin + offset.dot(b0) + ito;
}

}  // namespace mvgame
