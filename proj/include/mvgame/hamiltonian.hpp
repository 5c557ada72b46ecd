#pragma once

// Running costs, Hamiltonians and the coupled Master-equation residual for the
// two linear-quadratic models. Dynamics are fixed to dX = a dt + dW (b = a,
// σ = I).
//
//   EX1_GAMMA:  ℓ_i(μ, x, a_i) = γ[μ]_I + (1−γ)|x|² + r_i a_i²
//   EX2_ETA:    ℓ_i(μ, x, a_i) = |x|² + r_i a_i² + ([μ]_{η_i})²

#include "mvgame/linalg.hpp"
#include "mvgame/measures.hpp"
#include "mvgame/mvcalculus.hpp"

#include <array>
#include <stdexcept>
#include <variant>

namespace mvgame {

enum class Player { One, Two };

inline int index(Player i) { return i == Player::One ? 0 : 1; }
inline Player other(Player i) { return i == Player::One ? Player::Two : Player::One; }
inline Vec2 unit(Player i) { return unit(index(i)); }

enum class CostModel { Ex1Gamma, Ex2Eta };

struct CostParams {
  CostModel model = CostModel::Ex2Eta;
  double gamma = 0.0;
  double r1 = 1.0;
  double r2 = 1.0;
  Vec2 eta1 = Vec2::Zero();
  Vec2 eta2 = Vec2::Zero();

  static CostParams ex1(double r1, double r2, double gamma) {
    CostParams p;
    p.model = CostModel::Ex1Gamma;
    p.r1 = r1;
    p.r2 = r2;
    p.gamma = gamma;
    p.validate();
    return p;
  }

  static CostParams ex2(double r1, double r2, const Vec2& eta1, const Vec2& eta2) {
    CostParams p;
    p.model = CostModel::Ex2Eta;
    p.r1 = r1;
    p.r2 = r2;
    p.eta1 = eta1;
    p.eta2 = eta2;
    p.validate();
    return p;
  }

  double r(Player i) const { return i == Player::One ? r1 : r2; }
  const Vec2& eta(Player i) const { return i == Player::One ? eta1 : eta2; }

  void validate() const {
    if (!(r1 > 0.0) || !(r2 > 0.0)) throw std::invalid_argument("control penalties r1, r2 must be positive");
    if (model == CostModel::Ex1Gamma && !(gamma >= 0.0 && gamma <= 1.0))
      throw std::invalid_argument("gamma must lie in [0, 1]");
    if (!is_finite(eta1) || !is_finite(eta2)) throw std::invalid_argument("eta must be finite");
  }
};

/// Control-free part F_i(μ, x) of the running cost.
inline double state_cost(Player i, const CostParams& p, const Moments& mom, const Vec2& x) {
  if (p.model == CostModel::Ex1Gamma) return p.gamma * mom.second.trace() + (1.0 - p.gamma) * x.squaredNorm();
  const double eta_mean = p.eta(i).dot(mom.mean);
  return x.squaredNorm() + eta_mean * eta_mean;
}

inline double running_cost(Player i, const CostParams& p, const Moments& mom, const Vec2& x, double a_i) {
  return state_cost(i, p, mom, x) + p.r(i) * a_i * a_i;
}

inline double running_cost(Player i, const CostParams& p, const MeasureHandle& mu, const Vec2& x, double a_i) {
  return running_cost(i, p, moments(mu), x, a_i);
}

/// ∫ F_i(μ, x) μ(dx).
inline double integrated_state_cost(Player i, const CostParams& p, const Moments& mom) {
  if (p.model == CostModel::Ex1Gamma) return mom.second.trace();
  const double eta_mean = p.eta(i).dot(mom.mean);
  return mom.second.trace() + eta_mean * eta_mean;
}

/// Particle average of running_cost given the cloud's moments and the mean of a_i².
inline double mean_running_cost(Player i, const CostParams& p, const Moments& mom, double mean_control_sq) {
  return integrated_state_cost(i, p, mom) + p.r(i) * mean_control_sq;
}

/// inf_a {p a + ℓ_i} = F_i(μ, x) − p²/(4 r_i).
inline double hamiltonian_reduced(Player i, const CostParams& p, const Moments& mom, const Vec2& x, double pval) {
  return state_cost(i, p, mom, x) - pval * pval / (4.0 * p.r(i));
}

inline double hamiltonian_reduced(Player i, const CostParams& p, const MeasureHandle& mu, const Vec2& x,
                                  double pval) {
  return hamiltonian_reduced(i, p, moments(mu), x, pval);
}

inline double argmin_control(Player i, const CostParams& p, double pval) { return -pval / (2.0 * p.r(i)); }

/// p·b(μ, x, a) + ½ Tr(M σσᵀ) + ℓ_i(μ, x, a_i) with b = a and σ = I.
inline double full_hamiltonian(Player i, const CostParams& p, const MeasureHandle& mu, const Vec2& x,
                               const Vec2& pvec, const SymMat2& qmat, const Vec2& a) {
  return pvec.dot(a) + 0.5 * qmat.trace() + running_cost(i, p, mu, x, a(index(i)));
}

namespace detail {

/// x ↦ w·x + b.
struct Affine {
  Vec2 w = Vec2::Zero();
  double b = 0.0;
};

/// ∫ (A x)(B x) μ(dx) from the first two moments.
inline double integrate_product(const Affine& a, const Affine& b, const Moments& mom) {
  return trace_product(SymMat2::sym_outer(a.w, b.w), mom.second) + a.b * b.w.dot(mom.mean) +
         b.b * a.w.dot(mom.mean) + a.b * b.b;
}

/// Coordinate k of D_x δv/δμ as an affine function of x.
inline Affine gradient_component(const PolyValue& v, const Vec2& mean, int k) {
  return {hess_x_flat(v) * unit(k), grad_x_flat(v, mean, Vec2::Zero())(k)};
}

inline double master_lhs_analytic(Player i, const PolyValue& own, const PolyValue& opp, const CostParams& p,
                                  const Moments& mom) {
  const Player j = other(i);
  const Affine own_dir = gradient_component(own, mom.mean, index(i));
  const Affine own_cross = gradient_component(own, mom.mean, index(j));
  Affine opp_control = gradient_component(opp, mom.mean, index(j));
  // Opponent feedback a_j = −(e_j · D_x δv_j/δμ)/(2 r_j) is affine as well.
  const double scale = argmin_control(j, p, 1.0);
  opp_control.w *= scale;
  opp_control.b *= scale;

  return integrated_state_cost(i, p, mom) - integrate_product(own_dir, own_dir, mom) / (4.0 * p.r(i)) +
         0.5 * hess_x_flat(own).trace() + integrate_product(own_cross, opp_control, mom);
}

inline double master_lhs_particles(Player i, const PolyValue& own, const PolyValue& opp, const CostParams& p,
                                   const EmpiricalMeasure& e, const Moments& mom) {
  const Player j = other(i);
  const double ito = 0.5 * hess_x_flat(own).trace();
  double sum = 0.0;
  for (const Vec2& x : e.particles()) {
    const Vec2 g_own = grad_x_flat(own, mom.mean, x);
    const Vec2 g_opp = grad_x_flat(opp, mom.mean, x);
    const double a_opp = argmin_control(j, p, g_opp(index(j)));
    sum += hamiltonian_reduced(i, p, mom, x, g_own(index(i))) + g_own(index(j)) * a_opp + ito;
  }
  return sum / static_cast<double>(e.size());
}

}  // namespace detail

/// Residuals (LHS₁ − c₁, LHS₂ − c₂) of the coupled Master equations at μ, with
/// each player's own control minimized pointwise and the opponent playing its
/// feedback derived from v_j.
inline std::array<double, 2> master_residual(const PolyValue& v1, const PolyValue& v2, double c1, double c2,
                                             const CostParams& p, const MeasureHandle& mu) {
  const Moments mom = moments(mu);
  if (const auto* e = std::get_if<EmpiricalMeasure>(&mu)) {
    return {detail::master_lhs_particles(Player::One, v1, v2, p, *e, mom) - c1,
            detail::master_lhs_particles(Player::Two, v2, v1, p, *e, mom) - c2};
  }
  return {detail::master_lhs_analytic(Player::One, v1, v2, p, mom) - c1,
          detail::master_lhs_analytic(Player::Two, v2, v1, p, mom) - c2};
}

}  // namespace mvgame
