#pragma once

// Algebraic Riccati systems for the two-player LQ game, branch selection and
// the equilibrium objects built from a solution.
//
// Residual layout (16 entries):
//   [eq1(11,22,12), eq2(11,22,12), eq3(11,22,12), eq4(11,22,12), eq5(1,2), eq6(1,2)]
// eq1/eq2 are the quadratic equations for Q1/Q2, eq3/eq4 those for R1/R2 and
// eq5/eq6 the row-vector equations for q1/q2.

#include "mvgame/errors.hpp"
#include "mvgame/hamiltonian.hpp"
#include "mvgame/linalg.hpp"
#include "mvgame/measures.hpp"
#include "mvgame/mvcalculus.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mvgame {

struct BranchSpec {
  int sign1 = 1;
  int sign2 = 1;

  static BranchSpec positive() { return {1, 1}; }
  static std::array<BranchSpec, 4> all() { return {{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}}; }

  bool is_positive() const { return sign1 > 0 && sign2 > 0; }
  std::string str() const { return std::string(sign1 > 0 ? "+" : "-") + (sign2 > 0 ? "+" : "-"); }

  /// Parses "++", "+-", "-+" or "--".
  static std::optional<BranchSpec> parse(const std::string& s) {
    if (s.size() != 2) return std::nullopt;
    auto sign = [](char c) -> int { return c == '+' ? 1 : c == '-' ? -1 : 0; };
    const int a = sign(s[0]);
    const int b = sign(s[1]);
    if (a == 0 || b == 0) return std::nullopt;
    return BranchSpec{a, b};
  }

  friend bool operator==(const BranchSpec&, const BranchSpec&) = default;
};

struct RiccatiSolution {
  SymMat2 Q1, Q2, R1, R2;
  Vec2 q1 = Vec2::Zero();
  Vec2 q2 = Vec2::Zero();
  double c1 = 0.0;
  double c2 = 0.0;
  BranchSpec branch;
  double residual_norm = 0.0;

  PolyValue value(Player i) const {
    return i == Player::One ? PolyValue{Q1, R1, q1} : PolyValue{Q2, R2, q2};
  }
};

using Residual16 = std::array<double, 16>;

struct GainSet {
  Mat2 Qg = Mat2::Zero();
  Mat2 Rg = Mat2::Zero();
  Vec2 qg = Vec2::Zero();
};

struct StabilityRecord {
  double lambda_min = 0.0;  // λ_min((Qg + Qgᵀ)/2)
  double rg_norm = 0.0;     // operator norm of Rg
  double eps_star = 0.0;
  double margin = 0.0;
  bool holds = false;
};

struct MeanMatrixRecord {
  Mat2 M = Mat2::Zero();
  std::array<double, 2> eig_real_parts{};
  bool stable = false;
};

/// c1 = Tr Q1 − (e1·q1)²/(4r1) − (e2·q1)(e2·q2)/(2r2), and symmetrically.
inline std::array<double, 2> ergodic_constants(const RiccatiSolution& s, double r1, double r2) {
  return {s.Q1.trace() - s.q1(0) * s.q1(0) / (4.0 * r1) - s.q1(1) * s.q2(1) / (2.0 * r2),
          s.Q2.trace() - s.q2(1) * s.q2(1) / (4.0 * r2) - s.q2(0) * s.q1(0) / (2.0 * r1)};
}

namespace detail {

inline SymMat2 rank_one(const Vec2& a, const Vec2& b) { return SymMat2::sym_outer(a, b); }

inline std::array<double, 3> entries(const SymMat2& s) { return {s.xx, s.yy, s.xy}; }

inline Eigen::Matrix<double, 16, 1> pack(const RiccatiSolution& s) {
  Eigen::Matrix<double, 16, 1> u;
  u << s.Q1.xx, s.Q1.yy, s.Q1.xy, s.Q2.xx, s.Q2.yy, s.Q2.xy, s.R1.xx, s.R1.yy, s.R1.xy, s.R2.xx, s.R2.yy,
      s.R2.xy, s.q1(0), s.q1(1), s.q2(0), s.q2(1);
  return u;
}

inline RiccatiSolution unpack(const Eigen::Matrix<double, 16, 1>& u) {
  RiccatiSolution s;
  s.Q1 = {u(0), u(1), u(2)};
  s.Q2 = {u(3), u(4), u(5)};
  s.R1 = {u(6), u(7), u(8)};
  s.R2 = {u(9), u(10), u(11)};
  s.q1 = Vec2(u(12), u(13));
  s.q2 = Vec2(u(14), u(15));
  return s;
}

}  // namespace detail

/// EX1 parameters are treated as the η = 0 case of the system.
inline Residual16 ex2_residual(const RiccatiSolution& s, const CostParams& p) {
  using detail::rank_one;
  const double r1 = p.r1;
  const double r2 = p.r2;
  const bool ex2 = p.model == CostModel::Ex2Eta;
  const Vec2 eta1 = ex2 ? p.eta1 : Vec2::Zero();
  const Vec2 eta2 = ex2 ? p.eta2 : Vec2::Zero();
  const Vec2 e1 = unit(0);
  const Vec2 e2 = unit(1);

  const Vec2 Q1e1 = s.Q1 * e1, Q1e2 = s.Q1 * e2, Q2e1 = s.Q2 * e1, Q2e2 = s.Q2 * e2;
  const Vec2 R1e1 = s.R1 * e1, R1e2 = s.R1 * e2, R2e1 = s.R2 * e1, R2e2 = s.R2 * e2;

  const SymMat2 eq1 = SymMat2::identity() - (1.0 / r1) * SymMat2::outer(Q1e1) - (2.0 / r2) * rank_one(Q1e2, Q2e2);
  const SymMat2 eq2 = SymMat2::identity() - (1.0 / r2) * SymMat2::outer(Q2e2) - (2.0 / r1) * rank_one(Q2e1, Q1e1);
  const SymMat2 eq3 = SymMat2::outer(eta1) - (2.0 / r1) * rank_one(Q1e1, R1e1) - (1.0 / r1) * SymMat2::outer(R1e1) -
                      (2.0 / r2) * rank_one(Q1e2, R2e2) - (2.0 / r2) * rank_one(Q2e2, R1e2) -
                      (2.0 / r2) * rank_one(R1e2, R2e2);
  const SymMat2 eq4 = SymMat2::outer(eta2) - (2.0 / r2) * rank_one(Q2e2, R2e2) - (1.0 / r2) * SymMat2::outer(R2e2) -
                      (2.0 / r1) * rank_one(Q2e1, R1e1) - (2.0 / r1) * rank_one(Q1e1, R2e1) -
                      (2.0 / r1) * rank_one(R1e1, R2e1);

  // Row vectors qᵀ e_k e_kᵀ (Q + R), written as (q_k) times row k of Q + R.
  const SymMat2 S1 = s.Q1 + s.R1;
  const SymMat2 S2 = s.Q2 + s.R2;
  const Vec2 eq5 = -(s.q1(0) / r1) * (S1 * e1) - (s.q2(1) / r2) * (S1 * e2) - (s.q1(1) / r2) * (S2 * e2);
  const Vec2 eq6 = -(s.q2(1) / r2) * (S2 * e2) - (s.q1(0) / r1) * (S2 * e1) - (s.q2(0) / r1) * (S1 * e1);

  Residual16 out{};
  std::size_t k = 0;
  for (const SymMat2& e : {eq1, eq2, eq3, eq4})
    for (double v : detail::entries(e)) out[k++] = v;
  out[k++] = eq5(0);
  out[k++] = eq5(1);
  out[k++] = eq6(0);
  out[k++] = eq6(1);
  return out;
}

inline double inf_norm(const Residual16& r) {
  double m = 0.0;
  for (double v : r) m = std::max(m, std::abs(v));
  return m;
}

/// Closed-form solutions at η = 0; sign1 flips the first diagonal entries of
/// Q1 and Q2 together and sign2 the second ones.
inline RiccatiSolution solve_ex1(double r1, double r2, BranchSpec branch) {
  if (!(r1 > 0.0) || !(r2 > 0.0)) throw std::invalid_argument("solve_ex1: r1, r2 must be positive");
  const double s1 = branch.sign1 * std::sqrt(r1);
  const double s2 = branch.sign2 * std::sqrt(r2);
  RiccatiSolution s;
  s.Q1 = SymMat2::diag(s1, 0.5 * s2);
  s.Q2 = SymMat2::diag(0.5 * s1, s2);
  s.branch = branch;
  const auto c = ergodic_constants(s, r1, r2);
  s.c1 = c[0];
  s.c2 = c[1];
  s.residual_norm = inf_norm(ex2_residual(s, CostParams::ex1(r1, r2, 0.0)));
  return s;
}

/// Closed form for η₁ = (η₁₁, 0), η₂ = (0, η₂₂): R1 = diag(a1, b1), R2 = diag(a2, b2) with
///   a1 = √r1(−1 ± √(1+η₁₁²)),  a2 = −a1 / (2(1 + a1/√r1)),
///   b2 = √r2(−1 ± √(1+η₂₂²)),  b1 = −b2 / (2(1 + b2/√r2)).
inline RiccatiSolution solve_ex2_diagonal(const CostParams& p, BranchSpec branch) {
  if (p.model != CostModel::Ex2Eta) throw std::invalid_argument("solve_ex2_diagonal: EX2 parameters required");
  const double h11 = p.eta1(0);
  const double h22 = p.eta2(1);
  if (p.eta1(1) != 0.0 || p.eta2(0) != 0.0 || h11 == 0.0 || h22 == 0.0)
    throw std::invalid_argument("solve_ex2_diagonal: needs eta1 = (h11, 0), eta2 = (0, h22) with h11, h22 != 0");
  const double sr1 = std::sqrt(p.r1);
  const double sr2 = std::sqrt(p.r2);
  const double a1 = sr1 * (-1.0 + branch.sign1 * std::sqrt(1.0 + h11 * h11));
  const double b2 = sr2 * (-1.0 + branch.sign2 * std::sqrt(1.0 + h22 * h22));
  const double den_a = 1.0 + a1 / sr1;
  const double den_b = 1.0 + b2 / sr2;
  if (den_a == 0.0 || den_b == 0.0) throw std::domain_error("solve_ex2_diagonal: degenerate branch denominator");

  RiccatiSolution s;
  s.Q1 = SymMat2::diag(sr1, 0.5 * sr2);
  s.Q2 = SymMat2::diag(0.5 * sr1, sr2);
  s.R1 = SymMat2::diag(a1, -b2 / (2.0 * den_b));
  s.R2 = SymMat2::diag(-a1 / (2.0 * den_a), b2);
  s.branch = branch;
  const auto c = ergodic_constants(s, p.r1, p.r2);
  s.c1 = c[0];
  s.c2 = c[1];
  s.residual_norm = inf_norm(ex2_residual(s, p));
  return s;
}

namespace detail {

using Vec16 = Eigen::Matrix<double, 16, 1>;

inline Vec16 residual_vec(const Vec16& u, const CostParams& p) {
  const Residual16 r = ex2_residual(unpack(u), p);
  return Eigen::Map<const Vec16>(r.data());
}

inline RiccatiSolution newton(const CostParams& p, const RiccatiSolution& init, double tol, int max_iter) {
  constexpr double kFdStep = 1e-7;
  constexpr int kMaxHalvings = 30;

  Vec16 u = pack(init);
  Vec16 f = residual_vec(u, p);
  double norm = f.lpNorm<Eigen::Infinity>();
  for (int iter = 0; norm >= tol; ++iter) {
    if (iter >= max_iter) {
      std::ostringstream msg;
      msg << "Newton did not converge in " << max_iter << " iterations (residual " << norm << ")";
      throw NoConvergence(msg.str(), norm);
    }
    Eigen::Matrix<double, 16, 16> jac;
    for (int k = 0; k < 16; ++k) {
      Vec16 up = u, dn = u;
      up(k) += kFdStep;
      dn(k) -= kFdStep;
      jac.col(k) = (residual_vec(up, p) - residual_vec(dn, p)) / (2.0 * kFdStep);
    }
    const Eigen::FullPivLU<Eigen::Matrix<double, 16, 16>> lu(jac);
    if (lu.rank() < 16)
      throw SingularJacobian("Riccati Jacobian is singular; try another initial guess or branch");
    const Vec16 step = lu.solve(-f);

    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= kMaxHalvings; ++h, t *= 0.5) {
      const Vec16 trial = u + t * step;
      const Vec16 ft = residual_vec(trial, p);
      const double nt = ft.lpNorm<Eigen::Infinity>();
      if (std::isfinite(nt) && nt < norm) {
        u = trial;
        f = ft;
        norm = nt;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      std::ostringstream msg;
      msg << "Newton line search stalled (residual " << norm << ")";
      throw NoConvergence(msg.str(), norm);
    }
  }
  RiccatiSolution s = unpack(u);
  s.branch = init.branch;
  return s;
}

}  // namespace detail

/// Damped Newton on ex2_residual. Without init, starts from the decoupled
/// positive branch and falls back to a 5-step continuation in η if that fails.
inline RiccatiSolution solve_ex2_newton(const CostParams& p, std::optional<RiccatiSolution> init = std::nullopt,
                                        double tol = 1e-10, int max_iter = 50) {
  if (p.model != CostModel::Ex2Eta) throw std::invalid_argument("solve_ex2_newton: EX2 parameters required");
  if (!(tol > 0.0)) throw std::invalid_argument("solve_ex2_newton: tol must be positive");
  p.validate();

  RiccatiSolution s;
  if (init) {
    s = detail::newton(p, *init, tol, max_iter);
  } else {
    const RiccatiSolution start = solve_ex1(p.r1, p.r2, BranchSpec::positive());
    try {
      s = detail::newton(p, start, tol, max_iter);
    } catch (const NoConvergence&) {
      constexpr int kLadder = 5;
      s = start;
      for (int k = 1; k <= kLadder; ++k) {
        const double w = static_cast<double>(k) / kLadder;
        s = detail::newton(CostParams::ex2(p.r1, p.r2, w * p.eta1, w * p.eta2), s, tol, max_iter);
      }
    }
  }
  const auto c = ergodic_constants(s, p.r1, p.r2);
  s.c1 = c[0];
  s.c2 = c[1];
  s.residual_norm = inf_norm(ex2_residual(s, p));
  return s;
}

/// Row i of Qg is e_iᵀQ_i/r_i, row i of Rg is e_iᵀR_i/r_i, qg_i = e_iᵀq_i/(2r_i).
inline GainSet gain_matrices(const RiccatiSolution& s, double r1, double r2) {
  GainSet g;
  g.Qg.row(0) = s.Q1.matrix().row(0) / r1;
  g.Qg.row(1) = s.Q2.matrix().row(1) / r2;
  g.Rg.row(0) = s.R1.matrix().row(0) / r1;
  g.Rg.row(1) = s.R2.matrix().row(1) / r2;
  g.qg = Vec2(s.q1(0) / (2.0 * r1), s.q2(1) / (2.0 * r2));
  return g;
}

/// margin = max_ε {λ_min(Q̄) − ε/2 − |Rg|²/ε}, attained at ε* = √2|Rg|.
inline StabilityRecord stability_margin(const GainSet& g) {
  StabilityRecord rec;
  rec.lambda_min = lambda_min(symmetrize(g.Qg));
  rec.rg_norm = op_norm(g.Rg);
  if (rec.rg_norm == 0.0) {
    rec.eps_star = 0.0;
    rec.margin = rec.lambda_min;
  } else {
    rec.eps_star = std::sqrt(2.0) * rec.rg_norm;
    rec.margin = rec.lambda_min - rec.eps_star / 2.0 - rec.rg_norm * rec.rg_norm / rec.eps_star;
  }
  rec.holds = rec.margin > 0.0;
  return rec;
}

inline StabilityRecord stability_margin(const RiccatiSolution& s, double r1, double r2) {
  return stability_margin(gain_matrices(s, r1, r2));
}

inline MeanMatrixRecord mean_dynamics_matrix(const GainSet& g) {
  MeanMatrixRecord rec;
  rec.M = g.Qg + g.Rg;
  const auto ev = eigenvalues(rec.M);
  rec.eig_real_parts = {ev[0].real(), ev[1].real()};
  rec.stable = ev[0].real() > 0.0 && ev[1].real() > 0.0;
  return rec;
}

inline MeanMatrixRecord mean_dynamics_matrix(const RiccatiSolution& s, double r1, double r2) {
  return mean_dynamics_matrix(gain_matrices(s, r1, r2));
}

inline bool is_ergodic(const RiccatiSolution& s, double r1, double r2) {
  const GainSet g = gain_matrices(s, r1, r2);
  return lambda_min(symmetrize(g.Qg)) > 0.0 && mean_dynamics_matrix(g).stable;
}

inline std::vector<RiccatiSolution> ergodic_branch_filter(const std::vector<RiccatiSolution>& candidates, double r1,
                                                          double r2) {
  std::vector<RiccatiSolution> kept;
  for (const RiccatiSolution& s : candidates) {
    if (is_ergodic(s, r1, r2)) kept.push_back(s);
  }
  if (kept.empty()) throw EmptyResult("no candidate branch yields an ergodic closed loop");
  return kept;
}

/// Stationary law of dX = −(Qg X + Rg m + qg) dt + dW.
inline GaussianMeasure invariant_gaussian(const GainSet& g) {
  const Mat2 m = g.Qg + g.Rg;
  const Eigen::FullPivLU<Mat2> lu(m);
  if (!lu.isInvertible()) throw SingularMeanMatrix("Qg + Rg is singular");
  return {-lu.solve(g.qg), solve_lyapunov(g.Qg, SymMat2::identity())};
}

inline GaussianMeasure invariant_gaussian(const RiccatiSolution& s, double r1, double r2) {
  return invariant_gaussian(gain_matrices(s, r1, r2));
}

/// (v₁(μ₀) − v₁(μ∞), v₂(μ₀) − v₂(μ∞)).
inline std::array<double, 2> value_function(const RiccatiSolution& s, double r1, double r2, const MeasureHandle& mu0) {
  const MeasureHandle inf = invariant_gaussian(s, r1, r2);
  const PolyValue v1 = s.value(Player::One);
  const PolyValue v2 = s.value(Player::Two);
  return {eval_value(v1, mu0) - eval_value(v1, inf), eval_value(v2, mu0) - eval_value(v2, inf)};
}

}  // namespace mvgame
