#pragma once

// Closed-form 2x2 linear algebra used throughout the solver and simulator.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>

namespace mvgame {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Eigenvalues below this magnitude are treated as zero when taking roots.
inline constexpr double kPsdClamp = 1e-12;

inline Vec2 unit(int i) { return i == 0 ? Vec2(1.0, 0.0) : Vec2(0.0, 1.0); }

/// Symmetric 2x2 matrix stored as its three independent entries.
struct SymMat2 {
  double xx = 0.0;
  double yy = 0.0;
  double xy = 0.0;

  static SymMat2 identity() { return {1.0, 1.0, 0.0}; }
  static SymMat2 diag(double a, double b) { return {a, b, 0.0}; }
  static SymMat2 zero() { return {}; }

  /// Rank-one a aᵀ.
  static SymMat2 outer(const Vec2& a) { return {a.x() * a.x(), a.y() * a.y(), a.x() * a.y()}; }

  /// Symmetrized outer product (a bᵀ + b aᵀ)/2.
  static SymMat2 sym_outer(const Vec2& a, const Vec2& b) {
    return {a.x() * b.x(), a.y() * b.y(), 0.5 * (a.x() * b.y() + a.y() * b.x())};
  }

  Mat2 matrix() const {
    Mat2 m;
    m << xx, xy, xy, yy;
    return m;
  }

  double trace() const { return xx + yy; }
  double det() const { return xx * yy - xy * xy; }
  double quad(const Vec2& v) const {
    return xx * v.x() * v.x() + 2.0 * xy * v.x() * v.y() + yy * v.y() * v.y();
  }
  Vec2 operator*(const Vec2& v) const { return {xx * v.x() + xy * v.y(), xy * v.x() + yy * v.y()}; }

  bool is_finite() const { return std::isfinite(xx) && std::isfinite(yy) && std::isfinite(xy); }

  SymMat2& operator+=(const SymMat2& o) {
    xx += o.xx;
    yy += o.yy;
    xy += o.xy;
    return *this;
  }
  SymMat2& operator-=(const SymMat2& o) {
    xx -= o.xx;
    yy -= o.yy;
    xy -= o.xy;
    return *this;
  }
  SymMat2& operator*=(double s) {
    xx *= s;
    yy *= s;
    xy *= s;
    return *this;
  }
  friend SymMat2 operator+(SymMat2 a, const SymMat2& b) { return a += b; }
  friend SymMat2 operator-(SymMat2 a, const SymMat2& b) { return a -= b; }
  friend SymMat2 operator*(double s, SymMat2 a) { return a *= s; }
  friend SymMat2 operator*(SymMat2 a, double s) { return a *= s; }
  friend bool operator==(const SymMat2&, const SymMat2&) = default;
};

/// (A + Aᵀ)/2.
inline SymMat2 symmetrize(const Mat2& a) { return {a(0, 0), a(1, 1), 0.5 * (a(0, 1) + a(1, 0))}; }

/// Tr(A B) for symmetric A, B.
inline double trace_product(const SymMat2& a, const SymMat2& b) {
  return a.xx * b.xx + a.yy * b.yy + 2.0 * a.xy * b.xy;
}

/// Tr(M S) for a general M and symmetric S.
inline double trace_product(const Mat2& m, const SymMat2& s) {
  return m(0, 0) * s.xx + m(1, 1) * s.yy + (m(0, 1) + m(1, 0)) * s.xy;
}

struct SymEigen {
  double lo = 0.0;
  double hi = 0.0;
  Vec2 v_lo = Vec2::UnitX();
  Vec2 v_hi = Vec2::UnitY();
};

/// Eigen-decomposition from the trace/discriminant formulas.
inline SymEigen eig(const SymMat2& s) {
  const double half_tr = 0.5 * (s.xx + s.yy);
  const double half_diff = 0.5 * (s.xx - s.yy);
  const double rad = std::hypot(half_diff, s.xy);
  SymEigen e;
  e.lo = half_tr - rad;
  e.hi = half_tr + rad;
  if (rad == 0.0) return e;
  // Eigenvector of the larger eigenvalue at angle theta with tan(2 theta) = 2 xy / (xx - yy).
  const double theta = 0.5 * std::atan2(s.xy, half_diff);
  e.v_hi = Vec2(std::cos(theta), std::sin(theta));
  e.v_lo = Vec2(-std::sin(theta), std::cos(theta));
  return e;
}

inline double lambda_min(const SymMat2& s) { return eig(s).lo; }

/// Principal square root of a PSD matrix; eigenvalues under kPsdClamp are set to zero.
inline SymMat2 sqrt_psd(const SymMat2& s) {
  const SymEigen e = eig(s);
  const double lo = e.lo < kPsdClamp ? 0.0 : std::sqrt(e.lo);
  const double hi = e.hi < kPsdClamp ? 0.0 : std::sqrt(e.hi);
  return lo * SymMat2::outer(e.v_lo) + hi * SymMat2::outer(e.v_hi);
}

/// Clamp tiny negative eigenvalues of a near-PSD matrix to zero. Throws if clearly indefinite.
inline SymMat2 clamp_psd(const SymMat2& s) {
  const SymEigen e = eig(s);
  if (e.lo < -kPsdClamp) throw std::invalid_argument("covariance is not positive semidefinite");
  if (e.lo >= 0.0) return s;
  return std::max(e.hi, 0.0) * SymMat2::outer(e.v_hi);
}

/// Spectral norm, the square root of the largest eigenvalue of AᵀA.
inline double op_norm(const Mat2& a) {
  const Mat2 ata = a.transpose() * a;
  return std::sqrt(std::max(0.0, eig(symmetrize(ata)).hi));
}

inline std::array<std::complex<double>, 2> eigenvalues(const Mat2& a) {
  const double half_tr = 0.5 * a.trace();
  const std::complex<double> disc = std::sqrt(std::complex<double>(half_tr * half_tr - a.determinant()));
  return {half_tr - disc, half_tr + disc};
}

/// Solves A X + X Aᵀ = C for symmetric X.
inline SymMat2 solve_lyapunov(const Mat2& a, const SymMat2& c) {
  // Unknowns (xx, yy, xy); equations for entries (0,0), (1,1), (0,1).
  Eigen::Matrix3d m;
  m << 2.0 * a(0, 0), 0.0, 2.0 * a(0, 1),
       0.0, 2.0 * a(1, 1), 2.0 * a(1, 0),
       a(1, 0), a(0, 1), a(0, 0) + a(1, 1);
  const Eigen::FullPivLU<Eigen::Matrix3d> lu(m);
  if (!lu.isInvertible()) throw std::domain_error("Lyapunov equation is singular");
  const Eigen::Vector3d x = lu.solve(Eigen::Vector3d(c.xx, c.yy, c.xy));
  return {x(0), x(1), x(2)};
}

/// Matrix exponential of a 2x2 matrix via the traceless decomposition A = sI + B, B² = dI.
inline Mat2 expm(const Mat2& a) {
  const double s = 0.5 * a.trace();
  const Mat2 b = a - s * Mat2::Identity();
  const double d = -b.determinant();
  double c0 = 0.0;
  double c1 = 0.0;
  if (std::abs(d) < 1e-12) {
    c0 = 1.0 + 0.5 * d;
    c1 = 1.0 + d / 6.0;
  } else if (d > 0.0) {
    const double w = std::sqrt(d);
    c0 = std::cosh(w);
    c1 = std::sinh(w) / w;
  } else {
    const double w = std::sqrt(-d);
    c0 = std::cos(w);
    c1 = std::sin(w) / w;
  }
  return std::exp(s) * (c0 * Mat2::Identity() + c1 * b);
}

inline bool is_finite(const Vec2& v) { return std::isfinite(v.x()) && std::isfinite(v.y()); }

}  // namespace mvgame
