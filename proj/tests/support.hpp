#pragma once

#include "mvgame/linalg.hpp"
#include "mvgame/measures.hpp"
#include "mvgame/mvcalculus.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace testing_support {

using namespace mvgame;

class Rand {
 public:
  explicit Rand(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
  Vec2 vec(double lo, double hi) { return {uniform(lo, hi), uniform(lo, hi)}; }
  Vec2 normal_vec() { return {normal(), normal()}; }

  SymMat2 sym(double lo, double hi) { return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)}; }

  /// PSD matrix with eigenvalues in [lo, hi] and random orientation.
  SymMat2 spd(double lo, double hi) {
    const double a = uniform(0.0, std::numbers::pi);
    const Vec2 u(std::cos(a), std::sin(a));
    const Vec2 v(-u(1), u(0));
    return uniform(lo, hi) * SymMat2::outer(u) + uniform(lo, hi) * SymMat2::outer(v);
  }

  GaussianMeasure gaussian() { return {vec(-2.0, 2.0), spd(0.1, 3.0)}; }

  EmpiricalMeasure cloud(std::size_t n, double scale = 2.0) {
    std::vector<Vec2> ps(n);
    for (auto& p : ps) p = vec(-scale, scale);
    return EmpiricalMeasure(ps);
  }

  PolyValue poly() { return {sym(-2.0, 2.0), sym(-2.0, 2.0), vec(-2.0, 2.0)}; }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline double rel_err(double got, double want, double floor = 1.0) {
  return std::abs(got - want) / std::max(floor, std::abs(want));
}

}  // namespace testing_support
