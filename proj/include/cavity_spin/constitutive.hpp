#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "cavity_spin/errors.hpp"
#include "cavity_spin/linalg.hpp"

namespace cavity_spin {

namespace detail {
// pow with the integer exponents that dominate presets taken on a fast path.
inline double power(double x, double e) {
  if (e == 2.0) return x * x;
  if (e == 1.0) return x;
  if (e == 3.0) return x * x * x;
  if (e == 5.0) { const double x2 = x * x; return x2 * x2 * x; }
  return std::pow(x, e);
}

// s^g - 1 - g (s - 1), computed without cancellation of the leading terms.
// Non-negative for s >= 0 and g > 1.
inline double convex_gap(double s, double g) {
  const double d = s - 1.0;
  if (s == 0.0) return g - 1.0;
  return std::expm1(g * std::log1p(d)) - g * d;
}
}  // namespace detail

/// Isentropic pressure p = a rho^gamma.
struct PressureLaw {
  double a = 1.0;
  double gamma = 2.0;

  double pressure(double rho) const { return a * detail::power(rho, gamma); }
  double dpressure(double rho) const { return a * gamma * detail::power(rho, gamma - 1.0); }
  double sound_speed(double rho) const { return std::sqrt(dpressure(rho)); }

  /// gamma <= 3/2 lies outside the range where finite-energy weak solutions are known to exist.
  bool outside_weak_theory() const { return gamma <= 1.5; }

  void validate() const {
    if (!(a > 0.0) || !std::isfinite(a)) throw DomainError("pressure stiffness a must be positive");
    if (!(gamma > 1.0) || !std::isfinite(gamma))
      throw DomainError("adiabatic exponent gamma must exceed 1");
  }
};

struct ViscositySpec {
  double mu = 1.0;      ///< shear viscosity
  double lambda = 0.0;  ///< bulk coefficient

  void validate() const {
    if (!(mu > 0.0) || !std::isfinite(mu)) throw DomainError("shear viscosity mu must be positive");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
      throw DomainError("bulk coefficient lambda must be non-negative");
  }
};

/// Artificial density diffusion d and artificial pressure b rho^beta.
struct RegularizationSpec {
  double d = 0.0;
  double b = 0.0;
  double beta = 5.0;

  bool active() const { return d > 0.0 || b > 0.0; }

  void validate(const PressureLaw& law) const {
    if (!(d >= 0.0) || !std::isfinite(d)) throw DomainError("artificial viscosity d must be >= 0");
    if (!(b >= 0.0) || !std::isfinite(b)) throw DomainError("artificial pressure b must be >= 0");
    if (b > 0.0 && !(beta > std::max(4.0, law.gamma)))
      throw DomainError("artificial exponent beta must exceed max(4, gamma) when b > 0");
  }
};

/// Pressure including the artificial term: p_b = a rho^gamma + b rho^beta.
struct EffectivePressure {
  PressureLaw law;
  RegularizationSpec reg;

  double pressure(double rho) const {
    double p = law.pressure(rho);
    if (reg.b > 0.0) p += reg.b * detail::power(rho, reg.beta);
    return p;
  }
  double dpressure(double rho) const {
    double dp = law.dpressure(rho);
    if (reg.b > 0.0) dp += reg.b * reg.beta * detail::power(rho, reg.beta - 1.0);
    return dp;
  }
  double sound_speed(double rho) const { return std::sqrt(dpressure(rho)); }
};

inline void require_density(double rho, const char* what) {
  if (!(rho >= 0.0)) throw DomainError(std::string(what) + " must be a non-negative density");
}

inline double pressure(const PressureLaw& law, double rho) {
  require_density(rho, "pressure argument");
  return law.pressure(rho);
}

inline double dpressure(const PressureLaw& law, double rho) {
  require_density(rho, "pressure argument");
  return law.dpressure(rho);
}

inline double sound_speed(const PressureLaw& law, double rho) {
  require_density(rho, "sound speed argument");
  return law.sound_speed(rho);
}

/// Viscous stress mu (G + G^T) + (lambda - 2 mu / 3) tr(G) 1 for a velocity gradient G.
inline Mat3 stress(const Mat3& grad, const ViscositySpec& visc) {
  Mat3 s = visc.mu * (grad + transpose(grad));
  const double bulk = (visc.lambda - 2.0 * visc.mu / 3.0) * trace(grad);
  s(0, 0) += bulk;
  s(1, 1) += bulk;
  s(2, 2) += bulk;
  return s;
}

/// Helmholtz-type potential relative to a reference density:
/// a/(g-1) rho^g + a rbar^g - a g/(g-1) rbar^(g-1) rho.
inline double helmholtz(const PressureLaw& law, double rho_bar, double rho) {
  require_density(rho, "helmholtz density");
  require_density(rho_bar, "helmholtz reference density");
  const double g = law.gamma;
  if (rho_bar == 0.0) return law.a / (g - 1.0) * detail::power(rho, g);
  return law.a / (g - 1.0) * detail::power(rho_bar, g) * detail::convex_gap(rho / rho_bar, g);
}

/// Pressure-potential part of the relative entropy:
/// (p(rho) - p'(r)(rho - r) - p(r)) / (g - 1). Non-negative, zero only at rho == r.
inline double entropy_H(const PressureLaw& law, double rho, double r) {
  require_density(rho, "relative entropy density");
  if (!(r > 0.0)) throw DomainError("relative entropy reference density must be positive");
  const double g = law.gamma;
  return law.a / (g - 1.0) * detail::power(r, g) * detail::convex_gap(rho / r, g);
}

}  // namespace cavity_spin
