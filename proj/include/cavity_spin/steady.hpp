#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "cavity_spin/body.hpp"
#include "cavity_spin/constitutive.hpp"
#include "cavity_spin/eig3.hpp"
#include "cavity_spin/errors.hpp"
#include "cavity_spin/grid.hpp"
#include "cavity_spin/linalg.hpp"
#include "cavity_spin/parallel.hpp"
#include "cavity_spin/state.hpp"

namespace cavity_spin {

/// Rigid rotation u = omega x x + xi with density rho.
struct SteadyState {
  std::vector<double> rho;
  Vec3 omega;
  Vec3 xi;
  double c = 0.0;
  int axis_index = 0;
  int iterations = 0;
  std::vector<double> history;  ///< per-iteration change
};

namespace detail {
// (gamma - 1)/(2 a gamma) (|omega x x|^2 - 2 (omega x xi).x) at cell c.
inline double profile_potential(const Vec3& omega, const Vec3& xi, const PressureLaw& law, const Vec3& x) {
  const Vec3 wx = cross(omega, x);
  const double k = (law.gamma - 1.0) / (2.0 * law.a * law.gamma);
  return k * (dot(wx, wx) - 2.0 * dot(cross(omega, xi), x));
}
}  // namespace detail

/// rho^(gamma-1) = (gamma-1)/(2 a gamma) (|omega x x|^2 - 2 (omega x xi).x) + c at cell centers.
inline std::vector<double> steady_profile(const Vec3& omega, const Vec3& xi, double c, const PressureLaw& law,
                                          const CavityGrid& grid) {
  const double e = 1.0 / (law.gamma - 1.0);
  std::vector<double> rho(grid.cell_count());
  std::size_t worst = 0;
  double worst_val = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const double base = detail::profile_potential(omega, xi, law, grid.center(i)) + c;
    if (base < worst_val) {
      worst_val = base;
      worst = i;
    }
    rho[i] = base > 0.0 ? detail::power(base, e) : 0.0;
  }
  if (!(worst_val > 0.0))
    throw InfeasibleProfile("steady profile is non-positive at cell (" + std::to_string(grid.unravel(worst)[0]) +
                                ", " + std::to_string(grid.unravel(worst)[1]) + ", " +
                                std::to_string(grid.unravel(worst)[2]) + "): constant c too small or rotation too fast for this stiffness",
                            grid.unravel(worst), worst_val);
  return rho;
}

struct SteadyOptions {
  double tol = 1e-12;
  int max_iter = 500;
  double relaxation = 0.5;
  /// Orientation of the eigenvector: e.hint >= 0. Without a hint the largest
  /// component of e is made positive.
  std::optional<Vec3> hint;
  /// Starting density; uniform m_F/|C| when empty.
  std::vector<double> initial_rho;
};

namespace detail {

inline Vec3 oriented(Vec3 e, const std::optional<Vec3>& hint) {
  if (hint && dot(e, *hint) != 0.0) return dot(e, *hint) < 0.0 ? -e : e;
  int big = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(e[i]) > std::abs(e[big]) + 1e-14) big = i;
  return e[big] < 0.0 ? -e : e;
}

// Mass of the profile, fixed omega and xi, as a function of c.
struct ProfileMass {
  std::vector<double> pot;
  double vol, exponent;
  double operator()(double c) const {
    return pairwise_sum<double>(pot.size(), [&](std::size_t i) {
             const double b = pot[i] + c;
             return b > 0.0 ? power(b, exponent) : 0.0;
           }) *
           vol;
  }
};

// c such that the profile carries mass m_F.
inline double solve_profile_constant(const Vec3& omega, const Vec3& xi, const PressureLaw& law,
                                     const CavityGrid& grid, double m_F) {
  ProfileMass mass{std::vector<double>(grid.cell_count()), grid.cell_volume(), 1.0 / (law.gamma - 1.0)};
  double pmin = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 0; i < mass.pot.size(); ++i) {
    mass.pot[i] = profile_potential(omega, xi, law, grid.center(i));
    if (mass.pot[i] < pmin) {
      pmin = mass.pot[i];
      arg = i;
    }
  }
  double lo = -pmin;
  if (mass(lo) >= m_F)
    throw InfeasibleProfile("no positive steady profile carries the fluid mass: density would vanish at cell (" +
                                std::to_string(grid.unravel(arg)[0]) + ", " + std::to_string(grid.unravel(arg)[1]) +
                                ", " + std::to_string(grid.unravel(arg)[2]) + ")",
                            grid.unravel(arg), 0.0);
  const double rho_bar = m_F / grid.volume();
  double gap = std::max(power(rho_bar, law.gamma - 1.0), std::abs(lo) * 1e-3);
  double hi = lo + gap;
  while (mass(hi) < m_F) {
    lo = hi;
    gap *= 2.0;
    hi = lo + gap;
    if (!std::isfinite(hi)) throw InfeasibleProfile("profile constant bracket diverged", grid.unravel(arg), hi);
  }
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (mass(mid) < m_F ? lo : hi) = mid;
  }
  // the endpoint whose mass is closer to m_F
  return std::abs(mass(lo) - m_F) < std::abs(mass(hi) - m_F) ? lo : hi;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace detail

/// Damped fixed point for a steady rigid rotation about principal axis `axis_index`
/// of the total inertia, with |I omega| = M0 and fluid mass m_F.
inline SteadyState solve_steady(const BodySpec& body, const PressureLaw& law, double m_F, double M0, int axis_index,
                                const SteadyOptions& opt = {}) {
  const CavityGrid& grid = body.cavity;
  if (!(m_F > 0.0)) throw DomainError("fluid mass must be positive");
  if (!(M0 >= 0.0) || !std::isfinite(M0)) throw DomainError("angular momentum magnitude must be >= 0");
  if (!(opt.tol > 0.0)) throw DomainError("steady tolerance must be positive");
  if (axis_index < 0 || axis_index > 2) throw DomainError("axis_index must be 0, 1 or 2");
  if (!(opt.relaxation > 0.0 && opt.relaxation <= 1.0)) throw DomainError("relaxation must lie in (0, 1]");
  law.validate();

  const double rho_bar = m_F / grid.volume();
  const double m_S = body.mass + m_F;
  SteadyState out;
  out.axis_index = axis_index;
  if (M0 == 0.0) {
    out.rho.assign(grid.cell_count(), rho_bar);
    out.c = detail::power(rho_bar, law.gamma - 1.0);
    return out;
  }

  std::vector<double> rho = opt.initial_rho.empty() ? std::vector<double>(grid.cell_count(), rho_bar) : opt.initial_rho;
  if (rho.size() != grid.cell_count()) throw DomainError("initial density has the wrong size");
  double theta = opt.relaxation;
  double prev_change = std::numeric_limits<double>::infinity();
  Vec3 omega_prev, xi_prev;
  bool first = true;
  for (int it = 1; it <= opt.max_iter; ++it) {
    const Mat3 I = total_inertia(body, rho, m_S);
    const SymmetricEigen eig = eig3_sym(I);
    const Vec3 e = detail::oriented(eig.vector(axis_index), opt.hint);
    const Vec3 omega = (M0 / dot(e, I * e)) * e;
    const Vec3 xi = cross(omega, first_moment(rho, grid)) * (-1.0 / m_S);
    const double c = detail::solve_profile_constant(omega, xi, law, grid, m_F);
    std::vector<double> next = steady_profile(omega, xi, c, law, grid);

    const double w_scale = norm(omega);
    double change = detail::max_abs_diff(next, rho) / rho_bar;
    if (!first) change += norm(omega - omega_prev) / w_scale + norm(xi - xi_prev) / std::max(w_scale * grid.volume(), norm(xi));
    out.history.push_back(change);
    out.rho = next;
    out.omega = omega;
    out.xi = xi;
    out.c = c;
    out.iterations = it;
    if (!first && change <= opt.tol) return out;
    // a fixed point reached to round-off cannot improve further
    if (!first && change == prev_change && change <= 1e3 * opt.tol) return out;
    if (change > prev_change) theta = std::max(0.5 * theta, 1.0 / 1024.0);
    prev_change = change;
    for (std::size_t i = 0; i < rho.size(); ++i) rho[i] = (1.0 - theta) * rho[i] + theta * next[i];
    omega_prev = omega;
    xi_prev = xi;
    first = false;
  }
  throw ConvergenceError("steady solver did not converge in " + std::to_string(opt.max_iter) + " iterations",
                         out.history);
}

/// |omega x (I omega)| / (|omega| |I omega|); 0 when omega = 0.
inline double alignment_defect(const Mat3& inertia, const Vec3& omega) {
  const Vec3 Iw = inertia * omega;
  const double den = norm(omega) * norm(Iw);
  if (den == 0.0) return 0.0;
  return norm(cross(omega, Iw)) / den;
}

struct SteadyResidual {
  // absolute
  double profile = 0.0;    ///< max |rho^(g-1) - potential - c|
  double alignment = 0.0;  ///< |omega x I omega| / (|omega| |I omega|)
  double momentum = 0.0;   ///< |m_S xi + omega x g|
  double mass = 0.0;       ///< |sum rho vol - m_F|
  double angular = 0.0;    ///< ||I omega| - M0|
  // scaled by the natural size of each term
  double profile_scaled = 0.0;
  double momentum_scaled = 0.0;
  double mass_scaled = 0.0;
  double angular_scaled = 0.0;
  /// Weak momentum balance against smooth test fields vanishing on the wall,
  /// relative to the size of the pressure term. Discretization-limited.
  double weak_momentum = 0.0;

  double max_scaled() const {
    return std::max({profile_scaled, alignment, momentum_scaled, mass_scaled, angular_scaled});
  }
};

inline SteadyResidual steady_residual(const SteadyState& s, const BodySpec& body, const PressureLaw& law, double m_F,
                                      double M0) {
  const CavityGrid& grid = body.cavity;
  SteadyResidual r;
  const double m_S = body.mass + m_F;
  double pscale = std::abs(s.c);
  for (std::size_t i = 0; i < s.rho.size(); ++i) {
    const double lhs = detail::power(s.rho[i], law.gamma - 1.0);
    const double rhs = detail::profile_potential(s.omega, s.xi, law, grid.center(i)) + s.c;
    r.profile = std::max(r.profile, std::abs(lhs - rhs));
    pscale = std::max(pscale, std::abs(lhs));
  }
  r.profile_scaled = pscale > 0.0 ? r.profile / pscale : r.profile;

  const Mat3 I = total_inertia(body, s.rho, m_S);
  r.alignment = alignment_defect(I, s.omega);
  const Vec3 g = first_moment(s.rho, grid);
  r.momentum = norm(m_S * s.xi + cross(s.omega, g));
  // |g| cancels for symmetric cavities; scale by the uncancelled moment instead
  double gabs = 0.0;
  for (std::size_t c = 0; c < s.rho.size(); ++c) gabs += norm(grid.center(c)) * s.rho[c] * grid.cell_volume();
  const double mscale = m_S * norm(s.xi) + norm(s.omega) * gabs;
  r.momentum_scaled = mscale > 0.0 ? r.momentum / mscale : r.momentum;
  r.mass = std::abs(total_mass(s.rho, grid) - m_F);
  r.mass_scaled = r.mass / m_F;
  r.angular = std::abs(norm(I * s.omega) - M0);
  r.angular_scaled = M0 > 0.0 ? r.angular / M0 : r.angular;

  // sum (rho (omega x u) . phi - p div phi) vol for phi = grad psi and curl-type fields
  const Vec3 L = grid.extents();
  double worst = 0.0, scale = 0.0;
  for (int f = 0; f < 6; ++f) {
    double res = 0.0, mag = 0.0;
    for (std::size_t i = 0; i < s.rho.size(); ++i) {
      const Vec3 x = grid.center(i);
      Vec3 sv, cv;
      for (int a = 0; a < 3; ++a) {
        const double t = (x[a] - grid.lower(a)) / L[a] * M_PI;
        sv[a] = std::sin(t);
        cv[a] = std::cos(t);
      }
      // psi = prod sin^2; phi_gradient = grad psi, phi_rot = e_a x grad psi
      Vec3 gp;
      for (int a = 0; a < 3; ++a) {
        const int b = (a + 1) % 3, c = (a + 2) % 3;
        gp[a] = 2.0 * sv[a] * cv[a] * M_PI / L[a] * sv[b] * sv[b] * sv[c] * sv[c];
      }
      Vec3 phi;
      double div = 0.0;
      if (f < 3) {
        phi[f] = gp[f];
        // d/dx_f of gp[f]
        const int b = (f + 1) % 3, c = (f + 2) % 3;
        div = 2.0 * (cv[f] * cv[f] - sv[f] * sv[f]) * (M_PI / L[f]) * (M_PI / L[f]) * sv[b] * sv[b] * sv[c] * sv[c];
      } else {
        Vec3 e;
        e[f - 3] = 1.0;
        phi = cross(e, gp);
      }
      const Vec3 u = cross(s.omega, x) + s.xi;
      const double p = law.pressure(s.rho[i]);
      const double term = s.rho[i] * dot(cross(s.omega, u), phi);
      res += term - p * div;
      mag += std::abs(term) + std::abs(p * div);
    }
    worst = std::max(worst, std::abs(res));
    scale = std::max(scale, mag);
  }
  r.weak_momentum = scale > 0.0 ? worst / scale : 0.0;
  return r;
}

/// Coupled state of a steady rotation: q = rho (omega x x + xi), M = I_C omega + sum x x q vol.
inline CoupledState steady_to_state(const SteadyState& s, const BodySpec& body) {
  const CavityGrid& grid = body.cavity;
  CoupledState out;
  out.fluid = FluidField(grid.cell_count());
  out.fluid.rho = s.rho;
  Vec3 ang;
  for (std::size_t i = 0; i < s.rho.size(); ++i) {
    const Vec3 x = grid.center(i);
    out.fluid.q[i] = s.rho[i] * (cross(s.omega, x) + s.xi);
  }
  ang = pairwise_sum<Vec3>(s.rho.size(), [&](std::size_t i) { return cross(grid.center(i), out.fluid.q[i]); });
  out.M = body.inertia * s.omega + ang * grid.cell_volume();
  out.omega = s.omega;
  out.xi = s.xi;
  return out;
}

}  // namespace cavity_spin
