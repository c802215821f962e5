#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cavity_spin/eig3.hpp"
#include "cavity_spin/errors.hpp"
#include "cavity_spin/grid.hpp"
#include "cavity_spin/linalg.hpp"
#include "cavity_spin/parallel.hpp"

namespace cavity_spin {

/// Rigid body carrying the cavity: mass, inertia tensor about its mass center C.
struct BodySpec {
  double mass = 1.0;
  Mat3 inertia = Mat3::identity();
  CavityGrid cavity;

  /// Throws on hard violations; returns human-readable warnings.
  std::vector<std::string> validate() const {
    if (!(mass > 0.0) || !std::isfinite(mass)) throw DomainError("body mass must be positive");
    const double scale = std::max(frobenius_norm(inertia), 1e-300);
    if (asymmetry(inertia) > 1e-12 * scale)
      throw DomainError("body inertia tensor must be symmetric");
    if (!is_positive_definite(inertia))
      throw DomainError("body inertia tensor must be positive definite");
    std::vector<std::string> warnings;
    if (!satisfies_triangle_inequality(eig3_sym(inertia).values))
      warnings.emplace_back("body principal moments violate the triangle inequality");
    return warnings;
  }
};

/// Fluid inertia tensor sum rho (|x|^2 1 - x (x) x) vol, midpoint rule.
inline Mat3 fluid_inertia(std::span<const double> rho, const CavityGrid& grid) {
  const double vol = grid.cell_volume();
  struct Acc {
    double xx = 0, yy = 0, zz = 0, xy = 0, xz = 0, yz = 0;
    Acc& operator+=(const Acc& o) {
      xx += o.xx; yy += o.yy; zz += o.zz; xy += o.xy; xz += o.xz; yz += o.yz;
      return *this;
    }
  };
  const Acc s = pairwise_sum<Acc>(rho.size(), [&](std::size_t c) {
    const Vec3 x = grid.center(c);
    const double w = rho[c];
    return Acc{w * x[0] * x[0], w * x[1] * x[1], w * x[2] * x[2],
               w * x[0] * x[1], w * x[0] * x[2], w * x[1] * x[2]};
  });
  Mat3 m;
  m(0, 0) = (s.yy + s.zz) * vol;
  m(1, 1) = (s.xx + s.zz) * vol;
  m(2, 2) = (s.xx + s.yy) * vol;
  m(0, 1) = m(1, 0) = -s.xy * vol;
  m(0, 2) = m(2, 0) = -s.xz * vol;
  m(1, 2) = m(2, 1) = -s.yz * vol;
  return m;
}

/// First moment g = sum rho x vol.
inline Vec3 first_moment(std::span<const double> rho, const CavityGrid& grid) {
  const Vec3 s = pairwise_sum<Vec3>(rho.size(), [&](std::size_t c) { return rho[c] * grid.center(c); });
  return s * grid.cell_volume();
}

inline double total_mass(std::span<const double> rho, const CavityGrid& grid) {
  return pairwise_sum<double>(rho.size(), [&](std::size_t c) { return rho[c]; }) * grid.cell_volume();
}

/// Inertia tensor of body plus fluid about the system's mass center:
/// I_C + fluid_inertia - (|g|^2 1 - g (x) g) / m_S.
inline Mat3 total_inertia(const BodySpec& body, std::span<const double> rho, double system_mass) {
  if (!(system_mass > 0.0)) throw DomainError("system mass must be positive");
  const Vec3 g = first_moment(rho, body.cavity);
  Mat3 ig = outer(g, g) * (-1.0);
  const double g2 = dot(g, g);
  ig(0, 0) += g2;
  ig(1, 1) += g2;
  ig(2, 2) += g2;
  Mat3 total = body.inertia + fluid_inertia(rho, body.cavity) - ig * (1.0 / system_mass);
  // symmetrize away round-off from the separate sums
  total = 0.5 * (total + transpose(total));
  if (!is_positive_definite(total))
    throw InvariantViolation("core.total_inertia",
                             "total inertia tensor is not positive definite (corrupted inputs?)");
  return total;
}

}  // namespace cavity_spin
