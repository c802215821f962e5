#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cavity_spin/body.hpp"
#include "cavity_spin/constitutive.hpp"
#include "cavity_spin/errors.hpp"
#include "cavity_spin/grid.hpp"
#include "cavity_spin/linalg.hpp"

namespace cavity_spin {

/// Cell-averaged density and momentum density q = rho u, x-fastest.
struct FluidField {
  std::vector<double> rho;
  std::vector<Vec3> q;

  FluidField() = default;
  explicit FluidField(std::size_t cells, double rho0 = 0.0) : rho(cells, rho0), q(cells) {}

  std::size_t size() const { return rho.size(); }

  /// Index of the first cell holding a negative or non-finite value, or size().
  std::size_t first_invalid() const {
    for (std::size_t c = 0; c < rho.size(); ++c)
      if (!(rho[c] >= 0.0) || !std::isfinite(rho[c]) || !is_finite(q[c])) return c;
    return rho.size();
  }
};

/// Fluid plus total angular momentum. omega and xi are recovered from (fluid, M).
struct CoupledState {
  FluidField fluid;
  Vec3 M;
  double t = 0.0;
  Vec3 omega;
  Vec3 xi;
};

/// Everything the right-hand side depends on besides the state.
struct Model {
  BodySpec body;
  PressureLaw law;
  ViscositySpec visc;
  RegularizationSpec reg;

  const CavityGrid& grid() const { return body.cavity; }
  EffectivePressure effective_pressure() const { return {law, reg}; }

  /// Throws on hard violations, returns warnings.
  std::vector<std::string> validate() const {
    auto warnings = body.validate();
    law.validate();
    visc.validate();
    reg.validate(law);
    if (law.outside_weak_theory())
      warnings.emplace_back("gamma <= 3/2: finite-energy weak solutions are only known to exist for gamma > 3/2");
    return warnings;
  }
};

}  // namespace cavity_spin
