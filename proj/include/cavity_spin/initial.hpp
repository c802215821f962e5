#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "cavity_spin/body.hpp"
#include "cavity_spin/config.hpp"
#include "cavity_spin/dynamics.hpp"
#include "cavity_spin/io.hpp"
#include "cavity_spin/state.hpp"

namespace cavity_spin {

/// Counter-based generator: the n-th draw depends only on (seed, n).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t bits(std::uint64_t n) const { return mix(seed_ ^ mix(n)); }

  /// Uniform in [-1, 1).
  double symmetric(std::uint64_t n) const {
    return static_cast<double>(bits(n) >> 11) * 0x1.0p-52 - 1.0;
  }

 private:
  std::uint64_t seed_;
};

namespace detail {

// Average of sin(k pi s) or cos(k pi s) over a cell of width w (in s units) centred at s.
inline double cell_avg_cos(int k, double s, double w) {
  const double z = 0.5 * k * std::numbers::pi * w;
  return std::cos(k * std::numbers::pi * s) * std::sin(z) / z;
}
inline double cell_avg_sin(int k, double s, double w) {
  const double z = 0.5 * k * std::numbers::pi * w;
  return std::sin(k * std::numbers::pi * s) * std::sin(z) / z;
}

struct PerturbationModes {
  std::array<double, 3> a{};               // cos(pi s_a)
  std::array<double, 3> b{};               // cos(pi s_a) cos(pi s_b), pairs (0,1), (0,2), (1,2)
  std::array<std::array<double, 2>, 3> c{};  // velocity mode amplitudes per component
  std::array<std::array<std::array<int, 3>, 2>, 3> k{};  // wave numbers in {1, 2}

  explicit PerturbationModes(std::uint64_t seed) {
    const CounterRng rng(seed);
    std::uint64_t n = 0;
    for (double& x : a) x = rng.symmetric(n++);
    for (double& x : b) x = rng.symmetric(n++);
    double sum = 0.0;
    for (double x : a) sum += std::abs(x);
    for (double x : b) sum += std::abs(x);
    for (double& x : a) x /= sum;
    for (double& x : b) x /= sum;
    for (int comp = 0; comp < 3; ++comp) {
      double s = 0.0;
      for (int m = 0; m < 2; ++m) {
        c[comp][m] = rng.symmetric(n++);
        s += std::abs(c[comp][m]);
        for (int ax = 0; ax < 3; ++ax) k[comp][m][ax] = 1 + static_cast<int>(rng.bits(n++) & 1u);
      }
      for (double& x : c[comp]) x /= s;
    }
  }
};

}  // namespace detail

/// Exact cell averages of
///   rho = rho_bar (1 + eps phi),      |phi| <= 1, zero normal derivative at walls
///   q   = rho_bar (omega0 x x + xi_b) + eps rho_bar U_ref Psi,   Psi = 0 on walls
/// with xi_b = -P / (m_B + rho_bar |C|) so that xi recovers to xi_b, and
/// M = I_C omega0 + sum x x q vol unless overridden.
inline CoupledState make_initial_state(const RunConfig& cfg) {
  const CavityGrid grid = cfg.grid();
  const Model model = cfg.model();
  const InitialSpec& in = cfg.initial;
  CoupledState s;
  if (in.kind == InitialKind::file) {
    s.fluid = snapshot_read_raw(in.path, grid);
    const std::size_t bad = s.fluid.first_invalid();
    if (bad < s.fluid.size()) throw NumericalError("initial field file holds an invalid value", grid.unravel(bad));
    const double vol = grid.cell_volume();
    Vec3 ang;
    for (std::size_t c = 0; c < s.fluid.size(); ++c) ang += cross(grid.center(c), s.fluid.q[c]) * vol;
    s.M = in.angular_momentum ? *in.angular_momentum : model.body.inertia * in.omega0 + ang;
    refresh_kinematics(s, model.body);
    return s;
  }

  const double rho_bar = in.density;
  const double eps = in.epsilon;
  const Vec3 omega0 = in.kind == InitialKind::rest ? Vec3{} : in.omega0;
  const Vec3 L = grid.extents();
  const double maxL = std::max({L[0], L[1], L[2]});
  const double u_ref = norm(omega0) > 0.0 ? norm(omega0) * maxL / 2.0 : 1.0;
  const detail::PerturbationModes modes(in.seed);

  const std::size_t cells = grid.cell_count();
  s.fluid = FluidField(cells);
  std::vector<Vec3> psi(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    const auto ijk = grid.unravel(c);
    std::array<double, 3> sc{}, w{}, cs{}, sn1{}, sn2{};
    for (int a = 0; a < 3; ++a) {
      w[a] = 1.0 / grid.n(a);
      sc[a] = (ijk[a] + 0.5) * w[a];
      cs[a] = detail::cell_avg_cos(1, sc[a], w[a]);
      sn1[a] = detail::cell_avg_sin(1, sc[a], w[a]);
      sn2[a] = detail::cell_avg_sin(2, sc[a], w[a]);
    }
    double phi = 0.0;
    for (int a = 0; a < 3; ++a) phi += modes.a[a] * cs[a];
    phi += modes.b[0] * cs[0] * cs[1] + modes.b[1] * cs[0] * cs[2] + modes.b[2] * cs[1] * cs[2];
    s.fluid.rho[c] = rho_bar * (1.0 + eps * phi);
    for (int comp = 0; comp < 3; ++comp) {
      double val = 0.0;
      for (int m = 0; m < 2; ++m) {
        double prod = modes.c[comp][m];
        for (int a = 0; a < 3; ++a) prod *= modes.k[comp][m][a] == 1 ? sn1[a] : sn2[a];
        val += prod;
      }
      psi[c][comp] = val;
    }
  }

  const double vol = grid.cell_volume();
  Vec3 P;
  for (std::size_t c = 0; c < cells; ++c) {
    s.fluid.q[c] = rho_bar * cross(omega0, grid.center(c)) + (eps * rho_bar * u_ref) * psi[c];
    P += s.fluid.q[c] * vol;
  }
  const Vec3 xi_b = P * (-1.0 / (model.body.mass + rho_bar * grid.volume()));
  Vec3 ang;
  for (std::size_t c = 0; c < cells; ++c) {
    s.fluid.q[c] += rho_bar * xi_b;
    ang += cross(grid.center(c), s.fluid.q[c]) * vol;
  }
  s.M = in.angular_momentum ? *in.angular_momentum : model.body.inertia * omega0 + ang;
  refresh_kinematics(s, model.body);
  return s;
}

}  // namespace cavity_spin
