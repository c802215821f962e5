#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <vector>

#include "cavity_spin/body.hpp"
#include "cavity_spin/constitutive.hpp"
#include "cavity_spin/dynamics.hpp"
#include "cavity_spin/errors.hpp"
#include "cavity_spin/linalg.hpp"
#include "cavity_spin/parallel.hpp"
#include "cavity_spin/state.hpp"
#include "cavity_spin/steady.hpp"

namespace cavity_spin {

/// Mean fluid density m_F / |C|.
inline double mean_density(const FluidField& f, const CavityGrid& grid) {
  return total_mass(f.rho, grid) / grid.volume();
}

/// Kinetic energy of the body: 1/2 omega.I_C omega + 1/2 m_B |xi|^2.
inline double body_kinetic_energy(const BodySpec& body, const Vec3& omega, const Vec3& xi) {
  return 0.5 * dot(omega, body.inertia * omega) + 0.5 * body.mass * dot(xi, xi);
}

/// E = sum (1/2 |q|^2 / rho + P^rho_bar(rho) [+ b/(beta-1) rho^beta]) vol + body kinetic energy.
inline double total_energy(const CoupledState& s, const Model& model, double rho_bar) {
  const CavityGrid& grid = model.grid();
  const PressureLaw& law = model.law;
  const RegularizationSpec& reg = model.reg;
  const double fluid = pairwise_sum<double>(s.fluid.size(), [&](std::size_t c) {
    const double r = s.fluid.rho[c];
    const Vec3& q = s.fluid.q[c];
    double e = helmholtz(law, rho_bar, r);
    if (r > 0.0) e += 0.5 * dot(q, q) / r;
    if (reg.b > 0.0) e += reg.b / (reg.beta - 1.0) * detail::power(r, reg.beta);
    return e;
  });
  return fluid * grid.cell_volume() + body_kinetic_energy(model.body, s.omega, s.xi);
}

/// D = sum S(grad u) : grad u vol. Uses the solver's ghost layer.
inline double dissipation_rate(Solver& solver, const CoupledState& s) {
  solver.prepare(s.fluid, s.M);
  const GhostedFields& g = solver.ghosted();
  const CavityGrid& grid = solver.grid();
  const ViscositySpec& visc = solver.model().visc;
  const double sum = pairwise_sum<double>(grid.cell_count(), [&](std::size_t c) {
    const auto ijk = grid.unravel(c);
    const Mat3 G = relative_velocity_gradient(g, grid, ijk[0], ijk[1], ijk[2]);
    return contract(stress(G, visc), G);
  });
  return sum * grid.cell_volume();
}

/// Discrete L2 norm sqrt(sum |f|^2 vol).
inline double l2_norm(const std::vector<double>& f, const CavityGrid& grid) {
  return std::sqrt(pairwise_sum<double>(f.size(), [&](std::size_t c) { return f[c] * f[c]; }) *
                   grid.cell_volume());
}

inline double l2_norm(const std::vector<Vec3>& f, const CavityGrid& grid) {
  return std::sqrt(pairwise_sum<double>(f.size(), [&](std::size_t c) { return dot(f[c], f[c]); }) *
                   grid.cell_volume());
}

inline std::vector<Vec3> relative_velocity_field(const CoupledState& s, const CavityGrid& grid) {
  std::vector<Vec3> v(s.fluid.size());
  for (std::size_t c = 0; c < v.size(); ++c)
    v[c] = relative_velocity(s.fluid.q[c] / s.fluid.rho[c], grid.center(c), s.omega, s.xi);
  return v;
}

/// Relative entropy sum (1/2 rho |u - U|^2 + H(rho, r)) vol plus the body term
/// 1/2 (omega - Omega).I_C (omega - Omega) + 1/2 m_B |xi - Xi|^2.
/// `ref` supplies r = ref.rho, U = ref.q / r, Omega = ref.omega, Xi = ref.xi.
inline double relative_entropy_total(const CoupledState& s, const CoupledState& ref, const Model& model) {
  const CavityGrid& grid = model.grid();
  if (ref.fluid.size() != s.fluid.size()) throw DomainError("relative entropy: field sizes differ");
  for (std::size_t c = 0; c < ref.fluid.size(); ++c)
    if (!(ref.fluid.rho[c] > 0.0)) throw DomainError("relative entropy: reference density must be positive");
  const double fluid = pairwise_sum<double>(s.fluid.size(), [&](std::size_t c) {
    const double r = ref.fluid.rho[c];
    const double rho = s.fluid.rho[c];
    double e = entropy_H(model.law, rho, r);
    if (rho > 0.0) {
      const Vec3 du = s.fluid.q[c] / rho - ref.fluid.q[c] / r;
      e += 0.5 * rho * dot(du, du);
    }
    return e;
  });
  return fluid * grid.cell_volume() + body_kinetic_energy(model.body, s.omega - ref.omega, s.xi - ref.xi);
}

/// Conservative restriction onto a grid coarser by an integer factor per axis.
/// omega, xi, M and t are copied; they are global quantities.
inline CoupledState restrict_to_coarse(const CoupledState& fine, const CavityGrid& fine_grid,
                                       const CavityGrid& coarse_grid) {
  std::array<int, 3> f{};
  for (int a = 0; a < 3; ++a) {
    if (fine_grid.n(a) % coarse_grid.n(a) != 0 ||
        std::abs(fine_grid.extents()[a] - coarse_grid.extents()[a]) > 1e-12 * fine_grid.extents()[a] ||
        std::abs(fine_grid.offset()[a] - coarse_grid.offset()[a]) > 1e-12 * fine_grid.extents()[a])
      throw DomainError("restriction needs nested grids over the same cavity");
    f[a] = fine_grid.n(a) / coarse_grid.n(a);
  }
  CoupledState out;
  out.fluid = FluidField(coarse_grid.cell_count());
  const double w = 1.0 / (f[0] * f[1] * f[2]);
  for (int k = 0; k < fine_grid.n(2); ++k)
    for (int j = 0; j < fine_grid.n(1); ++j)
      for (int i = 0; i < fine_grid.n(0); ++i) {
        const std::size_t fc = fine_grid.index(i, j, k);
        const std::size_t cc = coarse_grid.index(i / f[0], j / f[1], k / f[2]);
        out.fluid.rho[cc] += w * fine.fluid.rho[fc];
        out.fluid.q[cc] += w * fine.fluid.q[fc];
      }
  out.M = fine.M;
  out.t = fine.t;
  out.omega = fine.omega;
  out.xi = fine.xi;
  return out;
}

struct RenormResidual {
  double l1 = 0.0;        ///< sum |R| vol
  double integral = 0.0;  ///< sum R vol
};

namespace detail {
// Central div(b v) and rho div v per cell, with odd v and even b ghosts.
inline void renorm_terms(const CoupledState& s, const CavityGrid& grid, std::vector<double>& flux_div,
                         std::vector<double>& defect) {
  const auto n = grid.cells();
  const std::size_t cells = grid.cell_count();
  flux_div.assign(cells, 0.0);
  defect.assign(cells, 0.0);
  std::vector<double> b(cells);
  std::vector<Vec3> v(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    const double r = s.fluid.rho[c];
    if (!(r > 0.0)) throw DomainError("renormalized residual needs positive density");
    b[c] = r * std::log(r);
    v[c] = relative_velocity(s.fluid.q[c] / r, grid.center(c), s.omega, s.xi);
  }
  const std::size_t stride[3] = {1, static_cast<std::size_t>(n[0]), static_cast<std::size_t>(n[0]) * n[1]};
  for (std::size_t c = 0; c < cells; ++c) {
    const auto ijk = grid.unravel(c);
    double fd = 0.0, dv = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double h2 = 2.0 * grid.h(a);
      const bool lo_wall = ijk[a] == 0, hi_wall = ijk[a] == n[a] - 1;
      const std::size_t lo = c - (lo_wall ? 0 : stride[a]), hi = c + (hi_wall ? 0 : stride[a]);
      const double vhi = hi_wall ? -v[c][a] : v[hi][a];
      const double vlo = lo_wall ? -v[c][a] : v[lo][a];
      fd += (b[hi] * vhi - b[lo] * vlo) / h2;
      dv += (vhi - vlo) / h2;
    }
    flux_div[c] = fd;
    defect[c] = s.fluid.rho[c] * dv;
  }
}
}  // namespace detail

/// Residual of d_t b(rho) + div(b(rho) v) + (b'(rho) rho - b(rho)) div v with b = rho ln rho,
/// trapezoid in time between two states dt apart.
inline RenormResidual renorm_residual(const CoupledState& s0, const CoupledState& s1, double dt,
                                      const CavityGrid& grid) {
  if (!(dt > 0.0)) throw DomainError("renormalized residual needs dt > 0");
  std::vector<double> f0, d0, f1, d1;
  detail::renorm_terms(s0, grid, f0, d0);
  detail::renorm_terms(s1, grid, f1, d1);
  RenormResidual out;
  const double vol = grid.cell_volume();
  for (std::size_t c = 0; c < f0.size(); ++c) {
    const double r0 = s0.fluid.rho[c], r1 = s1.fluid.rho[c];
    const double R = (r1 * std::log(r1) - r0 * std::log(r0)) / dt + 0.5 * (f0[c] + f1[c]) + 0.5 * (d0[c] + d1[c]);
    out.l1 += std::abs(R) * vol;
    out.integral += R * vol;
  }
  return out;
}

/// Fluid torque sum over wall faces of x_f x (S n - p_w n) area, n the outward normal.
/// p_w and the normal derivative of v are one-sided second-order wall values.
inline Vec3 wall_torque(Solver& solver, const CoupledState& s) {
  solver.prepare(s.fluid, s.M);
  const GhostedFields& g = solver.ghosted();
  const CavityGrid& grid = solver.grid();
  const ViscositySpec& visc = solver.model().visc;
  const auto n = grid.cells();
  Vec3 tau;
  for (int a = 0; a < 3; ++a) {
    const int b = (a + 1) % 3, c = (a + 2) % 3;
    const double h = grid.h(a);
    const double area = grid.face_area(a);
    for (int side = 0; side < 2; ++side) {
      const double sign = side == 0 ? -1.0 : 1.0;  // outward normal component
      Vec3 nrm;
      nrm[a] = sign;
      for (int jc = 0; jc < n[c]; ++jc)
        for (int jb = 0; jb < n[b]; ++jb) {
          std::array<int, 3> idx{};
          idx[b] = jb;
          idx[c] = jc;
          std::array<int, 3> i0 = idx, i1 = idx, i2 = idx;
          i0[a] = side == 0 ? 0 : n[a] - 1;
          i1[a] = side == 0 ? 1 : n[a] - 2;
          i2[a] = side == 0 ? std::min(2, n[a] - 1) : std::max(n[a] - 3, 0);
          const double p0 = g.p[g.at(i0[0], i0[1], i0[2])];
          const double p1 = g.p[g.at(i1[0], i1[1], i1[2])];
          const double p2 = g.p[g.at(i2[0], i2[1], i2[2])];
          const double pw = n[a] > 2 ? (15.0 * p0 - 10.0 * p1 + 3.0 * p2) / 8.0 : 1.5 * p0 - 0.5 * p1;
          const Vec3& v0 = g.v[g.at(i0[0], i0[1], i0[2])];
          const Vec3& v1 = g.v[g.at(i1[0], i1[1], i1[2])];
          // derivative along +x_a of v at the wall
          const Vec3 dvdn = (9.0 * v0 - v1) / (3.0 * h) * (side == 0 ? 1.0 : -1.0);
          Mat3 G;
          for (int k = 0; k < 3; ++k) G(k, a) = dvdn[k];
          const Vec3 traction = stress(G, visc) * nrm - pw * nrm;
          Vec3 xf = grid.center(i0[0], i0[1], i0[2]);
          xf[a] += sign * 0.5 * h;
          tau += area * cross(xf, traction);
        }
    }
  }
  return tau;
}

/// Mismatch of I_C domega/dt + omega x (I_C omega) + integral of x x T n between two samples.
inline Vec3 torque_residual(Solver& solver, const CoupledState& s0, const CoupledState& s1) {
  const double dt = s1.t - s0.t;
  if (!(dt > 0.0)) throw DomainError("torque residual needs increasing sample times");
  const Mat3& I = solver.model().body.inertia;
  const Vec3 wm = 0.5 * (s0.omega + s1.omega);
  const Vec3 tau0 = wall_torque(solver, s0);
  const Vec3 tau1 = wall_torque(solver, s1);
  return I * ((s1.omega - s0.omega) / dt) + cross(wm, I * wm) + 0.5 * (tau0 + tau1);
}

/// Rotation from the body frame to the inertial frame.
struct OrientationState {
  Mat3 Q = Mat3::identity();
  double t = 0.0;
};

/// exp(S(a)) by Rodrigues' formula.
inline Mat3 rotation_exp(const Vec3& a) {
  const double th = norm(a);
  const Mat3 K = skew(a);
  if (th < 1e-8) return Mat3::identity() + K + 0.5 * (K * K);
  return Mat3::identity() + (std::sin(th) / th) * K + ((1.0 - std::cos(th)) / (th * th)) * (K * K);
}

/// Nearest proper orthogonal matrix by Newton iteration on the polar factor.
inline Mat3 reorthonormalize(Mat3 X) {
  for (int it = 0; it < 20; ++it) {
    const Mat3 Y = 0.5 * (X + transpose(inverse(X)));
    const double change = frobenius_norm(Y - X);
    X = Y;
    if (change < 1e-15) break;
  }
  return X;
}

/// Q' = Q exp(dt S(omega_mid)), since S(Q w) Q = Q S(w) for body-frame w.
inline OrientationState orientation_advance(const OrientationState& o, const Vec3& omega0, const Vec3& omega1,
                                            double dt) {
  OrientationState out;
  out.Q = reorthonormalize(o.Q * rotation_exp(0.5 * dt * (omega0 + omega1)));
  out.t = o.t + dt;
  return out;
}

inline double orthogonality_defect(const Mat3& Q) {
  return frobenius_norm(transpose(Q) * Q - Mat3::identity());
}

/// One row of the time series.
struct DiagnosticsSample {
  double t = 0.0;
  double mass = 0.0;
  double energy = 0.0;
  double dissipation_rate = 0.0;
  double M_norm = 0.0;
  Vec3 omega;
  Vec3 xi;
  double v_l2 = 0.0;
  double rho_dev_l2 = 0.0;
  double constraint_xi = 0.0;
  double constraint_M = 0.0;
  std::optional<double> rel_entropy;

  bool operator==(const DiagnosticsSample&) const = default;
};

inline DiagnosticsSample make_sample(Solver& solver, const CoupledState& s, double rho_bar,
                                     const CoupledState* reference = nullptr) {
  const Model& model = solver.model();
  const CavityGrid& grid = model.grid();
  DiagnosticsSample d;
  d.t = s.t;
  d.mass = total_mass(s.fluid.rho, grid);
  d.energy = total_energy(s, model, rho_bar);
  d.dissipation_rate = dissipation_rate(solver, s);
  d.M_norm = norm(s.M);
  d.omega = s.omega;
  d.xi = s.xi;
  d.v_l2 = l2_norm(relative_velocity_field(s, grid), grid);
  std::vector<double> dev(s.fluid.size());
  for (std::size_t c = 0; c < dev.size(); ++c) dev[c] = s.fluid.rho[c] - rho_bar;
  d.rho_dev_l2 = l2_norm(dev, grid);
  const double vol = grid.cell_volume();
  const Vec3 lin = pairwise_sum<Vec3>(s.fluid.size(), [&](std::size_t c) { return s.fluid.q[c]; }) * vol;
  const Vec3 ang =
      pairwise_sum<Vec3>(s.fluid.size(), [&](std::size_t c) { return cross(grid.center(c), s.fluid.q[c]); }) * vol;
  d.constraint_xi = norm(model.body.mass * s.xi + lin);
  d.constraint_M = norm(s.M - model.body.inertia * s.omega - ang);
  if (reference) d.rel_entropy = relative_entropy_total(s, *reference, model);
  return d;
}

/// Sliding-window detector for convergence to a limit (v, rho, omega, xi).
class OmegaLimitDetector {
 public:
  struct Verdict {
    bool converged = false;
    double spread = 0.0;  ///< max over the window of the distance to the last sample
    std::vector<double> rho;
    Vec3 omega, xi;
    double v_l2 = 0.0;
    bool in_band = false;  ///< every cell in (rho_bar/2, 3 rho_bar/2)
  };

  OmegaLimitDetector(std::size_t window, double tol) : window_(window), tol_(tol) {
    if (window < 2) throw DomainError("omega-limit window must hold at least 2 samples");
  }

  void push(double v_l2, std::vector<double> rho, const Vec3& omega, const Vec3& xi) {
    samples_.push_back({v_l2, std::move(rho), omega, xi});
    if (samples_.size() > window_) samples_.pop_front();
  }

  std::size_t size() const { return samples_.size(); }

  Verdict verdict(const CavityGrid& grid, double rho_bar) const {
    Verdict out;
    if (samples_.size() < window_) {
      out.spread = std::numeric_limits<double>::infinity();
      return out;
    }
    const Sample& last = samples_.back();
    for (const Sample& s : samples_) {
      std::vector<double> dr(s.rho.size());
      for (std::size_t c = 0; c < dr.size(); ++c) dr[c] = s.rho[c] - last.rho[c];
      const double dist = s.v_l2 + l2_norm(dr, grid) + norm(s.omega - last.omega) + norm(s.xi - last.xi);
      out.spread = std::max(out.spread, dist);
    }
    out.converged = out.spread <= tol_;
    out.rho = last.rho;
    out.omega = last.omega;
    out.xi = last.xi;
    out.v_l2 = last.v_l2;
    out.in_band = std::all_of(last.rho.begin(), last.rho.end(),
                              [&](double r) { return r > 0.5 * rho_bar && r < 1.5 * rho_bar; });
    return out;
  }

 private:
  struct Sample {
    double v_l2;
    std::vector<double> rho;
    Vec3 omega, xi;
  };
  std::size_t window_;
  double tol_;
  std::deque<Sample> samples_;
};

}  // namespace cavity_spin
