#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "cavity_spin/errors.hpp"
#include "cavity_spin/grid.hpp"
#include "cavity_spin/linalg.hpp"
#include "cavity_spin/parallel.hpp"
#include "cavity_spin/state.hpp"

namespace cavity_spin {

struct Kinematics {
  Vec3 omega;
  Vec3 xi;
};

/// omega = I_C^{-1} (M - sum x x q vol), xi = -sum q vol / m_B.
inline Kinematics recover_kinematics(const FluidField& fluid, const Vec3& M, const BodySpec& body) {
  const CavityGrid& g = body.cavity;
  struct Acc {
    Vec3 lin, ang;
    Acc& operator+=(const Acc& o) {
      lin += o.lin;
      ang += o.ang;
      return *this;
    }
  };
  const Acc s = pairwise_sum<Acc>(fluid.size(), [&](std::size_t c) {
    return Acc{fluid.q[c], cross(g.center(c), fluid.q[c])};
  });
  const double vol = g.cell_volume();
  return {inverse(body.inertia) * (M - s.ang * vol), s.lin * (-vol / body.mass)};
}

inline void refresh_kinematics(CoupledState& s, const BodySpec& body) {
  const Kinematics k = recover_kinematics(s.fluid, s.M, body);
  s.omega = k.omega;
  s.xi = k.xi;
}

inline Vec3 relative_velocity(const Vec3& u, const Vec3& x, const Vec3& omega, const Vec3& xi) {
  return u - cross(omega, x) - xi;
}

/// Time derivative of (rho, q, M).
struct Tendency {
  std::vector<double> drho;
  std::vector<Vec3> dq;
  Vec3 dM;
};

/// dt = cfl / max over cells of
///   sum_a (|v_a| + c) / h_a + (2 (4 mu / 3 + lambda) / rho + 2 d) sum_a 1 / h_a^2
struct StepControl {
  double cfl = 0.5;
  double dt_max = std::numeric_limits<double>::infinity();
  double rho_min = 1e-12;

  void validate() const {
    if (!(cfl > 0.0 && cfl <= 1.0)) throw DomainError("cfl must lie in (0, 1]");
    if (!(dt_max > 0.0)) throw DomainError("dt_max must be positive");
    if (!(rho_min > 0.0) || !std::isfinite(rho_min)) throw DomainError("rho_min must be positive");
  }
};

/// Density, pressure and relative velocity on the grid plus one ghost layer.
///
/// Ghost rules, applied axis by axis so edges and corners are filled too:
///   v      odd reflection, so the wall average of u is omega x x_f + xi
///   rho, p quadratic extrapolation (linear when N = 2)
struct GhostedFields {
  std::array<int, 3> n{};
  std::array<std::size_t, 3> stride{};
  std::vector<double> rho, p;
  std::vector<Vec3> v;

  void resize(const std::array<int, 3>& cells) {
    n = cells;
    stride = {1, static_cast<std::size_t>(n[0] + 2),
              static_cast<std::size_t>(n[0] + 2) * static_cast<std::size_t>(n[1] + 2)};
    const std::size_t total = stride[2] * static_cast<std::size_t>(n[2] + 2);
    rho.resize(total);
    p.resize(total);
    v.resize(total);
  }

  /// Padded index; i, j, k in [-1, N].
  std::size_t at(int i, int j, int k) const {
    return static_cast<std::size_t>(i + 1) + stride[1] * static_cast<std::size_t>(j + 1) +
           stride[2] * static_cast<std::size_t>(k + 1);
  }
};

namespace detail {

template <class T, class Rule>
void fill_ghosts(std::vector<T>& f, const GhostedFields& g, Rule rule) {
  const auto& n = g.n;
  for (int a = 0; a < 3; ++a) {
    const int b = (a + 1) % 3, c = (a + 2) % 3;
    // earlier axes are already padded, later axes only over the interior
    const int blo = b < a ? -1 : 0, bhi = b < a ? n[b] + 1 : n[b];
    const int clo = c < a ? -1 : 0, chi = c < a ? n[c] + 1 : n[c];
    const std::size_t s = g.stride[a];
    const int na = n[a];
    for (int jc = clo; jc < chi; ++jc) {
      for (int jb = blo; jb < bhi; ++jb) {
        std::array<int, 3> idx{};
        idx[a] = 0;
        idx[b] = jb;
        idx[c] = jc;
        const std::size_t lo = g.at(idx[0], idx[1], idx[2]);
        const std::size_t hi = lo + static_cast<std::size_t>(na - 1) * s;
        f[lo - s] = rule(f[lo], f[lo + s], na > 2 ? f[lo + 2 * s] : f[lo + s], na);
        f[hi + s] = rule(f[hi], f[hi - s], na > 2 ? f[hi - 2 * s] : f[hi - s], na);
      }
    }
  }
}

inline double extrapolate(double f0, double f1, double f2, int n) {
  return n > 2 ? 3.0 * f0 - 3.0 * f1 + f2 : 2.0 * f0 - f1;
}

}  // namespace detail

/// Fills `out` from (fluid, kinematics). Throws NumericalError on non-finite
/// values and PositivityError on rho <= 0, naming the first offending cell.
inline void fill_ghosted(const Model& model, const FluidField& fluid, const Kinematics& kin,
                         GhostedFields& out) {
  const CavityGrid& grid = model.grid();
  const auto n = grid.cells();
  if (out.n != n || out.rho.empty()) out.resize(n);
  const EffectivePressure pb = model.effective_pressure();
  for (std::size_t c = 0; c < fluid.size(); ++c) {
    const double r = fluid.rho[c];
    if (!std::isfinite(r) || !is_finite(fluid.q[c]))
      throw NumericalError("non-finite field value", grid.unravel(c));
    if (!(r > 0.0)) throw PositivityError("non-positive density", grid.unravel(c));
  }
  parallel_for(static_cast<std::size_t>(n[2]), [&](std::size_t klo, std::size_t khi) {
    for (int k = static_cast<int>(klo); k < static_cast<int>(khi); ++k)
      for (int j = 0; j < n[1]; ++j)
        for (int i = 0; i < n[0]; ++i) {
          const std::size_t c = grid.index(i, j, k);
          const std::size_t pc = out.at(i, j, k);
          const double r = fluid.rho[c];
          out.rho[pc] = r;
          out.p[pc] = pb.pressure(r);
          out.v[pc] = relative_velocity(fluid.q[c] / r, grid.center(i, j, k), kin.omega, kin.xi);
        }
  });
  detail::fill_ghosts(out.rho, out, detail::extrapolate);
  detail::fill_ghosts(out.p, out, detail::extrapolate);
  detail::fill_ghosts(out.v, out, [](const Vec3& f0, const Vec3&, const Vec3&, int) { return -f0; });
}

/// Central gradient of v at an interior cell (odd ghosts at the walls).
inline Mat3 relative_velocity_gradient(const GhostedFields& g, const CavityGrid& grid, int i, int j,
                                       int k) {
  Mat3 G;
  const std::size_t pc = g.at(i, j, k);
  for (int b = 0; b < 3; ++b) {
    const Vec3 d = (g.v[pc + g.stride[b]] - g.v[pc - g.stride[b]]) / (2.0 * grid.h(b));
    for (int a = 0; a < 3; ++a) G(a, b) = d[a];
  }
  return G;
}

/// Right-hand side evaluator with reusable workspace.
///
/// Continuity and convective momentum fluxes: Rusanov on the relative velocity,
/// with central-slope linear reconstruction of rho and v (first order on faces
/// where a reconstructed density is not positive). Wall faces carry no convective
/// or diffusive flux. Pressure gradient, viscous and regularization terms are
/// central second-order cell terms.
class Solver {
 public:
  explicit Solver(Model model) : model_(std::move(model)) {
    const std::size_t cells = model_.grid().cell_count();
    for (int a = 0; a < 3; ++a) {
      frho_[a].assign(cells, 0.0);
      fq_[a].assign(cells, Vec3{});
    }
    cs_.assign(cells, 0.0);
    ghosted_.resize(model_.grid().cells());
  }

  const Model& model() const { return model_; }
  const CavityGrid& grid() const { return model_.grid(); }

  Kinematics kinematics(const FluidField& fluid, const Vec3& M) const {
    return recover_kinematics(fluid, M, model_.body);
  }

  /// Ghosted fields from the last residual or prepare() call.
  const GhostedFields& ghosted() const { return ghosted_; }

  Kinematics prepare(const FluidField& fluid, const Vec3& M) {
    const Kinematics kin = kinematics(fluid, M);
    fill_ghosted(model_, fluid, kin, ghosted_);
    return kin;
  }

  Tendency residual(const CoupledState& s) {
    Tendency out;
    residual(s.fluid, s.M, out);
    return out;
  }

  void residual(const FluidField& fluid, const Vec3& M, Tendency& out) {
    const Kinematics kin = prepare(fluid, M);
    const CavityGrid& grid = model_.grid();
    const auto n = grid.cells();
    const std::size_t cells = grid.cell_count();
    out.drho.resize(cells);
    out.dq.resize(cells);

    const EffectivePressure pb = model_.effective_pressure();
    for (std::size_t c = 0; c < cells; ++c) cs_[c] = pb.sound_speed(fluid.rho[c]);

    const GhostedFields& g = ghosted_;
    const double d = model_.reg.d;
    const Vec3 omega = kin.omega, xi = kin.xi;

    parallel_for(static_cast<std::size_t>(n[2]), [&](std::size_t klo, std::size_t khi) {
      for (int k = static_cast<int>(klo); k < static_cast<int>(khi); ++k)
        for (int j = 0; j < n[1]; ++j)
          for (int i = 0; i < n[0]; ++i) {
            const std::array<int, 3> ijk{i, j, k};
            const std::size_t c = grid.index(i, j, k);
            const std::size_t pc = g.at(i, j, k);
            const Vec3 xc = grid.center(i, j, k);
            for (int a = 0; a < 3; ++a) {
              if (ijk[a] == n[a] - 1) {
                frho_[a][c] = 0.0;
                fq_[a][c] = Vec3{};
                continue;
              }
              const std::size_t s = g.stride[a];
              const double h = grid.h(a);
              const double rm = g.rho[pc - s], r0 = g.rho[pc], r1 = g.rho[pc + s],
                           r2 = g.rho[pc + 2 * s];
              const Vec3 &vm = g.v[pc - s], &v0 = g.v[pc], &v1 = g.v[pc + s], &v2 = g.v[pc + 2 * s];
              double rl = r0 + 0.25 * (r1 - rm);
              double rr = r1 - 0.25 * (r2 - r0);
              Vec3 vl = v0 + 0.25 * (v1 - vm);
              Vec3 vr = v1 - 0.25 * (v2 - v0);
              if (!(rl > 0.0) || !(rr > 0.0)) {
                rl = r0;
                rr = r1;
                vl = v0;
                vr = v1;
              }
              Vec3 xf = xc;
              xf[a] += 0.5 * h;
              const Vec3 w = cross(omega, xf) + xi;
              const Vec3 ql = rl * (vl + w), qr = rr * (vr + w);
              const double vnl = vl[a], vnr = vr[a];
              const double alpha =
                  std::max(std::abs(vnl), std::abs(vnr)) + std::max(cs_[c], cs_[c + (a == 0 ? 1 : a == 1 ? n[0] : static_cast<std::size_t>(n[0]) * n[1])]);
              frho_[a][c] = 0.5 * (rl * vnl + rr * vnr) - 0.5 * alpha * (rr - rl) - d * (r1 - r0) / h;
              fq_[a][c] = 0.5 * (vnl * ql + vnr * qr) - (0.5 * alpha) * (qr - ql);
            }
          }
    });

    const ViscositySpec& visc = model_.visc;
    const double mu = visc.mu, grad_div = visc.lambda + visc.mu / 3.0;
    const Mat3 spin = skew(omega);

    parallel_for(static_cast<std::size_t>(n[2]), [&](std::size_t klo, std::size_t khi) {
      for (int k = static_cast<int>(klo); k < static_cast<int>(khi); ++k)
        for (int j = 0; j < n[1]; ++j)
          for (int i = 0; i < n[0]; ++i) {
            const std::array<int, 3> ijk{i, j, k};
            const std::size_t c = grid.index(i, j, k);
            const std::size_t pc = g.at(i, j, k);
            const std::size_t cell_stride[3] = {1, static_cast<std::size_t>(n[0]),
                                                static_cast<std::size_t>(n[0]) * n[1]};
            double dr = 0.0;
            Vec3 dq = -cross(omega, fluid.q[c]);
            const Vec3& v0 = g.v[pc];
            Vec3 lap{}, gdiv{};
            for (int a = 0; a < 3; ++a) {
              const double h = grid.h(a);
              const double flo = ijk[a] > 0 ? frho_[a][c - cell_stride[a]] : 0.0;
              const Vec3 qlo = ijk[a] > 0 ? fq_[a][c - cell_stride[a]] : Vec3{};
              dr -= (frho_[a][c] - flo) / h;
              dq -= (fq_[a][c] - qlo) / h;

              const std::size_t s = g.stride[a];
              dq[a] -= (g.p[pc + s] - g.p[pc - s]) / (2.0 * h);

              const Vec3& vp = g.v[pc + s];
              const Vec3& vm = g.v[pc - s];
              lap += (vp - 2.0 * v0 + vm) / (h * h);
              // grad div v: component a collects d_a d_b v_b
              gdiv[a] += (vp[a] - 2.0 * v0[a] + vm[a]) / (h * h);
              for (int b = 0; b < 3; ++b) {
                if (b == a) continue;
                const std::size_t sb = g.stride[b];
                const double mixed = g.v[pc + s + sb][b] - g.v[pc + s - sb][b] -
                                     g.v[pc - s + sb][b] + g.v[pc - s - sb][b];
                gdiv[a] += mixed / (4.0 * h * grid.h(b));
              }
            }
            dq += mu * lap + grad_div * gdiv;

            if (d > 0.0) {
              // -d (grad u) grad rho, Neumann ghosts for rho
              Vec3 grad_rho;
              for (int b = 0; b < 3; ++b) {
                const double hi = ijk[b] < n[b] - 1 ? fluid.rho[c + cell_stride[b]] : fluid.rho[c];
                const double lo = ijk[b] > 0 ? fluid.rho[c - cell_stride[b]] : fluid.rho[c];
                grad_rho[b] = (hi - lo) / (2.0 * grid.h(b));
              }
              const Mat3 grad_u = relative_velocity_gradient(g, grid, i, j, k) + spin;
              dq -= d * (grad_u * grad_rho);
            }
            out.drho[c] = dr;
            out.dq[c] = dq;
          }
    });

    // body-frame conservation of total angular momentum
    out.dM = cross(M, omega);
  }

  /// Stable step size; see StepControl.
  double cfl_dt(const CoupledState& s, const StepControl& ctrl) const {
    const CavityGrid& grid = model_.grid();
    const EffectivePressure pb = model_.effective_pressure();
    double inv_h2 = 0.0;
    for (int a = 0; a < 3; ++a) inv_h2 += 1.0 / (grid.h(a) * grid.h(a));
    const double visc = 2.0 * (4.0 / 3.0 * model_.visc.mu + model_.visc.lambda);
    const Kinematics kin = kinematics(s.fluid, s.M);
    double rate = 0.0;
    const auto n = grid.cells();
    for (std::size_t c = 0; c < s.fluid.size(); ++c) {
      const double r = s.fluid.rho[c];
      if (!std::isfinite(r) || !is_finite(s.fluid.q[c]))
        throw NumericalError("non-finite field value", grid.unravel(c));
      if (r <= ctrl.rho_min) {
        const auto ijk = grid.unravel(c);
        bool vacuum = true;
        for (int a = 0; a < 3 && vacuum; ++a)
          for (int side = -1; side <= 1; side += 2) {
            std::array<int, 3> nb = ijk;
            nb[a] += side;
            if (nb[a] < 0 || nb[a] >= n[a]) continue;
            if (s.fluid.rho[grid.index(nb[0], nb[1], nb[2])] > ctrl.rho_min) vacuum = false;
          }
        if (vacuum) throw PositivityError("vacuum stencil", ijk);
        continue;
      }
      const Vec3 v = relative_velocity(s.fluid.q[c] / r, grid.center(c), kin.omega, kin.xi);
      const double cs = pb.sound_speed(r);
      double adv = 0.0;
      for (int a = 0; a < 3; ++a) adv += (std::abs(v[a]) + cs) / grid.h(a);
      rate = std::max(rate, adv + (visc / r + 2.0 * model_.reg.d) * inv_h2);
    }
    return rate > 0.0 ? std::min(ctrl.cfl / rate, ctrl.dt_max) : ctrl.dt_max;
  }

  /// One Heun step. Updates s (fluid, M, t, omega, xi); returns floor activations.
  std::uint64_t step(CoupledState& s, double dt, const StepControl& ctrl) {
    const std::size_t cells = s.fluid.size();
    residual(s.fluid, s.M, k1_);
    stage_.rho.resize(cells);
    stage_.q.resize(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      stage_.rho[c] = s.fluid.rho[c] + dt * k1_.drho[c];
      stage_.q[c] = s.fluid.q[c] + dt * k1_.dq[c];
    }
    const Vec3 M1 = s.M + dt * k1_.dM;
    std::uint64_t floors = apply_floor(stage_, ctrl.rho_min);
    residual(stage_, M1, k2_);
    for (std::size_t c = 0; c < cells; ++c) {
      s.fluid.rho[c] = 0.5 * (s.fluid.rho[c] + stage_.rho[c] + dt * k2_.drho[c]);
      s.fluid.q[c] = 0.5 * (s.fluid.q[c] + stage_.q[c] + dt * k2_.dq[c]);
    }
    s.M = 0.5 * (s.M + M1 + dt * k2_.dM);
    floors += apply_floor(s.fluid, ctrl.rho_min);
    const std::size_t bad = s.fluid.first_invalid();
    if (bad < cells) throw NumericalError("non-finite field value after step", grid().unravel(bad));
    if (!is_finite(s.M)) throw NumericalError("non-finite angular momentum", {-1, -1, -1});
    s.t += dt;
    refresh_kinematics(s, model_.body);
    return floors;
  }

 private:
  static std::uint64_t apply_floor(FluidField& f, double rho_min) {
    std::uint64_t hits = 0;
    for (double& r : f.rho)
      if (r < rho_min) {
        r = rho_min;
        ++hits;
      }
    return hits;
  }

  Model model_;
  GhostedFields ghosted_;
  std::array<std::vector<double>, 3> frho_;
  std::array<std::vector<Vec3>, 3> fq_;
  std::vector<double> cs_;
  Tendency k1_, k2_;
  FluidField stage_;
};

inline Tendency spatial_residual(const CoupledState& s, const Model& model) {
  Solver solver(model);
  return solver.residual(s);
}

inline double cfl_dt(const CoupledState& s, const Model& model, const StepControl& ctrl) {
  return Solver(model).cfl_dt(s, ctrl);
}

/// Average of interior and ghost velocity on a wall face: the discrete boundary trace of u.
inline Vec3 wall_face_velocity(const GhostedFields& g, const CavityGrid& grid, const Kinematics& kin,
                               int axis, bool upper, int i, int j, int k) {
  std::array<int, 3> in{i, j, k};
  in[axis] = upper ? grid.n(axis) - 1 : 0;
  std::array<int, 3> gh = in;
  gh[axis] += upper ? 1 : -1;
  const Vec3 xi_in = grid.center(in[0], in[1], in[2]);
  Vec3 xg = xi_in;
  xg[axis] += (upper ? 1.0 : -1.0) * grid.h(axis);
  const Vec3 u_in = g.v[g.at(in[0], in[1], in[2])] + cross(kin.omega, xi_in) + kin.xi;
  const Vec3 u_gh = g.v[g.at(gh[0], gh[1], gh[2])] + cross(kin.omega, xg) + kin.xi;
  return 0.5 * (u_in + u_gh);
}

/// Running totals carried across steps and checkpoints.
struct RunStatus {
  double dissipation = 0.0;  ///< time integral of the dissipation rate
  std::uint64_t floor_hits = 0;
  std::uint64_t steps = 0;
};

/// Advances `s` to t_end. The observer is called as obs(state, status) at the start
/// and at every multiple of `interval` (and at t_end); steps are clipped to land on
/// those times exactly. `rate` maps a state to its dissipation rate, integrated by
/// the trapezoid rule into status.dissipation.
template <class Observer, class Rate>
void simulate(Solver& solver, CoupledState& s, double t_end, const StepControl& ctrl, double interval,
              RunStatus& status, Observer&& obs, Rate&& rate) {
  ctrl.validate();
  refresh_kinematics(s, solver.model().body);
  obs(static_cast<const CoupledState&>(s), static_cast<const RunStatus&>(status));
  if (!(t_end > s.t)) return;
  if (!(interval > 0.0)) interval = t_end;
  double d0 = rate(s);
  while (s.t < t_end) {
    double next = (std::floor(s.t / interval + 1e-9) + 1.0) * interval;
    if (next <= s.t) next += interval;
    const double target = next >= t_end - 1e-9 * interval ? t_end : next;
    while (s.t < target) {
      const double remaining = target - s.t;
      double dt = solver.cfl_dt(s, ctrl);
      const bool last = dt >= remaining * (1.0 - 1e-12) || remaining - dt <= 1e-9 * dt;
      if (last) dt = remaining;
      status.floor_hits += solver.step(s, dt, ctrl);
      if (last) s.t = target;
      ++status.steps;
      const double d1 = rate(s);
      status.dissipation += 0.5 * dt * (d0 + d1);
      d0 = d1;
    }
    obs(static_cast<const CoupledState&>(s), static_cast<const RunStatus&>(status));
  }
}

}  // namespace cavity_spin
