#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "conical/errors.hpp"
#include "conical/field.hpp"
#include "conical/grid.hpp"
#include "conical/operators.hpp"
#include "conical/surface.hpp"

namespace conical {

// Time-dependent coefficients of the linear model problem
//   du/dt = a lap u + b u + f
// as field providers on the run grid.  lambda_floor is the positive lower
// bound the a provider promises; every sample is checked against it.
// a_time_lipschitz is the declared bound on the time variation of a, recorded
// by run drivers for diagnostics (the uniqueness theory needs it finite).
struct LinearCoefficients {
  std::function<SpectralField(double)> a;
  std::function<SpectralField(double)> b;
  std::function<SpectralField(double)> f;
  double lambda_floor = 1e-10;
  double a_time_lipschitz = 0.0;
};

// Provider for a coefficient that is constant in space and time.
inline std::function<SpectralField(double)> constant_provider(
    std::shared_ptr<const RadialGrid> grid, int l_max, double value) {
  return [grid, l_max, value](double) {
    SpectralField out(grid, l_max);
    for (auto& v : out.mode(0)) v = value;
    return out;
  };
}

// Provider that returns the same field at every time.
inline std::function<SpectralField(double)> frozen_provider(SpectralField field) {
  return [field = std::move(field)](double) { return field; };
}

struct LinearTrajectory {
  std::vector<double> times;
  std::vector<SpectralField> fields;
};

// Field at time t by linear interpolation between stored snapshots, clamped
// to the ends of the record.
inline SpectralField sample_trajectory(const LinearTrajectory& traj, double t) {
  if (traj.fields.empty()) throw PreconditionError("trajectory sample: empty trajectory");
  if (t <= traj.times.front()) return traj.fields.front();
  if (t >= traj.times.back()) return traj.fields.back();
  auto it = std::upper_bound(traj.times.begin(), traj.times.end(), t);
  std::size_t hi = (std::size_t)(it - traj.times.begin());
  std::size_t lo = hi - 1;
  double w = (t - traj.times[lo]) / (traj.times[hi] - traj.times[lo]);
  SpectralField out = traj.fields[lo];
  out *= (1.0 - w);
  out.axpy(w, traj.fields[hi]);
  return out;
}

// Backward-Euler stepper for the linear problem.  The diffusion coefficient
// is frozen at the step start; its angular mean enters the per-mode implicit
// matrices and the angular remainder is folded in by fixed-point sweeps, so
// the converged step is implicit in the full pointwise coefficient.  That is
// what preserves the discrete comparison structure: each sweep solves
// M-matrix systems, and the limit satisfies the maximum principle of the
// pointwise-coefficient operator.  The sweeps contract when the angular
// variation of a stays below its angular mean.
class LinearStepper {
public:
  LinearStepper(std::shared_ptr<const RadialGrid> grid, const ConeSurface& s, int l_max)
      : grid_(std::move(grid)), surface_(s), ops_(grid_, s, l_max),
        tt_(working_theta_samples(l_max), l_max), l_max_(l_max) {}

  const OperatorSet& ops() const { return ops_; }
  const TrigTable& trig() const { return tt_; }
  const ConeSurface& surface() const { return surface_; }

  SpectralField step(const SpectralField& u, const LinearCoefficients& c, double t,
                     double dt) const {
    if (!(dt > 0.0)) throw PreconditionError("linear step: dt must be positive");
    if (!(c.lambda_floor > 0.0))
      throw PreconditionError("linear step: diffusion floor must be positive");

    SpectralField a = c.a(t);
    check_floor(a, c.lambda_floor);

    // explicit part, frozen at the step start
    SpectralField rhs = u;
    if (c.b) {
      SpectralField bu = pointwise_product(c.b(t), u, tt_);
      rhs.axpy(dt, bu);
    }
    if (c.f) rhs.axpy(dt, c.f(t));

    // per-mode implicit factorizations with the angular mean of a
    const std::vector<double>& abar = a.mode(0);
    std::vector<Tridiagonal> solvers = factor_implicit(abar, dt);

    SpectralField a_tail = a;
    for (auto& v : a_tail.mode(0)) v = 0.0;
    double tail_size = a_tail.sup_abs(tt_);

    SpectralField v = solve_all(solvers, rhs);
    if (tail_size == 0.0) return v;

    // fixed-point sweeps for the angular remainder dt (a - abar) lap v
    double scale = std::max(1.0, v.sup_abs(tt_));
    for (int sweep = 0; sweep < 80; ++sweep) {
      SpectralField forcing = pointwise_product(a_tail, ops_.laplacian(v), tt_);
      SpectralField next_rhs = rhs;
      next_rhs.axpy(dt, forcing);
      SpectralField next = solve_all(solvers, next_rhs);
      SpectralField inc = next - v;
      v = std::move(next);
      if (inc.sup_abs(tt_) <= 1e-13 * scale) return v;
    }
    throw BlowUpError("linear step: angular sweeps did not settle; reduce dt or the "
                      "angular variation of the coefficient");
  }

  // Advance from t = 0 to T, landing exactly on T with a short final step.
  LinearTrajectory run(SpectralField u0, const LinearCoefficients& c, double T,
                       double dt) const {
    if (!(T >= 0.0)) throw PreconditionError("linear run: horizon must be nonnegative");
    LinearTrajectory traj;
    traj.times.push_back(0.0);
    traj.fields.push_back(u0);
    double t = 0.0;
    SpectralField u = std::move(u0);
    while (t < T - 1e-12 * std::max(1.0, T)) {
      double h = std::min(dt, T - t);
      u = step(u, c, t, h);
      t += h;
      traj.times.push_back(t);
      traj.fields.push_back(u);
    }
    return traj;
  }

private:
  void check_floor(const SpectralField& a, double floor) const {
    auto values = a.synthesize(tt_);
    for (double v : values) {
      if (!std::isfinite(v))
        throw PreconditionError("linear step: diffusion coefficient is not finite");
      if (v < floor)
        throw PreconditionError("linear step: diffusion coefficient fell below its floor");
    }
  }

  std::vector<Tridiagonal> factor_implicit(const std::vector<double>& abar, double dt) const {
    std::vector<Tridiagonal> out;
    out.reserve((std::size_t)l_max_ + 1);
    for (int l = 0; l <= l_max_; ++l) {
      const ModeOperator& op = ops_.op(l);
      std::vector<double> lo = op.lo();
      std::vector<double> di = op.di();
      std::vector<double> up = op.up();
      for (std::size_t i = 0; i < di.size(); ++i) {
        lo[i] = -dt * abar[i] * lo[i];
        di[i] = 1.0 - dt * abar[i] * di[i];
        up[i] = -dt * abar[i] * up[i];
      }
      out.emplace_back(std::move(lo), std::move(di), std::move(up));
    }
    return out;
  }

  SpectralField solve_all(const std::vector<Tridiagonal>& solvers,
                          const SpectralField& rhs) const {
    SpectralField out(grid_, l_max_);
    for (int idx = 0; idx < mode_count(l_max_); ++idx)
      out.mode(idx) = solvers[(std::size_t)mode_id(idx).l].solve(rhs.mode(idx));
    return out;
  }

  std::shared_ptr<const RadialGrid> grid_;
  ConeSurface surface_;
  OperatorSet ops_;
  TrigTable tt_;
  int l_max_;
};

// Monotone C1 reparametrization of the annulus [1/k, 1]: constant on
// [1/k, 1/k+eps], the identity beyond 1/k+3eps, and a Hermite ramp in
// between whose slope stays below 3 (max 49/24).
inline double boundary_reparametrization(double rho, int k, double epsilon) {
  double lo = 1.0 / k;
  if (rho <= lo + epsilon) return lo;
  if (rho >= lo + 3.0 * epsilon) return rho;
  double x = (rho - lo - epsilon) / (2.0 * epsilon);
  // sigma(0)=0, sigma'(0)=0, sigma(1)=1, sigma'(1)=2/3, monotone on [0,1]
  double sigma = (3.0 - 2.0 * x) * x * x + (2.0 / 3.0) * (x - 1.0) * x * x;
  return lo + 3.0 * epsilon * sigma;
}

// Initial data for the truncated-annulus problems: compose with the boundary
// reparametrization so the data is flat near the inner circle.  Keeps the
// sup norm and at most quadruples the Dirichlet energy.
inline SpectralField modify_initial_data(const SpectralField& u0, int k, double epsilon) {
  const RadialGrid& grid = *u0.grid();
  if (grid.pole_at_zero() || grid.pole_at_length())
    throw PreconditionError("initial-data modification: needs an annulus grid");
  if (k < 2 || !(epsilon > 0.0) || 1.0 / k + 3.0 * epsilon >= 1.0)
    throw PreconditionError("initial-data modification: blend must fit inside the annulus");
  if (std::abs(grid.rho(0) * k - 1.0) > 1e-9)
    throw PreconditionError("initial-data modification: grid does not start at 1/k");

  const auto& nodes = grid.nodes();
  SpectralField out(u0.grid(), u0.l_max());
  for (int idx = 0; idx < mode_count(u0.l_max()); ++idx) {
    const auto& src = u0.mode(idx);
    auto& dst = out.mode(idx);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      double target = boundary_reparametrization(nodes[i], k, epsilon);
      auto it = std::upper_bound(nodes.begin(), nodes.end(), target);
      if (it == nodes.begin()) {
        dst[i] = src.front();
      } else if (it == nodes.end()) {
        dst[i] = src.back();
      } else {
        std::size_t hi = (std::size_t)(it - nodes.begin());
        std::size_t lo = hi - 1;
        double w = (target - nodes[lo]) / (nodes[hi] - nodes[lo]);
        dst[i] = (1.0 - w) * src[lo] + w * src[hi];
      }
    }
  }
  return out;
}

// Trajectory of the zero-flux problem on the annulus [1/k, 1].  The grid of
// u0 must be the restriction of a disk grid to that annulus; both ends then
// carry the natural zero-flux closure.
inline LinearTrajectory solve_neumann_disk(const SpectralField& u0,
                                           const LinearCoefficients& coeffs, int k, double T,
                                           double dt, const ConeSurface& s) {
  const RadialGrid& grid = *u0.grid();
  if (grid.pole_at_zero() || grid.pole_at_length())
    throw PreconditionError("zero-flux run: needs an annulus grid");
  if (std::abs(grid.rho(0) * k - 1.0) > 1e-9)
    throw PreconditionError("zero-flux run: grid does not start at 1/k");
  LinearStepper stepper(u0.grid(), s, u0.l_max());
  return stepper.run(u0, coeffs, T, dt);
}

// Closed form of the comparison bound
//   h(t) = e^{C1 t} (u0_sup + int_0^t e^{-C1 s} C2 ds),
// the supersolution of dh/dt = C1 h + C2: every linear run with
// |b| <= C1, |f| <= C2 stays below it.
inline double c0_comparison_bound(double b_sup, double f_sup, double u0_sup, double t) {
  if (t < 0.0) throw PreconditionError("comparison bound: time must be nonnegative");
  if (b_sup < 0.0 || f_sup < 0.0 || u0_sup < 0.0)
    throw PreconditionError("comparison bound: norms must be nonnegative");
  double growth = std::exp(b_sup * t);
  double kernel = (b_sup == 0.0) ? t : std::expm1(b_sup * t) / b_sup;
  return growth * u0_sup + f_sup * kernel;
}

struct EnergyMonitorRow {
  double time = 0.0;
  double dirichlet = 0.0;
  double dt_energy_cumulative = 0.0; // running time integral of |du/dt|^2 dV
};

// Per-snapshot Dirichlet energy and the running squared-time-derivative
// integral, with du/dt as the backward difference (consistent with the
// first-order stepping).
inline std::vector<EnergyMonitorRow> energy_monitor(const LinearTrajectory& traj,
                                                    const OperatorSet& ops,
                                                    const ConeSurface& s) {
  std::vector<EnergyMonitorRow> rows;
  rows.reserve(traj.fields.size());
  double cumulative = 0.0;
  for (std::size_t n = 0; n < traj.fields.size(); ++n) {
    if (n > 0) {
      double h = traj.times[n] - traj.times[n - 1];
      SpectralField du = traj.fields[n] - traj.fields[n - 1];
      du *= 1.0 / h;
      cumulative += h * integrate_product(du, du, s);
    }
    rows.push_back({traj.times[n], dirichlet_energy(traj.fields[n], ops), cumulative});
  }
  return rows;
}

} // namespace conical
