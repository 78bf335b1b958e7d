#pragma once

// Normalized conical Ricci flow on surfaces of revolution: curvature of the
// evolving conformal metric, semi-implicit time stepping with blow-up
// detection, Picard linearization, transport of the conformal potential, and
// the consistency diagnostics built on flow snapshots.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "conical/elliptic.hpp"
#include "conical/errors.hpp"
#include "conical/field.hpp"
#include "conical/grid.hpp"
#include "conical/operators.hpp"
#include "conical/parabolic.hpp"
#include "conical/surface.hpp"

namespace conical {

struct FlowHistoryRow {
  double t = 0.0;
  double volume = 0.0;
  double gauss_bonnet = 0.0;
  double sup_curvature = 0.0;
  double sup_u = 0.0;
  double energy = 0.0;
  double dt_energy_cumulative = 0.0;
};

// One evolving metric e^{2u} times the background, with its curvature cache,
// the fixed normalization r, the initial volume, and per-step diagnostics.
struct FlowState {
  double t = 0.0;
  SpectralField u;
  SpectralField curvature;
  double r = 0.0;
  double v0 = 0.0;
  // Normalized runs (r from the initial volume) project the volume back to
  // v0 after every step; runs with a caller-chosen r must not.
  bool volume_gauge = true;
  std::vector<FlowHistoryRow> history;
};

struct FlowSnapshot {
  double t = 0.0;
  SpectralField u;
  SpectralField curvature;
};

struct FlowRun {
  FlowState state;
  std::vector<FlowSnapshot> snapshots;
};

struct PicardResult {
  LinearTrajectory trajectory;
  std::vector<double> contraction_factors;
};

struct PotentialStep {
  double t = 0.0;
  SpectralField phi;
  double poisson_residual = 0.0;
};

struct CascadeResult {
  // sup over the reported snapshots of |d^l u / dt^l|, index l-1
  std::vector<double> sup_norms;
  // the derivative fields at the last reported snapshot
  std::vector<SpectralField> final_fields;
};

// r such that r/2 is the mean Gauss curvature of e^{2u0} times the background.
inline double normalization_constant(const ConeSurface& s, const SpectralField& u0) {
  const RadialGrid& g = *u0.grid();
  if (!(g.pole_at_zero() && g.pole_at_length()))
    throw PreconditionError(
        "normalization constant: defined for closed football surfaces only");
  TrigTable tt(working_theta_samples(u0.l_max()), u0.l_max());
  double v0 = integrate(
      map_pointwise(u0, [](double x) { return std::exp(2.0 * x); }, tt), s);
  constexpr double pi = 3.14159265358979323846;
  return 4.0 * pi * s.euler_characteristic() / v0;
}

class FlowSolver {
 public:
  // diagnostic_collar: curvature sup-norms and the equation-residual reports
  // are taken over rho in [collar, length - collar].  Inside the logarithmic
  // pole refinement the rows of the discrete Laplacian carry a mesh-grading
  // truncation that grows like 1/rho^2 relative to separable targets; the
  // flux-form evolution is unaffected, but pointwise second differences of
  // evolved fields are not trustworthy there and would drown the reports.
  FlowSolver(std::shared_ptr<const RadialGrid> grid, const ConeSurface& s, int l_max,
             double diagnostic_collar = 0.35)
      : grid_(std::move(grid)), surface_(s), stepper_(grid_, s, l_max),
        collar_(diagnostic_collar) {
    ktilde_ = SpectralField(grid_, l_max);
    auto& k0 = ktilde_.mode(0);
    for (std::size_t i = 0; i < grid_->size(); ++i)
      k0[i] = surface_.background_curvature(grid_->rho(i));
  }

  const OperatorSet& ops() const { return stepper_.ops(); }
  const TrigTable& trig() const { return stepper_.trig(); }
  const ConeSurface& surface() const { return surface_; }
  const SpectralField& background_curvature_field() const { return ktilde_; }

  // K = e^{-2u} (K_background - laplacian u), evaluated pointwise
  SpectralField gauss_curvature(const SpectralField& u) const {
    SpectralField rhs = ktilde_;
    rhs -= ops().laplacian(u);
    return pointwise_product(conformal_weight(u, -2.0), rhs, trig());
  }

  double volume(const SpectralField& u) const {
    return integrate(conformal_weight(u, 2.0), surface_);
  }

  // Sup over the reporting region: collocation nodes at least one collar
  // width away from every pole end.  See the constructor note.
  double collar_sup(const SpectralField& f) const {
    std::vector<double> vals = f.synthesize(trig());
    const std::size_t n = grid_->size();
    const std::size_t ntheta = vals.size() / n;
    const double lo = grid_->pole_at_zero() ? collar_ : 0.0;
    const double hi = grid_->length() - (grid_->pole_at_length() ? collar_ : 0.0);
    double worst = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      double rho = grid_->rho(i);
      if (rho < lo || rho > hi) continue;
      any = true;
      for (std::size_t j = 0; j < ntheta; ++j)
        worst = std::max(worst, std::abs(vals[i * ntheta + j]));
    }
    if (!any)
      throw PreconditionError("flow diagnostics: the collar excludes every node");
    return worst;
  }

  FlowState make_state(SpectralField u0) const {
    double r = normalization_constant(surface_, u0);
    return assemble(std::move(u0), r, true);
  }
  FlowState make_state(SpectralField u0, double r_explicit) const {
    return assemble(std::move(u0), r_explicit, false);
  }

  // One semi-implicit step: the diffusion coefficient e^{-2u} is frozen at
  // the step start and the forcing r/2 - e^{-2u} K_background with it; the
  // radial mean of the coefficient is treated implicitly, the rest by
  // converged sweeps.  A step whose sup|K| jumps by more than half is
  // rejected and retried at dt/2, down to dt_min.
  FlowState step_flow(FlowState state, double dt, double dt_min = 1e-8) const {
    if (!(dt > 0.0)) throw PreconditionError("flow step: dt must be positive");
    SpectralField a = conformal_weight(state.u, -2.0);
    double amin = min_sample(a);
    if (!(amin > 0.0))
      throw PreconditionError("flow step: conformal factor is not finite");

    LinearCoefficients coeffs;
    coeffs.a = frozen_provider(a);
    SpectralField forcing = pointwise_product(a, ktilde_, trig());
    forcing *= -1.0;
    forcing.add_constant(0.5 * state.r);
    coeffs.f = frozen_provider(std::move(forcing));
    coeffs.lambda_floor = 0.5 * amin;

    double sup_k = collar_sup(state.curvature);
    double h = dt;
    for (;;) {
      SpectralField unew = stepper_.step(state.u, coeffs, state.t, h);
      if (state.volume_gauge)
        unew.add_constant(0.5 * std::log(state.v0 / volume(unew)));
      SpectralField knew = gauss_curvature(unew);
      if (collar_sup(knew) <= 1.5 * sup_k) {
        double cum =
            state.history.empty() ? 0.0 : state.history.back().dt_energy_cumulative;
        SpectralField du = unew;
        du -= state.u;
        du *= 1.0 / h;
        cum += h * integrate_product(du, du, surface_);
        state.u = std::move(unew);
        state.curvature = std::move(knew);
        state.t += h;
        state.history.push_back(history_row(state, cum));
        return state;
      }
      h *= 0.5;
      if (h < dt_min)
        throw BlowUpError("flow step: curvature keeps jumping at the minimum "
                          "step size near t = " +
                          std::to_string(state.t) + "; treating as blow-up");
    }
  }

  FlowRun run(FlowState state, double t_end, double dt,
              std::size_t snapshot_stride = 1) const {
    if (!(dt > 0.0) || t_end < state.t)
      throw PreconditionError("flow run: need dt > 0 and t_end at or after start");
    if (snapshot_stride == 0) snapshot_stride = 1;
    FlowRun out;
    out.snapshots.push_back({state.t, state.u, state.curvature});
    std::size_t since = 0;
    while (state.t < t_end - 1e-12 * std::max(1.0, t_end)) {
      double h = std::min(dt, t_end - state.t);
      state = step_flow(std::move(state), h);
      if (++since == snapshot_stride) {
        out.snapshots.push_back({state.t, state.u, state.curvature});
        since = 0;
      }
    }
    if (out.snapshots.back().t != state.t)
      out.snapshots.push_back({state.t, state.u, state.curvature});
    out.state = std::move(state);
    return out;
  }

  // Picard iteration for the flow on [0, T]: each iterate solves the linear
  // equation with coefficient and forcing evaluated on the previous iterate's
  // trajectory (linear interpolation between stored step times).  Returns the
  // converged trajectory and the per-iteration contraction ratios.
  PicardResult picard_local_solve(const SpectralField& u0, double T, double dt,
                                  double tol, int max_iters) const {
    if (!(T > 0.0) || !(dt > 0.0) || !(tol > 0.0) || max_iters < 1)
      throw PreconditionError("picard: need positive T, dt, tol and iterations");
    double r = normalization_constant(surface_, u0);

    auto prev = std::make_shared<LinearTrajectory>();
    prev->times = {0.0, T};
    prev->fields = {u0, u0};
    double prev_diff = -1.0;
    std::vector<double> factors;

    for (int it = 0; it < max_iters; ++it) {
      double sup_prev = 0.0;
      for (const auto& f : prev->fields)
        sup_prev = std::max(sup_prev, f.sup_abs(trig()));

      LinearCoefficients coeffs;
      coeffs.a = [this, prev](double t) {
        return conformal_weight(sample_trajectory(*prev, t), -2.0);
      };
      coeffs.f = [this, prev, r](double t) {
        SpectralField a = conformal_weight(sample_trajectory(*prev, t), -2.0);
        SpectralField f = pointwise_product(a, ktilde_, trig());
        f *= -1.0;
        f.add_constant(0.5 * r);
        return f;
      };
      coeffs.lambda_floor = 0.5 * std::exp(-2.0 * sup_prev);

      auto cur = std::make_shared<LinearTrajectory>(stepper_.run(u0, coeffs, T, dt));
      double diff = 0.0;
      for (std::size_t n = 0; n < cur->times.size(); ++n) {
        SpectralField gap = cur->fields[n];
        gap -= sample_trajectory(*prev, cur->times[n]);
        diff = std::max(diff, gap.sup_abs(trig()));
      }
      if (prev_diff > 0.0) factors.push_back(diff / prev_diff);
      prev = std::move(cur);
      if (diff <= tol) return {std::move(*prev), std::move(factors)};
      prev_diff = diff;
    }
    throw PreconditionError(
        "picard: no convergence within the iteration budget; halve the window T");
  }

  // Transport of the conformal potential: phi' = r phi + 2u + 2 h0, advanced
  // by the exact exponential integrator with the source interpolated linearly
  // between snapshots.  Each step reports the sup-norm defect of the elliptic
  // relation laplacian(phi) = e^{2u} - v0/volume(background).
  std::vector<PotentialStep> evolve_potential(const std::vector<FlowSnapshot>& snaps,
                                              const SpectralField& h0,
                                              const SpectralField& phi0, double r,
                                              double v0) const {
    if (snaps.empty())
      throw PreconditionError("potential transport: empty snapshot sequence");
    double vtilde = background_volume(*grid_, surface_);
    std::vector<PotentialStep> out;
    SpectralField phi = phi0;
    out.push_back({snaps[0].t, phi, poisson_defect(phi, snaps[0].u, v0, vtilde)});
    for (std::size_t n = 1; n < snaps.size(); ++n) {
      double dt = snaps[n].t - snaps[n - 1].t;
      if (!(dt > 0.0))
        throw PreconditionError("potential transport: snapshot times must increase");
      double z = r * dt;
      SpectralField s_prev = source(snaps[n - 1].u, h0);
      SpectralField s_cur = source(snaps[n].u, h0);
      s_cur -= s_prev;  // now the source increment
      phi *= std::exp(z);
      phi.axpy(dt * phi1(z), s_prev);
      phi.axpy(dt * phi2(z), s_cur);
      out.push_back({snaps[n].t, phi, poisson_defect(phi, snaps[n].u, v0, vtilde)});
    }
    return out;
  }

  // Sup-norm defect of the derived curvature evolution equation
  // dK/dt = e^{-2u} laplacian K + K (2K - r), centered differences in time.
  std::vector<double> curvature_evolution_residual(
      const std::vector<FlowSnapshot>& snaps, double r) const {
    if (snaps.size() < 3)
      throw PreconditionError("curvature residual: need at least three snapshots");
    std::vector<double> out;
    for (std::size_t n = 1; n + 1 < snaps.size(); ++n)
      out.push_back(equation_defect(snaps[n - 1].curvature, snaps[n].curvature,
                                    snaps[n + 1].curvature, snaps[n].u,
                                    snaps[n + 1].t - snaps[n - 1].t,
                                    reaction_factor(snaps[n].curvature, 2.0, r),
                                    quadratic_sink(snaps[n].curvature, r, false)));
    return out;
  }

  // Same check one derivative up: w = dK/dt satisfies
  // dw/dt = e^{-2u} laplacian w + w (6K - 2r) - K (2K - r)^2.
  std::vector<double> curvature_rate_evolution_residual(
      const std::vector<FlowSnapshot>& snaps, double r) const {
    if (snaps.size() < 5)
      throw PreconditionError("curvature rate residual: need at least five snapshots");
    std::vector<SpectralField> w;
    w.reserve(snaps.size());
    for (const auto& s : snaps) {
      SpectralField lk = ops().laplacian(s.curvature);
      SpectralField val = pointwise_product(conformal_weight(s.u, -2.0), lk, trig());
      val += pointwise_product(s.curvature, reaction_factor(s.curvature, 2.0, r),
                               trig());
      w.push_back(std::move(val));
    }
    std::vector<double> out;
    for (std::size_t n = 1; n + 1 < snaps.size(); ++n)
      out.push_back(equation_defect(w[n - 1], w[n], w[n + 1], snaps[n].u,
                                    snaps[n + 1].t - snaps[n - 1].t,
                                    reaction_factor(snaps[n].curvature, 6.0, 2.0 * r),
                                    quadratic_sink(snaps[n].curvature, r, true)));
    return out;
  }

  // Time derivatives of u up to order four, evaluated spatially through the
  // recursion d^{l+1}u = e^{-2u} laplacian(d^l u) + P_l d^l u + Q_l with
  // P_l = r - 2 l du and the matching polynomial lower-order terms.
  CascadeResult time_derivative_cascade(const std::vector<FlowSnapshot>& snaps,
                                        int order_cap, double r,
                                        double delta = 0.1) const {
    if (order_cap < 1 || order_cap > 4)
      throw PreconditionError("time derivative cascade: order must be 1..4");
    if (snaps.empty())
      throw PreconditionError("time derivative cascade: empty snapshot sequence");
    CascadeResult res;
    res.sup_norms.assign(order_cap, 0.0);
    bool any = false;
    for (const auto& s : snaps) {
      if (s.t < delta) continue;
      any = true;
      auto d = derivative_ladder(s.u, order_cap, r);
      for (int l = 0; l < order_cap; ++l)
        res.sup_norms[l] = std::max(res.sup_norms[l], collar_sup(d[l]));
      res.final_fields = std::move(d);
    }
    if (!any)
      throw PreconditionError(
          "time derivative cascade: no snapshot at or after the report time");
    return res;
  }

  std::vector<SpectralField> derivative_ladder(const SpectralField& u, int order_cap,
                                               double r) const {
    SpectralField a = conformal_weight(u, -2.0);
    std::vector<SpectralField> d;
    d.reserve(order_cap);
    // du = e^{-2u} laplacian u + r/2 - e^{-2u} K_background
    {
      SpectralField rhs = ops().laplacian(u);
      rhs -= ktilde_;
      SpectralField d1 = pointwise_product(a, rhs, trig());
      d1.add_constant(0.5 * r);
      d.push_back(std::move(d1));
    }
    for (int l = 1; l < order_cap; ++l) {
      SpectralField next = pointwise_product(a, ops().laplacian(d[l - 1]), trig());
      SpectralField p = d[0];
      p *= -2.0 * l;
      p.add_constant(r);
      next += pointwise_product(p, d[l - 1], trig());
      if (l >= 2) {
        // Q_2 = 2 r du^2 - 4 du^3 - 2 du d2u
        SpectralField du2 = pointwise_product(d[0], d[0], trig());
        SpectralField q2 = du2;
        q2 *= 2.0 * r;
        q2.axpy(-4.0, pointwise_product(du2, d[0], trig()));
        q2.axpy(-2.0, pointwise_product(d[0], d[1], trig()));
        if (l == 2) {
          next += q2;
        } else {
          // Q_3 = 2 du (P_2 d2u + Q_2) + 4 r du d2u - 12 du^2 d2u
          //       - 6 d2u^2 - 2 du d3u
          SpectralField p2 = d[0];
          p2 *= -4.0;
          p2.add_constant(r);
          SpectralField inner = pointwise_product(p2, d[1], trig());
          inner += q2;
          SpectralField q3 = pointwise_product(d[0], inner, trig());
          q3 *= 2.0;
          SpectralField dud2 = pointwise_product(d[0], d[1], trig());
          q3.axpy(4.0 * r, dud2);
          q3.axpy(-12.0, pointwise_product(du2, d[1], trig()));
          q3.axpy(-6.0, pointwise_product(d[1], d[1], trig()));
          q3.axpy(-2.0, pointwise_product(d[0], d[2], trig()));
          next += q3;
        }
      }
      d.push_back(std::move(next));
    }
    return d;
  }

 private:
  SpectralField conformal_weight(const SpectralField& u, double c) const {
    return map_pointwise(u, [c](double x) { return std::exp(c * x); }, trig());
  }
  double min_sample(const SpectralField& f) const {
    SpectralField neg = f;
    neg *= -1.0;
    return -neg.max_value(trig());
  }
  FlowHistoryRow history_row(const FlowState& st, double cum) const {
    FlowHistoryRow row;
    row.t = st.t;
    row.volume = volume(st.u);
    row.gauss_bonnet = integrate(
        pointwise_product(st.curvature, conformal_weight(st.u, 2.0), trig()),
        surface_);
    row.sup_curvature = collar_sup(st.curvature);
    row.sup_u = st.u.sup_abs(trig());
    row.energy = dirichlet_energy(st.u, ops());
    row.dt_energy_cumulative = cum;
    return row;
  }
  FlowState assemble(SpectralField u0, double r, bool gauge) const {
    FlowState st;
    st.u = std::move(u0);
    st.curvature = gauss_curvature(st.u);
    st.r = r;
    st.v0 = volume(st.u);
    st.volume_gauge = gauge;
    st.history.push_back(history_row(st, 0.0));
    return st;
  }
  SpectralField source(const SpectralField& u, const SpectralField& h0) const {
    SpectralField s = u;
    s *= 2.0;
    s.axpy(2.0, h0);
    return s;
  }
  double poisson_defect(const SpectralField& phi, const SpectralField& u, double v0,
                        double vtilde) const {
    SpectralField lhs = ops().laplacian(phi);
    lhs -= conformal_weight(u, 2.0);
    lhs.add_constant(v0 / vtilde);
    return collar_sup(lhs);
  }
  // (e^z - 1)/z and (e^z - 1 - z)/z^2 with stable small-z branches
  static double phi1(double z) {
    if (std::abs(z) < 1e-5) return 1.0 + z * (0.5 + z / 6.0);
    return std::expm1(z) / z;
  }
  static double phi2(double z) {
    if (std::abs(z) < 1e-5) return 0.5 + z * (1.0 / 6.0 + z / 24.0);
    return (std::expm1(z) - z) / (z * z);
  }
  // c K - shift, used as the zeroth-order factor of the K and w equations
  SpectralField reaction_factor(const SpectralField& k, double c, double shift) const {
    SpectralField f = k;
    f *= c;
    f.add_constant(-shift);
    return f;
  }
  // 0 for the K equation, K (2K - r)^2 for the w equation
  SpectralField quadratic_sink(const SpectralField& k, double r, bool enabled) const {
    if (!enabled) return SpectralField(grid_, k.l_max());
    SpectralField lin = reaction_factor(k, 2.0, r);
    SpectralField out = pointwise_product(lin, lin, trig());
    return pointwise_product(k, out, trig());
  }
  // sup | (next - prev)/dt2 - e^{-2u} laplacian(mid) - reaction * mid + sink |
  double equation_defect(const SpectralField& prev, const SpectralField& mid,
                         const SpectralField& next, const SpectralField& u,
                         double dt2, const SpectralField& reaction,
                         const SpectralField& sink) const {
    SpectralField lhs = next;
    lhs -= prev;
    lhs *= 1.0 / dt2;
    lhs -= pointwise_product(conformal_weight(u, -2.0), ops().laplacian(mid), trig());
    lhs -= pointwise_product(reaction, mid, trig());
    lhs += sink;
    return collar_sup(lhs);
  }

  std::shared_ptr<const RadialGrid> grid_;
  ConeSurface surface_;
  LinearStepper stepper_;
  SpectralField ktilde_;
  double collar_;
};

}  // namespace conical
