#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <vector>

#include "conical/errors.hpp"
#include "conical/field.hpp"
#include "conical/operators.hpp"
#include "conical/surface.hpp"

namespace conical {

enum class Gauge {
  MeanZero,          // integral of u against the background volume form is 0
  OuterBoundaryZero, // the mean mode vanishes at the outer boundary
};

// Poisson solves against the mode operators.  Modes l >= 1 are plainly
// invertible.  The mean mode with pure flux ends is singular: constants span
// the kernel and the cell volumes span the left kernel (flux telescoping), so
// the right side is first projected onto the compatible part, one row is
// pinned, and a single defect-correction pass removes the elimination
// roundoff that the pinning lets in.
class PoissonSolver {
public:
  PoissonSolver(const OperatorSet& ops, const ConeSurface& surface)
      : ops_(&ops), surface_(surface),
        background_volume_(background_volume(*ops.grid(), surface)) {}

  const ConeSurface& surface() const { return surface_; }
  double reference_volume() const { return background_volume_; }

  // One mode of: laplacian u = rhs with natural ends.  flux_outer/flux_inner
  // prescribe the outward normal derivative on boundary ends (ignored at
  // poles).  For l = 0 the solution comes back with volume-weighted mean
  // zero, and *defect (when given) receives the volume pairing of the
  // incompatible part of the right side that had to be projected away.
  std::vector<double> solve_mode(int l, std::vector<double> rhs, double flux_outer = 0.0,
                                 double flux_inner = 0.0, double* defect = nullptr) const {
    const ModeOperator& op = ops_->op(l);
    const RadialGrid& grid = *ops_->grid();
    const std::size_t n = rhs.size();
    if (!grid.pole_at_length()) rhs[n - 1] -= flux_outer * op.boundary_flux_scale_outer();
    if (!grid.pole_at_zero()) rhs[0] -= flux_inner * op.boundary_flux_scale_inner();

    if (l >= 1) {
      if (defect) *defect = 0.0;
      Tridiagonal t(op.lo(), op.di(), op.up());
      return t.solve(rhs);
    }

    const auto& vol = op.vol();
    double vtot = 0.0, vr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      vtot += vol[i];
      vr += vol[i] * rhs[i];
    }
    if (defect) *defect = vr;
    const double shift = vr / vtot;
    for (std::size_t i = 0; i < n; ++i) rhs[i] -= shift;

    const std::size_t p = n / 2;
    auto lo = op.lo();
    auto di = op.di();
    auto up = op.up();
    lo[p] = 0.0;
    di[p] = 1.0;
    if (p + 1 < n) up[p] = 0.0;
    Tridiagonal t(std::move(lo), std::move(di), std::move(up));

    auto pinned = rhs;
    pinned[p] = 0.0;
    auto x = t.solve(pinned);

    // defect correction against the true (unpinned) operator
    std::vector<double> res;
    op.apply(x, res);
    double rshift = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      res[i] = rhs[i] - res[i];
      rshift += vol[i] * res[i];
    }
    rshift /= vtot;
    for (std::size_t i = 0; i < n; ++i) res[i] -= rshift;
    res[p] = 0.0;
    auto corr = t.solve(res);

    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += corr[i];
      mean += vol[i] * x[i];
    }
    mean /= vtot;
    for (std::size_t i = 0; i < n; ++i) x[i] -= mean;
    return x;
  }

  // Full spectral solve with homogeneous flux ends.  *defect receives the
  // mean-mode incompatibility as in solve_mode.
  SpectralField solve(const SpectralField& rhs, Gauge gauge, double* defect = nullptr) const {
    SpectralField out(rhs.grid(), rhs.l_max());
    out.mode(0) = solve_mode(0, rhs.mode(0), 0.0, 0.0, defect);
    for (int idx = 1; idx < mode_count(rhs.l_max()); ++idx) {
      ModeId id = mode_id(idx);
      out.mode(idx) = solve_mode(id.l, rhs.mode(idx));
    }
    apply_gauge(out, gauge);
    return out;
  }

  void apply_gauge(SpectralField& u, Gauge gauge) const {
    if (gauge == Gauge::MeanZero) {
      u.add_constant(-integrate(u, surface_) / background_volume_);
    } else {
      if (ops_->grid()->pole_at_length())
        throw PreconditionError(
            "poisson gauge: outer-boundary gauge requested on a closed surface");
      u.add_constant(-u.mode(0).back());
    }
  }

  // Dirichlet variant: the mode value is prescribed at the outer boundary
  // (and optionally at the inner boundary of an annulus) instead of a flux.
  std::vector<double> solve_mode_dirichlet(int l, std::vector<double> rhs, double outer_value,
                                           std::optional<double> inner_value = {}) const {
    const ModeOperator& op = ops_->op(l);
    const RadialGrid& grid = *ops_->grid();
    const std::size_t n = rhs.size();
    if (grid.pole_at_length())
      throw PreconditionError("poisson dirichlet: no outer boundary on a closed surface");
    if (inner_value && grid.pole_at_zero())
      throw PreconditionError("poisson dirichlet: inner value prescribed at a pole");

    auto lo = op.lo();
    auto di = op.di();
    auto up = op.up();
    lo[n - 1] = 0.0;
    di[n - 1] = 1.0;
    rhs[n - 1] = outer_value;
    if (inner_value) {
      di[0] = 1.0;
      up[0] = 0.0;
      rhs[0] = *inner_value;
    }
    Tridiagonal t(std::move(lo), std::move(di), std::move(up));
    return t.solve(rhs);
  }

private:
  const OperatorSet* ops_;
  ConeSurface surface_;
  double background_volume_;
};

// Radial potential of the background geometry: solves
//   laplacian h0 = r V0 / (2 Vref) - K_background
// with mean-zero gauge.  On a closed surface the solvability condition is the
// total-curvature identity r V0 = 4 pi chi, checked up front; on a surface
// with boundary the discrete compatibility of the right side is checked
// instead.
inline std::vector<double> potential_h0(const OperatorSet& ops, const ConeSurface& s, double r,
                                        double V0, double* defect = nullptr) {
  const RadialGrid& grid = *ops.grid();
  const double vref = background_volume(grid, s);
  const std::size_t n = grid.size();

  std::vector<double> rhs(n);
  for (std::size_t i = 0; i < n; ++i)
    rhs[i] = r * V0 / (2.0 * vref) - s.background_curvature(grid.rho(i));

  if (grid.pole_at_length()) {
    const double chi_term = 4.0 * std::numbers::pi * s.euler_characteristic();
    if (std::abs(r * V0 - chi_term) > 1e-6 * (1.0 + std::abs(chi_term)))
      throw PreconditionError("potential source: r*V0 must equal 4*pi*chi on a closed surface");
  } else {
    double vtot = 0.0, vr = 0.0;
    const auto& vol = ops.op(0).vol();
    for (std::size_t i = 0; i < n; ++i) {
      vtot += vol[i];
      vr += vol[i] * std::abs(rhs[i]);
    }
    double raw = 0.0;
    for (std::size_t i = 0; i < n; ++i) raw += vol[i] * rhs[i];
    if (std::abs(raw) > 1e-6 * (vr + 1.0))
      throw PreconditionError("potential source: right side incompatible with flux-free ends");
  }

  PoissonSolver ps(ops, s);
  auto h = ps.solve_mode(0, std::move(rhs), 0.0, 0.0, defect);
  const double mean = radial_integral(grid, s, h) / vref;
  for (auto& v : h) v -= mean;
  return h;
}

// Conformal potential of initial data: solves
//   laplacian phi0 = e^{2 u0} - V0 / Vref
// with mean-zero gauge, after checking that V0 really is the volume of the
// conformal metric of u0.
inline SpectralField potential_phi0(const SpectralField& u0, const OperatorSet& ops,
                                    const ConeSurface& s, const TrigTable& tt, double V0,
                                    double* defect = nullptr) {
  auto e2u = map_pointwise(u0, [](double v) { return std::exp(2.0 * v); }, tt);
  const double v_actual = integrate(e2u, s);
  if (std::abs(v_actual - V0) > 1e-6 * std::max(1.0, std::abs(V0)))
    throw PreconditionError("conformal potential: V0 does not match the volume of the data");
  const double vref = background_volume(*ops.grid(), s);
  e2u.add_constant(-V0 / vref);
  PoissonSolver ps(ops, s);
  return ps.solve(e2u, Gauge::MeanZero, defect);
}

} // namespace conical
