#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "conical/field.hpp"
#include "conical/grid.hpp"
#include "conical/surface.hpp"

namespace conical {

// Thomas elimination for tridiagonal systems; no pivoting, which is safe for
// the M-matrices produced by the operators below.
class Tridiagonal {
public:
  Tridiagonal(std::vector<double> lo, std::vector<double> di, std::vector<double> up)
      : lo_(std::move(lo)), di_(std::move(di)), up_(std::move(up)) {
    factor();
  }

  std::size_t size() const { return di_.size(); }

  std::vector<double> solve(const std::vector<double>& rhs) const {
    const std::size_t n = size();
    std::vector<double> x(n);
    x[0] = rhs[0] / piv_[0];
    for (std::size_t i = 1; i < n; ++i) x[i] = (rhs[i] - lo_[i] * x[i - 1]) / piv_[i];
    for (std::size_t i = n - 1; i-- > 0;) x[i] -= cp_[i] * x[i + 1];
    return x;
  }

private:
  void factor() {
    const std::size_t n = di_.size();
    piv_.resize(n);
    cp_.resize(n ? n - 1 : 0);
    piv_[0] = di_[0];
    check_pivot(piv_[0]);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      cp_[i] = up_[i] / piv_[i];
      piv_[i + 1] = di_[i + 1] - lo_[i + 1] * cp_[i];
      check_pivot(piv_[i + 1]);
    }
  }
  static void check_pivot(double p) {
    if (!(std::abs(p) > 1e-300))
      throw std::runtime_error("tridiagonal solve: vanishing pivot (singular system)");
  }

  std::vector<double> lo_, di_, up_;
  std::vector<double> piv_, cp_;
};

// One Fourier mode of the cone Laplacian in flux form,
//   (L_l u)_i = [F_{i+1/2} - F_{i-1/2}] / vol_i - l^2 u_i / f_i^2 ,
// with interior faces F = f(midpoint) * (u_{i+1} - u_i) / h.  At a pole the
// face flux uses the exact flux of the leading harmonic dist^{l/(beta+1)}
// (zero for l = 0), which keeps the stencil second order at the pole despite
// the fractional exponent, and keeps solve matrices M-matrices.  Boundary-end
// rows build in homogeneous Neumann flux; prescribed flux enters through the
// right-hand side of a solve.
class ModeOperator {
public:
  ModeOperator(GridPtr grid, const ConeSurface& surface, int l)
      : grid_(std::move(grid)), l_(l) {
    build(surface);
  }

  int l() const { return l_; }
  const GridPtr& grid() const { return grid_; }
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& di() const { return di_; }
  const std::vector<double>& up() const { return up_; }
  const std::vector<double>& vol() const { return vol_; }
  double boundary_flux_scale_outer() const { return f_outer_ / vol_.back(); }
  double boundary_flux_scale_inner() const { return f_inner_ / vol_.front(); }

  // Evaluated in flux-difference form rather than against the assembled
  // diagonal: near a pole 1/vol is large enough that the cancellation in
  // di_ = -(lo_ + up_) - ... leaves visible noise on constants, while the
  // differences annihilate them exactly.
  void apply(const std::vector<double>& u, std::vector<double>& out) const {
    const std::size_t n = u.size();
    assert(n == di_.size());
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double v = local_[i] * u[i];
      if (i > 0) v += lo_[i] * (u[i - 1] - u[i]);
      if (i + 1 < n) v += up_[i] * (u[i + 1] - u[i]);
      out[i] = v;
    }
  }

  std::vector<double> apply(const std::vector<double>& u) const {
    std::vector<double> out;
    apply(u, out);
    return out;
  }

  // Dirichlet pairing of the discrete operator: the exact negative of
  // sum_i vol_i v_i (L u)_i for fields with no boundary flux.
  double energy_pairing(const std::vector<double>& u, const std::vector<double>& v) const {
    const std::size_t n = u.size();
    double e = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      double du = u[i + 1] - u[i], dv = v[i + 1] - v[i];
      e += face_[i] * du * dv;
    }
    for (std::size_t i = 0; i < n; ++i) e += mass_[i] * u[i] * v[i] * vol_[i];
    e += gamma0_ * u.front() * v.front();
    e += gammaL_ * u.back() * v.back();
    return e;
  }

private:
  void build(const ConeSurface& s) {
    const auto& rho = grid_->nodes();
    const auto& w = grid_->weights();
    const std::size_t n = rho.size();
    const double L = grid_->length();
    const double beta = s.beta();
    const double c = l_ / (beta + 1.0);
    const double delta = std::log(2.0) / grid_->nodes_per_annulus();

    lo_.assign(n, 0.0);
    di_.assign(n, 0.0);
    up_.assign(n, 0.0);
    vol_.resize(n);
    mass_.resize(n);
    face_.resize(n - 1);
    gamma0_ = gammaL_ = 0.0;
    f_inner_ = s.warp(rho.front());
    f_outer_ = s.warp(rho.back());

    for (std::size_t i = 0; i < n; ++i) {
      double fi = s.warp(rho[i]);
      vol_[i] = w[i] * fi;
      mass_[i] = (l_ == 0) ? 0.0 : (double)l_ * l_ / (fi * fi);
    }

    std::vector<double> fio(n - 1); // f/h per interior face
    for (std::size_t i = 0; i + 1 < n; ++i) {
      double h = rho[i + 1] - rho[i];
      fio[i] = s.warp(0.5 * (rho[i] + rho[i + 1])) / h;
    }
    face_ = fio;

    // Pole-end closures for l >= 1: the regular behaviors at the pole are
    // dist^c and dist^{c+2}, and the node's closure pair (gamma, vol) is
    // chosen so the row reproduces the operator exactly on both.  The cell
    // volume from that 2x2 solve is always positive; if the gamma it needs
    // turns negative (large c * delta, where the mode amplitude dist^c is
    // far below roundoff anyway) fall back to the plain harmonic-flux
    // closure on the truncated geometric cell, which keeps gamma >= 0 and
    // with it the M-matrix structure of the solves.
    // Returns {gamma, vol} given the pole distances of the node and its
    // neighbor, the warp at the connecting face, and the warp at the node.
    auto pole_closure = [&](double d0, double d1, double fmid,
                            double fnode) -> std::pair<double, double> {
      double h = d1 - d0;
      double t = d1 / d0;
      double fc = fmid * (std::pow(t, c) - 1.0) / h;
      double volx = fmid * d0 * d0 * (std::pow(t, c + 2.0) - std::pow(t, c)) /
                    (h * (4.0 * c + 4.0));
      double gax = fc - c * c * volx / (d0 * d0);
      if (gax >= 0.0) return {gax, volx};
      // Fallback: harmonic-flux closure on the truncated geometric cell.
      // Only reached at large c * delta, where dist^c at the node is far
      // below roundoff, so the O(delta) closure error there is immaterial.
      double dv = d0 * 0.5 * (1.0 + std::exp(-delta));
      double gamma = fnode * c * std::pow(dv, c - 1.0) / std::pow(d0, c);
      return {gamma, fnode * d0 * std::sinh(delta)};
    };
    if (grid_->pole_at_zero() && l_ >= 1) {
      double fmid = s.warp(0.5 * (rho[0] + rho[1]));
      auto [g, v] = pole_closure(rho[0], rho[1], fmid, s.warp(rho[0]));
      gamma0_ = g;
      vol_[0] = v;
    }
    if (grid_->pole_at_length() && l_ >= 1) {
      double fmid = s.warp(0.5 * (rho[n - 1] + rho[n - 2]));
      auto [g, v] =
          pole_closure(L - rho[n - 1], L - rho[n - 2], fmid, s.warp(rho[n - 1]));
      gammaL_ = g;
      vol_[n - 1] = v;
    }

    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      if (i > 0) {
        lo_[i] = fio[i - 1] / vol_[i];
        acc -= fio[i - 1] / vol_[i];
      }
      if (i + 1 < n) {
        up_[i] = fio[i] / vol_[i];
        acc -= fio[i] / vol_[i];
      }
      di_[i] = acc - mass_[i];
    }
    di_[0] -= gamma0_ / vol_[0];
    di_[n - 1] -= gammaL_ / vol_[n - 1];

    // non-flux part of the diagonal, for the difference-form apply
    local_.resize(n);
    for (std::size_t i = 0; i < n; ++i) local_[i] = -mass_[i];
    local_[0] -= gamma0_ / vol_[0];
    local_[n - 1] -= gammaL_ / vol_[n - 1];
  }

  GridPtr grid_;
  int l_;
  std::vector<double> lo_, di_, up_, vol_, mass_, face_, local_;
  double gamma0_ = 0.0, gammaL_ = 0.0;
  double f_inner_ = 0.0, f_outer_ = 0.0;
};

// Mode operators for l = 0..l_max on one grid/surface pair.
class OperatorSet {
public:
  OperatorSet(GridPtr grid, const ConeSurface& surface, int l_max)
      : grid_(grid), l_max_(l_max) {
    ops_.reserve((std::size_t)l_max + 1);
    for (int l = 0; l <= l_max; ++l) ops_.emplace_back(grid, surface, l);
  }

  const ModeOperator& op(int l) const { return ops_[(std::size_t)l]; }
  int l_max() const { return l_max_; }
  const GridPtr& grid() const { return grid_; }

  SpectralField laplacian(const SpectralField& u) const {
    assert(u.grid() == grid_ && u.l_max() <= l_max_);
    SpectralField out(u.grid(), u.l_max());
    std::vector<double> tmp;
    for (int idx = 0; idx < mode_count(u.l_max()); ++idx) {
      ModeId id = mode_id(idx);
      ops_[(std::size_t)id.l].apply(u.mode(idx), tmp);
      out.mode(idx) = tmp;
    }
    return out;
  }

private:
  GridPtr grid_;
  int l_max_;
  std::vector<ModeOperator> ops_;
};

namespace detail {
// Gregory endpoint correction for the composite trapezoid over one uniform
// block, with end differences through order min(7, n-1).  P holds the
// integrand samples in the block's own uniform coordinate (log distance for
// pole blocks, where the plain trapezoid would stall near 1e-6 relative:
// tau-derivatives of rho powers grow geometrically, so several correction
// orders are needed to clear 1e-9).
inline double gregory_correction(const std::vector<double>& P, double step) {
  static const double g[8] = {0.0,
                              1.0 / 12.0,
                              1.0 / 24.0,
                              19.0 / 720.0,
                              3.0 / 160.0,
                              863.0 / 60480.0,
                              275.0 / 24192.0,
                              33953.0 / 3628800.0};
  const std::size_t n = P.size();
  if (n < 2) return 0.0;
  const int q = (int)std::min<std::size_t>(7, n - 1);

  // forward differences at the left end, backward at the right
  std::vector<double> fwd(P.begin(), P.begin() + (q + 1));
  std::vector<double> bwd(P.end() - (q + 1), P.end());
  double corr = 0.0;
  double sign = -1.0;
  for (int k = 1; k <= q; ++k) {
    for (int i = 0; i + k <= q; ++i) fwd[i] = fwd[i + 1] - fwd[i];
    for (int i = q; i >= k; --i) bwd[i] = bwd[i] - bwd[i - 1];
    corr += g[k] * (bwd[q] + sign * fwd[0]);
    sign = -sign;
  }
  return -step * corr;
}
} // namespace detail

// integral over the surface of a purely radial integrand: 2 pi * sum w g f
// plus per-block Gregory endpoint corrections (high order on each smooth
// block) plus the analytic pole caps already folded into the weights.
inline double radial_integral(const RadialGrid& grid, const ConeSurface& s,
                              const std::vector<double>& g) {
  const auto& rho = grid.nodes();
  const auto& w = grid.weights();
  assert(g.size() == rho.size());
  double total = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) total += w[i] * s.warp(rho[i]) * g[i];

  for (const auto& b : grid.blocks()) {
    std::vector<double> P(b.last - b.first + 1);
    if (b.kind == RadialGrid::Block::Kind::LogUniform) {
      // d rho = dist d tau, ascending in the block's own log coordinate
      for (std::size_t i = b.first; i <= b.last; ++i) {
        double dist = b.descending ? grid.length() - rho[i] : rho[i];
        P[i - b.first] = g[i] * s.warp(rho[i]) * dist;
      }
      if (b.descending) std::reverse(P.begin(), P.end());
    } else {
      for (std::size_t i = b.first; i <= b.last; ++i)
        P[i - b.first] = g[i] * s.warp(rho[i]);
    }
    total += detail::gregory_correction(P, b.step);
  }
  return 2.0 * 3.14159265358979323846 * total;
}

// mode-paired radial integrand of the pointwise product a*b (theta integrated)
inline std::vector<double> pair_integrand(const SpectralField& a, const SpectralField& b) {
  assert(a.same_layout(b));
  std::vector<double> g(a.n_rho(), 0.0);
  for (std::size_t i = 0; i < a.n_rho(); ++i) {
    double v = a.mode(0)[i] * b.mode(0)[i];
    for (int l = 1; l <= a.l_max(); ++l)
      v += 0.5 * (a.mode(l, Trig::Cos)[i] * b.mode(l, Trig::Cos)[i] +
                  a.mode(l, Trig::Sin)[i] * b.mode(l, Trig::Sin)[i]);
    g[i] = v;
  }
  return g;
}

// total integral of u against the background volume form
inline double integrate(const SpectralField& u, const ConeSurface& s) {
  return radial_integral(*u.grid(), s, u.mode(0));
}

// integral of the pointwise product a*b against the background volume form
inline double integrate_product(const SpectralField& a, const SpectralField& b,
                                const ConeSurface& s) {
  return radial_integral(*a.grid(), s, pair_integrand(a, b));
}

inline double background_volume(const RadialGrid& grid, const ConeSurface& s) {
  std::vector<double> one(grid.size(), 1.0);
  return radial_integral(grid, s, one);
}

// Dirichlet energy of u in the background metric, evaluated as the exact
// bilinear form of the discrete Laplacian so that discrete integration by
// parts holds to roundoff.  Angular weights: 2 pi for the mean mode, pi for
// each cos/sin component.
inline double dirichlet_energy(const SpectralField& u, const OperatorSet& ops) {
  const double pi = 3.14159265358979323846;
  double e = 2.0 * pi * ops.op(0).energy_pairing(u.mode(0), u.mode(0));
  for (int l = 1; l <= u.l_max(); ++l) {
    e += pi * ops.op(l).energy_pairing(u.mode(l, Trig::Cos), u.mode(l, Trig::Cos));
    e += pi * ops.op(l).energy_pairing(u.mode(l, Trig::Sin), u.mode(l, Trig::Sin));
  }
  return e;
}

// discrete pairing integral of v against (L u) using the operator volumes,
// mode by mode with the same angular weights as dirichlet_energy
inline double pairing_integral(const SpectralField& v, const SpectralField& lu,
                               const OperatorSet& ops) {
  const double pi = 3.14159265358979323846;
  auto dot = [&](const std::vector<double>& a, const std::vector<double>& b, int l) {
    const auto& vol = ops.op(l).vol();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += vol[i] * a[i] * b[i];
    return s;
  };
  double e = 2.0 * pi * dot(v.mode(0), lu.mode(0), 0);
  for (int l = 1; l <= v.l_max(); ++l) {
    e += pi * dot(v.mode(l, Trig::Cos), lu.mode(l, Trig::Cos), l);
    e += pi * dot(v.mode(l, Trig::Sin), lu.mode(l, Trig::Sin), l);
  }
  return e;
}

} // namespace conical
