#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "conical/field.hpp"
#include "conical/grid.hpp"
#include "conical/operators.hpp"

namespace conical {

struct AnnulusSup {
  int k;      // annulus 2^{-k-1} <= rho <= 2^{-k}
  double sup; // max |u| over grid nodes in the annulus (theta maximized)
  int nodes;  // radial nodes seen, annulus edges included
};

// sup profile of |values| over dyadic annuli toward the rho -> 0 pole; the
// grid places annulus edges on nodes, so edge suprema are sampled exactly
inline std::vector<AnnulusSup> dyadic_sup_profile_radial(const RadialGrid& grid,
                                                         const std::vector<double>& rowmax) {
  std::vector<AnnulusSup> out;
  const double tol = 1e-9;
  int k_max = RadialGrid::kFloorExp - 1;
  for (int k = 0; k <= k_max; ++k) {
    double lo = std::ldexp(1.0, -k - 1), hi = std::ldexp(1.0, -k);
    if (hi > grid.length() * (1 + tol)) continue;
    AnnulusSup a{k, 0.0, 0};
    for (std::size_t i = 0; i < grid.size(); ++i) {
      double r = grid.rho(i);
      if (r >= lo * (1 - tol) && r <= hi * (1 + tol)) {
        a.sup = std::max(a.sup, std::abs(rowmax[i]));
        ++a.nodes;
      }
    }
    if (a.nodes > 0) out.push_back(a);
  }
  return out;
}

inline std::vector<AnnulusSup> dyadic_sup_profile(const SpectralField& u, const TrigTable& tt) {
  auto tensor = u.synthesize(tt);
  const int n = tt.n_theta();
  std::vector<double> rowmax(u.n_rho(), 0.0);
  for (std::size_t i = 0; i < u.n_rho(); ++i) {
    double m = 0.0;
    const double* row = tensor.data() + i * (std::size_t)n;
    for (int j = 0; j < n; ++j) m = std::max(m, std::abs(row[j]));
    rowmax[i] = m;
  }
  return dyadic_sup_profile_radial(*u.grid(), rowmax);
}

struct DecayFit {
  double order;          // q in sup ~ rho^q
  double log_coefficient; // gamma in sup ~ rho^q |log rho|^gamma
  double log_coefficient_se;
  int annuli_used;
};

// Least-squares decay order from the innermost resolved annuli (the outermost
// of those dropped, since it carries the most contamination from higher-order
// terms).  "Resolved" means enough radial nodes and a sup above noise floor.
inline std::optional<DecayFit> decay_order_estimate(const std::vector<AnnulusSup>& profile,
                                                    int max_annuli = 8) {
  double global = 0.0;
  for (const auto& a : profile) global = std::max(global, a.sup);
  std::vector<const AnnulusSup*> usable;
  for (const auto& a : profile)
    if (a.nodes >= 3 && a.sup > 1e-280 && a.sup > 1e-14 * global) usable.push_back(&a);
  // innermost = largest k
  std::sort(usable.begin(), usable.end(),
            [](const AnnulusSup* a, const AnnulusSup* b) { return a->k > b->k; });
  if ((int)usable.size() > max_annuli) usable.resize((std::size_t)max_annuli);
  if (usable.size() < 5) return std::nullopt;
  // drop the outermost of the selected annuli
  usable.pop_back();

  // regress ln sup on (1, ln rho, ln |ln rho|) at annulus outer edges
  const std::size_t n = usable.size();
  std::vector<double> y(n), x1(n), x2(n);
  for (std::size_t i = 0; i < n; ++i) {
    double rho = std::ldexp(1.0, -usable[i]->k);
    y[i] = std::log(usable[i]->sup);
    x1[i] = std::log(rho);
    x2[i] = std::log(-std::log(rho));
  }
  // 3x3 normal equations
  double S[3][3] = {{(double)n, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  double b[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    double r[3] = {1.0, x1[i], x2[i]};
    for (int a = 0; a < 3; ++a) {
      b[a] += r[a] * y[i];
      for (int c = 0; c < 3; ++c) S[a][c] += (a == 0 && c == 0) ? 0.0 : r[a] * r[c];
    }
  }
  // gaussian elimination
  double M[3][4];
  for (int a = 0; a < 3; ++a) {
    for (int c = 0; c < 3; ++c) M[a][c] = S[a][c];
    M[a][3] = b[a];
  }
  for (int p = 0; p < 3; ++p) {
    int best = p;
    for (int r = p + 1; r < 3; ++r)
      if (std::abs(M[r][p]) > std::abs(M[best][p])) best = r;
    std::swap(M[p], M[best]);
    if (std::abs(M[p][p]) < 1e-14) return std::nullopt;
    for (int r = 0; r < 3; ++r) {
      if (r == p) continue;
      double fac = M[r][p] / M[p][p];
      for (int c = p; c < 4; ++c) M[r][c] -= fac * M[p][c];
    }
  }
  double beta0 = M[0][3] / M[0][0];
  double beta1 = M[1][3] / M[1][1];
  double beta2 = M[2][3] / M[2][2];

  // residual variance and the standard error of the log-correction coefficient
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double fit = beta0 + beta1 * x1[i] + beta2 * x2[i];
    rss += (y[i] - fit) * (y[i] - fit);
  }
  double dof = (double)n - 3.0;
  double sigma2 = dof > 0 ? rss / dof : 0.0;
  // (X^T X)^{-1}_{22} via Cramer on the original normal matrix
  double det = S[0][0] * (S[1][1] * S[2][2] - S[1][2] * S[2][1]) -
               S[0][1] * (S[1][0] * S[2][2] - S[1][2] * S[2][0]) +
               S[0][2] * (S[1][0] * S[2][1] - S[1][1] * S[2][0]);
  double cof22 = S[0][0] * S[1][1] - S[0][1] * S[1][0];
  double var2 = (std::abs(det) > 1e-30) ? sigma2 * cof22 / det : 1e300;

  DecayFit out;
  out.order = beta1;
  out.log_coefficient = beta2;
  out.log_coefficient_se = std::sqrt(std::max(0.0, var2));
  out.annuli_used = (int)n;
  return out;
}

// plain two-parameter fit (no log term), for routine order measurements
inline std::optional<double> decay_order_plain(const std::vector<AnnulusSup>& profile,
                                               int max_annuli = 8) {
  double global = 0.0;
  for (const auto& a : profile) global = std::max(global, a.sup);
  std::vector<const AnnulusSup*> usable;
  for (const auto& a : profile)
    if (a.nodes >= 3 && a.sup > 1e-280 && a.sup > 1e-14 * global) usable.push_back(&a);
  std::sort(usable.begin(), usable.end(),
            [](const AnnulusSup* a, const AnnulusSup* b) { return a->k > b->k; });
  if ((int)usable.size() > max_annuli) usable.resize((std::size_t)max_annuli);
  if (usable.size() < 3) return std::nullopt;
  if (usable.size() > 4) usable.pop_back();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = (double)usable.size();
  for (const auto* a : usable) {
    double x = -(double)a->k * std::log(2.0);
    double yv = std::log(a->sup);
    sx += x;
    sy += yv;
    sxx += x * x;
    sxy += x * yv;
  }
  double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-14) return std::nullopt;
  return (n * sxy - sx * sy) / denom;
}

} // namespace conical
