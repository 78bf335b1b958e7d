#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "conical/grid.hpp"
#include "conical/surface.hpp"

namespace conical {

enum class Trig : int { Cos = 0, Sin = 1 };

// index of the (l, trig) component in the packed mode list:
// (0,cos), (1,cos), (1,sin), (2,cos), (2,sin), ...
inline int mode_index(int l, Trig t) {
  assert(l >= 0);
  assert(!(l == 0 && t == Trig::Sin));
  return l == 0 ? 0 : 2 * l - 1 + (int)t;
}
inline int mode_count(int l_max) { return 2 * l_max + 1; }

struct ModeId {
  int l;
  Trig trig;
};
inline ModeId mode_id(int index) {
  if (index == 0) return {0, Trig::Cos};
  return {(index + 1) / 2, (index % 2 == 1) ? Trig::Cos : Trig::Sin};
}

// Uniform angular sample count with dealiasing headroom for quadratic and
// exponential nonlinearities of band-limited fields.
inline int working_theta_samples(int l_max) { return 4 * (l_max + 1); }

// cos/sin tables for a uniform theta grid
class TrigTable {
public:
  TrigTable(int n_theta, int l_max) : n_(n_theta), l_max_(l_max) {
    cs_.resize((std::size_t)(l_max + 1) * n_theta);
    sn_.resize((std::size_t)(l_max + 1) * n_theta);
    for (int l = 0; l <= l_max; ++l)
      for (int j = 0; j < n_theta; ++j) {
        double th = 2.0 * kPi * j / n_theta;
        cs_[(std::size_t)l * n_theta + j] = std::cos(l * th);
        sn_[(std::size_t)l * n_theta + j] = std::sin(l * th);
      }
  }
  int n_theta() const { return n_; }
  int l_max() const { return l_max_; }
  double c(int l, int j) const { return cs_[(std::size_t)l * n_ + j]; }
  double s(int l, int j) const { return sn_[(std::size_t)l * n_ + j]; }

private:
  static constexpr double kPi = 3.14159265358979323846;
  int n_, l_max_;
  std::vector<double> cs_, sn_;
};

// Field on a cone surface, stored as Fourier modes in theta with radial node
// arrays: u(rho, theta) = sum_l a_l(rho) cos(l theta) + b_l(rho) sin(l theta).
class SpectralField {
public:
  SpectralField() = default;
  SpectralField(GridPtr grid, int l_max)
      : grid_(std::move(grid)), l_max_(l_max),
        data_((std::size_t)mode_count(l_max), std::vector<double>(grid_->size(), 0.0)) {
    if (l_max < 0) throw std::invalid_argument("field: l_max must be nonnegative");
  }

  const GridPtr& grid() const { return grid_; }
  int l_max() const { return l_max_; }
  std::size_t n_rho() const { return grid_->size(); }

  std::vector<double>& mode(int l, Trig t) { return data_[(std::size_t)mode_index(l, t)]; }
  const std::vector<double>& mode(int l, Trig t) const {
    return data_[(std::size_t)mode_index(l, t)];
  }
  std::vector<double>& mode(int idx) { return data_[(std::size_t)idx]; }
  const std::vector<double>& mode(int idx) const { return data_[(std::size_t)idx]; }

  bool same_layout(const SpectralField& o) const {
    return grid_ == o.grid_ && l_max_ == o.l_max_;
  }

  SpectralField& operator+=(const SpectralField& o) {
    assert(same_layout(o));
    for (std::size_t m = 0; m < data_.size(); ++m)
      for (std::size_t i = 0; i < data_[m].size(); ++i) data_[m][i] += o.data_[m][i];
    return *this;
  }
  SpectralField& operator-=(const SpectralField& o) {
    assert(same_layout(o));
    for (std::size_t m = 0; m < data_.size(); ++m)
      for (std::size_t i = 0; i < data_[m].size(); ++i) data_[m][i] -= o.data_[m][i];
    return *this;
  }
  SpectralField& operator*=(double c) {
    for (auto& v : data_)
      for (double& x : v) x *= c;
    return *this;
  }
  friend SpectralField operator+(SpectralField a, const SpectralField& b) { return a += b; }
  friend SpectralField operator-(SpectralField a, const SpectralField& b) { return a -= b; }
  friend SpectralField operator*(double c, SpectralField a) { return a *= c; }

  void axpy(double c, const SpectralField& o) {
    assert(same_layout(o));
    for (std::size_t m = 0; m < data_.size(); ++m)
      for (std::size_t i = 0; i < data_[m].size(); ++i) data_[m][i] += c * o.data_[m][i];
  }

  void add_constant(double c) {
    for (double& x : data_[0]) x += c;
  }

  double value(std::size_t i_rho, double theta) const {
    double v = data_[0][i_rho];
    for (int l = 1; l <= l_max_; ++l)
      v += mode(l, Trig::Cos)[i_rho] * std::cos(l * theta) +
           mode(l, Trig::Sin)[i_rho] * std::sin(l * theta);
    return v;
  }

  // values on the tensor grid (row i_rho, column j_theta), theta_j = 2 pi j / n
  std::vector<double> synthesize(const TrigTable& tt) const {
    assert(tt.l_max() >= l_max_);
    const int n = tt.n_theta();
    std::vector<double> out((std::size_t)n_rho() * n);
    for (std::size_t i = 0; i < n_rho(); ++i) {
      double* row = out.data() + i * n;
      const double a0 = data_[0][i];
      for (int j = 0; j < n; ++j) row[j] = a0;
      for (int l = 1; l <= l_max_; ++l) {
        const double al = mode(l, Trig::Cos)[i];
        const double bl = mode(l, Trig::Sin)[i];
        if (al == 0.0 && bl == 0.0) continue;
        for (int j = 0; j < n; ++j) row[j] += al * tt.c(l, j) + bl * tt.s(l, j);
      }
    }
    return out;
  }

  // Projection of tensor samples onto modes 0..l_max.  Exact for band-limited
  // data when n_theta exceeds the sum of the data band and l_max (no aliasing
  // overlap); requires at least 2 l_max + 2 samples.
  static SpectralField analyze(GridPtr grid, int l_max, const std::vector<double>& tensor,
                               const TrigTable& tt) {
    if (tt.n_theta() < 2 * l_max + 2)
      throw std::invalid_argument("field: analyze needs >= 2 l_max + 2 angular samples");
    const int n = tt.n_theta();
    if (tensor.size() != (std::size_t)grid->size() * n)
      throw std::invalid_argument("field: tensor sample count does not match grid");
    SpectralField f(std::move(grid), l_max);
    for (std::size_t i = 0; i < f.n_rho(); ++i) {
      const double* row = tensor.data() + i * n;
      double sum = 0.0;
      for (int j = 0; j < n; ++j) sum += row[j];
      f.data_[0][i] = sum / n;
      for (int l = 1; l <= l_max; ++l) {
        double ac = 0.0, as = 0.0;
        for (int j = 0; j < n; ++j) {
          ac += row[j] * tt.c(l, j);
          as += row[j] * tt.s(l, j);
        }
        f.mode(l, Trig::Cos)[i] = 2.0 * ac / n;
        f.mode(l, Trig::Sin)[i] = 2.0 * as / n;
      }
    }
    return f;
  }

  // sup of |u| over the tensor sampling
  double sup_abs(const TrigTable& tt) const {
    auto vals = synthesize(tt);
    double s = 0.0;
    for (double v : vals) s = std::max(s, std::abs(v));
    return s;
  }

  double max_value(const TrigTable& tt) const {
    auto vals = synthesize(tt);
    double s = -1e300;
    for (double v : vals) s = std::max(s, v);
    return s;
  }

  // largest |coefficient| over modes above l_cut (truncation tail indicator)
  double tail_magnitude(int l_cut) const {
    double s = 0.0;
    for (int l = l_cut; l <= l_max_; ++l) {
      for (double v : mode(l, Trig::Cos)) s = std::max(s, std::abs(v));
      for (double v : mode(l, Trig::Sin)) s = std::max(s, std::abs(v));
    }
    return s;
  }

private:
  GridPtr grid_;
  int l_max_ = 0;
  std::vector<std::vector<double>> data_;
};

// pointwise product via the tensor grid (dealiased by the table's headroom)
inline SpectralField pointwise_product(const SpectralField& a, const SpectralField& b,
                                       const TrigTable& tt) {
  assert(a.same_layout(b));
  auto ta = a.synthesize(tt);
  auto tb = b.synthesize(tt);
  for (std::size_t i = 0; i < ta.size(); ++i) ta[i] *= tb[i];
  return SpectralField::analyze(a.grid(), a.l_max(), ta, tt);
}

inline SpectralField map_pointwise(const SpectralField& a,
                                   const std::function<double(double)>& fn,
                                   const TrigTable& tt) {
  auto ta = a.synthesize(tt);
  for (double& v : ta) v = fn(v);
  return SpectralField::analyze(a.grid(), a.l_max(), ta, tt);
}

} // namespace conical
