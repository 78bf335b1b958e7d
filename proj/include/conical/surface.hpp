#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace conical {

// Background surface of revolution with conical singularities: the metric is
// d rho^2 + f(rho)^2 d theta^2 with f(rho) ~ (beta+1) rho at a cone point, so
// the cone angle there is 2 pi (beta+1).  Both cone points of a football share
// one beta.  The disk has a single cone point and a boundary circle at rho = L.
class ConeSurface {
public:
  enum class Kind { Football, ConeDisk };

  static ConeSurface constant_curvature_football(double beta) {
    check_beta(beta);
    ConeSurface s;
    s.kind_ = Kind::Football;
    s.profile_ = Profile::Sine;
    s.beta_ = beta;
    s.length_ = kPi;
    return s;
  }

  // Football whose caps are exact cones (f = (beta+1) * dist) out to
  // (L - blend_width)/2 from each pole, joined across the middle by an
  // exponential bump blend, so the warp is smooth away from the cone points.
  static ConeSurface flat_capped_football(double beta, double blend_width = 1.5) {
    check_beta(beta);
    ConeSurface s;
    s.kind_ = Kind::Football;
    s.profile_ = Profile::FlatCap;
    s.beta_ = beta;
    s.length_ = kPi;
    if (!(blend_width > 0.2 && blend_width < s.length_ - 0.6))
      throw std::invalid_argument("surface: blend_width outside (0.2, L-0.6)");
    s.blend_lo_ = (s.length_ - blend_width) / 2.0;
    s.blend_hi_ = (s.length_ + blend_width) / 2.0;
    return s;
  }

  static ConeSurface cone_disk(double beta) {
    check_beta(beta);
    ConeSurface s;
    s.kind_ = Kind::ConeDisk;
    s.profile_ = Profile::Cone;
    s.beta_ = beta;
    s.length_ = 1.0;
    return s;
  }

  Kind kind() const { return kind_; }
  double beta() const { return beta_; }
  double length() const { return length_; }
  double cone_angle() const { return 2.0 * kPi * (beta_ + 1.0); }

  // chi(S, beta): topological chi plus the angle defects.  For the disk this
  // is diagnostic only (no closed-surface Gauss-Bonnet applies).
  double euler_characteristic() const {
    double chi_top = (kind_ == Kind::Football) ? 2.0 : 1.0;
    double defects = (kind_ == Kind::Football) ? 2.0 * beta_ : beta_;
    return chi_top + defects;
  }

  // warp factor of the revolution metric
  double warp(double rho) const {
    switch (profile_) {
      case Profile::Sine: return (beta_ + 1.0) * std::sin(rho);
      case Profile::Cone: return (beta_ + 1.0) * rho;
      case Profile::FlatCap: return (beta_ + 1.0) * flatcap_m(rho);
    }
    return 0.0;
  }

  double warp_derivative(double rho) const {
    switch (profile_) {
      case Profile::Sine: return (beta_ + 1.0) * std::cos(rho);
      case Profile::Cone: return (beta_ + 1.0);
      case Profile::FlatCap: return (beta_ + 1.0) * flatcap_m1(rho);
    }
    return 0.0;
  }

  // background Gauss curvature -f''/f
  double background_curvature(double rho) const {
    switch (profile_) {
      case Profile::Sine: return 1.0;
      case Profile::Cone: return 0.0;
      case Profile::FlatCap: {
        double m = flatcap_m(rho);
        if (m <= 0.0) return 0.0;
        return -flatcap_m2(rho) / m;
      }
    }
    return 0.0;
  }

  // conformal change of radial variable near the cone point at rho = 0:
  // rho = r^{beta+1}/(beta+1), where r is the Euclidean radius of the chart
  double conformal_radius_to_rho(double r) const {
    return std::pow(r, beta_ + 1.0) / (beta_ + 1.0);
  }
  double rho_to_conformal_radius(double rho) const {
    return std::pow((beta_ + 1.0) * rho, 1.0 / (beta_ + 1.0));
  }

  std::string preset_name() const {
    switch (profile_) {
      case Profile::Sine: return "football-cc";
      case Profile::FlatCap: return "football-flatcap";
      case Profile::Cone: return "conedisk";
    }
    return "?";
  }

private:
  enum class Profile { Sine, Cone, FlatCap };
  static constexpr double kPi = 3.14159265358979323846;

  static void check_beta(double beta) {
    if (!(beta > -1.0))
      throw std::invalid_argument("surface: beta must exceed -1 (cone angle positive)");
  }

  // transition phi(x)/(phi(x) + phi(1-x)) with phi = exp(-1/x): every
  // derivative vanishes at both ends, so the blended warp stays smooth and
  // high-order quadrature sees no hidden kinks at the blend edges
  static double bump(double x) { return std::exp(-1.0 / x); }
  static double bump1(double x) { return std::exp(-1.0 / x) / (x * x); }
  static double bump2(double x) {
    return std::exp(-1.0 / x) * (1.0 - 2.0 * x) / (x * x * x * x);
  }
  static double blend_s(double x) {
    double p = bump(x), q = bump(1.0 - x);
    return p / (p + q);
  }
  static double blend_s1(double x) {
    double p = bump(x), q = bump(1.0 - x);
    double p1 = bump1(x), q1 = -bump1(1.0 - x);
    double d = p + q;
    return (p1 * q - p * q1) / (d * d);
  }
  static double blend_s2(double x) {
    double p = bump(x), q = bump(1.0 - x);
    double p1 = bump1(x), q1 = -bump1(1.0 - x);
    double p2 = bump2(x), q2 = bump2(1.0 - x);
    double d = p + q;
    return (p2 * q - p * q2) / (d * d) -
           2.0 * (p1 * q - p * q1) * (p1 + q1) / (d * d * d);
  }

  // cap profile m(rho): rho near 0, L - rho near L, blended in the middle as
  // m = rho + s(x) (L - 2 rho); positivity holds because L - 2 rho and s - 1/2
  // change sign together
  double flatcap_m(double rho) const {
    if (rho <= blend_lo_) return rho;
    if (rho >= blend_hi_) return length_ - rho;
    double x = (rho - blend_lo_) / (blend_hi_ - blend_lo_);
    return rho + blend_s(x) * (length_ - 2.0 * rho);
  }
  double flatcap_m1(double rho) const {
    if (rho <= blend_lo_) return 1.0;
    if (rho >= blend_hi_) return -1.0;
    double w = blend_hi_ - blend_lo_;
    double x = (rho - blend_lo_) / w;
    return 1.0 + blend_s1(x) / w * (length_ - 2.0 * rho) - 2.0 * blend_s(x);
  }
  double flatcap_m2(double rho) const {
    if (rho <= blend_lo_ || rho >= blend_hi_) return 0.0;
    double w = blend_hi_ - blend_lo_;
    double x = (rho - blend_lo_) / w;
    return blend_s2(x) / (w * w) * (length_ - 2.0 * rho) - 4.0 * blend_s1(x) / w;
  }

  Kind kind_ = Kind::Football;
  Profile profile_ = Profile::Sine;
  double beta_ = 0.0;
  double length_ = kPi;
  double blend_lo_ = 0.0, blend_hi_ = 0.0;
};

} // namespace conical
