#include "jmm/utd.hpp"

#include <cmath>
#include <stdexcept>

namespace jmm {

namespace {

constexpr cplx I(0.0, 1.0);

// Power series of the integral of exp(-i y^2) over [0, x]; fine for x <= 3.
cplx fresnel_series(double x) {
  cplx sum = 0.0, term = x;  // (-i)^n x^(2n+1) / n!
  const double x2 = x * x;
  for (int n = 0; n < 200; ++n) {
    cplx add = term / double(2 * n + 1);
    sum += add;
    if (std::abs(add) < 1e-18 * std::max(1.0, std::abs(sum))) break;
    term *= -I * x2 / double(n + 1);
  }
  return sum;
}

// erfc(z) exp(z^2) sqrt(pi) by continued fraction (modified Lentz), Re z > 0.
cplx erfc_cf(cplx z) {
  // erfc(z) = exp(-z^2)/sqrt(pi) * 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
  const double tiny = 1e-300;
  cplx f = z, C = z, D = 0.0;
  for (int j = 1; j < 20000; ++j) {
    double a = 0.5 * j;
    D = z + a * D;
    if (std::abs(D) < tiny) D = tiny;
    C = z + a / C;
    if (std::abs(C) < tiny) C = tiny;
    D = 1.0 / D;
    cplx delta = C * D;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 / f;
}

}  // namespace

cplx fresnel_modified_negative(double x) {
  if (x < 0) throw std::domain_error("fresnel_modified_negative: x < 0");
  const cplx full = std::sqrt(kPi / 8.0) * cplx(1.0, -1.0);
  if (x <= 3.0) return full - fresnel_series(x);
  // Rotate the contour: F_-(x) = e^{-i pi/4} (sqrt(pi)/2) erfc(e^{i pi/4} x).
  const cplx rot = std::polar(1.0, kPi / 4);
  cplx z = rot * x;
  return std::conj(rot) * 0.5 * std::exp(-I * x * x) * erfc_cf(z);
}

cplx transition_F(double x) {
  if (!(x > 0)) throw std::domain_error("transition_F: x <= 0");
  double r = std::sqrt(x);
  return 2.0 * I * r * std::exp(I * x) * fresnel_modified_negative(r);
}

double edge_azimuth(const WedgeFrame& f, const Vec3& t) {
  Vec3 p = t - f.t_e.dot(t) * f.t_e;
  double n = p.norm();
  if (n < 1e-12) throw SolveError("grazing ray in edge frame");
  p /= n;
  double phi = std::atan2(f.n_o.dot(p), f.t_o.dot(p));
  if (phi < 0) phi += 2 * kPi;
  return phi;
}

WedgeAngles wedge_angles(const WedgeFrame& f, const Vec3& t_in, const Vec3& t_out) {
  WedgeAngles a;
  a.beta = std::acos(std::clamp(f.t_e.dot(t_out), -1.0, 1.0));
  a.phi_in = edge_azimuth(f, -t_in);
  a.phi_out = edge_azimuth(f, t_out);
  return a;
}

double length_parameter_L(double rho_diff, double rho_e, double rho1, double rho2, double beta) {
  if (rho_e == 0.0) throw SolveError("length parameter: zero rho_e");
  double sb = std::sin(beta);
  if (std::isinf(rho_e) && std::isinf(rho1) && std::isinf(rho2)) return rho_diff * sb * sb;
  auto ratio = [&](double r) { return std::isinf(r) ? 1.0 : r / (r + rho_diff); };
  double re_term = std::isinf(rho_e) ? 1.0 : (rho_e + rho_diff) / rho_e;
  return rho_diff * re_term * ratio(rho1) * ratio(rho2) * sb * sb;
}

int utd_N(double beta, int sign, double n) {
  return static_cast<int>(std::lround((beta + sign * kPi) / (2 * kPi * n)));
}

double utd_a(double beta, int sign, double n) {
  double c = std::cos((2 * kPi * n * utd_N(beta, sign, n) - beta) / 2);
  return 2 * c * c;
}

namespace {

// Conjugate of the printed transition function: the printed prefactor pairs
// with exp(+i k T), and so must F. F(0) = 0.
cplx F_conj(double x) {
  if (!(x > 0)) return 0.0;
  return std::conj(transition_F(x));
}

// cot((pi + sign*b)/(2n)) F(k L a^sign(b)).
cplx cot_term(double n, double kL, double b, int sign) {
  double z = (kPi + sign * b) / (2 * n);
  return std::cos(z) / std::sin(z) * F_conj(kL * utd_a(b, sign, n));
}

// Same, with the one-sided limit at a pole of the cotangent.
cplx cot_term_safe(double n, double kL, double b, int sign) {
  constexpr double eps = 1e-4;
  double arg = kPi + sign * b;
  double m = std::round(arg / (2 * kPi * n));
  double delta = arg - 2 * kPi * n * m;
  if (std::abs(delta) >= eps) return cot_term(n, kL, b, sign);
  double side = delta < 0 ? -1.0 : 1.0;
  auto at = [&](double d) {
    // b such that pi + sign*b = 2 pi n m + d
    double bb = sign * (2 * kPi * n * m + d - kPi);
    return cot_term(n, kL, bb, sign);
  };
  return 2.0 * at(side * eps) - at(side * 2 * eps);
}

}  // namespace

UtdTerms utd_D(double n, double k, double L, double beta, double phi_in, double phi_out, cplx R) {
  UtdTerms t;
  double sb = std::sin(beta);
  cplx pre = -std::polar(1.0, kPi / 4) / (2 * n * std::sqrt(2 * kPi * k) * sb);
  double bm = phi_out - phi_in, bp = phi_out + phi_in;
  double kL = k * L;
  t.D1 = pre * cot_term_safe(n, kL, bm, +1);
  t.D2 = pre * cot_term_safe(n, kL, bm, -1);
  t.D3 = pre * cot_term_safe(n, kL, bp, +1);
  t.D4 = pre * cot_term_safe(n, kL, bp, -1);
  t.F_arg = {kL * utd_a(bm, +1, n), kL * utd_a(bm, -1, n), kL * utd_a(bp, +1, n), kL * utd_a(bp, -1, n)};
  t.D = t.D1 + t.D2 + R * (t.D3 + t.D4);
  return t;
}

double diffraction_spreading(double rho_e, double rho_diff) {
  if (!(rho_diff > 0)) throw SolveError("diffraction spreading: rho_diff must be positive");
  if (std::isinf(rho_e)) return 1.0 / std::sqrt(rho_diff);
  return std::sqrt(rho_e / (rho_diff * (rho_e + rho_diff)));
}

cplx diffracted_amplitude_bc(cplx D, double rho_e, double rho_diff, cplx A_in) {
  return D * diffraction_spreading(rho_e, rho_diff) * A_in;
}

}  // namespace jmm
