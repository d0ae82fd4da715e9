#pragma once

#include "jmm/types.hpp"

#include <complex>

namespace jmm {

using cplx = std::complex<double>;

// Integral of exp(-i y^2) over [x, inf), x >= 0.
cplx fresnel_modified_negative(double x);

// 2 i sqrt(x) exp(i x) F_-(sqrt(x)); throws std::domain_error for x <= 0.
cplx transition_F(double x);

// Edge-centred frame: tangent, o-face normal (into the medium), t_o = n_o x t_e
// along the o-face, and the wedge index n (exterior opening n*pi).
struct WedgeFrame {
  Vec3 t_e, n_o, t_o;
  double n = 2.0;
};

struct WedgeAngles {
  double beta = kNaN;
  double phi_in = kNaN;   // azimuth of the source side (reversed incident ray)
  double phi_out = kNaN;  // azimuth of the diffracted ray
};

// Throws SolveError for grazing rays (parallel to the edge).
WedgeAngles wedge_angles(const WedgeFrame& f, const Vec3& t_in, const Vec3& t_out);

// Azimuth of a direction in the edge frame, in [0, 2 pi).
double edge_azimuth(const WedgeFrame& f, const Vec3& t);

double length_parameter_L(double rho_diff, double rho_e, double rho1, double rho2, double beta);

// N minimising |beta + sign*pi - 2 pi n N| and the weight a = 2 cos^2((2 pi n N - beta)/2).
int utd_N(double beta, int sign, double n);
double utd_a(double beta, int sign, double n);

struct UtdTerms {
  cplx D, D1, D2, D3, D4;
  std::array<double, 4> F_arg{};  // k L a for each term
};

// Diffraction coefficient for field phase exp(+i k T). R is the face
// reflection coefficient (1 for sound-hard).
UtdTerms utd_D(double n, double k, double L, double beta, double phi_in, double phi_out, cplx R = 1.0);

// sqrt(rho_e / (rho_diff (rho_e + rho_diff))); rho_e may be infinite.
double diffraction_spreading(double rho_e, double rho_diff);

// D times the spreading factor times the incident amplitude at the edge.
cplx diffracted_amplitude_bc(cplx D, double rho_e, double rho_diff, cplx A_in);

}  // namespace jmm
