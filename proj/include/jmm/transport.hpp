#pragma once

#include "jmm/marcher.hpp"

#include <functional>

namespace jmm {

struct CurvaturePair {
  double k1 = kNaN, k2 = kNaN;  // |k1| >= |k2|; negative for a spreading front
  Vec3 q1 = Vec3::Constant(kNaN), q2 = Vec3::Constant(kNaN);
};

// Curvatures of the level set through a point from the Hessian of T
// restricted to the plane orthogonal to grad T, divided by the slowness.
CurvaturePair principal_curvatures(const Jet& jet, double slowness);

// Analytic Hessian of an edge-diffracted front at x: distance rho_d from the
// diffraction point along unit ray u, with the incident front at distance
// rho_in behind the edge (both radii of the diffracted front are known).
Mat3 edge_tube_hessian(const Vec3& t_e, const Vec3& u, double rho_d, double rho_in, double slowness);

struct HessianStats {
  int undefined = 0;
  int analytic = 0;
};
HessianStats hessian_cell_average(Branch& b);

struct AmplitudeStats {
  int undefined = 0;
  int from_bc = 0;
};
// bc(v) supplies the amplitude of boundary and tube vertices; vertices for
// which it returns nullopt are propagated along their plan.
using AmplitudeBc = std::function<std::optional<std::complex<double>>(int)>;
AmplitudeStats propagate_amplitude(Branch& b, const AmplitudeBc& bc);

// Point-source amplitude BC: A0/(c T) in the source tube.
AmplitudeBc point_source_amplitude(const Branch& b, std::complex<double> A0 = 1.0);

// Geometric interpolation of complex values: magnitudes multiply as
// powers, phases interpolate linearly after unwrapping to the first entry.
std::complex<double> geometric_interp(std::span<const std::complex<double>> a, std::span<const double> w);

std::optional<std::complex<double>> eval_amplitude(const Branch& b, const Vec3& x);

Vec3 slerp(const Vec3& t0, const Vec3& t1, double lam);

struct SwaResult {
  Vec3 q;
  int iterations = 0;
  double residual = kNaN;  // norm of the Riemannian gradient of the energy
  bool converged = false;
};
SwaResult spherical_weighted_average(std::span<const Vec3> p, std::span<const double> w, double tol = 1e-12,
                                     int max_iter = 500);
double swa_residual(const Vec3& q, std::span<const Vec3> p, std::span<const double> w);

enum class UnitField { TIn, TOut };
struct FieldStats {
  int hemisphere_violations = 0;
  int defined = 0;
};
// Replays the plan to fill t_in or t_out from the tube values.
FieldStats transport_unit_field(Branch& b, UnitField which);

}  // namespace jmm
