#pragma once

#include "jmm/marcher.hpp"

namespace jmm {

// Wedge exterior with the edge on the z axis, o-face the half plane y = 0,
// x > 0, and the medium occupying azimuths [0, n pi].
struct WedgeGeom {
  double n = 1.75;
  Vec3 src{1.0, 1.0, 0.0};
  double c = 1.0;
};

enum class WedgeBranch { Direct, OReflection, NReflection, Diffraction };

struct ExactJet {
  double T = kNaN;
  Vec3 grad = Vec3::Constant(kNaN);
  Mat3 hess = Mat3::Constant(kNaN);
  bool in_shadow = false;  // value comes from edge diffraction
};

// Image of the source in the o-face (OReflection) or n-face (NReflection).
Vec3 wedge_image(const WedgeGeom& g, WedgeBranch br);

// True iff the segment [a, b] does not pass through the solid wedge.
bool wedge_segment_clear(const WedgeGeom& g, const Vec3& a, const Vec3& b);

// Edge point minimising the unfolded path y -> x_e -> x (closed form).
double wedge_edge_lambda(const Vec3& y, const Vec3& x);
// Same by golden-section search on [lo, hi], for cross-checking.
double wedge_edge_lambda_golden(const Vec3& y, const Vec3& x, double lo, double hi, double tol = 1e-13);

ExactJet wedge_exact(const Vec3& x, const WedgeGeom& g, WedgeBranch br);

// Eikonal of a point source for c(x) = v0 + v . (x - src).
double linear_speed_exact(const Vec3& x, const Vec3& src, double v0, const Vec3& v);

// Marches with every update minimised over the whole valid front. Limited to
// 1000 vertices.
std::vector<double> brute_front_marcher(const MeshTopo& mesh, const BoundaryLabels& labels,
                                        const SpeedModel& speed, int src_vertex, double r_fac);

}  // namespace jmm
