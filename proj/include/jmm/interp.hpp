#pragma once

#include "jmm/mesh.hpp"

#include <optional>

namespace jmm {

// Eikonal value with optional first and second derivatives at a point.
struct Jet {
  double T = kInf;
  Vec3 grad = Vec3::Constant(kNaN);
  Mat3 hess = Mat3::Constant(kNaN);
  bool grad_defined = false;
  bool hess_defined = false;

  static Jet value(double T) {
    Jet j;
    j.T = T;
    return j;
  }
  static Jet with_grad(double T, const Vec3& g) {
    Jet j;
    j.T = T;
    j.grad = g;
    j.grad_defined = true;
    return j;
  }
};

struct ValueDeriv {
  double value;
  double deriv;
};

// Cubic on [0,1] with endpoint values f0, f1 and endpoint derivatives d0, d1
// (derivatives taken with respect to lambda).
ValueDeriv hermite_cubic_1d(double f0, double f1, double d0, double d1, double lam);

// Cubic Bernstein-Bezier polynomial over a triangle. Ordinates are indexed by
// multi-index (i,j,k), i+j+k = 3, in the order given by tri_index().
struct BBTri9 {
  std::array<double, 10> b{};
  std::array<Vec3, 3> x;

  double eval(const std::array<double, 3>& bary) const;
  // Value, gradient and Hessian in the reduced coordinates (l1, l2) with
  // l0 = 1 - l1 - l2.
  void eval_reduced(double l1, double l2, double& f, Vec2& g, Mat2& H) const;
  // Gradient within the triangle plane (3-vector tangent to the plane).
  Vec3 grad(const std::array<double, 3>& bary) const;
  double ordinate(int i, int j, int k) const;
};

// Cubic Bernstein-Bezier polynomial over a tetrahedron, multi-index (i,j,k,l).
struct BBTet20 {
  std::array<double, 20> b{};
  std::array<Vec3, 4> x;

  double eval(const std::array<double, 4>& bary) const;
  // Partial derivatives with respect to each barycentric coordinate.
  std::array<double, 4> bb_grad(const std::array<double, 4>& bary) const;
  Vec3 grad(const std::array<double, 4>& bary) const;
  Mat3 hess(const std::array<double, 4>& bary) const;
  double ordinate(int i, int j, int k, int l) const;
  // The cubic restricted to the face opposite local vertex `skip`.
  BBTri9 face(int skip) const;
};

int tri_index(int i, int j, int k);
int tet_index(int i, int j, int k, int l);

// Throws SolveError if any gradient is undefined.
BBTri9 build_tri9(const std::array<Jet, 3>& jets, const std::array<Vec3, 3>& x);
BBTet20 build_tet20(const std::array<Jet, 4>& jets, const std::array<Vec3, 4>& x);

// Cubic spline over the mesh stored as vertex values, two ordinates per edge
// and one per face. Vertices without a gradient use linear edge ordinates.
struct EikonalSpline {
  const MeshTopo* mesh = nullptr;
  std::vector<double> vert;  // |V|
  std::vector<double> edge;  // 2|E|: [2e] near edges[e][0], [2e+1] near edges[e][1]
  std::vector<double> face;  // |F|

  std::size_t storage_size() const { return vert.size() + edge.size() + face.size(); }
  BBTet20 cell_element(int c) const;
  std::pair<double, double> ordinate_range(int c) const;
};

EikonalSpline build_spline(const MeshTopo& mesh, const std::vector<Jet>& jets);

struct SplineValue {
  double T;
  Vec3 grad;
  int cell;
};
// Throws MeshError outside the mesh.
SplineValue spline_eval(const EikonalSpline& s, const Vec3& x);

std::vector<int> level_set_bracket(const EikonalSpline& s, double tau);

// First point along origin + t dir, t >= 0, where the spline equals tau.
std::optional<Vec3> ray_levelset_intersect(const EikonalSpline& s, const Vec3& origin, const Vec3& dir, double tau);

}  // namespace jmm
