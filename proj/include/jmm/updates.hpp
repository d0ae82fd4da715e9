#pragma once

#include "jmm/interp.hpp"

namespace jmm {

// c(x) = c0 for constant speed, c(x) = c0 + v . (x - origin) for linear.
struct SpeedModel {
  enum class Kind { Constant, Linear } kind = Kind::Constant;
  double c0 = 1.0;
  Vec3 v = Vec3::Zero();
  Vec3 origin = Vec3::Zero();

  static SpeedModel constant(double c) { return {Kind::Constant, c, Vec3::Zero(), Vec3::Zero()}; }
  static SpeedModel linear(double v0, const Vec3& v, const Vec3& origin = Vec3::Zero()) {
    return {Kind::Linear, v0, v, origin};
  }
  bool is_constant() const { return kind == Kind::Constant || v.squaredNorm() == 0.0; }
  double speed(const Vec3& x) const { return kind == Kind::Constant ? c0 : c0 + v.dot(x - origin); }
  double slowness(const Vec3& x) const { return 1.0 / speed(x); }
  Vec3 grad_slowness(const Vec3& x) const {
    if (kind == Kind::Constant) return Vec3::Zero();
    double c = speed(x);
    return -v / (c * c);
  }
  Mat3 hess_slowness(const Vec3& x) const {
    if (kind == Kind::Constant) return Mat3::Zero();
    double c = speed(x);
    return 2.0 * v * v.transpose() / (c * c * c);
  }
};

struct UpdateResult {
  double T = kInf;
  Vec3 grad = Vec3::Constant(kNaN);
  Vec2 lam = Vec2::Zero();  // (lambda) for triangle updates, (lambda1, lambda2) for tetrahedra
  int dim = 0;              // 1 or 2
  // Triangle: [0] for lambda >= 0, [1] for lambda <= 1.
  // Tetrahedron: alpha (lambda1 >= 0), beta (lambda2 >= 0), gamma (lambda1 + lambda2 <= 1).
  std::array<double, 3> mult{0.0, 0.0, 0.0};
  int iterations = 0;
  bool converged = false;

  Vec3 x_lam(const Vec3& x0, const Vec3& x1) const { return x0 + lam[0] * (x1 - x0); }
  Vec3 x_lam(const Vec3& x0, const Vec3& x1, const Vec3& x2) const {
    return x0 + lam[0] * (x1 - x0) + lam[1] * (x2 - x0);
  }
  double max_mult() const { return std::max({mult[0], mult[1], mult[2]}); }
};

// (min edge length / diam)^2.
double update_tolerance(std::span<const double> edge_lengths, double diam);
double update_tolerance(double l_min, double diam);

// Hermite data on a segment: values and derivatives along x1 - x0.
struct SegmentData {
  double T0, T1, d0, d1;
};
SegmentData segment_data(const Jet& j0, const Jet& j1, const Vec3& x0, const Vec3& x1);

UpdateResult triangle_update(const SegmentData& seg, const Vec3& x0, const Vec3& x1, const Vec3& xhat,
                             double slowness);
UpdateResult triangle_update(const Jet& j0, const Jet& j1, const Vec3& x0, const Vec3& x1, const Vec3& xhat,
                             const SpeedModel& speed);

struct TetraOptions {
  double tol = 1e-8;  // step tolerance on lambda
  int max_iter = 50;
  std::optional<Vec2> warm_start;
};

UpdateResult tetra_update(const BBTri9& base, const Vec3& xhat, double slowness, const TetraOptions& opt = {});
UpdateResult tetra_update(const std::array<Jet, 3>& jets, const std::array<Vec3, 3>& x, const Vec3& xhat,
                          const SpeedModel& speed, const TetraOptions& opt = {});

// Simpson-rule line update along a quadratic ray from x0 to xhat.
struct LineVarc {
  double T;
  Vec3 grad;      // at xhat
  Vec3 xm;        // optimal midpoint
  int iterations;
  bool converged;
};
LineVarc line_update_varc(double T0, const Vec3& x0, const Vec3& xhat, const SpeedModel& speed);
// Value and gradient of the Simpson cost in the midpoint, for testing.
double line_cost_varc(double T0, const Vec3& x0, const Vec3& xm, const Vec3& xhat, const SpeedModel& speed,
                      Vec3* grad = nullptr);

UpdateResult tetra_update_varc(const BBTri9& base, const Vec3& xhat, const SpeedModel& speed, double tol,
                               int max_outer = 30);
UpdateResult triangle_update_varc(const SegmentData& seg, const Vec3& x0, const Vec3& x1, const Vec3& xhat,
                                  const SpeedModel& speed, double tol, int max_outer = 30);

// Quadratic surrogate fitted through 6 points of the plane and minimised over
// the standard simplex. Exposed for tests.
struct Quad2 {
  double c0, c1, c2, c11, c12, c22;  // c0 + c1 x + c2 y + c11 x^2 + c12 x y + c22 y^2
  double operator()(const Vec2& p) const {
    return c0 + c1 * p[0] + c2 * p[1] + c11 * p[0] * p[0] + c12 * p[0] * p[1] + c22 * p[1] * p[1];
  }
  Vec2 grad(const Vec2& p) const { return {c1 + 2 * c11 * p[0] + c12 * p[1], c2 + c12 * p[0] + 2 * c22 * p[1]}; }
};
Quad2 fit_quad2(const std::array<Vec2, 6>& nodes, const std::array<double, 6>& values);
Vec2 minimize_quad2_on_simplex(const Quad2& q);

// Multipliers for an optimum of a cost with gradient g at lambda in the
// standard simplex, using the conditions for the active constraints.
std::array<double, 3> simplex_multipliers(const Vec2& lam, const Vec2& g, double active_eps = 1e-12);

enum class UpdateVerdict { InteriorAccept, BoundaryPending, Reject };

// Orientation, local visibility at both ray ends, and the multiplier test.
// base holds 2 or 3 vertex ids; grads holds the parent gradients (entries
// with NaN are ignored).
UpdateVerdict check_update_physical(const UpdateResult& r, const MeshTopo& mesh, std::span<const int> base,
                                    std::span<const Vec3> grads, int xhat, double mult_tol);

// Mesh location of the optimum point of an update over the given base.
PointLocation optimum_location(const UpdateResult& r, const MeshTopo& mesh, std::span<const int> base);

}  // namespace jmm
