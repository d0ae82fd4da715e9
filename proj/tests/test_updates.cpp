#include "jmm/updates.hpp"

#include "jmm/oracle.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace jmm;

namespace {

// Planar fronts T(x) = s d.x with a base and a target placed so the exact
// characteristic through the target crosses the base at a chosen point.
struct PlaneWaveGen {
  std::mt19937_64 rng;
  std::uniform_real_distribution<double> U{-1.0, 1.0};
  explicit PlaneWaveGen(std::uint64_t s) : rng(s) {}
  Vec3 unit() {
    Vec3 v;
    do v = Vec3(U(rng), U(rng), U(rng));
    while (v.norm() < 0.2 || v.norm() > 1.0);
    return v.normalized();
  }
  double u01() { return 0.5 * (U(rng) + 1.0); }
};

Jet plane_jet(const Vec3& d, double s, const Vec3& x) { return Jet::with_grad(s * d.dot(x), s * d); }

}  // namespace

TEST(Updates, Tolerance) {
  EXPECT_DOUBLE_EQ(update_tolerance(0.1, 2.0), 0.0025);
  std::vector<double> l{0.3, 0.1, 0.2};
  EXPECT_DOUBLE_EQ(update_tolerance(l, 2.0), 0.0025);
}

TEST(Updates, TrianglePlaneWaveIsExact) {
  PlaneWaveGen gen(1);
  int tested = 0;
  for (int t = 0; t < 200; ++t) {
    Vec3 d = gen.unit();
    double s = 0.5 + gen.u01();
    Vec3 x0 = Vec3(gen.U(gen.rng), gen.U(gen.rng), gen.U(gen.rng)), x1 = x0 + 0.5 * gen.unit();
    double lam = 0.05 + 0.9 * gen.u01();
    Vec3 xhat = x0 + lam * (x1 - x0) + (0.2 + gen.u01()) * d;
    SpeedModel sp = SpeedModel::constant(1.0 / s);
    UpdateResult r = triangle_update(plane_jet(d, s, x0), plane_jet(d, s, x1), x0, x1, xhat, sp);
    ASSERT_TRUE(r.converged);
    EXPECT_NEAR(r.T, s * d.dot(xhat), 1e-10);
    EXPECT_LT((r.grad - s * d).norm(), 1e-6);
    EXPECT_NEAR(r.lam[0], lam, 1e-5);
    ++tested;
  }
  EXPECT_EQ(tested, 200);
}

TEST(Updates, TetraPlaneWaveIsExact) {
  PlaneWaveGen gen(2);
  for (int t = 0; t < 200; ++t) {
    Vec3 d = gen.unit();
    double s = 0.5 + gen.u01();
    std::array<Vec3, 3> x{Vec3(gen.U(gen.rng), gen.U(gen.rng), gen.U(gen.rng)), Vec3(), Vec3()};
    x[1] = x[0] + 0.5 * gen.unit();
    x[2] = x[0] + 0.5 * gen.unit();
    Vec3 nrm = (x[1] - x[0]).cross(x[2] - x[0]);
    if (nrm.norm() < 0.05 || std::abs(nrm.normalized().dot(d)) < 0.2) continue;
    double l1 = 0.05 + 0.4 * gen.u01(), l2 = 0.05 + 0.4 * gen.u01();
    Vec3 xhat = x[0] + l1 * (x[1] - x[0]) + l2 * (x[2] - x[0]) + (0.2 + gen.u01()) * d;
    SpeedModel sp = SpeedModel::constant(1.0 / s);
    UpdateResult r = tetra_update({plane_jet(d, s, x[0]), plane_jet(d, s, x[1]), plane_jet(d, s, x[2])}, x, xhat, sp);
    ASSERT_TRUE(r.converged);
    EXPECT_NEAR(r.T, s * d.dot(xhat), 1e-10);
    EXPECT_NEAR(r.lam[0], l1, 1e-5);
    EXPECT_NEAR(r.lam[1], l2, 1e-5);
    EXPECT_LT(r.max_mult(), 1e-8);
  }
}

TEST(Updates, TetraValueIsNeverBelowThePlaneWaveBound) {
  // T(x_lam) + s|xhat - x_lam| >= s d.xhat for every lam, so no update may
  // undercut the exact planar value.
  PlaneWaveGen gen(3);
  for (int t = 0; t < 200; ++t) {
    Vec3 d = gen.unit();
    std::array<Vec3, 3> x{Vec3(0, 0, 0), Vec3(0.5, 0, 0), Vec3(0, 0.5, 0)};
    Vec3 xhat(gen.U(gen.rng), gen.U(gen.rng), 0.3 + gen.u01());
    UpdateResult r = tetra_update({plane_jet(d, 1, x[0]), plane_jet(d, 1, x[1]), plane_jet(d, 1, x[2])}, x, xhat,
                                  SpeedModel::constant(1));
    EXPECT_GE(r.T, d.dot(xhat) - 1e-12);
  }
}

TEST(Updates, TetraPointSourceConvergesAtHighOrder) {
  // Base around p at distance ~h from the target; exact data from a point
  // source at the origin. The local error shrinks faster than h^2.5.
  const Vec3 p(1.0, 0.3, 0.2);
  std::vector<double> hs, errs;
  for (double h : {0.2, 0.1, 0.05, 0.025}) {
    std::array<Vec3, 3> x{p, p + h * Vec3(0, 1, 0), p + h * Vec3(0, 0, 1)};
    Vec3 xhat = p + h * Vec3(1, 0.3, 0.3);
    std::array<Jet, 3> j;
    for (int i = 0; i < 3; ++i) j[i] = Jet::with_grad(x[i].norm(), x[i].normalized());
    UpdateResult r = tetra_update(j, x, xhat, SpeedModel::constant(1));
    hs.push_back(h);
    errs.push_back(std::abs(r.T - xhat.norm()));
  }
  for (std::size_t i = 1; i < hs.size(); ++i) {
    double order = std::log(errs[i - 1] / errs[i]) / std::log(hs[i - 1] / hs[i]);
    EXPECT_GT(order, 2.5) << "h=" << hs[i];
  }
}

TEST(Updates, QuadraticSurrogateFitAndMinimiser) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(-1, 1);
  const std::array<Vec2, 6> nodes{Vec2(0, 0), Vec2(1, 0), Vec2(0, 1), Vec2(0.5, 0), Vec2(0.5, 0.5), Vec2(0, 0.5)};
  for (int t = 0; t < 100; ++t) {
    Quad2 q{U(rng), U(rng), U(rng), 0.1 + std::abs(U(rng)), 0.0, 0.1 + std::abs(U(rng))};
    q.c12 = 0.9 * std::sqrt(4 * q.c11 * q.c22) * U(rng);
    std::array<double, 6> vals;
    for (int i = 0; i < 6; ++i) vals[i] = q(nodes[i]);
    Quad2 f = fit_quad2(nodes, vals);
    EXPECT_NEAR(f.c0, q.c0, 1e-12);
    EXPECT_NEAR(f.c12, q.c12, 1e-11);
    Vec2 m = minimize_quad2_on_simplex(q);
    EXPECT_GE(m.minCoeff(), -1e-14);
    EXPECT_LE(m.sum(), 1 + 1e-14);
    // Grid oracle over the simplex.
    double best = kInf;
    const int n = 300;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; i + j <= n; ++j) best = std::min(best, q(Vec2(double(i) / n, double(j) / n)));
    EXPECT_LE(q(m), best + 1e-12);
    EXPECT_GE(q(m), best - 1e-4);
  }
}

TEST(Updates, SimplexMultipliers) {
  auto m = simplex_multipliers(Vec2(0.3, 0.3), Vec2(1, 1));
  EXPECT_EQ(m[0] + m[1] + m[2], 0.0);
  m = simplex_multipliers(Vec2(0, 0), Vec2(1, 2));
  EXPECT_DOUBLE_EQ(m[0], 1.0);
  EXPECT_DOUBLE_EQ(m[1], 2.0);
  m = simplex_multipliers(Vec2(0.5, 0.5), Vec2(-1, -1));
  EXPECT_DOUBLE_EQ(m[2], 1.0);
  m = simplex_multipliers(Vec2(0, 0.4), Vec2(-3, 0));
  EXPECT_DOUBLE_EQ(m[0], 0.0);
}

TEST(Updates, LineUpdateConstantAndLinearSpeed) {
  LineVarc c = line_update_varc(0.5, Vec3(0, 0, 0), Vec3(0.3, 0.4, 0), SpeedModel::constant(2.0));
  EXPECT_NEAR(c.T, 0.5 + 0.25, 1e-14);
  const Vec3 v(0.025, -0.025, 0.05);
  SpeedModel sp = SpeedModel::linear(1.0, v);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-1, 1);
  for (int t = 0; t < 50; ++t) {
    Vec3 xhat = 0.2 * Vec3(U(rng), U(rng), U(rng));
    LineVarc l = line_update_varc(0.0, Vec3::Zero(), xhat, sp);
    EXPECT_TRUE(l.converged);
    EXPECT_NEAR(l.T, linear_speed_exact(xhat, Vec3::Zero(), 1.0, v), 1e-8);
  }
}

TEST(Updates, LineCostGradientMatchesFiniteDifferences) {
  SpeedModel sp = SpeedModel::linear(1.0, Vec3(0.2, -0.1, 0.3));
  Vec3 x0(0, 0, 0), xhat(0.5, 0.2, -0.1);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> U(-0.1, 0.1);
  for (int t = 0; t < 20; ++t) {
    Vec3 xm = 0.5 * (x0 + xhat) + Vec3(U(rng), U(rng), U(rng));
    Vec3 g;
    line_cost_varc(0.0, x0, xm, xhat, sp, &g);
    for (int i = 0; i < 3; ++i) {
      Vec3 e = Vec3::Zero();
      e[i] = 1e-6;
      double fd = (line_cost_varc(0, x0, xm + e, xhat, sp) - line_cost_varc(0, x0, xm - e, xhat, sp)) / 2e-6;
      EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Updates, VariableSpeedReducesToConstant) {
  std::array<Vec3, 3> x{Vec3(1, 0, 0), Vec3(1, 0.2, 0), Vec3(1, 0, 0.2)};
  std::array<Jet, 3> j;
  for (int i = 0; i < 3; ++i) j[i] = Jet::with_grad(x[i].norm(), x[i].normalized());
  Vec3 xhat(1.2, 0.05, 0.05);
  BBTri9 base = build_tri9(j, x);
  UpdateResult a = tetra_update(base, xhat, 1.0);
  UpdateResult b = tetra_update_varc(base, xhat, SpeedModel::linear(1.0, Vec3::Zero()), 1e-10);
  EXPECT_NEAR(a.T, b.T, 1e-9);
  EXPECT_LT((a.lam - b.lam).norm(), 1e-5);
}

TEST(Updates, LinearSpeedTetraTracksTheExactEikonal) {
  const Vec3 v(0.025, -0.025, 0.05);
  SpeedModel sp = SpeedModel::linear(1.0, v);
  const Vec3 p(0.6, 0.1, -0.2);
  const double h = 0.05;
  std::array<Vec3, 3> x{p, p + h * Vec3(0, 1, 0), p + h * Vec3(0, 0, 1)};
  std::array<Jet, 3> j;
  for (int i = 0; i < 3; ++i) j[i] = point_source_jet(Vec3::Zero(), x[i], sp);
  Vec3 xhat = p + h * Vec3(1, 0.3, 0.3);
  UpdateResult r = tetra_update(j, x, xhat, sp);
  EXPECT_NEAR(r.T, linear_speed_exact(xhat, Vec3::Zero(), 1.0, v), 1e-6);
}

TEST(Updates, PhysicalityRejectsBackwardRays) {
  MeshTopo m = mesh_box(Vec3::Zero(), Vec3::Ones(), 0.5);
  int a = nearest_vertex(m, Vec3(0.5, 0.5, 0.5)), b = nearest_vertex(m, Vec3(0.5, 0.5, 1.0));
  int xh = nearest_vertex(m, Vec3(0.5, 0.5, 0.0));
  std::array<int, 2> base{a, b};
  UpdateResult r;
  r.dim = 1;
  r.lam = Vec2(0.0, 0.0);
  r.T = 1.0;
  // The ray arrives at xhat pointing away from the base: reject.
  r.grad = Vec3(0, 0, 1);
  std::array<Vec3, 2> g{Vec3(0, 0, 1), Vec3(0, 0, 1)};
  EXPECT_EQ(check_update_physical(r, m, base, g, xh, 1e-3), UpdateVerdict::Reject);
  r.grad = Vec3(0, 0, -1);
  std::array<Vec3, 2> g2{Vec3(0, 0, -1), Vec3(0, 0, -1)};
  EXPECT_NE(check_update_physical(r, m, base, g2, xh, 1e-3), UpdateVerdict::Reject);
}
