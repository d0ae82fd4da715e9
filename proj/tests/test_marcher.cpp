#include "jmm/marcher.hpp"

#include "jmm/oracle.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <set>

using namespace jmm;

namespace {

Branch march_box_source(const MeshTopo& m, const BoundaryLabels& L, int src, double rfac, MarchOptions opt = {}) {
  Branch b = make_branch(m, L, SpeedModel::constant(1.0));
  init_point_source(b, src, rfac);
  march(b, opt);
  return b;
}

}  // namespace

TEST(Marcher, HeapMatchesOrderedSetOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(0, 1);
  for (int t = 0; t < 20; ++t) {
    const int n = 200;
    IndexedHeap h(n);
    std::set<std::pair<double, int>> oracle;
    std::vector<double> key(n, kInf);
    std::vector<char> popped(n, 0);
    for (int op = 0; op < 2000; ++op) {
      int v = static_cast<int>(rng() % n);
      if (U(rng) < 0.7) {
        // insert or decrease-key; popped ids never return, as in the marcher
        if (popped[v]) continue;
        double k = std::min(key[v], U(rng) * 10);
        oracle.erase({key[v], v});
        key[v] = k;
        oracle.insert({k, v});
        h.push_or_update(v, k);
      } else if (!oracle.empty()) {
        ASSERT_EQ(h.top(), oracle.begin()->second);
        int p = h.pop();
        EXPECT_EQ(p, oracle.begin()->second);
        popped[p] = 1;
        oracle.erase(oracle.begin());
      }
      ASSERT_EQ(h.size(), oracle.size());
    }
  }
}

TEST(Marcher, PointSourceInABoxIsAccurateAndOrdered) {
  MeshTopo m = mesh_box(Vec3(-1, -1, -1), Vec3(1, 1, 1), 0.2);
  BoundaryLabels L = classify_boundary(m);
  int src = nearest_vertex(m, Vec3(0.1, -0.2, 0.0));
  Branch b = march_box_source(m, L, src, 0.3);
  double e = 0, n = 0;
  for (int v = 0; v < m.num_verts(); ++v) {
    ASSERT_EQ(b.state[v], NodeState::Valid);
    double ex = (m.verts[v] - m.verts[src]).norm();
    e += std::abs(b.jets[v].T - ex);
    n += ex;
    if (b.frozen[v]) {
      // The tube plus one ring of neighbours.
      EXPECT_LE(ex, 0.3 + 0.2 * std::sqrt(3.0) + 1e-12);
      EXPECT_NEAR(b.jets[v].T, ex, 1e-14);
    }
  }
  EXPECT_LT(e / n, 2e-3);
  EXPECT_EQ(b.stats.order_violations, 0);
  // Marched vertices are accepted in nondecreasing T.
  double last = -kInf;
  for (int v : b.plan.order) {
    if (b.frozen[v]) continue;
    EXPECT_LE(last, b.jets[v].T + 1e-12);
    last = b.jets[v].T;
  }
}

TEST(Marcher, StateMachineInvariantsOnTestMeshes) {
  std::vector<MeshTopo> meshes;
  meshes.push_back(mesh_box(Vec3::Zero(), Vec3(1, 2, 1), 0.25));
  meshes.push_back(mesh_box_wedge(4, 2, 1.75, 0.5));
  meshes.push_back(mesh_box_wedge(4, 2, 1.25, 0.5));
  meshes.push_back(mesh_building(0.5));
  for (const auto& m : meshes) {
    BoundaryLabels L = classify_boundary(m);
    int src = 0;
    while (L.vert_on_chain(src)) ++src;
    MarchOptions opt;
    opt.check_invariants = true;
    Branch b = march_box_source(m, L, src, 0.1 * m.diam, opt);
    EXPECT_TRUE(state_layering_ok(b));
    EXPECT_TRUE(accept_order_is_permutation(b));
    EXPECT_TRUE(b.stats.caches_empty_at_end);
    EXPECT_EQ(b.stats.invariant_violations, 0);
  }
}

TEST(Marcher, RepeatedRunsAreBitwiseIdentical) {
  MeshTopo m = mesh_box_wedge(4, 2, 1.75, 0.4);
  BoundaryLabels L = classify_boundary(m);
  int src = nearest_vertex(m, Vec3(1, 1, 0));
  Branch a = march_box_source(m, L, src, 0.3), b = march_box_source(m, L, src, 0.3);
  for (int v = 0; v < m.num_verts(); ++v) {
    EXPECT_EQ(std::memcmp(&a.jets[v].T, &b.jets[v].T, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(a.jets[v].grad.data(), b.jets[v].grad.data(), 3 * sizeof(double)), 0);
  }
  EXPECT_EQ(a.plan.order, b.plan.order);
}

TEST(Marcher, FanMatchesBruteForceOnSmallMeshes) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(0, 1);
  for (int t = 0; t < 4; ++t) {
    MeshTopo m = t % 2 ? mesh_box_wedge(4, 2, t == 1 ? 1.5 : 1.75, 0.5)
                       : mesh_box(Vec3::Zero(), Vec3(1 + U(rng), 1 + U(rng), 1), 0.3);
    BoundaryLabels L = classify_boundary(m);
    int src;
    do src = static_cast<int>(rng() % m.num_verts());
    while (L.vert_on_chain(src));
    double rf = 0.1 * m.diam;
    Branch b = march_box_source(m, L, src, rf);
    auto Tb = brute_front_marcher(m, L, SpeedModel::constant(1), src, rf);
    double tol = 10 * update_tolerance(m.h_min, m.diam) * m.diam;
    for (int v = 0; v < m.num_verts(); ++v) EXPECT_LE(std::abs(b.jets[v].T - Tb[v]), tol);
  }
}

TEST(Marcher, OrgIsOneInAConvexBox) {
  MeshTopo m = mesh_box(Vec3::Zero(), Vec3::Ones(), 0.25);
  BoundaryLabels L = classify_boundary(m);
  Branch b = march_box_source(m, L, nearest_vertex(m, Vec3(0.5, 0.5, 0.5)), 0.2);
  compute_org(b);
  for (double o : b.org) EXPECT_NEAR(o, 1.0, 1e-12);
  EXPECT_EQ(reinit_shadow_zone(b), 0);
}

TEST(Marcher, ReinitReducesShadowError) {
  MeshTopo m = mesh_box_wedge(4, 2, 1.75, 0.25);
  BoundaryLabels L = classify_boundary(m);
  int src = nearest_vertex(m, Vec3(1, 1, 0));
  WedgeGeom g;
  g.src = m.verts[src];
  Branch b = march_box_source(m, L, src, 0.3);
  compute_org(b);
  auto shadow_err = [&](const Branch& br) {
    double e = 0;
    for (int v = 0; v < m.num_verts(); ++v) {
      ExactJet ex = wedge_exact(m.verts[v], g, WedgeBranch::Direct);
      if (ex.in_shadow && !L.vert_on_chain(v)) e += std::abs(br.jets[v].T - ex.T);
    }
    return e;
  };
  double before = shadow_err(b);
  int reset = reinit_shadow_zone(b);
  EXPECT_GT(reset, 0);
  EXPECT_LT(shadow_err(b), before);
  EXPECT_TRUE(accept_order_is_permutation(b));
}

TEST(Marcher, PointSourceJetLinearSpeed) {
  const Vec3 v(0.025, -0.025, 0.05);
  SpeedModel sp = SpeedModel::linear(1.0, v);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1, 1);
  for (int t = 0; t < 30; ++t) {
    Vec3 x(U(rng), U(rng), U(rng));
    Jet j = point_source_jet(Vec3::Zero(), x, sp);
    EXPECT_NEAR(j.T, linear_speed_exact(x, Vec3::Zero(), 1.0, v), 1e-14);
    for (int i = 0; i < 3; ++i) {
      Vec3 e = Vec3::Zero();
      e[i] = 1e-6;
      double fd = (linear_speed_exact(x + e, Vec3::Zero(), 1, v) - linear_speed_exact(x - e, Vec3::Zero(), 1, v)) / 2e-6;
      EXPECT_NEAR(j.grad[i], fd, 1e-7);
    }
    EXPECT_NEAR(j.grad.norm(), sp.slowness(x), 1e-12);
    EXPECT_LT((j.hess - j.hess.transpose()).norm(), 1e-6);
  }
}

TEST(Marcher, DefaultSourceRadius) {
  MeshTopo m = mesh_box(Vec3::Zero(), Vec3::Ones(), 0.5);
  EXPECT_DOUBLE_EQ(default_r_fac(m), 0.075 * m.diam);
}

TEST(Marcher, ReflectionBranchReproducesTheImageSource) {
  MeshTopo m = mesh_box(Vec3(-1, -1, -1), Vec3(1, 1, 1), 0.2);
  BoundaryLabels L = classify_boundary(m);
  int src = nearest_vertex(m, Vec3(0.2, 0.0, -0.2));
  Branch d = march_box_source(m, L, src, 0.3);
  int floor = -1;
  for (std::size_t f = 0; f < L.facets.size(); ++f)
    if (L.facets[f].normal[2] < -0.99) floor = static_cast<int>(f);
  ASSERT_GE(floor, 0);
  std::vector<Jet> inc;
  for (int v : L.facets[floor].verts) inc.push_back(Jet::with_grad(d.jets[v].T, d.jets[v].grad));
  Branch r = make_branch(m, L, SpeedModel::constant(1));
  init_reflection(r, floor, inc, 0.3);
  march(r);
  Vec3 img = m.verts[src];
  img[2] = -2 - img[2];
  double e = 0, n = 0;
  for (int v = 0; v < m.num_verts(); ++v) {
    double ex = (m.verts[v] - img).norm();
    e += std::abs(r.jets[v].T - ex);
    n += ex;
  }
  EXPECT_LT(e / n, 5e-3);
  EXPECT_TRUE(accept_order_is_permutation(r));
}
