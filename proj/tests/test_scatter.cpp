#include "jmm/scatter.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace jmm;

namespace {

struct WedgeScene {
  MeshTopo m = mesh_box_wedge(4, 2, 1.75, 0.4);
  BoundaryLabels L = classify_boundary(m);
  int src = nearest_vertex(m, Vec3(1, 1, 0));
  SolveOptions so;
  WedgeScene() { so.r_fac = 0.3; }
  BranchTree tree(int jobs) {
    TreeOptions to;
    to.solve = so;
    to.jobs = jobs;
    return expand_tree(solve_point_source(m, L, SpeedModel::constant(1), src, so), to);
  }
};

bool same_bits(const Branch& a, const Branch& b) {
  if (a.n() != b.n()) return false;
  for (int v = 0; v < a.n(); ++v) {
    if (std::memcmp(&a.jets[v].T, &b.jets[v].T, sizeof(double))) return false;
    if (std::memcmp(a.jets[v].grad.data(), b.jets[v].grad.data(), 3 * sizeof(double))) return false;
    if (std::memcmp(&a.amp[v], &b.amp[v], sizeof(cplx))) return false;
    if (std::memcmp(&a.org[v], &b.org[v], sizeof(double))) return false;
  }
  return a.plan.order == b.plan.order;
}

}  // namespace

TEST(Scatter, WedgeTreeHasReflectionsAndTheEdge) {
  WedgeScene s;
  BranchTree t = s.tree(1);
  ASSERT_GE(t.branches.size(), 3u);
  EXPECT_EQ(t.label[0], "direct");
  EXPECT_EQ(t.parent[0], -1);
  bool edge = false, oface = false;
  for (std::size_t i = 1; i < t.branches.size(); ++i) {
    EXPECT_EQ(t.errors[i], "") << t.label[i];
    EXPECT_EQ(t.parent[i], 0);
    EXPECT_EQ(t.depth[i], 1);
    edge |= t.label[i] == "diffraction:0";
    const Branch& b = t.branches[i];
    if (b.bc.kind == BcDescriptor::Kind::Reflection) {
      EXPECT_EQ(t.label[i], "reflection:" + std::to_string(b.bc.facet));
      oface |= s.L.facets[b.bc.facet].normal.dot(Vec3(0, -1, 0)) > 0.999;
    }
  }
  EXPECT_TRUE(edge);
  EXPECT_TRUE(oface);
}

TEST(Scatter, ThreadCountDoesNotChangeTheTree) {
  WedgeScene s;
  BranchTree a = s.tree(1), b = s.tree(3);
  ASSERT_EQ(a.branches.size(), b.branches.size());
  EXPECT_EQ(a.label, b.label);
  for (std::size_t i = 0; i < a.branches.size(); ++i) EXPECT_TRUE(same_bits(a.branches[i], b.branches[i])) << i;
}

TEST(Scatter, ReflectionDoesNotSeeItsOwnFacet) {
  WedgeScene s;
  BranchTree t = s.tree(1);
  for (const Branch& b : t.branches)
    if (b.bc.kind == BcDescriptor::Kind::Reflection) EXPECT_FALSE(facet_visible(b, b.bc.facet));
}

TEST(Scatter, DepthZeroTreeIsTheRoot) {
  WedgeScene s;
  TreeOptions to;
  to.max_depth = 0;
  BranchTree t = expand_tree(solve_point_source(s.m, s.L, SpeedModel::constant(1), s.src, s.so), to);
  EXPECT_EQ(t.branches.size(), 1u);
}

TEST(Scatter, SingleBranchSuperpositionAtVertices) {
  MeshTopo m = mesh_box(Vec3(-1, -1, -1), Vec3(1, 1, 1), 0.4);
  BoundaryLabels L = classify_boundary(m);
  int src = nearest_vertex(m, Vec3::Zero());
  SolveOptions so;
  so.r_fac = 0.3;
  Branch b = solve_point_source(m, L, SpeedModel::constant(1), src, so);
  const double omega = 7.0;
  std::vector<Vec3> pts;
  std::vector<int> ids;
  for (int v = 0; v < m.num_verts(); ++v)
    if (v != src && b.amp_defined[v]) {
      pts.push_back(m.verts[v]);
      ids.push_back(v);
    }
  Superposition u = superpose({&b}, omega, pts);
  std::size_t covered = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    // Cells touching a vertex without amplitude are skipped.
    if (!u.mask[i]) continue;
    ++covered;
    cplx ex = b.amp[ids[i]] * std::exp(cplx(0, omega * b.jets[ids[i]].T));
    EXPECT_LT(std::abs(u.u[i] - ex), 1e-10 * std::max(1.0, std::abs(ex)));
  }
  EXPECT_GT(covered, pts.size() * 9 / 10);
  std::array<Vec3, 1> outside{Vec3(5, 0, 0)};
  EXPECT_EQ(superpose({&b}, omega, outside).mask[0], 0);
}

TEST(Scatter, DiffractedEffectiveAmplitudeIsMostlyFinite) {
  WedgeScene s;
  BranchTree t = s.tree(1);
  for (std::size_t i = 0; i < t.branches.size(); ++i) {
    if (t.branches[i].bc.kind != BcDescriptor::Kind::Diffraction) continue;
    auto eff = effective_amplitude(t.branches[i], 10.0);
    int finite = 0;
    for (const cplx& a : eff) finite += std::isfinite(a.real()) && std::isfinite(a.imag());
    EXPECT_GT(finite, t.branches[i].n() / 2);
  }
}
