#include "jmm/mesh.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace jmm;

namespace {

MeshTopo unit_tet() {
  return make_mesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}, {{0, 1, 2, 3}});
}

// Random axis-aligned box meshes with an optional Steiner point.
struct BoxGen {
  std::mt19937_64 rng;
  explicit BoxGen(std::uint64_t seed) : rng(seed) {}
  MeshTopo next(Vec3* lo_out = nullptr, Vec3* hi_out = nullptr) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Vec3 lo(U(rng) - 0.5, U(rng) - 0.5, U(rng) - 0.5);
    Vec3 hi = lo + Vec3(0.5 + U(rng), 0.5 + U(rng), 0.5 + U(rng));
    SteinerPoint sp;
    if (U(rng) < 0.5) sp = {true, lo + (hi - lo).cwiseProduct(Vec3(U(rng), U(rng), U(rng)))};
    if (lo_out) *lo_out = lo;
    if (hi_out) *hi_out = hi;
    return mesh_box(lo, hi, 0.2 + 0.2 * U(rng), sp);
  }
};

}  // namespace

TEST(Mesh, SingleTetIncidence) {
  MeshTopo m = unit_tet();
  EXPECT_EQ(m.num_verts(), 4);
  EXPECT_EQ(m.edges.size(), 6u);
  EXPECT_EQ(m.faces.size(), 4u);
  EXPECT_EQ(m.boundary_faces.size(), 4u);
  for (int v = 0; v < 4; ++v) EXPECT_EQ(m.vv[v].size(), 3u);
  EXPECT_NEAR(m.cell_volume(0), 1.0 / 6.0, 1e-15);
  EXPECT_GE(m.edge_id(2, 1), 0);
  EXPECT_EQ(m.edge_id(0, 0), -1);
  EXPECT_GE(m.face_id(3, 1, 2), 0);
}

TEST(Mesh, NegativeCellIsReoriented) {
  MeshTopo m = make_mesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}, {{0, 2, 1, 3}});
  EXPECT_GT(m.cell_volume(0), 0.0);
}

TEST(Mesh, InvalidMeshesThrow) {
  std::vector<Vec3> x{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  EXPECT_THROW(make_mesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(0, 0, 1)}, {{0, 1, 2, 3}}), MeshError);
  auto dangling = x;
  dangling.push_back(Vec3(5, 5, 5));
  EXPECT_THROW(make_mesh(dangling, {{0, 1, 2, 3}}), MeshError);
  EXPECT_THROW(make_mesh(x, {{0, 1, 2, 3}, {0, 1, 2, 3}}), MeshError);
  EXPECT_THROW(make_mesh(x, {{0, 1, 2, 7}}), MeshError);
  auto two = x;
  for (const Vec3& p : x) two.push_back(p + Vec3(10, 0, 0));
  EXPECT_THROW(make_mesh(two, {{0, 1, 2, 3}, {4, 5, 6, 7}}), MeshError);
}

TEST(Mesh, RandomBoxesAreConsistent) {
  BoxGen gen(11);
  for (int t = 0; t < 12; ++t) {
    Vec3 lo, hi;
    MeshTopo m = gen.next(&lo, &hi);
    double vol = 0.0;
    for (int c = 0; c < m.num_cells(); ++c) {
      EXPECT_GT(m.cell_volume(c), 0.0);
      vol += m.cell_volume(c);
    }
    Vec3 d = hi - lo;
    EXPECT_NEAR(vol, d.prod(), 1e-12 * d.prod());
    // A ball: V - E + F - C = 1.
    long chi = long(m.num_verts()) - long(m.edges.size()) + long(m.faces.size()) - long(m.num_cells());
    EXPECT_EQ(chi, 1);
    for (int f : m.boundary_faces) {
      const auto& fv = m.faces[f];
      Vec3 cf = (m.verts[fv[0]] + m.verts[fv[1]] + m.verts[fv[2]]) / 3.0;
      const auto& cv = m.cells[m.face_cells[f][0]];
      Vec3 cc = (m.verts[cv[0]] + m.verts[cv[1]] + m.verts[cv[2]] + m.verts[cv[3]]) / 4.0;
      EXPECT_GT((cf - cc).dot(m.boundary_normal(f)), 0.0);
    }
    for (std::size_t i = 0; i + 1 < m.edges.size(); ++i) EXPECT_LT(m.edges[i], m.edges[i + 1]);
  }
}

TEST(Mesh, BarycentricAndLocation) {
  BoxGen gen(5);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int t = 0; t < 4; ++t) {
    Vec3 lo, hi;
    MeshTopo m = gen.next(&lo, &hi);
    for (int k = 0; k < 200; ++k) {
      Vec3 x = lo + (hi - lo).cwiseProduct(Vec3(U(rng), U(rng), U(rng)));
      CellHit h = cell_containing(m, x);
      double s = 0.0;
      Vec3 y = Vec3::Zero();
      for (int q = 0; q < 4; ++q) {
        EXPECT_GE(h.bary[q], -1e-9);
        s += h.bary[q];
        y += h.bary[q] * m.verts[m.cells[h.cell][q]];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
      EXPECT_LT((y - x).norm(), 1e-12);
    }
    EXPECT_FALSE(locate(m, hi + Vec3(1, 1, 1)).has_value());
    EXPECT_THROW(cell_containing(m, lo - Vec3(1, 0, 0)), MeshError);
  }
}

TEST(Mesh, BoxHasNoDiffractingEdges) {
  MeshTopo m = mesh_box(Vec3::Zero(), Vec3::Ones(), 0.25);
  BoundaryLabels L = classify_boundary(m);
  EXPECT_EQ(L.facets.size(), 6u);
  EXPECT_TRUE(L.chains.empty());
  for (int v = 0; v < m.num_verts(); ++v) EXPECT_FALSE(L.vert_on_chain(v));
  for (const auto& f : L.facets) EXPECT_NEAR(f.area, 1.0, 1e-12);
}

TEST(Mesh, WedgeHasOneChainOnTheZAxis) {
  for (double n : {1.25, 1.5, 1.75}) {
    MeshTopo m = mesh_box_wedge(4, 2, n, 0.5);
    BoundaryLabels L = classify_boundary(m);
    ASSERT_EQ(L.chains.size(), 1u);
    const EdgeChain& c = L.chains[0];
    EXPECT_NEAR(c.n_wedge, n, 1e-9);
    EXPECT_NEAR(std::abs(c.t_e[2]), 1.0, 1e-12);
    for (std::size_t i = 0; i < c.verts.size(); ++i) {
      const Vec3& x = m.verts[c.verts[i]];
      EXPECT_NEAR(std::hypot(x[0], x[1]), 0.0, 1e-12);
      if (i) EXPECT_GT(c.t_e.dot(x - m.verts[c.verts[i - 1]]), 0.0);
    }
    EXPECT_EQ(c.edges.size() + 1, c.verts.size());
    // The two wedge faces reflect, the truncation box does not.
    int reflecting = 0;
    for (const auto& f : L.facets) reflecting += !f.open;
    EXPECT_EQ(reflecting, 2);
    EXPECT_NEAR(L.facets[c.facet_o].normal.dot(c.n_o), -1.0, 1e-12);
  }
}

TEST(Mesh, BuildingSceneHasDiffractingEdges) {
  MeshTopo m = mesh_building(0.3);
  BoundaryLabels L = classify_boundary(m);
  EXPECT_FALSE(L.chains.empty());
  for (const auto& c : L.chains) EXPECT_NEAR(c.n_wedge, 1.5, 1e-9);
}

TEST(Mesh, TetgenParsingBothIndexBases) {
  std::string node1 = "4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n";
  std::string ele1 = "1 4 0\n1 1 2 3 4\n";
  std::string node0 = "# comment\n4 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 0 0 1\n";
  std::string ele0 = "1 4 0\n0 0 1 2 3\n";
  MeshTopo a = load_mesh(node1, ele1), b = load_mesh(node0, ele0);
  EXPECT_EQ(mesh_hash(a), mesh_hash(b));
  EXPECT_THROW(load_mesh("4 3 0 0\n1 0 0\n", ele1), MeshError);
}

TEST(Mesh, SceneJson) {
  MeshTopo m = load_scene_json(R"({"vertices": [[0,0,0],[1,0,0],[0,1,0],[0,0,1]], "cells": [[0,1,2,3]]})");
  EXPECT_EQ(m.num_cells(), 1);
  EXPECT_THROW(load_scene_json(R"({"vertices": []})"), MeshError);
}

TEST(Mesh, HashIsDeterministicAndSensitive) {
  MeshTopo a = mesh_box(Vec3::Zero(), Vec3::Ones(), 0.3), b = mesh_box(Vec3::Zero(), Vec3::Ones(), 0.3);
  EXPECT_EQ(mesh_hash(a), mesh_hash(b));
  MeshTopo c = mesh_box(Vec3::Zero(), Vec3(1, 1, 1.0000001), 0.3);
  EXPECT_NE(mesh_hash(a), mesh_hash(c));
}

TEST(Mesh, ConeContainsAtCornerAndFace) {
  MeshTopo m = mesh_box(Vec3::Zero(), Vec3::Ones(), 0.5);
  int corner = nearest_vertex(m, Vec3::Zero());
  auto loc = PointLocation::vertex(m, corner);
  EXPECT_TRUE(cone_contains(m, loc, Vec3(1, 1, 1).normalized()));
  EXPECT_TRUE(cone_contains(m, loc, Vec3(1, 0, 0)));
  EXPECT_FALSE(cone_contains(m, loc, Vec3(-1, 0.2, 0.3).normalized()));
  EXPECT_FALSE(cone_contains(m, loc, Vec3(0.1, 0.1, -1).normalized()));
}

TEST(Mesh, MarkOpenFaces) {
  MeshTopo m = mesh_box(Vec3::Zero(), Vec3::Ones(), 0.5);
  mark_open_faces(m, [](const Vec3&, const Vec3& n) { return n[2] > 0.5; });
  BoundaryLabels L = classify_boundary(m);
  int open = 0;
  for (const auto& f : L.facets) open += f.open;
  EXPECT_EQ(open, 1);
}

TEST(Mesh, NearestVertex) {
  MeshTopo m = mesh_box(Vec3::Zero(), Vec3::Ones(), 0.25);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-0.2, 1.2);
  for (int k = 0; k < 50; ++k) {
    Vec3 x(U(rng), U(rng), U(rng));
    int v = nearest_vertex(m, x);
    double best = kInf;
    for (const Vec3& y : m.verts) best = std::min(best, (y - x).norm());
    EXPECT_DOUBLE_EQ((m.verts[v] - x).norm(), best);
  }
}

TEST(Mesh, SteinerPointBecomesAVertex) {
  Vec3 p(0.37, 0.41, 0.55);
  MeshTopo m = mesh_box(Vec3::Zero(), Vec3::Ones(), 0.25, {true, p});
  EXPECT_LT((m.verts[nearest_vertex(m, p)] - p).norm(), 1e-14);
}
