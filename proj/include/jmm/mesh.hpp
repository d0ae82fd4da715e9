#pragma once

#include "jmm/types.hpp"

#include <functional>
#include <optional>

namespace jmm {

// Tetrahedral mesh with derived incidence. Immutable once built.
struct MeshTopo {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 4>> cells;  // positively oriented
  std::vector<std::array<int, 2>> edges;  // lo < hi, lexicographically sorted
  std::vector<std::array<int, 3>> faces;  // ascending ids, lexicographically sorted
  std::vector<std::array<int, 2>> face_cells;  // [1] == -1 on the boundary
  std::vector<std::array<int, 4>> cell_faces;  // face opposite local vertex i
  std::vector<std::array<int, 6>> cell_edges;
  Csr vv;                   // sorted neighbours
  std::vector<int> vv_edge; // edge id parallel to vv.data
  Csr vc;                   // vertex -> cells (ascending)
  Csr ec;                   // edge -> cells (ascending)
  Csr vbf;                  // vertex -> boundary faces (ascending)
  std::vector<int> boundary_faces;
  std::vector<uint8_t> face_open;  // non-reflecting truncation boundary marker
  std::vector<uint8_t> vert_on_boundary;
  std::vector<uint8_t> edge_on_boundary;
  double h_avg = 0.0;
  double h_min = 0.0;
  double diam = 0.0;
  Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();

  // Uniform bucket grid over cell bounding boxes for point location.
  std::array<int, 3> grid_n{1, 1, 1};
  Vec3 grid_lo = Vec3::Zero(), grid_step = Vec3::Ones();
  Csr grid_cells;

  int num_verts() const { return static_cast<int>(verts.size()); }
  int num_cells() const { return static_cast<int>(cells.size()); }
  int edge_id(int a, int b) const;          // -1 if absent
  int face_id(int a, int b, int c) const;   // -1 if absent
  bool is_boundary_face(int f) const { return face_cells[f][1] < 0; }
  double cell_volume(int c) const;
  // Unit normal of boundary face f pointing out of the domain.
  Vec3 boundary_normal(int f) const;
  // Barycentric coordinates of x with respect to cell c.
  std::array<double, 4> barycentric(int c, const Vec3& x) const;
};

// Builds all derived structures and validates. Cells with negative volume are
// reoriented; degenerate cells, duplicates, dangling vertices, non-manifold
// faces and disconnected meshes throw MeshError.
MeshTopo make_mesh(std::vector<Vec3> verts, std::vector<std::array<int, 4>> cells);

// TetGen ASCII .node/.ele. Index base detected from the first node index.
MeshTopo load_mesh(const std::string& node_text, const std::string& ele_text);
// {"vertices": [[x,y,z],...], "cells": [[i,j,k,l],...]} with 0-based indices.
MeshTopo load_scene_json(const std::string& json_text);

// Marks boundary faces for which pred(centroid, outward normal) holds as
// non-reflecting truncation faces.
void mark_open_faces(MeshTopo& mesh, const std::function<bool(const Vec3&, const Vec3&)>& pred);

struct Facet {
  std::vector<int> faces;  // boundary face ids
  std::vector<int> verts;  // ascending
  Vec3 normal;             // outward from the domain
  Vec3 point;              // a point on the plane
  bool open = false;
  double area = 0.0;
};

struct EdgeChain {
  std::vector<int> verts;  // ordered along t_e
  std::vector<int> edges;  // edges[i] joins verts[i], verts[i+1]
  Vec3 t_e, n_o, n_n, t_o; // n_o, n_n point from the wedge solid into the domain
  double n_wedge = 2.0;
  int facet_o = -1, facet_n = -1;
};

struct BoundaryLabels {
  std::vector<int> face_facet;     // per mesh face, -1 for interior faces
  std::vector<Facet> facets;
  std::vector<EdgeChain> chains;
  std::vector<int> edge_chain;     // per mesh edge, -1 if not diffracting
  std::vector<int> vert_chain;     // per vertex, first chain containing it or -1
  std::vector<double> edge_dihedral;  // interior dihedral angle, boundary edges only (else NaN)

  bool edge_diffracting(int e) const { return edge_chain[e] >= 0; }
  bool vert_on_chain(int v) const { return vert_chain[v] >= 0; }
};

BoundaryLabels classify_boundary(const MeshTopo& mesh, double dihedral_tol = 1e-6);

struct PointLocation {
  enum class Kind { Vertex, Edge, Face, Cell } kind = Kind::Cell;
  int id = -1;   // vertex, edge, face or cell id
  Vec3 x = Vec3::Zero();

  static PointLocation vertex(const MeshTopo& m, int v) { return {Kind::Vertex, v, m.verts[v]}; }
  static PointLocation edge(int e, const Vec3& x) { return {Kind::Edge, e, x}; }
  static PointLocation face(int f, const Vec3& x) { return {Kind::Face, f, x}; }
  static PointLocation cell(int c, const Vec3& x) { return {Kind::Cell, c, x}; }
};

// True iff a short segment [x, x + eps t] stays in the closed mesh domain.
bool cone_contains(const MeshTopo& mesh, const PointLocation& loc, const Vec3& t);

struct CellHit {
  int cell = -1;
  std::array<double, 4> bary{};
};

// Lowest-id cell containing x (barycentric tolerance 1e-9); throws MeshError
// when x is outside.
CellHit cell_containing(const MeshTopo& mesh, const Vec3& x);
std::optional<CellHit> locate(const MeshTopo& mesh, const Vec3& x);

// Structured meshers. Each hex of the background grid is split into 6 tets.
struct SteinerPoint {
  bool enabled = false;
  Vec3 x = Vec3::Zero();
};

// Wedge exterior [-w/2,w/2]^2 x [-h/2,h/2] minus the wedge with opening
// n_wedge*pi measured from the o-face (the half plane y = 0, x > 0). The outer
// box faces are marked open. n_wedge = 2 yields a plain box.
MeshTopo mesh_box_wedge(double w, double h, double n_wedge, double target_edge,
                        SteinerPoint steiner = {});

// Axis-aligned box with reflecting walls.
MeshTopo mesh_box(const Vec3& lo, const Vec3& hi, double target_edge, SteinerPoint steiner = {});

// Two rooms joined by a door in a dividing wall, with a pillar in the second
// room. Used for smoke tests of the multi-branch pipeline.
MeshTopo mesh_building(double target_edge, SteinerPoint steiner = {});

// Index of the vertex closest to x.
int nearest_vertex(const MeshTopo& mesh, const Vec3& x);

// FNV-1a hash of vertex coordinates and cell indices.
std::uint64_t mesh_hash(const MeshTopo& mesh);

}  // namespace jmm
