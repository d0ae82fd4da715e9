#include "jmm/mesh.hpp"

#include <algorithm>
#include <cmath>

namespace jmm {

namespace {

struct Grid2 {
  std::vector<Vec2> verts;
  std::vector<std::array<int, 3>> tris;  // ascending vertex ids
};

// Uniform nx-by-ny grid over [x0,x1]x[y0,y1]. Each square is cut by its main
// diagonal, or by the anti-diagonal where anti(cx, cy) holds at its centre.
Grid2 grid2(double x0, double x1, int nx, double y0, double y1, int ny,
            const std::function<bool(double, double)>& anti) {
  Grid2 g;
  for (int i = 0; i <= nx; ++i)
    for (int j = 0; j <= ny; ++j) g.verts.emplace_back(x0 + (x1 - x0) * i / nx, y0 + (y1 - y0) * j / ny);
  auto id = [&](int i, int j) { return i * (ny + 1) + j; };
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      int a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
      Vec2 ctr = 0.25 * (g.verts[a] + g.verts[b] + g.verts[c] + g.verts[d]);
      std::array<int, 3> t1, t2;
      if (anti && anti(ctr[0], ctr[1])) {
        t1 = {a, b, d};
        t2 = {b, c, d};
      } else {
        t1 = {a, b, c};
        t2 = {a, c, d};
      }
      std::sort(t1.begin(), t1.end());
      std::sort(t2.begin(), t2.end());
      g.tris.push_back(t1);
      g.tris.push_back(t2);
    }
  return g;
}

// Extrudes the kept triangles through nz layers. Every prism is split into 3
// tets along the diagonals leaving the lowest global id, which makes shared
// quads conform. keep(tri index, layer) selects prisms.
MeshTopo extrude(const Grid2& g, double z0, double z1, int nz,
                 const std::function<bool(int, int)>& keep) {
  const int stride = nz + 1;
  auto gid = [&](int v2, int k) { return v2 * stride + k; };
  std::vector<std::array<int, 4>> cells;
  for (int t = 0; t < static_cast<int>(g.tris.size()); ++t) {
    auto [a, b, c] = g.tris[t];
    for (int k = 0; k < nz; ++k) {
      if (!keep(t, k)) continue;
      int A = gid(a, k), B = gid(b, k), C = gid(c, k);
      int A1 = gid(a, k + 1), B1 = gid(b, k + 1), C1 = gid(c, k + 1);
      cells.push_back({A, B, C, C1});
      cells.push_back({A, B, B1, C1});
      cells.push_back({A, A1, B1, C1});
    }
  }
  const int ntot = static_cast<int>(g.verts.size()) * stride;
  std::vector<int> remap(ntot, -1);
  for (const auto& c : cells)
    for (int v : c) remap[v] = 0;
  std::vector<Vec3> verts;
  for (int v = 0; v < ntot; ++v) {
    if (remap[v] < 0) continue;
    remap[v] = static_cast<int>(verts.size());
    const Vec2& p = g.verts[v / stride];
    verts.emplace_back(p[0], p[1], z0 + (z1 - z0) * (v % stride) / nz);
  }
  for (auto& c : cells)
    for (int& v : c) v = remap[v];
  return make_mesh(std::move(verts), std::move(cells));
}

// Splits every cell around the lowest-dimensional simplex holding sp.x (a
// cell, face or edge) by coning its facets to the new vertex, so the domain
// and the boundary are unchanged.
void insert_steiner(MeshTopo& m, const SteinerPoint& sp) {
  if (!sp.enabled) return;
  int near = nearest_vertex(m, sp.x);
  if ((m.verts[near] - sp.x).norm() <= 1e-12 * m.diam) return;
  CellHit hit = cell_containing(m, sp.x);
  std::vector<int> S;
  for (int q = 0; q < 4; ++q)
    if (hit.bary[q] > 1e-10) S.push_back(m.cells[hit.cell][q]);
  if (S.size() < 2) return;
  const int p = m.num_verts();
  auto verts = m.verts;
  verts.push_back(sp.x);
  auto has = [](const auto& arr, int v) { return std::find(arr.begin(), arr.end(), v) != arr.end(); };
  std::vector<std::array<int, 4>> cells;
  for (const auto& c : m.cells) {
    if (!std::all_of(S.begin(), S.end(), [&](int s) { return has(c, s); })) {
      cells.push_back(c);
      continue;
    }
    for (int s : S) {
      auto nc = c;
      *std::find(nc.begin(), nc.end(), s) = p;
      cells.push_back(nc);
    }
  }
  std::vector<std::array<int, 3>> open;
  for (std::size_t f = 0; f < m.faces.size(); ++f)
    if (m.face_open[f]) {
      auto t = m.faces[f];
      std::sort(t.begin(), t.end());
      open.push_back(t);
    }
  std::sort(open.begin(), open.end());
  MeshTopo out = make_mesh(std::move(verts), std::move(cells));
  for (int f : out.boundary_faces) {
    auto t = out.faces[f];
    std::sort(t.begin(), t.end());
    if (!has(t, p)) {
      out.face_open[f] = std::binary_search(open.begin(), open.end(), t);
      continue;
    }
    // A new face {p, a, b} lies in the old face {a, b, s} for some s in S.
    int a = t[0] == p ? t[1] : t[0], b = t[2] == p ? t[1] : t[2];
    for (const auto& o : open)
      if (has(o, a) && has(o, b) && std::any_of(S.begin(), S.end(), [&](int s) { return s != a && s != b && has(o, s); }))
        out.face_open[f] = 1;
  }
  m = std::move(out);
}

int cells_for(double len, double target_edge) {
  return std::max(1, static_cast<int>(std::lround(len / target_edge)));
}

}  // namespace

MeshTopo mesh_box_wedge(double w, double h, double n_wedge, double target_edge, SteinerPoint steiner) {
  if (!(n_wedge > 1.0 && n_wedge <= 2.0)) throw MeshError("wedge parameter must lie in (1, 2]");
  if (!(target_edge > 0 && w > 0 && h > 0)) throw MeshError("wedge dimensions must be positive");
  // The far wedge face lies along a grid line or a cell diagonal only for
  // multiples of a quarter turn in n.
  double q = n_wedge * 4.0;
  if (std::abs(q - std::round(q)) > 1e-9)
    throw MeshError("structured wedge mesher supports n_wedge in {1.25, 1.5, 1.75, 2}");
  int half = cells_for(w / 2, target_edge);
  int nx = 2 * half;
  int nz = 2 * cells_for(h / 2, target_edge);
  if (nx < 4 || nz < 4) throw MeshError("target edge too large to resolve the wedge");

  // Diagonals in each quadrant follow the ray phi = n*pi when it is diagonal.
  auto anti = [](double cx, double cy) { return cx * cy < 0; };
  Grid2 g = grid2(-w / 2, w / 2, nx, -w / 2, w / 2, nx, anti);
  const double phi_max = n_wedge * kPi;
  std::vector<uint8_t> keep_tri(g.tris.size(), 1);
  if (n_wedge < 2.0) {
    for (std::size_t t = 0; t < g.tris.size(); ++t) {
      Vec2 c = (g.verts[g.tris[t][0]] + g.verts[g.tris[t][1]] + g.verts[g.tris[t][2]]) / 3.0;
      double phi = std::atan2(c[1], c[0]);
      if (phi < 0) phi += 2 * kPi;
      keep_tri[t] = phi <= phi_max ? 1 : 0;
    }
  }
  MeshTopo m = extrude(g, -h / 2, h / 2, nz, [&](int t, int) { return keep_tri[t] != 0; });
  const double tol = 1e-9 * m.diam;
  auto on_box = [&](const Vec3& c, const Vec3&) {
    return std::abs(std::abs(c[0]) - w / 2) < tol || std::abs(std::abs(c[1]) - w / 2) < tol ||
           std::abs(std::abs(c[2]) - h / 2) < tol;
  };
  mark_open_faces(m, on_box);
  insert_steiner(m, steiner);
  return m;
}

MeshTopo mesh_box(const Vec3& lo, const Vec3& hi, double target_edge, SteinerPoint steiner) {
  if (!(target_edge > 0) || (hi - lo).minCoeff() <= 0) throw MeshError("box dimensions must be positive");
  int nx = cells_for(hi[0] - lo[0], target_edge);
  int ny = cells_for(hi[1] - lo[1], target_edge);
  int nz = cells_for(hi[2] - lo[2], target_edge);
  Grid2 g = grid2(lo[0], hi[0], nx, lo[1], hi[1], ny, nullptr);
  MeshTopo m = extrude(g, lo[2], hi[2], nz, [](int, int) { return true; });
  insert_steiner(m, steiner);
  return m;
}

MeshTopo mesh_building(double target_edge, SteinerPoint steiner) {
  if (!(target_edge > 0)) throw MeshError("target edge must be positive");
  // 6 x 4 x 2 footprint built from 0.5-sized blocks subdivided m times.
  const int m = std::max(1, static_cast<int>(std::ceil(0.5 / target_edge - 1e-9)));
  const int nx = 12 * m, ny = 8 * m, nz = 4 * m;
  const double hs = 0.5 / m;
  Grid2 g = grid2(0.0, 6.0, nx, 0.0, 4.0, ny, nullptr);
  auto solid = [](const Vec3& p) {
    bool wall = p[0] > 3.0 && p[0] < 3.5;
    bool door = p[1] > 1.5 && p[1] < 2.5 && p[2] < 1.5;
    bool pillar = p[0] > 4.5 && p[0] < 5.0 && p[1] > 1.0 && p[1] < 1.5;
    return (wall && !door) || pillar;
  };
  auto keep = [&](int t, int k) {
    const auto& tri = g.tris[t];
    Vec2 c = (g.verts[tri[0]] + g.verts[tri[1]] + g.verts[tri[2]]) / 3.0;
    return !solid(Vec3(c[0], c[1], (k + 0.5) * hs));
  };
  MeshTopo mesh = extrude(g, 0.0, 2.0, nz, keep);
  insert_steiner(mesh, steiner);
  return mesh;
}

}  // namespace jmm
