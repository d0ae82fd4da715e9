#include "jmm/mesh.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace jmm {

namespace {

Csr build_csr(std::size_t rows, const std::vector<std::pair<int, int>>& pairs) {
  Csr csr;
  csr.offsets.assign(rows + 1, 0);
  for (auto& [r, v] : pairs) csr.offsets[r + 1]++;
  for (std::size_t i = 0; i < rows; ++i) csr.offsets[i + 1] += csr.offsets[i];
  csr.data.resize(pairs.size());
  std::vector<int> fill(csr.offsets.begin(), csr.offsets.end() - 1);
  for (auto& [r, v] : pairs) csr.data[fill[r]++] = v;
  for (std::size_t i = 0; i < rows; ++i)
    std::sort(csr.data.begin() + csr.offsets[i], csr.data.begin() + csr.offsets[i + 1]);
  return csr;
}

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

// Local vertex pairs of the 6 tet edges and the 3 vertices of face opposite i.
constexpr int kEdgeLocal[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
constexpr int kFaceLocal[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};

}  // namespace

int MeshTopo::edge_id(int a, int b) const {
  if (a == b) return -1;
  auto nb = vv[a];
  auto it = std::lower_bound(nb.begin(), nb.end(), b);
  if (it == nb.end() || *it != b) return -1;
  return vv_edge[vv.offsets[a] + (it - nb.begin())];
}

int MeshTopo::face_id(int a, int b, int c) const {
  std::array<int, 3> key{a, b, c};
  std::sort(key.begin(), key.end());
  auto it = std::lower_bound(faces.begin(), faces.end(), key);
  if (it == faces.end() || *it != key) return -1;
  return static_cast<int>(it - faces.begin());
}

double MeshTopo::cell_volume(int c) const {
  const auto& cv = cells[c];
  return signed_volume(verts[cv[0]], verts[cv[1]], verts[cv[2]], verts[cv[3]]);
}

Vec3 MeshTopo::boundary_normal(int f) const {
  const auto& fv = faces[f];
  int c = face_cells[f][0];
  int opp = -1;
  for (int v : cells[c])
    if (v != fv[0] && v != fv[1] && v != fv[2]) opp = v;
  Vec3 n = (verts[fv[1]] - verts[fv[0]]).cross(verts[fv[2]] - verts[fv[0]]).normalized();
  if (n.dot(verts[fv[0]] - verts[opp]) < 0) n = -n;
  return n;
}

std::array<double, 4> MeshTopo::barycentric(int c, const Vec3& x) const {
  const auto& cv = cells[c];
  const Vec3& x0 = verts[cv[0]];
  Mat3 m;
  m.col(0) = verts[cv[1]] - x0;
  m.col(1) = verts[cv[2]] - x0;
  m.col(2) = verts[cv[3]] - x0;
  Vec3 l = m.inverse() * (x - x0);
  return {1.0 - l[0] - l[1] - l[2], l[0], l[1], l[2]};
}

MeshTopo make_mesh(std::vector<Vec3> verts, std::vector<std::array<int, 4>> cells) {
  MeshTopo m;
  const int nv = static_cast<int>(verts.size());
  if (nv < 4 || cells.empty()) throw MeshError("mesh needs at least one cell");
  m.verts = std::move(verts);
  m.cells = std::move(cells);

  m.lo = m.hi = m.verts[0];
  for (const auto& p : m.verts) {
    m.lo = m.lo.cwiseMin(p);
    m.hi = m.hi.cwiseMax(p);
  }
  m.diam = (m.hi - m.lo).norm();
  if (!(m.diam > 0)) throw MeshError("mesh has zero extent");

  std::vector<uint8_t> used(nv, 0);
  const double vol_tol = 1e-14 * m.diam * m.diam * m.diam;
  for (std::size_t c = 0; c < m.cells.size(); ++c) {
    auto& cv = m.cells[c];
    for (int v : cv) {
      if (v < 0 || v >= nv) throw MeshError("cell " + std::to_string(c) + " has vertex index out of range");
      used[v] = 1;
    }
    double vol = m.cell_volume(static_cast<int>(c));
    if (std::abs(vol) <= vol_tol)
      throw MeshError("cell " + std::to_string(c) + " has non-positive volume");
    if (vol < 0) std::swap(cv[2], cv[3]);
  }
  for (int v = 0; v < nv; ++v)
    if (!used[v]) throw MeshError("dangling vertex " + std::to_string(v));

  {  // duplicate vertices
    std::vector<int> order(nv);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return m.verts[a][0] < m.verts[b][0]; });
    const double tol = 1e-12 * m.diam;
    for (int i = 0; i < nv; ++i)
      for (int j = i + 1; j < nv && m.verts[order[j]][0] - m.verts[order[i]][0] <= tol; ++j)
        if ((m.verts[order[i]] - m.verts[order[j]]).norm() <= tol)
          throw MeshError("duplicate vertices " + std::to_string(order[i]) + " and " + std::to_string(order[j]));
  }
  {  // duplicate cells
    std::vector<std::array<int, 4>> sorted = m.cells;
    for (auto& c : sorted) std::sort(c.begin(), c.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw MeshError("regularity violation: duplicate cell");
  }

  const int nc = m.num_cells();
  // Edges.
  {
    std::vector<std::array<int, 2>> all;
    all.reserve(6 * nc);
    for (const auto& cv : m.cells)
      for (auto& le : kEdgeLocal) {
        int a = cv[le[0]], b = cv[le[1]];
        all.push_back({std::min(a, b), std::max(a, b)});
      }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    m.edges = std::move(all);
  }
  {
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(2 * m.edges.size());
    for (const auto& e : m.edges) {
      pairs.push_back({e[0], e[1]});
      pairs.push_back({e[1], e[0]});
    }
    m.vv = build_csr(nv, pairs);
    m.vv_edge.resize(m.vv.data.size());
    for (int a = 0; a < nv; ++a) {
      for (int k = m.vv.offsets[a]; k < m.vv.offsets[a + 1]; ++k) {
        int b = m.vv.data[k];
        std::array<int, 2> key{std::min(a, b), std::max(a, b)};
        m.vv_edge[k] = static_cast<int>(std::lower_bound(m.edges.begin(), m.edges.end(), key) - m.edges.begin());
      }
    }
  }
  m.cell_edges.resize(nc);
  for (int c = 0; c < nc; ++c)
    for (int k = 0; k < 6; ++k) m.cell_edges[c][k] = m.edge_id(m.cells[c][kEdgeLocal[k][0]], m.cells[c][kEdgeLocal[k][1]]);

  // Faces.
  {
    struct FaceRec {
      std::array<int, 3> key;
      int cell, local;
    };
    std::vector<FaceRec> recs;
    recs.reserve(4 * nc);
    for (int c = 0; c < nc; ++c)
      for (int i = 0; i < 4; ++i) {
        std::array<int, 3> k{m.cells[c][kFaceLocal[i][0]], m.cells[c][kFaceLocal[i][1]], m.cells[c][kFaceLocal[i][2]]};
        std::sort(k.begin(), k.end());
        recs.push_back({k, c, i});
      }
    std::sort(recs.begin(), recs.end(), [](const FaceRec& a, const FaceRec& b) {
      return a.key != b.key ? a.key < b.key : a.cell < b.cell;
    });
    m.cell_faces.resize(nc);
    for (std::size_t i = 0; i < recs.size();) {
      std::size_t j = i;
      while (j < recs.size() && recs[j].key == recs[i].key) ++j;
      if (j - i > 2) throw MeshError("regularity violation: face shared by more than two cells");
      int f = static_cast<int>(m.faces.size());
      m.faces.push_back(recs[i].key);
      m.face_cells.push_back({recs[i].cell, j - i == 2 ? recs[i + 1].cell : -1});
      for (std::size_t k = i; k < j; ++k) m.cell_faces[recs[k].cell][recs[k].local] = f;
      i = j;
    }
  }

  {
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(4 * nc);
    for (int c = 0; c < nc; ++c)
      for (int v : m.cells[c]) pairs.push_back({v, c});
    m.vc = build_csr(nv, pairs);
    pairs.clear();
    for (int c = 0; c < nc; ++c)
      for (int e : m.cell_edges[c]) pairs.push_back({e, c});
    m.ec = build_csr(m.edges.size(), pairs);
  }

  m.vert_on_boundary.assign(nv, 0);
  m.edge_on_boundary.assign(m.edges.size(), 0);
  {
    std::vector<std::pair<int, int>> pairs;
    for (int f = 0; f < static_cast<int>(m.faces.size()); ++f) {
      if (!m.is_boundary_face(f)) continue;
      m.boundary_faces.push_back(f);
      const auto& fv = m.faces[f];
      for (int k = 0; k < 3; ++k) {
        m.vert_on_boundary[fv[k]] = 1;
        pairs.push_back({fv[k], f});
        m.edge_on_boundary[m.edge_id(fv[k], fv[(k + 1) % 3])] = 1;
      }
    }
    m.vbf = build_csr(nv, pairs);
  }
  m.face_open.assign(m.faces.size(), 0);

  {  // connectivity
    std::vector<uint8_t> seen(nv, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int w : m.vv[v])
        if (!seen[w]) {
          seen[w] = 1;
          ++count;
          stack.push_back(w);
        }
    }
    if (count != nv) throw MeshError("vertex graph is not connected");
  }

  double sum = 0.0;
  m.h_min = kInf;
  for (const auto& e : m.edges) {
    double l = (m.verts[e[0]] - m.verts[e[1]]).norm();
    sum += l;
    m.h_min = std::min(m.h_min, l);
  }
  m.h_avg = sum / static_cast<double>(m.edges.size());

  // Point-location grid.
  {
    Vec3 ext = m.hi - m.lo;
    double target = std::cbrt(std::max(1.0, nc / 4.0));
    double scale = target / std::cbrt(std::max(ext.prod(), 1e-300));
    for (int d = 0; d < 3; ++d) m.grid_n[d] = std::clamp(static_cast<int>(std::ceil(ext[d] * scale)), 1, 512);
    m.grid_lo = m.lo;
    for (int d = 0; d < 3; ++d) m.grid_step[d] = std::max(ext[d], 1e-300) / m.grid_n[d];
    const double pad = 1e-9 * m.diam;
    std::vector<std::pair<int, int>> pairs;
    for (int c = 0; c < nc; ++c) {
      Vec3 a = m.verts[m.cells[c][0]], b = a;
      for (int v : m.cells[c]) {
        a = a.cwiseMin(m.verts[v]);
        b = b.cwiseMax(m.verts[v]);
      }
      std::array<int, 3> i0, i1;
      for (int d = 0; d < 3; ++d) {
        i0[d] = std::clamp(static_cast<int>(std::floor((a[d] - pad - m.grid_lo[d]) / m.grid_step[d])), 0, m.grid_n[d] - 1);
        i1[d] = std::clamp(static_cast<int>(std::floor((b[d] + pad - m.grid_lo[d]) / m.grid_step[d])), 0, m.grid_n[d] - 1);
      }
      for (int i = i0[0]; i <= i1[0]; ++i)
        for (int j = i0[1]; j <= i1[1]; ++j)
          for (int k = i0[2]; k <= i1[2]; ++k)
            pairs.push_back({(i * m.grid_n[1] + j) * m.grid_n[2] + k, c});
    }
    m.grid_cells = build_csr(static_cast<std::size_t>(m.grid_n[0]) * m.grid_n[1] * m.grid_n[2], pairs);
  }
  return m;
}

namespace {

std::vector<std::vector<std::string>> tokenize_lines(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string t;
    while (ls >> t) toks.push_back(t);
    if (!toks.empty()) rows.push_back(std::move(toks));
  }
  return rows;
}

long parse_long(const std::string& s) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    throw MeshError("malformed integer '" + s + "'");
  }
  if (pos != s.size()) throw MeshError("malformed integer '" + s + "'");
  return v;
}

double parse_double(const std::string& s) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw MeshError("malformed number '" + s + "'");
  }
  if (pos != s.size() || !std::isfinite(v)) throw MeshError("malformed number '" + s + "'");
  return v;
}

}  // namespace

MeshTopo load_mesh(const std::string& node_text, const std::string& ele_text) {
  auto nodes = tokenize_lines(node_text);
  auto eles = tokenize_lines(ele_text);
  if (nodes.empty() || eles.empty()) throw MeshError("empty .node or .ele input");
  const auto& nh = nodes[0];
  if (nh.size() < 2) throw MeshError(".node header needs count and dimension");
  long n = parse_long(nh[0]);
  if (parse_long(nh[1]) != 3) throw MeshError(".node dimension must be 3");
  if (n <= 0 || static_cast<long>(nodes.size()) - 1 < n) throw MeshError(".node row count mismatch");
  long base = parse_long(nodes[1][0]);
  if (base != 0 && base != 1) throw MeshError(".node first index must be 0 or 1");
  std::vector<Vec3> verts(n);
  for (long i = 0; i < n; ++i) {
    const auto& r = nodes[i + 1];
    if (r.size() < 4) throw MeshError(".node row too short");
    if (parse_long(r[0]) != i + base) throw MeshError(".node indices must be consecutive");
    verts[i] = Vec3(parse_double(r[1]), parse_double(r[2]), parse_double(r[3]));
  }
  const auto& eh = eles[0];
  long m = parse_long(eh[0]);
  if (eh.size() >= 2 && parse_long(eh[1]) != 4) throw MeshError(".ele must have 4 nodes per tetrahedron");
  if (m <= 0 || static_cast<long>(eles.size()) - 1 < m) throw MeshError(".ele row count mismatch");
  std::vector<std::array<int, 4>> cells(m);
  for (long i = 0; i < m; ++i) {
    const auto& r = eles[i + 1];
    if (r.size() < 5) throw MeshError(".ele row too short");
    for (int k = 0; k < 4; ++k) {
      long v = parse_long(r[k + 1]) - base;
      if (v < 0 || v >= n) throw MeshError(".ele vertex index out of range");
      cells[i][k] = static_cast<int>(v);
    }
  }
  return make_mesh(std::move(verts), std::move(cells));
}

MeshTopo load_scene_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    throw MeshError(std::string("scene json: ") + e.what());
  }
  if (!j.contains("vertices") || !j.contains("cells")) throw MeshError("scene json needs vertices and cells");
  std::vector<Vec3> verts;
  std::vector<std::array<int, 4>> cells;
  try {
    for (const auto& v : j["vertices"]) verts.emplace_back(v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>());
    for (const auto& c : j["cells"]) {
      if (c.size() != 4) throw MeshError("scene json cells must have 4 indices");
      cells.push_back({c[0].get<int>(), c[1].get<int>(), c[2].get<int>(), c[3].get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw MeshError(std::string("scene json: ") + e.what());
  }
  return make_mesh(std::move(verts), std::move(cells));
}

void mark_open_faces(MeshTopo& mesh, const std::function<bool(const Vec3&, const Vec3&)>& pred) {
  for (int f : mesh.boundary_faces) {
    const auto& fv = mesh.faces[f];
    Vec3 c = (mesh.verts[fv[0]] + mesh.verts[fv[1]] + mesh.verts[fv[2]]) / 3.0;
    mesh.face_open[f] = pred(c, mesh.boundary_normal(f)) ? 1 : 0;
  }
}

// ---------------------------------------------------------------------------
// Boundary classification

namespace {

struct UnionFind {
  std::vector<int> p;
  explicit UnionFind(int n) : p(n) { std::iota(p.begin(), p.end(), 0); }
  int find(int x) {
    while (p[x] != x) x = p[x] = p[p[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) p[std::max(a, b)] = std::min(a, b);
  }
};

int third_vertex(const std::array<int, 3>& f, int a, int b) {
  for (int v : f)
    if (v != a && v != b) return v;
  return -1;
}

}  // namespace

BoundaryLabels classify_boundary(const MeshTopo& mesh, double dihedral_tol) {
  BoundaryLabels L;
  const int nf = static_cast<int>(mesh.faces.size());
  const int ne = static_cast<int>(mesh.edges.size());
  L.face_facet.assign(nf, -1);
  L.edge_chain.assign(ne, -1);
  L.vert_chain.assign(mesh.num_verts(), -1);
  L.edge_dihedral.assign(ne, kNaN);

  std::vector<Vec3> normal(nf, Vec3::Zero());
  for (int f : mesh.boundary_faces) normal[f] = mesh.boundary_normal(f);

  // Boundary faces around each boundary edge.
  std::vector<std::array<int, 2>> edge_bf(ne, {-1, -1});
  for (int e = 0; e < ne; ++e) {
    if (!mesh.edge_on_boundary[e]) continue;
    int a = mesh.edges[e][0], b = mesh.edges[e][1];
    int cnt = 0;
    for (int f : mesh.vbf[a]) {
      const auto& fv = mesh.faces[f];
      if (fv[0] == b || fv[1] == b || fv[2] == b) {
        if (cnt < 2) edge_bf[e][cnt] = f;
        ++cnt;
      }
    }
    if (cnt != 2)
      throw MeshError("boundary edge " + std::to_string(a) + "-" + std::to_string(b) + " has " + std::to_string(cnt) +
                      " incident boundary faces");
  }

  UnionFind uf(nf);
  for (int e = 0; e < ne; ++e) {
    if (edge_bf[e][0] < 0) continue;
    int f1 = edge_bf[e][0], f2 = edge_bf[e][1];
    double ang = std::acos(std::clamp(normal[f1].dot(normal[f2]), -1.0, 1.0));
    if (ang <= dihedral_tol && mesh.face_open[f1] == mesh.face_open[f2]) uf.unite(f1, f2);
  }
  std::vector<int> root_to_facet(nf, -1);
  for (int f : mesh.boundary_faces) {
    int r = uf.find(f);
    if (root_to_facet[r] < 0) {
      root_to_facet[r] = static_cast<int>(L.facets.size());
      L.facets.emplace_back();
    }
    int id = root_to_facet[r];
    L.face_facet[f] = id;
    auto& fc = L.facets[id];
    fc.faces.push_back(f);
    const auto& fv = mesh.faces[f];
    double area = 0.5 * (mesh.verts[fv[1]] - mesh.verts[fv[0]]).cross(mesh.verts[fv[2]] - mesh.verts[fv[0]]).norm();
    fc.area += area;
    fc.normal = (fc.faces.size() == 1 ? Vec3::Zero() : fc.normal) + area * normal[f];
    for (int v : fv) fc.verts.push_back(v);
    fc.open = mesh.face_open[f] != 0;
  }
  for (auto& fc : L.facets) {
    fc.normal.normalize();
    std::sort(fc.verts.begin(), fc.verts.end());
    fc.verts.erase(std::unique(fc.verts.begin(), fc.verts.end()), fc.verts.end());
    fc.point = mesh.verts[fc.verts[0]];
  }

  // Interior dihedral angles and diffracting edges.
  std::vector<uint8_t> diff(ne, 0);
  for (int e = 0; e < ne; ++e) {
    if (edge_bf[e][0] < 0) continue;
    int a = mesh.edges[e][0], b = mesh.edges[e][1];
    Vec3 xa = mesh.verts[a];
    Vec3 te = (mesh.verts[b] - xa).normalized();
    auto perp = [&](int f) {
      Vec3 d = mesh.verts[third_vertex(mesh.faces[f], a, b)] - xa;
      return Vec3(d - d.dot(te) * te).normalized();
    };
    int f1 = edge_bf[e][0], f2 = edge_bf[e][1];
    Vec3 u1 = perp(f1), u2 = perp(f2);
    double th0 = std::acos(std::clamp(u1.dot(u2), -1.0, 1.0));
    double th = normal[f1].dot(u2) > 0 ? 2.0 * kPi - th0 : th0;
    L.edge_dihedral[e] = th;
    if (th > kPi + dihedral_tol && !mesh.face_open[f1] && !mesh.face_open[f2]) diff[e] = 1;
  }

  // Chains of collinear diffracting edges bordering the same pair of facets.
  std::vector<std::vector<int>> vdiff(mesh.num_verts());
  for (int e = 0; e < ne; ++e)
    if (diff[e]) {
      vdiff[mesh.edges[e][0]].push_back(e);
      vdiff[mesh.edges[e][1]].push_back(e);
    }
  auto facet_pair = [&](int e) {
    int a = L.face_facet[edge_bf[e][0]], b = L.face_facet[edge_bf[e][1]];
    return std::array<int, 2>{std::min(a, b), std::max(a, b)};
  };
  auto dir = [&](int e) { return Vec3(mesh.verts[mesh.edges[e][1]] - mesh.verts[mesh.edges[e][0]]).normalized(); };
  auto continues = [&](int v, int e) -> int {
    if (vdiff[v].size() != 2) return -1;
    int o = vdiff[v][0] == e ? vdiff[v][1] : vdiff[v][0];
    if (facet_pair(o) != facet_pair(e)) return -1;
    if (std::abs(std::abs(dir(o).dot(dir(e))) - 1.0) > 1e-9) return -1;
    return o;
  };
  std::vector<uint8_t> done(ne, 0);
  for (int e0 = 0; e0 < ne; ++e0) {
    if (!diff[e0] || done[e0]) continue;
    std::vector<int> ev{e0};
    std::vector<int> vs{mesh.edges[e0][0], mesh.edges[e0][1]};
    done[e0] = 1;
    for (int side = 0; side < 2; ++side) {
      while (true) {
        int v = side == 0 ? vs.back() : vs.front();
        int e = side == 0 ? ev.back() : ev.front();
        int o = continues(v, e);
        if (o < 0 || done[o]) break;
        done[o] = 1;
        int w = mesh.edges[o][0] == v ? mesh.edges[o][1] : mesh.edges[o][0];
        if (side == 0) {
          ev.push_back(o);
          vs.push_back(w);
        } else {
          ev.insert(ev.begin(), o);
          vs.insert(vs.begin(), w);
        }
      }
    }
    EdgeChain ch;
    Vec3 t = (mesh.verts[vs.back()] - mesh.verts[vs.front()]).normalized();
    int big = 0;
    for (int d = 1; d < 3; ++d)
      if (std::abs(t[d]) > std::abs(t[big]) + 1e-12) big = d;
    if (t[big] < 0) {
      std::reverse(vs.begin(), vs.end());
      std::reverse(ev.begin(), ev.end());
      t = -t;
    }
    ch.verts = vs;
    ch.edges = ev;
    ch.t_e = t;
    int e = ev[0];
    int a = mesh.edges[e][0], b = mesh.edges[e][1];
    int fA = edge_bf[e][0], fB = edge_bf[e][1];
    auto perp = [&](int f) {
      Vec3 d = mesh.verts[third_vertex(mesh.faces[f], a, b)] - mesh.verts[a];
      return Vec3(d - d.dot(t) * t).normalized();
    };
    Vec3 nA = -normal[fA];
    bool a_is_o = nA.cross(t).dot(perp(fA)) > 0;
    int fo = a_is_o ? fA : fB, fn = a_is_o ? fB : fA;
    ch.n_o = -normal[fo];
    ch.n_n = -normal[fn];
    ch.t_o = ch.n_o.cross(t).normalized();
    ch.facet_o = L.face_facet[fo];
    ch.facet_n = L.face_facet[fn];
    double th = 0.0;
    for (int ee : ev) th += L.edge_dihedral[ee];
    ch.n_wedge = th / ev.size() / kPi;
    int id = static_cast<int>(L.chains.size());
    for (int ee : ev) L.edge_chain[ee] = id;
    for (int v : vs)
      if (L.vert_chain[v] < 0) L.vert_chain[v] = id;
    L.chains.push_back(std::move(ch));
  }
  return L;
}

// ---------------------------------------------------------------------------
// Visibility cones and point location

bool cone_contains(const MeshTopo& mesh, const PointLocation& loc, const Vec3& t) {
  constexpr double eps = 1e-10;
  switch (loc.kind) {
    case PointLocation::Kind::Cell:
      return true;
    case PointLocation::Kind::Vertex: {
      int v = loc.id;
      const Vec3& x = mesh.verts[v];
      for (int c : mesh.vc[v]) {
        Mat3 m;
        int k = 0;
        for (int w : mesh.cells[c])
          if (w != v) m.col(k++) = mesh.verts[w] - x;
        Eigen::FullPivLU<Mat3> lu(m);
        if (!lu.isInvertible()) throw MeshError("degenerate cell in cone test");
        Vec3 mu = lu.solve(t);
        double scale = mu.cwiseAbs().maxCoeff();
        if (mu.minCoeff() >= -eps * scale) return true;
      }
      return false;
    }
    case PointLocation::Kind::Edge: {
      int a = mesh.edges[loc.id][0], b = mesh.edges[loc.id][1];
      Vec3 e = (mesh.verts[b] - mesh.verts[a]).normalized();
      Vec3 tp = t - t.dot(e) * e;
      if (tp.norm() <= 1e-12 * t.norm()) return true;
      for (int c : mesh.ec[loc.id]) {
        Vec3 p[2];
        int k = 0;
        for (int w : mesh.cells[c])
          if (w != a && w != b) {
            Vec3 d = mesh.verts[w] - mesh.verts[a];
            p[k++] = d - d.dot(e) * e;
          }
        Mat2 g;
        g << p[0].dot(p[0]), p[0].dot(p[1]), p[1].dot(p[0]), p[1].dot(p[1]);
        Vec2 rhs(p[0].dot(tp), p[1].dot(tp));
        Vec2 mu = g.inverse() * rhs;
        double scale = mu.cwiseAbs().maxCoeff();
        if (mu.minCoeff() >= -eps * scale) return true;
      }
      return false;
    }
    case PointLocation::Kind::Face: {
      const auto& fv = mesh.faces[loc.id];
      Vec3 n = (mesh.verts[fv[1]] - mesh.verts[fv[0]]).cross(mesh.verts[fv[2]] - mesh.verts[fv[0]]).normalized();
      double tn = t.dot(n);
      if (std::abs(tn) <= 1e-12 * t.norm()) return true;
      for (int c : mesh.face_cells[loc.id]) {
        if (c < 0) continue;
        for (int z : mesh.cells[c]) {
          if (z == fv[0] || z == fv[1] || z == fv[2]) continue;
          if ((mesh.verts[z] - loc.x).dot(n) * tn > 0) return true;
        }
      }
      return false;
    }
  }
  return false;
}

std::optional<CellHit> locate(const MeshTopo& mesh, const Vec3& x) {
  const double tol = 1e-9 * mesh.diam;
  std::array<int, 3> idx;
  for (int d = 0; d < 3; ++d) {
    if (x[d] < mesh.lo[d] - tol || x[d] > mesh.hi[d] + tol) return std::nullopt;
    idx[d] = std::clamp(static_cast<int>(std::floor((x[d] - mesh.grid_lo[d]) / mesh.grid_step[d])), 0, mesh.grid_n[d] - 1);
  }
  int bucket = (idx[0] * mesh.grid_n[1] + idx[1]) * mesh.grid_n[2] + idx[2];
  for (int c : mesh.grid_cells[bucket]) {
    auto l = mesh.barycentric(c, x);
    if (std::min({l[0], l[1], l[2], l[3]}) >= -1e-9) return CellHit{c, l};
  }
  return std::nullopt;
}

CellHit cell_containing(const MeshTopo& mesh, const Vec3& x) {
  auto hit = locate(mesh, x);
  if (!hit) throw MeshError("point outside mesh");
  return *hit;
}

int nearest_vertex(const MeshTopo& mesh, const Vec3& x) {
  int best = 0;
  double bd = kInf;
  for (int v = 0; v < mesh.num_verts(); ++v) {
    double d = (mesh.verts[v] - x).squaredNorm();
    if (d < bd) {
      bd = d;
      best = v;
    }
  }
  return best;
}

std::uint64_t mesh_hash(const MeshTopo& mesh) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    auto b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& v : mesh.verts) mix(v.data(), 3 * sizeof(double));
  for (const auto& c : mesh.cells) mix(c.data(), 4 * sizeof(int));
  return h;
}

}  // namespace jmm
