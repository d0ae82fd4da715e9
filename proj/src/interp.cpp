#include "jmm/interp.hpp"

#include <algorithm>
#include <cmath>

namespace jmm {

namespace {

template <int N>
struct MultiIndex {
  static constexpr int kCount = N == 3 ? 10 : 20;
  std::array<std::array<int, N>, kCount> alpha{};
  std::array<double, kCount> multinom{};
  std::array<int, 256> lookup{};  // packed base-4 key -> position

  static int key(const std::array<int, N>& a) {
    int k = 0;
    for (int i = 0; i < N; ++i) k = 4 * k + a[i];
    return k;
  }

  MultiIndex() {
    lookup.fill(-1);
    int n = 0;
    // Lexicographically descending enumeration of degree-3 indices.
    for (int k = 0; k < 256; ++k) {
      int rem = k, sum = 0;
      std::array<int, N> t{};
      for (int i = N - 1; i >= 0; --i) {
        t[i] = rem % 4;
        rem /= 4;
        sum += t[i];
      }
      if (rem != 0 || sum != 3) continue;
      alpha[n++] = t;
    }
    std::reverse(alpha.begin(), alpha.end());
    for (int p = 0; p < kCount; ++p) {
      double f = 1.0;
      for (int i = 0; i < N; ++i)
        for (int m = 2; m <= alpha[p][i]; ++m) f *= m;
      multinom[p] = 6.0 / f;
      lookup[key(alpha[p])] = p;
    }
  }
  int operator()(const std::array<int, N>& a) const { return lookup[key(a)]; }
};

const MultiIndex<3>& tri_mi() {
  static const MultiIndex<3> mi;
  return mi;
}
const MultiIndex<4>& tet_mi() {
  static const MultiIndex<4> mi;
  return mi;
}

template <int N>
const MultiIndex<N>& mi_for() {
  if constexpr (N == 3)
    return tri_mi();
  else
    return tet_mi();
}

template <int N, std::size_t M>
double bb_value(const std::array<double, M>& b, const std::array<double, N>& l) {
  const auto& mi = mi_for<N>();
  double v = 0.0;
  for (int p = 0; p < static_cast<int>(M); ++p) {
    double m = mi.multinom[p];
    for (int i = 0; i < N; ++i)
      for (int e = 0; e < mi.alpha[p][i]; ++e) m *= l[i];
    v += b[p] * m;
  }
  return v;
}

// Partial derivatives of the homogeneous form with respect to each
// barycentric variable.
template <int N, std::size_t M>
std::array<double, N> bb_hgrad(const std::array<double, M>& b, const std::array<double, N>& l) {
  const auto& mi = mi_for<N>();
  std::array<double, N> g{};
  for (int i = 0; i < N; ++i) {
    // 3 * sum over |beta| = 2 of b_{beta + e_i} B^2_beta(l)
    double s = 0.0;
    for (int j = 0; j < N; ++j)
      for (int k = j; k < N; ++k) {
        std::array<int, N> a{};
        a[i]++;
        a[j]++;
        a[k]++;
        double w = (j == k ? 1.0 : 2.0) * l[j] * l[k];
        s += b[mi(a)] * w;
      }
    g[i] = 3.0 * s;
  }
  return g;
}

template <int N, std::size_t M>
std::array<std::array<double, N>, N> bb_hhess(const std::array<double, M>& b, const std::array<double, N>& l) {
  const auto& mi = mi_for<N>();
  std::array<std::array<double, N>, N> H{};
  for (int i = 0; i < N; ++i)
    for (int j = i; j < N; ++j) {
      double s = 0.0;
      for (int m = 0; m < N; ++m) {
        std::array<int, N> a{};
        a[i]++;
        a[j]++;
        a[m]++;
        s += b[mi(a)] * l[m];
      }
      H[i][j] = H[j][i] = 6.0 * s;
    }
  return H;
}

Mat3 tet_inverse_map(const std::array<Vec3, 4>& x) {
  Mat3 m;
  m.col(0) = x[1] - x[0];
  m.col(1) = x[2] - x[0];
  m.col(2) = x[3] - x[0];
  return m.inverse();
}

}  // namespace

int tri_index(int i, int j, int k) { return tri_mi()({i, j, k}); }
int tet_index(int i, int j, int k, int l) { return tet_mi()({i, j, k, l}); }

ValueDeriv hermite_cubic_1d(double f0, double f1, double d0, double d1, double t) {
  double t2 = t * t, t3 = t2 * t;
  double v = f0 * (2 * t3 - 3 * t2 + 1) + f1 * (-2 * t3 + 3 * t2) + d0 * (t3 - 2 * t2 + t) + d1 * (t3 - t2);
  double d = f0 * (6 * t2 - 6 * t) + f1 * (-6 * t2 + 6 * t) + d0 * (3 * t2 - 4 * t + 1) + d1 * (3 * t2 - 2 * t);
  return {v, d};
}

double BBTri9::ordinate(int i, int j, int k) const { return b[tri_index(i, j, k)]; }
double BBTet20::ordinate(int i, int j, int k, int l) const { return b[tet_index(i, j, k, l)]; }

double BBTri9::eval(const std::array<double, 3>& l) const { return bb_value<3>(b, l); }

void BBTri9::eval_reduced(double l1, double l2, double& f, Vec2& g, Mat2& H) const {
  const double l0 = 1.0 - l1 - l2;
  // Power-expanded for the hot path of the tetrahedron update.
  const double b300 = b[0], b210 = b[1], b201 = b[2], b120 = b[3], b111 = b[4];
  const double b102 = b[5], b030 = b[6], b021 = b[7], b012 = b[8], b003 = b[9];
  f = b300 * l0 * l0 * l0 + 3 * b210 * l0 * l0 * l1 + 3 * b201 * l0 * l0 * l2 + 3 * b120 * l0 * l1 * l1 +
      6 * b111 * l0 * l1 * l2 + 3 * b102 * l0 * l2 * l2 + b030 * l1 * l1 * l1 + 3 * b021 * l1 * l1 * l2 +
      3 * b012 * l1 * l2 * l2 + b003 * l2 * l2 * l2;
  // Homogeneous partials.
  const double g0 = 3 * (b300 * l0 * l0 + 2 * b210 * l0 * l1 + 2 * b201 * l0 * l2 + b120 * l1 * l1 +
                         2 * b111 * l1 * l2 + b102 * l2 * l2);
  const double g1 = 3 * (b210 * l0 * l0 + 2 * b120 * l0 * l1 + 2 * b111 * l0 * l2 + b030 * l1 * l1 +
                         2 * b021 * l1 * l2 + b012 * l2 * l2);
  const double g2 = 3 * (b201 * l0 * l0 + 2 * b111 * l0 * l1 + 2 * b102 * l0 * l2 + b021 * l1 * l1 +
                         2 * b012 * l1 * l2 + b003 * l2 * l2);
  g = Vec2(g1 - g0, g2 - g0);
  const double h00 = 6 * (b300 * l0 + b210 * l1 + b201 * l2);
  const double h01 = 6 * (b210 * l0 + b120 * l1 + b111 * l2);
  const double h02 = 6 * (b201 * l0 + b111 * l1 + b102 * l2);
  const double h11 = 6 * (b120 * l0 + b030 * l1 + b021 * l2);
  const double h12 = 6 * (b111 * l0 + b021 * l1 + b012 * l2);
  const double h22 = 6 * (b102 * l0 + b012 * l1 + b003 * l2);
  H(0, 0) = h11 - 2 * h01 + h00;
  H(1, 1) = h22 - 2 * h02 + h00;
  H(0, 1) = H(1, 0) = h12 - h01 - h02 + h00;
}

Vec3 BBTri9::grad(const std::array<double, 3>& l) const {
  auto g = bb_hgrad<3>(b, l);
  Eigen::Matrix<double, 3, 2> E;
  E.col(0) = x[1] - x[0];
  E.col(1) = x[2] - x[0];
  Mat2 G = E.transpose() * E;
  return E * G.inverse() * Vec2(g[1] - g[0], g[2] - g[0]);
}

double BBTet20::eval(const std::array<double, 4>& l) const { return bb_value<4>(b, l); }

std::array<double, 4> BBTet20::bb_grad(const std::array<double, 4>& l) const {
  auto g = bb_hgrad<4>(b, l);
  return {g[0], g[1], g[2], g[3]};
}

Vec3 BBTet20::grad(const std::array<double, 4>& l) const {
  auto g = bb_hgrad<4>(b, l);
  Mat3 J = tet_inverse_map(x);
  Vec3 r(g[1] - g[0], g[2] - g[0], g[3] - g[0]);
  return J.transpose() * r;
}

Mat3 BBTet20::hess(const std::array<double, 4>& l) const {
  auto H = bb_hhess<4>(b, l);
  Mat3 R;
  for (int i = 1; i < 4; ++i)
    for (int j = 1; j < 4; ++j) R(i - 1, j - 1) = H[i][j] - H[i][0] - H[0][j] + H[0][0];
  Mat3 J = tet_inverse_map(x);
  Mat3 out = J.transpose() * R * J;
  return 0.5 * (out + out.transpose());
}

BBTri9 BBTet20::face(int skip) const {
  BBTri9 t;
  std::array<int, 3> keep{};
  for (int i = 0, n = 0; i < 4; ++i)
    if (i != skip) keep[n++] = i;
  for (int i = 0; i < 3; ++i) t.x[i] = x[keep[i]];
  const auto& tm = tri_mi();
  for (int p = 0; p < 10; ++p) {
    std::array<int, 4> a{};
    for (int i = 0; i < 3; ++i) a[keep[i]] = tm.alpha[p][i];
    t.b[p] = b[tet_index(a[0], a[1], a[2], a[3])];
  }
  return t;
}

namespace {

template <int N>
void fill_from_jets(std::array<double, N == 3 ? 10 : 20>& b, const std::array<Jet, N>& jets,
                    const std::array<Vec3, N>& x) {
  const auto& mi = mi_for<N>();
  for (int i = 0; i < N; ++i)
    if (!jets[i].grad_defined) throw SolveError("cubic element needs gradients at every vertex");
  auto edge_ord = [&](int i, int j) { return jets[i].T + (x[j] - x[i]).dot(jets[i].grad) / 3.0; };
  for (int p = 0; p < static_cast<int>(b.size()); ++p) {
    const auto& a = mi.alpha[p];
    int three = -1, two = -1, one = -1;
    for (int i = 0; i < N; ++i) {
      if (a[i] == 3) three = i;
      if (a[i] == 2) two = i;
      if (a[i] == 1 && one < 0) one = i;
    }
    if (three >= 0) {
      b[p] = jets[three].T;
    } else if (two >= 0) {
      b[p] = edge_ord(two, one);
    }
  }
  for (int p = 0; p < static_cast<int>(b.size()); ++p) {
    const auto& a = mi.alpha[p];
    int ones = 0;
    std::array<int, 3> f{};
    for (int i = 0; i < N; ++i)
      if (a[i] == 1) f[ones++] = i;
    if (ones != 3) continue;
    double e = 0.0, v = 0.0;
    for (int s = 0; s < 3; ++s) {
      v += jets[f[s]].T;
      for (int t = 0; t < 3; ++t)
        if (t != s) e += edge_ord(f[s], f[t]);
    }
    b[p] = e / 4.0 - v / 6.0;
  }
}

}  // namespace

BBTri9 build_tri9(const std::array<Jet, 3>& jets, const std::array<Vec3, 3>& x) {
  BBTri9 t;
  t.x = x;
  fill_from_jets<3>(t.b, jets, x);
  return t;
}

BBTet20 build_tet20(const std::array<Jet, 4>& jets, const std::array<Vec3, 4>& x) {
  BBTet20 t;
  t.x = x;
  fill_from_jets<4>(t.b, jets, x);
  return t;
}

EikonalSpline build_spline(const MeshTopo& mesh, const std::vector<Jet>& jets) {
  if (static_cast<int>(jets.size()) != mesh.num_verts()) throw SolveError("jet count does not match mesh");
  EikonalSpline s;
  s.mesh = &mesh;
  s.vert.resize(mesh.num_verts());
  for (int v = 0; v < mesh.num_verts(); ++v) {
    if (!std::isfinite(jets[v].T)) throw SolveError("spline needs finite values at every vertex");
    s.vert[v] = jets[v].T;
  }
  auto ord = [&](int v, int w) {
    if (jets[v].grad_defined) return jets[v].T + (mesh.verts[w] - mesh.verts[v]).dot(jets[v].grad) / 3.0;
    return jets[v].T + (jets[w].T - jets[v].T) / 3.0;
  };
  s.edge.resize(2 * mesh.edges.size());
  for (std::size_t e = 0; e < mesh.edges.size(); ++e) {
    s.edge[2 * e] = ord(mesh.edges[e][0], mesh.edges[e][1]);
    s.edge[2 * e + 1] = ord(mesh.edges[e][1], mesh.edges[e][0]);
  }
  s.face.resize(mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& fv = mesh.faces[f];
    double e = 0.0, v = 0.0;
    for (int a = 0; a < 3; ++a) {
      v += s.vert[fv[a]];
      for (int b = 0; b < 3; ++b)
        if (a != b) e += ord(fv[a], fv[b]);
    }
    s.face[f] = e / 4.0 - v / 6.0;
  }
  return s;
}

BBTet20 EikonalSpline::cell_element(int c) const {
  const auto& cv = mesh->cells[c];
  BBTet20 t;
  for (int i = 0; i < 4; ++i) t.x[i] = mesh->verts[cv[i]];
  const auto& mi = tet_mi();
  for (int p = 0; p < 20; ++p) {
    const auto& a = mi.alpha[p];
    int three = -1, two = -1, one = -1, zero = -1;
    for (int i = 0; i < 4; ++i) {
      if (a[i] == 3) three = i;
      if (a[i] == 2) two = i;
      if (a[i] == 1 && one < 0) one = i;
      if (a[i] == 0) zero = i;
    }
    if (three >= 0) {
      t.b[p] = vert[cv[three]];
    } else if (two >= 0) {
      int v = cv[two], w = cv[one];
      int e = mesh->edge_id(v, w);
      t.b[p] = edge[2 * e + (v < w ? 0 : 1)];
    } else {
      t.b[p] = face[mesh->cell_faces[c][zero]];
    }
  }
  return t;
}

std::pair<double, double> EikonalSpline::ordinate_range(int c) const {
  auto el = cell_element(c);
  auto [lo, hi] = std::minmax_element(el.b.begin(), el.b.end());
  return {*lo, *hi};
}

SplineValue spline_eval(const EikonalSpline& s, const Vec3& x) {
  auto hit = cell_containing(*s.mesh, x);
  auto el = s.cell_element(hit.cell);
  return {el.eval(hit.bary), el.grad(hit.bary), hit.cell};
}

std::vector<int> level_set_bracket(const EikonalSpline& s, double tau) {
  std::vector<int> out;
  for (int c = 0; c < s.mesh->num_cells(); ++c) {
    auto [lo, hi] = s.ordinate_range(c);
    if (lo <= tau && tau <= hi) out.push_back(c);
  }
  return out;
}

std::optional<Vec3> ray_levelset_intersect(const EikonalSpline& s, const Vec3& origin, const Vec3& dir,
                                           double tau) {
  const MeshTopo& m = *s.mesh;
  struct Span {
    double t0, t1;
    int cell;
  };
  std::vector<Span> spans;
  for (int c : level_set_bracket(s, tau)) {
    auto l0 = m.barycentric(c, origin);
    auto l1 = m.barycentric(c, origin + dir);
    double ta = 0.0, tb = kInf;
    bool empty = false;
    for (int i = 0; i < 4 && !empty; ++i) {
      double a = l0[i], d = l1[i] - l0[i];
      // a + t d >= 0
      if (std::abs(d) < 1e-300) {
        if (a < -1e-12) empty = true;
      } else if (d > 0) {
        ta = std::max(ta, -a / d);
      } else {
        tb = std::min(tb, -a / d);
      }
    }
    if (!empty && ta <= tb) spans.push_back({ta, tb, c});
  }
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
    return a.t0 != b.t0 ? a.t0 < b.t0 : a.cell < b.cell;
  });
  const double ttol = 1e-12 * m.diam;
  double best = kInf;
  for (const auto& sp : spans) {
    if (sp.t0 > best) break;
    auto el = s.cell_element(sp.cell);
    auto g = [&](double t) {
      Vec3 x = origin + t * dir;
      auto l = m.barycentric(sp.cell, x);
      return el.eval(l) - tau;
    };
    // Power form of the cubic on [t0, t1] to find its monotone pieces.
    double len = sp.t1 - sp.t0;
    double p0 = g(sp.t0), p1 = g(sp.t0 + len / 3), p2 = g(sp.t0 + 2 * len / 3), p3 = g(sp.t1);
    double c1 = (-11 * p0 + 18 * p1 - 9 * p2 + 2 * p3) / 2;
    double c2 = (18 * p0 - 45 * p1 + 36 * p2 - 9 * p3) / 2;
    double c3 = (-9 * p0 + 27 * p1 - 27 * p2 + 9 * p3) / 2;
    std::vector<double> cuts{0.0};
    // roots of c1 + 2 c2 u + 3 c3 u^2
    double A = 3 * c3, B = 2 * c2, C = c1;
    if (std::abs(A) > 1e-14 * (std::abs(B) + std::abs(C))) {
      double disc = B * B - 4 * A * C;
      if (disc >= 0) {
        double r = std::sqrt(disc);
        double q = -0.5 * (B + (B >= 0 ? r : -r));
        for (double u : {q / A, q != 0 ? C / q : kInf})
          if (u > 0 && u < 1) cuts.push_back(u);
      }
    } else if (std::abs(B) > 0) {
      double u = -C / B;
      if (u > 0 && u < 1) cuts.push_back(u);
    }
    cuts.push_back(1.0);
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      double a = sp.t0 + cuts[k] * len, b = sp.t0 + cuts[k + 1] * len;
      double ga = g(a), gb = g(b);
      if (ga == 0.0) {
        best = std::min(best, a);
        break;
      }
      if (ga * gb > 0) continue;
      for (int it = 0; it < 200 && b - a > ttol; ++it) {
        double mid = 0.5 * (a + b);
        double gm = g(mid);
        if ((gm <= 0) == (ga <= 0)) {
          a = mid;
          ga = gm;
        } else {
          b = mid;
        }
      }
      double t = std::abs(ga) <= std::abs(g(b)) ? a : b;
      best = std::min(best, t);
      break;
    }
  }
  if (!std::isfinite(best)) return std::nullopt;
  return origin + best * dir;
}

}  // namespace jmm
