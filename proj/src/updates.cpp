#include "jmm/updates.hpp"

#include <algorithm>
#include <cmath>

namespace jmm {

double update_tolerance(double l_min, double diam) {
  double r = l_min / diam;
  return r * r;
}

double update_tolerance(std::span<const double> edge_lengths, double diam) {
  return update_tolerance(*std::min_element(edge_lengths.begin(), edge_lengths.end()), diam);
}

SegmentData segment_data(const Jet& j0, const Jet& j1, const Vec3& x0, const Vec3& x1) {
  if (!j0.grad_defined || !j1.grad_defined) throw SolveError("triangle update needs parent gradients");
  Vec3 e = x1 - x0;
  return {j0.T, j1.T, e.dot(j0.grad), e.dot(j1.grad)};
}

std::array<double, 3> simplex_multipliers(const Vec2& lam, const Vec2& g, double eps) {
  const bool a1 = lam[0] <= eps, a2 = lam[1] <= eps, ah = 1.0 - lam[0] - lam[1] <= eps;
  const double f1 = g[0], f2 = g[1];
  double alpha = 0, beta = 0, gamma = 0;
  if (a1 && a2) {
    alpha = f1;
    beta = f2;
  } else if (a1 && ah) {
    gamma = -f2;
    alpha = f1 - f2;
  } else if (a2 && ah) {
    gamma = -f1;
    beta = f2 - f1;
  } else if (a1) {
    alpha = f1;
  } else if (a2) {
    beta = f2;
  } else if (ah) {
    gamma = -(f1 + f2) / 2;
  }
  return {std::max(alpha, 0.0), std::max(beta, 0.0), std::max(gamma, 0.0)};
}

// ---------------------------------------------------------------------------
// Triangle update

namespace {

struct SegCost {
  const SegmentData& seg;
  Vec3 x0, e, xhat;
  double s;

  double H(double t) const { return hermite_cubic_1d(seg.T0, seg.T1, seg.d0, seg.d1, t).value; }
  double value(double t) const { return H(t) + s * (xhat - x0 - t * e).norm(); }
  double deriv(double t) const {
    Vec3 r = xhat - x0 - t * e;
    return hermite_cubic_1d(seg.T0, seg.T1, seg.d0, seg.d1, t).deriv - s * r.dot(e) / r.norm();
  }
  double deriv2(double t) const {
    double t6 = 6 * t;
    double h2 = seg.T0 * (2 * t6 - 6) + seg.T1 * (6 - 2 * t6) + seg.d0 * (t6 - 4) + seg.d1 * (t6 - 2);
    Vec3 r = xhat - x0 - t * e;
    double d = r.norm();
    double re = r.dot(e) / d;
    return h2 + s * (e.squaredNorm() - re * re) / d;
  }
};

// Root of a derivative bracketed in [a, b] by safeguarded Newton.
template <class D, class D2>
double bracketed_root(const D& f, const D2& fp, double a, double b, int& iters, double tol = 1e-14) {
  double fa = f(a);
  double x = 0.5 * (a + b);
  for (int it = 0; it < 100; ++it) {
    ++iters;
    double fx = f(x);
    if (fx == 0) return x;
    if ((fx < 0) == (fa < 0)) {
      a = x;
      fa = fx;
    } else {
      b = x;
    }
    double d = fp(x);
    double xn = d != 0 ? x - fx / d : 0.5 * (a + b);
    if (!(xn > a && xn < b)) xn = 0.5 * (a + b);
    if (std::abs(xn - x) <= tol || b - a <= tol) return xn;
    x = xn;
  }
  return x;
}

}  // namespace

UpdateResult triangle_update(const SegmentData& seg, const Vec3& x0, const Vec3& x1, const Vec3& xhat,
                             double s) {
  SegCost c{seg, x0, x1 - x0, xhat, s};
  UpdateResult r;
  r.dim = 1;
  double best_t = 0.0, best = c.value(0.0);
  {
    double v1 = c.value(1.0);
    if (v1 < best) {
      best = v1;
      best_t = 1.0;
    }
  }
  constexpr int kGrid = 8;
  double dprev = c.deriv(0.0);
  for (int k = 1; k <= kGrid; ++k) {
    double a = (k - 1.0) / kGrid, b = static_cast<double>(k) / kGrid;
    double db = c.deriv(b);
    if (dprev < 0 && db >= 0) {
      double t = bracketed_root([&](double x) { return c.deriv(x); }, [&](double x) { return c.deriv2(x); }, a, b,
                                r.iterations);
      double v = c.value(t);
      if (v < best) {
        best = v;
        best_t = t;
      }
    }
    dprev = db;
  }
  r.lam = Vec2(best_t, 0.0);
  r.T = best;
  Vec3 ray = xhat - (x0 + best_t * c.e);
  r.grad = s * ray.normalized();
  if (best_t == 0.0) r.mult[0] = std::abs(c.deriv(0.0));
  if (best_t == 1.0) r.mult[1] = std::abs(c.deriv(1.0));
  r.converged = true;
  return r;
}

UpdateResult triangle_update(const Jet& j0, const Jet& j1, const Vec3& x0, const Vec3& x1, const Vec3& xhat,
                             const SpeedModel& speed) {
  auto seg = segment_data(j0, j1, x0, x1);
  if (speed.is_constant()) return triangle_update(seg, x0, x1, xhat, 1.0 / speed.c0);
  double lmin = std::min({(x1 - x0).norm(), (xhat - x0).norm(), (xhat - x1).norm()});
  double diam = std::max({(x1 - x0).norm(), (xhat - x0).norm(), (xhat - x1).norm()});
  return triangle_update_varc(seg, x0, x1, xhat, speed, 1e-3 * update_tolerance(lmin, diam));
}

// ---------------------------------------------------------------------------
// Tetrahedron update by SQP

namespace {

struct TetCost {
  const BBTri9& base;
  Vec3 x0;
  Eigen::Matrix<double, 3, 2> V;
  Vec3 xhat;
  double s;

  void eval(const Vec2& lam, double& f, Vec2& g, Mat2& H) const {
    double fT;
    Vec2 gT;
    Mat2 HT;
    base.eval_reduced(lam[0], lam[1], fT, gT, HT);
    Vec3 r = xhat - x0 - V * lam;
    double d = r.norm();
    Vec3 u = r / d;
    f = fT + s * d;
    g = gT - s * V.transpose() * u;
    H = HT + s * (V.transpose() * (Mat3::Identity() - u * u.transpose()) * V) / d;
  }
  double value(const Vec2& lam) const {
    double f;
    Vec2 g;
    Mat2 H;
    eval(lam, f, g, H);
    return f;
  }
};

Vec2 clip_to_simplex(Vec2 p) {
  p = p.cwiseMax(0.0);
  double s = p.sum();
  if (s > 1.0) p /= s;
  return p;
}

bool in_simplex(const Vec2& p) { return p[0] >= 0 && p[1] >= 0 && p[0] + p[1] <= 1; }

// argmin over the simplex of g.(p - lam) + 0.5 (p - lam)' H (p - lam), H SPD.
Vec2 solve_qp(const Vec2& lam, const Vec2& g, const Mat2& H) {
  Vec2 p = lam - H.ldlt().solve(g);
  if (in_simplex(p)) return p;
  auto Q = [&](const Vec2& q) {
    Vec2 d = q - lam;
    return g.dot(d) + 0.5 * d.dot(H * d);
  };
  static const std::array<std::array<Vec2, 2>, 3> edges = {
      {{Vec2(0, 0), Vec2(0, 1)}, {Vec2(0, 0), Vec2(1, 0)}, {Vec2(1, 0), Vec2(0, 1)}}};
  Vec2 best = Vec2::Zero();
  double bq = kInf;
  for (const auto& ed : edges) {
    Vec2 A = ed[0], D = ed[1] - ed[0];
    // Q(A + tD) = c + b t + a t^2
    Vec2 dA = A - lam;
    double a = 0.5 * D.dot(H * D);
    double b = g.dot(D) + dA.dot(H * D);
    double t = a > 0 ? std::clamp(-b / (2 * a), 0.0, 1.0) : (b < 0 ? 1.0 : 0.0);
    Vec2 q = A + t * D;
    if (t == 0.0) q = ed[0];
    if (t == 1.0) q = ed[1];
    double v = Q(q);
    if (v < bq) {
      bq = v;
      best = q;
    }
  }
  return best;
}

Mat2 clip_spd(const Mat2& H) {
  Eigen::SelfAdjointEigenSolver<Mat2> es(H);
  Vec2 ev = es.eigenvalues();
  double floor = 1e-8 * std::max(std::abs(H.trace()), 1e-300);
  ev = ev.cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

UpdateResult tetra_update(const BBTri9& base, const Vec3& xhat, double s, const TetraOptions& opt) {
  TetCost c{base, base.x[0], {}, xhat, s};
  c.V.col(0) = base.x[1] - base.x[0];
  c.V.col(1) = base.x[2] - base.x[0];
  Vec2 lam;
  if (opt.warm_start) {
    lam = clip_to_simplex(*opt.warm_start);
  } else {
    Mat2 G = c.V.transpose() * c.V;
    lam = clip_to_simplex(G.ldlt().solve(c.V.transpose() * (xhat - c.x0)));
  }
  UpdateResult r;
  r.dim = 2;
  double f;
  Vec2 g;
  Mat2 H;
  c.eval(lam, f, g, H);
  for (int it = 0; it < opt.max_iter; ++it) {
    r.iterations = it + 1;
    Vec2 p = solve_qp(lam, g, clip_spd(H));
    double fp = c.value(p);
    for (int bt = 0; bt < 30 && fp > f; ++bt) {
      p = lam + 0.5 * (p - lam);
      fp = c.value(p);
    }
    double step = (p - lam).norm();
    if (fp <= f) lam = p;
    c.eval(lam, f, g, H);
    if (step <= opt.tol) {
      r.converged = true;
      break;
    }
  }
  r.lam = lam;
  r.T = f;
  r.grad = s * (xhat - c.x0 - c.V * lam).normalized();
  r.mult = simplex_multipliers(lam, g);
  return r;
}

UpdateResult tetra_update(const std::array<Jet, 3>& jets, const std::array<Vec3, 3>& x, const Vec3& xhat,
                          const SpeedModel& speed, const TetraOptions& opt) {
  BBTri9 base = build_tri9(jets, x);
  if (speed.is_constant()) return tetra_update(base, xhat, 1.0 / speed.c0, opt);
  return tetra_update_varc(base, xhat, speed, opt.tol);
}

// ---------------------------------------------------------------------------
// Variable speed

double line_cost_varc(double T0, const Vec3& x0, const Vec3& xm, const Vec3& xhat, const SpeedModel& sp,
                      Vec3* grad) {
  double L = (xhat - x0).norm();
  Vec3 a = 4 * xm - 3 * x0 - xhat;
  Vec3 b = x0 - 4 * xm + 3 * xhat;
  double s0 = sp.slowness(x0), sm = sp.slowness(xm), s1 = sp.slowness(xhat);
  double na = a.norm(), nb = b.norm();
  if (grad) *grad = (2.0 / 3.0) * (s0 * a / na + L * sp.grad_slowness(xm) - s1 * b / nb);
  return T0 + (s0 * na + 4 * L * sm + s1 * nb) / 6.0;
}

LineVarc line_update_varc(double T0, const Vec3& x0, const Vec3& xhat, const SpeedModel& sp) {
  double L = (xhat - x0).norm();
  Vec3 xm = 0.5 * (x0 + xhat);
  LineVarc out{kInf, Vec3::Constant(kNaN), xm, 0, false};
  double s0 = sp.slowness(x0), s1 = sp.slowness(xhat);
  if (!sp.is_constant()) {
    for (int it = 0; it < 100; ++it) {
      out.iterations = it + 1;
      Vec3 a = 4 * xm - 3 * x0 - xhat;
      Vec3 b = x0 - 4 * xm + 3 * xhat;
      double na = a.norm(), nb = b.norm();
      Vec3 ah = a / na, bh = b / nb;
      Vec3 g = (2.0 / 3.0) * (s0 * ah + L * sp.grad_slowness(xm) - s1 * bh);
      Mat3 I = Mat3::Identity();
      Mat3 H = (2.0 / 3.0) * (s0 * 4.0 * (I - ah * ah.transpose()) / na + L * sp.hess_slowness(xm) +
                              s1 * 4.0 * (I - bh * bh.transpose()) / nb);
      H += 1e-12 * std::max(H.trace(), 1e-300) * I;
      Vec3 step = H.ldlt().solve(g);
      xm -= step;
      if (step.norm() <= 1e-10 * L) {
        out.converged = true;
        break;
      }
    }
  } else {
    out.converged = true;
  }
  out.xm = xm;
  out.T = line_cost_varc(T0, x0, xm, xhat, sp);
  out.grad = s1 * (x0 - 4 * xm + 3 * xhat).normalized();
  return out;
}

Quad2 fit_quad2(const std::array<Vec2, 6>& nodes, const std::array<double, 6>& values) {
  Eigen::Matrix<double, 6, 6> A;
  Eigen::Matrix<double, 6, 1> y;
  for (int i = 0; i < 6; ++i) {
    double x = nodes[i][0], z = nodes[i][1];
    A.row(i) << 1, x, z, x * x, x * z, z * z;
    y[i] = values[i];
  }
  Eigen::Matrix<double, 6, 1> c = A.fullPivLu().solve(y);
  return {c[0], c[1], c[2], c[3], c[4], c[5]};
}

Vec2 minimize_quad2_on_simplex(const Quad2& q) {
  Mat2 H;
  H << 2 * q.c11, q.c12, q.c12, 2 * q.c22;
  Vec2 g0(q.c1, q.c2);
  Eigen::SelfAdjointEigenSolver<Mat2> es(H);
  if (es.eigenvalues().minCoeff() > 0) {
    Vec2 p = -H.ldlt().solve(g0);
    if (in_simplex(p)) return p;
  }
  static const std::array<std::array<Vec2, 2>, 3> edges = {
      {{Vec2(0, 0), Vec2(0, 1)}, {Vec2(0, 0), Vec2(1, 0)}, {Vec2(1, 0), Vec2(0, 1)}}};
  Vec2 best = Vec2::Zero();
  double bv = kInf;
  for (const auto& ed : edges) {
    Vec2 A = ed[0], D = ed[1] - ed[0];
    double a = 0.5 * D.dot(H * D);
    double b = q.grad(A).dot(D);
    std::array<double, 3> ts{0.0, 1.0, a > 0 ? std::clamp(-b / (2 * a), 0.0, 1.0) : 0.0};
    for (double t : ts) {
      Vec2 p = t == 0.0 ? ed[0] : t == 1.0 ? ed[1] : Vec2(A + t * D);
      double v = q(p);
      if (v < bv) {
        bv = v;
        best = p;
      }
    }
  }
  return best;
}

namespace {

double tet_varc_cost(const BBTri9& base, const Vec2& lam, const Vec3& xhat, const SpeedModel& sp,
                     Vec3* grad = nullptr) {
  double f;
  Vec2 g;
  Mat2 H;
  base.eval_reduced(lam[0], lam[1], f, g, H);
  Vec3 xl = base.x[0] + lam[0] * (base.x[1] - base.x[0]) + lam[1] * (base.x[2] - base.x[0]);
  auto lu = line_update_varc(f, xl, xhat, sp);
  if (grad) *grad = lu.grad;
  return lu.T;
}

}  // namespace

UpdateResult tetra_update_varc(const BBTri9& base, const Vec3& xhat, const SpeedModel& sp, double tol,
                               int max_outer) {
  static const std::array<Vec2, 6> nu = {Vec2(0, 0), Vec2(0.5, 0), Vec2(1, 0),
                                         Vec2(0, 0.5), Vec2(0.5, 0.5), Vec2(0, 1)};
  const Vec2 ctr(1.0 / 3, 1.0 / 3);
  Vec2 centre = ctr, prev = Vec2::Constant(kNaN);
  double r = 1.0;
  UpdateResult out;
  out.dim = 2;
  Quad2 q{};
  Vec2 lam = ctr;
  for (int it = 0; it < max_outer; ++it) {
    out.iterations = it + 1;
    std::array<Vec2, 6> nodes;
    std::array<double, 6> vals;
    for (int k = 0; k < 6; ++k) {
      nodes[k] = centre + r * (nu[k] - ctr);
      vals[k] = tet_varc_cost(base, nodes[k], xhat, sp);
    }
    q = fit_quad2(nodes, vals);
    lam = minimize_quad2_on_simplex(q);
    if (it > 0 && (lam - prev).norm() <= tol) {
      out.converged = true;
      break;
    }
    prev = lam;
    centre = lam;
    r *= 0.5;
  }
  out.lam = lam;
  Vec3 grad;
  out.T = tet_varc_cost(base, lam, xhat, sp, &grad);
  out.grad = grad;
  out.mult = simplex_multipliers(lam, q.grad(lam));
  return out;
}

UpdateResult triangle_update_varc(const SegmentData& seg, const Vec3& x0, const Vec3& x1, const Vec3& xhat,
                                  const SpeedModel& sp, double tol, int max_outer) {
  auto cost = [&](double t, Vec3* grad) {
    double T = hermite_cubic_1d(seg.T0, seg.T1, seg.d0, seg.d1, t).value;
    auto lu = line_update_varc(T, x0 + t * (x1 - x0), xhat, sp);
    if (grad) *grad = lu.grad;
    return lu.T;
  };
  UpdateResult out;
  out.dim = 1;
  double centre = 0.5, r = 1.0, prev = kNaN, lam = 0.5;
  for (int it = 0; it < max_outer; ++it) {
    out.iterations = it + 1;
    double a = centre - 0.5 * r, b = centre, c = centre + 0.5 * r;
    double fa = cost(a, nullptr), fb = cost(b, nullptr), fc = cost(c, nullptr);
    // Parabola through the three nodes in the variable t.
    double h = 0.5 * r;
    double c2 = (fa - 2 * fb + fc) / (2 * h * h);
    double c1 = (fc - fa) / (2 * h);  // derivative at b
    double cand = c2 > 0 ? b - c1 / (2 * c2) : (c1 > 0 ? 0.0 : 1.0);
    cand = std::clamp(cand, 0.0, 1.0);
    // Compare with the endpoints of [0, 1] under the surrogate.
    auto sur = [&](double t) { return fb + c1 * (t - b) + c2 * (t - b) * (t - b); };
    for (double e : {0.0, 1.0})
      if (sur(e) < sur(cand)) cand = e;
    lam = cand;
    if (it > 0 && std::abs(lam - prev) <= tol) {
      out.converged = true;
      break;
    }
    prev = lam;
    centre = lam;
    r *= 0.5;
  }
  out.lam = Vec2(lam, 0.0);
  Vec3 grad;
  out.T = cost(lam, &grad);
  out.grad = grad;
  double eps = 1e-6;
  double d = (cost(std::min(lam + eps, 1.0), nullptr) - cost(std::max(lam - eps, 0.0), nullptr)) /
             (std::min(lam + eps, 1.0) - std::max(lam - eps, 0.0));
  if (lam == 0.0) out.mult[0] = std::abs(d);
  if (lam == 1.0) out.mult[1] = std::abs(d);
  return out;
}

// ---------------------------------------------------------------------------
// Physicality

PointLocation optimum_location(const UpdateResult& r, const MeshTopo& mesh, std::span<const int> base) {
  constexpr double eps = 1e-12;
  if (base.size() == 2) {
    double t = r.lam[0];
    Vec3 x = mesh.verts[base[0]] + t * (mesh.verts[base[1]] - mesh.verts[base[0]]);
    if (t <= eps) return PointLocation::vertex(mesh, base[0]);
    if (t >= 1 - eps) return PointLocation::vertex(mesh, base[1]);
    return PointLocation::edge(mesh.edge_id(base[0], base[1]), x);
  }
  std::array<double, 3> l{1.0 - r.lam[0] - r.lam[1], r.lam[0], r.lam[1]};
  Vec3 x = Vec3::Zero();
  for (int i = 0; i < 3; ++i) x += l[i] * mesh.verts[base[i]];
  std::array<int, 3> nz{};
  int n = 0;
  for (int i = 0; i < 3; ++i)
    if (l[i] > eps) nz[n++] = i;
  if (n == 1) return PointLocation::vertex(mesh, base[nz[0]]);
  if (n == 2) return PointLocation::edge(mesh.edge_id(base[nz[0]], base[nz[1]]), x);
  int f = mesh.face_id(base[0], base[1], base[2]);
  if (f < 0) return PointLocation::cell(-1, x);
  return PointLocation::face(f, x);
}

UpdateVerdict check_update_physical(const UpdateResult& r, const MeshTopo& mesh, std::span<const int> base,
                                    std::span<const Vec3> grads, int xhat, double mult_tol) {
  PointLocation loc = optimum_location(r, mesh, base);
  if (loc.kind == PointLocation::Kind::Edge && loc.id < 0) return UpdateVerdict::Reject;
  Vec3 ray = mesh.verts[xhat] - loc.x;
  double len = ray.norm();
  if (!(len > 0)) return UpdateVerdict::Reject;
  Vec3 dir = ray / len;
  Vec3 gsum = Vec3::Zero();
  for (const auto& g : grads)
    if (g.allFinite()) gsum += g;
  if (base.size() == 3) {
    Vec3 n = (mesh.verts[base[1]] - mesh.verts[base[0]]).cross(mesh.verts[base[2]] - mesh.verts[base[0]]);
    double side = n.dot(gsum);
    if (side == 0.0) return UpdateVerdict::Reject;
    if (side < 0) n = -n;
    if (n.dot(dir) <= 0) return UpdateVerdict::Reject;
  } else if (gsum.squaredNorm() > 0 && gsum.dot(dir) <= 0) {
    return UpdateVerdict::Reject;
  }
  if (!cone_contains(mesh, loc, dir)) return UpdateVerdict::Reject;
  if (!cone_contains(mesh, PointLocation::vertex(mesh, xhat), -dir)) return UpdateVerdict::Reject;
  return r.max_mult() <= mult_tol ? UpdateVerdict::InteriorAccept : UpdateVerdict::BoundaryPending;
}

}  // namespace jmm
