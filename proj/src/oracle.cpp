#include "jmm/oracle.hpp"

#include "jmm/transport.hpp"

#include <cmath>

namespace jmm {

namespace {

Vec3 face_dir(double phi) { return {std::cos(phi), std::sin(phi), 0.0}; }

// Does the open segment a-b (projected to z = 0) cross the ray mu*d, mu > 0?
bool crosses_ray(const Vec3& a, const Vec3& b, const Vec3& d) {
  double ex = b[0] - a[0], ey = b[1] - a[1];
  // a + t e = mu d
  double det = ex * (-d[1]) - ey * (-d[0]);
  if (std::abs(det) < 1e-300) return false;
  double rx = -a[0], ry = -a[1];
  double t = (rx * (-d[1]) - ry * (-d[0])) / det;
  double mu = (ex * ry - ey * rx) / det;
  return t > 1e-14 && t < 1 - 1e-14 && mu > 0;
}

ExactJet point_jet(const Vec3& y, const Vec3& x, double c) {
  ExactJet j;
  Vec3 d = x - y;
  double r = d.norm();
  Vec3 u = d / r;
  j.T = r / c;
  j.grad = u / c;
  j.hess = (Mat3::Identity() - u * u.transpose()) / (c * r);
  return j;
}

ExactJet edge_jet(const Vec3& y, const Vec3& x, double c) {
  ExactJet j;
  double lam = wedge_edge_lambda(y, x);
  Vec3 xe(0, 0, lam);
  Vec3 d = x - xe;
  double rd = d.norm(), rs = (xe - y).norm();
  Vec3 u = d / rd;
  j.T = (rd + rs) / c;
  j.grad = u / c;
  j.hess = edge_tube_hessian(Vec3::UnitZ(), u, rd, rs, 1.0 / c);
  j.in_shadow = true;
  return j;
}

}  // namespace

Vec3 wedge_image(const WedgeGeom& g, WedgeBranch br) {
  double phi = br == WedgeBranch::NReflection ? g.n * kPi : 0.0;
  Vec3 nrm(-std::sin(phi), std::cos(phi), 0.0);
  return g.src - 2.0 * nrm.dot(g.src) * nrm;
}

bool wedge_segment_clear(const WedgeGeom& g, const Vec3& a, const Vec3& b) {
  if (g.n >= 2.0) return true;
  return !crosses_ray(a, b, face_dir(0.0)) && !crosses_ray(a, b, face_dir(g.n * kPi));
}

double wedge_edge_lambda(const Vec3& y, const Vec3& x) {
  double ry = std::hypot(y[0], y[1]), rx = std::hypot(x[0], x[1]);
  if (ry + rx == 0.0) return y[2];
  return y[2] + (x[2] - y[2]) * ry / (ry + rx);
}

double wedge_edge_lambda_golden(const Vec3& y, const Vec3& x, double lo, double hi, double tol) {
  auto f = [&](double l) {
    Vec3 e(0, 0, l);
    return (x - e).norm() + (e - y).norm();
  };
  const double gr = (std::sqrt(5.0) - 1) / 2;
  double a = lo, b = hi;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

ExactJet wedge_exact(const Vec3& x, const WedgeGeom& g, WedgeBranch br) {
  switch (br) {
    case WedgeBranch::Direct:
      if (wedge_segment_clear(g, g.src, x)) return point_jet(g.src, x, g.c);
      return edge_jet(g.src, x, g.c);
    case WedgeBranch::Diffraction:
      return edge_jet(g.src, x, g.c);
    case WedgeBranch::OReflection:
    case WedgeBranch::NReflection: {
      double phi = br == WedgeBranch::NReflection ? g.n * kPi : 0.0;
      Vec3 nrm(-std::sin(phi), std::cos(phi), 0.0);
      Vec3 t = face_dir(phi);
      if (br == WedgeBranch::NReflection) nrm = -nrm;  // towards the medium
      Vec3 y = wedge_image(g, br);
      double sy = nrm.dot(y), sx = nrm.dot(x);
      if (sx >= -1e-12 && sy < 0) {
        Vec3 p = y + (x - y) * (-sy / (sx - sy));
        if (t.dot(p) > 0 && wedge_segment_clear(g, p, x)) {
          // The real ray from the source to the reflection point must be clear too.
          if (wedge_segment_clear(g, g.src, p)) return point_jet(y, x, g.c);
        }
      }
      return edge_jet(y, x, g.c);
    }
  }
  return {};
}

double linear_speed_exact(const Vec3& x, const Vec3& src, double v0, const Vec3& v) {
  double nv = v.norm();
  double r2 = (x - src).squaredNorm();
  double s0 = 1.0 / v0, sx = 1.0 / (v0 + v.dot(x - src));
  if (nv == 0.0) return std::sqrt(r2) * s0;
  // acosh(1 + a) without cancellation for small a.
  double a = 0.5 * s0 * sx * nv * nv * r2;
  return std::log1p(a + std::sqrt(a * (a + 2.0))) / nv;
}

std::vector<double> brute_front_marcher(const MeshTopo& mesh, const BoundaryLabels& labels, const SpeedModel& speed,
                                        int src_vertex, double r_fac) {
  if (mesh.num_verts() > 1000) throw SolveError("brute-force front marcher limited to 1000 vertices");
  Branch b = make_branch(mesh, labels, speed);
  init_point_source(b, src_vertex, r_fac);
  MarchOptions opt;
  opt.brute_force = true;
  march(b, opt);
  std::vector<double> T(b.n());
  for (int v = 0; v < b.n(); ++v) T[v] = b.jets[v].T;
  return T;
}

}  // namespace jmm
