#include "jmm/transport.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace jmm {

namespace {

// Orthonormal pair spanning the plane orthogonal to unit u.
std::pair<Vec3, Vec3> perp_basis(const Vec3& u) {
  Vec3 a = std::abs(u[0]) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  Vec3 e1 = (a - a.dot(u) * u).normalized();
  return {e1, u.cross(e1)};
}

}  // namespace

CurvaturePair principal_curvatures(const Jet& jet, double s) {
  CurvaturePair out;
  if (!jet.grad_defined || !jet.hess_defined) return out;
  double gn = jet.grad.norm();
  if (!(gn > 0)) return out;
  Vec3 u = jet.grad / gn;
  auto [e1, e2] = perp_basis(u);
  Mat2 M;
  M(0, 0) = e1.dot(jet.hess * e1);
  M(1, 1) = e2.dot(jet.hess * e2);
  M(0, 1) = M(1, 0) = 0.5 * (e1.dot(jet.hess * e2) + e2.dot(jet.hess * e1));
  Eigen::SelfAdjointEigenSolver<Mat2> es(M);
  Vec2 ev = es.eigenvalues();
  int i1 = std::abs(ev[1]) >= std::abs(ev[0]) ? 1 : 0, i2 = 1 - i1;
  Mat2 V = es.eigenvectors();
  out.k1 = -ev[i1] / s;
  out.k2 = -ev[i2] / s;
  out.q1 = (V(0, i1) * e1 + V(1, i1) * e2).normalized();
  out.q2 = (V(0, i2) * e1 + V(1, i2) * e2).normalized();
  return out;
}

Mat3 edge_tube_hessian(const Vec3& t_e, const Vec3& u, double rho_d, double rho_in, double s) {
  Vec3 q2 = t_e.cross(u);
  double n2 = q2.norm();
  if (!(n2 > 0)) return Mat3::Constant(kNaN);
  q2 /= n2;
  Vec3 q1 = u.cross(q2);
  return s * (q2 * q2.transpose() / rho_d + q1 * q1.transpose() / (rho_d + rho_in));
}

HessianStats hessian_cell_average(Branch& b) {
  const MeshTopo& m = *b.mesh;
  const BoundaryLabels& L = *b.labels;
  HessianStats st;
  const bool have_org = static_cast<int>(b.org.size()) == b.n();
  std::vector<Mat3> out(b.n(), Mat3::Constant(kNaN));
  std::vector<uint8_t> ok(b.n(), 0);
  for (int v = 0; v < b.n(); ++v) {
    Jet& j = b.jets[v];
    const Vec3& x = m.verts[v];
    if (b.tube[v] == TubeKind::Source && b.bc.kind == BcDescriptor::Kind::PointSource) {
      if (v == b.bc.src_vertex) continue;
      out[v] = point_source_jet(b.bc.src, x, b.speed).hess;
      ok[v] = 1;
      st.analytic++;
      continue;
    }
    if (b.tube[v] == TubeKind::Edge && !b.is_bc[v] && b.plan.parents[v][0] >= 0) {
      int ci = L.vert_chain[b.plan.parents[v][0]];
      if (ci >= 0 && std::isfinite(b.T_e[v])) {
        double s = b.speed.slowness(x);
        Vec3 u = x - b.x_e[v];
        double rd = u.norm();
        out[v] = edge_tube_hessian(L.chains[ci].t_e, u / rd, rd, b.T_e[v] / s, s);
        ok[v] = out[v].allFinite();
        if (ok[v]) {
          st.analytic++;
          continue;
        }
      }
    }
    if (!j.grad_defined) continue;
    const bool lit = have_org ? b.org[v] >= 0.5 : true;
    // Passes: strict admissibility, then relaxed.
    for (int pass = 0; pass < 3 && !ok[v]; ++pass) {
      Mat3 acc = Mat3::Zero();
      int n = 0;
      for (int c : m.vc[v]) {
        const auto& cv = m.cells[c];
        bool good = true;
        for (int u : cv) {
          if (!b.jets[u].grad_defined) good = false;
          if (pass < 2 && have_org && (b.org[u] >= 0.5) != lit) good = false;
          if (pass < 1 && L.vert_chain[u] >= 0) good = false;
        }
        if (!good) continue;
        std::array<Jet, 4> js{b.jets[cv[0]], b.jets[cv[1]], b.jets[cv[2]], b.jets[cv[3]]};
        std::array<Vec3, 4> xs{m.verts[cv[0]], m.verts[cv[1]], m.verts[cv[2]], m.verts[cv[3]]};
        BBTet20 el = build_tet20(js, xs);
        std::array<double, 4> bary{0, 0, 0, 0};
        for (int k = 0; k < 4; ++k)
          if (cv[k] == v) bary[k] = 1.0;
        acc += el.hess(bary);
        ++n;
      }
      if (n > 0) {
        out[v] = acc / n;
        ok[v] = 1;
      }
    }
  }
  for (int v = 0; v < b.n(); ++v) {
    if (ok[v]) {
      b.jets[v].hess = 0.5 * (out[v] + out[v].transpose());
      b.jets[v].hess_defined = true;
    } else {
      b.jets[v].hess_defined = false;
      st.undefined++;
    }
  }
  return st;
}

std::complex<double> geometric_interp(std::span<const std::complex<double>> a, std::span<const double> w) {
  double logmag = 0.0, phase = 0.0;
  const double ref = std::arg(a[0]);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (w[i] == 0.0) continue;
    double m = std::abs(a[i]);
    if (m == 0.0) return 0.0;
    logmag += w[i] * std::log(m);
    double d = std::remainder(std::arg(a[i]) - ref, 2 * kPi);
    phase += w[i] * (ref + d);
  }
  return std::polar(std::exp(logmag), phase);
}

AmplitudeBc point_source_amplitude(const Branch& b, std::complex<double> A0) {
  return [&b, A0](int v) -> std::optional<std::complex<double>> {
    if (b.tube[v] != TubeKind::Source || v == b.bc.src_vertex) return std::nullopt;
    double r = (b.mesh->verts[v] - b.bc.src).norm();
    return A0 / r;
  };
}

AmplitudeStats propagate_amplitude(Branch& b, const AmplitudeBc& bc) {
  const MeshTopo& m = *b.mesh;
  AmplitudeStats st;
  std::fill(b.amp_defined.begin(), b.amp_defined.end(), 0);
  std::fill(b.amp.begin(), b.amp.end(), std::complex<double>(0.0));
  for (int v : b.plan.order) {
    if (auto a = bc(v)) {
      b.amp[v] = *a;
      b.amp_defined[v] = 1;
      st.from_bc++;
      continue;
    }
    PlanKind k = b.plan.kind[v];
    if (k == PlanKind::None || k == PlanKind::BcSource) {
      st.undefined++;
      continue;
    }
    std::array<std::complex<double>, 3> pa;
    std::array<double, 3> pw;
    Vec3 xl = Vec3::Zero();
    int n = 0;
    bool good = true;
    for (int i = 0; i < 3; ++i) {
      int p = b.plan.parents[v][i];
      if (p < 0) continue;
      if (!b.amp_defined[p] || b.amp[p] == 0.0) good = false;
      pa[n] = b.amp[p];
      pw[n] = b.plan.lam[v][i];
      xl += b.plan.lam[v][i] * m.verts[p];
      ++n;
    }
    double s = b.speed.slowness(m.verts[v]);
    auto kp = principal_curvatures(b.jets[v], s);
    if (!good || n == 0 || !std::isfinite(kp.k1)) {
      st.undefined++;
      continue;
    }
    // Trapezoidal rule for the mean curvature along the ray segment; falls
    // back to the endpoint value when a parent has no Hessian.
    double H_v = kp.k1 + kp.k2, H_l = 0.0;
    for (int i = 0; i < 3 && std::isfinite(H_l); ++i) {
      int p = b.plan.parents[v][i];
      if (p < 0) continue;
      auto kq = principal_curvatures(b.jets[p], b.speed.slowness(m.verts[p]));
      H_l = std::isfinite(kq.k1) ? H_l + b.plan.lam[v][i] * (kq.k1 + kq.k2) : kNaN;
    }
    double H = std::isfinite(H_l) ? 0.5 * (H_v + H_l) : H_v;
    std::complex<double> A = geometric_interp(std::span(pa.data(), n), std::span(pw.data(), n));
    double Lr = (m.verts[v] - xl).norm();
    A *= std::exp(0.5 * Lr * H);
    if (!b.speed.is_constant()) A *= std::sqrt(s / b.speed.slowness(xl));
    b.amp[v] = A;
    b.amp_defined[v] = 1;
  }
  for (int v = 0; v < b.n(); ++v)
    if (b.plan.accept_order[v] < 0) st.undefined++;
  return st;
}

std::optional<std::complex<double>> eval_amplitude(const Branch& b, const Vec3& x) {
  auto hit = locate(*b.mesh, x);
  if (!hit) return std::nullopt;
  const auto& cv = b.mesh->cells[hit->cell];
  std::array<std::complex<double>, 4> a;
  for (int k = 0; k < 4; ++k) {
    if (!b.amp_defined[cv[k]]) return std::nullopt;
    a[k] = b.amp[cv[k]];
  }
  return geometric_interp(a, hit->bary);
}

Vec3 slerp(const Vec3& t0, const Vec3& t1, double lam) {
  double c = std::clamp(t0.dot(t1), -1.0, 1.0);
  double th = std::acos(c);
  if (th < 1e-8) return ((1 - lam) * t0 + lam * t1).normalized();
  double st = std::sin(th);
  return (std::sin((1 - lam) * th) / st * t0 + std::sin(lam * th) / st * t1).normalized();
}

namespace {

Vec3 sphere_log(const Vec3& q, const Vec3& p) {
  double c = std::clamp(q.dot(p), -1.0, 1.0);
  double th = std::acos(c);
  Vec3 d = p - c * q;
  double n = d.norm();
  if (n < 1e-300) return Vec3::Zero();
  return th * d / n;
}

Vec3 sphere_exp(const Vec3& q, const Vec3& v) {
  double n = v.norm();
  if (n < 1e-300) return q;
  return (std::cos(n) * q + std::sin(n) * v / n).normalized();
}

}  // namespace

double swa_residual(const Vec3& q, std::span<const Vec3> p, std::span<const double> w) {
  Vec3 g = Vec3::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) g += w[i] * sphere_log(q, p[i]);
  return g.norm();
}

SwaResult spherical_weighted_average(std::span<const Vec3> p, std::span<const double> w, double tol, int max_iter) {
  SwaResult out;
  Vec3 q = Vec3::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) q += w[i] * p[i];
  if (!(q.norm() > 0)) throw SolveError("degenerate spherical average");
  q.normalize();
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    Vec3 g = Vec3::Zero();
    for (std::size_t i = 0; i < p.size(); ++i) g += w[i] * sphere_log(q, p[i]);
    Vec3 qn = sphere_exp(q, g);
    double step = (qn - q).norm();
    q = qn;
    if (step <= tol) {
      out.converged = true;
      break;
    }
  }
  out.q = q;
  out.residual = swa_residual(q, p, w);
  return out;
}

FieldStats transport_unit_field(Branch& b, UnitField which) {
  auto& f = which == UnitField::TIn ? b.t_in : b.t_out;
  FieldStats st;
  for (int v : b.plan.order) {
    if (f[v].allFinite()) {
      st.defined++;
      continue;
    }
    PlanKind k = b.plan.kind[v];
    if (k == PlanKind::None || k == PlanKind::BcSource) continue;
    std::array<Vec3, 3> pv;
    std::array<double, 3> pw;
    int n = 0;
    bool good = true;
    for (int i = 0; i < 3; ++i) {
      int p = b.plan.parents[v][i];
      if (p < 0) continue;
      if (!f[p].allFinite()) good = false;
      pv[n] = f[p];
      pw[n] = b.plan.lam[v][i];
      ++n;
    }
    if (!good || n == 0) continue;
    bool hemi = true;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (pv[i].dot(pv[j]) <= -1.0 + 1e-12) hemi = false;
    if (!hemi) {
      st.hemisphere_violations++;
      int best = static_cast<int>(std::max_element(pw.begin(), pw.begin() + n) - pw.begin());
      f[v] = pv[best];
    } else if (n == 1) {
      f[v] = pv[0];
    } else if (n == 2) {
      f[v] = slerp(pv[0], pv[1], pw[1]);
    } else {
      f[v] = spherical_weighted_average(std::span(pv.data(), 3), std::span(pw.data(), 3)).q;
    }
    st.defined++;
  }
  return st;
}

}  // namespace jmm
