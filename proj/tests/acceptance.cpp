// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. --only <id> runs a single criterion (1..8, smoke).

#include "jmm/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace jmm;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt3(const std::array<double, 3>& a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "(%.3f, %.3f, %.3f)", a[0], a[1], a[2]);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome wedge_convergence() {
  Outcome o;
  ConvergeConfig c;
  c.case_name = "wedge";
  c.r_fac = 0.3;
  ConvergeResult r = run_converge(c);
  auto d = r.order("direct/all"), refl = r.order("o-reflection/all");
  double finest = kNaN;
  int last = -1;
  for (const auto& row : r.rows)
    if (row.kind == "data" && row.branch == "direct" && row.split == "all" && row.mesh > last) {
      last = row.mesh;
      finest = row.err_T;
    }
  o.detail << "direct orders " << fmt3(d) << ", o-reflection orders " << fmt3(refl) << ", finest rel l1 T "
           << finest << ", " << r.seconds << " s";
  o.check(d[0] >= 1.6 && d[1] >= 1.2 && d[2] >= 0.5, "direct orders >= (1.6, 1.2, 0.5)");
  o.check(refl[0] >= 1.7 && refl[1] >= 1.5 && refl[2] >= 0.6, "o-reflection orders >= (1.7, 1.5, 0.6)");
  o.check(finest <= 1e-3, "finest error <= 1e-3");
  o.check(r.seconds <= 900, "runtime <= 15 min");
  return o;
}

// ---------------------------------------------------------------- 2

Outcome cube_convergence() {
  Outcome o;
  ConvergeConfig c;
  c.case_name = "cube-linear";
  c.r_fac = 0.2;
  ConvergeResult r = run_converge(c);
  double p = r.order("direct/slice/last4")[0];
  o.detail << "slice order over meshes 4-7 " << p << ", all-mesh order " << r.order("direct/slice")[0] << ", "
           << r.seconds << " s";
  o.check(p >= 1.5, "order >= 1.5");
  o.check(r.seconds <= 300, "runtime <= 5 min");
  return o;
}

// ---------------------------------------------------------------- 3

Outcome fan_vs_brute() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> U(0, 1);
  double worst = 0.0;
  int meshes = 0;
  for (int t = 0; t < 8; ++t) {
    MeshTopo m;
    if (t % 3 == 2) {
      m = mesh_box_wedge(2, 1, 1.25 + 0.25 * static_cast<int>(rng() % 3), 0.25 + 0.08 * U(rng));
    } else {
      Vec3 lo(U(rng), U(rng), U(rng));
      Vec3 hi = lo + Vec3(0.8 + U(rng), 0.8 + U(rng), 0.8 + U(rng));
      SteinerPoint sp{true, lo + (hi - lo).cwiseProduct(Vec3(0.2 + 0.6 * U(rng), 0.2 + 0.6 * U(rng), 0.5))};
      m = mesh_box(lo, hi, 0.2 + 0.15 * U(rng), sp);
    }
    if (m.num_verts() > 500) continue;
    BoundaryLabels L = classify_boundary(m);
    int src;
    do src = static_cast<int>(rng() % m.num_verts());
    while (L.vert_on_chain(src));
    double rf = 0.1 * m.diam;
    Branch b = make_branch(m, L, SpeedModel::constant(1));
    init_point_source(b, src, rf);
    march(b);
    auto Tb = brute_front_marcher(m, L, SpeedModel::constant(1), src, rf);
    double tol = 10 * update_tolerance(m.h_min, m.diam) * m.diam, mx = 0;
    for (int v = 0; v < m.num_verts(); ++v) mx = std::max(mx, std::abs(b.jets[v].T - Tb[v]));
    worst = std::max(worst, mx / tol);
    o.check(mx <= tol, "mesh " + std::to_string(t) + " max |dT| " + std::to_string(mx) + " > " + std::to_string(tol));
    ++meshes;
  }
  o.detail << meshes << " meshes, worst max|dT|/tol " << worst;
  o.check(meshes >= 5, "at least 5 meshes");
  return o;
}

// ---------------------------------------------------------------- 4

Outcome quadratic_reproduction() {
  Outcome o;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(-1, 1);
  double worst = 0, worst_fd = 0;
  auto bary = [&] {
    std::array<double, 4> l;
    double s = 0;
    for (auto& x : l) s += (x = 0.5 * (U(rng) + 1.0) + 1e-3);
    for (auto& x : l) x /= s;
    return l;
  };
  for (int q = 0; q < 100; ++q) {
    double c = U(rng);
    Vec3 g(U(rng), U(rng), U(rng));
    Mat3 B;
    for (int i = 0; i < 9; ++i) B(i / 3, i % 3) = U(rng);
    Mat3 A = B + B.transpose();
    auto f = [&](const Vec3& x) { return c + g.dot(x) + 0.5 * x.dot(A * x); };
    std::array<Vec3, 4> x;
    do
      for (auto& p : x) p = Vec3(U(rng), U(rng), U(rng));
    while (std::abs((x[1] - x[0]).cross(x[2] - x[0]).dot(x[3] - x[0])) < 0.05);
    std::array<Jet, 4> j;
    for (int i = 0; i < 4; ++i) j[i] = Jet::with_grad(f(x[i]), g + A * x[i]);
    BBTet20 e = build_tet20(j, x);
    for (int k = 0; k < 100; ++k) {
      auto l = bary();
      Vec3 y = l[0] * x[0] + l[1] * x[1] + l[2] * x[2] + l[3] * x[3];
      worst = std::max(worst, std::abs(e.eval(l) - f(y)));
    }
    // Barycentric gradient against central differences along each edge direction.
    auto l = bary();
    std::array<double, 4> bg = e.bb_grad(l);
    const double h = 1e-6;
    for (int i = 1; i < 4; ++i) {
      auto lp = l, lm = l;
      lp[i] += h;
      lp[0] -= h;
      lm[i] -= h;
      lm[0] += h;
      double fd = (e.eval(lp) - e.eval(lm)) / (2 * h);
      worst_fd = std::max(worst_fd, std::abs(fd - (bg[i] - bg[0])));
    }
  }
  o.detail << "max |error| " << worst << ", max bb_grad vs FD " << worst_fd;
  o.check(worst <= 1e-12, "reproduction <= 1e-12");
  o.check(worst_fd <= 1e-6, "bb_grad vs FD <= 1e-6");
  return o;
}

// ---------------------------------------------------------------- 5

cplx simpson(const std::function<cplx(double)>& f, double a, double b, cplx fa, cplx fm, cplx fb, cplx whole,
             double tol, int depth) {
  double m = 0.5 * (a + b);
  cplx flm = f(0.5 * (a + m)), frm = f(0.5 * (m + b));
  cplx left = (m - a) / 6 * (fa + 4.0 * flm + fm), right = (b - m) / 6 * (fm + 4.0 * frm + fb);
  cplx diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15 * tol) return left + right + diff / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

Outcome utd_checks() {
  Outcome o;
  auto f = [](double y) { return std::exp(cplx(0, -y * y)); };
  // Cumulative quadrature of exp(-i y^2) from 0, subtracted from the full integral.
  const int P = 1000;
  double worst = 0, prev = 0;
  cplx acc = 0.0;
  for (int i = 0; i < P; ++i) {
    double x = 20.0 * i / (P - 1);
    cplx fa = f(prev), fb = f(x), fm = f(0.5 * (prev + x));
    if (x > prev) acc += simpson(f, prev, x, fa, fm, fb, (x - prev) / 6 * (fa + 4.0 * fm + fb), 1e-16, 50);
    prev = x;
    cplx oracle = std::sqrt(kPi / 8.0) * cplx(1, -1) - acc;
    worst = std::max(worst, std::abs(fresnel_modified_negative(x) - oracle));
  }
  double maxF = 0;
  for (int i = 1; i <= 10000; ++i) maxF = std::max(maxF, std::abs(transition_F(std::pow(10.0, -5.0 + 10.0 * i / 10000))));

  // Sound-hard half plane, plane-wave incidence, k rho = 50.
  const double k = 1.0, rho = 50.0, pin = kPi / 3;
  auto field = [&](double phi) {
    cplx u = 0.0;
    if (phi < pin + kPi) u += std::exp(cplx(0, -k * rho * std::cos(phi - pin)));
    if (phi < kPi - pin) u += std::exp(cplx(0, -k * rho * std::cos(phi + pin)));
    return u + utd_D(2.0, k, rho, kPi / 2, pin, phi).D * diffraction_spreading(kInf, rho) * std::exp(cplx(0, k * rho));
  };
  double jump = 0;
  for (double sb : {pin + kPi, kPi - pin}) jump = std::max(jump, std::abs(field(sb - 1e-6) - field(sb + 1e-6)));

  bool finite = true;
  for (double n : {1.25, 1.5, 1.75, 2.0})
    for (double pin2 : {0.2, 0.9, 1.7}) {
      if (pin2 > n * kPi) continue;
      for (double po : {pin2 + kPi, kPi - pin2, 2 * n * kPi - kPi - pin2, pin2 - kPi + 2 * n * kPi}) {
        if (po < 0 || po > n * kPi) continue;
        cplx D = utd_D(n, 10.0, 1.5, 1.2, pin2, po).D;
        finite = finite && std::isfinite(D.real()) && std::isfinite(D.imag());
      }
    }
  o.detail << "F_- vs quadrature " << worst << ", max |F| " << maxF << ", shadow-boundary jump " << jump
           << ", poles finite " << (finite ? "yes" : "no");
  o.check(worst <= 1e-10, "F_- within 1e-10");
  o.check(maxF <= 1 + 1e-9, "|F| <= 1 + 1e-9");
  o.check(jump <= 0.02, "jump <= 2%");
  o.check(finite, "D finite at poles");
  return o;
}

// ---------------------------------------------------------------- 6

double sphere_energy(const Vec3& q, std::span<const Vec3> p, std::span<const double> w) {
  double e = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double a = std::acos(std::clamp(q.dot(p[i]), -1.0, 1.0));
    e += 0.5 * w[i] * a * a;
  }
  return e;
}

Outcome transport_checks() {
  Outcome o;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> N(0, 1);
  std::uniform_real_distribution<double> U(0, 1);
  auto unit = [&] { return Vec3(N(rng), N(rng), N(rng)).normalized(); };
  double worst_res = 0, worst_grid = 0, worst_slerp = 0;
  for (int t = 0; t < 50; ++t) {
    Vec3 c = unit();
    std::vector<Vec3> p;
    std::vector<double> w;
    double ws = 0;
    for (int i = 0; i < 3; ++i) {
      Vec3 q;
      do q = unit();
      while (q.dot(c) < std::cos(0.7));
      p.push_back(q);
      w.push_back(0.1 + U(rng));
      ws += w.back();
    }
    for (auto& x : w) x /= ws;
    SwaResult r = spherical_weighted_average(p, w);
    worst_res = std::max(worst_res, r.converged ? swa_residual(r.q, p, w) : kInf);
    // Brute force over a latitude-longitude grid, then compare minimisers.
    double best = kInf;
    Vec3 bq = Vec3::Zero();
    const int G = 400;
    Vec3 e1 = c.unitOrthogonal(), e2 = c.cross(e1);
    for (int a = 0; a <= G; ++a)
      for (int b = 0; b < 4 * G; ++b) {
        double th = 1.2 * a / G, ph = 2 * kPi * b / (4 * G);
        Vec3 q = std::cos(th) * c + std::sin(th) * (std::cos(ph) * e1 + std::sin(ph) * e2);
        double e = sphere_energy(q, p, w);
        if (e < best) {
          best = e;
          bq = q;
        }
      }
    worst_grid = std::max(worst_grid, std::acos(std::clamp(bq.dot(r.q), -1.0, 1.0)));
    // Two-point average against slerp.
    double lam = U(rng);
    std::array<Vec3, 2> pp{p[0], p[1]};
    std::array<double, 2> ww{1 - lam, lam};
    worst_slerp = std::max(worst_slerp, (spherical_weighted_average(pp, ww).q - slerp(p[0], p[1], lam)).norm());
  }

  // Point-source amplitude on refined boxes.
  std::vector<double> hs, errs;
  for (double te : {0.4, 0.2, 0.1, 0.05}) {
    MeshTopo m = mesh_box(Vec3(-1, -1, -1), Vec3(1, 1, 1), te);
    BoundaryLabels L = classify_boundary(m);
    int src = nearest_vertex(m, Vec3::Zero());
    SolveOptions so;
    so.r_fac = 0.3;
    Branch b = solve_point_source(m, L, SpeedModel::constant(1), src, so);
    double e = 0, n = 0;
    for (int v = 0; v < m.num_verts(); ++v) {
      if (v == src) continue;
      double ex = 1.0 / (m.verts[v] - m.verts[src]).norm();
      e += b.amp_defined[v] ? std::abs(std::abs(b.amp[v]) - ex) : ex;
      n += ex;
    }
    hs.push_back(m.h_avg);
    errs.push_back(e / n);
  }
  double p = fit_order(hs, errs);
  o.detail << "SWA residual " << worst_res << ", grid angle " << worst_grid << ", slerp " << worst_slerp
           << ", amplitude order " << p << " (finest rel l1 " << errs.back() << ")";
  o.check(worst_res <= 1e-10, "SWA residual <= 1e-10");
  o.check(worst_grid <= 2 * 1.2 / 400, "grid minimiser within two grid cells");
  o.check(worst_slerp <= 1e-10, "slerp consistency <= 1e-10");
  o.check(p >= 0.7, "amplitude order >= 0.7");
  return o;
}

// ---------------------------------------------------------------- 7

// Hausdorff distance between the org = 1/2 crossings on z = 0 and the
// segment from the origin to (-2, -2).
double org_boundary_distance(const Branch& b, const MeshTopo& m) {
  const int G = 400;
  auto org_at = [&](double x, double y) {
    auto hit = locate(m, Vec3(x, y, 0));
    if (!hit) return kNaN;
    double s = 0;
    for (int q = 0; q < 4; ++q) s += hit->bary[q] * b.org[m.cells[hit->cell][q]];
    return s;
  };
  std::vector<double> grid((G + 1) * (G + 1));
  auto X = [&](int i) { return -2.0 + 4.0 * i / G; };
  for (int j = 0; j <= G; ++j)
    for (int i = 0; i <= G; ++i) grid[j * (G + 1) + i] = org_at(X(i), X(j));
  std::vector<Vec2> cross;
  auto edge = [&](int i0, int j0, int i1, int j1) {
    double a = grid[j0 * (G + 1) + i0] - 0.5, c = grid[j1 * (G + 1) + i1] - 0.5;
    if (!std::isfinite(a) || !std::isfinite(c) || (a < 0) == (c < 0)) return;
    double t = a / (a - c);
    cross.emplace_back(X(i0) + t * (X(i1) - X(i0)), X(j0) + t * (X(j1) - X(j0)));
  };
  for (int j = 0; j <= G; ++j)
    for (int i = 0; i <= G; ++i) {
      if (i < G) edge(i, j, i + 1, j);
      if (j < G) edge(i, j, i, j + 1);
    }
  if (cross.empty()) return kInf;
  const Vec2 a(0, 0), d = Vec2(-2, -2);
  auto to_seg = [&](const Vec2& p) {
    double t = std::clamp(p.dot(d) / d.squaredNorm(), 0.0, 1.0);
    return (p - t * d).norm();
  };
  double h1 = 0;
  for (const auto& p : cross) h1 = std::max(h1, to_seg(p));
  double h2 = 0;
  for (int s = 0; s <= 200; ++s) {
    Vec2 q = a + d * (s / 200.0);
    double best = kInf;
    for (const auto& p : cross) best = std::min(best, (p - q).norm());
    h2 = std::max(h2, best);
  }
  return std::max(h1, h2);
}

Outcome org_and_reinit() {
  Outcome o;
  std::ostringstream ds, rs;
  for (double vol : default_wedge_maxvols()) {
    double te = wedge_edge_for_volume(vol);
    MeshTopo m = mesh_box_wedge(4.0, 2.0, 1.75, te);
    BoundaryLabels L = classify_boundary(m);
    int src = nearest_vertex(m, Vec3(1, 1, 0));
    WedgeGeom g;
    g.src = m.verts[src];
    SolveOptions s0, s1;
    s0.r_fac = s1.r_fac = 0.3;
    s0.reinit_passes = 0;
    s1.reinit_passes = 1;
    Branch b0 = solve_point_source(m, L, SpeedModel::constant(1), src, s0);
    Branch b1 = solve_point_source(m, L, SpeedModel::constant(1), src, s1);
    double hd = org_boundary_distance(b1, m);
    ds << " " << hd / te;
    o.check(hd <= 3 * te, "Hausdorff <= 3h at h=" + std::to_string(te));
    auto shadow_err = [&](const Branch& br) {
      double e = 0;
      for (int v = 0; v < m.num_verts(); ++v) {
        if (L.vert_on_chain(v)) continue;
        ExactJet ex = wedge_exact(m.verts[v], g, WedgeBranch::Direct);
        if (ex.in_shadow) e += std::abs(br.jets[v].T - ex.T);
      }
      return e;
    };
    double e0 = shadow_err(b0), e1 = shadow_err(b1);
    rs << " " << e1 / e0;
    o.check(e1 < e0, "reinit reduces shadow error at h=" + std::to_string(te));
  }
  o.detail << "Hausdorff/h" << ds.str() << "; shadow error ratio after/before reinit" << rs.str();
  return o;
}

// ---------------------------------------------------------------- 8

Outcome determinism() {
  Outcome o;
  const std::string spec = "builtin:wedge:n=1.5,w=4,h=2,edge=0.25";
  MeshTopo m = build_mesh(spec);
  BoundaryLabels L = classify_boundary(m);
  int src = nearest_vertex(m, Vec3(1, 1, 0));
  auto run = [&](int jobs) {
    TreeOptions to;
    to.solve.r_fac = 0.3;
    to.solve.march.check_invariants = true;
    to.jobs = jobs;
    BranchTree t = expand_tree(solve_point_source(m, L, SpeedModel::constant(1), src, to.solve), to);
    std::vector<std::string> bytes;
    for (std::size_t i = 0; i < t.branches.size(); ++i) {
      BranchHeader h{spec, mesh_hash(m), m.num_verts(), static_cast<int>(i), t.parent[i], t.depth[i], t.label[i]};
      bytes.push_back(branch_bytes(t.branches[i], h, BranchFormat::Binary));
    }
    return std::make_pair(std::move(t), std::move(bytes));
  };
  auto [ta, a] = run(1);
  auto [tb, b] = run(1);
  auto [tc, c] = run(4);
  bool layered = true, caches = true, perm = true, inv = true;
  for (const Branch& br : ta.branches) {
    layered = layered && state_layering_ok(br);
    caches = caches && br.stats.caches_empty_at_end;
    perm = perm && accept_order_is_permutation(br);
    inv = inv && br.stats.invariant_violations == 0;
  }
  o.detail << ta.branches.size() << " branches; repeat identical " << (a == b ? "yes" : "no") << ", 4 threads identical "
           << (a == c ? "yes" : "no");
  o.check(a == b, "bitwise repeat");
  o.check(a == c, "bitwise across thread counts");
  o.check(layered && inv, "state layering");
  o.check(caches, "caches empty");
  o.check(perm, "accept order is a permutation");
  return o;
}

// ---------------------------------------------------------------- smoke

Outcome building_smoke() {
  Outcome o;
  MeshTopo m = mesh_building(0.25);
  BoundaryLabels L = classify_boundary(m);
  int src = nearest_vertex(m, Vec3(1.5, 2.2, 1.0));
  TreeOptions to;
  to.max_depth = 1;
  BranchTree t = expand_tree(solve_point_source(m, L, SpeedModel::constant(1), src, to.solve), to);
  int bad = 0, errors = 0;
  for (std::size_t i = 0; i < t.branches.size(); ++i) {
    errors += !t.errors[i].empty();
    const Branch& b = t.branches[i];
    for (int v = 0; v < b.n(); ++v) {
      const Jet& j = b.jets[v];
      if (b.state[v] != NodeState::Valid || !std::isfinite(j.T) || (j.grad_defined && !j.grad.allFinite())) ++bad;
    }
  }
  o.detail << m.num_verts() << " vertices, " << t.branches.size() << " branches, " << errors << " errors, " << bad
           << " non-finite or unreached values";
  o.check(errors == 0, "no branch errors");
  o.check(bad == 0, "finite fields");
  o.check(t.branches.size() > 1, "children solved");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = argv[++i];
  struct Crit {
    const char* id;
    const char* name;
    Outcome (*fn)();
  };
  const Crit crits[] = {
      {"1", "wedge convergence", wedge_convergence},
      {"2", "linear-speed cube convergence", cube_convergence},
      {"3", "fan update agrees with brute force", fan_vs_brute},
      {"4", "cubic Bernstein-Bezier reproduction", quadratic_reproduction},
      {"5", "UTD coefficient", utd_checks},
      {"6", "transport and amplitude", transport_checks},
      {"7", "org level set and shadow reinitialisation", org_and_reinit},
      {"8", "determinism and marcher invariants", determinism},
      {"smoke", "building scene at depth 1", building_smoke},
  };
  int failed = 0, ran = 0;
  for (const auto& c : crits) {
    if (!only.empty() && only != c.id) continue;
    ++ran;
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    std::printf("%s %s: %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.str().c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    failed += !o.pass;
  }
  if (ran == 0) {
    std::fprintf(stderr, "unknown criterion '%s'\n", only.c_str());
    return 2;
  }
  return failed ? 1 : 0;
}
