#include "jmm/scatter.hpp"

#include <cmath>
#include <atomic>
#include <deque>
#include <optional>
#include <thread>

namespace jmm {

namespace {

double resolve_r_fac(const MeshTopo& m, const SolveOptions& opt) {
  return std::isfinite(opt.r_fac) ? opt.r_fac : default_r_fac(m);
}

MarchOptions march_opts(const MeshTopo& m, const SolveOptions& opt) {
  MarchOptions mo = opt.march;
  mo.r_fac = resolve_r_fac(m, opt);
  return mo;
}

void finish(Branch& b, const SolveOptions& opt) {
  MarchOptions mo = march_opts(*b.mesh, opt);
  march(b, mo);
  compute_org(b);
  for (int p = 0; p < opt.reinit_passes; ++p)
    if (reinit_shadow_zone(b, mo) == 0) break;
  hessian_cell_average(b);
}

// Carries the incident eikonal at the diffraction point along the plan.
void transport_T_e(Branch& b) {
  for (int v : b.plan.order) {
    if (std::isfinite(b.T_e[v])) continue;
    PlanKind k = b.plan.kind[v];
    if (k == PlanKind::None || k == PlanKind::BcSource) continue;
    double acc = 0.0;
    bool good = true;
    for (int i = 0; i < 3; ++i) {
      int p = b.plan.parents[v][i];
      if (p < 0) continue;
      if (!std::isfinite(b.T_e[p])) good = false;
      acc += b.plan.lam[v][i] * b.T_e[p];
    }
    if (good) b.T_e[v] = acc;
  }
}

}  // namespace

Branch solve_point_source(const MeshTopo& mesh, const BoundaryLabels& labels, const SpeedModel& speed,
                          int src_vertex, const SolveOptions& opt) {
  Branch b = make_branch(mesh, labels, speed);
  init_point_source(b, src_vertex, resolve_r_fac(mesh, opt));
  finish(b, opt);
  propagate_amplitude(b, point_source_amplitude(b));
  return b;
}

std::vector<Jet> make_reflection_bcs(const Branch& parent, int facet) {
  const Facet& F = parent.labels->facets.at(facet);
  std::vector<Jet> out;
  out.reserve(F.verts.size());
  for (int v : F.verts) {
    const Jet& j = parent.jets[v];
    out.push_back(j.grad_defined ? Jet::with_grad(j.T, j.grad) : Jet::value(j.T));
  }
  bool any = false;
  for (const auto& j : out)
    if (std::isfinite(j.T)) any = true;
  if (!any) throw SolveError("facet " + std::to_string(facet) + " has no incident data");
  return out;
}

EdgeIncident make_diffraction_bcs(const Branch& parent, int chain) {
  const EdgeChain& ch = parent.labels->chains.at(chain);
  EdgeIncident inc;
  bool any = false;
  for (int v : ch.verts) {
    const Jet& j = parent.jets[v];
    inc.T.push_back(j.T);
    if (j.grad_defined) {
      inc.dT.push_back(ch.t_e.dot(j.grad));
      inc.dir.push_back(j.grad.normalized());
    } else {
      inc.dT.push_back(parent.tang[v]);
      inc.dir.push_back(Vec3::Constant(kNaN));
    }
    if (std::isfinite(j.T)) any = true;
  }
  if (!any) throw SolveError("edge chain " + std::to_string(chain) + " has no incident data");
  return inc;
}

bool facet_visible(const Branch& parent, int facet) {
  const Facet& F = parent.labels->facets.at(facet);
  if (F.open) return false;
  if (parent.bc.kind == BcDescriptor::Kind::Reflection && parent.bc.facet == facet) return false;
  for (int v : F.verts) {
    if (parent.labels->vert_chain[v] >= 0) continue;
    const Jet& j = parent.jets[v];
    if (parent.org[v] < 0.5 || !std::isfinite(j.T) || !j.grad_defined) continue;
    if (j.grad.dot(F.normal) > 1e-9 * j.grad.norm()) return true;
  }
  return false;
}

bool chain_visible(const Branch& parent, int chain) {
  if (parent.bc.kind == BcDescriptor::Kind::Diffraction && parent.bc.chain == chain) return false;
  for (int v : parent.labels->chains.at(chain).verts)
    if (parent.org[v] >= 0.5 && std::isfinite(parent.jets[v].T)) return true;
  return false;
}

Branch solve_reflection(const Branch& parent, int facet, const SolveOptions& opt) {
  Branch b = make_branch(*parent.mesh, *parent.labels, parent.speed);
  init_reflection(b, facet, make_reflection_bcs(parent, facet), resolve_r_fac(*parent.mesh, opt));
  finish(b, opt);
  propagate_amplitude(b, [&](int v) -> std::optional<cplx> {
    if (!b.is_bc[v] || !parent.amp_defined[v]) return std::nullopt;
    return parent.amp[v];
  });
  return b;
}

Branch solve_diffraction(const Branch& parent, int chain, const SolveOptions& opt) {
  Branch b = make_branch(*parent.mesh, *parent.labels, parent.speed);
  init_edge_diffraction(b, chain, make_diffraction_bcs(parent, chain), resolve_r_fac(*parent.mesh, opt));
  finish(b, opt);
  transport_T_e(b);
  transport_unit_field(b, UnitField::TIn);
  transport_unit_field(b, UnitField::TOut);
  const MeshTopo& m = *b.mesh;
  propagate_amplitude(b, [&](int v) -> std::optional<cplx> {
    if (b.tube[v] != TubeKind::Edge || b.is_bc[v]) return std::nullopt;
    int a = b.plan.parents[v][0], c = b.plan.parents[v][1];
    if (a < 0 || c < 0 || !parent.amp_defined[a] || !parent.amp_defined[c]) return std::nullopt;
    std::array<cplx, 2> pa{parent.amp[a], parent.amp[c]};
    std::array<double, 2> pw{b.plan.lam[v][0], b.plan.lam[v][1]};
    cplx A_in = geometric_interp(pa, pw);
    double s = b.speed.slowness(m.verts[v]);
    double rho_d = (m.verts[v] - b.x_e[v]).norm();
    return diffraction_spreading(b.T_e[v] / s, rho_d) * A_in;
  });
  return b;
}

BranchTree expand_tree(Branch root, const TreeOptions& opt) {
  BranchTree tree;
  tree.branches.push_back(std::move(root));
  tree.parent.push_back(-1);
  tree.depth.push_back(0);
  tree.label.push_back("direct");
  tree.errors.push_back("");
  std::deque<int> q{0};
  auto bc_level_ok = [&](const Branch& p, const std::vector<int>& verts) {
    if (!std::isfinite(opt.min_amp_db)) return true;
    double mx = 0.0;
    for (int v : verts)
      if (p.amp_defined[v]) mx = std::max(mx, std::abs(p.amp[v]));
    return mx > 0 && 20 * std::log10(mx) >= opt.min_amp_db;
  };
  struct Task {
    bool reflection;
    int index;
    std::string label;
  };
  while (!q.empty()) {
    int id = q.front();
    q.pop_front();
    if (tree.depth[id] >= opt.max_depth) continue;
    const Branch& p = tree.branches[id];
    const BoundaryLabels& L = *p.labels;
    std::vector<Task> tasks;
    for (int f = 0; f < static_cast<int>(L.facets.size()); ++f)
      if (facet_visible(p, f) && bc_level_ok(p, L.facets[f].verts))
        tasks.push_back({true, f, "reflection:" + std::to_string(f)});
    for (int c = 0; c < static_cast<int>(L.chains.size()); ++c)
      if (chain_visible(p, c) && bc_level_ok(p, L.chains[c].verts))
        tasks.push_back({false, c, "diffraction:" + std::to_string(c)});

    std::vector<std::optional<Branch>> out(tasks.size());
    std::vector<std::string> err(tasks.size());
    auto run = [&](std::size_t i) {
      try {
        out[i] = tasks[i].reflection ? solve_reflection(p, tasks[i].index, opt.solve)
                                     : solve_diffraction(p, tasks[i].index, opt.solve);
      } catch (const SolveError& e) {
        err[i] = e.what();
      }
    };
    // Children of one parent are independent; results are stored by index so
    // the tree does not depend on the thread count.
    const std::size_t nthreads = std::min<std::size_t>(std::max(1, opt.jobs), tasks.size());
    if (nthreads <= 1) {
      for (std::size_t i = 0; i < tasks.size(); ++i) run(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < nthreads; ++t)
        pool.emplace_back([&] {
          for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) run(i);
        });
      for (auto& th : pool) th.join();
    }

    for (std::size_t i = 0; i < tasks.size(); ++i) {
      int child = static_cast<int>(tree.branches.size());
      if (out[i]) {
        out[i]->bc.parent = id;
        tree.branches.push_back(std::move(*out[i]));
      } else {
        const Branch& pp = tree.branches[id];
        tree.branches.push_back(make_branch(*pp.mesh, *pp.labels, pp.speed));
      }
      tree.errors.push_back(err[i]);
      tree.parent.push_back(id);
      tree.depth.push_back(tree.depth[id] + 1);
      tree.label.push_back(tasks[i].label);
      if (err[i].empty()) q.push_back(child);
    }
  }
  return tree;
}

std::vector<cplx> effective_amplitude(const Branch& b, double k) {
  std::vector<cplx> out(b.n(), cplx(kNaN, kNaN));
  const bool diff = b.bc.kind == BcDescriptor::Kind::Diffraction;
  const EdgeChain* ch = diff ? &b.labels->chains.at(b.bc.chain) : nullptr;
  for (int v = 0; v < b.n(); ++v) {
    if (!b.amp_defined[v]) continue;
    if (!diff) {
      out[v] = b.amp[v];
      continue;
    }
    if (!b.t_in[v].allFinite() || !b.t_out[v].allFinite() || !std::isfinite(b.T_e[v])) continue;
    const Vec3& x = b.mesh->verts[v];
    double s = b.speed.slowness(x);
    double rho_d = (b.jets[v].T - b.T_e[v]) / s, rho_in = b.T_e[v] / s;
    if (!(rho_d > 0) || !(rho_in > 0)) continue;
    WedgeFrame fr{ch->t_e, ch->n_o, ch->t_o, ch->n_wedge};
    try {
      auto ang = wedge_angles(fr, b.t_in[v], b.t_out[v]);
      double L = length_parameter_L(rho_d, rho_in, rho_in, rho_in, ang.beta);
      auto D = utd_D(fr.n, k, L, ang.beta, ang.phi_in, ang.phi_out);
      out[v] = D.D * b.amp[v];
    } catch (const SolveError&) {
    }
  }
  return out;
}

Superposition superpose(const std::vector<const Branch*>& branches, double omega, std::span<const Vec3> points) {
  Superposition out;
  out.u.assign(points.size(), 0.0);
  out.mask.assign(points.size(), 0);
  for (const Branch* b : branches) {
    const MeshTopo& m = *b->mesh;
    EikonalSpline sp = build_spline(m, b->jets);
    double k = omega * b->speed.slowness(m.verts[0]);
    auto eff = effective_amplitude(*b, k);
    const bool masked = b->bc.kind != BcDescriptor::Kind::Diffraction;
    for (std::size_t i = 0; i < points.size(); ++i) {
      auto hit = locate(m, points[i]);
      if (!hit) continue;
      const auto& cv = m.cells[hit->cell];
      std::array<cplx, 4> a;
      bool good = true;
      double org = 0.0;
      for (int q = 0; q < 4; ++q) {
        a[q] = eff[cv[q]];
        if (!std::isfinite(a[q].real())) good = false;
        org += hit->bary[q] * b->org[cv[q]];
      }
      if (!good || (masked && org < 0.5)) continue;
      double T = spline_eval(sp, points[i]).T;
      out.u[i] += geometric_interp(a, hit->bary) * std::exp(cplx(0.0, omega * T));
      out.mask[i] = 1;
    }
  }
  return out;
}

}  // namespace jmm
