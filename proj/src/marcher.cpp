#include "jmm/marcher.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace jmm {

const char* plan_kind_name(PlanKind k) {
  switch (k) {
    case PlanKind::None: return "none";
    case PlanKind::BcSource: return "bc-source";
    case PlanKind::BfsInit: return "bfs-init";
    case PlanKind::EdgeTri: return "edge-tri";
    case PlanKind::BoundaryTri: return "boundary-tri";
    case PlanKind::Tetra: return "tetra";
    case PlanKind::Line: return "line";
  }
  return "?";
}

void DpPlan::resize(int n) {
  parents.assign(n, {-1, -1, -1});
  lam.assign(n, {0.0, 0.0, 0.0});
  kind.assign(n, PlanKind::None);
  order.clear();
  accept_order.assign(n, -1);
}

int DpPlan::num_parents(int v) const {
  int k = 0;
  for (int p : parents[v])
    if (p >= 0) ++k;
  return k;
}

// ---------------------------------------------------------------------------

void IndexedHeap::push_or_update(int v, double key) {
  if (pos_[v] < 0) {
    key_[v] = key;
    pos_[v] = static_cast<int>(heap_.size());
    heap_.push_back(v);
    sift_up(pos_[v]);
    return;
  }
  double old = key_[v];
  key_[v] = key;
  if (key < old)
    sift_up(pos_[v]);
  else
    sift_down(pos_[v]);
}

int IndexedHeap::pop() {
  int v = heap_.front();
  int last = heap_.back();
  heap_.pop_back();
  pos_[v] = -1;
  if (!heap_.empty()) {
    heap_[0] = last;
    pos_[last] = 0;
    sift_down(0);
  }
  return v;
}

void IndexedHeap::clear() {
  for (int v : heap_) pos_[v] = -1;
  heap_.clear();
}

void IndexedHeap::sift_up(int i) {
  int v = heap_[i];
  while (i > 0) {
    int p = (i - 1) / 2;
    if (!less(v, heap_[p])) break;
    heap_[i] = heap_[p];
    pos_[heap_[i]] = i;
    i = p;
  }
  heap_[i] = v;
  pos_[v] = i;
}

void IndexedHeap::sift_down(int i) {
  int n = static_cast<int>(heap_.size());
  int v = heap_[i];
  while (true) {
    int c = 2 * i + 1;
    if (c >= n) break;
    if (c + 1 < n && less(heap_[c + 1], heap_[c])) ++c;
    if (!less(heap_[c], v)) break;
    heap_[i] = heap_[c];
    pos_[heap_[i]] = i;
    i = c;
  }
  heap_[i] = v;
  pos_[v] = i;
}

// ---------------------------------------------------------------------------

bool Branch::hermite(int v) const { return jets[v].grad_defined; }

Branch make_branch(const MeshTopo& mesh, const BoundaryLabels& labels, const SpeedModel& speed) {
  Branch b;
  const int n = mesh.num_verts();
  b.mesh = &mesh;
  b.labels = &labels;
  b.speed = speed;
  b.jets.assign(n, Jet{});
  b.state.assign(n, NodeState::Far);
  b.org.assign(n, 0.0);
  b.amp.assign(n, {0.0, 0.0});
  b.amp_defined.assign(n, 0);
  b.t_in.assign(n, Vec3::Constant(kNaN));
  b.t_out.assign(n, Vec3::Constant(kNaN));
  b.T_e.assign(n, kNaN);
  b.x_e.assign(n, Vec3::Constant(kNaN));
  b.tang.assign(n, kNaN);
  b.is_bc.assign(n, 0);
  b.frozen.assign(n, 0);
  b.tube.assign(n, TubeKind::None);
  b.plan.resize(n);
  return b;
}

double default_r_fac(const MeshTopo& mesh) { return 0.075 * mesh.diam; }

Jet point_source_jet(const Vec3& src, const Vec3& x, const SpeedModel& sp) {
  Vec3 d = x - src;
  double r = d.norm();
  if (sp.is_constant()) {
    double s = 1.0 / sp.c0;
    Jet j = Jet::with_grad(s * r, s * d / r);
    Vec3 u = d / r;
    j.hess = (s / r) * (Mat3::Identity() - u * u.transpose());
    j.hess_defined = true;
    return j;
  }
  // Closed-form eikonal for linear speed with the source at src.
  auto tau_grad = [&](const Vec3& y, double* tau) {
    Vec3 dy = y - src;
    double nv = sp.v.norm();
    double s0 = sp.slowness(src), sy = sp.slowness(y);
    double r2 = dy.squaredNorm();
    // tau = acosh(1 + a) / |v|, written to avoid cancellation for small a.
    double a = 0.5 * s0 * sy * nv * nv * r2;
    double root = std::sqrt(a * (a + 2.0));
    if (tau) *tau = std::log1p(a + root) / nv;
    Vec3 da = 0.5 * s0 * nv * nv * (sp.grad_slowness(y) * r2 + 2.0 * sy * dy);
    return Vec3(da / (nv * root));
  };
  double tau;
  Vec3 g = tau_grad(x, &tau);
  Jet j = Jet::with_grad(tau, g);
  double h = 1e-5 * r;
  for (int k = 0; k < 3; ++k) {
    Vec3 e = Vec3::Zero();
    e[k] = h;
    j.hess.col(k) = (tau_grad(x + e, nullptr) - tau_grad(x - e, nullptr)) / (2 * h);
  }
  j.hess = 0.5 * (j.hess + j.hess.transpose());
  j.hess_defined = true;
  return j;
}

namespace {

Vec3 nan3() { return Vec3::Constant(kNaN); }

Vec3 normalized_lerp(const Vec3& a, const Vec3& b, double t) {
  if (!a.allFinite()) return b;
  if (!b.allFinite()) return a;
  Vec3 v = (1 - t) * a + t * b;
  double n = v.norm();
  return n > 0 ? Vec3(v / n) : a;
}

void set_plan(Branch& b, int v, std::initializer_list<int> parents, std::initializer_list<double> lam, PlanKind k) {
  b.plan.parents[v] = {-1, -1, -1};
  b.plan.lam[v] = {0.0, 0.0, 0.0};
  int i = 0;
  for (int p : parents) b.plan.parents[v][i++] = p;
  i = 0;
  for (double l : lam) b.plan.lam[v][i++] = l;
  b.plan.kind[v] = k;
}

void append_order(Branch& b, int v) {
  if (b.plan.accept_order[v] >= 0) return;
  b.plan.accept_order[v] = static_cast<int>(b.plan.order.size());
  b.plan.order.push_back(v);
}

void make_bc(Branch& b, int v) {
  b.state[v] = NodeState::Valid;
  b.is_bc[v] = 1;
  b.frozen[v] = 1;
  set_plan(b, v, {}, {}, PlanKind::BcSource);
}

// After a tube BFS, initialised vertices with every neighbour initialised
// become valid and the rest trial.
void settle_tube(Branch& b, const std::vector<int>& inited, const std::vector<uint8_t>& is_init) {
  const MeshTopo& m = *b.mesh;
  for (int w : inited) {
    bool all = true;
    for (int u : m.vv[w])
      if (!is_init[u]) {
        all = false;
        break;
      }
    if (all) {
      b.state[w] = NodeState::Valid;
      append_order(b, w);
    } else {
      b.state[w] = NodeState::Trial;
    }
  }
}

double chain_tang(const Branch& b, int v, const EdgeChain& ch) {
  if (std::isfinite(b.tang[v])) return b.tang[v];
  if (b.jets[v].grad_defined) return ch.t_e.dot(b.jets[v].grad);
  return kNaN;
}

SegmentData chain_segment(const Branch& b, const EdgeChain& ch, int a, int c) {
  const MeshTopo& m = *b.mesh;
  double proj = (m.verts[c] - m.verts[a]).dot(ch.t_e);
  return {b.jets[a].T, b.jets[c].T, proj * chain_tang(b, a, ch), proj * chain_tang(b, c, ch)};
}

UpdateResult run_triangle(const Branch& b, const SegmentData& seg, const Vec3& x0, const Vec3& x1,
                          const Vec3& xhat) {
  if (b.speed.is_constant()) return triangle_update(seg, x0, x1, xhat, 1.0 / b.speed.c0);
  double lmin = std::min({(x1 - x0).norm(), (xhat - x0).norm(), (xhat - x1).norm()});
  return triangle_update_varc(seg, x0, x1, xhat, b.speed, update_tolerance(lmin, b.mesh->diam));
}

struct TubeHit {
  double T = kInf;
  UpdateResult r;
  int seg = -1;          // chain segment index or facet face id
  int a = -1, c = -1, d = -1;
  bool from_edge = false;
  int chain = -1;
};

// Best diffracted value at w from segments of a chain, walking from start.
TubeHit edge_walk(const Branch& b, int chain, int w, int start) {
  const MeshTopo& m = *b.mesh;
  const EdgeChain& ch = b.labels->chains[chain];
  const int nseg = static_cast<int>(ch.edges.size());
  std::vector<uint8_t> seen(nseg, 0);
  TubeHit best;
  auto eval = [&](int k) -> double {
    if (k < 0 || k >= nseg || seen[k]) return kInf;
    seen[k] = 1;
    int a = ch.verts[k], c = ch.verts[k + 1];
    if (!std::isfinite(b.jets[a].T) || !std::isfinite(b.jets[c].T)) return kInf;
    auto seg = chain_segment(b, ch, a, c);
    if (!std::isfinite(seg.d0) || !std::isfinite(seg.d1)) return kInf;
    auto r = run_triangle(b, seg, m.verts[a], m.verts[c], m.verts[w]);
    std::array<int, 2> base{a, c};
    if (check_update_physical(r, m, base, {}, w, kInf) == UpdateVerdict::Reject) return kInf;
    if (r.T < best.T) {
      best.T = r.T;
      best.r = r;
      best.seg = k;
      best.a = a;
      best.c = c;
      best.from_edge = true;
      best.chain = chain;
    }
    return r.T;
  };
  int cur = std::clamp(start, 0, nseg - 1);
  eval(cur);
  while (true) {
    int before = best.seg;
    eval(cur - 1);
    eval(cur + 1);
    if (best.seg == before || best.seg < 0) {
      if (best.seg < 0) {
        // Nothing admissible nearby; fall back to an exhaustive scan.
        for (int k = 0; k < nseg; ++k) eval(k);
      }
      break;
    }
    cur = best.seg;
  }
  return best;
}

void apply_edge_hit(Branch& b, int w, const TubeHit& h) {
  const MeshTopo& m = *b.mesh;
  const Vec3 xa = m.verts[h.a], xc = m.verts[h.c];
  double t = h.r.lam[0];
  Vec3 xe = xa + t * (xc - xa);
  Jet j = Jet::with_grad(h.T, h.r.grad);
  b.jets[w] = j;
  b.tube[w] = TubeKind::Edge;
  b.x_e[w] = xe;
  b.T_e[w] = hermite_cubic_1d(b.jets[h.a].T, b.jets[h.c].T, chain_segment(b, b.labels->chains[h.chain], h.a, h.c).d0,
                              chain_segment(b, b.labels->chains[h.chain], h.a, h.c).d1, t)
                 .value;
  b.t_out[w] = (m.verts[w] - xe).normalized();
  b.t_in[w] = normalized_lerp(b.t_in[h.a], b.t_in[h.c], t);
  b.frozen[w] = 1;
  set_plan(b, w, {h.a, h.c}, {1 - t, t}, PlanKind::BfsInit);
}

// BFS over vertices allowed by mask, seeded at the chain vertices, assigning
// edge-diffracted values while the diffracted ray is shorter than r_fac.
void edge_tube(Branch& b, const std::vector<int>& chains, const std::vector<uint8_t>& allowed, double r_fac) {
  const MeshTopo& m = *b.mesh;
  const int n = m.num_verts();
  std::vector<uint8_t> is_init(n, 0);
  for (int v = 0; v < n; ++v)
    if (!allowed[v]) is_init[v] = 1;
  std::vector<int> start_seg(n, 0);
  std::deque<int> q;
  for (int ci : chains) {
    const auto& ch = b.labels->chains[ci];
    for (std::size_t i = 0; i < ch.verts.size(); ++i) {
      int v = ch.verts[i];
      is_init[v] = 1;
      start_seg[v] = static_cast<int>(std::min(i, ch.edges.size() - 1));
      q.push_back(v);
    }
  }
  std::vector<int> inited;
  while (!q.empty()) {
    int p = q.front();
    q.pop_front();
    for (int w : m.vv[p]) {
      if (is_init[w]) continue;
      TubeHit best;
      for (int ci : chains) {
        int start = b.labels->vert_chain[p] == ci ? start_seg[p] : (b.tube[p] == TubeKind::Edge ? start_seg[p] : 0);
        auto h = edge_walk(b, ci, w, start);
        if (h.T < best.T) best = h;
      }
      if (!std::isfinite(best.T)) continue;
      is_init[w] = 1;
      start_seg[w] = best.seg;
      apply_edge_hit(b, w, best);
      inited.push_back(w);
      if ((m.verts[w] - b.x_e[w]).norm() < r_fac) q.push_back(w);
    }
  }
  settle_tube(b, inited, is_init);
}

}  // namespace

void init_point_source(Branch& b, int src, double r_fac) {
  const MeshTopo& m = *b.mesh;
  if (src < 0 || src >= m.num_verts()) throw SolveError("source vertex out of range");
  if (!(r_fac > 0)) throw SolveError("r_fac must be positive");
  b.bc.kind = BcDescriptor::Kind::PointSource;
  b.bc.src_vertex = src;
  b.bc.src = m.verts[src];
  b.bc.r_fac = r_fac;
  b.jets[src] = Jet::value(0.0);
  make_bc(b, src);
  b.tube[src] = TubeKind::Source;
  append_order(b, src);
  const int n = m.num_verts();
  std::vector<uint8_t> is_init(n, 0);
  is_init[src] = 1;
  std::deque<int> q{src};
  std::vector<int> inited;
  while (!q.empty()) {
    int p = q.front();
    q.pop_front();
    for (int w : m.vv[p]) {
      if (is_init[w]) continue;
      is_init[w] = 1;
      b.jets[w] = point_source_jet(b.bc.src, m.verts[w], b.speed);
      b.tube[w] = TubeKind::Source;
      b.frozen[w] = 1;
      set_plan(b, w, {src}, {1.0}, PlanKind::BfsInit);
      inited.push_back(w);
      if ((m.verts[w] - b.bc.src).norm() < r_fac) q.push_back(w);
    }
  }
  settle_tube(b, inited, is_init);
}

void init_edge_diffraction(Branch& b, int chain, const EdgeIncident& inc, double r_fac) {
  const MeshTopo& m = *b.mesh;
  if (chain < 0 || chain >= static_cast<int>(b.labels->chains.size())) throw SolveError("unknown edge chain");
  const auto& ch = b.labels->chains[chain];
  if (ch.verts.empty()) throw SolveError("empty edge chain");
  b.bc.kind = BcDescriptor::Kind::Diffraction;
  b.bc.chain = chain;
  b.bc.r_fac = r_fac;
  for (std::size_t i = 0; i < ch.verts.size(); ++i) {
    int v = ch.verts[i];
    b.jets[v] = Jet::value(inc.T[i]);
    b.tang[v] = inc.dT[i];
    b.t_in[v] = inc.dir.size() > i ? inc.dir[i] : nan3();
    b.T_e[v] = inc.T[i];
    b.x_e[v] = m.verts[v];
    make_bc(b, v);
    b.tube[v] = TubeKind::Edge;
    append_order(b, v);
  }
  std::vector<uint8_t> allowed(m.num_verts(), 1);
  edge_tube(b, {chain}, allowed, r_fac);
}

void init_reflection(Branch& b, int facet, const std::vector<Jet>& incident, double r_fac) {
  const MeshTopo& m = *b.mesh;
  const BoundaryLabels& L = *b.labels;
  if (facet < 0 || facet >= static_cast<int>(L.facets.size())) throw SolveError("unknown facet");
  const Facet& F = L.facets[facet];
  b.bc.kind = BcDescriptor::Kind::Reflection;
  b.bc.facet = facet;
  b.bc.r_fac = r_fac;
  const Vec3 n = F.normal;
  const Mat3 R = Mat3::Identity() - 2.0 * n * n.transpose();
  for (std::size_t i = 0; i < F.verts.size(); ++i) {
    int v = F.verts[i];
    const Jet& in = incident[i];
    if (!std::isfinite(in.T)) continue;
    Jet j = in.grad_defined ? Jet::with_grad(in.T, R * in.grad) : Jet::value(in.T);
    b.jets[v] = j;
    make_bc(b, v);
    b.tube[v] = TubeKind::Facet;
    append_order(b, v);
  }
  // Facet faces incident on each facet vertex.
  std::vector<std::vector<int>> vfaces(m.num_verts());
  for (int f : F.faces)
    for (int v : m.faces[f]) vfaces[v].push_back(f);
  std::vector<int> border;
  for (int c = 0; c < static_cast<int>(L.chains.size()); ++c)
    if (L.chains[c].facet_o == facet || L.chains[c].facet_n == facet) border.push_back(c);
  for (int c : border)
    for (int v : L.chains[c].verts)
      if (b.is_bc[v]) b.tang[v] = b.jets[v].grad_defined ? L.chains[c].t_e.dot(b.jets[v].grad) : kNaN;

  const int nv = m.num_verts();
  std::vector<uint8_t> is_init(nv, 0);
  std::deque<int> q;
  std::vector<int> start_face(nv, -1), start_seg(nv, 0);
  for (int v : F.verts)
    if (b.is_bc[v]) {
      is_init[v] = 1;
      start_face[v] = vfaces[v].empty() ? -1 : vfaces[v][0];
      q.push_back(v);
    }
  std::vector<int> inited;
  auto face_update = [&](int f, int w, TubeHit& best) {
    const auto& fv = m.faces[f];
    std::array<Jet, 3> js{b.jets[fv[0]], b.jets[fv[1]], b.jets[fv[2]]};
    for (const auto& j : js)
      if (!j.grad_defined || !b.is_bc[fv[0]] || !b.is_bc[fv[1]] || !b.is_bc[fv[2]]) return;
    std::array<Vec3, 3> xs{m.verts[fv[0]], m.verts[fv[1]], m.verts[fv[2]]};
    if ((m.verts[w] - xs[0]).dot(-n) <= 1e-12 * m.h_min) return;
    double lmin = std::min({(xs[1] - xs[0]).norm(), (xs[2] - xs[0]).norm(), (xs[2] - xs[1]).norm()});
    TetraOptions topt;
    topt.tol = update_tolerance(lmin, m.diam);
    auto r = tetra_update(js, xs, m.verts[w], b.speed, topt);
    std::array<int, 3> base{fv[0], fv[1], fv[2]};
    std::array<Vec3, 3> gs{js[0].grad, js[1].grad, js[2].grad};
    if (!r.converged) return;
    if (check_update_physical(r, m, base, gs, w, kInf) == UpdateVerdict::Reject) return;
    if (r.T < best.T) {
      best.T = r.T;
      best.r = r;
      best.seg = f;
      best.a = fv[0];
      best.c = fv[1];
      best.d = fv[2];
      best.from_edge = false;
    }
  };
  while (!q.empty()) {
    int p = q.front();
    q.pop_front();
    for (int w : m.vv[p]) {
      if (is_init[w]) continue;
      TubeHit best;
      // Local walk over facet faces from the parent's winner.
      int cur = start_face[p];
      std::vector<int> seen;
      if (cur >= 0) {
        face_update(cur, w, best);
        seen.push_back(cur);
        while (true) {
          int before = best.seg;
          int centre = best.seg >= 0 ? best.seg : cur;
          for (int v : m.faces[centre])
            for (int f : vfaces[v]) {
              if (std::find(seen.begin(), seen.end(), f) != seen.end()) continue;
              seen.push_back(f);
              face_update(f, w, best);
            }
          if (best.seg == before) break;
          if (best.seg < 0) break;
        }
      }
      for (int c : border) {
        auto h = edge_walk(b, c, w, start_seg[p]);
        if (h.T < best.T) best = h;
      }
      if (!std::isfinite(best.T)) continue;
      is_init[w] = 1;
      inited.push_back(w);
      Vec3 xl;
      if (best.from_edge) {
        apply_edge_hit(b, w, best);
        start_seg[w] = best.seg;
        start_face[w] = start_face[p];
        xl = b.x_e[w];
      } else {
        const Vec2& l = best.r.lam;
        b.jets[w] = Jet::with_grad(best.T, best.r.grad);
        b.tube[w] = TubeKind::Facet;
        b.frozen[w] = 1;
        set_plan(b, w, {best.a, best.c, best.d}, {1 - l[0] - l[1], l[0], l[1]}, PlanKind::BfsInit);
        start_face[w] = best.seg;
        start_seg[w] = start_seg[p];
        xl = (1 - l[0] - l[1]) * m.verts[best.a] + l[0] * m.verts[best.c] + l[1] * m.verts[best.d];
      }
      if ((m.verts[w] - xl).norm() < r_fac) q.push_back(w);
    }
  }
  settle_tube(b, inited, is_init);
}

// ---------------------------------------------------------------------------
// Marching

namespace {

struct Marcher {
  Branch& b;
  const MeshTopo& m;
  const BoundaryLabels& L;
  MarchOptions opt;
  IndexedHeap heap;
  std::vector<std::vector<CacheEntry>> cache;
  std::vector<double> cache_best;
  std::vector<int> scratch_faces;
  double last_T = -kInf;

  Marcher(Branch& br, const MarchOptions& o)
      : b(br), m(*br.mesh), L(*br.labels), opt(o), heap(br.n()), cache(br.n()), cache_best(br.n(), kInf) {}

  double slowness(int v) const { return b.speed.slowness(m.verts[v]); }

  double key(int v) const { return std::min(b.jets[v].T, cache_best[v]); }

  bool on_front(int f) const {
    const auto& fv = m.faces[f];
    for (int c : m.face_cells[f]) {
      if (c < 0) continue;
      for (int u : m.cells[c])
        if (u != fv[0] && u != fv[1] && u != fv[2] && b.state[u] != NodeState::Valid) return true;
    }
    return false;
  }

  bool face_usable(int f, int xhat) const {
    const auto& fv = m.faces[f];
    for (int u : fv) {
      if (u == xhat) return false;
      if (b.state[u] != NodeState::Valid || !b.hermite(u)) return false;
    }
    if (!on_front(f)) return false;
    return downwind(fv, xhat);
  }

  // x̂ on the side of the base plane the parent gradients point to.
  bool downwind(const std::array<int, 3>& fv, int xhat) const {
    const Vec3& x0 = m.verts[fv[0]];
    Vec3 n = (m.verts[fv[1]] - x0).cross(m.verts[fv[2]] - x0);
    Vec3 g = b.jets[fv[0]].grad + b.jets[fv[1]].grad + b.jets[fv[2]].grad;
    double side = n.dot(g);
    if (side == 0) return false;
    if (side < 0) n = -n;
    return n.dot(m.verts[xhat] - x0) > 1e-12 * n.norm() * m.h_min;
  }

  // Faces incident on v (deduplicated, ascending).
  const std::vector<int>& faces_around(int v) {
    scratch_faces.clear();
    for (int c : m.vc[v])
      for (int i = 0; i < 4; ++i)
        if (m.cells[c][i] != v) scratch_faces.push_back(m.cell_faces[c][i]);
    std::sort(scratch_faces.begin(), scratch_faces.end());
    scratch_faces.erase(std::unique(scratch_faces.begin(), scratch_faces.end()), scratch_faces.end());
    return scratch_faces;
  }

  double mult_tol(double s, double lmin) const {
    return opt.mult_tol_factor * std::sqrt(update_tolerance(lmin, m.diam)) * s * lmin;
  }

  void commit(int xhat, const UpdateResult& r, const std::array<int, 3>& base, UpdateFamily fam) {
    b.jets[xhat].T = r.T;
    b.jets[xhat].grad = r.grad;
    b.jets[xhat].grad_defined = true;
    PlanKind k = fam == UpdateFamily::Tetra ? PlanKind::Tetra
                 : fam == UpdateFamily::EdgeTri ? PlanKind::EdgeTri
                                                : PlanKind::BoundaryTri;
    if (base[2] >= 0) {
      set_plan(b, xhat, {base[0], base[1], base[2]}, {1 - r.lam[0] - r.lam[1], r.lam[0], r.lam[1]}, k);
    } else if (base[1] >= 0) {
      set_plan(b, xhat, {base[0], base[1]}, {1 - r.lam[0], r.lam[0]}, k);
    } else {
      set_plan(b, xhat, {base[0]}, {1.0}, k);
    }
    heap.push_or_update(xhat, key(xhat));
  }

  CacheEntry make_entry(const UpdateResult& r, const std::array<int, 3>& base, UpdateFamily fam) const {
    CacheEntry e;
    e.family = fam;
    e.base = base;
    e.r = r;
    int nb = base[2] >= 0 ? 3 : 2;
    auto loc = optimum_location(r, m, std::span<const int>(base.data(), nb));
    e.x_opt = loc.x;
    if (loc.kind == PointLocation::Kind::Vertex) {
      e.active_vertex = loc.id;
    } else if (loc.kind == PointLocation::Kind::Edge && nb == 3) {
      e.active_edge[0] = m.edges[loc.id][0];
      e.active_edge[1] = m.edges[loc.id][1];
    }
    return e;
  }

  static bool same_base(const std::array<int, 3>& a, const std::array<int, 3>& b) {
    auto x = a, y = b;
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    return x == y;
  }

  // Bases of a family incident on v that can update xhat now.
  std::vector<std::array<int, 3>> bases_around(UpdateFamily fam, int v, int xhat) {
    std::vector<std::array<int, 3>> out;
    if (fam == UpdateFamily::Tetra) {
      for (int f : faces_around(v))
        if (face_usable(f, xhat)) out.push_back(m.faces[f]);
    } else if (fam == UpdateFamily::EdgeTri) {
      int ci = L.vert_chain[v];
      if (ci < 0) return out;
      const auto& ch = L.chains[ci];
      for (std::size_t k = 0; k < ch.edges.size(); ++k) {
        int a = ch.verts[k], c = ch.verts[k + 1];
        if ((a == v || c == v) && b.state[a] == NodeState::Valid && b.state[c] == NodeState::Valid)
          out.push_back({a, c, -1});
      }
    } else {
      for (int w : m.vv[v]) {
        if (w == xhat || b.state[w] != NodeState::Valid || !b.hermite(w) || !b.hermite(v)) continue;
        int f = m.face_id(v, w, xhat);
        if (f >= 0 && m.is_boundary_face(f)) out.push_back({std::min(v, w), std::max(v, w), -1});
      }
    }
    return out;
  }

  void insert_cache(int xhat, CacheEntry e) {
    cache_best[xhat] = std::min(cache_best[xhat], e.r.T);
    cache[xhat].push_back(std::move(e));
    b.stats.cached++;
    b.stats.max_cache_entries = std::max(b.stats.max_cache_entries, cache[xhat].size());
    heap.push_or_update(xhat, key(xhat));
  }

  void recompute_cache_best(int xhat) {
    double best = kInf;
    for (const auto& e : cache[xhat]) best = std::min(best, e.r.T);
    cache_best[xhat] = best;
  }

  void commit_or_cache(int xhat, const UpdateResult& r, const std::array<int, 3>& base, UpdateFamily fam) {
    CacheEntry e = make_entry(r, base, fam);
    auto& entries = cache[xhat];
    if (e.active_edge[0] >= 0) {
      const Vec3 xa = m.verts[e.active_edge[0]], xb = m.verts[e.active_edge[1]];
      const double elen = (xb - xa).norm();
      Vec3 ray = m.verts[xhat] - e.x_opt;
      Vec3 pn = (xb - xa).cross(ray);
      auto third = [&](const std::array<int, 3>& bs) {
        for (int u : bs)
          if (u != e.active_edge[0] && u != e.active_edge[1]) return u;
        return -1;
      };
      double side = pn.dot(m.verts[third(base)] - xa);
      for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& o = entries[i];
        if (o.family != fam || o.active_edge[0] < 0) continue;
        if (std::minmax(o.active_edge[0], o.active_edge[1]) != std::minmax(e.active_edge[0], e.active_edge[1]))
          continue;
        if (same_base(o.base, base)) continue;
        if ((o.x_opt - e.x_opt).norm() > 1e-2 * elen) continue;
        double oside = pn.dot(m.verts[third(o.base)] - xa);
        if (side * oside >= 0) continue;
        const CacheEntry& win = o.r.T < r.T ? o : e;
        UpdateResult wr = win.r;
        auto wb = win.base;
        entries.erase(entries.begin() + i);
        recompute_cache_best(xhat);
        b.stats.edge_matches++;
        if (wr.T < b.jets[xhat].T) commit(xhat, wr, wb, fam);
        else heap.push_or_update(xhat, key(xhat));
        return;
      }
    } else if (e.active_vertex >= 0) {
      auto need = bases_around(fam, e.active_vertex, xhat);
      std::vector<std::size_t> matched;
      bool complete = true;
      for (const auto& nb : need) {
        if (same_base(nb, base)) continue;
        bool found = false;
        for (std::size_t i = 0; i < entries.size(); ++i) {
          const auto& o = entries[i];
          if (o.family == fam && o.active_vertex == e.active_vertex && same_base(o.base, nb)) {
            matched.push_back(i);
            found = true;
            break;
          }
        }
        if (!found) {
          complete = false;
          break;
        }
      }
      if (complete) {
        UpdateResult wr = r;
        auto wb = base;
        for (std::size_t i : matched)
          if (entries[i].r.T < wr.T) {
            wr = entries[i].r;
            wb = entries[i].base;
          }
        std::sort(matched.begin(), matched.end());
        for (auto it = matched.rbegin(); it != matched.rend(); ++it) entries.erase(entries.begin() + *it);
        recompute_cache_best(xhat);
        b.stats.vertex_matches++;
        if (wr.T < b.jets[xhat].T) commit(xhat, wr, wb, fam);
        else heap.push_or_update(xhat, key(xhat));
        return;
      }
    }
    insert_cache(xhat, std::move(e));
  }

  void process(int xhat, const UpdateResult& r, const std::array<int, 3>& base, UpdateFamily fam,
               std::span<const Vec3> grads, double lmin) {
    if (!r.converged || !std::isfinite(r.T)) {
      b.stats.rejected++;
      return;
    }
    if (r.T >= b.jets[xhat].T) return;
    int nb = base[2] >= 0 ? 3 : (base[1] >= 0 ? 2 : 1);
    if (nb == 1) {
      Vec3 dir = (m.verts[xhat] - m.verts[base[0]]).normalized();
      if (!cone_contains(m, PointLocation::vertex(m, base[0]), dir) ||
          !cone_contains(m, PointLocation::vertex(m, xhat), -dir)) {
        b.stats.rejected++;
        return;
      }
      commit(xhat, r, base, fam);
      return;
    }
    double s = slowness(xhat);
    auto v = check_update_physical(r, m, std::span<const int>(base.data(), nb), grads, xhat, mult_tol(s, lmin));
    if (v == UpdateVerdict::Reject) {
      b.stats.rejected++;
      return;
    }
    if (opt.brute_force) {
      if (!segment_in_mesh(m.verts[xhat], optimum_location(r, m, std::span<const int>(base.data(), nb)).x)) {
        b.stats.rejected++;
        return;
      }
      commit(xhat, r, base, fam);
      return;
    }
    if (v == UpdateVerdict::InteriorAccept)
      commit(xhat, r, base, fam);
    else
      commit_or_cache(xhat, r, base, fam);
  }

  bool segment_in_mesh(const Vec3& a, const Vec3& c) const {
    for (int k = 1; k < 32; ++k) {
      Vec3 x = a + (c - a) * (k / 32.0);
      if (!locate(m, x)) return false;
    }
    return true;
  }

  double simplex_lmin(std::initializer_list<int> vs) const {
    double l = kInf;
    for (auto i = vs.begin(); i != vs.end(); ++i)
      for (auto j = std::next(i); j != vs.end(); ++j) l = std::min(l, (m.verts[*i] - m.verts[*j]).norm());
    return l;
  }

  void tetra_from(const std::array<int, 3>& fv, int xhat) {
    std::array<Jet, 3> js{b.jets[fv[0]], b.jets[fv[1]], b.jets[fv[2]]};
    std::array<Vec3, 3> xs{m.verts[fv[0]], m.verts[fv[1]], m.verts[fv[2]]};
    double lmin = simplex_lmin({fv[0], fv[1], fv[2], xhat});
    TetraOptions topt;
    topt.tol = update_tolerance(lmin, m.diam);
    b.stats.tetra_updates++;
    UpdateResult r;
    if (b.speed.is_constant()) {
      r = tetra_update(build_tri9(js, xs), m.verts[xhat], 1.0 / b.speed.c0, topt);
    } else {
      r = tetra_update(js, xs, m.verts[xhat], b.speed, topt);
    }
    std::array<Vec3, 3> gs{js[0].grad, js[1].grad, js[2].grad};
    process(xhat, r, fv, UpdateFamily::Tetra, gs, lmin);
  }

  void edge_tri_from(const EdgeChain& ch, int a, int c, int xhat) {
    auto seg = chain_segment(b, ch, a, c);
    if (!std::isfinite(seg.d0) || !std::isfinite(seg.d1)) return;
    b.stats.tri_updates++;
    auto r = run_triangle(b, seg, m.verts[a], m.verts[c], m.verts[xhat]);
    process(xhat, r, {a, c, -1}, UpdateFamily::EdgeTri, {}, simplex_lmin({a, c, xhat}));
  }

  void boundary_tri_from(int a, int c, int xhat) {
    auto seg = segment_data(b.jets[a], b.jets[c], m.verts[a], m.verts[c]);
    b.stats.tri_updates++;
    auto r = run_triangle(b, seg, m.verts[a], m.verts[c], m.verts[xhat]);
    std::array<Vec3, 2> gs{b.jets[a].grad, b.jets[c].grad};
    process(xhat, r, {a, c, -1}, UpdateFamily::BoundaryTri, gs, simplex_lmin({a, c, xhat}));
  }

  void line_from(int a, int xhat, UpdateFamily fam) {
    UpdateResult r;
    if (b.speed.is_constant()) {
      double s = 1.0 / b.speed.c0;
      Vec3 d = m.verts[xhat] - m.verts[a];
      r.T = b.jets[a].T + s * d.norm();
      r.grad = s * d.normalized();
    } else {
      auto lu = line_update_varc(b.jets[a].T, m.verts[a], m.verts[xhat], b.speed);
      r.T = lu.T;
      r.grad = lu.grad;
    }
    r.dim = 0;
    r.converged = true;
    process(xhat, r, {a, -1, -1}, fam, {}, 0.0);
  }

  void updates_fan(int x0, int xhat) {
    // Boundary triangle updates.
    if (m.edge_on_boundary[m.edge_id(x0, xhat)] && b.hermite(x0)) {
      for (int w : m.vv[x0]) {
        if (w == xhat || b.state[w] != NodeState::Valid || !b.hermite(w)) continue;
        int f = m.face_id(x0, w, xhat);
        if (f < 0 || !m.is_boundary_face(f)) continue;
        boundary_tri_from(std::min(x0, w), std::max(x0, w), xhat);
      }
    }
    int ci = L.vert_chain[x0];
    if (ci >= 0) {
      if (L.vert_chain[xhat] == ci) return;
      const auto& ch = L.chains[ci];
      bool any = false;
      for (std::size_t k = 0; k < ch.edges.size(); ++k) {
        int a = ch.verts[k], c = ch.verts[k + 1];
        if (a != x0 && c != x0) continue;
        if (b.state[a] != NodeState::Valid || b.state[c] != NodeState::Valid) continue;
        any = true;
        edge_tri_from(ch, a, c, xhat);
      }
      if (!any) line_from(x0, xhat, UpdateFamily::EdgeTri);
      return;
    }
    if (!b.hermite(x0)) return;
    for (int f : faces_around(x0)) {
      if (!face_usable(f, xhat)) continue;
      tetra_from(m.faces[f], xhat);
    }
  }

  void updates_brute(int xhat) {
    for (int f = 0; f < static_cast<int>(m.faces.size()); ++f)
      if (face_usable(f, xhat)) tetra_from(m.faces[f], xhat);
    for (const auto& ch : L.chains) {
      if (L.vert_chain[xhat] >= 0 && &L.chains[L.vert_chain[xhat]] == &ch) continue;
      for (std::size_t k = 0; k < ch.edges.size(); ++k) {
        int a = ch.verts[k], c = ch.verts[k + 1];
        if (b.state[a] == NodeState::Valid && b.state[c] == NodeState::Valid) edge_tri_from(ch, a, c, xhat);
      }
    }
    for (int f : m.vbf[xhat]) {
      const auto& fv = m.faces[f];
      std::array<int, 2> ac;
      int k = 0;
      for (int u : fv)
        if (u != xhat) ac[k++] = u;
      if (b.state[ac[0]] == NodeState::Valid && b.state[ac[1]] == NodeState::Valid && b.hermite(ac[0]) &&
          b.hermite(ac[1]))
        boundary_tri_from(ac[0], ac[1], xhat);
    }
  }

  void commit_best_cached(int x0) {
    const CacheEntry* best = nullptr;
    for (const auto& e : cache[x0])
      if (!best || e.r.T < best->r.T) best = &e;
    if (best && best->r.T < b.jets[x0].T) {
      CacheEntry e = *best;
      b.jets[x0].T = e.r.T;
      b.jets[x0].grad = e.r.grad;
      b.jets[x0].grad_defined = true;
      PlanKind k = e.family == UpdateFamily::Tetra ? PlanKind::Tetra
                   : e.family == UpdateFamily::EdgeTri ? PlanKind::EdgeTri
                                                        : PlanKind::BoundaryTri;
      if (e.base[2] >= 0)
        set_plan(b, x0, {e.base[0], e.base[1], e.base[2]}, {1 - e.r.lam[0] - e.r.lam[1], e.r.lam[0], e.r.lam[1]},
                 k);
      else
        set_plan(b, x0, {e.base[0], e.base[1]}, {1 - e.r.lam[0], e.r.lam[0]}, k);
      b.stats.fallback_commits++;
    }
  }

  void rescue(int x0) {
    for (int w : m.vv[x0])
      if (b.state[w] == NodeState::Valid && std::isfinite(b.jets[w].T)) {
        double T;
        Vec3 g;
        if (b.speed.is_constant()) {
          double s = 1.0 / b.speed.c0;
          Vec3 d = m.verts[x0] - m.verts[w];
          T = b.jets[w].T + s * d.norm();
          g = s * d.normalized();
        } else {
          auto lu = line_update_varc(b.jets[w].T, m.verts[w], m.verts[x0], b.speed);
          T = lu.T;
          g = lu.grad;
        }
        if (T < b.jets[x0].T) {
          b.jets[x0] = Jet::with_grad(T, g);
          set_plan(b, x0, {w}, {1.0}, PlanKind::Line);
        }
      }
    b.stats.line_rescues++;
  }

  void run() {
    for (int v = 0; v < b.n(); ++v)
      if (b.state[v] == NodeState::Trial) heap.push_or_update(v, key(v));
    while (true) {
      while (!heap.empty()) {
        int x0 = heap.pop();
        if (cache_best[x0] < b.jets[x0].T) commit_best_cached(x0);
        if (!std::isfinite(b.jets[x0].T)) rescue(x0);
        if (!std::isfinite(b.jets[x0].T)) throw SolveError("vertex " + std::to_string(x0) + " unreachable");
        accept(x0);
      }
      // Far vertices left over: seed them from valid neighbours.
      bool any = false;
      for (int v = 0; v < b.n(); ++v) {
        if (b.state[v] != NodeState::Far) continue;
        for (int w : m.vv[v])
          if (b.state[w] == NodeState::Valid) {
            b.state[v] = NodeState::Trial;
            rescue(v);
            heap.push_or_update(v, key(v));
            any = true;
            break;
          }
      }
      if (!any) break;
    }
    for (int v = 0; v < b.n(); ++v)
      if (b.state[v] != NodeState::Valid) throw SolveError("heap exhausted with unreached vertices");
    b.stats.caches_empty_at_end = true;
    for (const auto& c : cache)
      if (!c.empty()) b.stats.caches_empty_at_end = false;
  }

  void accept(int x0) {
    const double T0 = b.jets[x0].T;
    const double tol = update_tolerance(m.h_min, m.diam);
    if (T0 < last_T - 10 * tol * last_T) b.stats.order_violations++;
    last_T = std::max(last_T, T0);
    b.state[x0] = NodeState::Valid;
    cache[x0].clear();
    cache[x0].shrink_to_fit();
    cache_best[x0] = kInf;
    append_order(b, x0);
    for (int w : m.vv[x0])
      if (b.state[w] == NodeState::Far) {
        b.state[w] = NodeState::Trial;
        heap.push_or_update(w, key(w));
      }
    for (int xhat : m.vv[x0]) {
      if (b.state[xhat] != NodeState::Trial || b.frozen[xhat]) continue;
      if (opt.brute_force)
        updates_brute(xhat);
      else
        updates_fan(x0, xhat);
    }
    if (opt.check_invariants) {
      for (int w : m.vv[x0])
        if (b.state[w] == NodeState::Far) b.stats.invariant_violations++;
    }
  }
};

}  // namespace

void march(Branch& b, const MarchOptions& opt) {
  Marcher mr(b, opt);
  mr.run();
}

void compute_org(Branch& b) {
  const BoundaryLabels& L = *b.labels;
  const bool diff_branch = b.bc.kind == BcDescriptor::Kind::Diffraction;
  std::vector<uint8_t> edge_seed(b.n(), 0);
  for (int v : b.plan.order) {
    bool on_chain = L.vert_chain[v] >= 0;
    bool own_chain = diff_branch && b.is_bc[v] && on_chain;
    if (on_chain && !own_chain) {
      b.org[v] = 0.0;
      edge_seed[v] = 1;
    } else if (b.is_bc[v]) {
      b.org[v] = 1.0;
    } else {
      double o = 0.0;
      for (int k = 0; k < 3; ++k)
        if (b.plan.parents[v][k] >= 0) o += b.plan.lam[v][k] * b.org[b.plan.parents[v][k]];
      b.org[v] = std::clamp(o, 0.0, 1.0);
    }
  }
  for (int v = 0; v < b.n(); ++v) {
    if (!edge_seed[v]) continue;
    bool lit = b.is_bc[v] != 0;
    for (int k = 0; k < 3 && !lit; ++k) {
      int p = b.plan.parents[v][k];
      if (p >= 0 && b.org[p] > 0.5) lit = true;
    }
    if (lit) b.org[v] = 0.5;
  }
}

int reinit_shadow_zone(Branch& b, const MarchOptions& opt) {
  const MeshTopo& m = *b.mesh;
  const BoundaryLabels& L = *b.labels;
  const int n = b.n();
  std::vector<uint8_t> reset(n, 0);
  int count = 0;
  for (int v = 0; v < n; ++v) {
    if (b.org[v] >= 0.5 || b.is_bc[v] || L.vert_chain[v] >= 0 || b.tube[v] == TubeKind::Source) continue;
    reset[v] = 1;
    ++count;
  }
  if (count == 0) return 0;
  for (int v = 0; v < n; ++v) {
    if (!reset[v]) continue;
    b.jets[v] = Jet{};
    b.state[v] = NodeState::Far;
    b.frozen[v] = 0;
    b.tube[v] = TubeKind::None;
    b.plan.parents[v] = {-1, -1, -1};
    b.plan.lam[v] = {0, 0, 0};
    b.plan.kind[v] = PlanKind::None;
  }
  {
    std::vector<int> kept;
    for (int v : b.plan.order)
      if (!reset[v]) kept.push_back(v);
    b.plan.order = kept;
    std::fill(b.plan.accept_order.begin(), b.plan.accept_order.end(), -1);
    for (std::size_t i = 0; i < kept.size(); ++i) b.plan.accept_order[kept[i]] = static_cast<int>(i);
  }
  // Chains bordering the reset region become diffraction sources.
  std::vector<int> chains;
  for (int c = 0; c < static_cast<int>(L.chains.size()); ++c) {
    bool touches = false;
    for (int v : L.chains[c].verts)
      for (int w : m.vv[v])
        if (reset[w]) touches = true;
    if (touches) chains.push_back(c);
  }
  double r_fac = std::isfinite(opt.r_fac) ? opt.r_fac : (b.bc.r_fac > 0 ? b.bc.r_fac : default_r_fac(m));
  for (int c : chains)
    for (int v : L.chains[c].verts)
      if (!std::isfinite(b.tang[v]) && b.jets[v].grad_defined) b.tang[v] = L.chains[c].t_e.dot(b.jets[v].grad);
  if (!chains.empty()) edge_tube(b, chains, reset, r_fac);
  // Valid vertices next to the reset region re-enter the heap with fixed values.
  for (int v = 0; v < n; ++v) {
    if (b.state[v] != NodeState::Valid) continue;
    bool near_far = false;
    for (int w : m.vv[v])
      if (b.state[w] == NodeState::Far) near_far = true;
    if (near_far) {
      b.state[v] = NodeState::Trial;
      b.frozen[v] = 1;
    }
  }
  march(b, opt);
  compute_org(b);
  b.reinit_passes_done++;
  return count;
}

bool state_layering_ok(const Branch& b) {
  const MeshTopo& m = *b.mesh;
  for (int v = 0; v < b.n(); ++v) {
    if (b.state[v] != NodeState::Valid) continue;
    for (int w : m.vv[v])
      if (b.state[w] == NodeState::Far) return false;
  }
  return true;
}

bool accept_order_is_permutation(const Branch& b) {
  if (static_cast<int>(b.plan.order.size()) != b.n()) return false;
  std::vector<uint8_t> seen(b.n(), 0);
  for (std::size_t i = 0; i < b.plan.order.size(); ++i) {
    int v = b.plan.order[i];
    if (v < 0 || v >= b.n() || seen[v] || b.plan.accept_order[v] != static_cast<int>(i)) return false;
    seen[v] = 1;
  }
  return true;
}

}  // namespace jmm
