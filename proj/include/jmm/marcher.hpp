#pragma once

#include "jmm/updates.hpp"

#include <complex>

namespace jmm {

enum class NodeState : uint8_t { Far, Trial, Valid };

enum class PlanKind : uint8_t { None, BcSource, BfsInit, EdgeTri, BoundaryTri, Tetra, Line };

const char* plan_kind_name(PlanKind k);

struct DpPlan {
  std::vector<std::array<int, 3>> parents;    // -1 padded
  std::vector<std::array<double, 3>> lam;     // weights over parents
  std::vector<PlanKind> kind;
  std::vector<int> order;                     // vertices in acceptance order
  std::vector<int> accept_order;              // inverse of order

  void resize(int n);
  int num_parents(int v) const;
};

// Binary min-heap over vertex ids with decrease-key, keyed by (T, id).
class IndexedHeap {
 public:
  explicit IndexedHeap(int n = 0) : pos_(n, -1), key_(n, kInf) {}
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  bool contains(int v) const { return pos_[v] >= 0; }
  double key(int v) const { return key_[v]; }
  void push_or_update(int v, double key);
  int pop();
  int top() const { return heap_.front(); }
  void clear();

 private:
  bool less(int a, int b) const { return key_[a] < key_[b] || (key_[a] == key_[b] && a < b); }
  void sift_up(int i);
  void sift_down(int i);
  std::vector<int> heap_;
  std::vector<int> pos_;
  std::vector<double> key_;
};

enum class UpdateFamily : uint8_t { Tetra, BoundaryTri, EdgeTri };

struct CacheEntry {
  UpdateFamily family;
  std::array<int, 3> base{-1, -1, -1};
  UpdateResult r;
  Vec3 x_opt;
  int active_edge[2] = {-1, -1};  // set for an interior-edge optimum
  int active_vertex = -1;         // set for a vertex optimum
};

enum class TubeKind : uint8_t { None, Source, Edge, Facet };

struct BcDescriptor {
  enum class Kind { PointSource, Reflection, Diffraction } kind = Kind::PointSource;
  int src_vertex = -1;
  Vec3 src = Vec3::Zero();
  int facet = -1;
  int chain = -1;
  int parent = -1;  // parent branch id in a tree, -1 for the root
  double r_fac = 0.0;
};

struct MarchOptions {
  double r_fac = kNaN;           // NaN: 0.075 * diam
  double mult_tol_factor = 1.0;  // scales sqrt(tol) * s * l_min
  int reinit_passes = 1;
  bool brute_force = false;      // minimise over the whole valid front (test oracle)
  bool check_invariants = false; // verify state layering after every accept
};

struct MarchStats {
  long tetra_updates = 0;
  long tri_updates = 0;
  long rejected = 0;
  long cached = 0;
  long edge_matches = 0;
  long vertex_matches = 0;
  long fallback_commits = 0;
  long line_rescues = 0;
  long order_violations = 0;
  long invariant_violations = 0;
  std::size_t max_cache_entries = 0;
  bool caches_empty_at_end = true;
};

struct Branch {
  const MeshTopo* mesh = nullptr;
  const BoundaryLabels* labels = nullptr;
  SpeedModel speed;
  BcDescriptor bc;

  std::vector<Jet> jets;
  std::vector<NodeState> state;
  std::vector<double> org;
  std::vector<std::complex<double>> amp;
  std::vector<uint8_t> amp_defined;
  std::vector<Vec3> t_in, t_out;   // NaN where undefined
  std::vector<double> T_e;         // eikonal at the diffraction point, NaN where undefined
  std::vector<Vec3> x_e;           // diffraction point for edge-tube vertices
  std::vector<double> tang;        // derivative along the chain tangent at chain BC vertices
  std::vector<uint8_t> is_bc;
  std::vector<uint8_t> frozen;     // value fixed by initialisation
  std::vector<TubeKind> tube;
  DpPlan plan;
  MarchStats stats;
  int reinit_passes_done = 0;

  int n() const { return static_cast<int>(jets.size()); }
  bool hermite(int v) const;
};

Branch make_branch(const MeshTopo& mesh, const BoundaryLabels& labels, const SpeedModel& speed);

// Exact jet of a point source at src (constant or linear speed).
Jet point_source_jet(const Vec3& src, const Vec3& x, const SpeedModel& speed);

void init_point_source(Branch& b, int src_vertex, double r_fac);

struct EdgeIncident {
  std::vector<double> T;      // per chain vertex
  std::vector<double> dT;     // derivative along t_e per chain vertex
  std::vector<Vec3> dir;      // unit incident ray direction per chain vertex (NaN allowed)
};
void init_edge_diffraction(Branch& b, int chain, const EdgeIncident& inc, double r_fac);

// Jets of the incident field on the facet vertices (indexed like Facet::verts).
void init_reflection(Branch& b, int facet, const std::vector<Jet>& incident, double r_fac);

void march(Branch& b, const MarchOptions& opt = {});
void compute_org(Branch& b);
// Returns the number of vertices reset.
int reinit_shadow_zone(Branch& b, const MarchOptions& opt = {});

// True iff no far vertex neighbours a valid vertex.
bool state_layering_ok(const Branch& b);
bool accept_order_is_permutation(const Branch& b);

double default_r_fac(const MeshTopo& mesh);

}  // namespace jmm
