#pragma once

#include "jmm/transport.hpp"
#include "jmm/utd.hpp"

#include <string>

namespace jmm {

struct SolveOptions {
  double r_fac = kNaN;  // NaN: default_r_fac(mesh)
  MarchOptions march;
  int reinit_passes = 1;
};

// init, march, org, reinit, Hessians and amplitude for each kind of branch.
Branch solve_point_source(const MeshTopo& mesh, const BoundaryLabels& labels, const SpeedModel& speed,
                          int src_vertex, const SolveOptions& opt = {});

// Reflection BC jets on the facet vertices (indexed like Facet::verts).
std::vector<Jet> make_reflection_bcs(const Branch& parent, int facet);
EdgeIncident make_diffraction_bcs(const Branch& parent, int chain);

bool facet_visible(const Branch& parent, int facet);
bool chain_visible(const Branch& parent, int chain);

Branch solve_reflection(const Branch& parent, int facet, const SolveOptions& opt = {});
Branch solve_diffraction(const Branch& parent, int chain, const SolveOptions& opt = {});

struct BranchTree {
  std::vector<Branch> branches;
  std::vector<int> parent;   // -1 for the root
  std::vector<int> depth;
  std::vector<std::string> label;
  std::vector<std::string> errors;  // child solve failures, "" when fine
};

struct TreeOptions {
  int max_depth = 1;
  SolveOptions solve;
  double min_amp_db = -kInf;  // skip children whose parent max |A| on the BC is below this
  int jobs = 1;               // threads for sibling branch solves
};

BranchTree expand_tree(Branch root, const TreeOptions& opt);

// Diffraction coefficient times amplitude at each vertex of a diffraction
// branch for wavenumber k (constant speed only). Other branches: amplitude.
std::vector<cplx> effective_amplitude(const Branch& b, double k);

struct Superposition {
  std::vector<cplx> u;
  std::vector<uint8_t> mask;  // 1 where at least one branch contributed
};
// u(x) = sum over branches of A(x) exp(i omega T(x)). Direct and reflected
// branches contribute only where their org field is at least 1/2.
Superposition superpose(const std::vector<const Branch*>& branches, double omega, std::span<const Vec3> points);

}  // namespace jmm
