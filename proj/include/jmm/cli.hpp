#pragma once

#include "jmm/io.hpp"
#include "jmm/oracle.hpp"

#include <iosfwd>
#include <string>

namespace jmm {

enum ExitCode : int { kExitOk = 0, kExitFlags = 2, kExitMesh = 3, kExitSolve = 4 };

// Entry point shared by the binary and the tests. args excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Mesh specs:
//   builtin:wedge:n=1.75,w=4,h=2,edge=0.1     (or maxvol=V instead of edge)
//   builtin:box:lx=2,ly=2,lz=2,edge=0.25       (centred at the origin; or maxvol=V)
//   builtin:building:edge=0.25
//   path/to/mesh.node                           (TetGen; mesh.ele alongside)
//   path/to/scene.json
// Throws MeshError for malformed specs or meshes.
MeshTopo build_mesh(const std::string& spec);

// Target edge lengths for the built-in meshers given a maximum cell volume.
// Wedge: 1/k with k = round(1 / (0.864 V^0.28)). Box of side 2: 2/n with n the
// even integer nearest 1.35 V^(-1/3).
double wedge_edge_for_volume(double maxvol);
int cube_cells_for_volume(double maxvol);

// "const:c" or "linear:v0,vx,vy,vz"; linear speeds are anchored at origin.
SpeedModel parse_speed(const std::string& spec, const Vec3& origin);

// Least-squares slope of log(err) against log(h); NaN with fewer than two
// usable points.
double fit_order(std::span<const double> h, std::span<const double> err);

struct RelErrors {
  double T = kNaN, grad = kNaN, hess = kNaN;
  int count = 0;
};

// Relative l1 errors of a wedge branch against the exact solution, with
// vertices split by org (split: 0 all, 1 org >= 1/2, 2 org < 1/2). Edge
// vertices and the source vertex are skipped.
RelErrors wedge_branch_errors(const Branch& b, WedgeBranch which, const WedgeGeom& g, int split);

// Relative l1 error of the spline on a res x res grid of the plane z = z0
// over [-1,1]^2 against the linear-speed eikonal.
double cube_slice_error(const Branch& b, const Vec3& src, double v0, const Vec3& v, double z0, int res);

struct ConvergeConfig {
  std::string case_name = "wedge";   // wedge | cube-linear
  std::vector<double> maxvols;       // empty: the default ladder for the case
  double r_fac = kNaN;               // NaN: 0.3 (wedge) or 0.2 (cube)
  int reinit_passes = 1;
  int jobs = 1;
};

struct ConvergeRow {
  std::string kind;    // data | fit
  int mesh = -1;
  double maxvol = kNaN, h = kNaN;
  int N = 0;
  std::string branch, split;
  double err_T = kNaN, err_grad = kNaN, err_hess = kNaN;
  double seconds = kNaN;
};

struct ConvergeResult {
  std::vector<ConvergeRow> rows;
  // Fitted orders by branch/split key "branch/split".
  std::vector<std::pair<std::string, std::array<double, 3>>> orders;
  double seconds = 0.0;
  std::array<double, 3> order(const std::string& key) const;
};

ConvergeResult run_converge(const ConvergeConfig& cfg);
void write_converge_csv(std::ostream& os, const ConvergeResult& r, const std::string& case_name);

// Default volume ladders.
std::vector<double> default_wedge_maxvols();
std::vector<double> default_cube_maxvols();

// "phi-out:<start>:<end>:<steps>" where the bounds are numbers, "pi",
// "<x>pi" or "npi" (the wedge index times pi).
struct Sweep {
  double start = 0.0, end = 0.0;
  int steps = 0;
};
Sweep parse_sweep(const std::string& spec, double n_wedge);

}  // namespace jmm
