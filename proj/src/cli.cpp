#include "jmm/cli.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

namespace jmm {

namespace {

struct FlagError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <class Err>
double to_double(const std::string& s, const std::string& what) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Err("bad number '" + s + "' in " + what);
  return x;
}

template <class Err>
int to_int(const std::string& s, const std::string& what) {
  int x = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Err("bad integer '" + s + "' in " + what);
  return x;
}

std::vector<double> doubles(const std::string& s, std::size_t count, const std::string& what) {
  auto parts = split(s, ',');
  if (count && parts.size() != count)
    throw FlagError(what + " expects " + std::to_string(count) + " comma-separated numbers");
  std::vector<double> out;
  for (const auto& p : parts) out.push_back(to_double<FlagError>(p, what));
  return out;
}

Vec3 vec3(const std::string& s, const std::string& what) {
  auto d = doubles(s, 3, what);
  return {d[0], d[1], d[2]};
}

std::map<std::string, double> key_values(const std::string& s, const std::string& spec) {
  std::map<std::string, double> kv;
  if (s.empty()) return kv;
  for (const auto& item : split(s, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos) throw MeshError("expected key=value in mesh spec '" + spec + "'");
    kv[item.substr(0, eq)] = to_double<MeshError>(item.substr(eq + 1), "mesh spec '" + spec + "'");
  }
  return kv;
}

double get_or(const std::map<std::string, double>& kv, const std::string& k, double def) {
  auto it = kv.find(k);
  return it == kv.end() ? def : it->second;
}

void check_keys(const std::map<std::string, double>& kv, std::initializer_list<const char*> allowed,
                const std::string& spec) {
  for (const auto& [k, v] : kv) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw MeshError("unknown key '" + k + "' in mesh spec '" + spec + "'");
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

double wedge_edge_for_volume(double maxvol) {
  if (!(maxvol > 0)) throw MeshError("maxvol must be positive");
  long k = std::lround(1.0 / (0.864 * std::pow(maxvol, 0.28)));
  return 1.0 / static_cast<double>(std::max(1L, k));
}

int cube_cells_for_volume(double maxvol) {
  if (!(maxvol > 0)) throw MeshError("maxvol must be positive");
  double x = 1.35 * std::pow(maxvol, -1.0 / 3.0);
  int n = 2 * static_cast<int>(std::lround(x / 2.0));
  return std::max(2, n);
}

MeshTopo build_mesh(const std::string& spec) {
  if (spec.rfind("builtin:", 0) == 0) {
    std::string rest = spec.substr(8);
    auto colon = rest.find(':');
    std::string kind = rest.substr(0, colon);
    auto kv = key_values(colon == std::string::npos ? "" : rest.substr(colon + 1), spec);
    auto edge = [&](double def_for_volume_side) {
      if (kv.count("edge") && kv.count("maxvol")) throw MeshError("give edge or maxvol, not both");
      if (kv.count("maxvol")) return def_for_volume_side;
      double e = get_or(kv, "edge", kNaN);
      if (!(e > 0)) throw MeshError("mesh spec '" + spec + "' needs a positive edge or maxvol");
      return e;
    };
    if (kind == "wedge") {
      check_keys(kv, {"n", "w", "h", "edge", "maxvol"}, spec);
      double te = edge(kv.count("maxvol") ? wedge_edge_for_volume(kv.at("maxvol")) : 0.0);
      return mesh_box_wedge(get_or(kv, "w", 4.0), get_or(kv, "h", 2.0), get_or(kv, "n", 1.75), te);
    }
    if (kind == "box") {
      check_keys(kv, {"lx", "ly", "lz", "edge", "maxvol"}, spec);
      double te = edge(kv.count("maxvol") ? 2.0 / cube_cells_for_volume(kv.at("maxvol")) : 0.0);
      Vec3 half(get_or(kv, "lx", 2.0) / 2, get_or(kv, "ly", 2.0) / 2, get_or(kv, "lz", 2.0) / 2);
      return mesh_box(-half, half, te);
    }
    if (kind == "building") {
      check_keys(kv, {"edge"}, spec);
      return mesh_building(edge(0.0));
    }
    throw MeshError("unknown builtin mesh '" + kind + "'");
  }
  namespace fs = std::filesystem;
  fs::path p(spec);
  std::string ext = p.extension().string();
  try {
    if (ext == ".node") {
      fs::path ele = p;
      ele.replace_extension(".ele");
      return load_mesh(read_file(p.string()), read_file(ele.string()));
    }
    if (ext == ".json") return load_scene_json(read_file(spec));
  } catch (const MeshError&) {
    throw;
  } catch (const std::exception& e) {
    throw MeshError(e.what());
  }
  throw MeshError("unrecognised mesh '" + spec + "' (expected builtin:..., .node or .json)");
}

SpeedModel parse_speed(const std::string& spec, const Vec3& origin) {
  if (spec.rfind("const:", 0) == 0) {
    double c = to_double<FlagError>(spec.substr(6), "--speed");
    if (!(c > 0)) throw FlagError("speed must be positive");
    return SpeedModel::constant(c);
  }
  if (spec.rfind("linear:", 0) == 0) {
    auto d = doubles(spec.substr(7), 4, "--speed linear");
    if (!(d[0] > 0)) throw FlagError("v0 must be positive");
    return SpeedModel::linear(d[0], Vec3(d[1], d[2], d[3]), origin);
  }
  throw FlagError("--speed expects const:c or linear:v0,vx,vy,vz");
}

double fit_order(std::span<const double> h, std::span<const double> err) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < h.size() && i < err.size(); ++i) {
    if (!(h[i] > 0) || !(err[i] > 0) || !std::isfinite(err[i])) continue;
    double x = std::log(h[i]), y = std::log(err[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) return kNaN;
  double den = n * sxx - sx * sx;
  if (den == 0.0) return kNaN;
  return (n * sxy - sx * sy) / den;
}

RelErrors wedge_branch_errors(const Branch& b, WedgeBranch which, const WedgeGeom& g, int split) {
  const MeshTopo& m = *b.mesh;
  double eT = 0, nT = 0, eg = 0, ng = 0, eH = 0, nH = 0;
  RelErrors r;
  for (int v = 0; v < b.n(); ++v) {
    if (b.labels->vert_chain[v] >= 0 || v == b.bc.src_vertex) continue;
    const Jet& j = b.jets[v];
    if (!std::isfinite(j.T)) continue;
    if (split == 1 && b.org[v] < 0.5) continue;
    if (split == 2 && b.org[v] >= 0.5) continue;
    ExactJet ex = wedge_exact(m.verts[v], g, which);
    eT += std::abs(j.T - ex.T);
    nT += std::abs(ex.T);
    if (j.grad_defined) {
      eg += (j.grad - ex.grad).norm();
      ng += ex.grad.norm();
    }
    if (j.hess_defined) {
      eH += (j.hess - ex.hess).norm();
      nH += ex.hess.norm();
    }
    ++r.count;
  }
  if (nT > 0) r.T = eT / nT;
  if (ng > 0) r.grad = eg / ng;
  if (nH > 0) r.hess = eH / nH;
  return r;
}

double cube_slice_error(const Branch& b, const Vec3& src, double v0, const Vec3& v, double z0, int res) {
  EikonalSpline sp = build_spline(*b.mesh, b.jets);
  double e = 0, n = 0;
  for (int a = 0; a < res; ++a)
    for (int c = 0; c < res; ++c) {
      Vec3 x(-1 + 2.0 * (a + 0.5) / res, -1 + 2.0 * (c + 0.5) / res, z0);
      double ex = linear_speed_exact(x, src, v0, v);
      e += std::abs(spline_eval(sp, x).T - ex);
      n += std::abs(ex);
    }
  return e / n;
}

std::vector<double> default_wedge_maxvols() { return {0.01, 0.00316, 0.001, 0.000316, 0.0001}; }

std::vector<double> default_cube_maxvols() {
  std::vector<double> out;
  for (int k = 0; k <= 6; ++k) out.push_back(0.1 * std::pow(8.0, -k / 2.0));
  return out;
}

std::array<double, 3> ConvergeResult::order(const std::string& key) const {
  for (const auto& [k, v] : orders)
    if (k == key) return v;
  return {kNaN, kNaN, kNaN};
}

namespace {

// Gradient and Hessian of the linear-speed eikonal by central differences.
void linear_speed_derivs(const Vec3& x, const Vec3& src, double v0, const Vec3& v, Vec3& g, Mat3& H) {
  auto grad_at = [&](const Vec3& y) {
    Vec3 out;
    const double d = 1e-6;
    for (int i = 0; i < 3; ++i) {
      Vec3 e = Vec3::Zero();
      e[i] = d;
      out[i] = (linear_speed_exact(y + e, src, v0, v) - linear_speed_exact(y - e, src, v0, v)) / (2 * d);
    }
    return out;
  };
  g = grad_at(x);
  const double d = 1e-4;
  for (int i = 0; i < 3; ++i) {
    Vec3 e = Vec3::Zero();
    e[i] = d;
    H.col(i) = (grad_at(x + e) - grad_at(x - e)) / (2 * d);
  }
  H = 0.5 * (H + H.transpose()).eval();
}

void add_fits(ConvergeResult& r, const std::vector<std::string>& keys) {
  for (const auto& key : keys) {
    std::vector<double> h, eT, eg, eH;
    for (const auto& row : r.rows)
      if (row.kind == "data" && row.branch + "/" + row.split == key) {
        h.push_back(row.h);
        eT.push_back(row.err_T);
        eg.push_back(row.err_grad);
        eH.push_back(row.err_hess);
      }
    auto fit = [&](std::size_t from, const std::string& kind, const std::string& suffix) {
      std::span<const double> hs(h.data() + from, h.size() - from);
      std::array<double, 3> o{fit_order(hs, {eT.data() + from, hs.size()}), fit_order(hs, {eg.data() + from, hs.size()}),
                              fit_order(hs, {eH.data() + from, hs.size()})};
      r.orders.emplace_back(key + suffix, o);
      ConvergeRow fr;
      fr.kind = kind;
      auto slash = key.find('/');
      fr.branch = key.substr(0, slash);
      fr.split = key.substr(slash + 1);
      fr.err_T = o[0];
      fr.err_grad = o[1];
      fr.err_hess = o[2];
      r.rows.push_back(fr);
    };
    if (h.size() < 2) continue;
    fit(0, "fit", "");
    if (h.size() >= 5) fit(h.size() - 4, "fit-last4", "/last4");
  }
}

}  // namespace

ConvergeResult run_converge(const ConvergeConfig& cfg) {
  ConvergeResult res;
  auto t_all = std::chrono::steady_clock::now();
  std::vector<std::string> keys;
  if (cfg.case_name == "wedge") {
    auto vols = cfg.maxvols.empty() ? default_wedge_maxvols() : cfg.maxvols;
    const char* splits[] = {"all", "direct", "diffracted"};
    for (std::size_t i = 0; i < vols.size(); ++i) {
      auto t0 = std::chrono::steady_clock::now();
      WedgeGeom g;
      MeshTopo m = mesh_box_wedge(4.0, 2.0, g.n, wedge_edge_for_volume(vols[i]));
      BoundaryLabels L = classify_boundary(m);
      int src = nearest_vertex(m, g.src);
      g.src = m.verts[src];
      TreeOptions to;
      to.max_depth = 1;
      to.jobs = cfg.jobs;
      to.solve.r_fac = std::isfinite(cfg.r_fac) ? cfg.r_fac : 0.3;
      to.solve.reinit_passes = cfg.reinit_passes;
      BranchTree tree = expand_tree(solve_point_source(m, L, SpeedModel::constant(g.c), src, to.solve), to);
      double secs = seconds_since(t0);
      for (std::size_t bi = 0; bi < tree.branches.size(); ++bi) {
        if (!tree.errors[bi].empty())
          throw SolveError("branch " + std::to_string(bi) + " (" + tree.label[bi] + "): " + tree.errors[bi]);
        const Branch& b = tree.branches[bi];
        WedgeBranch wb;
        std::string name;
        if (bi == 0) {
          wb = WedgeBranch::Direct;
          name = "direct";
        } else if (b.bc.kind == BcDescriptor::Kind::Reflection) {
          if (L.facets[b.bc.facet].normal.dot(Vec3(0, -1, 0)) < 0.999) continue;
          wb = WedgeBranch::OReflection;
          name = "o-reflection";
        } else if (b.bc.kind == BcDescriptor::Kind::Diffraction) {
          wb = WedgeBranch::Diffraction;
          name = "diffraction";
        } else {
          continue;
        }
        for (int s = 0; s < 3; ++s) {
          RelErrors e = wedge_branch_errors(b, wb, g, s);
          if (e.count == 0) continue;
          ConvergeRow row{"data", static_cast<int>(i), vols[i], m.h_avg, m.num_verts(), name, splits[s],
                          e.T, e.grad, e.hess, secs};
          res.rows.push_back(row);
          std::string key = name + "/" + splits[s];
          if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
        }
      }
    }
  } else if (cfg.case_name == "cube-linear") {
    auto vols = cfg.maxvols.empty() ? default_cube_maxvols() : cfg.maxvols;
    const double v0 = 1.0;
    const Vec3 v(0.025, -0.025, 0.05);
    for (std::size_t i = 0; i < vols.size(); ++i) {
      auto t0 = std::chrono::steady_clock::now();
      int nc = cube_cells_for_volume(vols[i]);
      MeshTopo m = mesh_box(Vec3(-1, -1, -1), Vec3(1, 1, 1), 2.0 / nc);
      BoundaryLabels L = classify_boundary(m);
      int src = nearest_vertex(m, Vec3::Zero());
      Vec3 xs = m.verts[src];
      SolveOptions so;
      so.r_fac = std::isfinite(cfg.r_fac) ? cfg.r_fac : 0.2;
      so.reinit_passes = cfg.reinit_passes;
      Branch b = solve_point_source(m, L, SpeedModel::linear(v0, v, xs), src, so);
      double secs = seconds_since(t0);
      ConvergeRow slice{"data", static_cast<int>(i), vols[i], m.h_avg, m.num_verts(), "direct", "slice",
                        cube_slice_error(b, xs, v0, v, 0.5, 256), kNaN, kNaN, secs};
      res.rows.push_back(slice);
      double eT = 0, nT = 0, eg = 0, ng = 0, eH = 0, nH = 0;
      for (int q = 0; q < b.n(); ++q) {
        if (q == src) continue;
        const Jet& j = b.jets[q];
        double ex = linear_speed_exact(m.verts[q], xs, v0, v);
        Vec3 g;
        Mat3 H;
        linear_speed_derivs(m.verts[q], xs, v0, v, g, H);
        eT += std::abs(j.T - ex);
        nT += ex;
        if (j.grad_defined) {
          eg += (j.grad - g).norm();
          ng += g.norm();
        }
        if (j.hess_defined) {
          eH += (j.hess - H).norm();
          nH += H.norm();
        }
      }
      ConvergeRow all{"data", static_cast<int>(i), vols[i], m.h_avg, m.num_verts(), "direct", "all", eT / nT,
                      ng > 0 ? eg / ng : kNaN, nH > 0 ? eH / nH : kNaN, secs};
      res.rows.push_back(all);
    }
    keys = {"direct/slice", "direct/all"};
  } else {
    throw FlagError("--case must be wedge or cube-linear");
  }
  add_fits(res, keys);
  res.seconds = seconds_since(t_all);
  return res;
}

void write_converge_csv(std::ostream& os, const ConvergeResult& r, const std::string& case_name) {
  CsvWriter w(os, {"kind", "case", "mesh", "maxvol", "h", "N", "branch", "split", "err_T", "err_gradT", "err_hessT",
                   "seconds"});
  for (const auto& row : r.rows) {
    bool data = row.kind == "data";
    w.row({row.kind, case_name, data ? std::to_string(row.mesh) : "", data ? format_double(row.maxvol) : "",
           data ? format_double(row.h) : "", data ? std::to_string(row.N) : "", row.branch, row.split,
           format_double(row.err_T), format_double(row.err_grad), format_double(row.err_hess),
           data ? format_double(row.seconds) : ""});
  }
}

Sweep parse_sweep(const std::string& spec, double n_wedge) {
  auto parts = split(spec, ':');
  if (parts.size() != 4 || parts[0] != "phi-out")
    throw FlagError("--sweep expects phi-out:<start>:<end>:<steps>");
  auto bound = [&](const std::string& s) {
    if (s == "npi") return n_wedge * kPi;
    if (s == "pi") return kPi;
    if (s.size() > 2 && s.substr(s.size() - 2) == "pi") return to_double<FlagError>(s.substr(0, s.size() - 2), "--sweep") * kPi;
    return to_double<FlagError>(s, "--sweep");
  };
  Sweep sw{bound(parts[1]), bound(parts[2]), to_int<FlagError>(parts[3], "--sweep")};
  if (sw.steps < 1) throw FlagError("--sweep needs at least one step");
  return sw;
}

namespace {

struct Loaded {
  std::unique_ptr<MeshTopo> mesh;
  std::unique_ptr<BoundaryLabels> labels;
  std::vector<Branch> branches;
};

Loaded load_branches(const std::vector<std::string>& files) {
  Loaded out;
  std::string spec;
  for (const auto& f : files) {
    std::ifstream is(f, std::ios::binary);
    if (!is) throw FlagError("cannot open branch file '" + f + "'");
    BranchHeader h;
    try {
      h = read_branch_header(is);
    } catch (const std::exception& e) {
      throw FlagError("'" + f + "': " + e.what());
    }
    if (!out.mesh) {
      spec = h.mesh_spec;
      out.mesh = std::make_unique<MeshTopo>(build_mesh(spec));
      out.labels = std::make_unique<BoundaryLabels>(classify_boundary(*out.mesh));
    } else if (h.mesh_spec != spec) {
      throw FlagError("branch files were solved on different meshes");
    }
    try {
      out.branches.push_back(read_branch(is, *out.mesh, *out.labels));
    } catch (const std::exception& e) {
      throw MeshError("'" + f + "': " + e.what());
    }
  }
  return out;
}

int cmd_solve(const std::string& mesh_spec, const std::string& src_s, double rfac, const std::string& speed_s, int depth,
              const std::string& out_dir, int reinit, const std::string& fmt_s, int jobs, bool vtk, std::ostream& out,
              std::ostream& err) {
  Vec3 src_x = vec3(src_s, "--src");
  if (depth < 0) throw FlagError("--depth must be non-negative");
  if (reinit < 0) throw FlagError("--reinit-passes must be non-negative");
  if (jobs < 1) throw FlagError("--jobs must be at least 1");
  if (fmt_s != "json" && fmt_s != "bin") throw FlagError("--seed-format must be json or bin");
  MeshTopo mesh = build_mesh(mesh_spec);
  BoundaryLabels labels = classify_boundary(mesh);
  int src = nearest_vertex(mesh, src_x);
  if (labels.vert_chain[src] >= 0) throw FlagError("--src snaps to a vertex on a diffracting edge");
  SpeedModel speed = parse_speed(speed_s, mesh.verts[src]);

  TreeOptions to;
  to.max_depth = depth;
  to.jobs = jobs;
  to.solve.r_fac = rfac;
  to.solve.reinit_passes = reinit;
  Branch root;
  try {
    root = solve_point_source(mesh, labels, speed, src, to.solve);
  } catch (const SolveError& e) {
    err << "solve failed in branch 0 (direct): " << e.what() << '\n';
    return kExitSolve;
  }
  BranchTree tree = expand_tree(std::move(root), to);

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const BranchFormat fmt = fmt_s == "bin" ? BranchFormat::Binary : BranchFormat::Json;
  nlohmann::json man;
  man["format"] = "jmm-manifest";
  man["version"] = 1;
  man["mesh"] = {{"spec", mesh_spec},
                 {"hash", std::to_string(mesh_hash(mesh))},
                 {"num_verts", mesh.num_verts()},
                 {"num_cells", mesh.num_cells()},
                 {"h_avg", mesh.h_avg},
                 {"diam", mesh.diam}};
  man["source"] = {{"requested", {src_x[0], src_x[1], src_x[2]}},
                   {"vertex", src},
                   {"x", {mesh.verts[src][0], mesh.verts[src][1], mesh.verts[src][2]}}};
  man["speed"] = speed_s;
  man["r_fac"] = std::isfinite(rfac) ? rfac : default_r_fac(mesh);
  man["depth"] = depth;
  man["reinit_passes"] = reinit;
  man["seed_format"] = fmt_s;
  nlohmann::json list = nlohmann::json::array();
  int first_failure = -1;
  for (std::size_t i = 0; i < tree.branches.size(); ++i) {
    const Branch& b = tree.branches[i];
    const bool ok = tree.errors[i].empty();
    std::string file;
    if (ok) {
      file = "branch_" + std::to_string(i) + (fmt == BranchFormat::Binary ? ".bin" : ".json");
      BranchHeader h{mesh_spec, mesh_hash(mesh), mesh.num_verts(), static_cast<int>(i), tree.parent[i], tree.depth[i],
                     tree.label[i]};
      write_file((fs::path(out_dir) / file).string(), branch_bytes(b, h, fmt));
      if (vtk) {
        std::vector<double> T(b.n()), org(b.n()), A(b.n());
        for (int v = 0; v < b.n(); ++v) {
          T[v] = b.jets[v].T;
          org[v] = b.org[v];
          A[v] = b.amp_defined[v] ? std::abs(b.amp[v]) : kNaN;
        }
        std::ofstream vf(fs::path(out_dir) / ("branch_" + std::to_string(i) + ".vtk"), std::ios::binary);
        write_vtk(vf, mesh, {{"T", T}, {"org", org}, {"absA", A}}, tree.label[i]);
      }
    } else if (first_failure < 0) {
      first_failure = static_cast<int>(i);
    }
    int valid = 0;
    for (auto s : b.state) valid += s == NodeState::Valid;
    list.push_back({{"id", i},
                    {"label", tree.label[i]},
                    {"parent", tree.parent[i]},
                    {"depth", tree.depth[i]},
                    {"file", file},
                    {"error", tree.errors[i]},
                    {"num_valid", valid},
                    {"fallback_commits", b.stats.fallback_commits},
                    {"line_rescues", b.stats.line_rescues}});
  }
  man["branches"] = list;
  write_file((fs::path(out_dir) / "manifest.json").string(), man.dump(2) + "\n");
  out << "solved " << tree.branches.size() << " branch(es) into " << out_dir << '\n';
  if (first_failure >= 0) {
    err << "solve failed in branch " << first_failure << " (" << tree.label[first_failure]
        << "): " << tree.errors[first_failure] << '\n';
    return kExitSolve;
  }
  return kExitOk;
}

int cmd_converge(const std::string& case_name, const std::string& vols_s, double rfac, int reinit, int jobs,
                 const std::string& out_path, std::ostream& out) {
  ConvergeConfig cfg;
  cfg.case_name = case_name;
  if (case_name != "wedge" && case_name != "cube-linear") throw FlagError("--case must be wedge or cube-linear");
  if (!vols_s.empty()) cfg.maxvols = doubles(vols_s, 0, "--maxvols");
  for (double v : cfg.maxvols)
    if (!(v > 0)) throw FlagError("--maxvols entries must be positive");
  if (jobs < 1) throw FlagError("--jobs must be at least 1");
  cfg.r_fac = rfac;
  cfg.reinit_passes = reinit;
  cfg.jobs = jobs;
  ConvergeResult r = run_converge(cfg);
  std::ostringstream csv;
  write_converge_csv(csv, r, case_name);
  if (out_path.empty() || out_path == "-")
    out << csv.str();
  else
    write_file(out_path, csv.str());
  return kExitOk;
}

struct Plane {
  int axis = 2;
  double value = 0.0;
};

Plane parse_plane(const std::string& s) {
  if (s.size() < 3 || s[1] != '=' || (s[0] != 'x' && s[0] != 'y' && s[0] != 'z'))
    throw FlagError("--plane expects x=V, y=V or z=V");
  return {s[0] - 'x', to_double<FlagError>(s.substr(2), "--plane")};
}

std::pair<int, int> parse_res(const std::string& s) {
  auto x = s.find('x');
  if (x == std::string::npos) throw FlagError("--res expects NxM");
  int a = to_int<FlagError>(s.substr(0, x), "--res"), b = to_int<FlagError>(s.substr(x + 1), "--res");
  if (a < 1 || b < 1) throw FlagError("--res must be positive");
  return {a, b};
}

int cmd_slice(const std::vector<std::string>& files, const std::string& plane_s, const std::string& res_s,
              const std::string& field, double omega, const std::string& out_path, std::ostream& out) {
  Plane pl = parse_plane(plane_s);
  auto [N, M] = parse_res(res_s);
  const bool is_u = field == "u";
  if (field != "T" && field != "gradT" && field != "A" && field != "org" && !is_u)
    throw FlagError("--field must be T, gradT, A, org or u");
  if (is_u && !std::isfinite(omega)) throw FlagError("--field u requires --omega");
  if (!is_u && files.size() != 1) throw FlagError("--field " + field + " takes exactly one --branch");
  Loaded ld = load_branches(files);
  const MeshTopo& m = *ld.mesh;

  // In-plane axes follow the remaining coordinates in increasing order.
  int a0 = pl.axis == 0 ? 1 : 0, a1 = pl.axis == 2 ? 1 : 2;
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(N) * M);
  for (int j = 0; j < M; ++j)
    for (int i = 0; i < N; ++i) {
      Vec3 x;
      x[pl.axis] = pl.value;
      x[a0] = N == 1 ? 0.5 * (m.lo[a0] + m.hi[a0]) : m.lo[a0] + (m.hi[a0] - m.lo[a0]) * i / (N - 1);
      x[a1] = M == 1 ? 0.5 * (m.lo[a1] + m.hi[a1]) : m.lo[a1] + (m.hi[a1] - m.lo[a1]) * j / (M - 1);
      pts.push_back(x);
    }

  std::vector<std::string> header{"x", "y", "z"};
  if (field == "T") header.push_back("T");
  if (field == "org") header.push_back("org");
  if (field == "gradT") header.insert(header.end(), {"gx", "gy", "gz"});
  if (field == "A" || is_u) header.insert(header.end(), {"re", "im", "abs"});
  std::ostringstream csv;
  CsvWriter w(csv, header);

  if (is_u) {
    std::vector<const Branch*> bs;
    for (const auto& b : ld.branches) bs.push_back(&b);
    Superposition s = superpose(bs, omega, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      bool inside = locate(m, pts[i]).has_value();
      double re = inside ? s.u[i].real() : kNaN, im = inside ? s.u[i].imag() : kNaN;
      std::array<double, 6> row{pts[i][0], pts[i][1], pts[i][2], re, im, inside ? std::abs(s.u[i]) : kNaN};
      w.row(row);
    }
  } else {
    const Branch& b = ld.branches[0];
    EikonalSpline sp = build_spline(m, b.jets);
    for (const Vec3& x : pts) {
      std::vector<double> row{x[0], x[1], x[2]};
      auto hit = locate(m, x);
      if (field == "T" || field == "gradT") {
        bool ok = false;
        SplineValue sv{};
        if (hit) {
          const auto& cv = m.cells[hit->cell];
          ok = true;
          for (int k = 0; k < 4; ++k) ok = ok && std::isfinite(b.jets[cv[k]].T);
          if (ok) sv = spline_eval(sp, x);
        }
        if (field == "T")
          row.push_back(ok ? sv.T : kNaN);
        else
          for (int k = 0; k < 3; ++k) row.push_back(ok ? sv.grad[k] : kNaN);
      } else if (field == "org") {
        double o = kNaN;
        if (hit) {
          o = 0.0;
          for (int k = 0; k < 4; ++k) o += hit->bary[k] * b.org[m.cells[hit->cell][k]];
        }
        row.push_back(o);
      } else {
        auto a = hit ? eval_amplitude(b, x) : std::nullopt;
        row.push_back(a ? a->real() : kNaN);
        row.push_back(a ? a->imag() : kNaN);
        row.push_back(a ? std::abs(*a) : kNaN);
      }
      w.row(row);
    }
  }
  if (out_path.empty() || out_path == "-")
    out << csv.str();
  else
    write_file(out_path, csv.str());
  return kExitOk;
}

int cmd_wavefront(const std::string& file, double tau, const std::string& camera_s, const std::string& out_path,
                  std::ostream& out) {
  auto c = doubles(camera_s, 9, "--camera");
  Vec3 origin(c[0], c[1], c[2]), dir(c[3], c[4], c[5]);
  double fov = c[6];
  int W = static_cast<int>(c[7]), H = static_cast<int>(c[8]);
  if (dir.norm() == 0.0 || !(fov > 0 && fov < 180) || W < 1 || H < 1 || c[7] != W || c[8] != H)
    throw FlagError("--camera expects ox,oy,oz,dx,dy,dz,fov_deg,W,H with a nonzero direction");
  if (!std::isfinite(tau)) throw FlagError("--tau must be finite");
  Loaded ld = load_branches({file});
  const Branch& b = ld.branches[0];
  EikonalSpline sp = build_spline(*ld.mesh, b.jets);

  Vec3 fwd = dir.normalized();
  Vec3 up0 = std::abs(fwd[2]) < 0.99 ? Vec3::UnitZ() : Vec3::UnitY();
  Vec3 right = fwd.cross(up0).normalized();
  Vec3 up = right.cross(fwd);
  double th = std::tan(0.5 * fov * kPi / 180.0), aspect = double(W) / H;

  std::vector<Vec3> hits;
  std::ostringstream map;
  CsvWriter w(map, {"px", "py", "obj_index"});
  for (int j = 0; j < H; ++j)
    for (int i = 0; i < W; ++i) {
      double sx = (2 * (i + 0.5) / W - 1) * th * aspect, sy = (1 - 2 * (j + 0.5) / H) * th;
      Vec3 ray = (fwd + sx * right + sy * up).normalized();
      auto hit = ray_levelset_intersect(sp, origin, ray, tau);
      int idx = -1;
      if (hit) {
        hits.push_back(*hit);
        idx = static_cast<int>(hits.size());  // OBJ indices are 1-based
      }
      w.row({std::to_string(i), std::to_string(j), std::to_string(idx)});
    }
  std::ostringstream obj;
  write_obj(obj, hits, "jmm wavefront tau=" + format_double(tau) + " hits=" + std::to_string(hits.size()));
  if (out_path.empty() || out_path == "-") {
    out << obj.str();
  } else {
    write_file(out_path, obj.str());
    write_file(out_path + ".pixels.csv", map.str());
  }
  return kExitOk;
}

int cmd_utd(double n, double k, double beta, double phi_in, double L, const std::string& sweep_s,
            const std::string& out_path, std::ostream& out) {
  if (!(n > 0 && n <= 2)) throw FlagError("--n must lie in (0, 2]");
  if (!(k > 0)) throw FlagError("--k must be positive");
  if (!(L > 0)) throw FlagError("--L must be positive");
  if (!(beta > 0 && beta < kPi)) throw FlagError("--beta must lie in (0, pi)");
  Sweep sw = parse_sweep(sweep_s, n);
  std::ostringstream csv;
  CsvWriter w(csv, {"phi_out", "D_re", "D_im", "D_abs", "D1_re", "D1_im", "D2_re", "D2_im", "D3_re", "D3_im", "D4_re",
                    "D4_im", "F_arg1", "F_arg2", "F_arg3", "F_arg4"});
  for (int i = 0; i <= sw.steps; ++i) {
    double phi = sw.start + (sw.end - sw.start) * i / sw.steps;
    UtdTerms t = utd_D(n, k, L, beta, phi_in, phi);
    std::array<double, 16> row{phi,         t.D.real(),  t.D.imag(),  std::abs(t.D), t.D1.real(), t.D1.imag(),
                               t.D2.real(), t.D2.imag(), t.D3.real(), t.D3.imag(),   t.D4.real(), t.D4.imag(),
                               t.F_arg[0],  t.F_arg[1],  t.F_arg[2],  t.F_arg[3]};
    w.row(row);
  }
  if (out_path.empty() || out_path == "-")
    out << csv.str();
  else
    write_file(out_path, csv.str());
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Jet marching eikonal and multi-branch scattering solver", "jmm"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "jmm 1.0");

  // solve
  std::string mesh_spec, src_s, speed_s = "const:1", out_dir, fmt_s = "json";
  double rfac = kNaN;
  int depth = 1, reinit = 1, jobs = 1;
  bool vtk = false;
  auto* solve = app.add_subcommand("solve", "Solve the branch tree for a point source and write a manifest");
  solve->add_option("--mesh", mesh_spec, "Mesh: builtin:wedge:..., builtin:box:..., builtin:building:..., .node or .json")
      ->required()
      ->envname("JMM_MESH");
  solve->add_option("--src", src_s, "Source point x,y,z (snapped to the nearest vertex)")->required()->envname("JMM_SRC");
  solve->add_option("--rfac", rfac, "Radius of the exactly initialised source tube (default 0.075 * mesh diameter)")
      ->envname("JMM_RFAC");
  solve->add_option("--speed", speed_s, "Speed model const:c or linear:v0,vx,vy,vz")
      ->capture_default_str()
      ->envname("JMM_SPEED");
  solve->add_option("--depth", depth, "Maximum branch tree depth")->capture_default_str()->envname("JMM_DEPTH");
  solve->add_option("--out", out_dir, "Output directory")->required()->envname("JMM_OUT");
  solve->add_option("--reinit-passes", reinit, "Shadow-zone reinitialisation passes per branch")
      ->capture_default_str()
      ->envname("JMM_REINIT_PASSES");
  solve->add_option("--seed-format", fmt_s, "Branch serialisation format: json or bin")
      ->capture_default_str()
      ->envname("JMM_SEED_FORMAT");
  solve->add_option("--jobs", jobs, "Threads for sibling branch solves")->capture_default_str()->envname("JMM_JOBS");
  solve->add_flag("--vtk", vtk, "Also write legacy VTK files with T, org and |A|");

  // converge
  std::string case_name, vols_s, conv_out = "-";
  double conv_rfac = kNaN;
  int conv_reinit = 1, conv_jobs = 1;
  auto* conv = app.add_subcommand("converge", "Convergence study against the analytic solution");
  conv->add_option("--case", case_name, "wedge or cube-linear")->required();
  conv->add_option("--maxvols", vols_s, "Comma-separated maximum cell volumes (default: the built-in ladder)");
  conv->add_option("--rfac", conv_rfac, "Source tube radius (default 0.3 for wedge, 0.2 for cube-linear)")
      ->envname("JMM_RFAC");
  conv->add_option("--reinit-passes", conv_reinit, "Shadow-zone reinitialisation passes")
      ->capture_default_str()
      ->envname("JMM_REINIT_PASSES");
  conv->add_option("--jobs", conv_jobs, "Threads for sibling branch solves")->capture_default_str()->envname("JMM_JOBS");
  conv->add_option("--out", conv_out, "Output CSV path, - for stdout")->capture_default_str();

  // slice
  std::vector<std::string> slice_files;
  std::string plane_s, res_s, field, slice_out = "-";
  double omega = kNaN;
  auto* slice = app.add_subcommand("slice", "Sample a branch field on a uniform grid in an axis-aligned plane");
  slice->add_option("--branch", slice_files, "Branch file (repeat for --field u to superpose several)")->required();
  slice->add_option("--plane", plane_s, "Plane x=V, y=V or z=V")->required();
  slice->add_option("--res", res_s, "Grid resolution NxM")->required();
  slice->add_option("--field", field, "T, gradT, A, org or u")->required();
  slice->add_option("--omega", omega, "Angular frequency, required for --field u")->envname("JMM_OMEGA");
  slice->add_option("--out", slice_out, "Output CSV path, - for stdout")->capture_default_str();

  // wavefront
  std::string wf_file, camera_s, wf_out = "-";
  double tau = kNaN;
  auto* wf = app.add_subcommand("wavefront", "Raycast the tau level set of a branch into OBJ points");
  wf->add_option("--branch", wf_file, "Branch file")->required();
  wf->add_option("--tau", tau, "Level set value")->required();
  wf->add_option("--camera", camera_s, "ox,oy,oz,dx,dy,dz,fov_deg,W,H")->required();
  wf->add_option("--out", wf_out, "Output OBJ path, - for stdout; a .pixels.csv sidecar is written next to files")
      ->capture_default_str();

  // utd
  double n_w = kNaN, k_w = kNaN, beta = kPi / 2, phi_in = kNaN, L = 1.0;
  std::string sweep_s, utd_out = "-";
  auto* utd = app.add_subcommand("utd", "Tabulate the wedge diffraction coefficient over a sweep of phi_out");
  utd->add_option("--n", n_w, "Wedge index (exterior opening n*pi)")->required();
  utd->add_option("--k", k_w, "Wavenumber")->required();
  utd->add_option("--beta", beta, "Angle between the edge and the diffracted ray")->capture_default_str();
  utd->add_option("--phi-in", phi_in, "Incident azimuth")->required();
  utd->add_option("--L", L, "Length parameter")->capture_default_str();
  utd->add_option("--sweep", sweep_s, "phi-out:<start>:<end>:<steps>; bounds may be numbers, pi, <x>pi or npi")
      ->required();
  utd->add_option("--out", utd_out, "Output CSV path, - for stdout")->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.back()->help());
    return kExitFlags;
  }

  try {
    if (solve->parsed())
      return cmd_solve(mesh_spec, src_s, rfac, speed_s, depth, out_dir, reinit, fmt_s, jobs, vtk, out, err);
    if (conv->parsed()) return cmd_converge(case_name, vols_s, conv_rfac, conv_reinit, conv_jobs, conv_out, out);
    if (slice->parsed()) return cmd_slice(slice_files, plane_s, res_s, field, omega, slice_out, out);
    if (wf->parsed()) return cmd_wavefront(wf_file, tau, camera_s, wf_out, out);
    if (utd->parsed()) return cmd_utd(n_w, k_w, beta, phi_in, L, sweep_s, utd_out, out);
  } catch (const FlagError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFlags;
  } catch (const MeshError& e) {
    err << "mesh error: " << e.what() << '\n';
    return kExitMesh;
  } catch (const SolveError& e) {
    err << "solve error: " << e.what() << '\n';
    return kExitSolve;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFlags;
  }
  return kExitFlags;
}

}  // namespace jmm
