#include "jmm/io.hpp"

#include "json.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace jmm {

using nlohmann::json;

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::ostream& os, const std::vector<std::string>& header) : os_(os), ncol_(header.size()) {
  row(header);
}

std::string CsvWriter::quote(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != ncol_) throw std::invalid_argument("csv row width mismatch");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os_ << ',';
    os_ << quote(cells[i]);
  }
  os_ << '\n';
}

void CsvWriter::row(std::span<const double> values) {
  std::vector<std::string> cells;
  cells.reserve(values.size());
  for (double v : values) cells.push_back(format_double(v));
  row(cells);
}

void write_vtk(std::ostream& os, const MeshTopo& mesh, const std::vector<PointField>& fields,
               const std::string& title) {
  os << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << mesh.num_verts() << " double\n";
  for (const Vec3& x : mesh.verts)
    os << format_double(x[0]) << ' ' << format_double(x[1]) << ' ' << format_double(x[2]) << '\n';
  os << "CELLS " << mesh.num_cells() << ' ' << 5 * mesh.num_cells() << '\n';
  for (const auto& c : mesh.cells) os << "4 " << c[0] << ' ' << c[1] << ' ' << c[2] << ' ' << c[3] << '\n';
  os << "CELL_TYPES " << mesh.num_cells() << '\n';
  for (int i = 0; i < mesh.num_cells(); ++i) os << "10\n";
  if (fields.empty()) return;
  os << "POINT_DATA " << mesh.num_verts() << '\n';
  for (const auto& f : fields) {
    if (static_cast<int>(f.values.size()) != mesh.num_verts())
      throw std::invalid_argument("vtk field '" + f.name + "' has the wrong length");
    os << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
    for (double v : f.values) os << format_double(v) << '\n';
  }
}

void write_obj(std::ostream& os, std::span<const Vec3> points, const std::string& comment) {
  os << "# " << comment << '\n';
  for (const Vec3& x : points)
    os << "v " << format_double(x[0]) << ' ' << format_double(x[1]) << ' ' << format_double(x[2]) << '\n';
}

namespace {

constexpr char kMagic[8] = {'J', 'M', 'M', 'B', 'R', 'A', 'N', '1'};

// Both formats share one flat column layout.
struct Columns {
  std::vector<std::pair<std::string, std::vector<double>>> d;
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> i;
};

template <class F>
std::vector<double> gather(int n, int width, F&& f) {
  std::vector<double> out(static_cast<std::size_t>(n) * width);
  for (int v = 0; v < n; ++v)
    for (int k = 0; k < width; ++k) out[static_cast<std::size_t>(v) * width + k] = f(v, k);
  return out;
}

template <class F>
std::vector<std::int64_t> gather_i(int n, int width, F&& f) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(n) * width);
  for (int v = 0; v < n; ++v)
    for (int k = 0; k < width; ++k) out[static_cast<std::size_t>(v) * width + k] = f(v, k);
  return out;
}

Columns to_columns(const Branch& b) {
  const int n = b.n();
  Columns c;
  c.d.emplace_back("T", gather(n, 1, [&](int v, int) { return b.jets[v].T; }));
  c.d.emplace_back("grad", gather(n, 3, [&](int v, int k) { return b.jets[v].grad[k]; }));
  c.d.emplace_back("hess", gather(n, 9, [&](int v, int k) { return b.jets[v].hess(k / 3, k % 3); }));
  c.d.emplace_back("org", gather(n, 1, [&](int v, int) { return b.org[v]; }));
  c.d.emplace_back("amp", gather(n, 2, [&](int v, int k) { return k ? b.amp[v].imag() : b.amp[v].real(); }));
  c.d.emplace_back("t_in", gather(n, 3, [&](int v, int k) { return b.t_in[v][k]; }));
  c.d.emplace_back("t_out", gather(n, 3, [&](int v, int k) { return b.t_out[v][k]; }));
  c.d.emplace_back("T_e", gather(n, 1, [&](int v, int) { return b.T_e[v]; }));
  c.d.emplace_back("x_e", gather(n, 3, [&](int v, int k) { return b.x_e[v][k]; }));
  c.d.emplace_back("tang", gather(n, 1, [&](int v, int) { return b.tang[v]; }));
  c.d.emplace_back("plan_lam", gather(n, 3, [&](int v, int k) { return b.plan.lam[v][k]; }));
  c.i.emplace_back("grad_defined", gather_i(n, 1, [&](int v, int) { return b.jets[v].grad_defined; }));
  c.i.emplace_back("hess_defined", gather_i(n, 1, [&](int v, int) { return b.jets[v].hess_defined; }));
  c.i.emplace_back("state", gather_i(n, 1, [&](int v, int) { return static_cast<int>(b.state[v]); }));
  c.i.emplace_back("amp_defined", gather_i(n, 1, [&](int v, int) { return b.amp_defined[v]; }));
  c.i.emplace_back("is_bc", gather_i(n, 1, [&](int v, int) { return b.is_bc[v]; }));
  c.i.emplace_back("frozen", gather_i(n, 1, [&](int v, int) { return b.frozen[v]; }));
  c.i.emplace_back("tube", gather_i(n, 1, [&](int v, int) { return static_cast<int>(b.tube[v]); }));
  c.i.emplace_back("plan_kind", gather_i(n, 1, [&](int v, int) { return static_cast<int>(b.plan.kind[v]); }));
  c.i.emplace_back("plan_parents", gather_i(n, 3, [&](int v, int k) { return b.plan.parents[v][k]; }));
  c.i.emplace_back("order", std::vector<std::int64_t>(b.plan.order.begin(), b.plan.order.end()));
  return c;
}

const std::vector<double>& col_d(const Columns& c, const std::string& name, std::size_t len) {
  for (const auto& [k, v] : c.d)
    if (k == name) {
      if (v.size() != len) throw std::runtime_error("branch column '" + name + "' has the wrong length");
      return v;
    }
  throw std::runtime_error("branch column '" + name + "' missing");
}

const std::vector<std::int64_t>& col_i(const Columns& c, const std::string& name, std::size_t len) {
  for (const auto& [k, v] : c.i)
    if (k == name) {
      if (len != std::size_t(-1) && v.size() != len)
        throw std::runtime_error("branch column '" + name + "' has the wrong length");
      return v;
    }
  throw std::runtime_error("branch column '" + name + "' missing");
}

void from_columns(Branch& b, const Columns& c) {
  const std::size_t n = b.n();
  const auto& T = col_d(c, "T", n);
  const auto& g = col_d(c, "grad", 3 * n);
  const auto& H = col_d(c, "hess", 9 * n);
  const auto& org = col_d(c, "org", n);
  const auto& amp = col_d(c, "amp", 2 * n);
  const auto& tin = col_d(c, "t_in", 3 * n);
  const auto& tout = col_d(c, "t_out", 3 * n);
  const auto& Te = col_d(c, "T_e", n);
  const auto& xe = col_d(c, "x_e", 3 * n);
  const auto& tang = col_d(c, "tang", n);
  const auto& lam = col_d(c, "plan_lam", 3 * n);
  const auto& gd = col_i(c, "grad_defined", n);
  const auto& hd = col_i(c, "hess_defined", n);
  const auto& st = col_i(c, "state", n);
  const auto& ad = col_i(c, "amp_defined", n);
  const auto& bc = col_i(c, "is_bc", n);
  const auto& fr = col_i(c, "frozen", n);
  const auto& tube = col_i(c, "tube", n);
  const auto& pk = col_i(c, "plan_kind", n);
  const auto& pp = col_i(c, "plan_parents", 3 * n);
  const auto& order = col_i(c, "order", std::size_t(-1));
  for (std::size_t v = 0; v < n; ++v) {
    Jet& j = b.jets[v];
    j.T = T[v];
    for (int k = 0; k < 3; ++k) {
      j.grad[k] = g[3 * v + k];
      b.t_in[v][k] = tin[3 * v + k];
      b.t_out[v][k] = tout[3 * v + k];
      b.x_e[v][k] = xe[3 * v + k];
      b.plan.lam[v][k] = lam[3 * v + k];
      b.plan.parents[v][k] = static_cast<int>(pp[3 * v + k]);
    }
    for (int k = 0; k < 9; ++k) j.hess(k / 3, k % 3) = H[9 * v + k];
    j.grad_defined = gd[v] != 0;
    j.hess_defined = hd[v] != 0;
    b.org[v] = org[v];
    b.amp[v] = {amp[2 * v], amp[2 * v + 1]};
    b.amp_defined[v] = static_cast<uint8_t>(ad[v]);
    b.T_e[v] = Te[v];
    b.tang[v] = tang[v];
    b.state[v] = static_cast<NodeState>(st[v]);
    b.is_bc[v] = static_cast<uint8_t>(bc[v]);
    b.frozen[v] = static_cast<uint8_t>(fr[v]);
    b.tube[v] = static_cast<TubeKind>(tube[v]);
    b.plan.kind[v] = static_cast<PlanKind>(pk[v]);
  }
  b.plan.order.clear();
  for (std::size_t i = 0; i < order.size(); ++i) {
    int v = static_cast<int>(order[i]);
    if (v < 0 || v >= b.n()) throw std::runtime_error("branch order entry out of range");
    b.plan.order.push_back(v);
    b.plan.accept_order[v] = static_cast<int>(i);
  }
}

// Non-finite doubles travel as strings in JSON.
json jnum(double x) {
  if (std::isfinite(x)) return x;
  return format_double(x);
}

double from_jnum(const json& j) {
  if (j.is_number()) return j.get<double>();
  std::string s = j.get<std::string>();
  if (s == "nan") return kNaN;
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  throw std::runtime_error("bad number '" + s + "'");
}

json header_json(const Branch& b, const BranchHeader& h) {
  json j;
  j["format"] = "jmm-branch";
  j["version"] = 1;
  j["mesh_spec"] = h.mesh_spec;
  j["mesh_hash"] = std::to_string(h.mesh_hash);
  j["num_verts"] = b.n();
  j["id"] = h.id;
  j["parent"] = h.parent;
  j["depth"] = h.depth;
  j["label"] = h.label;
  const char* kinds[] = {"point_source", "reflection", "diffraction"};
  j["bc"] = {{"kind", kinds[static_cast<int>(b.bc.kind)]},
             {"src_vertex", b.bc.src_vertex},
             {"src", {jnum(b.bc.src[0]), jnum(b.bc.src[1]), jnum(b.bc.src[2])}},
             {"facet", b.bc.facet},
             {"chain", b.bc.chain},
             {"parent", b.bc.parent},
             {"r_fac", jnum(b.bc.r_fac)}};
  j["speed"] = {{"kind", b.speed.kind == SpeedModel::Kind::Constant ? "constant" : "linear"},
                {"c0", jnum(b.speed.c0)},
                {"v", {jnum(b.speed.v[0]), jnum(b.speed.v[1]), jnum(b.speed.v[2])}},
                {"origin", {jnum(b.speed.origin[0]), jnum(b.speed.origin[1]), jnum(b.speed.origin[2])}}};
  j["reinit_passes_done"] = b.reinit_passes_done;
  const MarchStats& s = b.stats;
  j["stats"] = {{"tetra_updates", s.tetra_updates},   {"tri_updates", s.tri_updates},
                {"rejected", s.rejected},             {"cached", s.cached},
                {"edge_matches", s.edge_matches},     {"vertex_matches", s.vertex_matches},
                {"fallback_commits", s.fallback_commits}, {"line_rescues", s.line_rescues},
                {"order_violations", s.order_violations}, {"invariant_violations", s.invariant_violations},
                {"max_cache_entries", s.max_cache_entries}, {"caches_empty_at_end", s.caches_empty_at_end}};
  return j;
}

BranchHeader header_from_json(const json& j) {
  if (j.value("format", "") != "jmm-branch") throw std::runtime_error("not a branch file");
  BranchHeader h;
  h.mesh_spec = j.at("mesh_spec").get<std::string>();
  h.mesh_hash = std::stoull(j.at("mesh_hash").get<std::string>());
  h.num_verts = j.at("num_verts").get<int>();
  h.id = j.at("id").get<int>();
  h.parent = j.at("parent").get<int>();
  h.depth = j.at("depth").get<int>();
  h.label = j.at("label").get<std::string>();
  return h;
}

void apply_meta(Branch& b, const json& j) {
  const json& bc = j.at("bc");
  std::string k = bc.at("kind").get<std::string>();
  b.bc.kind = k == "reflection"    ? BcDescriptor::Kind::Reflection
              : k == "diffraction" ? BcDescriptor::Kind::Diffraction
                                   : BcDescriptor::Kind::PointSource;
  b.bc.src_vertex = bc.at("src_vertex").get<int>();
  for (int i = 0; i < 3; ++i) b.bc.src[i] = from_jnum(bc.at("src")[i]);
  b.bc.facet = bc.at("facet").get<int>();
  b.bc.chain = bc.at("chain").get<int>();
  b.bc.parent = bc.at("parent").get<int>();
  b.bc.r_fac = from_jnum(bc.at("r_fac"));
  const json& sp = j.at("speed");
  b.speed.kind = sp.at("kind").get<std::string>() == "linear" ? SpeedModel::Kind::Linear : SpeedModel::Kind::Constant;
  b.speed.c0 = from_jnum(sp.at("c0"));
  for (int i = 0; i < 3; ++i) {
    b.speed.v[i] = from_jnum(sp.at("v")[i]);
    b.speed.origin[i] = from_jnum(sp.at("origin")[i]);
  }
  b.reinit_passes_done = j.at("reinit_passes_done").get<int>();
  const json& s = j.at("stats");
  MarchStats& m = b.stats;
  m.tetra_updates = s.at("tetra_updates");
  m.tri_updates = s.at("tri_updates");
  m.rejected = s.at("rejected");
  m.cached = s.at("cached");
  m.edge_matches = s.at("edge_matches");
  m.vertex_matches = s.at("vertex_matches");
  m.fallback_commits = s.at("fallback_commits");
  m.line_rescues = s.at("line_rescues");
  m.order_violations = s.at("order_violations");
  m.invariant_violations = s.at("invariant_violations");
  m.max_cache_entries = s.at("max_cache_entries");
  m.caches_empty_at_end = s.at("caches_empty_at_end");
}

template <class T>
void put_le(std::string& out, T x) {
  static_assert(sizeof(T) == 8);
  std::uint64_t u;
  std::memcpy(&u, &x, 8);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
  char buf[8];
  std::memcpy(buf, &u, 8);
  out.append(buf, 8);
}

template <class T>
T get_le(std::istream& is) {
  char buf[8];
  if (!is.read(buf, 8)) throw std::runtime_error("truncated branch file");
  std::uint64_t u;
  std::memcpy(&u, buf, 8);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
  T x;
  std::memcpy(&x, &u, 8);
  return x;
}

struct Parsed {
  json meta;
  Columns cols;
};

Parsed parse(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  Parsed p;
  if (is.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0) {
    auto len = get_le<std::uint64_t>(is);
    std::string meta(len, '\0');
    if (!is.read(meta.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("truncated branch file");
    p.meta = json::parse(meta);
    for (const auto& c : p.meta.at("double_columns")) {
      std::vector<double> v(c.at("len").get<std::size_t>());
      for (auto& x : v) x = get_le<double>(is);
      p.cols.d.emplace_back(c.at("name").get<std::string>(), std::move(v));
    }
    for (const auto& c : p.meta.at("int_columns")) {
      std::vector<std::int64_t> v(c.at("len").get<std::size_t>());
      for (auto& x : v) x = get_le<std::int64_t>(is);
      p.cols.i.emplace_back(c.at("name").get<std::string>(), std::move(v));
    }
    return p;
  }
  is.clear();
  is.seekg(0);
  json j = json::parse(is);
  p.meta = j.at("meta");
  for (const auto& [name, arr] : j.at("doubles").items()) {
    std::vector<double> v;
    v.reserve(arr.size());
    for (const auto& x : arr) v.push_back(from_jnum(x));
    p.cols.d.emplace_back(name, std::move(v));
  }
  for (const auto& [name, arr] : j.at("ints").items()) p.cols.i.emplace_back(name, arr.get<std::vector<std::int64_t>>());
  return p;
}

}  // namespace

std::string branch_bytes(const Branch& b, const BranchHeader& h, BranchFormat fmt) {
  json meta = header_json(b, h);
  Columns cols = to_columns(b);
  if (fmt == BranchFormat::Json) {
    json doubles = json::object(), ints = json::object();
    for (const auto& [name, v] : cols.d) {
      json arr = json::array();
      for (double x : v) arr.push_back(jnum(x));
      doubles[name] = std::move(arr);
    }
    for (const auto& [name, v] : cols.i) ints[name] = v;
    json j = {{"meta", meta}, {"doubles", doubles}, {"ints", ints}};
    return j.dump() + "\n";
  }
  json dc = json::array(), ic = json::array();
  for (const auto& [name, v] : cols.d) dc.push_back({{"name", name}, {"len", v.size()}});
  for (const auto& [name, v] : cols.i) ic.push_back({{"name", name}, {"len", v.size()}});
  meta["double_columns"] = dc;
  meta["int_columns"] = ic;
  std::string m = meta.dump();
  std::string out(kMagic, 8);
  put_le<std::uint64_t>(out, m.size());
  out += m;
  for (const auto& [name, v] : cols.d)
    for (double x : v) put_le(out, x);
  for (const auto& [name, v] : cols.i)
    for (std::int64_t x : v) put_le(out, x);
  return out;
}

void write_branch(std::ostream& os, const Branch& b, const BranchHeader& h, BranchFormat fmt) {
  std::string s = branch_bytes(b, h, fmt);
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

BranchHeader read_branch_header(std::istream& is) {
  auto pos = is.tellg();
  Parsed p = parse(is);
  is.clear();
  is.seekg(pos);
  return header_from_json(p.meta);
}

Branch read_branch(std::istream& is, const MeshTopo& mesh, const BoundaryLabels& labels) {
  Parsed p = parse(is);
  BranchHeader h = header_from_json(p.meta);
  if (h.num_verts != mesh.num_verts() || h.mesh_hash != mesh_hash(mesh))
    throw std::runtime_error("branch file does not match the mesh");
  Branch b = make_branch(mesh, labels, SpeedModel{});
  apply_meta(b, p.meta);
  from_columns(b, p.cols);
  return b;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace jmm
