#pragma once

#include "jmm/scatter.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace jmm {

// Shortest round-trip decimal, '.' separator, no locale; "nan", "inf", "-inf"
// for non-finite values.
std::string format_double(double x);

// RFC-4180 style CSV with a header row and '\n' line endings.
class CsvWriter {
 public:
  CsvWriter(std::ostream& os, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void row(std::span<const double> values);
  std::size_t columns() const { return ncol_; }

  static std::string quote(const std::string& cell);

 private:
  std::ostream& os_;
  std::size_t ncol_;
};

struct PointField {
  std::string name;
  std::vector<double> values;  // one per vertex
};

// Legacy VTK ASCII 3.0 unstructured grid with POINT_DATA scalars.
void write_vtk(std::ostream& os, const MeshTopo& mesh, const std::vector<PointField>& fields,
               const std::string& title = "jmm");

// One "v x y z" line per point after a header comment.
void write_obj(std::ostream& os, std::span<const Vec3> points, const std::string& comment);

enum class BranchFormat { Json, Binary };

// Metadata stored with every serialized branch. The mesh is identified by
// the mesh spec string it was built from and its hash; readers rebuild it.
struct BranchHeader {
  std::string mesh_spec;
  std::uint64_t mesh_hash = 0;
  int num_verts = 0;
  int id = 0;
  int parent = -1;
  int depth = 0;
  std::string label;
};

void write_branch(std::ostream& os, const Branch& b, const BranchHeader& h, BranchFormat fmt);
std::string branch_bytes(const Branch& b, const BranchHeader& h, BranchFormat fmt);

// Detects the format from the leading bytes.
BranchHeader read_branch_header(std::istream& is);
// The stream must be positioned at the start of the file. Throws
// std::runtime_error on malformed input or a mesh mismatch.
Branch read_branch(std::istream& is, const MeshTopo& mesh, const BoundaryLabels& labels);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& data);

}  // namespace jmm
