#pragma once

#include "klab/grid.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace klab {

using Json = nlohmann::json;

enum class FieldFormat { binary, csv };

// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

// Row-major matrix of doubles with a JSON sidecar. Binary files hold raw
// little-endian float64 values; CSV files hold one matrix row per line.
struct MatrixFile {
  std::string name;
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;
  Json meta;  // extra sidecar entries
};

// Writes <dir>/<stem>.bin or .csv and <dir>/<stem>.json; returns the paths.
std::vector<std::filesystem::path> write_matrix(const std::filesystem::path& dir, const std::string& stem,
                                                const MatrixFile& m, FieldFormat format);
MatrixFile read_matrix(const std::filesystem::path& sidecar);

Json grid_to_json(const PhaseGrid& grid);
PhaseGrid grid_from_json(const Json& j);

// Density field dump: sidecar carries the grid, the field name and the
// simulation time under "timestamp".
std::vector<std::filesystem::path> write_field(const std::filesystem::path& dir, const std::string& stem,
                                               const std::string& name, const DensityField& f, FieldFormat format);
struct FieldFile {
  std::string name;
  DensityField field;
};
FieldFile read_field(const std::filesystem::path& sidecar);

// Pretty JSON with a trailing newline.
void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> header);

  CsvWriter& operator<<(double x);
  CsvWriter& operator<<(long long x);
  CsvWriter& operator<<(std::string_view s);
  void row(std::initializer_list<double> xs);
  void end_row();

 private:
  void cell(std::string_view text);

  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t columns_ = 0;
  std::size_t filled_ = 0;
};

}  // namespace klab
