#include "klab/error.hpp"
#include "klab/field_io.hpp"
#include "klab/initial.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

using namespace klab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("klab_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

DensityField sample_field() {
  auto space = PositionSpace::circle(1);
  const ModelSpec m = make_model(pendulum_family(1, 1.0, 1.0, 1.0), space, 1.0);
  DensityField f = gaussian_density(PhaseGrid::for_model(m, 16, 24), 1.0, 0.2, 0.3, 0.7);
  f.t = 1.25;
  f.values[3] = 1e-310;  // subnormal
  f.values[4] = 0.1 + 0.2;
  return f;
}

}  // namespace

TEST_CASE("shortest round-trip formatting") {
  for (double x : {0.0, -0.0, 1.0, 0.1 + 0.2, 1e-310, 6.02214076e23, -3.5, std::numeric_limits<double>::max()}) {
    const std::string s = format_double(x);
    CHECK(std::strtod(s.c_str(), nullptr) == x);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(std::nan("")) == "nan");
  CHECK(format_double(INFINITY) == "inf");
  CHECK(format_double(-INFINITY) == "-inf");
}

TEST_CASE("fields round-trip bit-exactly in both formats") {
  const DensityField f = sample_field();
  for (FieldFormat fmt : {FieldFormat::binary, FieldFormat::csv}) {
    const fs::path dir = scratch(fmt == FieldFormat::binary ? "bin" : "csv");
    const auto paths = write_field(dir, "f", "density", f, fmt);
    REQUIRE(paths.size() == 2);
    const FieldFile back = read_field(dir / "f.json");
    CHECK(back.name == "density");
    CHECK(back.field.t == f.t);
    CHECK(back.field.grid == f.grid);
    CHECK(back.field.values == f.values);
    const Json side = read_json(dir / "f.json");
    CHECK(side.at("shape") == Json::array({16, 24}));
    CHECK(side.at("byte_order") == "little");
    CHECK(side.at("timestamp") == 1.25);
    // Same input, same bytes.
    const std::string first = slurp(paths[0]);
    write_field(dir, "f", "density", f, fmt);
    CHECK(slurp(paths[0]) == first);
  }
}

TEST_CASE("binary layout is raw little-endian float64") {
  const fs::path dir = scratch("raw");
  MatrixFile m{"m", 2, 3, {1, 2, 3, 4, 5, 6}, Json::object()};
  write_matrix(dir, "m", m, FieldFormat::binary);
  CHECK(fs::file_size(dir / "m.bin") == 6 * sizeof(double));
  const MatrixFile back = read_matrix(dir / "m.json");
  CHECK(back.rows == 2);
  CHECK(back.cols == 3);
  CHECK(back.values == m.values);
  write_matrix(dir, "c", m, FieldFormat::csv);
  CHECK(slurp(dir / "c.csv") == "1,2,3\n4,5,6\n");
}

TEST_CASE("grid JSON round trip") {
  const PhaseGrid g = sample_field().grid;
  CHECK(grid_from_json(grid_to_json(g)) == g);
  const PhaseGrid line(GridAxis{20, -3.0, 3.0, Boundary::dirichlet_zero}, GridAxis{16, -4.0, 4.0, Boundary::dirichlet_zero});
  CHECK(grid_from_json(grid_to_json(line)) == line);
}

TEST_CASE("CSV writer") {
  const fs::path dir = scratch("writer");
  {
    CsvWriter w(dir / "t.csv", {"t", "x", "tag"});
    w << 0.5 << 3LL << std::string_view("a");
    w.end_row();
    w << 1.0;
    CHECK_THROWS_AS(w.end_row(), Error);
  }
  CHECK(slurp(dir / "t.csv").rfind("t,x,tag\n0.5,3,a\n", 0) == 0);
  {
    CsvWriter w(dir / "u.csv", {"a", "b"});
    w.row({1.0, 0.25});
  }
  CHECK(slurp(dir / "u.csv") == "a,b\n1,0.25\n");
}

TEST_CASE("I/O errors") {
  const fs::path dir = scratch("err");
  fs::create_directories(dir / "blocker");
  std::ofstream(dir / "file") << "x";
  try {
    write_json(dir / "file" / "sub.json", Json::object());
    FAIL("write under a regular file succeeded");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::io);
  }
  CHECK_THROWS_AS(read_json(dir / "missing.json"), Error);
  CHECK_THROWS_AS(read_field(dir / "missing.json"), Error);
  CHECK_THROWS_AS(CsvWriter(dir / "file" / "x.csv", {"a"}), Error);
}
