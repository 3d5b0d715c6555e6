#include "klab/field_io.hpp"

#include "klab/error.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

namespace klab {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  return out;
}

void check_written(std::ostream& out, const fs::path& path) {
  out.flush();
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

double parse_double(std::string_view s, const fs::path& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorKind::io, "bad number '" + std::string(s) + "' in " + where.string());
  return x;
}

Json axis_to_json(const GridAxis& a) {
  return Json{{"n", a.n},
              {"lo", a.lo},
              {"hi", a.hi},
              {"boundary", a.boundary == Boundary::periodic ? "periodic" : "dirichlet_zero"}};
}

GridAxis axis_from_json(const Json& j) {
  GridAxis a;
  a.n = j.at("n").get<int>();
  a.lo = j.at("lo").get<double>();
  a.hi = j.at("hi").get<double>();
  const auto b = j.at("boundary").get<std::string>();
  if (b == "periodic")
    a.boundary = Boundary::periodic;
  else if (b == "dirichlet_zero")
    a.boundary = Boundary::dirichlet_zero;
  else
    throw Error(ErrorKind::io, "unknown boundary '" + b + "'");
  return a;
}

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  (void)ec;
  return std::string(buf, ptr);
}

std::vector<fs::path> write_matrix(const fs::path& dir, const std::string& stem, const MatrixFile& m,
                                   FieldFormat format) {
  if (m.values.size() != m.rows * m.cols) throw Error(ErrorKind::io, "matrix size does not match its shape");
  std::error_code ec;
  const fs::path parent = (dir / stem).parent_path();
  fs::create_directories(parent, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + parent.string() + ": " + ec.message());
  const bool bin = format == FieldFormat::binary;
  const fs::path data = dir / (stem + (bin ? ".bin" : ".csv"));
  const fs::path side = dir / (stem + ".json");
  if (bin) {
    auto out = open_out(data, std::ios::out | std::ios::binary);
    if constexpr (std::endian::native == std::endian::little) {
      out.write(reinterpret_cast<const char*>(m.values.data()),
                static_cast<std::streamsize>(m.values.size() * sizeof(double)));
    } else {
      for (double v : m.values) {
        auto u = std::bit_cast<std::uint64_t>(v);
        char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((u >> (8 * k)) & 0xffu);
        out.write(b, 8);
      }
    }
    check_written(out, data);
  } else {
    auto out = open_out(data);
    for (std::size_t r = 0; r < m.rows; ++r) {
      for (std::size_t c = 0; c < m.cols; ++c) {
        if (c) out << ',';
        out << format_double(m.values[r * m.cols + c]);
      }
      out << '\n';
    }
    check_written(out, data);
  }
  Json meta = m.meta.is_object() ? m.meta : Json::object();
  meta["field"] = m.name;
  meta["format"] = bin ? "binary" : "csv";
  meta["dtype"] = "float64";
  meta["byte_order"] = "little";
  meta["shape"] = {m.rows, m.cols};
  meta["data_file"] = data.filename().string();
  write_json(side, meta);
  return {data, side};
}

MatrixFile read_matrix(const fs::path& sidecar) {
  const Json meta = read_json(sidecar);
  MatrixFile m;
  try {
    m.name = meta.at("field").get<std::string>();
    m.rows = meta.at("shape").at(0).get<std::size_t>();
    m.cols = meta.at("shape").at(1).get<std::size_t>();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::io, "bad sidecar " + sidecar.string() + ": " + e.what());
  }
  m.meta = meta;
  const fs::path data = sidecar.parent_path() / meta.at("data_file").get<std::string>();
  const std::size_t count = m.rows * m.cols;
  m.values.resize(count);
  if (meta.at("format") == "binary") {
    std::ifstream in(data, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + data.string());
    std::vector<unsigned char> raw(count * 8);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()) || in.peek() != std::char_traits<char>::eof())
      throw Error(ErrorKind::io, data.string() + " does not hold " + std::to_string(count) + " values");
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t u = 0;
      for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(raw[8 * i + k]) << (8 * k);
      m.values[i] = std::bit_cast<double>(u);
    }
  } else {
    std::ifstream in(data);
    if (!in) throw Error(ErrorKind::io, "cannot open " + data.string());
    std::string line;
    std::size_t r = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (r >= m.rows) throw Error(ErrorKind::io, data.string() + " has too many rows");
      std::size_t c = 0, start = 0;
      while (true) {
        const auto comma = line.find(',', start);
        const auto cellv = std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos
                                                                                            : comma - start);
        if (c >= m.cols) throw Error(ErrorKind::io, data.string() + " has too many columns");
        m.values[r * m.cols + c++] = parse_double(cellv, data);
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      if (c != m.cols) throw Error(ErrorKind::io, data.string() + " has a short row");
      ++r;
    }
    if (r != m.rows) throw Error(ErrorKind::io, data.string() + " has too few rows");
  }
  return m;
}

Json grid_to_json(const PhaseGrid& grid) { return Json{{"q", axis_to_json(grid.q_axis())}, {"p", axis_to_json(grid.p_axis())}}; }

PhaseGrid grid_from_json(const Json& j) { return PhaseGrid(axis_from_json(j.at("q")), axis_from_json(j.at("p"))); }

std::vector<fs::path> write_field(const fs::path& dir, const std::string& stem, const std::string& name,
                                  const DensityField& f, FieldFormat format) {
  MatrixFile m{name, static_cast<std::size_t>(f.grid.nq()), static_cast<std::size_t>(f.grid.np()), f.values, {}};
  m.meta["grid"] = grid_to_json(f.grid);
  m.meta["timestamp"] = f.t;
  return write_matrix(dir, stem, m, format);
}

FieldFile read_field(const fs::path& sidecar) {
  MatrixFile m = read_matrix(sidecar);
  if (!m.meta.contains("grid")) throw Error(ErrorKind::io, sidecar.string() + " has no grid");
  PhaseGrid grid = grid_from_json(m.meta["grid"]);
  if (grid.size() != m.values.size()) throw Error(ErrorKind::io, "field shape does not match its grid");
  return {m.name, DensityField{grid, std::move(m.values), m.meta.value("timestamp", 0.0)}};
}

void write_json(const fs::path& path, const Json& j) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  check_written(out, path);
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::io, path.string() + ": " + e.what());
  }
}

CsvWriter::CsvWriter(const fs::path& path, std::vector<std::string> header) : path_(path), columns_(header.size()) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  out_ = open_out(path);
  for (std::size_t k = 0; k < header.size(); ++k) out_ << (k ? "," : "") << header[k];
  out_ << '\n';
  check_written(out_, path_);
}

void CsvWriter::cell(std::string_view text) {
  if (filled_ == columns_) throw Error(ErrorKind::io, "too many cells in a row of " + path_.string());
  if (filled_) out_ << ',';
  out_ << text;
  ++filled_;
}

CsvWriter& CsvWriter::operator<<(double x) {
  cell(format_double(x));
  return *this;
}

CsvWriter& CsvWriter::operator<<(long long x) {
  cell(std::to_string(x));
  return *this;
}

CsvWriter& CsvWriter::operator<<(std::string_view s) {
  cell(s);
  return *this;
}

void CsvWriter::row(std::initializer_list<double> xs) {
  for (double x : xs) *this << x;
  end_row();
}

void CsvWriter::end_row() {
  if (filled_ != columns_) throw Error(ErrorKind::io, "short row in " + path_.string());
  out_ << '\n';
  filled_ = 0;
  check_written(out_, path_);
}

}  // namespace klab
