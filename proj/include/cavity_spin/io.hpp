#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cavity_spin/diagnostics.hpp"
#include "cavity_spin/dynamics.hpp"
#include "cavity_spin/errors.hpp"
#include "cavity_spin/grid.hpp"
#include "cavity_spin/state.hpp"

namespace cavity_spin {

// ---------------------------------------------------------------- numbers

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("not a number: '" + std::string(s) + "'");
  return x;
}

// ---------------------------------------------------------------- time series

inline const std::vector<std::string>& timeseries_columns() {
  static const std::vector<std::string> cols = {
      "t",       "mass",    "energy",  "dissipation_rate", "M_norm",     "omega_x",       "omega_y",      "omega_z",
      "xi_x",    "xi_y",    "xi_z",    "v_l2",             "rho_dev_l2", "constraint_xi", "constraint_M", "rel_entropy"};
  return cols;
}

inline std::string timeseries_header() {
  std::string h;
  for (const auto& c : timeseries_columns()) {
    if (!h.empty()) h += ',';
    h += c;
  }
  return h + '\n';
}

inline std::string timeseries_row(const DiagnosticsSample& s) {
  const double vals[] = {s.t,        s.mass,     s.energy,   s.dissipation_rate, s.M_norm,
                         s.omega[0], s.omega[1], s.omega[2], s.xi[0],            s.xi[1],
                         s.xi[2],    s.v_l2,     s.rho_dev_l2, s.constraint_xi, s.constraint_M};
  std::string row;
  for (double v : vals) {
    row += format_double(v);
    row += ',';
  }
  if (s.rel_entropy) row += format_double(*s.rel_entropy);
  row += '\n';
  return row;
}

inline DiagnosticsSample parse_timeseries_row(std::string_view line) {
  std::vector<std::string_view> f;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    f.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (f.size() != timeseries_columns().size())
    throw FormatError("time series row has " + std::to_string(f.size()) + " fields, expected " +
                      std::to_string(timeseries_columns().size()));
  DiagnosticsSample s;
  s.t = parse_double(f[0]);
  s.mass = parse_double(f[1]);
  s.energy = parse_double(f[2]);
  s.dissipation_rate = parse_double(f[3]);
  s.M_norm = parse_double(f[4]);
  for (int a = 0; a < 3; ++a) s.omega[a] = parse_double(f[5 + a]);
  for (int a = 0; a < 3; ++a) s.xi[a] = parse_double(f[8 + a]);
  s.v_l2 = parse_double(f[11]);
  s.rho_dev_l2 = parse_double(f[12]);
  s.constraint_xi = parse_double(f[13]);
  s.constraint_M = parse_double(f[14]);
  if (!f[15].empty()) s.rel_entropy = parse_double(f[15]);
  return s;
}

inline std::vector<DiagnosticsSample> read_timeseries(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open time series " + path.string());
  std::string line;
  if (!std::getline(in, line) || line + '\n' != timeseries_header())
    throw FormatError("time series " + path.string() + " has an unexpected header");
  std::vector<DiagnosticsSample> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(parse_timeseries_row(line));
  return rows;
}

/// Appends CSV rows, one complete row per write. If a write fails the file is cut
/// back to the last complete row and IoError is thrown.
class TimeSeriesWriter {
 public:
  /// `resume_after`: keep existing rows with t <= that time (restart), else start fresh.
  explicit TimeSeriesWriter(std::filesystem::path path, std::optional<double> resume_after = std::nullopt)
      : path_(std::move(path)) {
    if (resume_after && std::filesystem::exists(path_)) {
      const auto rows = read_timeseries(path_);
      std::string keep = timeseries_header();
      for (const auto& r : rows)
        if (r.t <= *resume_after) keep += timeseries_row(r);
      std::ofstream out(path_, std::ios::binary | std::ios::trunc);
      out << keep;
      if (!out) throw IoError("cannot rewrite time series " + path_.string());
      bytes_ = keep.size();
      return;
    }
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    const std::string h = timeseries_header();
    out << h;
    if (!out) throw IoError("cannot create time series " + path_.string());
    bytes_ = h.size();
  }

  /// Test hook: writes beyond this many bytes fail part-way through.
  void set_byte_limit(std::size_t limit) { limit_ = limit; }

  void write(const DiagnosticsSample& s) {
    const std::string row = timeseries_row(s);
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to " + path_.string());
    if (bytes_ + row.size() > limit_) {
      // emulate a short write, then roll back to the last complete row
      out.write(row.data(), static_cast<std::streamsize>(limit_ > bytes_ ? limit_ - bytes_ : 0));
      out.close();
      std::filesystem::resize_file(path_, bytes_);
      throw IoError("write failed on " + path_.string() + " after " + std::to_string(rows_) + " rows");
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::resize_file(path_, bytes_);
      throw IoError("write failed on " + path_.string());
    }
    bytes_ += row.size();
    ++rows_;
  }

  std::size_t rows() const { return rows_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::size_t bytes_ = 0;
  std::size_t rows_ = 0;
  std::size_t limit_ = std::numeric_limits<std::size_t>::max();
};

// ---------------------------------------------------------------- binary

namespace detail {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    v = to_little(v);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& buf, std::string what) : buf_(buf), what_(std::move(what)) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > buf_.size()) throw FormatError(what_ + " is truncated");
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  const std::vector<char>& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline void put_fields(ByteWriter& w, const FluidField& f) {
  for (double r : f.rho) w.put(r);
  for (int a = 0; a < 3; ++a)
    for (const Vec3& q : f.q) w.put(q[a]);
}

inline FluidField get_fields(ByteReader& r, std::size_t cells) {
  FluidField f(cells);
  for (double& x : f.rho) x = r.get<double>();
  for (int a = 0; a < 3; ++a)
    for (Vec3& q : f.q) q[a] = r.get<double>();
  return f;
}

inline std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Write to a sibling temporary, then rename over the target.
inline void write_atomically(const std::filesystem::path& path, const std::vector<char>& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'C', 'S', 'P', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::array<int, 3> dims{};
  CoupledState state;  ///< omega and xi are not stored; recover them after reading
  RunStatus status;
};

/// Layout, little-endian: "CSPN", u32 version, u64 config hash, u32 x3 dims, f64 t,
/// f64 x3 M, f64 dissipation, u64 floor hits, u64 steps, then rho, q_x, q_y, q_z
/// blocks of f64, each x-fastest.
inline void checkpoint_write(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::size_t cells = static_cast<std::size_t>(ck.dims[0]) * ck.dims[1] * ck.dims[2];
  if (ck.state.fluid.size() != cells) throw DomainError("checkpoint fields do not match dims");
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.put(kCheckpointVersion);
  w.put(ck.config_hash);
  for (int a = 0; a < 3; ++a) w.put(static_cast<std::uint32_t>(ck.dims[a]));
  w.put(ck.state.t);
  for (int a = 0; a < 3; ++a) w.put(ck.state.M[a]);
  w.put(ck.status.dissipation);
  w.put(ck.status.floor_hits);
  w.put(ck.status.steps);
  detail::put_fields(w, ck.state.fluid);
  detail::write_atomically(path, w.bytes());
}

/// Reads a checkpoint; a non-empty expected hash must match.
inline Checkpoint checkpoint_read(const std::filesystem::path& path,
                                  std::optional<std::uint64_t> expected_hash = std::nullopt) {
  const std::vector<char> bytes = detail::slurp(path);
  const std::string what = "checkpoint " + path.string();
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError(what + " does not start with the CSPN magic bytes");
  detail::ByteReader r(bytes, what);
  r.get<std::uint32_t>();  // magic
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(what + " has format version " + std::to_string(version) + ", this build reads " +
                      std::to_string(kCheckpointVersion));
  Checkpoint ck;
  ck.config_hash = r.get<std::uint64_t>();
  if (expected_hash && ck.config_hash != *expected_hash)
    throw FormatError(what + " was written for a different configuration (hash mismatch)");
  for (int a = 0; a < 3; ++a) ck.dims[a] = static_cast<int>(r.get<std::uint32_t>());
  ck.state.t = r.get<double>();
  for (int a = 0; a < 3; ++a) ck.state.M[a] = r.get<double>();
  ck.status.dissipation = r.get<double>();
  ck.status.floor_hits = r.get<std::uint64_t>();
  ck.status.steps = r.get<std::uint64_t>();
  const std::size_t cells = static_cast<std::size_t>(ck.dims[0]) * ck.dims[1] * ck.dims[2];
  if (r.remaining() != cells * 4 * sizeof(double))
    throw FormatError(what + " is truncated or has trailing bytes");
  ck.state.fluid = detail::get_fields(r, cells);
  return ck;
}

enum class SnapshotFormat { csv, raw };

/// csv: one row per cell (i, j, k, x, y, z, rho, ux, uy, uz, vx, vy, vz).
/// raw: the checkpoint field blocks only.
inline void snapshot_export(const CoupledState& s, const CavityGrid& grid, const std::filesystem::path& path,
                            SnapshotFormat format) {
  if (format == SnapshotFormat::raw) {
    detail::ByteWriter w;
    detail::put_fields(w, s.fluid);
    detail::write_atomically(path, w.bytes());
    return;
  }
  std::string out = "i,j,k,x,y,z,rho,ux,uy,uz,vx,vy,vz\n";
  for (std::size_t c = 0; c < s.fluid.size(); ++c) {
    const auto ijk = grid.unravel(c);
    const Vec3 x = grid.center(c);
    const double r = s.fluid.rho[c];
    const Vec3 u = r > 0.0 ? s.fluid.q[c] / r : Vec3{};
    const Vec3 v = relative_velocity(u, x, s.omega, s.xi);
    out += std::to_string(ijk[0]) + ',' + std::to_string(ijk[1]) + ',' + std::to_string(ijk[2]);
    for (double val : {x[0], x[1], x[2], r, u[0], u[1], u[2], v[0], v[1], v[2]}) {
      out += ',';
      out += format_double(val);
    }
    out += '\n';
  }
  detail::write_atomically(path, std::vector<char>(out.begin(), out.end()));
}

inline FluidField snapshot_read_raw(const std::filesystem::path& path, const CavityGrid& grid) {
  const std::vector<char> bytes = detail::slurp(path);
  const std::size_t cells = grid.cell_count();
  if (bytes.size() != cells * 4 * sizeof(double))
    throw FormatError("raw snapshot " + path.string() + " does not match the grid size");
  detail::ByteReader r(bytes, "raw snapshot " + path.string());
  return detail::get_fields(r, cells);
}

}  // namespace cavity_spin
