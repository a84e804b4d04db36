#pragma once

// File formats.
//
// CSV: header row, comma separated, '.' decimal point, numbers printed with
// 12 significant digits ("%.12g"). Identical inputs give identical bytes.
//
// Text format for binned samples and parameters, one record per line,
// '#' starts a comment line:
//
//   histmix-sample 1
//   partition regular <M>              | partition breakpoints <t0> ... <tM>
//   cells <N>
//   <m1> <m2> <m3>                     (N lines, one per observation)
//
//   histmix-params 1
//   partition ...
//   repeated <0|1>
//   theta <theta_1> ... <theta_k>
//   omega <j> <c> <w_1> ... <w_M>      (k*3 lines, j and c zero-based)
//
// Doubles in the text format use "%.17g", so a round trip is exact.
//
// Every CLI output file has a sidecar "<file>.meta.json" with the tool
// version, the command, the full resolved configuration, its FNV-1a hash
// and the seed.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "histmix/em.hpp"
#include "histmix/error.hpp"
#include "histmix/fisher.hpp"
#include "histmix/model.hpp"
#include "histmix/partition.hpp"

#ifndef HISTMIX_VERSION
#define HISTMIX_VERSION "0.0.0"
#endif

namespace histmix {

inline constexpr const char* version = HISTMIX_VERSION;

inline std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

inline std::string format_exact(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Accumulates a CSV document in memory.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : columns_(header.size()) { add_row(header); }

  CsvTable& row() {
    if (open_ > 0) finish_row();
    open_ = 0;
    in_row_ = true;
    return *this;
  }
  CsvTable& cell(const std::string& s) {
    if (!in_row_) fail(ErrorKind::usage, "csv cell outside a row");
    if (open_ > 0) text_ += ',';
    text_ += s;
    ++open_;
    return *this;
  }
  CsvTable& cell(double x) { return cell(format_number(x)); }
  CsvTable& cell(std::size_t x) { return cell(std::to_string(x)); }
  CsvTable& cell(int x) { return cell(std::to_string(x)); }

  std::string str() {
    if (in_row_) finish_row();
    return text_;
  }

 private:
  void add_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }
  void finish_row() {
    if (open_ != columns_)
      fail(ErrorKind::usage, "csv row has " + std::to_string(open_) + " cells, expected " + std::to_string(columns_));
    text_ += '\n';
    in_row_ = false;
    open_ = 0;
  }

  std::size_t columns_;
  std::size_t open_ = 0;
  bool in_row_ = false;
  std::string text_;
};

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::config, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail(ErrorKind::config, "write failed for " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &used);
  } catch (const std::exception&) {
    fail(ErrorKind::data, where + ": '" + s + "' is not a number");
  }
  if (used != s.size()) fail(ErrorKind::data, where + ": '" + s + "' is not a number");
  return x;
}

inline std::uint64_t parse_index(const std::string& s, const std::string& where) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    fail(ErrorKind::data, where + ": '" + s + "' is not a non-negative integer");
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    fail(ErrorKind::data, where + ": '" + s + "' is out of range");
  }
}

// ---- raw observations -------------------------------------------------------

inline std::string points_to_csv(std::span<const Point> points) {
  CsvTable t({"x1", "x2", "x3"});
  for (const auto& p : points) t.row().cell(p[0]).cell(p[1]).cell(p[2]);
  return t.str();
}

inline std::string labels_to_csv(std::span<const std::uint32_t> labels) {
  CsvTable t({"component"});
  for (auto l : labels) t.row().cell(static_cast<std::size_t>(l));
  return t.str();
}

/// Reads an n x 3 CSV of observations. A first line that does not parse as
/// numbers is taken as the header.
inline std::vector<Point> points_from_csv(const std::string& text) {
  std::vector<Point> points;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != n_coords)
      fail(ErrorKind::data, "line " + std::to_string(lineno) + ": expected 3 columns, found " +
                                std::to_string(fields.size()));
    if (lineno == 1) {
      bool header = false;
      try {
        (void)parse_double(fields[0], "");
      } catch (const Error&) {
        header = true;
      }
      if (header) continue;
    }
    Point p{};
    for (std::size_t c = 0; c < n_coords; ++c)
      p[c] = parse_double(fields[c], "line " + std::to_string(lineno));
    points.push_back(p);
  }
  if (points.empty()) fail(ErrorKind::data, "no observations found");
  return points;
}

// ---- text format ------------------------------------------------------------

inline std::string partition_line(const Partition& part) {
  if (part.is_regular()) return "partition regular " + std::to_string(part.size());
  std::string s = "partition breakpoints";
  for (double t : part.breakpoints()) s += " " + format_exact(t);
  return s;
}

namespace detail {

class LineReader {
 public:
  explicit LineReader(const std::string& text) : in_(text) {}

  /// Next non-comment line split on spaces; throws at end of input.
  std::vector<std::string> next(const char* expect) {
    std::string line;
    while (std::getline(in_, line)) {
      ++lineno_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> tok;
      std::istringstream ls(line);
      for (std::string w; ls >> w;) tok.push_back(w);
      if (tok.empty()) continue;
      if (expect && tok[0] != expect) fail(ErrorKind::data, where() + ": expected '" + expect + "'");
      return tok;
    }
    fail(ErrorKind::data, std::string("unexpected end of input, expected '") + (expect ? expect : "record") + "'");
  }

  bool at_end() {
    auto pos = in_.tellg();
    std::string line;
    while (std::getline(in_, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#' || line.find_first_not_of(' ') == std::string::npos) continue;
      in_.clear();
      in_.seekg(pos);
      return false;
    }
    return true;
  }

  std::string where() const { return "line " + std::to_string(lineno_); }

 private:
  std::istringstream in_;
  std::size_t lineno_ = 0;
};

inline Partition read_partition(LineReader& r) {
  const auto tok = r.next("partition");
  if (tok.size() == 3 && tok[1] == "regular") return Partition::regular(parse_index(tok[2], r.where()));
  if (tok.size() >= 4 && tok[1] == "breakpoints") {
    std::vector<double> bp;
    for (std::size_t i = 2; i < tok.size(); ++i) bp.push_back(parse_double(tok[i], r.where()));
    try {
      return Partition::from_breakpoints(std::move(bp));
    } catch (const Error& e) {
      fail(ErrorKind::data, r.where() + ": " + e.what());
    }
  }
  fail(ErrorKind::data, r.where() + ": malformed partition record");
}

inline void expect_header(LineReader& r, const char* magic) {
  const auto tok = r.next(magic);
  if (tok.size() != 2 || tok[1] != "1") fail(ErrorKind::data, r.where() + ": unsupported format version");
}

}  // namespace detail

inline std::string to_text(const BinnedSample& data) {
  std::string s = "histmix-sample 1\n" + partition_line(data.partition) + "\ncells " + std::to_string(data.size()) + "\n";
  for (const auto& cell : data.cells)
    s += std::to_string(cell[0]) + " " + std::to_string(cell[1]) + " " + std::to_string(cell[2]) + "\n";
  return s;
}

inline BinnedSample binned_sample_from_text(const std::string& text) {
  detail::LineReader r(text);
  detail::expect_header(r, "histmix-sample");
  const auto part = detail::read_partition(r);
  const auto head = r.next("cells");
  if (head.size() != 2) fail(ErrorKind::data, r.where() + ": malformed cells record");
  const auto n = parse_index(head[1], r.where());
  std::vector<Cell> cells;
  cells.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto tok = r.next(nullptr);
    if (tok.size() != n_coords) fail(ErrorKind::data, r.where() + ": expected three bin indices");
    Cell cell{};
    for (std::size_t c = 0; c < n_coords; ++c) {
      const auto m = parse_index(tok[c], r.where());
      if (m >= part.size()) fail(ErrorKind::data, r.where() + ": bin index out of range");
      cell[c] = static_cast<std::uint32_t>(m);
    }
    cells.push_back(cell);
  }
  if (!r.at_end()) fail(ErrorKind::data, "trailing records after " + std::to_string(n) + " cells");
  return bin_cells(std::move(cells), part);
}

inline std::string to_text(const MixtureParams& params) {
  std::string s = "histmix-params 1\n" + partition_line(params.partition) + "\nrepeated " +
                  (params.repeated ? "1" : "0") + "\ntheta";
  for (double t : params.theta) s += " " + format_exact(t);
  s += "\n";
  for (std::size_t j = 0; j < params.components(); ++j)
    for (std::size_t c = 0; c < n_coords; ++c) {
      s += "omega " + std::to_string(j) + " " + std::to_string(c);
      for (double w : params.omega.row(j, c)) s += " " + format_exact(w);
      s += "\n";
    }
  return s;
}

inline MixtureParams params_from_text(const std::string& text) {
  detail::LineReader r(text);
  detail::expect_header(r, "histmix-params");
  MixtureParams params;
  params.partition = detail::read_partition(r);
  const auto rep = r.next("repeated");
  if (rep.size() != 2 || (rep[1] != "0" && rep[1] != "1")) fail(ErrorKind::data, r.where() + ": malformed repeated record");
  params.repeated = rep[1] == "1";
  const auto th = r.next("theta");
  if (th.size() < 2) fail(ErrorKind::data, r.where() + ": empty theta record");
  for (std::size_t i = 1; i < th.size(); ++i) params.theta.push_back(parse_double(th[i], r.where()));
  const std::size_t k = params.theta.size(), bins = params.partition.size();
  params.omega = BinMasses(k, bins);
  std::vector<bool> seen(k * n_coords, false);
  for (std::size_t row = 0; row < k * n_coords; ++row) {
    const auto tok = r.next("omega");
    if (tok.size() != 3 + bins) fail(ErrorKind::data, r.where() + ": omega record needs " + std::to_string(bins) + " masses");
    const auto j = parse_index(tok[1], r.where()), c = parse_index(tok[2], r.where());
    if (j >= k || c >= n_coords || seen[j * n_coords + c]) fail(ErrorKind::data, r.where() + ": bad or repeated omega index");
    seen[j * n_coords + c] = true;
    for (std::size_t m = 0; m < bins; ++m) params.omega(j, c, m) = parse_double(tok[3 + m], r.where());
  }
  if (!r.at_end()) fail(ErrorKind::data, "trailing records after the omega block");
  try {
    params.validate();
  } catch (const Error& e) {
    fail(ErrorKind::data, std::string("invalid parameters: ") + e.what());
  }
  return params;
}

// ---- matrices ---------------------------------------------------------------

/// Names of the free score coordinates: theta_j (j < k), then
/// omega_j_c_m (m < M-1), or omega_j_m in the repeated setting. One-based,
/// to read like the usual notation.
inline std::vector<std::string> score_coordinate_names(std::size_t k, std::size_t bins, bool repeated) {
  std::vector<std::string> names;
  for (std::size_t j = 1; j < k; ++j) names.push_back("theta_" + std::to_string(j));
  for (std::size_t j = 1; j <= k; ++j)
    for (std::size_t c = 1; c <= (repeated ? 1 : n_coords); ++c)
      for (std::size_t m = 1; m < bins; ++m)
        names.push_back("omega_" + std::to_string(j) + (repeated ? "" : "_" + std::to_string(c)) + "_" +
                        std::to_string(m));
  return names;
}

/// Square matrix as CSV: a "coordinate" column, then one column per name.
inline std::string matrix_to_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& names) {
  if (m.rows() != m.cols() || static_cast<std::size_t>(m.rows()) != names.size())
    fail(ErrorKind::usage, "matrix and coordinate names disagree in size");
  std::vector<std::string> header{"coordinate"};
  header.insert(header.end(), names.begin(), names.end());
  CsvTable t(header);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    t.row().cell(names[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.cell(m(i, j));
  }
  return t.str();
}

inline std::string information_to_csv(const InfoMatrices& info, std::size_t k, std::size_t bins) {
  return matrix_to_csv(info.full, score_coordinate_names(k, bins, info.repeated));
}

// ---- JSON -------------------------------------------------------------------

inline nlohmann::json to_json(const MixtureParams& params) {
  nlohmann::json omega = nlohmann::json::array();
  for (std::size_t j = 0; j < params.components(); ++j) {
    nlohmann::json comp = nlohmann::json::array();
    for (std::size_t c = 0; c < n_coords; ++c) {
      const auto row = params.omega.row(j, c);
      comp.push_back(std::vector<double>(row.begin(), row.end()));
    }
    omega.push_back(std::move(comp));
  }
  nlohmann::json j{{"theta", params.theta}, {"bins", params.bins()}, {"repeated", params.repeated}, {"omega", omega}};
  if (!params.partition.is_regular()) j["breakpoints"] = params.partition.breakpoints();
  return j;
}

inline nlohmann::json to_json(const EmResult& result) {
  return {{"theta", result.params.theta},
          {"loglik", result.loglik},
          {"iterations", result.iterations},
          {"converged", result.converged},
          {"best_restart", result.best_restart},
          {"restart_logliks", result.restart_logliks},
          {"params", to_json(result.params)}};
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

/// Hash of a configuration, computed on its compact serialization (keys
/// sorted by nlohmann's default object ordering).
inline std::string config_hash(const nlohmann::json& config) { return hex64(fnv1a(config.dump())); }

inline nlohmann::json metadata(const std::string& command, const nlohmann::json& config) {
  return {{"tool", "histmix"},
          {"version", version},
          {"command", command},
          {"config", config},
          {"config_hash", config_hash(config)},
          {"seed", config.value("seed", std::uint64_t{0})}};
}

/// Writes `content` to `path` and the metadata sidecar next to it.
inline void write_with_sidecar(const std::filesystem::path& path, std::string_view content, const std::string& command,
                               const nlohmann::json& config) {
  write_file(path, content);
  auto sidecar = path;
  sidecar += ".meta.json";
  write_file(sidecar, metadata(command, config).dump(2) + "\n");
}

}  // namespace histmix
