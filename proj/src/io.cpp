#include "nodetherm/io.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;

namespace nodetherm {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "binary sidecar formats assume a little-endian host");

[[noreturn]] void fail_at(const std::string& path, int line, const std::string& msg) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

// Split one CSV line; double quotes delimit fields, "" inside quotes is a
// literal quote.
std::vector<std::string> split_csv(const std::string& line, const std::string& path, int ln) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) fail_at(path, ln, "unterminated quoted field");
  out.push_back(field);
  return out;
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += '"';
  return out;
}

double parse_double_field(const std::string& text, const std::string& path, int ln,
                          const char* what) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE)
    fail_at(path, ln, std::string(what) + ": cannot parse '" + text + "' as a number");
  return v;
}

long parse_int_field(const std::string& text, const std::string& path, int ln, const char* what) {
  errno = 0;
  char* end = nullptr;
  long v = std::strtol(text.c_str(), &end, 10);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE)
    fail_at(path, ln, std::string(what) + ": cannot parse '" + text + "' as an integer");
  return v;
}

// Reads a logical line: strips a trailing '\r' so CRLF files load cleanly.
bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

void expect_version_line(const std::vector<std::string>& fields, const std::string& path,
                         int ln) {
  if (fields.size() != 2 || fields[0] != "format_version")
    fail_at(path, ln, "expected leading 'format_version,1' line");
  if (fields[1] != "1")
    fail_at(path, ln, "unsupported format_version '" + fields[1] + "' (this build reads 1)");
}

// Days since 1970-01-01 for a proleptic Gregorian civil date.
int64_t days_from_civil(int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = unsigned(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + int64_t(doe) - 719468;
}

unsigned days_in_month(int y, unsigned m) {
  static const unsigned base[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2) {
    bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    return leap ? 29 : 28;
  }
  return base[m - 1];
}

// --- binary sidecar helpers -------------------------------------------------

void put_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), std::streamsize(n));
}
void put_u32(std::ostream& out, uint32_t v) { put_bytes(out, &v, 4); }
void put_f64(std::ostream& out, double v) { put_bytes(out, &v, 8); }
void put_f64s(std::ostream& out, const std::vector<double>& v) {
  put_bytes(out, v.data(), v.size() * 8);
}

struct BinReader {
  std::string path;
  std::ifstream in;
  explicit BinReader(const std::string& p) : path(p), in(p, std::ios::binary) {
    if (!in) throw std::runtime_error(path + ": cannot open");
  }
  void get_bytes(void* p, size_t n, const char* what) {
    in.read(static_cast<char*>(p), std::streamsize(n));
    if (size_t(in.gcount()) != n)
      throw std::runtime_error(path + ": truncated while reading " + what);
  }
  void expect_magic(const char* magic) {
    char buf[4];
    get_bytes(buf, 4, "magic");
    if (std::memcmp(buf, magic, 4) != 0)
      throw std::runtime_error(path + ": bad magic (expected " + magic + ")");
    uint32_t version = get_u32("version");
    if (version != 1)
      throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
  }
  uint32_t get_u32(const char* what) {
    uint32_t v;
    get_bytes(&v, 4, what);
    return v;
  }
  double get_f64(const char* what) {
    double v;
    get_bytes(&v, 8, what);
    return v;
  }
  void get_f64s(std::vector<double>& v, size_t n, const char* what) {
    v.resize(n);
    get_bytes(v.data(), n * 8, what);
  }
  void expect_eof() {
    char c;
    if (in.read(&c, 1))
      throw std::runtime_error(path + ": trailing bytes after expected end of file");
  }
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  return out;
}

void close_out(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw std::runtime_error(path + ": write failed");
}

// --- json conversions --------------------------------------------------------

json priors_to_json(const Priors& p) {
  json j;
  j["mu_mean"] = p.mu_mean;
  j["mu_var"] = p.mu_var;
  j["tau_shape"] = p.tau_shape;
  j["tau_rate"] = p.tau_rate;
  j["lambda_conc"] = p.lambda_conc;
  j["phi_a"] = p.phi_a;
  j["phi_b"] = p.phi_b;
  j["ups_shape"] = p.ups_shape;
  j["ups_scale"] = p.ups_scale;
  j["theta_shape"] = p.theta_shape;
  j["theta_rate"] = p.theta_rate;
  j["kappa_shape"] = p.kappa_shape;
  j["kappa_rate"] = p.kappa_rate;
  j["xi_shape"] = p.xi_shape;
  j["xi_rate"] = p.xi_rate;
  j["sigma_shape"] = p.sigma_shape;
  j["sigma_scale"] = p.sigma_scale;
  return j;
}

Priors priors_from_json(const json& j) {
  Priors p;
  p.mu_mean = j.at("mu_mean").get<double>();
  p.mu_var = j.at("mu_var").get<double>();
  p.tau_shape = j.at("tau_shape").get<double>();
  p.tau_rate = j.at("tau_rate").get<double>();
  p.lambda_conc = j.at("lambda_conc").get<std::vector<double>>();
  p.phi_a = j.at("phi_a").get<double>();
  p.phi_b = j.at("phi_b").get<double>();
  p.ups_shape = j.at("ups_shape").get<double>();
  p.ups_scale = j.at("ups_scale").get<double>();
  p.theta_shape = j.at("theta_shape").get<double>();
  p.theta_rate = j.at("theta_rate").get<double>();
  p.kappa_shape = j.at("kappa_shape").get<double>();
  p.kappa_rate = j.at("kappa_rate").get<double>();
  p.xi_shape = j.at("xi_shape").get<double>();
  p.xi_rate = j.at("xi_rate").get<double>();
  p.sigma_shape = j.at("sigma_shape").get<double>();
  p.sigma_scale = j.at("sigma_scale").get<double>();
  return p;
}

json tuning_to_json(const Tuning& t) {
  json j;
  j["lambda_step"] = t.lambda_step;
  j["phi_step"] = t.phi_step;
  j["ups_step"] = t.ups_step;
  j["theta_step"] = t.theta_step;
  j["kappa_step"] = t.kappa_step;
  j["xi_step"] = t.xi_step;
  j["delta_prior_frac"] = t.delta_prior_frac;
  j["adapt"] = t.adapt;
  j["target_rate"] = t.target_rate;
  return j;
}

Tuning tuning_from_json(const json& j) {
  Tuning t;
  t.lambda_step = j.at("lambda_step").get<double>();
  t.phi_step = j.at("phi_step").get<double>();
  t.ups_step = j.at("ups_step").get<double>();
  t.theta_step = j.at("theta_step").get<double>();
  t.kappa_step = j.at("kappa_step").get<double>();
  t.xi_step = j.at("xi_step").get<double>();
  t.delta_prior_frac = j.at("delta_prior_frac").get<double>();
  t.adapt = j.at("adapt").get<bool>();
  t.target_rate = j.at("target_rate").get<double>();
  return t;
}

json accept_phase_to_json(const std::array<BlockStats, size_t(Block::kCount)>& phase) {
  json j;
  for (size_t b = 0; b < size_t(Block::kCount); ++b) {
    json e;
    e["proposals"] = phase[b].proposals;
    e["accepts"] = phase[b].accepts;
    j[block_name(Block(b))] = e;
  }
  return j;
}

void accept_phase_from_json(const json& j, std::array<BlockStats, size_t(Block::kCount)>& phase) {
  for (size_t b = 0; b < size_t(Block::kCount); ++b) {
    const json& e = j.at(block_name(Block(b)));
    phase[b].proposals = e.at("proposals").get<int64_t>();
    phase[b].accepts = e.at("accepts").get<int64_t>();
  }
}

json manifest_skeleton(const ManifestInfo& info) {
  json m;
  m["format_version"] = 1;
  m["command"] = info.command;
  m["inputs"] = json::object();
  for (const auto& [k, v] : info.inputs) m["inputs"][k] = v;
  m["settings"] = json::object();
  for (const auto& [k, v] : info.settings) m["settings"][k] = v;
  return m;
}

void write_manifest_json(const std::string& dir, json m,
                         const std::vector<std::string>& output_files) {
  json outs = json::object();
  for (const auto& f : output_files) outs[f] = hash_file(dir + "/" + f);
  m["outputs"] = outs;
  const std::string path = dir + "/manifest.json";
  auto out = open_out(path);
  out << m.dump(2) << "\n";
  close_out(out, path);
}

json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return j;
}

}  // namespace

// --- primitives ---------------------------------------------------------------

double parse_timestamp(const std::string& text) {
  if (text.empty()) throw std::runtime_error("timestamp: empty field");
  {
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str() + text.size() && errno != ERANGE && std::isfinite(v)) return v;
  }
  int y = 0;
  unsigned mo = 0, d = 0, hh = 0, mi = 0, ss = 0;
  int consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2u-%2u%*1[Tt ]%2u:%2u:%2u%n", &y, &mo, &d, &hh, &mi, &ss,
                  &consumed) != 6 ||
      consumed == 0)
    throw std::runtime_error("timestamp: '" + text +
                             "' is neither epoch seconds nor an RFC 3339 date-time");
  if (mo < 1 || mo > 12) throw std::runtime_error("timestamp: month out of range in '" + text + "'");
  if (d < 1 || d > days_in_month(y, mo))
    throw std::runtime_error("timestamp: day out of range in '" + text + "'");
  if (hh > 23 || mi > 59 || ss > 60)
    throw std::runtime_error("timestamp: time of day out of range in '" + text + "'");
  size_t i = size_t(consumed);
  double frac = 0.0;
  if (i < text.size() && text[i] == '.') {
    size_t start = ++i;
    double scale = 0.1;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
      frac += scale * (text[i] - '0');
      scale *= 0.1;
      ++i;
    }
    if (i == start) throw std::runtime_error("timestamp: empty fractional part in '" + text + "'");
  }
  double offset = 0.0;
  if (i < text.size() && (text[i] == 'Z' || text[i] == 'z')) {
    ++i;
  } else if (i < text.size() && (text[i] == '+' || text[i] == '-')) {
    unsigned oh = 0, om = 0;
    int n = 0;
    if (std::sscanf(text.c_str() + i + 1, "%2u:%2u%n", &oh, &om, &n) != 2 || n != 5 || oh > 23 ||
        om > 59)
      throw std::runtime_error("timestamp: bad zone offset in '" + text + "'");
    offset = (text[i] == '+' ? 1.0 : -1.0) * (3600.0 * oh + 60.0 * om);
    i += 6;
  } else {
    throw std::runtime_error("timestamp: missing zone designator in '" + text + "'");
  }
  if (i != text.size())
    throw std::runtime_error("timestamp: trailing characters in '" + text + "'");
  const double day_sec = double(days_from_civil(y, mo, d)) * 86400.0;
  return day_sec + 3600.0 * hh + 60.0 * mi + double(ss) + frac - offset;
}

uint64_t fnv1a64(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for hashing");
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    const auto n = size_t(in.gcount());
    for (size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (!in) break;
  }
  char out[32];
  std::snprintf(out, sizeof out, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return out;
}

std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

std::string format_node_set(const std::vector<int32_t>& nodes) {
  if (nodes.empty()) return "all";
  std::vector<int32_t> ids(nodes);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::string out;
  size_t i = 0;
  while (i < ids.size()) {
    size_t j = i;
    while (j + 1 < ids.size() && ids[j + 1] == ids[j] + 1) ++j;
    if (!out.empty()) out += ',';
    out += std::to_string(ids[i] + 1);
    if (j > i) out += '-' + std::to_string(ids[j] + 1);
    i = j + 1;
  }
  return out;
}

// --- telemetry and covariate tables -------------------------------------------

TelemetryTable read_telemetry_csv(const std::string& path, int S) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  TelemetryTable t;
  std::string line;
  int ln = 0, stage = 0;
  while (read_line(in, line)) {
    ++ln;
    if (trim(line).empty()) continue;
    auto f = split_csv(line, path, ln);
    if (stage == 0) {
      expect_version_line(f, path, ln);
      stage = 1;
      continue;
    }
    if (stage == 1) {
      if (f != std::vector<std::string>{"node_id", "timestamp", "temp_c"})
        fail_at(path, ln, "expected header 'node_id,timestamp,temp_c'");
      stage = 2;
      continue;
    }
    if (f.size() != 3)
      fail_at(path, ln, "expected 3 fields, got " + std::to_string(f.size()));
    long id = parse_int_field(f[0], path, ln, "node_id");
    if (id < 1) fail_at(path, ln, "node_id " + std::to_string(id) + " must be >= 1");
    if (S > 0 && id > S)
      fail_at(path, ln,
              "node_id " + std::to_string(id) + " not in the topology (1.." + std::to_string(S) + ")");
    double ts = 0.0;
    try {
      ts = parse_timestamp(f[1]);
    } catch (const std::exception& e) {
      fail_at(path, ln, e.what());
    }
    double temp = parse_double_field(f[2], path, ln, "temp_c");
    if (!(temp >= -20.0 && temp <= 120.0))
      fail_at(path, ln, "temp_c " + f[2] + " outside the plausible range [-20, 120]");
    t.node.push_back(int32_t(id));
    t.time_s.push_back(ts);
    t.temp_c.push_back(temp);
  }
  if (stage == 0) fail_at(path, ln ? ln : 1, "empty file (missing format_version line)");
  if (stage == 1) fail_at(path, ln, "missing column header line");
  return t;
}

void write_telemetry_csv(const std::string& path, const TelemetryTable& table) {
  const size_t n = table.node.size();
  if (table.time_s.size() != n || table.temp_c.size() != n)
    throw std::runtime_error("telemetry: column length mismatch");
  auto out = open_out(path);
  out << "format_version,1\n";
  out << "node_id,timestamp,temp_c\n";
  for (size_t i = 0; i < n; ++i) {
    out << table.node[i] << ',' << format_double(table.time_s[i]) << ','
        << format_double(table.temp_c[i]) << '\n';
  }
  close_out(out, path);
}

std::vector<CovariateWindow> read_covariate_csv(const std::string& path, int S) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::vector<CovariateWindow> windows;
  std::string line;
  int ln = 0, stage = 0;
  while (read_line(in, line)) {
    ++ln;
    if (trim(line).empty()) continue;
    auto f = split_csv(line, path, ln);
    if (stage == 0) {
      expect_version_line(f, path, ln);
      stage = 1;
      continue;
    }
    if (stage == 1) {
      if (f != std::vector<std::string>{"covariate", "nodes", "start", "end"})
        fail_at(path, ln, "expected header 'covariate,nodes,start,end'");
      stage = 2;
      continue;
    }
    if (f.size() != 4)
      fail_at(path, ln, "expected 4 fields, got " + std::to_string(f.size()));
    CovariateWindow w;
    long j = parse_int_field(f[0], path, ln, "covariate");
    if (j < 1) fail_at(path, ln, "covariate index " + std::to_string(j) + " must be >= 1");
    w.j = int(j);
    try {
      w.nodes = parse_node_set(f[1], S);
      w.start_s = parse_timestamp(f[2]);
      w.end_s = parse_timestamp(f[3]);
    } catch (const std::exception& e) {
      fail_at(path, ln, e.what());
    }
    if (!(w.end_s > w.start_s)) fail_at(path, ln, "window end must exceed start");
    windows.push_back(std::move(w));
  }
  if (stage == 0) fail_at(path, ln ? ln : 1, "empty file (missing format_version line)");
  if (stage == 1) fail_at(path, ln, "missing column header line");
  return windows;
}

void write_covariate_csv(const std::string& path, const std::vector<CovariateWindow>& windows) {
  auto out = open_out(path);
  out << "format_version,1\n";
  out << "covariate,nodes,start,end\n";
  for (const auto& w : windows) {
    out << w.j << ',' << csv_quote(format_node_set(w.nodes)) << ',' << format_double(w.start_s)
        << ',' << format_double(w.end_s) << '\n';
  }
  close_out(out, path);
}

Dataset load_telemetry(const std::string& telemetry_path, const std::string& covariate_path,
                       const Topology& topo, int J) {
  TelemetryTable table = read_telemetry_csv(telemetry_path, topo.S);
  std::vector<CovariateWindow> windows;
  if (!covariate_path.empty()) windows = read_covariate_csv(covariate_path, topo.S);
  return build_dataset(table, windows, topo, J);
}

// --- chain persistence ----------------------------------------------------------

void write_manifest(const std::string& dir, const ManifestInfo& info,
                    const std::vector<std::string>& output_files) {
  write_manifest_json(dir, manifest_skeleton(info), output_files);
}

void save_chain(const std::string& dir, const PosteriorChain& chain, const ManifestInfo& info) {
  fs::create_directories(dir);
  const int P = chain.J + 1;
  const size_t M = chain.draws.size();

  {
    const std::string path = dir + "/chain.csv";
    auto out = open_out(path);
    out << "format_version,1\n";
    out << "iteration";
    for (int j = 0; j < P; ++j) out << ",mu_" << j;
    for (int j = 0; j < P; ++j) out << ",tau_" << j;
    for (int l = 1; l <= chain.L; ++l) out << ",lambda_" << l;
    out << ",phi,upsilon2,theta,kappa,xi,sigma2\n";
    for (const ChainDraw& d : chain.draws) {
      out << d.iteration;
      for (int j = 0; j < P; ++j) out << ',' << format_double(d.mu[j]);
      for (int j = 0; j < P; ++j) out << ',' << format_double(d.tau[j]);
      for (int l = 0; l < chain.L; ++l) out << ',' << format_double(d.lambda[l]);
      out << ',' << format_double(d.phi) << ',' << format_double(d.upsilon2) << ','
          << format_double(d.theta) << ',' << format_double(d.kappa) << ','
          << format_double(d.xi) << ',' << format_double(d.sigma2) << '\n';
    }
    close_out(out, path);
  }

  {
    const std::string path = dir + "/beta_draws.bin";
    auto out = open_out(path);
    put_bytes(out, "NTBD", 4);
    put_u32(out, 1);
    put_u32(out, uint32_t(M));
    put_u32(out, uint32_t(P));
    put_u32(out, uint32_t(chain.S));
    for (const ChainDraw& d : chain.draws)
      for (int p = 0; p < P; ++p) put_f64s(out, d.beta[p]);
    close_out(out, path);
  }

  {
    const std::string path = dir + "/delta_mean.bin";
    auto out = open_out(path);
    put_bytes(out, "NTDM", 4);
    put_u32(out, 1);
    put_u32(out, uint32_t(chain.S));
    put_f64(out, chain.t0);
    for (int s = 0; s < chain.S; ++s) {
      put_u32(out, uint32_t(chain.grid[s].size()));
      put_f64s(out, chain.grid[s].t);
      put_f64s(out, chain.delta_mean[s]);
    }
    close_out(out, path);
  }

  const bool with_delta_draws = !chain.delta_draws.empty();
  if (with_delta_draws) {
    const std::string path = dir + "/delta_draws.bin";
    auto out = open_out(path);
    put_bytes(out, "NTDD", 4);
    put_u32(out, 1);
    put_u32(out, uint32_t(chain.delta_draws.size()));
    put_u32(out, uint32_t(chain.S));
    for (int s = 0; s < chain.S; ++s) put_u32(out, uint32_t(chain.grid[s].size()));
    for (const auto& draw : chain.delta_draws)
      for (int s = 0; s < chain.S; ++s) put_f64s(out, draw[s]);
    close_out(out, path);
  }

  json m = manifest_skeleton(info);
  json c;
  c["S"] = chain.S;
  c["J"] = chain.J;
  c["L"] = chain.L;
  c["seed"] = chain.seed;
  c["iterations"] = chain.iterations;
  c["burn_in"] = chain.burn_in;
  c["thinning"] = chain.thinning;
  c["gaussian_body"] = chain.gaussian_body;
  c["draw_count"] = M;
  c["priors"] = priors_to_json(chain.priors);
  c["tuning_initial"] = tuning_to_json(chain.tuning_initial);
  c["tuning_final"] = tuning_to_json(chain.tuning_final);
  c["acceptance"] = {{"burn_in", accept_phase_to_json(chain.acceptance.burn_in)},
                     {"post", accept_phase_to_json(chain.acceptance.post)}};
  m["chain"] = c;

  std::vector<std::string> outputs = {"chain.csv", "beta_draws.bin", "delta_mean.bin"};
  if (with_delta_draws) outputs.push_back("delta_draws.bin");
  write_manifest_json(dir, std::move(m), outputs);
}

PosteriorChain load_chain(const std::string& dir) {
  const json m = load_json_file(dir + "/manifest.json");
  if (!m.contains("format_version") || m.at("format_version").get<int>() != 1)
    throw std::runtime_error(dir + "/manifest.json: unsupported or missing format_version");
  if (!m.contains("chain"))
    throw std::runtime_error(dir + "/manifest.json: no 'chain' section (not a chain directory)");
  const json& c = m.at("chain");

  PosteriorChain chain;
  chain.S = c.at("S").get<int>();
  chain.J = c.at("J").get<int>();
  chain.L = c.at("L").get<int>();
  chain.seed = c.at("seed").get<uint64_t>();
  chain.iterations = c.at("iterations").get<int64_t>();
  chain.burn_in = c.at("burn_in").get<int64_t>();
  chain.thinning = c.at("thinning").get<int64_t>();
  chain.gaussian_body = c.at("gaussian_body").get<bool>();
  chain.priors = priors_from_json(c.at("priors"));
  chain.tuning_initial = tuning_from_json(c.at("tuning_initial"));
  chain.tuning_final = tuning_from_json(c.at("tuning_final"));
  accept_phase_from_json(c.at("acceptance").at("burn_in"), chain.acceptance.burn_in);
  accept_phase_from_json(c.at("acceptance").at("post"), chain.acceptance.post);
  const size_t M = c.at("draw_count").get<size_t>();
  const int P = chain.J + 1;

  {
    const std::string path = dir + "/chain.csv";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::string line;
    int ln = 0, stage = 0;
    const size_t ncols = size_t(1 + 2 * P + chain.L + 6);
    while (read_line(in, line)) {
      ++ln;
      if (trim(line).empty()) continue;
      auto f = split_csv(line, path, ln);
      if (stage == 0) {
        expect_version_line(f, path, ln);
        stage = 1;
        continue;
      }
      if (stage == 1) {
        if (f.size() != ncols)
          fail_at(path, ln, "header has " + std::to_string(f.size()) + " columns, expected " +
                                std::to_string(ncols));
        stage = 2;
        continue;
      }
      if (f.size() != ncols)
        fail_at(path, ln, "row has " + std::to_string(f.size()) + " fields, expected " +
                              std::to_string(ncols));
      ChainDraw d;
      size_t k = 0;
      d.iteration = parse_int_field(f[k++], path, ln, "iteration");
      d.mu.resize(P);
      for (int j = 0; j < P; ++j) d.mu[j] = parse_double_field(f[k++], path, ln, "mu");
      d.tau.resize(P);
      for (int j = 0; j < P; ++j) d.tau[j] = parse_double_field(f[k++], path, ln, "tau");
      d.lambda.resize(chain.L);
      for (int l = 0; l < chain.L; ++l)
        d.lambda[l] = parse_double_field(f[k++], path, ln, "lambda");
      d.phi = parse_double_field(f[k++], path, ln, "phi");
      d.upsilon2 = parse_double_field(f[k++], path, ln, "upsilon2");
      d.theta = parse_double_field(f[k++], path, ln, "theta");
      d.kappa = parse_double_field(f[k++], path, ln, "kappa");
      d.xi = parse_double_field(f[k++], path, ln, "xi");
      d.sigma2 = parse_double_field(f[k++], path, ln, "sigma2");
      chain.draws.push_back(std::move(d));
    }
    if (chain.draws.size() != M)
      throw std::runtime_error(path + ": " + std::to_string(chain.draws.size()) +
                               " draws but manifest says " + std::to_string(M));
  }

  {
    BinReader r(dir + "/beta_draws.bin");
    r.expect_magic("NTBD");
    const uint32_t rm = r.get_u32("draw count");
    const uint32_t rp = r.get_u32("coefficient count");
    const uint32_t rs = r.get_u32("node count");
    if (rm != M || rp != uint32_t(P) || rs != uint32_t(chain.S))
      throw std::runtime_error(r.path + ": dimensions disagree with the manifest");
    for (auto& d : chain.draws) {
      d.beta.resize(P);
      for (int p = 0; p < P; ++p) r.get_f64s(d.beta[p], size_t(chain.S), "beta draw");
    }
    r.expect_eof();
  }

  {
    BinReader r(dir + "/delta_mean.bin");
    r.expect_magic("NTDM");
    const uint32_t rs = r.get_u32("node count");
    if (rs != uint32_t(chain.S))
      throw std::runtime_error(r.path + ": node count disagrees with the manifest");
    chain.t0 = r.get_f64("time origin");
    chain.grid.resize(chain.S);
    chain.delta_mean.resize(chain.S);
    for (int s = 0; s < chain.S; ++s) {
      const uint32_t T = r.get_u32("grid length");
      r.get_f64s(chain.grid[s].t, T, "grid times");
      r.get_f64s(chain.delta_mean[s], T, "residual means");
    }
    r.expect_eof();
  }

  if (fs::exists(dir + "/delta_draws.bin")) {
    BinReader r(dir + "/delta_draws.bin");
    r.expect_magic("NTDD");
    const uint32_t rm = r.get_u32("draw count");
    const uint32_t rs = r.get_u32("node count");
    if (rm != M || rs != uint32_t(chain.S))
      throw std::runtime_error(r.path + ": dimensions disagree with the manifest");
    for (int s = 0; s < chain.S; ++s) {
      const uint32_t T = r.get_u32("grid length");
      if (T != chain.grid[s].size())
        throw std::runtime_error(r.path + ": grid length disagrees with delta_mean.bin");
    }
    chain.delta_draws.resize(M);
    for (size_t d = 0; d < M; ++d) {
      chain.delta_draws[d].resize(chain.S);
      for (int s = 0; s < chain.S; ++s)
        r.get_f64s(chain.delta_draws[d][s], chain.grid[s].size(), "residual draw");
    }
    r.expect_eof();
  }

  return chain;
}

// --- sectioned key-value configuration -------------------------------------------

bool KvConfig::has_section(const std::string& section) const {
  return sections.count(section) != 0;
}

bool KvConfig::has(const std::string& section, const std::string& key) const {
  auto it = sections.find(section);
  return it != sections.end() && it->second.count(key) != 0;
}

const std::string& KvConfig::require(const std::string& section, const std::string& key) const {
  auto it = sections.find(section);
  if (it == sections.end())
    throw std::runtime_error(origin + ": missing section [" + section + "]");
  auto kt = it->second.find(key);
  if (kt == it->second.end())
    throw std::runtime_error(origin + ": section [" + section + "] is missing key '" + key + "'");
  return kt->second.value;
}

std::string KvConfig::get_string(const std::string& section, const std::string& key,
                                 const std::string& fallback) const {
  return has(section, key) ? require(section, key) : fallback;
}

double KvConfig::get_double(const std::string& section, const std::string& key,
                            double fallback) const {
  if (!has(section, key)) return fallback;
  const Entry& e = sections.at(section).at(key);
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(e.value.c_str(), &end);
  if (e.value.empty() || end != e.value.c_str() + e.value.size() || errno == ERANGE)
    fail_at(origin, e.line, "[" + section + "] " + key + ": '" + e.value + "' is not a number");
  return v;
}

int64_t KvConfig::get_int(const std::string& section, const std::string& key,
                          int64_t fallback) const {
  if (!has(section, key)) return fallback;
  const Entry& e = sections.at(section).at(key);
  errno = 0;
  char* end = nullptr;
  long long v = std::strtoll(e.value.c_str(), &end, 10);
  if (e.value.empty() || end != e.value.c_str() + e.value.size() || errno == ERANGE)
    fail_at(origin, e.line, "[" + section + "] " + key + ": '" + e.value + "' is not an integer");
  return v;
}

bool KvConfig::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const Entry& e = sections.at(section).at(key);
  if (e.value == "true" || e.value == "1" || e.value == "yes" || e.value == "on") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no" || e.value == "off") return false;
  fail_at(origin, e.line, "[" + section + "] " + key + ": '" + e.value + "' is not a boolean");
}

void KvConfig::check_known(const std::string& section,
                           const std::vector<std::string>& known) const {
  auto it = sections.find(section);
  if (it == sections.end()) return;
  for (const auto& [key, entry] : it->second) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      fail_at(origin, entry.line, "unknown key '" + key + "' in section [" + section + "]");
  }
}

KvConfig parse_kv_config(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  cfg.origin = origin;
  std::istringstream in(text);
  std::string raw;
  int ln = 0;
  std::string section;
  while (std::getline(in, raw)) {
    ++ln;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        fail_at(origin, ln, "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail_at(origin, ln, "empty section name");
      if (cfg.sections.count(section))
        fail_at(origin, ln, "duplicate section [" + section + "]");
      cfg.section_order.push_back(section);
      cfg.sections[section];
      continue;
    }
    size_t sp = line.find_first_of(" \t");
    std::string key = sp == std::string::npos ? line : line.substr(0, sp);
    std::string value = sp == std::string::npos ? "" : trim(line.substr(sp));
    if (value.empty()) fail_at(origin, ln, "key '" + key + "' has no value");
    if (section.empty()) {
      if (key != "format_version")
        fail_at(origin, ln, "key '" + key + "' appears before any [section]");
      errno = 0;
      char* end = nullptr;
      long v = std::strtol(value.c_str(), &end, 10);
      if (end != value.c_str() + value.size() || errno == ERANGE)
        fail_at(origin, ln, "format_version '" + value + "' is not an integer");
      cfg.format_version = int(v);
      if (cfg.format_version != 1)
        fail_at(origin, ln, "unsupported format_version " + value + " (this build reads 1)");
      continue;
    }
    auto [it, inserted] = cfg.sections[section].emplace(key, KvConfig::Entry{value, ln});
    (void)it;
    if (!inserted) fail_at(origin, ln, "duplicate key '" + key + "' in section [" + section + "]");
  }
  return cfg;
}

KvConfig load_kv_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kv_config(buf.str(), path);
}

// --- fit configuration ------------------------------------------------------------

void FitSetup::validate() const {
  if (topology_path.empty() || telemetry_path.empty() || output_dir.empty())
    throw std::runtime_error("fit config: topology, telemetry, and output_dir are required");
  if (J < 0) throw std::runtime_error("fit config: covariate count must be >= 0");
  if (J > 0 && covariates_path.empty())
    throw std::runtime_error("fit config: covariates path required when covariate count > 0");
  run.validate();
  if (run.iterations <= run.burn_in)
    throw std::runtime_error(
        "fit config: schedule keeps no posterior draws (iterations must exceed burn_in)");
  if (int(scenario_x.size()) != J)
    throw std::runtime_error("fit config: scenario covariate vector must have one entry per covariate");
  if (!(scenario_horizon_s > 0.0) || !(scenario_spacing_s > 0.0))
    throw std::runtime_error("fit config: scenario horizon and spacing must be positive");
}

FitSetup parse_fit_config(const KvConfig& cfg) {
  FitSetup fs;
  cfg.check_known("paths", {"topology", "telemetry", "covariates", "output_dir"});
  cfg.check_known("model", {"covariates", "gaussian_body", "store_delta_draws"});
  cfg.check_known("schedule", {"iterations", "burn_in", "thinning", "seed", "workers"});
  cfg.check_known("priors", {"mu_mean", "mu_var", "tau_shape", "tau_rate", "lambda_conc", "phi_a",
                             "phi_b", "ups_shape", "ups_scale", "theta_shape", "theta_rate",
                             "kappa_shape", "kappa_rate", "xi_shape", "xi_rate", "sigma_shape",
                             "sigma_scale"});
  cfg.check_known("tuning", {"lambda_step", "phi_step", "ups_step", "theta_step", "kappa_step",
                             "xi_step", "delta_prior_frac", "adapt", "target_rate"});
  cfg.check_known("scenario", {"horizon_seconds", "spacing_seconds", "include_measurement_error",
                               "x"});
  for (const auto& name : cfg.section_order) {
    static const char* allowed[] = {"paths", "model", "schedule", "priors", "tuning", "scenario"};
    if (std::find(std::begin(allowed), std::end(allowed), name) == std::end(allowed))
      throw std::runtime_error(cfg.origin + ": unknown section [" + name + "]");
  }

  fs.topology_path = cfg.require("paths", "topology");
  fs.telemetry_path = cfg.require("paths", "telemetry");
  fs.covariates_path = cfg.get_string("paths", "covariates", "");
  fs.output_dir = cfg.require("paths", "output_dir");

  fs.J = int(cfg.get_int("model", "covariates", 0));
  fs.run.gaussian_body = cfg.get_bool("model", "gaussian_body", false);
  fs.run.store_delta_draws = cfg.get_bool("model", "store_delta_draws", false);

  fs.run.iterations = cfg.get_int("schedule", "iterations", 0);
  fs.run.burn_in = cfg.get_int("schedule", "burn_in", 0);
  fs.run.thinning = cfg.get_int("schedule", "thinning", 5);
  {
    // Seed is mandatory: runs must be reproducible, so no wall-clock default.
    const std::string& seed = cfg.require("schedule", "seed");
    errno = 0;
    char* end = nullptr;
    unsigned long long v = std::strtoull(seed.c_str(), &end, 10);
    if (seed.empty() || end != seed.c_str() + seed.size() || errno == ERANGE)
      throw std::runtime_error(cfg.origin + ": [schedule] seed '" + seed +
                               "' is not an unsigned integer");
    fs.run.seed = v;
  }
  fs.run.workers = int(cfg.get_int("schedule", "workers", 1));

  Priors& p = fs.run.priors;
  p.mu_mean = cfg.get_double("priors", "mu_mean", p.mu_mean);
  p.mu_var = cfg.get_double("priors", "mu_var", p.mu_var);
  p.tau_shape = cfg.get_double("priors", "tau_shape", p.tau_shape);
  p.tau_rate = cfg.get_double("priors", "tau_rate", p.tau_rate);
  if (cfg.has("priors", "lambda_conc")) {
    std::istringstream vals(cfg.require("priors", "lambda_conc"));
    p.lambda_conc.clear();
    double v;
    while (vals >> v) p.lambda_conc.push_back(v);
    if (!vals.eof())
      throw std::runtime_error(cfg.origin + ": [priors] lambda_conc must be a list of numbers");
  }
  p.phi_a = cfg.get_double("priors", "phi_a", p.phi_a);
  p.phi_b = cfg.get_double("priors", "phi_b", p.phi_b);
  p.ups_shape = cfg.get_double("priors", "ups_shape", p.ups_shape);
  p.ups_scale = cfg.get_double("priors", "ups_scale", p.ups_scale);
  p.theta_shape = cfg.get_double("priors", "theta_shape", p.theta_shape);
  p.theta_rate = cfg.get_double("priors", "theta_rate", p.theta_rate);
  p.kappa_shape = cfg.get_double("priors", "kappa_shape", p.kappa_shape);
  p.kappa_rate = cfg.get_double("priors", "kappa_rate", p.kappa_rate);
  p.xi_shape = cfg.get_double("priors", "xi_shape", p.xi_shape);
  p.xi_rate = cfg.get_double("priors", "xi_rate", p.xi_rate);
  p.sigma_shape = cfg.get_double("priors", "sigma_shape", p.sigma_shape);
  p.sigma_scale = cfg.get_double("priors", "sigma_scale", p.sigma_scale);

  Tuning& t = fs.run.tuning;
  t.lambda_step = cfg.get_double("tuning", "lambda_step", t.lambda_step);
  t.phi_step = cfg.get_double("tuning", "phi_step", t.phi_step);
  t.ups_step = cfg.get_double("tuning", "ups_step", t.ups_step);
  t.theta_step = cfg.get_double("tuning", "theta_step", t.theta_step);
  t.kappa_step = cfg.get_double("tuning", "kappa_step", t.kappa_step);
  t.xi_step = cfg.get_double("tuning", "xi_step", t.xi_step);
  t.delta_prior_frac = cfg.get_double("tuning", "delta_prior_frac", t.delta_prior_frac);
  t.adapt = cfg.get_bool("tuning", "adapt", t.adapt);
  t.target_rate = cfg.get_double("tuning", "target_rate", t.target_rate);

  fs.scenario_horizon_s = cfg.get_double("scenario", "horizon_seconds", fs.scenario_horizon_s);
  fs.scenario_spacing_s = cfg.get_double("scenario", "spacing_seconds", fs.scenario_spacing_s);
  fs.scenario_noise = cfg.get_bool("scenario", "include_measurement_error", fs.scenario_noise);
  fs.scenario_x.assign(size_t(std::max(fs.J, 0)), 1.0);
  if (cfg.has("scenario", "x")) {
    std::istringstream vals(cfg.require("scenario", "x"));
    fs.scenario_x.clear();
    double v;
    while (vals >> v) fs.scenario_x.push_back(v);
    if (!vals.eof())
      throw std::runtime_error(cfg.origin + ": [scenario] x must be a list of numbers");
  }

  fs.validate();
  return fs;
}

}  // namespace nodetherm
