#pragma once

// Persistence and ingestion: telemetry/covariate CSV in both directions,
// chain output (scalar CSV plus binary sidecars plus manifest), the sectioned
// key-value config format, timestamp parsing, and content hashing for
// manifests. Every on-disk format starts with a format_version field and every
// writer is a pure function of its inputs, so identical inputs reproduce
// identical bytes.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nodetherm/data.hpp"
#include "nodetherm/sampler.hpp"

namespace nodetherm {

// --- primitives -----------------------------------------------------------

// Epoch seconds from a numeric literal ("1456908300", "1456908300.5") or an
// RFC 3339 timestamp ("2016-03-02T08:45:00Z", fractional seconds and
// "+hh:mm"/"-hh:mm" offsets accepted).
double parse_timestamp(const std::string& text);

// 64-bit FNV-1a.
uint64_t fnv1a64(const void* data, size_t n);
// Hash of a file's bytes as "fnv1a64:<16 hex digits>"; throws if unreadable.
std::string hash_file(const std::string& path);

// Shortest exact decimal form of a double (printf %.17g trimmed): reparses to
// the identical bit pattern. Used by every CSV writer.
std::string format_double(double v);

// Render a 0-based node id set as the 1-based expression parse_node_set
// accepts ("all" for empty, else e.g. "1-16,33").
std::string format_node_set(const std::vector<int32_t>& nodes);

// --- telemetry and covariate tables ----------------------------------------

// CSV with a leading "format_version,1" line, then "node_id,timestamp,temp_c".
// Errors carry "<path>:<line>:". S > 0 bounds node ids so an unknown id is
// reported with its line number.
TelemetryTable read_telemetry_csv(const std::string& path, int S = 0);
void write_telemetry_csv(const std::string& path, const TelemetryTable& table);

// CSV with a leading "format_version,1" line, then "covariate,nodes,start,end"
// where nodes is a (quoted) node-set expression. S bounds the node ids.
std::vector<CovariateWindow> read_covariate_csv(const std::string& path, int S);
void write_covariate_csv(const std::string& path, const std::vector<CovariateWindow>& windows);

// Ingest and assemble in one step.
Dataset load_telemetry(const std::string& telemetry_path, const std::string& covariate_path,
                       const Topology& topo, int J);

// --- chain persistence ------------------------------------------------------

struct ManifestInfo {
  std::string command;                          // subcommand that produced the files
  std::map<std::string, std::string> inputs;    // label -> "fnv1a64:..."
  std::map<std::string, std::string> settings;  // echoed configuration strings
};

// Write manifest.json in dir: format_version, command, inputs, settings, and
// a hash per named output file (paths relative to dir).
void write_manifest(const std::string& dir, const ManifestInfo& info,
                    const std::vector<std::string>& output_files);

// chain.csv (scalar draws), beta_draws.bin, delta_mean.bin, optionally
// delta_draws.bin, and manifest.json carrying all chain metadata.
void save_chain(const std::string& dir, const PosteriorChain& chain, const ManifestInfo& info);
PosteriorChain load_chain(const std::string& dir);

// --- sectioned key-value configuration --------------------------------------

// Grammar: optional leading "format_version <int>", "[section]" headers,
// "key value..." lines, '#' comments. Duplicate keys within a section are
// errors; lookups outside any declared section or key throw with origin and
// line number.
struct KvConfig {
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::string origin;
  int format_version = 1;
  std::vector<std::string> section_order;
  std::map<std::string, std::map<std::string, Entry>> sections;

  bool has_section(const std::string& section) const;
  bool has(const std::string& section, const std::string& key) const;
  const std::string& require(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  // Throws if the section holds a key outside `known` (typo guard).
  void check_known(const std::string& section, const std::vector<std::string>& known) const;
};

KvConfig parse_kv_config(const std::string& text, const std::string& origin);
KvConfig load_kv_config(const std::string& path);

// Everything the fit command needs, assembled from a config file.
struct FitSetup {
  std::string topology_path, telemetry_path, covariates_path, output_dir;
  int J = 0;
  RunConfig run;
  // Scenario defaults recorded in the chain manifest for later predict runs.
  double scenario_horizon_s = 86400.0;
  double scenario_spacing_s = 60.0;
  bool scenario_noise = true;
  std::vector<double> scenario_x;  // size J

  void validate() const;  // also rejects schedules that keep zero draws
};

FitSetup parse_fit_config(const KvConfig& cfg);

}  // namespace nodetherm
