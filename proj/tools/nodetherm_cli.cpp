// Command-line front end: simulate | fit | predict | diagnose | topology-stats.
// Results go to per-run output directories with a manifest.json that hashes
// every input and output; all failures print one machine-readable JSON line
// to stderr and exit 1.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "nodetherm/data.hpp"
#include "nodetherm/diagnostics.hpp"
#include "nodetherm/gmrf.hpp"
#include "nodetherm/io.hpp"
#include "nodetherm/predictive.hpp"
#include "nodetherm/sampler.hpp"
#include "nodetherm/simulate.hpp"
#include "nodetherm/topology.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nodetherm;

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << content;
  out.flush();
  if (!out) throw std::runtime_error(path + ": write failed");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error(dir + ": cannot create directory (" + ec.message() + ")");
}

std::vector<double> parse_double_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::string norm(text);
  for (char& ch : norm)
    if (ch == ',') ch = ' ';
  std::istringstream ss(norm);
  std::string tok;
  while (ss >> tok) {
    size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size())
      throw std::runtime_error(std::string(what) + ": '" + tok + "' is not a number");
    out.push_back(v);
  }
  return out;
}

std::string joined_doubles(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += format_double(v[i]);
  }
  return s;
}

// --- simulate ---------------------------------------------------------------

int cmd_simulate(const std::string& layout_path, const std::string& truth_path, uint64_t seed,
                 int workers, const std::string& out_dir) {
  Topology topo = load_layout(layout_path);
  TruthSpec spec =
      truth_path.empty() ? default_truth(topo) : truth_from_json(read_text_file(truth_path), topo);
  SimulatedData sim = simulate_dataset(topo, spec, seed, workers);

  ensure_dir(out_dir);
  const std::string telem = out_dir + "/telemetry.csv";
  const std::string covs = out_dir + "/covariates.csv";
  const std::string truth = out_dir + "/truth.json";
  write_telemetry_csv(telem, sim.table);
  write_covariate_csv(covs, sim.windows);
  write_text_file(truth, truth_to_json(spec, &sim.truth));

  ManifestInfo info;
  info.command = "simulate";
  info.inputs["layout"] = hash_file(layout_path);
  if (!truth_path.empty()) info.inputs["truth"] = hash_file(truth_path);
  info.settings["seed"] = std::to_string(seed);
  info.settings["workers"] = std::to_string(workers);
  write_manifest(out_dir, info, {"telemetry.csv", "covariates.csv", "truth.json"});

  json res;
  res["command"] = "simulate";
  res["nodes"] = topo.S;
  res["observations"] = int64_t(sim.table.node.size());
  res["output_dir"] = out_dir;
  std::cout << res.dump() << "\n";
  return 0;
}

// --- fit ---------------------------------------------------------------------

int cmd_fit(const std::string& config_path) {
  FitSetup setup = parse_fit_config(load_kv_config(config_path));
  Topology topo = load_layout(setup.topology_path);
  Dataset data = load_telemetry(setup.telemetry_path, setup.covariates_path, topo, setup.J);
  Sampler sampler(topo, std::move(data), setup.run);
  PosteriorChain chain = sampler.run();

  ensure_dir(setup.output_dir);
  ManifestInfo info;
  info.command = "fit";
  info.inputs["config"] = hash_file(config_path);
  info.inputs["layout"] = hash_file(setup.topology_path);
  info.inputs["telemetry"] = hash_file(setup.telemetry_path);
  if (!setup.covariates_path.empty())
    info.inputs["covariates"] = hash_file(setup.covariates_path);
  info.settings["workers"] = std::to_string(setup.run.workers);
  info.settings["scenario_horizon_s"] = format_double(setup.scenario_horizon_s);
  info.settings["scenario_spacing_s"] = format_double(setup.scenario_spacing_s);
  info.settings["scenario_noise"] = setup.scenario_noise ? "true" : "false";
  info.settings["scenario_x"] = joined_doubles(setup.scenario_x);
  save_chain(setup.output_dir, chain, info);

  json res;
  res["command"] = "fit";
  res["draws"] = int64_t(chain.draw_count());
  res["output_dir"] = setup.output_dir;
  json acc;
  for (int b = 0; b < int(Block::kCount); ++b) {
    const auto& st = chain.acceptance.post[size_t(b)];
    if (st.proposals) acc[block_name(Block(b))] = st.rate();
  }
  res["acceptance_post"] = acc;
  std::cout << res.dump() << "\n";
  return 0;
}

// --- predict ------------------------------------------------------------------

void write_effect_map(const std::string& path, const Topology& topo,
                      const std::vector<double>& mean, const std::vector<double>& lo,
                      const std::vector<double>& hi) {
  std::ostringstream out;
  out << "format_version,1\n";
  out << "node_id,row,position,column,level,x,y,z,mean,lower95,upper95\n";
  for (int s = 0; s < topo.S; ++s) {
    const auto& nd = topo.nodes[size_t(s)];
    out << (s + 1) << ',' << nd.row << ',' << nd.position << ',' << nd.column << ',' << nd.level
        << ',' << format_double(nd.x) << ',' << format_double(nd.y) << ',' << format_double(nd.z)
        << ',' << format_double(mean[size_t(s)]) << ',' << format_double(lo[size_t(s)]) << ','
        << format_double(hi[size_t(s)]) << '\n';
  }
  write_text_file(path, out.str());
}

int cmd_predict(const std::string& chain_dir, const std::string& layout_path,
                const std::string& out_dir, double horizon_s, double spacing_s,
                const std::string& x_text, int noise_flag, bool gaussian, uint64_t seed,
                int workers) {
  PosteriorChain chain = load_chain(chain_dir);
  Topology topo = load_layout(layout_path);

  // Scenario defaults recorded by the fit that produced the chain.
  Scenario sc;
  {
    json m = json::parse(read_text_file(chain_dir + "/manifest.json"));
    const json& st = m.contains("settings") ? m["settings"] : json::object();
    auto stv = [&](const char* key) -> std::string {
      return st.contains(key) ? st[key].get<std::string>() : std::string();
    };
    if (auto v = stv("scenario_horizon_s"); !v.empty()) sc.horizon_s = std::stod(v);
    if (auto v = stv("scenario_spacing_s"); !v.empty()) sc.spacing_s = std::stod(v);
    if (auto v = stv("scenario_noise"); !v.empty()) sc.include_noise = v == "true";
    if (auto v = stv("scenario_x"); !v.empty()) sc.x = parse_double_list(v, "scenario_x");
  }
  if (sc.x.empty() && chain.J > 0) sc.x.assign(size_t(chain.J), 0.0);
  if (horizon_s > 0) sc.horizon_s = horizon_s;
  if (spacing_s > 0) sc.spacing_s = spacing_s;
  if (!x_text.empty()) sc.x = parse_double_list(x_text, "--x");
  if (noise_flag >= 0) sc.include_noise = noise_flag != 0;
  sc.gaussian_body = gaussian;
  sc.seed = seed;
  sc.workers = workers;

  PredictiveSummary som = state_of_machine(chain, topo, sc);

  ensure_dir(out_dir);
  {
    json res;
    res["format_version"] = 1;
    res["global_bound_c"] = som.global_bound;
    res["draws_used"] = som.draws_used;
    res["grid_points"] = sc.grid_points();
    res["horizon_s"] = sc.horizon_s;
    res["spacing_s"] = sc.spacing_s;
    res["include_noise"] = sc.include_noise;
    res["gaussian_body"] = sc.gaussian_body || chain.gaussian_body;
    res["x"] = sc.x;
    res["seed"] = sc.seed;
    write_text_file(out_dir + "/som.json", res.dump(2) + "\n");
  }
  {
    std::ostringstream out;
    out << "format_version,1\nnode_id,bound_c\n";
    for (int s = 0; s < topo.S; ++s)
      out << (s + 1) << ',' << format_double(som.per_node_bound[size_t(s)]) << '\n';
    write_text_file(out_dir + "/node_bounds.csv", out.str());
  }
  {
    std::ostringstream out;
    out << "format_version,1\ndraw,iteration,max_c\n";
    for (size_t m = 0; m < som.draw_max.size(); ++m)
      out << m << ',' << chain.draws[m].iteration << ',' << format_double(som.draw_max[m])
          << '\n';
    write_text_file(out_dir + "/draw_maxima.csv", out.str());
  }
  std::vector<std::string> outputs = {"som.json", "node_bounds.csv", "draw_maxima.csv"};
  for (int j = 0; j <= chain.J; ++j) {
    const std::string name = "effect_map_" + std::to_string(j) + ".csv";
    write_effect_map(out_dir + "/" + name, topo, effect_map(chain, j, EffectKind::kMean),
                     effect_map(chain, j, EffectKind::kLower95),
                     effect_map(chain, j, EffectKind::kUpper95));
    outputs.push_back(name);
  }

  ManifestInfo info;
  info.command = "predict";
  info.inputs["layout"] = hash_file(layout_path);
  info.inputs["chain.csv"] = hash_file(chain_dir + "/chain.csv");
  info.inputs["beta_draws.bin"] = hash_file(chain_dir + "/beta_draws.bin");
  info.inputs["delta_mean.bin"] = hash_file(chain_dir + "/delta_mean.bin");
  info.settings["horizon_s"] = format_double(sc.horizon_s);
  info.settings["spacing_s"] = format_double(sc.spacing_s);
  info.settings["include_noise"] = sc.include_noise ? "true" : "false";
  info.settings["gaussian_body"] = sc.gaussian_body ? "true" : "false";
  info.settings["x"] = joined_doubles(sc.x);
  info.settings["seed"] = std::to_string(sc.seed);
  info.settings["workers"] = std::to_string(sc.workers);
  write_manifest(out_dir, info, outputs);

  json res;
  res["command"] = "predict";
  res["global_bound_c"] = som.global_bound;
  res["draws_used"] = som.draws_used;
  res["output_dir"] = out_dir;
  std::cout << res.dump() << "\n";
  return 0;
}

// --- diagnose -----------------------------------------------------------------

int cmd_diagnose(const std::string& chain_dir, const std::string& layout_path,
                 const std::string& out_dir, int n_sim, uint64_t seed, int workers,
                 double max_lag_minutes, int bins, double max_distance_m, double chi_max,
                 double chi_step) {
  PosteriorChain chain = load_chain(chain_dir);
  Topology topo = load_layout(layout_path);
  if (chain.S != topo.S)
    throw std::runtime_error("diagnose: chain and layout disagree on the node count");
  FittedResiduals fr = fitted_residuals(chain);

  if (max_distance_m <= 0) {
    for (int a = 0; a < topo.S; ++a)
      for (int b = a + 1; b < topo.S; ++b)
        max_distance_m = std::max(max_distance_m, topo.distance(a, b));
    max_distance_m *= 1.0001;  // keep the diameter pair inside the last bin
  }
  std::vector<double> c_grid;
  for (double c = 0.0; c <= chi_max + 1e-12; c += chi_step) c_grid.push_back(c);

  DensityOverlay dens = density_overlay(fr);
  QqData qq = qq_data(fr);
  Correlogram tc = time_correlogram(fr, chain.grid, max_lag_minutes);
  Covariogram sc = spatial_covariogram(fr, chain.grid, topo, bins, max_distance_m);
  ChiCurve chi_t = tail_dependence(fr, chain.grid, topo, ChiMode::kTime, c_grid, n_sim, seed,
                                   workers);
  ChiCurve chi_s = tail_dependence(fr, chain.grid, topo, ChiMode::kSpace, c_grid, n_sim, seed,
                                   workers);

  ensure_dir(out_dir);
  {
    std::ostringstream out;
    out << "format_version,1\nnode_id,epoch_s,minutes,delta_hat,z_hat\n";
    for (int s = 0; s < chain.S; ++s) {
      const auto& t = chain.grid[size_t(s)].t;
      for (size_t i = 0; i < t.size(); ++i)
        out << (s + 1) << ',' << format_double(chain.t0 + 60.0 * t[i]) << ','
            << format_double(t[i]) << ',' << format_double(fr.delta_hat[size_t(s)][i]) << ','
            << format_double(fr.z_hat[size_t(s)][i]) << '\n';
    }
    write_text_file(out_dir + "/residuals.csv", out.str());
  }
  {
    std::ostringstream out;
    out << "format_version,1\ndelta,kde,model\n";
    for (size_t i = 0; i < dens.grid.size(); ++i)
      out << format_double(dens.grid[i]) << ',' << format_double(dens.kde[i]) << ','
          << format_double(dens.model[i]) << '\n';
    write_text_file(out_dir + "/density.csv", out.str());
  }
  {
    std::ostringstream out;
    out << "format_version,1\np,sample,model\n";
    for (size_t i = 0; i < qq.p.size(); ++i)
      out << format_double(qq.p[i]) << ',' << format_double(qq.sample[i]) << ','
          << format_double(qq.model[i]) << '\n';
    write_text_file(out_dir + "/qq.csv", out.str());
  }
  {
    std::ostringstream out;
    out << "format_version,1\nlag_minutes,corr,theory,pairs\n";
    for (size_t i = 0; i < tc.lag.size(); ++i)
      out << format_double(tc.lag[i]) << ',' << format_double(tc.corr[i]) << ','
          << format_double(tc.theory[i]) << ',' << tc.pairs[i] << '\n';
    write_text_file(out_dir + "/time_correlogram.csv", out.str());
  }
  {
    std::ostringstream out;
    out << "format_version,1\ndistance_m,corr,pairs\n";
    for (size_t i = 0; i < sc.distance.size(); ++i)
      out << format_double(sc.distance[i]) << ',' << format_double(sc.corr[i]) << ','
          << sc.pairs[i] << '\n';
    write_text_file(out_dir + "/spatial_covariogram.csv", out.str());
  }
  auto write_chi = [&](const std::string& path, const ChiCurve& cc) {
    std::ostringstream out;
    out << "format_version,1\nc,empirical,theory,band_lo,band_hi,pairs\n";
    for (size_t i = 0; i < cc.c.size(); ++i)
      out << format_double(cc.c[i]) << ',' << format_double(cc.empirical[i]) << ','
          << format_double(cc.theory[i]) << ',' << format_double(cc.band_lo[i]) << ','
          << format_double(cc.band_hi[i]) << ',' << cc.pairs[i] << '\n';
    write_text_file(path, out.str());
  };
  write_chi(out_dir + "/chi_time.csv", chi_t);
  write_chi(out_dir + "/chi_space.csv", chi_s);
  {
    json res;
    res["format_version"] = 1;
    res["upsilon2"] = fr.upsilon2;
    res["kappa"] = fr.kappa;
    res["xi"] = fr.xi;
    res["theta"] = fr.theta;
    res["gaussian_body"] = fr.gaussian_body;
    res["kde_bandwidth"] = dens.bandwidth;
    res["pooled_n"] = dens.n;
    res["time_bin_minutes"] = tc.bin_width;
    res["space_bin_m"] = sc.bin_width;
    res["space_time_tol_minutes"] = sc.time_tol_minutes;
    res["chi_time_rho"] = chi_t.rho;
    res["chi_time_pairs"] = chi_t.pair_count;
    res["chi_space_rho"] = chi_s.rho;
    res["chi_space_pairs"] = chi_s.pair_count;
    res["n_sim"] = n_sim;
    write_text_file(out_dir + "/summary.json", res.dump(2) + "\n");
  }

  ManifestInfo info;
  info.command = "diagnose";
  info.inputs["layout"] = hash_file(layout_path);
  info.inputs["chain.csv"] = hash_file(chain_dir + "/chain.csv");
  info.inputs["beta_draws.bin"] = hash_file(chain_dir + "/beta_draws.bin");
  info.inputs["delta_mean.bin"] = hash_file(chain_dir + "/delta_mean.bin");
  info.settings["n_sim"] = std::to_string(n_sim);
  info.settings["seed"] = std::to_string(seed);
  info.settings["workers"] = std::to_string(workers);
  info.settings["max_lag_minutes"] = format_double(max_lag_minutes);
  info.settings["bins"] = std::to_string(bins);
  info.settings["max_distance_m"] = format_double(max_distance_m);
  info.settings["chi_max"] = format_double(chi_max);
  info.settings["chi_step"] = format_double(chi_step);
  write_manifest(out_dir, info,
                 {"residuals.csv", "density.csv", "qq.csv", "time_correlogram.csv",
                  "spatial_covariogram.csv", "chi_time.csv", "chi_space.csv", "summary.json"});

  json res;
  res["command"] = "diagnose";
  res["chi_time_rho"] = chi_t.rho;
  res["chi_space_rho"] = chi_s.rho;
  res["output_dir"] = out_dir;
  std::cout << res.dump() << "\n";
  return 0;
}

// --- topology-stats -------------------------------------------------------------

int cmd_topology_stats(const std::string& layout_path) {
  Topology topo = load_layout(layout_path);
  SparsePrecision q = build_car_pattern(topo);
  std::vector<int32_t> ident(size_t(topo.S));
  for (int i = 0; i < topo.S; ++i) ident[size_t(i)] = i;
  std::vector<int32_t> perm = band_reduce_permutation(q, &topo);
  json res;
  res["format_version"] = 1;
  res["nodes"] = topo.S;
  res["neighbor_types"] = topo.L;
  res["pattern_nnz"] = q.nnz();                     // includes the diagonal
  res["off_diagonal_nnz"] = q.nnz() - topo.S;
  res["bandwidth_identity"] = q.bandwidth(ident);
  res["bandwidth_permuted"] = q.bandwidth(perm);
  json pc = json::array();
  for (int l = 1; l <= topo.L; ++l) pc.push_back(topo.pair_count(l));
  res["pair_counts"] = pc;
  std::cout << res.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical spatiotemporal model of machine-room node temperatures"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset at known parameters");
  std::string sim_layout, sim_truth, sim_out;
  uint64_t sim_seed = 1;
  int sim_workers = 1;
  sim->add_option("--layout", sim_layout, "Machine layout file")->required();
  sim->add_option("--truth", sim_truth, "Truth JSON (defaults to the built-in synthetic truth)");
  sim->add_option("--seed", sim_seed, "Random seed");
  sim->add_option("--workers", sim_workers, "Worker threads");
  sim->add_option("--out", sim_out, "Output directory")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "Run the posterior sampler on a telemetry table");
  std::string fit_config;
  fit->add_option("--config", fit_config, "Sectioned key-value configuration file")->required();

  // predict
  auto* pred = app.add_subcommand("predict", "Posterior-predictive machine bounds from a chain");
  std::string pr_chain, pr_layout, pr_out, pr_x;
  double pr_horizon = 0, pr_spacing = 0;
  bool pr_gauss = false;
  int pr_noise = -1;
  uint64_t pr_seed = 1;
  int pr_workers = 1;
  pred->add_option("--chain", pr_chain, "Chain directory written by fit")->required();
  pred->add_option("--layout", pr_layout, "Machine layout file")->required();
  pred->add_option("--out", pr_out, "Output directory")->required();
  pred->add_option("--horizon-seconds", pr_horizon, "Scenario span (default from chain manifest)");
  pred->add_option("--spacing-seconds", pr_spacing, "Scenario grid spacing");
  pred->add_option("--x", pr_x, "Covariate settings, space or comma separated");
  pred->add_flag(
      "--include-noise,!--no-noise",
      [&pr_noise](int64_t count) { pr_noise = count > 0 ? 1 : 0; },
      "Add (or suppress) measurement error in predicted values");
  pred->add_flag("--gaussian-body", pr_gauss, "Use the plain-normal residual marginal");
  pred->add_option("--seed", pr_seed, "Scenario seed (paired across scenarios)");
  pred->add_option("--workers", pr_workers, "Worker threads");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "Residual-assumption diagnostics from a chain");
  std::string dg_chain, dg_layout, dg_out;
  int dg_nsim = 2000, dg_workers = 1, dg_bins = 12;
  uint64_t dg_seed = 1;
  double dg_maxlag = 30.0, dg_maxdist = 0.0, dg_chimax = 3.0, dg_chistep = 0.25;
  diag->add_option("--chain", dg_chain, "Chain directory written by fit")->required();
  diag->add_option("--layout", dg_layout, "Machine layout file")->required();
  diag->add_option("--out", dg_out, "Output directory")->required();
  diag->add_option("--nsim", dg_nsim, "Simulation replicates for the chi bands (>= 1000)");
  diag->add_option("--seed", dg_seed, "Seed for the simulation bands");
  diag->add_option("--workers", dg_workers, "Worker threads");
  diag->add_option("--max-lag-minutes", dg_maxlag, "Correlogram reach");
  diag->add_option("--bins", dg_bins, "Covariogram distance bins");
  diag->add_option("--max-distance-m", dg_maxdist,
                   "Covariogram reach (default: machine diameter)");
  diag->add_option("--chi-max", dg_chimax, "Largest exceedance threshold");
  diag->add_option("--chi-step", dg_chistep, "Threshold spacing");

  // topology-stats
  auto* tstat = app.add_subcommand("topology-stats", "Spatial-precision pattern summary");
  std::string ts_layout;
  tstat->add_option("--layout", ts_layout, "Machine layout file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_layout, sim_truth, sim_seed, sim_workers, sim_out);
    if (fit->parsed()) return cmd_fit(fit_config);
    if (pred->parsed())
      return cmd_predict(pr_chain, pr_layout, pr_out, pr_horizon, pr_spacing, pr_x, pr_noise,
                         pr_gauss, pr_seed, pr_workers);
    if (diag->parsed())
      return cmd_diagnose(dg_chain, dg_layout, dg_out, dg_nsim, dg_seed, dg_workers, dg_maxlag,
                          dg_bins, dg_maxdist, dg_chimax, dg_chistep);
    if (tstat->parsed()) return cmd_topology_stats(ts_layout);
  } catch (const std::exception& e) {
    json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
