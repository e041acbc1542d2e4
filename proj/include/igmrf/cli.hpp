#pragma once

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "json.hpp"

#include "igmrf/config.hpp"
#include "igmrf/design.hpp"
#include "igmrf/diagnostics.hpp"
#include "igmrf/error.hpp"
#include "igmrf/io.hpp"
#include "igmrf/mesh.hpp"
#include "igmrf/sampler.hpp"
#include "igmrf/synth.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace igmrf {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumeric = 3, kExitIo = 4 };

namespace detail {

using nlohmann::json;

inline json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json to_json(const FieldHyperparams& hp) {
  return {{"nu", hp.nu}, {"theta", hp.theta}, {"kappa", hp.kappa}, {"rho", hp.rho}, {"phi", hp.phi}};
}

inline json to_json(const AcceptanceStats& s) {
  const auto one = [](const AcceptanceCounter& c) {
    return json{{"accepted", c.accepted}, {"proposed", c.proposed}, {"rate", c.rate()}};
  };
  return {{"beta", one(s.beta)}, {"gamma", one(s.gamma)}, {"df", one(s.df)}};
}

inline void apply_threads(const RunConfig& cfg) {
  Eigen::setNbThreads(cfg.threads);
#ifdef _OPENMP
  omp_set_num_threads(cfg.threads);
#endif
}

inline std::uint64_t require_seed(const RunConfig& cfg) {
  if (!cfg.seed) throw ConfigError(cfg.command + " needs a seed ([run] seed or --seed)");
  return *cfg.seed;
}

inline void require_file(const std::filesystem::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " path is not configured");
  if (!std::filesystem::is_regular_file(p)) throw ConfigError(what + " file not found: " + p.string());
}

inline std::filesystem::path trace_dir(const RunConfig& cfg) { return cfg.trace.empty() ? cfg.out : cfg.trace; }

}  // namespace detail

/// Generates (or loads) a mesh and writes simulated observations plus the
/// truth they were drawn at.
inline void cmd_simulate(const RunConfig& cfg) {
  using detail::json;
  SynthSpec spec = cfg.synth;
  spec.seed = detail::require_seed(cfg);
  detail::apply_threads(cfg);
  GrainMesh mesh;
  if (cfg.simulate_on_mesh_file) {
    detail::require_file(cfg.mesh, "mesh");
    mesh = load_mesh(cfg.mesh);
  } else {
    mesh = generate_geometry(spec);
    std::ostringstream os;
    write_mesh(os, mesh);
    write_file(cfg.out / "mesh.txt", os.str());
  }
  const SimulatedData data = simulate_data(mesh, spec);
  write_file(cfg.out / "observations.csv", format_observations(data.y));
  write_file(cfg.out / "signal.csv", format_vector_csv("signal", data.signal));
  const SynthTruth& t = spec.truth;
  const json truth = {{"seed", spec.seed},
                      {"geometry", cfg.simulate_on_mesh_file ? std::string("file") : to_string(spec.geometry)},
                      {"elements", mesh.element_count()},
                      {"grains", mesh.grain_count},
                      {"mu", t.mu},
                      {"tau2", t.tau2},
                      {"mu_g", detail::to_json(data.mu_g)},
                      {"sigma2", t.sigma2},
                      {"df", t.df},
                      {"hp_beta", detail::to_json(t.beta)},
                      {"hp_gamma", detail::to_json(t.gamma)},
                      {"beta", detail::to_json(data.beta)},
                      {"gamma", detail::to_json(data.gamma)}};
  write_file(cfg.out / "truth.json", truth.dump(2) + "\n");
}

/// Runs the configured chain and writes the trace, field snapshots, posterior
/// mean fit and a manifest.
inline TraceRecord cmd_fit(const RunConfig& cfg) {
  using detail::json;
  const std::uint64_t seed = detail::require_seed(cfg);
  detail::require_file(cfg.mesh, "mesh");
  detail::require_file(cfg.observations, "observation");
  detail::apply_threads(cfg);
  const GrainMesh mesh = load_mesh(cfg.mesh);
  const BoundaryGeometry bg = extract_boundaries(mesh);
  Eigen::VectorXd y = load_observations(cfg.observations, static_cast<int>(mesh.element_count()));
  DesignOptions design = cfg.design;
  design.threads = cfg.threads;
  auto input = std::make_shared<const ChainInput>(make_chain_input(mesh, bg, std::move(y), design));
  ChainConfig chain = cfg.chain;
  chain.seed = seed;

  // Fail on an unwritable output directory before spending time sampling.
  write_file(cfg.out / "manifest.json", "{}\n");
  TraceRecord trace;
  try {
    trace = run_chain(input, cfg.prior, chain);
  } catch (const ChainFailure& e) {
    write_file(cfg.out / "state_dump.json", e.dump() + "\n");
    throw;
  }

  const std::string trace_text = format_trace(trace);
  write_file(cfg.out / "trace.csv", trace_text);
  write_file(cfg.out / "beta_fields.csv", format_snapshots(trace.field_iterations, trace.beta_snapshots));
  write_file(cfg.out / "gamma_fields.csv", format_snapshots(trace.field_iterations, trace.gamma_snapshots));
  write_file(cfg.out / "omega_fields.csv", format_snapshots(trace.field_iterations, trace.omega_snapshots));
  if (trace.fitted_mean.size() > 0) write_file(cfg.out / "fitted_mean.csv", format_vector_csv("fitted", trace.fitted_mean));

  const std::string settings = canonical_fit_settings(cfg);
  json manifest = {
      {"tool", "igmrf"},
      {"version", kVersion},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"config_hash", hex64(fnv1a(settings))},
      {"settings", settings},
      {"seed", seed},
      {"threads", cfg.threads},
      {"elements", mesh.element_count()},
      {"grains", mesh.grain_count},
      {"dim_beta", input->dim_beta()},
      {"dim_gamma", input->dim_gamma()},
      {"iterations", trace.iterations},
      {"retained", trace.scalars.size()},
      {"snapshots", trace.field_iterations.size()},
      {"trace_hash", hex64(fnv1a(trace_text))},
      {"acceptance",
       {{"adaptation", detail::to_json(trace.acceptance_adaptation)},
        {"burn_in", detail::to_json(trace.acceptance_burn_in)},
        {"sampling", detail::to_json(trace.acceptance_sampling)}}},
      {"final_proposal_scale",
       {{"beta_trace", trace.final_proposal_beta.trace()},
        {"gamma_trace", trace.final_proposal_gamma.trace()},
        {"df", trace.final_proposal_df}}},
      {"residual_audit",
       {{"audits", trace.audits},
        {"violations", trace.audit_violations},
        {"max_relative_discrepancy", trace.max_audit_discrepancy}}},
      {"timings_seconds",
       {{"adaptation", trace.seconds_adaptation},
        {"burn_in", trace.seconds_burn_in},
        {"sampling", trace.seconds_sampling}}}};
  write_file(cfg.out / "manifest.json", manifest.dump(2) + "\n");
  return trace;
}

/// Reads a fit's outputs, checks them against the manifest and the current
/// config, and writes the goodness-of-fit report.
inline FitReport cmd_diagnose(const RunConfig& cfg) {
  using detail::json;
  const std::filesystem::path dir = detail::trace_dir(cfg);
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.contains("config_hash") || !manifest.contains("seed") || !manifest.contains("trace_hash")) {
    throw IoError("manifest is incomplete (was the fit interrupted?)");
  }
  const std::string hash = hex64(fnv1a(canonical_fit_settings(cfg)));
  if (manifest["config_hash"].get<std::string>() != hash) {
    throw ConfigError("config hash " + hash + " differs from the manifest's " + manifest["config_hash"].get<std::string>());
  }
  if (cfg.seed && manifest["seed"].get<std::uint64_t>() != *cfg.seed) {
    throw ConfigError("seed differs from the manifest's");
  }

  const std::string trace_text = read_file(dir / "trace.csv");
  const ScalarTrace trace = parse_trace(trace_text);
  if (hex64(fnv1a(trace_text)) != manifest["trace_hash"].get<std::string>() ||
      trace.rows.size() != manifest["retained"].get<std::size_t>()) {
    throw IoError("trace integrity check failed: trace.csv does not match the manifest");
  }
  if (trace.rows.empty()) throw NumericError("trace has no retained samples to diagnose");

  detail::require_file(cfg.mesh, "mesh");
  detail::require_file(cfg.observations, "observation");
  const GrainMesh mesh = load_mesh(cfg.mesh);
  const BoundaryGeometry bg = extract_boundaries(mesh);
  const Eigen::VectorXd y = load_observations(cfg.observations, static_cast<int>(mesh.element_count()));

  FitReport report;
  report.p_effective = mesh.grain_count + bg.dim_beta() + bg.dim_gamma();
  Eigen::VectorXd fitted(y.size());
  {
    const std::string text = read_file(dir / "fitted_mean.csv");
    const Snapshots s = parse_snapshots(text, "fitted mean");  // element_id,fitted rows
    if (static_cast<Eigen::Index>(s.values.size()) != y.size()) throw IoError("fitted_mean.csv has the wrong length");
    for (std::size_t m = 0; m < s.values.size(); ++m) fitted[static_cast<Eigen::Index>(m)] = s.values[m][0];
  }
  report.r2_adj_constant = r2_adjusted(y, fitted, report.p_effective, R2Baseline::constant);
  report.r2_adj_grain = r2_adjusted(y, fitted, report.p_effective, R2Baseline::grain_means, mesh.grain_of_element);

  // Residual diagnostics at the last stored field snapshot.
  const Snapshots beta = parse_snapshots(read_file(dir / "beta_fields.csv"), "beta");
  const Snapshots gamma = parse_snapshots(read_file(dir / "gamma_fields.csv"), "gamma");
  const Snapshots omega = parse_snapshots(read_file(dir / "omega_fields.csv"), "omega");
  if (beta.values.empty() || beta.values.size() != gamma.values.size() || beta.values.size() != omega.values.size()) {
    throw IoError("field snapshot files are missing rows or disagree in length");
  }
  const long it = beta.iterations.back();
  const std::vector<double>* row = nullptr;
  for (const auto& r : trace.rows) {
    if (static_cast<long>(r[0]) == it) row = &r;
  }
  if (!row) throw IoError("snapshot iteration " + std::to_string(it) + " is not in the scalar trace");
  const auto col = [&](const std::string& name) { return (*row)[trace.column(name)]; };
  Eigen::VectorXd mu_g(mesh.grain_count);
  for (int g = 1; g <= mesh.grain_count; ++g) mu_g[g - 1] = col("mu_" + std::to_string(g));
  const KernelDesign design = build_design(mesh, bg, col("phi_beta"), col("phi_gamma"), cfg.design);
  report.iteration = static_cast<int>(it);
  report.residuals = y - expand_grain_means(mu_g, mesh.grain_of_element) - apply(design, beta.values.back(), gamma.values.back());
  report.standardized = standardized_residuals(report.residuals, omega.values.back(), col("sigma2"));

  std::vector<double> column(trace.rows.size());
  for (std::size_t c = 1; c < trace.names.size(); ++c) {
    for (std::size_t k = 0; k < trace.rows.size(); ++k) column[k] = trace.rows[k][c];
    report.traces.push_back(summarize_trace(trace.names[c], column));
  }
  const std::vector<double> distances = boundary_distances(mesh, bg);
  report.profile = boundary_distance_profile(distances, {y}, cfg.profile_bins);
  const auto residual_profile = boundary_distance_profile(distances, {report.residuals}, cfg.profile_bins);

  const auto num = [](double x) -> json { return std::isfinite(x) ? json(x) : json(nullptr); };
  json summaries = json::array();
  std::string summary_csv = "name,mean,sd,q05,q50,q95,lag1\n";
  for (const auto& s : report.traces) {
    summaries.push_back({{"name", s.name}, {"mean", num(s.mean)}, {"sd", num(s.sd)}, {"q05", num(s.q05)},
                         {"q50", num(s.q50)}, {"q95", num(s.q95)}, {"lag1", num(s.lag1)}});
    summary_csv += s.name;
    for (double v : {s.mean, s.sd, s.q05, s.q50, s.q95, s.lag1}) summary_csv += "," + format_double(v);
    summary_csv += "\n";
  }
  std::string profile_csv = "lower,upper,center,count,sd_observed,sd_residual\n";
  for (std::size_t b = 0; b < report.profile.size(); ++b) {
    const auto& p = report.profile[b];
    profile_csv += format_double(p.lower) + "," + format_double(p.upper) + "," + format_double(p.center) + "," +
                   std::to_string(p.count) + "," + format_double(p.sd) + "," + format_double(residual_profile[b].sd) + "\n";
  }
  std::string residual_csv = "element_id,residual,standardized\n";
  for (Eigen::Index m = 0; m < y.size(); ++m) {
    residual_csv += std::to_string(m) + "," + format_double(report.residuals[m]) + "," + format_double(report.standardized[m]) + "\n";
  }
  const json out = {{"config_hash", hash},
                    {"seed", manifest["seed"]},
                    {"retained", trace.rows.size()},
                    {"p_effective", report.p_effective},
                    {"r2_adj_constant", num(report.r2_adj_constant)},
                    {"r2_adj_grain", num(report.r2_adj_grain)},
                    {"residual_iteration", it},
                    {"standardized_residual_sd", num(std::sqrt((report.standardized.array() - report.standardized.mean()).square().sum() /
                                                               std::max<double>(1.0, static_cast<double>(y.size() - 1))))},
                    {"acceptance", manifest.value("acceptance", json::object())},
                    {"traces", summaries}};
  write_file(cfg.out / "report.json", out.dump(2) + "\n");
  write_file(cfg.out / "trace_summary.csv", summary_csv);
  write_file(cfg.out / "distance_profile.csv", profile_csv);
  write_file(cfg.out / "residuals.csv", residual_csv);
  return report;
}

/// Loads and validates a mesh; prints a JSON summary of its boundary structure.
inline void cmd_validate_mesh(const RunConfig& cfg, std::ostream& out) {
  using detail::json;
  if (cfg.mesh.empty()) throw ConfigError("validate-mesh needs a mesh path ([run] mesh or --mesh)");
  if (!std::filesystem::is_regular_file(cfg.mesh)) throw IoError("mesh file not found: " + cfg.mesh.string());
  const GrainMesh mesh = load_mesh(cfg.mesh);
  const BoundaryGeometry bg = extract_boundaries(mesh);
  const FieldGraphs graphs = build_neighborhoods(mesh, bg);
  json grains = json::array();
  for (int g = 1; g <= mesh.grain_count; ++g) {
    grains.push_back({{"grain", g}, {"second_order_nodes", bg.second.count_in(g)}, {"third_order_nodes", bg.third.count_in(g)}});
  }
  const auto bound = [](const NeighborhoodGraph& graph) -> json {
    const RhoBounds b = rho_bounds(graph);
    return b.bounded_below ? json(b.lower) : json(nullptr);
  };
  const json summary = {{"nodes", mesh.nodes.size()},
                        {"elements", mesh.element_count()},
                        {"grains", mesh.grain_count},
                        {"dim_beta", bg.dim_beta()},
                        {"dim_gamma", bg.dim_gamma()},
                        {"interface_faces", bg.faces.size()},
                        {"triple_edges", bg.edges.size()},
                        {"rho_lower_beta", bound(graphs.beta)},
                        {"rho_lower_gamma", bound(graphs.gamma)},
                        {"per_grain", grains}};
  out << summary.dump(2) << "\n";
}

/// Entry point of the `igmrf` executable; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Integrated GMRF inference on grain-boundary meshes"};
  app.require_subcommand(1);
  std::string config_path, out_dir, mesh_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] :
       std::vector<std::pair<std::string, std::string>>{{"simulate", "simulate a dataset from a synthetic geometry"},
                                                        {"fit", "run the MCMC on a mesh and observations"},
                                                        {"diagnose", "goodness-of-fit report from a finished fit"},
                                                        {"validate-mesh", "check a mesh and summarise its boundaries"}}) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "INI run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed (overrides [run] seed)");
    sub->add_option("--threads", threads, "thread count for linear algebra")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "output directory (overrides [run] out)");
    sub->add_option("--mesh", mesh_path, "mesh file (overrides [run] mesh)");
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (CLI::App* sub : subs) {
      if (sub->parsed()) cfg.command = sub->get_name();
    }
    if (cfg.command != "validate-mesh" && config_path.empty()) throw ConfigError(cfg.command + " needs --config");
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (!out_dir.empty()) cfg.out = out_dir;
    if (!mesh_path.empty()) cfg.mesh = mesh_path;

    if (cfg.command == "simulate") {
      cmd_simulate(cfg);
      out << "wrote dataset to " << cfg.out.string() << "\n";
    } else if (cfg.command == "fit") {
      const TraceRecord t = cmd_fit(cfg);
      out << "wrote " << t.scalars.size() << " retained samples to " << cfg.out.string() << "\n";
    } else if (cfg.command == "diagnose") {
      const FitReport r = cmd_diagnose(cfg);
      out << "R2_adj constant=" << r.r2_adj_constant << " grain=" << r.r2_adj_grain << "\n";
    } else {
      cmd_validate_mesh(cfg, out);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MeshError& e) {
    err << "mesh error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace igmrf
