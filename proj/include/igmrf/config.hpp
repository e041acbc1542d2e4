#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "igmrf/error.hpp"
#include "igmrf/model.hpp"
#include "igmrf/sampler.hpp"
#include "igmrf/synth.hpp"

namespace igmrf {

/// Everything one CLI invocation needs. Paths are absolute after loading
/// (relative ones are resolved against the config file's directory).
struct RunConfig {
  std::string command;
  std::filesystem::path config_path;
  std::filesystem::path mesh;
  std::filesystem::path observations;
  std::filesystem::path out = "out";
  std::filesystem::path trace;         // diagnose input directory; defaults to `out`
  std::optional<std::uint64_t> seed;
  int threads = 1;
  SynthSpec synth;
  bool simulate_on_mesh_file = false;  // [synth] geometry = file: simulate on [run] mesh
  PriorConfig prior;
  ChainConfig chain;
  int profile_bins = 8;
  DesignOptions design;
};

namespace detail {

using Tree = boost::property_tree::ptree;

template <class T>
T parse_value(const std::string& section, const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("[" + section + "] " + key + ": expected true/false, got `" + text + "`");
  } else {
    in >> value;
    std::string rest;
    if (in.fail() || (in >> rest)) throw ConfigError("[" + section + "] " + key + ": cannot parse `" + text + "`");
  }
  return value;
}

/// Reads keys of one section, rejecting any key nobody asked for.
class SectionReader {
 public:
  SectionReader(const Tree& root, std::string name) : name_(std::move(name)) {
    if (const auto child = root.get_child_optional(name_)) tree_ = &*child;
  }

  template <class T>
  void read(const std::string& key, T& target) {
    seen_.insert(key);
    if (!tree_) return;
    if (const auto v = tree_->get_optional<std::string>(key)) target = parse_value<T>(name_, key, *v);
  }

  std::optional<std::string> text(const std::string& key) {
    seen_.insert(key);
    if (!tree_) return std::nullopt;
    if (const auto v = tree_->get_optional<std::string>(key)) return *v;
    return std::nullopt;
  }

  void finish() const {
    if (!tree_) return;
    for (const auto& [key, value] : *tree_) {
      if (!seen_.count(key)) throw ConfigError("[" + name_ + "] unknown key `" + key + "`");
    }
  }

 private:
  std::string name_;
  const Tree* tree_ = nullptr;
  std::set<std::string> seen_;
};

inline void read_field_truth(SectionReader& s, const std::string& prefix, FieldHyperparams& hp) {
  s.read(prefix + "_nu", hp.nu);
  s.read(prefix + "_theta", hp.theta);
  s.read(prefix + "_kappa", hp.kappa);
  s.read(prefix + "_rho", hp.rho);
  s.read(prefix + "_phi", hp.phi);
}

inline void read_field_prior(SectionReader& s, const std::string& prefix, FieldPrior& p, double median, double mean) {
  s.read(prefix + "_phi_median", median);
  s.read(prefix + "_phi_mean", mean);
  if (!(median > 0.0 && mean > median)) {
    throw ConfigError("[prior] " + prefix + "_phi: need 0 < median < mean for the log-normal prior");
  }
  const RhoPriorRange range = p.rho;
  p = FieldPrior::with_phi_median_mean(median, mean);
  p.rho = range;
  s.read(prefix + "_nu_mean", p.nu_mean);
  s.read(prefix + "_nu_sd", p.nu_sd);
  s.read(prefix + "_theta_shape", p.theta_shape);
  s.read(prefix + "_theta_rate", p.theta_rate);
  s.read(prefix + "_kappa_a", p.kappa_a);
  s.read(prefix + "_kappa_b", p.kappa_b);
  s.read(prefix + "_rho_lower", p.rho.lower);
  s.read(prefix + "_rho_upper", p.rho.upper);
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace detail

/// Parses the INI config (sections [run] [synth] [prior] [chain] [diagnose]).
/// Every key is optional; omitted ones keep the model defaults.
inline RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = ".") {
  detail::Tree root;
  try {
    boost::property_tree::ini_parser::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  for (const auto& [name, child] : root) {
    static const std::set<std::string> known{"run", "synth", "prior", "chain", "diagnose"};
    if (!known.count(name)) throw ConfigError("unknown config section [" + name + "]");
  }
  RunConfig cfg;

  detail::SectionReader run(root, "run");
  if (auto v = run.text("mesh")) cfg.mesh = detail::resolve(base_dir, *v);
  if (auto v = run.text("observations")) cfg.observations = detail::resolve(base_dir, *v);
  if (auto v = run.text("out")) cfg.out = detail::resolve(base_dir, *v);
  if (auto v = run.text("trace")) cfg.trace = detail::resolve(base_dir, *v);
  if (auto v = run.text("seed")) cfg.seed = detail::parse_value<std::uint64_t>("run", "seed", *v);
  run.read("threads", cfg.threads);
  run.read("cache_distances", cfg.design.cache_distances);
  run.read("kernel_truncation", cfg.design.truncation);
  run.finish();

  detail::SectionReader synth(root, "synth");
  if (auto v = synth.text("geometry")) {
    if (*v == "file") {
      cfg.simulate_on_mesh_file = true;
    } else {
      cfg.synth.geometry = parse_geometry_kind(*v);
    }
  }
  synth.read("grains", cfg.synth.grains);
  synth.read("resolution", cfg.synth.resolution);
  synth.read("layers", cfg.synth.layers);
  synth.read("extent", cfg.synth.extent);
  synth.read("mu", cfg.synth.truth.mu);
  synth.read("tau2", cfg.synth.truth.tau2);
  synth.read("sigma2", cfg.synth.truth.sigma2);
  synth.read("df", cfg.synth.truth.df);
  synth.read("draw_fields", cfg.synth.truth.draw_fields);
  detail::read_field_truth(synth, "beta", cfg.synth.truth.beta);
  detail::read_field_truth(synth, "gamma", cfg.synth.truth.gamma);
  synth.finish();

  detail::SectionReader prior(root, "prior");
  if (auto v = prior.text("mu_mean")) {
    cfg.prior.mu_mean = detail::parse_value<double>("prior", "mu_mean", *v);
    cfg.prior.mu_mean_from_data = false;
  }
  prior.read("mu_sd", cfg.prior.mu_sd);
  prior.read("tau2_shape", cfg.prior.tau2_shape);
  prior.read("tau2_scale", cfg.prior.tau2_scale);
  prior.read("sigma2_shape", cfg.prior.sigma2_shape);
  prior.read("sigma2_scale", cfg.prior.sigma2_scale);
  prior.read("df_min", cfg.prior.df_min);
  prior.read("df_max", cfg.prior.df_max);
  detail::read_field_prior(prior, "beta", cfg.prior.beta, 0.6, 0.8);
  detail::read_field_prior(prior, "gamma", cfg.prior.gamma, 0.8, 1.0);
  prior.finish();

  detail::SectionReader chain(root, "chain");
  chain.read("adapt_blocks", cfg.chain.adapt_blocks);
  chain.read("adapt_block_size", cfg.chain.adapt_block_size);
  chain.read("burn_in", cfg.chain.burn_in);
  chain.read("samples", cfg.chain.samples);
  chain.read("thin", cfg.chain.thin);
  chain.read("target_acceptance", cfg.chain.target_acceptance);
  if (auto v = chain.text("subblock_scheme")) {
    if (*v == "per-grain") {
      cfg.chain.scheme = SubblockScheme::per_grain;
    } else if (*v == "fixed-size") {
      cfg.chain.scheme = SubblockScheme::fixed_size;
    } else {
      throw ConfigError("[chain] subblock_scheme: expected per-grain or fixed-size, got `" + *v + "`");
    }
  }
  chain.read("subblock_size", cfg.chain.subblock_size);
  double var_beta = cfg.chain.proposal_beta(0, 0), var_gamma = cfg.chain.proposal_gamma(0, 0);
  chain.read("proposal_beta", var_beta);
  chain.read("proposal_gamma", var_gamma);
  cfg.chain.proposal_beta = var_beta * MatrixXd::Identity(4, 4);
  cfg.chain.proposal_gamma = var_gamma * MatrixXd::Identity(4, 4);
  chain.read("proposal_df", cfg.chain.proposal_df);
  chain.read("field_stride", cfg.chain.field_stride);
  chain.read("audit_residual", cfg.chain.audit_residual);
  chain.finish();

  detail::SectionReader diag(root, "diagnose");
  diag.read("bins", cfg.profile_bins);
  diag.finish();

  if (cfg.threads < 1) throw ConfigError("[run] threads must be positive");
  if (cfg.profile_bins < 1) throw ConfigError("[diagnose] bins must be positive");
  if (!(cfg.prior.df_min >= 0.0 && cfg.prior.df_max > cfg.prior.df_min)) {
    throw ConfigError("[prior] need 0 <= df_min < df_max");
  }
  cfg.chain.validate();
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  RunConfig cfg = parse_config(in, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
  cfg.config_path = path;
  return cfg;
}

/// Canonical `key=value` listing of every setting that influences a fit,
/// with doubles at round-trip precision. Its hash identifies the run.
inline std::string canonical_fit_settings(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  const auto num = [](double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
  };
  kv["run.mesh"] = cfg.mesh.filename().string();
  kv["run.observations"] = cfg.observations.filename().string();
  kv["run.seed"] = cfg.seed ? std::to_string(*cfg.seed) : "unset";
  kv["run.kernel_truncation"] = num(cfg.design.truncation);
  const PriorConfig& p = cfg.prior;
  kv["prior.mu_mean"] = p.mu_mean_from_data ? "data" : num(p.mu_mean);
  kv["prior.mu_sd"] = num(p.mu_sd);
  kv["prior.tau2"] = num(p.tau2_shape) + "," + num(p.tau2_scale);
  kv["prior.sigma2"] = num(p.sigma2_shape) + "," + num(p.sigma2_scale);
  kv["prior.df"] = num(p.df_min) + "," + num(p.df_max);
  for (const auto& [name, f] : {std::pair<std::string, const FieldPrior*>{"beta", &p.beta}, {"gamma", &p.gamma}}) {
    kv["prior." + name] = num(f->phi_log_median) + "," + num(f->phi_log_variance) + "," + num(f->nu_mean) + "," +
                          num(f->nu_sd) + "," + num(f->theta_shape) + "," + num(f->theta_rate) + "," +
                          num(f->kappa_a) + "," + num(f->kappa_b) + "," + num(f->rho.lower) + "," + num(f->rho.upper);
  }
  const ChainConfig& c = cfg.chain;
  kv["chain.schedule"] = std::to_string(c.adapt_blocks) + "x" + std::to_string(c.adapt_block_size) + "," +
                         std::to_string(c.burn_in) + "," + std::to_string(c.samples) + "/" + std::to_string(c.thin);
  kv["chain.target_acceptance"] = num(c.target_acceptance);
  kv["chain.subblocks"] = (c.scheme == SubblockScheme::per_grain ? "per-grain" : "fixed-size:" + std::to_string(c.subblock_size));
  kv["chain.proposals"] = num(c.proposal_beta(0, 0)) + "," + num(c.proposal_gamma(0, 0)) + "," + num(c.proposal_df);
  kv["chain.field_stride"] = std::to_string(c.field_stride);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

}  // namespace igmrf
