#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <boost/math/special_functions/beta.hpp>

#include "igmrf/densities.hpp"
#include "igmrf/design.hpp"
#include "igmrf/diagnostics.hpp"
#include "igmrf/error.hpp"
#include "igmrf/gmrf.hpp"
#include "igmrf/mesh.hpp"
#include "igmrf/model.hpp"
#include "igmrf/rng.hpp"

namespace igmrf {

using Eigen::MatrixXd;

enum class FieldId { beta, gamma };

inline const char* to_string(FieldId f) { return f == FieldId::beta ? "beta" : "gamma"; }

enum class SubblockScheme { per_grain, fixed_size };

/// Components a sweep updates; frozen components keep their current value.
struct UpdateMask {
  bool beta_field = true;   // joint (alpha_beta, beta) move
  bool gamma_field = true;  // joint (alpha_gamma, gamma) move
  bool nu = true;
  bool mu_g = true;
  bool mu = true;
  bool tau2 = true;
  bool sigma2 = true;
  bool omega = true;
  bool df = true;
};

struct ChainConfig {
  int adapt_blocks = 20;
  int adapt_block_size = 500;
  int burn_in = 5000;
  int samples = 15000;
  int thin = 5;
  double target_acceptance = 0.234;
  SubblockScheme scheme = SubblockScheme::per_grain;
  int subblock_size = 200;  // for SubblockScheme::fixed_size
  MatrixXd proposal_beta = 0.01 * MatrixXd::Identity(4, 4);  // initial covariance of the alpha_beta step
  MatrixXd proposal_gamma = 0.01 * MatrixXd::Identity(4, 4);
  double proposal_df = 0.04;  // initial variance of the ln(df) step
  std::uint64_t seed = 1;
  int field_stride = 25;  // full fields stored every field_stride-th retained sample
  bool audit_residual = false;
  double audit_tolerance = 1e-10;  // relative to max |y|
  UpdateMask updates;

  void validate() const {
    const auto fail = [](const std::string& what) { throw ConfigError("chain config: " + what); };
    if (adapt_blocks < 0 || burn_in < 0 || samples < 0) fail("iteration counts must be non-negative");
    if (adapt_blocks > 0 && adapt_block_size < 1) fail("adaptation block size must be positive");
    if (thin < 1) fail("thinning must be positive");
    if (samples % thin != 0) fail("thinning (" + std::to_string(thin) + ") must divide the sampling iterations (" +
                                  std::to_string(samples) + ")");
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) fail("target acceptance must lie in (0, 1)");
    if (subblock_size < 1) fail("subblock size must be positive");
    if (field_stride < 1) fail("field stride must be positive");
    if (proposal_beta.rows() != 4 || proposal_beta.cols() != 4 || proposal_gamma.rows() != 4 ||
        proposal_gamma.cols() != 4) {
      fail("hyperparameter proposal covariances must be 4 x 4");
    }
    if (!(proposal_df >= 0.0)) fail("df proposal variance must be non-negative");
  }

  long adaptation_iterations() const { return static_cast<long>(adapt_blocks) * adapt_block_size; }
  long total_iterations() const { return adaptation_iterations() + burn_in + samples; }
  long retained() const { return samples / thin; }
};

/// Contiguous run of flattened field indices, always inside one grain.
struct Subblock {
  int grain = 1;
  int begin = 0;        // first flattened index
  int size = 0;
  int local_begin = 0;  // first column inside the grain's design block
};

/// Per-grain blocks, or fixed-size chunks that never straddle a grain.
/// Grains without indices contribute no block; order is ascending by grain.
inline std::vector<Subblock> make_subblocks(const BoundarySet& set, SubblockScheme scheme, int chunk = 200) {
  std::vector<Subblock> out;
  for (int g = 1; g <= set.grain_count(); ++g) {
    const int n = set.count_in(g);
    const int step = scheme == SubblockScheme::per_grain ? std::max(n, 1) : std::max(chunk, 1);
    for (int local = 0; local < n; local += step) {
      out.push_back({g, set.offset_of(g) + local, std::min(step, n - local), local});
    }
  }
  return out;
}

/// Full conditional N(mean, precision^{-1}) of one subblock given the rest.
struct SubblockConditional {
  MatrixXd precision;  // X_s^T W X_s + Q_ss
  VectorXd mean;
  Eigen::LLT<MatrixXd> factor;
  double log_det = 0.0;

  double log_density(const VectorXd& x) const {
    const VectorXd u = factor.matrixU() * (x - mean);
    return 0.5 * log_det - 0.5 * static_cast<double>(x.size()) * stats::kLogTwoPi - 0.5 * u.squaredNorm();
  }

  VectorXd draw(CounterRng& rng) const {
    return mean + factor.matrixU().solve(standard_normal_vector(mean.size(), rng));
  }
};

/// Conditional of field_s given field_{-s}, the data and everything else:
///   precision = X_s^T W X_s + Q_ss
///   mean      = precision^{-1} (X_s^T W r_s + nu Q_ss 1 - Q_{s,-s}(field_{-s} - nu 1))
/// where r_s = r + X_s field_s is the residual with this subblock's
/// contribution added back (never formed from the complement).
/// `weights` is diag(W) = 1 / (sigma2 omega).
inline SubblockConditional subblock_conditional(const FieldDesign& X, const PrecisionMatrix& Q, double nu,
                                                const VectorXd& field, const VectorXd& residual,
                                                const VectorXd& weights, const Subblock& s) {
  const int b = s.begin, n = s.size;
  const MatrixXd Xs = X.block(s.grain).middleCols(s.local_begin, n);
  const auto& rows = X.rows_of(s.grain);
  const auto R = static_cast<Eigen::Index>(rows.size());

  VectorXd r_s(R), w(R);
  const VectorXd own = Xs * field.segment(b, n);
  for (Eigen::Index i = 0; i < R; ++i) {
    r_s[i] = residual[rows[static_cast<std::size_t>(i)]] + own[i];
    w[i] = weights[rows[static_cast<std::size_t>(i)]];
  }

  MatrixXd Qss = MatrixXd::Zero(n, n);
  VectorXd coupling = VectorXd::Zero(n);  // Q_{s,-s}(field_{-s} - nu)
  for (int j = b; j < b + n; ++j) {
    for (SparseMatrix::InnerIterator it(Q.matrix, j); it; ++it) {
      const auto i = static_cast<int>(it.row());
      if (i >= b && i < b + n) {
        Qss(i - b, j - b) = it.value();
      } else {
        coupling[j - b] += it.value() * (field[i] - nu);
      }
    }
  }

  SubblockConditional c;
  const MatrixXd WXs = w.asDiagonal() * Xs;
  c.precision = Xs.transpose() * WXs + Qss;
  c.precision = 0.5 * (c.precision + c.precision.transpose()).eval();
  const VectorXd rhs = WXs.transpose() * r_s + nu * (Qss * VectorXd::Ones(n)) - coupling;
  c.factor.compute(c.precision);
  if (c.factor.info() != Eigen::Success) throw NumericError("subblock conditional precision is not positive definite");
  c.log_det = 2.0 * c.factor.matrixLLT().diagonal().array().log().sum();
  if (!std::isfinite(c.log_det)) throw NumericError("subblock conditional precision is singular");
  c.mean = c.factor.solve(rhs);
  return c;
}

/// Random-walk proposal covariance exp(2 log_scale) * shape.
struct ProposalTuning {
  MatrixXd shape;
  double log_scale = 0.0;
  bool adaptive = true;    // false freezes the covariance (e.g. a zero proposal)
  bool empirical = false;  // shape already estimated from chain history

  MatrixXd covariance() const { return std::exp(2.0 * log_scale) * shape; }

  static ProposalTuning from_covariance(const MatrixXd& cov) {
    ProposalTuning t;
    t.shape = cov;
    t.adaptive = cov.cwiseAbs().maxCoeff() > 0.0;
    return t;
  }
};

/// Step-size multiplier Phi^{-1}(target/2) / Phi^{-1}(acceptance/2): < 1 when
/// the acceptance is below target, > 1 above it, 1 on target.
inline double acceptance_multiplier(double acceptance, double target) {
  const double a = std::clamp(acceptance, 0.01, 0.99);
  const double m = stats::normal_quantile(0.5 * target) / stats::normal_quantile(0.5 * a);
  return std::clamp(m, 0.2, 5.0);
}

inline MatrixXd sample_covariance(const std::vector<VectorXd>& xs) {
  const auto d = xs.empty() ? 0 : xs.front().size();
  MatrixXd cov = MatrixXd::Zero(d, d);
  if (xs.size() < 2) return cov;
  VectorXd mean = VectorXd::Zero(d);
  for (const auto& x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  for (const auto& x : xs) cov.noalias() += (x - mean) * (x - mean).transpose();
  return cov / static_cast<double>(xs.size() - 1);
}

/// End-of-block adaptation. The scale moves the acceptance rate towards the
/// target. When `update_shape` is set and the chain made enough accepted
/// moves, the shape takes the orientation of the sample covariance of
/// `history` but keeps the current shape's size (geometric-mean eigenvalue),
/// so step size stays under the acceptance feedback alone.
inline ProposalTuning adapt_proposals(const ProposalTuning& current, const std::vector<VectorXd>& history,
                                      long block_accepted, long block_proposed, double target,
                                      bool update_shape = true) {
  if (!current.adaptive || block_proposed == 0) return current;
  ProposalTuning next = current;
  const double acceptance = static_cast<double>(block_accepted) / static_cast<double>(block_proposed);
  next.log_scale += std::log(acceptance_multiplier(acceptance, target));
  const auto d = current.shape.rows();
  constexpr long kMinAccepted = 20;
  if (!update_shape || block_accepted < kMinAccepted || static_cast<long>(history.size()) <= d + 1) return next;
  MatrixXd cov = sample_covariance(history);
  const double ridge = 1e-10 * std::max(cov.trace() / static_cast<double>(d), 1e-12);
  cov += ridge * MatrixXd::Identity(d, d);
  const auto log_size = [d](const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(m, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().cwiseMax(1e-300).array().log().sum() / static_cast<double>(d);
  };
  const double lc = log_size(cov);
  if (!std::isfinite(lc)) return next;
  next.shape = std::exp(log_size(current.shape) - lc) * cov;
  next.empirical = true;
  return next;
}

/// Symmetric square root of a covariance, with negative eigenvalues clipped.
inline MatrixXd covariance_sqrt(const MatrixXd& cov) {
  if (cov.size() == 0 || cov.cwiseAbs().maxCoeff() == 0.0) return MatrixXd::Zero(cov.rows(), cov.cols());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (cov + cov.transpose()));
  const VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

struct AcceptanceCounter {
  long accepted = 0;
  long proposed = 0;

  void add(bool ok) {
    ++proposed;
    if (ok) ++accepted;
  }
  double rate() const { return proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0; }
};

struct AcceptanceStats {
  AcceptanceCounter beta;
  AcceptanceCounter gamma;
  AcceptanceCounter df;
};

/// y and every mesh-derived structure a chain needs; built once.
struct ChainInput {
  VectorXd y;
  std::vector<int> grain_of_element;
  int grain_count = 0;
  FieldGraphs graphs;
  PrecisionStructure beta_structure;
  PrecisionStructure gamma_structure;
  std::shared_ptr<const DesignGeometry> beta_geometry;
  std::shared_ptr<const DesignGeometry> gamma_geometry;

  int element_count() const { return static_cast<int>(y.size()); }
  int dim_beta() const { return beta_structure.size(); }
  int dim_gamma() const { return gamma_structure.size(); }
  /// mu_g plus both latent field dimensions.
  int effective_parameters() const { return grain_count + dim_beta() + dim_gamma(); }
};

inline ChainInput make_chain_input(const GrainMesh& mesh, const BoundaryGeometry& bg, VectorXd y,
                                   const DesignOptions& options = {}) {
  if (y.size() != static_cast<Eigen::Index>(mesh.element_count())) {
    throw ConfigError("observation count " + std::to_string(y.size()) + " differs from element count " +
                      std::to_string(mesh.element_count()));
  }
  if (!y.allFinite()) throw ConfigError("observations contain non-finite values");
  ChainInput in;
  in.y = std::move(y);
  in.grain_of_element = mesh.grain_of_element;
  in.grain_count = mesh.grain_count;
  in.graphs = build_neighborhoods(mesh, bg);
  in.beta_structure = PrecisionStructure(in.graphs.beta);
  in.gamma_structure = PrecisionStructure(in.graphs.gamma);
  in.beta_geometry = make_design_geometry(mesh, bg.second, options);
  in.gamma_geometry = make_design_geometry(mesh, bg.third, options);
  return in;
}

/// Thinned samples plus bookkeeping of one chain.
struct TraceRecord {
  std::vector<std::string> scalar_names;
  std::vector<std::vector<double>> scalars;  // one row per retained iteration
  std::vector<long> field_iterations;
  std::vector<VectorXd> beta_snapshots;
  std::vector<VectorXd> gamma_snapshots;
  std::vector<VectorXd> omega_snapshots;
  VectorXd fitted_mean;  // posterior mean of mu~ over retained iterations
  VectorXd beta_mean;
  VectorXd gamma_mean;
  AcceptanceStats acceptance_adaptation;
  AcceptanceStats acceptance_burn_in;
  AcceptanceStats acceptance_sampling;
  MatrixXd final_proposal_beta;
  MatrixXd final_proposal_gamma;
  double final_proposal_df = 0.0;
  long iterations = 0;
  long audits = 0;
  long audit_violations = 0;
  double max_audit_discrepancy = 0.0;
  double seconds_adaptation = 0.0;
  double seconds_burn_in = 0.0;
  double seconds_sampling = 0.0;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(scalar_names.begin(), scalar_names.end(), name);
    if (it == scalar_names.end()) throw std::out_of_range("trace has no column " + name);
    return static_cast<std::size_t>(it - scalar_names.begin());
  }

  std::vector<double> series(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(scalars.size());
    for (const auto& row : scalars) out.push_back(row[c]);
    return out;
  }
};

/// A chain that hit a non-finite state; carries a text dump of that state.
class ChainFailure : public NumericError {
 public:
  ChainFailure(const std::string& what, std::string dump) : NumericError(what), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

struct FieldUpdateResult {
  bool accepted = false;
  bool skipped = false;  // empty field or frozen
  double log_ratio = 0.0;
  int density_evaluations = 0;
};

/// Metropolis-within-Gibbs sampler over ModelState.
class Sampler {
 public:
  Sampler(std::shared_ptr<const ChainInput> input, PriorConfig priors, ChainConfig cfg)
      : in_(std::move(input)), priors_(std::move(priors)), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (priors_.mu_mean_from_data) priors_.mu_mean = in_->y.mean();
    beta_.structure = &in_->beta_structure;
    beta_.prior = &priors_.beta;
    gamma_.structure = &in_->gamma_structure;
    gamma_.prior = &priors_.gamma;
    initialize();
  }

  Sampler(const Sampler&) = delete;
  Sampler& operator=(const Sampler&) = delete;

  const ModelState& state() const { return state_; }
  const ChainInput& input() const { return *in_; }
  const PriorConfig& priors() const { return priors_; }
  const ChainConfig& config() const { return cfg_; }
  const FieldDesign& design(FieldId f) const { return cache(f).design; }
  const PrecisionMatrix& precision(FieldId f) const { return cache(f).Q; }
  const std::vector<Subblock>& subblocks(FieldId f) const { return cache(f).blocks; }
  const ProposalTuning& tuning(FieldId f) const { return cache(f).tuning; }
  const ProposalTuning& df_tuning() const { return df_tuning_; }

  /// diag(W) = 1 / (sigma2 omega).
  VectorXd weights() const { return (1.0 / (state_.sigma2 * state_.omega.array())).matrix(); }

  /// Replaces the state (e.g. to start from known values); rebuilds X, Q and r.
  void set_state(const ModelState& s) {
    state_ = s;
    rebuild_field(beta_, state_.hp_beta);
    rebuild_field(gamma_, state_.hp_gamma);
    state_.residual = scratch_residual();
  }

  /// y - mu~ recomputed from scratch.
  VectorXd scratch_residual() const {
    VectorXd r = in_->y - expand_grain_means(state_.mu_g, in_->grain_of_element);
    beta_.design.multiply_add(state_.beta, r, -1.0);
    gamma_.design.multiply_add(state_.gamma, r, -1.0);
    return r;
  }

  /// Joint move of (alpha, field): alpha* from a Gaussian random walk in
  /// transformed space, then each subblock drawn in turn from its full
  /// conditional at alpha* given the subblocks already proposed. The reverse
  /// path evaluates the old subblocks under the old alpha with the mirrored
  /// conditioning (old before s, proposed after s), so the ratio holds 2S
  /// conditional densities. nu stays fixed.
  FieldUpdateResult update_field_joint(FieldId which, CounterRng& rng) {
    FieldCache& fc = cache(which);
    VectorXd& field = which == FieldId::beta ? state_.beta : state_.gamma;
    FieldHyperparams& hp = which == FieldId::beta ? state_.hp_beta : state_.hp_gamma;
    FieldUpdateResult res;
    if (field.size() == 0 || fc.blocks.empty()) {
      res.skipped = true;
      return res;
    }
    const RhoPriorRange& range = fc.prior->rho;
    const TransformedHyperparams alpha = transform(hp, range);
    const TransformedHyperparams alpha_star = alpha + fc.proposal_sqrt * standard_normal_vector(4, rng);
    const bool same = alpha_star == alpha;
    const FieldHyperparams hp_star = same ? hp : untransform(alpha_star, hp.nu, range);

    const double hyper_star = log_field_hyperprior(hp_star, *fc.prior, true);
    if (!std::isfinite(hyper_star) || !fc.structure->admissible(hp_star)) return res;

    PrecisionMatrix Q_star;
    double log_det_star = fc.log_det;
    if (!same) {
      Q_star = fc.structure->assemble(hp_star);
      try {
        fc.chol->factorize(Q_star.matrix);
      } catch (const NumericError&) {
        return res;
      }
      log_det_star = fc.chol->log_determinant();
    }
    const PrecisionMatrix& Qs = same ? fc.Q : Q_star;
    const FieldDesign X_star = fc.design.with_phi(hp_star.phi);
    const VectorXd w = weights();

    // Forward chain at alpha*.
    VectorXd r_fwd = state_.residual;
    if (X_star.phi() != fc.design.phi()) {
      fc.design.multiply_add(field, r_fwd, 1.0);
      X_star.multiply_add(field, r_fwd, -1.0);
    }
    VectorXd proposed = field;
    double log_q_fwd = 0.0;
    try {
      for (const Subblock& s : fc.blocks) {
        const SubblockConditional c = subblock_conditional(X_star, Qs, hp.nu, proposed, r_fwd, w, s);
        const VectorXd x = c.draw(rng);
        log_q_fwd += c.log_density(x);
        shift_residual(X_star, s, proposed.segment(s.begin, s.size) - x, r_fwd);
        proposed.segment(s.begin, s.size) = x;
      }
    } catch (const NumericError&) {
      return res;
    }

    // Reverse chain at alpha^(t-1): old subblock s given (old_<s, proposed_>s).
    VectorXd r_rev = state_.residual;
    fc.design.multiply_add(field - proposed, r_rev, 1.0);
    VectorXd mixed = proposed;
    double log_q_rev = 0.0;
    try {
      for (const Subblock& s : fc.blocks) {
        const SubblockConditional c = subblock_conditional(fc.design, fc.Q, hp.nu, mixed, r_rev, w, s);
        const VectorXd x = field.segment(s.begin, s.size);
        log_q_rev += c.log_density(x);
        shift_residual(fc.design, s, mixed.segment(s.begin, s.size) - x, r_rev);
        mixed.segment(s.begin, s.size) = x;
      }
    } catch (const NumericError&) {
      return res;
    }
    res.density_evaluations = 2 * static_cast<int>(fc.blocks.size());

    const auto weighted_ss = [&](const VectorXd& r) { return (w.array() * r.array().square()).sum(); };
    const VectorXd nu_vec = VectorXd::Constant(field.size(), hp.nu);
    const double target_star = -0.5 * weighted_ss(r_fwd) + 0.5 * log_det_star -
                               0.5 * quadratic_form(Qs.matrix, proposed, nu_vec) + hyper_star;
    const double target_old = -0.5 * weighted_ss(state_.residual) + 0.5 * fc.log_det -
                              0.5 * quadratic_form(fc.Q.matrix, field, nu_vec) +
                              log_field_hyperprior(hp, *fc.prior, true);
    res.log_ratio = target_star - target_old + log_q_rev - log_q_fwd;
    res.accepted = std::log(rng.uniform()) < res.log_ratio;
    if (res.accepted) {
      field = proposed;
      hp = hp_star;
      state_.residual = std::move(r_fwd);
      fc.design = X_star;
      if (!same) {
        fc.Q = std::move(Q_star);
        fc.log_det = log_det_star;
      }
    }
    return res;
  }

  /// nu ~ N((1'Q x + m0/v0) / (1'Q 1 + 1/v0), 1 / (1'Q 1 + 1/v0)).
  double gibbs_nu(FieldId which, CounterRng& rng) {
    const FieldCache& fc = cache(which);
    const VectorXd& field = which == FieldId::beta ? state_.beta : state_.gamma;
    FieldHyperparams& hp = which == FieldId::beta ? state_.hp_beta : state_.hp_gamma;
    if (field.size() == 0) return hp.nu;
    const VectorXd row_sums = fc.Q.matrix * VectorXd::Ones(field.size());
    const double prior_precision = 1.0 / (fc.prior->nu_sd * fc.prior->nu_sd);
    const double precision = row_sums.sum() + prior_precision;
    const double mean = (row_sums.dot(field) + fc.prior->nu_mean * prior_precision) / precision;
    hp.nu = rng.normal(mean, 1.0 / std::sqrt(precision));
    return hp.nu;
  }

  /// mu_g | rest, then mu | mu_g, tau2, then tau2 | mu_g, mu; each step
  /// only when its update flag is set.
  void gibbs_grain_means(CounterRng& rng) {
    const UpdateMask& u = cfg_.updates;
    const int G = in_->grain_count;
    const auto& rows = beta_.design.geometry().rows;
    VectorXd& r = state_.residual;
    for (int g = 0; g < G && u.mu_g; ++g) {
      double sw = 0.0, swr = 0.0;
      for (int m : rows[static_cast<std::size_t>(g)]) {
        const double wm = 1.0 / state_.omega[m];
        sw += wm;
        swr += wm * (r[m] + state_.mu_g[g]);
      }
      const double precision = sw / state_.sigma2 + 1.0 / state_.tau2;
      const double mean = (swr / state_.sigma2 + state_.mu / state_.tau2) / precision;
      const double next = rng.normal(mean, 1.0 / std::sqrt(precision));
      const double delta = next - state_.mu_g[g];
      for (int m : rows[static_cast<std::size_t>(g)]) r[m] -= delta;
      state_.mu_g[g] = next;
    }
    if (u.mu) {
      const double prior_precision = 1.0 / (priors_.mu_sd * priors_.mu_sd);
      const double precision = G / state_.tau2 + prior_precision;
      const double mean = (state_.mu_g.sum() / state_.tau2 + priors_.mu_mean * prior_precision) / precision;
      state_.mu = rng.normal(mean, 1.0 / std::sqrt(precision));
    }
    if (u.tau2) {
      const double scatter = (state_.mu_g.array() - state_.mu).square().sum();
      state_.tau2 = rng.inverse_gamma(0.5 * G + priors_.tau2_shape, 0.5 * scatter + priors_.tau2_scale);
    }
  }

  /// sigma2 ~ IG(M/2 + a, sum r^2/omega / 2 + b), then each omega_m ~ IG((1 + df)/2, r_m^2/(2 sigma2) + df/2).
  void gibbs_error_params(CounterRng& rng) {
    const VectorXd& r = state_.residual;
    const auto M = static_cast<double>(r.size());
    if (cfg_.updates.sigma2) {
      const double ss = (r.array().square() / state_.omega.array()).sum();
      state_.sigma2 = rng.inverse_gamma(0.5 * M + priors_.sigma2_shape, 0.5 * ss + priors_.sigma2_scale);
    }
    if (cfg_.updates.omega) {
      for (Eigen::Index m = 0; m < r.size(); ++m) {
        state_.omega[m] = rng.inverse_gamma(0.5 + 0.5 * state_.df, r[m] * r[m] / (2.0 * state_.sigma2) + 0.5 * state_.df);
      }
    }
  }

  /// ln of the unnormalized df conditional
  /// Gamma(df/2)^-M (df/2)^(M df/2 - 2) prod(1/omega)^(df/2) exp(-(df/2) sum 1/omega).
  double log_df_conditional(double df) const {
    if (!(df > priors_.df_min && df <= priors_.df_max)) return stats::kNegInf;
    const auto M = static_cast<double>(state_.omega.size());
    const double h = 0.5 * df;
    const double sum_log = state_.omega.array().log().sum();
    const double sum_inv = state_.omega.array().inverse().sum();
    return -M * std::lgamma(h) + (M * h - 2.0) * std::log(h) - h * sum_log - h * sum_inv;
  }

  /// Random walk on ln(df); proposals outside (df_min, df_max] are rejected.
  bool metropolis_df(CounterRng& rng) {
    const double step = df_sqrt_ * rng.normal();
    const double proposal = state_.df * std::exp(step);
    const double target_new = log_df_conditional(proposal);
    if (!std::isfinite(target_new)) return false;
    const double log_ratio = target_new - log_df_conditional(state_.df) + std::log(proposal) - std::log(state_.df);
    const bool accept = std::log(rng.uniform()) < log_ratio;
    if (accept) state_.df = proposal;
    return accept;
  }

  /// One full sweep in the fixed order of the model's Gibbs scheme.
  void sweep(CounterRng& rng, AcceptanceStats* stats = nullptr) {
    const UpdateMask& u = cfg_.updates;
    if (u.beta_field) {
      const auto r = update_field_joint(FieldId::beta, rng);
      if (!r.skipped && stats) stats->beta.add(r.accepted);
      last_beta_ = r;
    }
    if (u.gamma_field) {
      const auto r = update_field_joint(FieldId::gamma, rng);
      if (!r.skipped && stats) stats->gamma.add(r.accepted);
      last_gamma_ = r;
    }
    if (u.nu) {
      gibbs_nu(FieldId::beta, rng);
      gibbs_nu(FieldId::gamma, rng);
    }
    if (u.mu_g || u.mu || u.tau2) gibbs_grain_means(rng);
    if (u.sigma2 || u.omega) gibbs_error_params(rng);
    if (u.df) {
      const bool ok = metropolis_df(rng);
      if (stats) stats->df.add(ok);
      last_df_ = ok;
    }
    ++iteration_;
    check_finite();
  }

  long iteration() const { return iteration_; }

  /// Full schedule: adaptation blocks, burn-in at frozen proposals, then
  /// thinned sampling.
  TraceRecord run(CounterRng& rng) {
    using Clock = std::chrono::steady_clock;
    TraceRecord trace;
    trace.scalar_names = scalar_names();
    const long retained = cfg_.retained();
    trace.scalars.reserve(static_cast<std::size_t>(retained));
    VectorXd fitted_sum = VectorXd::Zero(in_->y.size());
    VectorXd beta_sum = VectorXd::Zero(state_.beta.size());
    VectorXd gamma_sum = VectorXd::Zero(state_.gamma.size());

    auto t0 = Clock::now();
    // Shape estimates pool the latter half of all adaptation so far; the
    // last quarter of the blocks tunes the scale only.
    std::vector<VectorXd> hist_beta, hist_gamma, hist_df;
    const int shape_blocks = cfg_.adapt_blocks - std::max(1, cfg_.adapt_blocks / 4);
    const auto recent = [](const std::vector<VectorXd>& h) {
      return std::vector<VectorXd>(h.begin() + static_cast<std::ptrdiff_t>(h.size() / 2), h.end());
    };
    for (int b = 0; b < cfg_.adapt_blocks; ++b) {
      AcceptanceStats block;
      for (int i = 0; i < cfg_.adapt_block_size; ++i) {
        sweep(rng, &block);
        audit(trace);
        hist_beta.push_back(transform(state_.hp_beta, priors_.beta.rho));
        hist_gamma.push_back(transform(state_.hp_gamma, priors_.gamma.rho));
        hist_df.push_back(VectorXd::Constant(1, std::log(state_.df)));
      }
      accumulate(trace.acceptance_adaptation, block);
      const bool shape = b < shape_blocks;
      const double target = cfg_.target_acceptance;
      set_tuning(beta_, adapt_proposals(beta_.tuning, recent(hist_beta), block.beta.accepted, block.beta.proposed,
                                        target, shape));
      set_tuning(gamma_, adapt_proposals(gamma_.tuning, recent(hist_gamma), block.gamma.accepted,
                                         block.gamma.proposed, target, shape));
      set_df_tuning(adapt_proposals(df_tuning_, recent(hist_df), block.df.accepted, block.df.proposed, target, shape));
    }
    auto t1 = Clock::now();
    for (int i = 0; i < cfg_.burn_in; ++i) {
      sweep(rng, &trace.acceptance_burn_in);
      audit(trace);
    }
    auto t2 = Clock::now();
    long kept = 0;
    for (int i = 1; i <= cfg_.samples; ++i) {
      sweep(rng, &trace.acceptance_sampling);
      audit(trace);
      if (i % cfg_.thin != 0) continue;
      trace.scalars.push_back(scalar_row());
      fitted_sum += in_->y - state_.residual;
      beta_sum += state_.beta;
      gamma_sum += state_.gamma;
      if (kept % cfg_.field_stride == 0 || kept == retained - 1) {
        trace.field_iterations.push_back(iteration_);
        trace.beta_snapshots.push_back(state_.beta);
        trace.gamma_snapshots.push_back(state_.gamma);
        trace.omega_snapshots.push_back(state_.omega);
      }
      ++kept;
    }
    auto t3 = Clock::now();
    if (kept > 0) {
      trace.fitted_mean = fitted_sum / static_cast<double>(kept);
      trace.beta_mean = beta_sum / static_cast<double>(kept);
      trace.gamma_mean = gamma_sum / static_cast<double>(kept);
    }
    trace.final_proposal_beta = beta_.tuning.covariance();
    trace.final_proposal_gamma = gamma_.tuning.covariance();
    trace.final_proposal_df = df_tuning_.covariance()(0, 0);
    trace.iterations = iteration_;
    const auto secs = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };
    trace.seconds_adaptation = secs(t0, t1);
    trace.seconds_burn_in = secs(t1, t2);
    trace.seconds_sampling = secs(t2, t3);
    return trace;
  }

  std::vector<std::string> scalar_names() const {
    std::vector<std::string> names{"iteration", "mu", "tau2", "sigma2", "df"};
    for (const char* f : {"beta", "gamma"}) {
      for (const char* p : {"nu", "theta", "kappa", "rho", "phi"}) names.push_back(std::string(p) + "_" + f);
      names.push_back(std::string(f) + "_mean");
      names.push_back(std::string(f) + "_sd");
    }
    for (int g = 1; g <= in_->grain_count; ++g) names.push_back("mu_" + std::to_string(g));
    names.insert(names.end(), {"log_likelihood", "r2_adj_constant", "r2_adj_grain"});
    return names;
  }

  std::vector<double> scalar_row() const {
    const auto mean_sd = [](const VectorXd& v) -> std::pair<double, double> {
      if (v.size() == 0) return {0.0, 0.0};
      const double m = v.mean();
      const double sd = v.size() > 1 ? std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1)) : 0.0;
      return {m, sd};
    };
    std::vector<double> row{static_cast<double>(iteration_), state_.mu, state_.tau2, state_.sigma2, state_.df};
    const auto push_field = [&](const FieldHyperparams& hp, const VectorXd& field) {
      row.insert(row.end(), {hp.nu, hp.theta, hp.kappa, hp.rho, hp.phi});
      const auto [m, sd] = mean_sd(field);
      row.push_back(m);
      row.push_back(sd);
    };
    push_field(state_.hp_beta, state_.beta);
    push_field(state_.hp_gamma, state_.gamma);
    for (Eigen::Index g = 0; g < state_.mu_g.size(); ++g) row.push_back(state_.mu_g[g]);
    row.push_back(log_likelihood(state_));
    const VectorXd fitted = in_->y - state_.residual;
    const int p = in_->effective_parameters();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const bool ok = p < in_->element_count() - 1;
    row.push_back(ok ? r2_adjusted(in_->y, fitted, p, R2Baseline::constant) : nan);
    row.push_back(ok ? r2_adjusted(in_->y, fitted, p, R2Baseline::grain_means, in_->grain_of_element) : nan);
    return row;
  }

  std::string describe_state() const {
    std::ostringstream os;
    os.precision(17);
    const auto vec = [&](const VectorXd& v) {
      os << '[';
      for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
      os << ']';
    };
    const auto hp = [&](const FieldHyperparams& h) {
      os << "{\"nu\":" << h.nu << ",\"theta\":" << h.theta << ",\"kappa\":" << h.kappa << ",\"rho\":" << h.rho
         << ",\"phi\":" << h.phi << '}';
    };
    os << "{\"iteration\":" << iteration_ << ",\"mu\":" << state_.mu << ",\"tau2\":" << state_.tau2
       << ",\"sigma2\":" << state_.sigma2 << ",\"df\":" << state_.df << ",\"mu_g\":";
    vec(state_.mu_g);
    os << ",\"hp_beta\":";
    hp(state_.hp_beta);
    os << ",\"hp_gamma\":";
    hp(state_.hp_gamma);
    os << ",\"beta\":";
    vec(state_.beta);
    os << ",\"gamma\":";
    vec(state_.gamma);
    os << ",\"omega\":";
    vec(state_.omega);
    os << "}";
    std::string s = os.str();
    // JSON has no literal for non-finite numbers.
    for (const char* bad : {"-nan", "nan", "-inf", "inf"}) {
      for (std::size_t pos = s.find(bad); pos != std::string::npos; pos = s.find(bad, pos + 4)) {
        s.replace(pos, std::string(bad).size(), "null");
      }
    }
    return s;
  }

  const FieldUpdateResult& last_update(FieldId f) const { return f == FieldId::beta ? last_beta_ : last_gamma_; }

 private:
  struct FieldCache {
    const PrecisionStructure* structure = nullptr;
    const FieldPrior* prior = nullptr;
    FieldDesign design;
    PrecisionMatrix Q;
    double log_det = 0.0;
    std::unique_ptr<SparseCholesky> chol = std::make_unique<SparseCholesky>();
    std::vector<Subblock> blocks;
    ProposalTuning tuning;
    MatrixXd proposal_sqrt;
  };

  FieldCache& cache(FieldId f) { return f == FieldId::beta ? beta_ : gamma_; }
  const FieldCache& cache(FieldId f) const { return f == FieldId::beta ? beta_ : gamma_; }

  static void shift_residual(const FieldDesign& X, const Subblock& s, const VectorXd& delta, VectorXd& r) {
    const VectorXd change = X.block(s.grain).middleCols(s.local_begin, s.size) * delta;
    const auto& rows = X.rows_of(s.grain);
    for (std::size_t i = 0; i < rows.size(); ++i) r[rows[i]] += change[static_cast<Eigen::Index>(i)];
  }

  void set_tuning(FieldCache& fc, ProposalTuning t) {
    fc.tuning = std::move(t);
    fc.proposal_sqrt = covariance_sqrt(fc.tuning.covariance());
  }

  void set_df_tuning(ProposalTuning t) {
    df_tuning_ = std::move(t);
    df_sqrt_ = std::sqrt(std::max(df_tuning_.covariance()(0, 0), 0.0));
  }

  void rebuild_field(FieldCache& fc, const FieldHyperparams& hp) {
    const auto& geometry = &fc == &beta_ ? in_->beta_geometry : in_->gamma_geometry;
    fc.design = FieldDesign(geometry, hp.phi);
    fc.Q = fc.structure->assemble(hp);
    fc.chol->factorize(fc.Q.matrix);
    fc.log_det = fc.chol->log_determinant();
  }

  /// mu_g at grain data means, mu and tau2 at their mean and spread, fields at
  /// zero, sigma2 at the pooled within-grain variance, omega = 1, df = 5, and
  /// field hyperparameters at their prior medians (theta = 1 because the
  /// Gamma(0.001, 0.001) median is numerically zero).
  void initialize() {
    const int G = in_->grain_count;
    const auto M = in_->y.size();
    state_.mu_g = VectorXd::Zero(G);
    VectorXd count = VectorXd::Zero(G);
    for (Eigen::Index m = 0; m < M; ++m) {
      state_.mu_g[in_->grain_of_element[m] - 1] += in_->y[m];
      count[in_->grain_of_element[m] - 1] += 1.0;
    }
    state_.mu_g = state_.mu_g.cwiseQuotient(count.cwiseMax(1.0));
    state_.mu = state_.mu_g.mean();
    state_.tau2 = G > 1 ? (state_.mu_g.array() - state_.mu).square().sum() / (G - 1) : 1.0;
    if (!(state_.tau2 > 0.0)) state_.tau2 = 1.0;
    double ss = 0.0;
    for (Eigen::Index m = 0; m < M; ++m) {
      const double d = in_->y[m] - state_.mu_g[in_->grain_of_element[m] - 1];
      ss += d * d;
    }
    state_.sigma2 = M > G ? ss / static_cast<double>(M - G) : 1.0;
    if (!(state_.sigma2 > 0.0)) state_.sigma2 = 1.0;
    state_.omega = VectorXd::Ones(M);
    state_.df = 5.0;
    const auto median_hp = [](const FieldPrior& p) {
      FieldHyperparams hp;
      hp.nu = p.nu_mean;
      hp.theta = 1.0;
      hp.kappa = boost::math::ibeta_inv(p.kappa_a, p.kappa_b, 0.5);
      hp.rho = 0.5 * (p.rho.lower + p.rho.upper);
      hp.phi = std::exp(p.phi_log_median);
      return hp;
    };
    state_.hp_beta = median_hp(priors_.beta);
    state_.hp_gamma = median_hp(priors_.gamma);
    state_.beta = VectorXd::Zero(in_->dim_beta());
    state_.gamma = VectorXd::Zero(in_->dim_gamma());
    beta_.blocks = make_subblocks(in_->beta_geometry->set, cfg_.scheme, cfg_.subblock_size);
    gamma_.blocks = make_subblocks(in_->gamma_geometry->set, cfg_.scheme, cfg_.subblock_size);
    set_tuning(beta_, ProposalTuning::from_covariance(cfg_.proposal_beta));
    set_tuning(gamma_, ProposalTuning::from_covariance(cfg_.proposal_gamma));
    set_df_tuning(ProposalTuning::from_covariance(MatrixXd::Constant(1, 1, cfg_.proposal_df)));
    set_state(state_);
  }

  void audit(TraceRecord& trace) const {
    if (!cfg_.audit_residual) return;
    const double scale = std::max(1.0, in_->y.cwiseAbs().maxCoeff());
    const double gap = (scratch_residual() - state_.residual).cwiseAbs().maxCoeff() / scale;
    ++trace.audits;
    trace.max_audit_discrepancy = std::max(trace.max_audit_discrepancy, gap);
    if (!(gap <= cfg_.audit_tolerance)) ++trace.audit_violations;
  }

  static void accumulate(AcceptanceStats& total, const AcceptanceStats& part) {
    for (auto [t, p] : {std::pair{&total.beta, &part.beta}, {&total.gamma, &part.gamma}, {&total.df, &part.df}}) {
      t->accepted += p->accepted;
      t->proposed += p->proposed;
    }
  }

  void check_finite() const {
    const bool ok = std::isfinite(state_.mu) && std::isfinite(state_.tau2) && state_.tau2 > 0.0 &&
                    std::isfinite(state_.sigma2) && state_.sigma2 > 0.0 && std::isfinite(state_.df) &&
                    state_.mu_g.allFinite() && state_.beta.allFinite() && state_.gamma.allFinite() &&
                    state_.residual.allFinite() && state_.omega.allFinite() && (state_.omega.array() > 0.0).all();
    if (!ok) {
      throw ChainFailure("chain reached a non-finite state at iteration " + std::to_string(iteration_), describe_state());
    }
  }

  std::shared_ptr<const ChainInput> in_;
  PriorConfig priors_;
  ChainConfig cfg_;
  ModelState state_;
  FieldCache beta_;
  FieldCache gamma_;
  ProposalTuning df_tuning_;
  double df_sqrt_ = 0.0;
  long iteration_ = 0;
  FieldUpdateResult last_beta_;
  FieldUpdateResult last_gamma_;
  bool last_df_ = false;
};

/// Runs the full schedule from the default initialization.
inline TraceRecord run_chain(std::shared_ptr<const ChainInput> input, const PriorConfig& priors,
                             const ChainConfig& cfg, CounterRng& rng) {
  Sampler sampler(std::move(input), priors, cfg);
  return sampler.run(rng);
}

inline TraceRecord run_chain(std::shared_ptr<const ChainInput> input, const PriorConfig& priors,
                             const ChainConfig& cfg) {
  CounterRng rng(cfg.seed, 3);
  return run_chain(std::move(input), priors, cfg, rng);
}

}  // namespace igmrf
