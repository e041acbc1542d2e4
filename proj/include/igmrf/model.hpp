#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "igmrf/densities.hpp"
#include "igmrf/design.hpp"
#include "igmrf/error.hpp"
#include "igmrf/gmrf.hpp"
#include "igmrf/rng.hpp"

namespace igmrf {

/// Hyperpriors of one latent field.
///   phi ~ logN(phi_log_median, phi_log_variance), nu ~ N(nu_mean, nu_sd^2),
///   theta ~ Gamma(theta_shape, rate = theta_rate), kappa ~ Beta(kappa_a, kappa_b),
///   rho ~ Unif(rho.lower, rho.upper)
struct FieldPrior {
  double phi_log_median = 0.0;
  double phi_log_variance = 1.0;
  double nu_mean = 0.0;
  double nu_sd = 8.0;
  double theta_shape = 0.001;
  double theta_rate = 0.001;
  double kappa_a = 32.0 / 5.0;
  double kappa_b = 8.0 / 5.0;
  RhoPriorRange rho{};

  /// Log-normal parameters with the given median and mean.
  static FieldPrior with_phi_median_mean(double median, double mean) {
    FieldPrior p;
    p.phi_log_median = std::log(median);
    p.phi_log_variance = 2.0 * (std::log(mean) - std::log(median));
    return p;
  }
};

struct PriorConfig {
  double mu_mean = 0.0;
  bool mu_mean_from_data = true;  // replace mu_mean by the data mean when a chain is set up
  double mu_sd = 100.0;
  double tau2_shape = 0.001;
  double tau2_scale = 0.001;
  double sigma2_shape = 0.001;
  double sigma2_scale = 0.001;
  FieldPrior beta = FieldPrior::with_phi_median_mean(0.6, 0.8);
  FieldPrior gamma = FieldPrior::with_phi_median_mean(0.8, 1.0);
  double df_min = 0.5;  // support of [df] ∝ 1/df^2 is (df_min, df_max]
  double df_max = 500.0;
};

/// Every sampled quantity plus the maintained residual r = y - mu~.
struct ModelState {
  Eigen::VectorXd mu_g;  // grain means, entry g-1 for grain g
  double mu = 0.0;
  double tau2 = 1.0;
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;
  FieldHyperparams hp_beta;
  FieldHyperparams hp_gamma;
  double sigma2 = 1.0;
  Eigen::VectorXd omega;
  double df = 5.0;
  Eigen::VectorXd residual;
};

/// mu_{g(m)} for every element.
inline Eigen::VectorXd expand_grain_means(const Eigen::VectorXd& mu_g, const std::vector<int>& grain_of_element) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(grain_of_element.size()));
  for (std::size_t m = 0; m < grain_of_element.size(); ++m) out[static_cast<Eigen::Index>(m)] = mu_g[grain_of_element[m] - 1];
  return out;
}

/// y - mu - X_b beta - X_c gamma, from scratch.
inline Eigen::VectorXd compute_residual(const ModelState& s, const Eigen::VectorXd& y, const KernelDesign& design,
                                        const std::vector<int>& grain_of_element) {
  Eigen::VectorXd r = y - expand_grain_means(s.mu_g, grain_of_element);
  design.beta.multiply_add(s.beta, r, -1.0);
  design.gamma.multiply_add(s.gamma, r, -1.0);
  return r;
}

/// -1/2 sum [ln(sigma2 omega_m) + r_m^2 / (sigma2 omega_m)]; the (2 pi)^{-M/2} factor is dropped.
inline double log_likelihood(const Eigen::VectorXd& residual, double sigma2, const Eigen::VectorXd& omega) {
  double total = 0.0;
  for (Eigen::Index m = 0; m < residual.size(); ++m) {
    const double v = sigma2 * omega[m];
    total += std::log(v) + residual[m] * residual[m] / v;
  }
  return -0.5 * total;
}

inline double log_likelihood(const ModelState& s) { return log_likelihood(s.residual, s.sigma2, s.omega); }

struct ScaleMixtureDraw {
  double epsilon;
  double omega;
};

/// omega ~ InvGam(df/2, df/2), epsilon = sqrt(omega) N(0, sigma2); marginally t_df(0, sigma2).
inline ScaleMixtureDraw scale_mixture_draw(double df, double sigma2, CounterRng& rng) {
  const double omega = rng.inverse_gamma(0.5 * df, 0.5 * df);
  const double z = rng.normal();
  return {std::sqrt(omega * sigma2) * z, omega};
}

/// ln [df] for [df] ∝ 1/df^2 on (df_min, df_max].
inline double log_df_prior(double df, const PriorConfig& priors) {
  if (!(df > priors.df_min && df <= priors.df_max)) return stats::kNegInf;
  return -2.0 * std::log(df);
}

/// Hyperprior of (phi, nu, theta, kappa, rho). With `transformed`, the density
/// is that of the transformed vector alpha, i.e. includes ln |Jacobian|.
inline double log_field_hyperprior(const FieldHyperparams& hp, const FieldPrior& prior, bool transformed) {
  double lp = stats::log_lognormal_pdf(hp.phi, prior.phi_log_median, prior.phi_log_variance) +
              stats::log_normal_pdf(hp.nu, prior.nu_mean, prior.nu_sd) +
              stats::log_gamma_pdf(hp.theta, prior.theta_shape, prior.theta_rate) +
              stats::log_beta_pdf(hp.kappa, prior.kappa_a, prior.kappa_b) +
              stats::log_uniform_pdf(hp.rho, prior.rho.lower, prior.rho.upper);
  if (transformed && std::isfinite(lp)) lp += log_jacobian(hp, prior.rho);
  return lp;
}

/// GMRF prior density of a field, or -inf when Q is not defined / not positive definite.
inline double log_field_gmrf(const PrecisionStructure& structure, const FieldHyperparams& hp,
                             const Eigen::VectorXd& field) {
  if (structure.size() == 0) return 0.0;
  if (!structure.admissible(hp)) return stats::kNegInf;
  try {
    const PrecisionMatrix Q = structure.assemble(hp);
    return log_density_gmrf(Q, Eigen::VectorXd::Constant(field.size(), hp.nu), field);
  } catch (const NumericError&) {
    return stats::kNegInf;
  }
}

/// Sum of every prior and hyperprior log density, including the GMRF priors
/// of beta and gamma. Returns -inf outside the support.
inline double log_prior(const ModelState& s, const PriorConfig& priors, const PrecisionStructure& beta_structure,
                        const PrecisionStructure& gamma_structure, bool transformed = false) {
  if (!(s.tau2 > 0.0 && s.sigma2 > 0.0 && s.df > 0.0)) return stats::kNegInf;
  const double tau = std::sqrt(s.tau2);
  double lp = stats::log_normal_pdf(s.mu, priors.mu_mean, priors.mu_sd) +
              stats::log_inverse_gamma_pdf(s.tau2, priors.tau2_shape, priors.tau2_scale) +
              stats::log_inverse_gamma_pdf(s.sigma2, priors.sigma2_shape, priors.sigma2_scale) +
              log_df_prior(s.df, priors);
  for (Eigen::Index g = 0; g < s.mu_g.size(); ++g) lp += stats::log_normal_pdf(s.mu_g[g], s.mu, tau);
  for (Eigen::Index m = 0; m < s.omega.size(); ++m) {
    lp += stats::log_inverse_gamma_pdf(s.omega[m], 0.5 * s.df, 0.5 * s.df);
  }
  lp += log_field_hyperprior(s.hp_beta, priors.beta, transformed);
  lp += log_field_hyperprior(s.hp_gamma, priors.gamma, transformed);
  if (!std::isfinite(lp)) return stats::kNegInf;
  lp += log_field_gmrf(beta_structure, s.hp_beta, s.beta);
  lp += log_field_gmrf(gamma_structure, s.hp_gamma, s.gamma);
  return std::isfinite(lp) ? lp : stats::kNegInf;
}

}  // namespace igmrf
