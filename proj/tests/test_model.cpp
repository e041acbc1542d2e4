#include <gtest/gtest.h>

#include <random>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/lognormal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "igmrf/diagnostics.hpp"
#include "igmrf/model.hpp"
#include "igmrf/synth.hpp"
#include "support.hpp"

namespace igmrf {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

TEST(Likelihood, SingleZeroResidualIsZero) {
  EXPECT_EQ(log_likelihood(VectorXd::Zero(1), 1.0, VectorXd::Ones(1)), 0.0);
}

TEST(Likelihood, QuadraticFormInvariantToJointScaling) {
  CounterRng rng(1, 0);
  const VectorXd r = testing::normal_vector(rng, 20);
  VectorXd omega(20);
  for (auto& w : omega) w = std::exp(testing::uniform(rng, -1, 1));
  const double c = 3.7;
  const double base = log_likelihood(r, 2.0, omega);
  const double scaled = log_likelihood(std::sqrt(c) * r, 2.0, c * omega);
  // Only the log-determinant part changes, by -M/2 ln c.
  EXPECT_NEAR(scaled - base, -0.5 * 20 * std::log(c), 1e-12);
}

TEST(Likelihood, MatchesScalarNormalDensities) {
  CounterRng rng(2, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const int M = 1 + static_cast<int>(rng.uniform() * 30);
    const VectorXd r = testing::normal_vector(rng, M, 3.0);
    VectorXd omega(M);
    for (auto& w : omega) w = std::exp(testing::uniform(rng, -2, 2));
    const double sigma2 = std::exp(testing::uniform(rng, -1, 3));
    double want = 0.0;
    for (int m = 0; m < M; ++m) {
      const double sd = std::sqrt(sigma2 * omega[m]);
      want += -0.5 * (r[m] / sd) * (r[m] / sd) - std::log(sd) - 0.5 * kLog2Pi;
    }
    want += 0.5 * M * kLog2Pi;  // the dropped constant
    EXPECT_NEAR(log_likelihood(r, sigma2, omega), want, 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST(ScaleMixture, ZeroScaleGivesZeroNoise) {
  CounterRng rng(3, 0);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(scale_mixture_draw(4.0, 0.0, rng).epsilon, 0.0);
}

TEST(ScaleMixture, MatchesDirectStudentTSampler) {
  CounterRng rng(4, 0);
  std::mt19937_64 direct(4);
  std::student_t_distribution<double> t4(4.0);
  std::vector<double> a, b;
  for (int i = 0; i < 100000; ++i) {
    a.push_back(scale_mixture_draw(4.0, 1.0, rng).epsilon);
    b.push_back(t4(direct));
  }
  EXPECT_GT(ks_two_sample(a, b).p_value, 0.01);
}

TEST(ScaleMixture, ScaledMixtureMatchesStudentCdf) {
  CounterRng rng(5, 0);
  const double df = 6.0, sigma2 = 9.0;
  std::vector<double> x;
  for (int i = 0; i < 50000; ++i) x.push_back(scale_mixture_draw(df, sigma2, rng).epsilon);
  const boost::math::students_t_distribution<double> t(df);
  EXPECT_GT(ks_one_sample(x, [&](double v) { return boost::math::cdf(t, v / 3.0); }).p_value, 0.01);
}

TEST(ScaleMixture, LargeDfVarianceIsSigma2) {
  CounterRng rng(6, 0);
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = scale_mixture_draw(1e6, 2.5, rng).epsilon;
    s += e;
    s2 += e * e;
  }
  const double var = s2 / n - (s / n) * (s / n);
  EXPECT_NEAR(var, 2.5, 4.0 * 2.5 * std::sqrt(2.0 / n));
}

TEST(Priors, DefaultsAsPublished) {
  const PriorConfig p;
  EXPECT_EQ(p.mu_sd, 100.0);
  EXPECT_EQ(p.tau2_shape, 0.001);
  EXPECT_EQ(p.tau2_scale, 0.001);
  EXPECT_EQ(p.sigma2_shape, 0.001);
  EXPECT_EQ(p.sigma2_scale, 0.001);
  for (const FieldPrior* f : {&p.beta, &p.gamma}) {
    EXPECT_EQ(f->nu_mean, 0.0);
    EXPECT_EQ(f->nu_sd, 8.0);
    EXPECT_EQ(f->theta_shape, 0.001);
    EXPECT_EQ(f->theta_rate, 0.001);
    EXPECT_DOUBLE_EQ(f->kappa_a, 6.4);
    EXPECT_DOUBLE_EQ(f->kappa_b, 1.6);
    EXPECT_EQ(f->rho.lower, -0.4);
    EXPECT_EQ(f->rho.upper, 1.0);
  }
}

TEST(Priors, PhiLogNormalMedianAndMean) {
  const PriorConfig p;
  for (const auto& [f, median, mean] : {std::tuple{&p.beta, 0.6, 0.8}, std::tuple{&p.gamma, 0.8, 1.0}}) {
    const boost::math::lognormal_distribution<double> d(f->phi_log_median, std::sqrt(f->phi_log_variance));
    EXPECT_NEAR(boost::math::cdf(d, median), 0.5, 1e-14);
    EXPECT_NEAR(boost::math::mean(d), mean, 1e-14);
    EXPECT_NEAR(std::exp(stats::log_lognormal_pdf(median, f->phi_log_median, f->phi_log_variance)),
                boost::math::pdf(d, median), 1e-12);
  }
}

TEST(Priors, KappaBetaMeanAndMode) {
  const FieldPrior f;
  const boost::math::beta_distribution<double> d(f.kappa_a, f.kappa_b);
  EXPECT_NEAR(boost::math::mean(d), 0.8, 1e-14);
  EXPECT_NEAR(boost::math::mode(d), 0.9, 1e-14);
}

ModelState simple_state(const GrainMesh& mesh, const BoundaryGeometry& bg) {
  ModelState s;
  s.mu_g = VectorXd::Constant(mesh.grain_count, 1.0);
  s.mu = 1.0;
  s.tau2 = 2.0;
  s.sigma2 = 1.0;
  s.beta = VectorXd::Zero(bg.dim_beta());
  s.gamma = VectorXd::Zero(bg.dim_gamma());
  s.hp_beta = {0.0, 1.0, 0.5, 0.3, 0.6};
  s.hp_gamma = {0.0, 1.0, 0.5, 0.3, 0.8};
  s.omega = VectorXd::Ones(static_cast<Eigen::Index>(mesh.element_count()));
  s.df = 4.0;
  return s;
}

TEST(Priors, RhoOutsideUniformSupportIsMinusInfinity) {
  const GrainMesh mesh = testing::cartoon3(3);
  const BoundaryGeometry bg = extract_boundaries(mesh);
  const FieldGraphs graphs = build_neighborhoods(mesh, bg);
  const PrecisionStructure sb(graphs.beta), sc(graphs.gamma);
  ModelState s = simple_state(mesh, bg);
  const PriorConfig p;
  EXPECT_TRUE(std::isfinite(log_prior(s, p, sb, sc)));
  s.hp_beta.rho = -0.5;
  EXPECT_EQ(log_prior(s, p, sb, sc), -std::numeric_limits<double>::infinity());
  s = simple_state(mesh, bg);
  s.df = 600.0;
  EXPECT_EQ(log_prior(s, p, sb, sc), -std::numeric_limits<double>::infinity());
  s = simple_state(mesh, bg);
  s.sigma2 = 0.0;
  EXPECT_EQ(log_prior(s, p, sb, sc), -std::numeric_limits<double>::infinity());
}

TEST(Priors, TransformedDensityAddsJacobian) {
  const FieldPrior f = FieldPrior::with_phi_median_mean(0.6, 0.8);
  const FieldHyperparams hp{0.3, 1.5, 0.7, 0.1, 0.9};
  EXPECT_NEAR(log_field_hyperprior(hp, f, true) - log_field_hyperprior(hp, f, false), log_jacobian(hp, f.rho), 1e-12);
}

TEST(Priors, DfPriorIntegratesToOneAboveOne) {
  PriorConfig p;
  p.df_max = std::numeric_limits<double>::infinity();
  // Substitute u = 1/df: the integral over (1, inf) becomes one over (0, 1).
  const int n = 2000;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = (i + 0.5) / n;
    total += std::exp(log_df_prior(1.0 / u, p)) / (u * u) / n;
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_EQ(log_df_prior(0.5, PriorConfig{}), -std::numeric_limits<double>::infinity());
  EXPECT_TRUE(std::isfinite(log_df_prior(500.0, PriorConfig{})));
}

// Property: on simulated data the joint log density at the truth is finite.
TEST(JointDensity, FiniteAtSimulatedStates) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthSpec spec = testing::small_spec(seed % 2 ? GeometryKind::cartoon3 : GeometryKind::voronoi_grains, 4, 0, seed);
    const GrainMesh mesh = generate_geometry(spec);
    const BoundaryGeometry bg = extract_boundaries(mesh);
    const FieldGraphs graphs = build_neighborhoods(mesh, bg);
    const SimulatedData d = simulate_data(mesh, spec);
    ModelState s;
    s.mu_g = d.mu_g;
    s.mu = spec.truth.mu;
    s.tau2 = spec.truth.tau2;
    s.beta = d.beta;
    s.gamma = d.gamma;
    s.hp_beta = spec.truth.beta;
    s.hp_gamma = spec.truth.gamma;
    s.sigma2 = spec.truth.sigma2;
    s.omega = d.omega;
    s.df = spec.truth.df;
    const KernelDesign design = build_design(mesh, bg, s.hp_beta.phi, s.hp_gamma.phi);
    s.residual = compute_residual(s, d.y, design, mesh.grain_of_element);
    EXPECT_LT((s.residual - d.epsilon).cwiseAbs().maxCoeff(), 1e-9);
    PriorConfig p;
    p.mu_mean = d.y.mean();
    const double total = log_likelihood(s) + log_prior(s, p, PrecisionStructure(graphs.beta), PrecisionStructure(graphs.gamma));
    EXPECT_TRUE(std::isfinite(total));
  }
}

}  // namespace
}  // namespace igmrf
