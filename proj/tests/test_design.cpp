#include <gtest/gtest.h>


#include "igmrf/design.hpp"
#include "oracle/dense.hpp"
#include "support.hpp"

namespace igmrf {
namespace {

struct Geometry {
  GrainMesh mesh;
  BoundaryGeometry bg;
};

Geometry cartoon(int res, int layers = 0) {
  Geometry g;
  g.mesh = testing::cartoon3(res, layers);
  g.bg = extract_boundaries(g.mesh);
  return g;
}

TEST(Design, EntriesMatchScalarRecomputation) {
  const Geometry g = cartoon(4, 3);
  const auto brute = oracle::brute_boundaries(g.mesh);
  CounterRng rng(1, 0);
  for (int trial = 0; trial < 4; ++trial) {
    const double phi_b = std::exp(testing::uniform(rng, -2.0, 1.0));
    const double phi_c = std::exp(testing::uniform(rng, -2.0, 1.0));
    const KernelDesign d = build_design(g.mesh, g.bg, phi_b, phi_c);
    const Eigen::MatrixXd Xb = d.beta.dense(), Xc = d.gamma.dense();
    const oracle::Dense Ob = oracle::dense_design(g.mesh, brute.second, brute.beta_index, phi_b);
    const oracle::Dense Oc = oracle::dense_design(g.mesh, brute.third, brute.gamma_index, phi_c);
    ASSERT_EQ(Xb.rows(), Ob.rows);
    ASSERT_EQ(Xb.cols(), Ob.cols);
    ASSERT_EQ(Xc.cols(), Oc.cols);
    for (int m = 0; m < Ob.rows; ++m) {
      for (int p = 0; p < Ob.cols; ++p) EXPECT_NEAR(Xb(m, p), Ob(m, p), 1e-12 * std::max(1.0, Ob(m, p)));
      for (int p = 0; p < Oc.cols; ++p) EXPECT_NEAR(Xc(m, p), Oc(m, p), 1e-12 * std::max(1.0, Oc(m, p)));
    }
  }
}

TEST(Design, BlockDiagonalPositiveAndFullWithinGrain) {
  const Geometry g = cartoon(4);
  const KernelDesign d = build_design(g.mesh, g.bg, 0.4, 0.7);
  for (const FieldDesign* f : {&d.beta, &d.gamma}) {
    const Eigen::MatrixXd X = f->dense();
    const BoundarySet& set = f->geometry().set;
    for (int m = 0; m < X.rows(); ++m) {
      int nonzero = 0;
      for (int p = 0; p < X.cols(); ++p) {
        if (set.grain_of[p] != g.mesh.grain_of_element[m]) {
          EXPECT_EQ(X(m, p), 0.0);
        } else {
          EXPECT_GT(X(m, p), 0.0);
          ++nonzero;
        }
      }
      EXPECT_EQ(nonzero, set.count_in(g.mesh.grain_of_element[m]));
    }
  }
}

TEST(Design, ZeroDistanceGivesWeightAndLargePhiVanishes) {
  // One-tet-per-grain mesh: put a "centroid" on a node by using the geometry directly.
  const Geometry g = cartoon(3);
  auto geo = std::make_shared<DesignGeometry>(*make_design_geometry(g.mesh, g.bg.second));
  // Move the first element's centroid of grain 1 onto the first boundary node of grain 1.
  const int m = geo->rows[0][0];
  const int v = geo->set.nodes[0][0];
  geo->centroids[static_cast<std::size_t>(m)] = g.mesh.nodes[static_cast<std::size_t>(v)];
  geo->distances.clear();
  const FieldDesign X(geo, 0.9);
  EXPECT_DOUBLE_EQ(X.block(1)(0, 0), geo->set.weights[0][0]);

  const KernelDesign far = build_design(g.mesh, g.bg, 1e6, 1e6);
  EXPECT_LT(far.beta.dense().cwiseAbs().maxCoeff(), 1e-300);  // vectorized exp floors near exp(-709)
  EXPECT_LT(far.gamma.dense().cwiseAbs().maxCoeff(), 1e-300);  // vectorized exp floors near exp(-709)
}

TEST(Design, NonPositivePhiIsRejected) {
  const Geometry g = cartoon(3);
  EXPECT_THROW(build_design(g.mesh, g.bg, 0.0, 1.0), NumericError);
  EXPECT_THROW(build_design(g.mesh, g.bg, 1.0, -1.0), NumericError);
}

TEST(Rebuild, SamePhiIsIdentical) {
  const Geometry g = cartoon(4);
  const KernelDesign d = build_design(g.mesh, g.bg, 0.5, 0.6);
  const KernelDesign r = rebuild_for_phi(d, 0.5, 0.6);
  EXPECT_EQ(d.beta.dense(), r.beta.dense());
  EXPECT_EQ(d.gamma.dense(), r.gamma.dense());
}

TEST(Rebuild, DoublingPhiSquaresTheKernel) {
  const Geometry g = cartoon(4);
  const KernelDesign d = build_design(g.mesh, g.bg, 0.3, 0.4);
  const KernelDesign r = rebuild_for_phi(d, 0.6, 0.8);
  for (const auto& [old, now] : {std::pair{&d.beta, &r.beta}, std::pair{&d.gamma, &r.gamma}}) {
    const Eigen::MatrixXd A = old->dense(), B = now->dense();
    const BoundarySet& set = old->geometry().set;
    for (int m = 0; m < A.rows(); ++m) {
      for (int p = 0; p < A.cols(); ++p) {
        const double w = set.weight_of[p];
        const double expect = (A(m, p) / w) * (A(m, p) / w) * w;
        EXPECT_NEAR(B(m, p), expect, 1e-12 * std::max(1.0, expect));
      }
    }
  }
}

TEST(Rebuild, MatchesColdBuildAndUncachedDistances) {
  const Geometry g = cartoon(4);
  const KernelDesign cached = rebuild_for_phi(build_design(g.mesh, g.bg, 0.3, 0.4), 0.9, 1.1);
  DesignOptions opts;
  opts.cache_distances = false;
  const KernelDesign cold = build_design(g.mesh, g.bg, 0.9, 1.1, opts);
  EXPECT_LT((cached.beta.dense() - cold.beta.dense()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((cached.gamma.dense() - cold.gamma.dense()).cwiseAbs().maxCoeff(), 1e-15);
}

// A rebuild shares the distance cache instead of recomputing it.
TEST(Rebuild, ReusesCachedDistances) {
  const Geometry g = cartoon(5);
  const KernelDesign base = build_design(g.mesh, g.bg, 0.5, 0.5);
  const KernelDesign w = rebuild_for_phi(base, 1.7, 2.3);
  EXPECT_EQ(&w.beta.geometry(), &base.beta.geometry());
  EXPECT_EQ(&w.gamma.geometry(), &base.gamma.geometry());
  const KernelDesign cold = build_design(g.mesh, g.bg, 1.7, 2.3);
  EXPECT_NE(&cold.beta.geometry(), &base.beta.geometry());
  EXPECT_EQ(w.beta.dense(), cold.beta.dense());
  EXPECT_EQ(w.gamma.dense(), cold.gamma.dense());
}

TEST(Apply, ZeroAndUnitVectors) {
  const Geometry g = cartoon(4);
  const KernelDesign d = build_design(g.mesh, g.bg, 0.5, 0.6);
  const auto nb = d.beta.cols(), nc = d.gamma.cols();
  EXPECT_EQ(apply(d, VectorXd::Zero(nb), VectorXd::Zero(nc)), VectorXd::Zero(d.beta.rows()));
  const Eigen::MatrixXd Xb = d.beta.dense();
  for (int p : {0, nb / 2, nb - 1}) {
    VectorXd e = VectorXd::Zero(nb);
    e[p] = 1.0;
    EXPECT_EQ(apply(d, e, VectorXd::Zero(nc)), Xb.col(p));
  }
}

TEST(Apply, MatchesDenseMultiply) {
  const Geometry g = cartoon(5);
  const KernelDesign d = build_design(g.mesh, g.bg, 0.5, 0.6);
  const auto brute = oracle::brute_boundaries(g.mesh);
  const oracle::Dense Ob = oracle::dense_design(g.mesh, brute.second, brute.beta_index, 0.5);
  const oracle::Dense Oc = oracle::dense_design(g.mesh, brute.third, brute.gamma_index, 0.6);
  CounterRng rng(2, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const VectorXd b = testing::normal_vector(rng, d.beta.cols(), 5.0);
    const VectorXd c = testing::normal_vector(rng, d.gamma.cols(), 5.0);
    const VectorXd got = apply(d, b, c);
    const oracle::Vec yb = oracle::multiply(Ob, oracle::Vec(b.data(), b.data() + b.size()));
    const oracle::Vec yc = oracle::multiply(Oc, oracle::Vec(c.data(), c.data() + c.size()));
    for (Eigen::Index m = 0; m < got.size(); ++m) {
      const double want = yb[static_cast<std::size_t>(m)] + yc[static_cast<std::size_t>(m)];
      EXPECT_NEAR(got[m], want, 1e-12 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST(Apply, DimensionMismatchThrows) {
  const Geometry g = cartoon(3);
  const KernelDesign d = build_design(g.mesh, g.bg, 0.5, 0.6);
  EXPECT_THROW(apply(d, VectorXd::Zero(d.beta.cols() + 1), VectorXd::Zero(d.gamma.cols())), std::invalid_argument);
}

// Property: linearity in the coefficients.
TEST(Apply, Linear) {
  const Geometry g = cartoon(4);
  const KernelDesign d = build_design(g.mesh, g.bg, 0.35, 0.55);
  CounterRng rng(3, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = testing::uniform(rng, -3, 3);
    const VectorXd b1 = testing::normal_vector(rng, d.beta.cols()), b2 = testing::normal_vector(rng, d.beta.cols());
    const VectorXd c1 = testing::normal_vector(rng, d.gamma.cols()), c2 = testing::normal_vector(rng, d.gamma.cols());
    const VectorXd lhs = apply(d, a * b1 + b2, a * c1 + c2);
    const VectorXd rhs = a * apply(d, b1, c1) + apply(d, b2, c2);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));
  }
}

// With a common decay rate the kernel part of each X_c column (column over
// its quadrature weight) is the kernel part of the X_b column at the same
// (grain, node); the quadrature weights differ (area vs length).
TEST(Design, EqualPhiMakesGammaColumnsBetaColumns) {
  for (const auto kind : {GeometryKind::cartoon3, GeometryKind::voronoi_grains}) {
    const GrainMesh mesh = generate_geometry(testing::small_spec(kind, 4, 0, 4));
    const BoundaryGeometry bg = extract_boundaries(mesh);
    const KernelDesign d = build_design(mesh, bg, 0.45, 0.45);
    const Eigen::MatrixXd Xb = d.beta.dense(), Xc = d.gamma.dense();
    for (int q = 0; q < bg.third.size(); ++q) {
      const int p = bg.second.index_of(bg.third.grain_of[q], bg.third.node_of[q]);
      ASSERT_GE(p, 0);
      const VectorXd kc = Xc.col(q) / bg.third.weight_of[q];
      const VectorXd kb = Xb.col(p) / bg.second.weight_of[p];
      EXPECT_LT((kc - kb).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Design, TruncationZeroesSmallKernelValues) {
  const Geometry g = cartoon(4);
  DesignOptions opts;
  opts.truncation = 0.2;
  const KernelDesign t = build_design(g.mesh, g.bg, 0.5, 0.5, opts);
  const KernelDesign full = build_design(g.mesh, g.bg, 0.5, 0.5);
  const Eigen::MatrixXd A = t.beta.dense(), B = full.beta.dense();
  for (int m = 0; m < A.rows(); ++m) {
    for (int p = 0; p < A.cols(); ++p) {
      const double kernel = B(m, p) / g.bg.second.weight_of[p];
      EXPECT_EQ(A(m, p), kernel < 0.2 ? 0.0 : B(m, p));
    }
  }
}

}  // namespace
}  // namespace igmrf
