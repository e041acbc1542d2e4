#include <gtest/gtest.h>

#include "oracle/dense.hpp"
#include "support.hpp"

namespace igmrf::oracle {
namespace {

Dense random_spd(CounterRng& rng, int n) {
  Dense A(n, n);
  for (double& v : A.a) v = rng.normal();
  Dense S = multiply(transpose(A), A);
  for (int i = 0; i < n; ++i) S(i, i) += n;
  return S;
}

TEST(OracleSelf, CholeskyReproducesMatrix) {
  CounterRng rng(1, 0);
  const Dense S = random_spd(rng, 12);
  const Dense L = cholesky(S);
  const Dense back = multiply(L, transpose(L));
  for (std::size_t k = 0; k < S.a.size(); ++k) EXPECT_NEAR(back.a[k], S.a[k], 1e-10);
  Dense bad = Dense::identity(2);
  bad(1, 1) = -1.0;
  EXPECT_THROW(cholesky(bad), std::domain_error);
}

TEST(OracleSelf, InverseTimesMatrixIsIdentity) {
  CounterRng rng(2, 0);
  const Dense S = random_spd(rng, 15);
  const Dense I = multiply(S, inverse(S));
  for (int i = 0; i < 15; ++i)
    for (int j = 0; j < 15; ++j) EXPECT_NEAR(I(i, j), i == j ? 1.0 : 0.0, 1e-12);
}

TEST(OracleSelf, JacobiEigenvaluesOfKnownMatrices) {
  // Path-graph Laplacian plus identity: eigenvalues 1 + 2 - 2 cos(k pi / n).
  const int n = 8;
  Dense A(n, n);
  for (int i = 0; i < n; ++i) {
    A(i, i) = 1.0 + (i == 0 || i == n - 1 ? 1.0 : 2.0);
    if (i + 1 < n) A(i, i + 1) = A(i + 1, i) = -1.0;
  }
  const Vec ev = jacobi_eigenvalues(A);
  for (int k = 0; k < n; ++k) EXPECT_NEAR(ev[static_cast<std::size_t>(k)], 3.0 - 2.0 * std::cos(k * M_PI / n), 1e-12);
}

TEST(OracleSelf, LogDeterminantOfDiagonal) {
  Dense D(3, 3);
  D(0, 0) = 2;
  D(1, 1) = 3;
  D(2, 2) = 5;
  EXPECT_NEAR(log_det_spd(D), std::log(30.0), 1e-14);
}

TEST(OracleSelf, SizeCapIsEnforced) {
  DenseInstance in;
  in.Q = Dense(kSizeCap + 1, kSizeCap + 1);
  EXPECT_THROW(in.check(), std::length_error);
}

TEST(OracleSelf, ConditionalOfIndependentBlocksIsMarginal) {
  DenseInstance in;
  in.Q = Dense::identity(3);
  in.Q(0, 0) = 4.0;
  in.X = Dense(0, 3);
  in.nu = {1.0, 2.0, 3.0};
  const Gaussian c = dense_conditional(in, {0}, {9.0, 9.0, 9.0});
  EXPECT_NEAR(c.mean[0], 1.0, 1e-14);
  EXPECT_NEAR(c.cov(0, 0), 0.25, 1e-14);
}

}  // namespace
}  // namespace igmrf::oracle
