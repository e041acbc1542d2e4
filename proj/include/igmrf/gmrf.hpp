#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "igmrf/densities.hpp"
#include "igmrf/error.hpp"
#include "igmrf/mesh.hpp"
#include "igmrf/rng.hpp"

namespace igmrf {

using Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

/// Hyperparameters of one latent boundary field (beta or gamma).
struct FieldHyperparams {
  double nu = 0.0;     // process mean
  double theta = 1.0;  // conditional-precision scale, > 0
  double kappa = 0.5;  // smoothness, in (0, 1)
  double rho = 0.0;    // between-grain weight, in (rho_lower, 1)
  double phi = 1.0;    // kernel decay rate, > 0

  bool operator==(const FieldHyperparams&) const = default;
};

/// Interval of rho keeping every row's K_p positive:
/// rho > -min_p |wgn(p)| / |bgn(p)| over indices with between-grain neighbours.
struct RhoBounds {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = 1.0;
  bool bounded_below = false;

  bool contains(double rho) const { return rho > lower && rho < upper; }
};

inline RhoBounds rho_bounds(const NeighborhoodGraph& graph) {
  RhoBounds b;
  double ratio = std::numeric_limits<double>::infinity();
  for (int p = 0; p < graph.size(); ++p) {
    if (graph.between_count(p) > 0) {
      ratio = std::min(ratio, static_cast<double>(graph.within_count(p)) / graph.between_count(p));
      b.bounded_below = true;
    }
  }
  if (b.bounded_below) b.lower = -ratio;
  return b;
}

/// Largest kappa for which Q is strictly diagonally dominant at this rho.
/// Equal to 1 for rho >= 0; for rho < 0 it is
/// min_p (|wgn| - |rho| |bgn|) / (|wgn| + |rho| |bgn|).
inline double dominance_kappa_limit(const NeighborhoodGraph& graph, double rho) {
  if (rho >= 0.0) return 1.0;
  double limit = 1.0;
  for (int p = 0; p < graph.size(); ++p) {
    const double w = graph.within_count(p);
    const double b = -rho * graph.between_count(p);
    if (b > 0.0) limit = std::min(limit, (w - b) / (w + b));
  }
  return limit;
}

enum class EntryKind : std::uint8_t { diagonal, within, between };

/// Sparse precision of a boundary field:
///   Q_pp = theta K_p / kappa,  Q_pq = -theta (wgn),  Q_pq = -theta rho (bgn),
///   K_p = |wgn(p)| + rho |bgn(p)|.
/// Both triangles are stored; the sparsity pattern depends only on the graph.
struct PrecisionMatrix {
  SparseMatrix matrix;
  VectorXd K;
  std::shared_ptr<const std::vector<EntryKind>> kinds;  // aligned with matrix.valuePtr()
  double theta = 1.0;
  double kappa = 0.5;
  double rho = 0.0;

  int size() const { return static_cast<int>(matrix.rows()); }
};

/// Pattern and bookkeeping shared by every assembly on one graph.
class PrecisionStructure {
 public:
  PrecisionStructure() = default;

  explicit PrecisionStructure(const NeighborhoodGraph& graph) : bounds_(rho_bounds(graph)) {
    const int n = graph.size();
    within_.resize(n);
    between_.resize(n);
    std::vector<Eigen::Triplet<double>> triplets;
    for (int p = 0; p < n; ++p) {
      within_[p] = graph.within_count(p);
      between_[p] = graph.between_count(p);
      triplets.emplace_back(p, p, 1.0);
      for (int q : graph.within[p]) triplets.emplace_back(q, p, 2.0);
      for (int q : graph.between[p]) triplets.emplace_back(q, p, 3.0);
    }
    pattern_.resize(n, n);
    pattern_.setFromTriplets(triplets.begin(), triplets.end());
    pattern_.makeCompressed();
    auto kinds = std::make_shared<std::vector<EntryKind>>(static_cast<std::size_t>(pattern_.nonZeros()));
    for (Eigen::Index k = 0; k < pattern_.nonZeros(); ++k) {
      const double tag = pattern_.valuePtr()[k];
      (*kinds)[static_cast<std::size_t>(k)] =
          tag == 1.0 ? EntryKind::diagonal : (tag == 2.0 ? EntryKind::within : EntryKind::between);
    }
    kinds_ = std::move(kinds);
  }

  int size() const { return static_cast<int>(pattern_.rows()); }
  const RhoBounds& bounds() const { return bounds_; }
  const VectorXd& within_counts() const { return within_; }
  const VectorXd& between_counts() const { return between_; }

  /// True when (theta, kappa, rho) lie in the region where Q is defined.
  bool admissible(const FieldHyperparams& hp) const {
    return std::isfinite(hp.theta) && hp.theta > 0.0 && hp.kappa > 0.0 && hp.kappa < 1.0 &&
           (size() == 0 || bounds_.contains(hp.rho));
  }

  PrecisionMatrix assemble(const FieldHyperparams& hp) const {
    if (!admissible(hp)) {
      throw NumericError("field hyperparameters outside admissible region (theta=" + std::to_string(hp.theta) +
                         ", kappa=" + std::to_string(hp.kappa) + ", rho=" + std::to_string(hp.rho) + ")");
    }
    PrecisionMatrix Q;
    Q.matrix = pattern_;
    Q.kinds = kinds_;
    Q.theta = hp.theta;
    Q.kappa = hp.kappa;
    Q.rho = hp.rho;
    Q.K = within_ + hp.rho * between_;
    double* values = Q.matrix.valuePtr();
    const int* outer = Q.matrix.outerIndexPtr();
    const auto& kinds = *kinds_;
    for (int p = 0; p < size(); ++p) {
      for (int k = outer[p]; k < outer[p + 1]; ++k) {
        switch (kinds[static_cast<std::size_t>(k)]) {
          case EntryKind::diagonal: values[k] = hp.theta * Q.K[p] / hp.kappa; break;
          case EntryKind::within: values[k] = -hp.theta; break;
          case EntryKind::between: values[k] = -hp.theta * hp.rho; break;
        }
      }
    }
    return Q;
  }

 private:
  SparseMatrix pattern_;
  std::shared_ptr<const std::vector<EntryKind>> kinds_ = std::make_shared<std::vector<EntryKind>>();
  VectorXd within_;
  VectorXd between_;
  RhoBounds bounds_;
};

inline PrecisionMatrix assemble_precision(const NeighborhoodGraph& graph, const FieldHyperparams& hp) {
  return PrecisionStructure(graph).assemble(hp);
}

/// Strict row diagonal dominance: Q_pp > sum_{q != p} |Q_pq| for every p.
inline bool diagonally_dominant(const SparseMatrix& Q) {
  for (int p = 0; p < Q.outerSize(); ++p) {
    double diag = 0.0, off = 0.0;
    for (SparseMatrix::InnerIterator it(Q, p); it; ++it) {
      if (it.row() == p) {
        diag = it.value();
      } else {
        off += std::abs(it.value());
      }
    }
    if (!(diag > off)) return false;
  }
  return true;
}

struct ConditionalMoments {
  double mean;
  double variance;
};

/// Full conditional of x_p given all other entries:
///   mean = nu + (kappa / K_p) (sum_wgn (x_q - nu) + rho sum_bgn (x_q - nu)),
///   var  = kappa / (theta K_p).
inline ConditionalMoments conditional_moments(const PrecisionMatrix& Q, const FieldHyperparams& hp,
                                              const VectorXd& x, int p) {
  const int* outer = Q.matrix.outerIndexPtr();
  const int* inner = Q.matrix.innerIndexPtr();
  const auto& kinds = *Q.kinds;
  double within = 0.0, between = 0.0;
  for (int k = outer[p]; k < outer[p + 1]; ++k) {
    const EntryKind kind = kinds[static_cast<std::size_t>(k)];
    if (kind == EntryKind::within) {
      within += x[inner[k]] - hp.nu;
    } else if (kind == EntryKind::between) {
      between += x[inner[k]] - hp.nu;
    }
  }
  const double Kp = Q.K[p];
  return {hp.nu + (Q.kappa / Kp) * (within + Q.rho * between), Q.kappa / (Q.theta * Kp)};
}

/// Sparse Cholesky P Q P^T = L L^T with the AMD ordering computed on the
/// first factorization and reused while the pattern is unchanged.
class SparseCholesky {
 public:
  SparseCholesky() = default;
  explicit SparseCholesky(const SparseMatrix& Q) { factorize(Q); }

  // Eigen's solver is neither copyable nor movable; factors are rebuilt instead.
  SparseCholesky(const SparseCholesky&) = delete;
  SparseCholesky& operator=(const SparseCholesky&) = delete;

  void factorize(const SparseMatrix& Q) {
    size_ = static_cast<int>(Q.rows());
    if (size_ == 0) {
      log_det_ = 0.0;
      ok_ = true;
      return;
    }
    if (!analyzed_ || Q.nonZeros() != pattern_nonzeros_ || Q.rows() != pattern_rows_) {
      llt_.analyzePattern(Q);
      analyzed_ = true;
      pattern_nonzeros_ = Q.nonZeros();
      pattern_rows_ = Q.rows();
    }
    llt_.factorize(Q);
    ok_ = llt_.info() == Eigen::Success;
    if (!ok_) throw NumericError("sparse Cholesky factorization failed (matrix not positive definite)");
    log_det_ = 2.0 * llt_.matrixL().nestedExpression().diagonal().array().log().sum();
    if (!std::isfinite(log_det_)) {
      ok_ = false;
      throw NumericError("sparse Cholesky produced a non-finite log determinant");
    }
  }

  int size() const { return size_; }
  double log_determinant() const { return log_det_; }

  VectorXd solve(const VectorXd& b) const {
    if (size_ == 0) return VectorXd();
    return llt_.solve(b);
  }

  /// x with covariance Q^{-1} from a standard normal vector z.
  VectorXd whiten_inverse(const VectorXd& z) const {
    if (size_ == 0) return VectorXd();
    VectorXd u = llt_.matrixU().solve(z);
    return llt_.permutationPinv() * u;
  }

 private:
  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt_;
  bool analyzed_ = false;
  bool ok_ = false;
  Eigen::Index pattern_nonzeros_ = -1;
  Eigen::Index pattern_rows_ = -1;
  int size_ = 0;
  double log_det_ = 0.0;
};

/// (x - mean)^T Q (x - mean).
inline double quadratic_form(const SparseMatrix& Q, const VectorXd& x, const VectorXd& mean) {
  const VectorXd d = x - mean;
  return d.dot(Q * d);
}

/// log N(x; mean, Q^{-1}) given a factorization of Q.
inline double log_density_gmrf(const PrecisionMatrix& Q, const SparseCholesky& factor, const VectorXd& mean,
                               const VectorXd& x) {
  const auto n = static_cast<double>(Q.size());
  return 0.5 * factor.log_determinant() - 0.5 * n * stats::kLogTwoPi - 0.5 * quadratic_form(Q.matrix, x, mean);
}

inline double log_density_gmrf(const PrecisionMatrix& Q, const VectorXd& mean, const VectorXd& x) {
  SparseCholesky factor(Q.matrix);
  return log_density_gmrf(Q, factor, mean, x);
}

inline VectorXd standard_normal_vector(Eigen::Index n, CounterRng& rng) {
  VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
  return z;
}

inline VectorXd sample_gmrf(const SparseCholesky& factor, const VectorXd& mean, CounterRng& rng) {
  return mean + factor.whiten_inverse(standard_normal_vector(mean.size(), rng));
}

inline VectorXd sample_gmrf(const PrecisionMatrix& Q, const VectorXd& mean, CounterRng& rng) {
  SparseCholesky factor(Q.matrix);
  return sample_gmrf(factor, mean, rng);
}

/// Support of the uniform rho prior; also fixes the probit map for rho.
struct RhoPriorRange {
  double lower = -0.4;
  double upper = 1.0;
};

/// (ln phi, ln(theta / kappa), Phi^{-1}(kappa), Phi^{-1}((rho - lo) / (hi - lo))).
using TransformedHyperparams = Eigen::Vector4d;

inline TransformedHyperparams transform(const FieldHyperparams& hp, const RhoPriorRange& range = {}) {
  return {std::log(hp.phi), std::log(hp.theta / hp.kappa), stats::normal_quantile(hp.kappa),
          stats::normal_quantile((hp.rho - range.lower) / (range.upper - range.lower))};
}

inline FieldHyperparams untransform(const TransformedHyperparams& a, double nu, const RhoPriorRange& range = {}) {
  FieldHyperparams hp;
  hp.nu = nu;
  hp.phi = std::exp(a[0]);
  hp.kappa = stats::normal_cdf(a[2]);
  hp.theta = hp.kappa * std::exp(a[1]);
  hp.rho = range.lower + (range.upper - range.lower) * stats::normal_cdf(a[3]);
  return hp;
}

/// ln |det d(phi, theta, kappa, rho) / d(alpha)|. The map is triangular, so
/// the determinant is phi * theta * phi_N(a3) * (hi - lo) phi_N(a4).
inline double log_jacobian(const FieldHyperparams& hp, const RhoPriorRange& range = {}) {
  const double a3 = stats::normal_quantile(hp.kappa);
  const double a4 = stats::normal_quantile((hp.rho - range.lower) / (range.upper - range.lower));
  return std::log(hp.phi) + std::log(hp.theta) + stats::log_std_normal_pdf(a3) + std::log(range.upper - range.lower) +
         stats::log_std_normal_pdf(a4);
}

}  // namespace igmrf
