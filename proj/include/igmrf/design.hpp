#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "igmrf/error.hpp"
#include "igmrf/gmrf.hpp"
#include "igmrf/mesh.hpp"

namespace igmrf {

struct DesignOptions {
  /// Keep the per-grain centroid-to-node distance blocks in memory. When off,
  /// distances are recomputed on every rebuild.
  bool cache_distances = true;
  /// Kernel values below this are stored as zero; 0 disables truncation.
  double truncation = 0.0;
  int threads = 1;
};

/// Everything about one field's kernel design that does not depend on phi.
struct DesignGeometry {
  std::vector<std::vector<int>> rows;  // element indices of each grain
  std::vector<Point3> centroids;
  std::vector<Point3> nodes;
  BoundarySet set;
  std::vector<Eigen::MatrixXd> distances;  // per grain, |rows| x |set in grain|; empty when not cached
  DesignOptions options;
  int element_count = 0;

  Eigen::MatrixXd distance_block(int grain) const {
    const auto g = static_cast<std::size_t>(grain - 1);
    if (!distances.empty()) return distances[g];
    const auto& r = rows[g];
    const auto& cols = set.nodes[g];
    Eigen::MatrixXd d(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const Point3& v = nodes[static_cast<std::size_t>(cols[j])];
      for (std::size_t i = 0; i < r.size(); ++i) {
        d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            (centroids[static_cast<std::size_t>(r[i])] - v).norm();
      }
    }
    return d;
  }
};

/// Block-diagonal kernel design X for one field:
///   X[m, p] = exp(-phi d(c_m, v_n(p))) * w_p  when g(m) = g(p), else 0.
/// Stored as one dense block per grain.
class FieldDesign {
 public:
  FieldDesign() = default;

  FieldDesign(std::shared_ptr<const DesignGeometry> geometry, double phi) : geometry_(std::move(geometry)), phi_(phi) {
    if (!(phi > 0.0) || !std::isfinite(phi)) throw NumericError("kernel decay rate phi must be positive and finite");
    const int G = grain_count();
    blocks_.resize(static_cast<std::size_t>(G));
#pragma omp parallel for schedule(dynamic) num_threads(geometry_->options.threads) if (geometry_->options.threads > 1)
    for (int g = 1; g <= G; ++g) blocks_[static_cast<std::size_t>(g - 1)] = compute_block(g);
  }

  double phi() const { return phi_; }
  int rows() const { return geometry_ ? geometry_->element_count : 0; }
  int cols() const { return geometry_ ? geometry_->set.size() : 0; }
  int grain_count() const { return geometry_ ? geometry_->set.grain_count() : 0; }
  const DesignGeometry& geometry() const { return *geometry_; }

  const Eigen::MatrixXd& block(int grain) const { return blocks_[static_cast<std::size_t>(grain - 1)]; }
  const std::vector<int>& rows_of(int grain) const { return geometry_->rows[static_cast<std::size_t>(grain - 1)]; }
  int col_offset(int grain) const { return geometry_->set.offset_of(grain); }
  int cols_in(int grain) const { return geometry_->set.count_in(grain); }

  /// Same geometry at a new decay rate; only the exponentials are recomputed
  /// when distances are cached.
  FieldDesign with_phi(double phi) const {
    if (phi == phi_) return *this;
    return FieldDesign(geometry_, phi);
  }

  /// out += scale * X * coef
  void multiply_add(const VectorXd& coef, VectorXd& out, double scale = 1.0) const {
    if (coef.size() != cols() || out.size() != rows()) {
      throw std::invalid_argument("FieldDesign::multiply_add: dimension mismatch");
    }
    for (int g = 1; g <= grain_count(); ++g) {
      const int n = cols_in(g);
      if (n == 0) continue;
      const VectorXd part = block(g) * coef.segment(col_offset(g), n);
      const auto& r = rows_of(g);
      for (std::size_t i = 0; i < r.size(); ++i) out[r[i]] += scale * part[static_cast<Eigen::Index>(i)];
    }
  }

  VectorXd multiply(const VectorXd& coef) const {
    VectorXd out = VectorXd::Zero(rows());
    multiply_add(coef, out);
    return out;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(rows(), cols());
    for (int g = 1; g <= grain_count(); ++g) {
      const auto& r = rows_of(g);
      for (std::size_t i = 0; i < r.size(); ++i) {
        X.row(r[i]).segment(col_offset(g), cols_in(g)) = block(g).row(static_cast<Eigen::Index>(i));
      }
    }
    return X;
  }

 private:
  Eigen::MatrixXd compute_block(int grain) const {
    const auto& set = geometry_->set;
    const auto g = static_cast<std::size_t>(grain - 1);
    Eigen::MatrixXd kernel = (-phi_ * geometry_->distance_block(grain).array()).exp().matrix();
    if (geometry_->options.truncation > 0.0) {
      kernel = (kernel.array() < geometry_->options.truncation).select(0.0, kernel);
    }
    const Eigen::Map<const VectorXd> w(set.weights[g].data(), static_cast<Eigen::Index>(set.weights[g].size()));
    return kernel * w.asDiagonal();
  }

  std::shared_ptr<const DesignGeometry> geometry_;
  double phi_ = 1.0;
  std::vector<Eigen::MatrixXd> blocks_;
};

inline std::shared_ptr<const DesignGeometry> make_design_geometry(const GrainMesh& mesh, const BoundarySet& set,
                                                                  const DesignOptions& options = {}) {
  auto geo = std::make_shared<DesignGeometry>();
  geo->rows = elements_by_grain(mesh);
  geo->centroids = centroids(mesh);
  geo->nodes = mesh.nodes;
  geo->set = set;
  geo->options = options;
  geo->element_count = static_cast<int>(mesh.element_count());
  if (options.cache_distances) {
    std::vector<Eigen::MatrixXd> blocks;
    for (int g = 1; g <= set.grain_count(); ++g) blocks.push_back(geo->distance_block(g));
    geo->distances = std::move(blocks);
  }
  return geo;
}

/// X_b and X_c.
struct KernelDesign {
  FieldDesign beta;
  FieldDesign gamma;
};

inline KernelDesign build_design(const GrainMesh& mesh, const BoundaryGeometry& bg, double phi_beta,
                                 double phi_gamma, const DesignOptions& options = {}) {
  return {FieldDesign(make_design_geometry(mesh, bg.second, options), phi_beta),
          FieldDesign(make_design_geometry(mesh, bg.third, options), phi_gamma)};
}

inline KernelDesign rebuild_for_phi(const KernelDesign& design, double phi_beta, double phi_gamma) {
  return {design.beta.with_phi(phi_beta), design.gamma.with_phi(phi_gamma)};
}

/// X_b beta + X_c gamma.
inline VectorXd apply(const KernelDesign& design, const VectorXd& beta, const VectorXd& gamma) {
  VectorXd out = VectorXd::Zero(design.beta.rows());
  design.beta.multiply_add(beta, out);
  design.gamma.multiply_add(gamma, out);
  return out;
}

}  // namespace igmrf
