#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "igmrf/design.hpp"
#include "igmrf/error.hpp"
#include "igmrf/gmrf.hpp"
#include "igmrf/mesh.hpp"
#include "igmrf/model.hpp"
#include "igmrf/rng.hpp"

namespace igmrf {

enum class GeometryKind { slab_stack, voronoi_grains, cartoon3 };

inline std::string to_string(GeometryKind kind) {
  switch (kind) {
    case GeometryKind::slab_stack: return "slab-stack";
    case GeometryKind::voronoi_grains: return "voronoi-grains";
    case GeometryKind::cartoon3: return "cartoon3";
  }
  return "?";
}

inline GeometryKind parse_geometry_kind(const std::string& name) {
  if (name == "slab-stack") return GeometryKind::slab_stack;
  if (name == "voronoi-grains") return GeometryKind::voronoi_grains;
  if (name == "cartoon3") return GeometryKind::cartoon3;
  throw ConfigError("unknown geometry kind `" + name + "` (expected slab-stack, voronoi-grains or cartoon3)");
}

/// Parameter values the synthetic data are drawn at.
struct SynthTruth {
  double mu = 800.0;
  double tau2 = 2500.0;
  std::vector<double> mu_g;  // drawn from N(mu, tau2) when empty
  FieldHyperparams beta{0.0, 2.0, 0.5, 0.3, 0.3};
  FieldHyperparams gamma{0.0, 2.0, 0.5, 0.3, 0.5};
  double sigma2 = 100.0;
  double df = 4.0;
  bool draw_fields = true;  // false fixes beta = gamma = 0
};

struct SynthSpec {
  GeometryKind geometry = GeometryKind::cartoon3;
  int grains = 3;
  int resolution = 6;  // cubes along x and y
  int layers = 0;      // cubes along z; 0 means `resolution`
  double extent = 20.0;  // side length along x and y
  std::uint64_t seed = 1;
  SynthTruth truth;

  int z_cells() const { return layers > 0 ? layers : resolution; }
};

namespace detail {

/// Structured grid of cubes, each split into the six Kuhn tetrahedra around
/// its main diagonal; the split is conformal across neighbouring cubes.
inline GrainMesh kuhn_grid(int nx, int ny, int nz, double h) {
  GrainMesh mesh;
  const auto node_id = [&](int i, int j, int k) { return i + (nx + 1) * (j + (ny + 1) * k); };
  for (int k = 0; k <= nz; ++k) {
    for (int j = 0; j <= ny; ++j) {
      for (int i = 0; i <= nx; ++i) mesh.nodes.emplace_back(h * i, h * j, h * k);
    }
  }
  static constexpr std::array<std::array<int, 3>, 6> kPermutations{
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const auto corner = [&](int bits) { return node_id(i + (bits & 1), j + ((bits >> 1) & 1), k + ((bits >> 2) & 1)); };
        for (const auto& perm : kPermutations) {
          const int b1 = 1 << perm[0];
          const int b2 = b1 | (1 << perm[1]);
          mesh.elements.push_back({corner(0), corner(b1), corner(b2), corner(7)});
        }
      }
    }
  }
  mesh.grain_of_element.assign(mesh.elements.size(), 0);
  return mesh;
}

}  // namespace detail

/// Conformal grain-labelled tetrahedral mesh; a pure function of the spec.
///
/// slab-stack: grains are equal slabs along z (no triple junctions).
/// cartoon3: three 120-degree sectors around a vertical triple line.
/// voronoi-grains: elements labelled by the nearest of `grains` random seeds.
inline GrainMesh generate_geometry(const SynthSpec& spec) {
  if (spec.grains < 2) throw ConfigError("synthetic geometry needs at least 2 grains");
  if (spec.resolution < 1 || spec.z_cells() < 1) throw ConfigError("mesh resolution must be positive");
  if (spec.geometry == GeometryKind::cartoon3 && spec.grains != 3) {
    throw ConfigError("cartoon3 geometry has exactly 3 grains");
  }
  const int nx = spec.resolution, ny = spec.resolution, nz = spec.z_cells();
  const double h = spec.extent / spec.resolution;
  GrainMesh mesh = detail::kuhn_grid(nx, ny, nz, h);
  mesh.grain_count = spec.grains;
  const auto cents = centroids(mesh);

  switch (spec.geometry) {
    case GeometryKind::slab_stack: {
      if (nz < spec.grains) throw ConfigError("slab-stack needs at least one cube layer per grain");
      for (std::size_t m = 0; m < cents.size(); ++m) {
        const int layer = static_cast<int>(cents[m].z() / h);
        mesh.grain_of_element[m] = 1 + (layer * spec.grains) / nz;
      }
      break;
    }
    case GeometryKind::cartoon3: {
      const double cx = 0.5 * nx * h, cy = 0.5 * ny * h;
      constexpr double kOffset = 0.35;  // keeps sector edges off the grid diagonals
      for (std::size_t m = 0; m < cents.size(); ++m) {
        double angle = std::atan2(cents[m].y() - cy, cents[m].x() - cx) - kOffset;
        while (angle < 0.0) angle += 2.0 * std::numbers::pi;
        const int sector = static_cast<int>(angle / (2.0 * std::numbers::pi / 3.0));
        mesh.grain_of_element[m] = 1 + std::min(sector, 2);
      }
      break;
    }
    case GeometryKind::voronoi_grains: {
      CounterRng rng(spec.seed, 1);
      std::vector<Point3> seeds;
      for (int g = 0; g < spec.grains; ++g) {
        seeds.emplace_back(rng.uniform() * nx * h, rng.uniform() * ny * h, rng.uniform() * nz * h);
      }
      for (std::size_t m = 0; m < cents.size(); ++m) {
        int best = 0;
        for (int g = 1; g < spec.grains; ++g) {
          if ((cents[m] - seeds[g]).squaredNorm() < (cents[m] - seeds[best]).squaredNorm()) best = g;
        }
        mesh.grain_of_element[m] = best + 1;
      }
      break;
    }
  }
  std::vector<int> count(static_cast<std::size_t>(spec.grains), 0);
  for (int g : mesh.grain_of_element) ++count[static_cast<std::size_t>(g - 1)];
  for (int g = 0; g < spec.grains; ++g) {
    if (count[static_cast<std::size_t>(g)] == 0) {
      throw ConfigError("resolution too coarse: grain " + std::to_string(g + 1) + " received no elements");
    }
  }
  validate(mesh);
  return mesh;
}

/// A simulated dataset with every latent quantity it was drawn from.
struct SimulatedData {
  Eigen::VectorXd y;
  Eigen::VectorXd mu_g;
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;
  Eigen::VectorXd omega;
  Eigen::VectorXd epsilon;
  Eigen::VectorXd signal;  // X_b beta + X_c gamma
};

/// y = mu_{g(m)} + X_b beta + X_c gamma + eps with beta, gamma drawn from their
/// GMRF priors and eps from t_df(0, sigma2) through the scale mixture.
inline SimulatedData simulate_data(const GrainMesh& mesh, const SynthSpec& spec, CounterRng& rng) {
  const SynthTruth& t = spec.truth;
  if (!(t.sigma2 >= 0.0) || !(t.df > 0.0) || !(t.tau2 >= 0.0)) {
    throw NumericError("true sigma2, tau2 must be non-negative and df positive");
  }
  const BoundaryGeometry bg = extract_boundaries(mesh);
  const FieldGraphs graphs = build_neighborhoods(mesh, bg);
  const KernelDesign design = build_design(mesh, bg, t.beta.phi, t.gamma.phi);
  const auto M = static_cast<Eigen::Index>(mesh.element_count());

  SimulatedData out;
  out.mu_g.resize(mesh.grain_count);
  if (!t.mu_g.empty()) {
    if (static_cast<int>(t.mu_g.size()) != mesh.grain_count) throw ConfigError("truth mu_g length differs from grain count");
    for (int g = 0; g < mesh.grain_count; ++g) out.mu_g[g] = t.mu_g[static_cast<std::size_t>(g)];
  } else {
    for (int g = 0; g < mesh.grain_count; ++g) out.mu_g[g] = rng.normal(t.mu, std::sqrt(t.tau2));
  }

  const auto draw_field = [&](const NeighborhoodGraph& graph, const FieldHyperparams& hp) -> Eigen::VectorXd {
    const auto n = static_cast<Eigen::Index>(graph.size());
    if (!t.draw_fields || n == 0) return Eigen::VectorXd::Zero(n);
    const PrecisionMatrix Q = assemble_precision(graph, hp);
    return sample_gmrf(Q, Eigen::VectorXd::Constant(n, hp.nu), rng);
  };
  out.beta = draw_field(graphs.beta, t.beta);
  out.gamma = draw_field(graphs.gamma, t.gamma);
  out.signal = apply(design, out.beta, out.gamma);

  out.omega.resize(M);
  out.epsilon.resize(M);
  for (Eigen::Index m = 0; m < M; ++m) {
    const ScaleMixtureDraw d = scale_mixture_draw(t.df, t.sigma2, rng);
    out.omega[m] = d.omega;
    out.epsilon[m] = d.epsilon;
  }
  out.y = expand_grain_means(out.mu_g, mesh.grain_of_element) + out.signal + out.epsilon;
  return out;
}

inline SimulatedData simulate_data(const GrainMesh& mesh, const SynthSpec& spec) {
  CounterRng rng(spec.seed, 2);
  return simulate_data(mesh, spec, rng);
}

}  // namespace igmrf
