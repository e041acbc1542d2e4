#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "igmrf/mesh.hpp"
#include "igmrf/rng.hpp"
#include "igmrf/synth.hpp"

namespace igmrf::testing {

inline GrainMesh single_tetrahedron() {
  GrainMesh m;
  m.nodes = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  m.elements = {{0, 1, 2, 3}};
  m.grain_of_element = {1};
  m.grain_count = 1;
  return m;
}

/// Two tetrahedra sharing the face (0, 1, 2), one per grain.
inline GrainMesh two_tetrahedra() {
  GrainMesh m;
  m.nodes = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, -1}};
  m.elements = {{0, 1, 2, 3}, {0, 1, 2, 4}};
  m.grain_of_element = {1, 2};
  m.grain_count = 2;
  return m;
}

inline SynthSpec small_spec(GeometryKind kind, int resolution, int layers = 0, std::uint64_t seed = 1) {
  SynthSpec s;
  s.geometry = kind;
  s.grains = kind == GeometryKind::cartoon3 ? 3 : (kind == GeometryKind::slab_stack ? 2 : 4);
  s.resolution = resolution;
  s.layers = layers;
  s.extent = 10.0;
  s.seed = seed;
  return s;
}

inline GrainMesh cartoon3(int resolution, int layers = 0) {
  return generate_geometry(small_spec(GeometryKind::cartoon3, resolution, layers));
}

inline std::string to_text(const GrainMesh& mesh) {
  std::ostringstream out;
  write_mesh(out, mesh);
  return out.str();
}

inline GrainMesh from_text(const std::string& text) {
  std::istringstream in(text);
  return parse_mesh(in);
}

/// Uniform in (lo, hi).
inline double uniform(CounterRng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

inline Eigen::VectorXd normal_vector(CounterRng& rng, Eigen::Index n, double sd = 1.0) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = sd * rng.normal();
  return v;
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

}  // namespace igmrf::testing
