#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "igmrf/error.hpp"

namespace igmrf {

using Point3 = Eigen::Vector3d;

/// Grain-labelled tetrahedral mesh. Grain ids are 1-based, node indices 0-based.
struct GrainMesh {
  std::vector<Point3> nodes;
  std::vector<std::array<int, 4>> elements;
  std::vector<int> grain_of_element;
  int grain_count = 0;

  std::size_t node_count() const { return nodes.size(); }
  std::size_t element_count() const { return elements.size(); }
};

inline double signed_volume(const Point3& a, const Point3& b, const Point3& c, const Point3& d) {
  return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

inline double triangle_area(const Point3& a, const Point3& b, const Point3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

/// Throws MeshError(validation) on the first violated invariant.
inline void validate(const GrainMesh& mesh) {
  using Kind = MeshError::Kind;
  if (mesh.elements.size() != mesh.grain_of_element.size()) {
    throw MeshError(Kind::validation, "element and grain-label counts differ");
  }
  if (mesh.grain_count < 1) throw MeshError(Kind::validation, "mesh declares no grains");
  const auto n = static_cast<int>(mesh.nodes.size());
  std::vector<int> grain_hits(static_cast<std::size_t>(mesh.grain_count), 0);
  for (std::size_t m = 0; m < mesh.elements.size(); ++m) {
    const auto& e = mesh.elements[m];
    for (int k = 0; k < 4; ++k) {
      if (e[k] < 0 || e[k] >= n) {
        throw MeshError(Kind::validation, "element " + std::to_string(m) + " references node " +
                                              std::to_string(e[k]) + " of a " + std::to_string(n) + "-node list");
      }
      for (int j = 0; j < k; ++j) {
        if (e[j] == e[k]) throw MeshError(Kind::validation, "element " + std::to_string(m) + " repeats a node");
      }
    }
    const int g = mesh.grain_of_element[m];
    if (g < 1 || g > mesh.grain_count) {
      throw MeshError(Kind::validation, "element " + std::to_string(m) + " has grain id " + std::to_string(g) +
                                            " outside 1.." + std::to_string(mesh.grain_count));
    }
    ++grain_hits[static_cast<std::size_t>(g - 1)];

    const Point3 &a = mesh.nodes[e[0]], &b = mesh.nodes[e[1]], &c = mesh.nodes[e[2]], &d = mesh.nodes[e[3]];
    const double scale = std::max({(b - a).norm(), (c - a).norm(), (d - a).norm()});
    if (!(std::abs(signed_volume(a, b, c, d)) > 1e-12 * scale * scale * scale)) {
      throw MeshError(Kind::validation, "element " + std::to_string(m) + " has zero volume");
    }
  }
  for (int g = 1; g <= mesh.grain_count; ++g) {
    if (grain_hits[static_cast<std::size_t>(g - 1)] == 0) {
      throw MeshError(Kind::validation, "grain " + std::to_string(g) + " has no elements");
    }
  }
}

/// Reads the text mesh format:
///   nodes N elements M grains G
///   N lines `x y z`
///   M lines `n0 n1 n2 n3 g`
inline GrainMesh parse_mesh(std::istream& in) {
  using Kind = MeshError::Kind;
  std::string w_nodes, w_elements, w_grains;
  long long n = -1, m = -1, g = -1;
  if (!(in >> w_nodes >> n >> w_elements >> m >> w_grains >> g) || w_nodes != "nodes" || w_elements != "elements" ||
      w_grains != "grains" || n < 0 || m < 0 || g < 0) {
    throw MeshError(Kind::parse, "expected header `nodes N elements M grains G`");
  }
  GrainMesh mesh;
  mesh.grain_count = static_cast<int>(g);
  mesh.nodes.resize(static_cast<std::size_t>(n));
  for (auto& p : mesh.nodes) {
    if (!(in >> p.x() >> p.y() >> p.z())) throw MeshError(Kind::parse, "truncated or malformed node block");
  }
  mesh.elements.resize(static_cast<std::size_t>(m));
  mesh.grain_of_element.resize(static_cast<std::size_t>(m));
  for (std::size_t k = 0; k < mesh.elements.size(); ++k) {
    auto& e = mesh.elements[k];
    if (!(in >> e[0] >> e[1] >> e[2] >> e[3] >> mesh.grain_of_element[k])) {
      throw MeshError(Kind::parse, "truncated or malformed element block at element " + std::to_string(k));
    }
  }
  std::string extra;
  if (in >> extra) throw MeshError(Kind::parse, "unexpected trailing content `" + extra + "`");
  validate(mesh);
  return mesh;
}

inline GrainMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh file " + path.string());
  return parse_mesh(in);
}

inline void write_mesh(std::ostream& out, const GrainMesh& mesh) {
  out << "nodes " << mesh.nodes.size() << " elements " << mesh.elements.size() << " grains " << mesh.grain_count
      << '\n';
  out << std::setprecision(17);
  for (const auto& p : mesh.nodes) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  for (std::size_t k = 0; k < mesh.elements.size(); ++k) {
    const auto& e = mesh.elements[k];
    out << e[0] << ' ' << e[1] << ' ' << e[2] << ' ' << e[3] << ' ' << mesh.grain_of_element[k] << '\n';
  }
}

inline std::vector<Point3> centroids(const GrainMesh& mesh) {
  std::vector<Point3> out;
  out.reserve(mesh.elements.size());
  for (const auto& e : mesh.elements) {
    out.push_back(0.25 * (mesh.nodes[e[0]] + mesh.nodes[e[1]] + mesh.nodes[e[2]] + mesh.nodes[e[3]]));
  }
  return out;
}

/// Element indices of each grain, ascending; entry g-1 holds grain g.
inline std::vector<std::vector<int>> elements_by_grain(const GrainMesh& mesh) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(mesh.grain_count));
  for (std::size_t m = 0; m < mesh.elements.size(); ++m) {
    out[static_cast<std::size_t>(mesh.grain_of_element[m] - 1)].push_back(static_cast<int>(m));
  }
  return out;
}

/// Boundary nodes of one order (second or third) for every grain, with their
/// quadrature weights and the flattened latent-field index p.
///
/// Flattening is grain-major: grain 1's nodes in ascending node order, then
/// grain 2's, and so on.
struct BoundarySet {
  std::vector<std::vector<int>> nodes;       // per grain, ascending node index
  std::vector<std::vector<double>> weights;  // parallel to `nodes`
  std::vector<int> offsets;                  // flattened start of each grain; size G + 1
  std::vector<int> node_of;                  // n(p)
  std::vector<int> grain_of;                 // g(p), 1-based
  std::vector<double> weight_of;

  int size() const { return static_cast<int>(node_of.size()); }
  int grain_count() const { return static_cast<int>(nodes.size()); }
  int count_in(int grain) const { return offsets[grain] - offsets[grain - 1]; }
  int offset_of(int grain) const { return offsets[grain - 1]; }
  std::span<const int> grain_nodes(int grain) const { return nodes[static_cast<std::size_t>(grain - 1)]; }

  /// Flattened index of (grain, node), or -1 when the node is not in the set.
  int index_of(int grain, int node) const {
    const auto& v = nodes[static_cast<std::size_t>(grain - 1)];
    auto it = std::lower_bound(v.begin(), v.end(), node);
    if (it == v.end() || *it != node) return -1;
    return offsets[grain - 1] + static_cast<int>(it - v.begin());
  }

  static BoundarySet from_weights(const std::vector<std::map<int, double>>& per_grain) {
    BoundarySet s;
    s.nodes.resize(per_grain.size());
    s.weights.resize(per_grain.size());
    s.offsets.assign(per_grain.size() + 1, 0);
    for (std::size_t g = 0; g < per_grain.size(); ++g) {
      for (const auto& [node, w] : per_grain[g]) {
        s.nodes[g].push_back(node);
        s.weights[g].push_back(w);
        s.node_of.push_back(node);
        s.grain_of.push_back(static_cast<int>(g) + 1);
        s.weight_of.push_back(w);
      }
      s.offsets[g + 1] = s.offsets[g] + static_cast<int>(per_grain[g].size());
    }
    return s;
  }
};

/// Triangle shared by elements of two different grains.
struct InterfaceFace {
  std::array<int, 3> nodes;
  std::array<int, 2> grains;  // ascending
  double area;
};

/// Edge whose incident elements span three or more grains.
struct TripleEdge {
  std::array<int, 2> nodes;
  std::vector<int> grains;  // ascending
  double length;
};

struct BoundaryGeometry {
  BoundarySet second;  // B_g with area weights
  BoundarySet third;   // C_g with length weights
  std::vector<InterfaceFace> faces;
  std::vector<TripleEdge> edges;

  int dim_beta() const { return second.size(); }
  int dim_gamma() const { return third.size(); }
};

namespace detail {

inline std::array<int, 3> sorted3(int a, int b, int c) {
  std::array<int, 3> f{a, b, c};
  std::sort(f.begin(), f.end());
  return f;
}

// Coordinates rounded to a grid far below any meaningful feature size; used
// only to spot geometrically coincident faces.
inline std::array<std::int64_t, 3> quantize(const Point3& p, double step) {
  return {std::llround(p.x() / step), std::llround(p.y() / step), std::llround(p.z() / step)};
}

}  // namespace detail

/// Second-order faces, third-order edges, the B_g / C_g node sets and their
/// quadrature weights. Throws MeshError on non-manifold, non-conformal or
/// degenerate input.
inline BoundaryGeometry extract_boundaries(const GrainMesh& mesh) {
  using Kind = MeshError::Kind;
  const auto G = static_cast<std::size_t>(mesh.grain_count);

  struct FaceRef {
    std::array<int, 3> nodes;
    int element;
  };
  std::vector<FaceRef> faces;
  faces.reserve(4 * mesh.elements.size());
  for (std::size_t m = 0; m < mesh.elements.size(); ++m) {
    const auto& e = mesh.elements[m];
    const int id = static_cast<int>(m);
    faces.push_back({detail::sorted3(e[0], e[1], e[2]), id});
    faces.push_back({detail::sorted3(e[0], e[1], e[3]), id});
    faces.push_back({detail::sorted3(e[0], e[2], e[3]), id});
    faces.push_back({detail::sorted3(e[1], e[2], e[3]), id});
  }
  std::sort(faces.begin(), faces.end(),
            [](const FaceRef& a, const FaceRef& b) { return std::tie(a.nodes, a.element) < std::tie(b.nodes, b.element); });

  double extent = 0.0;
  if (!mesh.nodes.empty()) {
    Point3 lo = mesh.nodes.front(), hi = mesh.nodes.front();
    for (const auto& p : mesh.nodes) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    extent = (hi - lo).maxCoeff();
  }
  const double step = std::max(extent, 1.0) * 1e-9;

  BoundaryGeometry bg;
  std::vector<std::map<int, double>> area_w(G), length_w(G);
  std::vector<std::array<std::array<std::int64_t, 3>, 3>> exterior;

  for (std::size_t i = 0; i < faces.size();) {
    std::size_t j = i + 1;
    while (j < faces.size() && faces[j].nodes == faces[i].nodes) ++j;
    const auto& f = faces[i].nodes;
    if (j - i > 2) {
      throw MeshError(Kind::validation, "face (" + std::to_string(f[0]) + "," + std::to_string(f[1]) + "," +
                                            std::to_string(f[2]) + ") is shared by more than two elements");
    }
    if (j - i == 1) {
      std::array<std::array<std::int64_t, 3>, 3> key{detail::quantize(mesh.nodes[f[0]], step),
                                                     detail::quantize(mesh.nodes[f[1]], step),
                                                     detail::quantize(mesh.nodes[f[2]], step)};
      std::sort(key.begin(), key.end());
      exterior.push_back(key);
    } else {
      int g1 = mesh.grain_of_element[faces[i].element];
      int g2 = mesh.grain_of_element[faces[i + 1].element];
      if (g1 != g2) {
        if (g1 > g2) std::swap(g1, g2);
        const double area = triangle_area(mesh.nodes[f[0]], mesh.nodes[f[1]], mesh.nodes[f[2]]);
        if (!(area > 0.0)) {
          throw MeshError(Kind::degenerate, "grain-interface face (" + std::to_string(f[0]) + "," +
                                                std::to_string(f[1]) + "," + std::to_string(f[2]) + ") has zero area");
        }
        bg.faces.push_back({f, {g1, g2}, area});
        for (int g : {g1, g2}) {
          for (int v : f) area_w[static_cast<std::size_t>(g - 1)][v] += area / 3.0;
        }
      }
    }
    i = j;
  }

  std::sort(exterior.begin(), exterior.end());
  if (std::adjacent_find(exterior.begin(), exterior.end()) != exterior.end()) {
    throw MeshError(Kind::non_conformal,
                    "mesh is not conformal: two unshared faces occupy the same position with distinct node indices");
  }

  struct EdgeRef {
    std::array<int, 2> nodes;
    int grain;
  };
  std::vector<EdgeRef> edges;
  edges.reserve(6 * mesh.elements.size());
  for (std::size_t m = 0; m < mesh.elements.size(); ++m) {
    const auto& e = mesh.elements[m];
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) {
        edges.push_back({{std::min(e[a], e[b]), std::max(e[a], e[b])}, mesh.grain_of_element[m]});
      }
    }
  }
  std::sort(edges.begin(), edges.end(),
            [](const EdgeRef& a, const EdgeRef& b) { return std::tie(a.nodes, a.grain) < std::tie(b.nodes, b.grain); });
  for (std::size_t i = 0; i < edges.size();) {
    std::size_t j = i;
    std::vector<int> grains;
    while (j < edges.size() && edges[j].nodes == edges[i].nodes) {
      if (grains.empty() || grains.back() != edges[j].grain) grains.push_back(edges[j].grain);
      ++j;
    }
    if (grains.size() >= 3) {
      const auto& ed = edges[i].nodes;
      const double length = (mesh.nodes[ed[0]] - mesh.nodes[ed[1]]).norm();
      if (!(length > 0.0)) throw MeshError(Kind::degenerate, "third-order edge has zero length");
      for (int g : grains) {
        for (int v : ed) length_w[static_cast<std::size_t>(g - 1)][v] += length / 2.0;
      }
      bg.edges.push_back({ed, std::move(grains), length});
    }
    i = j;
  }

  bg.second = BoundarySet::from_weights(area_w);
  bg.third = BoundarySet::from_weights(length_w);
  for (int g = 1; g <= mesh.grain_count; ++g) {
    for (int v : bg.third.grain_nodes(g)) {
      if (bg.second.index_of(g, v) < 0) {
        throw MeshError(Kind::validation, "third-order node " + std::to_string(v) + " of grain " + std::to_string(g) +
                                              " is not a second-order node");
      }
    }
  }
  return bg;
}

/// Within-grain (wgn) and between-grain (bgn) neighbours over the flattened
/// indices of one BoundarySet. Both lists are sorted.
///
/// wgn: same grain, nodes are vertices of a common tetrahedron.
/// bgn: same node, a different grain whose set also contains the node.
struct NeighborhoodGraph {
  std::vector<std::vector<int>> within;
  std::vector<std::vector<int>> between;

  int size() const { return static_cast<int>(within.size()); }
  int within_count(int p) const { return static_cast<int>(within[static_cast<std::size_t>(p)].size()); }
  int between_count(int p) const { return static_cast<int>(between[static_cast<std::size_t>(p)].size()); }
};

inline NeighborhoodGraph build_neighborhoods(const GrainMesh& mesh, const BoundarySet& set) {
  NeighborhoodGraph graph;
  const auto n = static_cast<std::size_t>(set.size());
  graph.within.resize(n);
  graph.between.resize(n);

  // (grain, index) entries of every node, ascending by grain.
  std::vector<std::vector<std::pair<int, int>>> entries(mesh.nodes.size());
  for (int p = 0; p < set.size(); ++p) entries[set.node_of[p]].emplace_back(set.grain_of[p], p);

  for (const auto& e : mesh.elements) {
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) {
        const auto& ea = entries[e[a]];
        const auto& eb = entries[e[b]];
        auto ia = ea.begin();
        auto ib = eb.begin();
        while (ia != ea.end() && ib != eb.end()) {
          if (ia->first < ib->first) {
            ++ia;
          } else if (ib->first < ia->first) {
            ++ib;
          } else {
            graph.within[ia->second].push_back(ib->second);
            graph.within[ib->second].push_back(ia->second);
            ++ia;
            ++ib;
          }
        }
      }
    }
  }
  for (auto& w : graph.within) {
    std::sort(w.begin(), w.end());
    w.erase(std::unique(w.begin(), w.end()), w.end());
  }
  for (const auto& list : entries) {
    for (const auto& [g, p] : list) {
      for (const auto& [h, q] : list) {
        if (q != p) graph.between[p].push_back(q);
      }
    }
  }
  for (auto& b : graph.between) std::sort(b.begin(), b.end());
  return graph;
}

struct FieldGraphs {
  NeighborhoodGraph beta;
  NeighborhoodGraph gamma;
};

inline FieldGraphs build_neighborhoods(const GrainMesh& mesh, const BoundaryGeometry& bg) {
  return {build_neighborhoods(mesh, bg.second), build_neighborhoods(mesh, bg.third)};
}

}  // namespace igmrf
