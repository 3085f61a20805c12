#include "sv/mesh.hpp"

#include "sv/errors.hpp"

#include <cstdint>
#include <unordered_map>
#include <vector>

namespace sv {

namespace {

// Union-find over vertex indices, path-halving.
struct DisjointSet {
  std::vector<std::int32_t> parent;

  explicit DisjointSet(Eigen::Index n) : parent(static_cast<size_t>(n)) {
    for (size_t i = 0; i < parent.size(); ++i)
      parent[i] = static_cast<std::int32_t>(i);
  }
  std::int32_t find(std::int32_t v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  }
  void unite(std::int32_t a, std::int32_t b) { parent[find(a)] = find(b); }
};

inline std::uint64_t edge_key(std::int32_t a, std::int32_t b) {
  std::uint32_t lo = static_cast<std::uint32_t>(a < b ? a : b);
  std::uint32_t hi = static_cast<std::uint32_t>(a < b ? b : a);
  return (static_cast<std::uint64_t>(lo) << 32) | hi;
}

}  // namespace

MeshTopologyInfo analyze_topology(const TriMesh& mesh) {
  const Eigen::Index nv = mesh.num_vertices();
  const Eigen::Index nf = mesh.num_faces();

  MeshTopologyInfo info;
  info.num_vertices = nv;
  info.num_faces = nf;
  info.watertight = nf > 0;
  info.oriented = nf > 0;

  // Per undirected edge: how often it is traversed low->high and high->low.
  std::unordered_map<std::uint64_t, std::pair<int, int>> edges;
  edges.reserve(static_cast<size_t>(3 * nf));
  DisjointSet ds(nv);
  std::vector<char> referenced(static_cast<size_t>(nv), 0);

  for (Eigen::Index f = 0; f < nf; ++f) {
    const std::int32_t v[3] = {mesh.faces(f, 0), mesh.faces(f, 1),
                               mesh.faces(f, 2)};
    for (int k = 0; k < 3; ++k) {
      if (v[k] < 0 || v[k] >= nv)
        throw DataError("mesh: face references vertex out of range");
      referenced[static_cast<size_t>(v[k])] = 1;
    }
    if (v[0] == v[1] || v[1] == v[2] || v[2] == v[0]) {
      info.watertight = false;
      info.oriented = false;
      continue;
    }
    for (int k = 0; k < 3; ++k) {
      std::int32_t a = v[k];
      std::int32_t b = v[(k + 1) % 3];
      auto& cnt = edges[edge_key(a, b)];
      (a < b ? cnt.first : cnt.second) += 1;
      ds.unite(a, b);
    }
  }

  info.num_edges = static_cast<Eigen::Index>(edges.size());
  for (const auto& [key, cnt] : edges) {
    (void)key;
    if (cnt.first + cnt.second != 2) info.watertight = false;
    if (cnt.first != 1 || cnt.second != 1) info.oriented = false;
  }
  info.euler_characteristic = nv - info.num_edges + nf;

  std::unordered_map<std::int32_t, char> roots;
  for (Eigen::Index i = 0; i < nv; ++i)
    if (referenced[static_cast<size_t>(i)])
      roots.emplace(ds.find(static_cast<std::int32_t>(i)), 1);
  info.components = static_cast<Eigen::Index>(roots.size());
  return info;
}

MatXd vertex_normals(const MatXd& vertices, const MatXi& faces) {
  MatXd acc = MatXd::Zero(vertices.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Vector3d p0 = vertices.row(faces(f, 0));
    const Eigen::Vector3d e1 = vertices.row(faces(f, 1)).transpose() - p0;
    const Eigen::Vector3d e2 = vertices.row(faces(f, 2)).transpose() - p0;
    const Eigen::Vector3d n = e1.cross(e2);  // twice the face area
    for (int k = 0; k < 3; ++k) acc.row(faces(f, k)) += n.transpose();
  }
  for (Eigen::Index v = 0; v < acc.rows(); ++v) {
    const double norm = acc.row(v).norm();
    if (norm > 1e-12)
      acc.row(v) /= norm;
    else
      acc.row(v).setZero();
  }
  return acc;
}

double surface_area(const MatXd& vertices, const MatXi& faces) {
  double area = 0.0;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Vector3d p0 = vertices.row(faces(f, 0));
    const Eigen::Vector3d e1 = vertices.row(faces(f, 1)).transpose() - p0;
    const Eigen::Vector3d e2 = vertices.row(faces(f, 2)).transpose() - p0;
    area += 0.5 * e1.cross(e2).norm();
  }
  return area;
}

}  // namespace sv
