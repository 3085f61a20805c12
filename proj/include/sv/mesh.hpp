#pragma once

// Plain triangle-mesh container plus the topology probes used by the tests
// and by the evaluation preflight checks.

#include "sv/tensor.hpp"

namespace sv {

struct TriMesh {
  MatXd vertices;  // V x 3
  MatXd colors;    // V x 3 in [0, 1], or 0x0 when absent
  MatXd normals;   // V x 3 unit vectors, or 0x0 when absent
  MatXi faces;     // F x 3 vertex indices, counter-clockwise seen from outside

  Eigen::Index num_vertices() const { return vertices.rows(); }
  Eigen::Index num_faces() const { return faces.rows(); }
  bool has_colors() const {
    return vertices.rows() > 0 && colors.rows() == vertices.rows();
  }
  bool has_normals() const {
    return vertices.rows() > 0 && normals.rows() == vertices.rows();
  }
};

struct MeshTopologyInfo {
  Eigen::Index num_vertices = 0;
  Eigen::Index num_edges = 0;  // undirected
  Eigen::Index num_faces = 0;
  Eigen::Index components = 0;            // among vertices referenced by faces
  Eigen::Index euler_characteristic = 0;  // V - E + F over all vertices
  bool watertight = false;  // every edge borders exactly two faces...
  bool oriented = false;    // ...traversed once in each direction
};

MeshTopologyInfo analyze_topology(const TriMesh& mesh);

// Area-weighted vertex normals; vertices with no incident triangle area come
// back as zero rows.
MatXd vertex_normals(const MatXd& vertices, const MatXi& faces);

double surface_area(const MatXd& vertices, const MatXi& faces);

}  // namespace sv
