#include "sv/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <utility>

namespace sv {
namespace {

void require_faces_in_range(const MatXi& faces, Eigen::Index num_vertices) {
  if (faces.size() > 0 && faces.cols() != 3)
    throw ConfigError("objective: faces must have 3 columns");
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) {
      std::int32_t v = faces(f, k);
      if (v < 0 || v >= num_vertices)
        throw DataError("objective: face references vertex out of range");
    }
}

// Edge key with the endpoints in ascending order, so both windings of a
// shared edge land on the same map entry.
std::pair<std::int32_t, std::int32_t> edge_key(std::int32_t u,
                                               std::int32_t v) {
  return u < v ? std::make_pair(u, v) : std::make_pair(v, u);
}

constexpr const char* kTermNames[6] = {"rgb",     "mask",      "normal",
                                       "eikonal", "laplacian", "consistency"};

}  // namespace

void LossWeights::validate() const {
  const double w[6] = {rgb, mask, normal, eikonal, laplacian, consistency};
  for (int i = 0; i < 6; ++i)
    if (!std::isfinite(w[i]) || w[i] < 0.0)
      throw ConfigError(std::string("objective: weight for ") + kTermNames[i] +
                        " must be finite and nonnegative");
}

std::string LossBreakdown::csv_header() {
  return "iteration,rgb,mask,normal,eikonal,laplacian,consistency,total";
}

std::string LossBreakdown::csv_row(long iteration) const {
  // %.17g round-trips doubles exactly; determinism checks diff these logs
  // byte for byte.
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", iteration,
                terms.rgb, terms.mask, terms.normal, terms.eikonal,
                terms.laplacian, terms.consistency, total);
  return buf;
}

LossBreakdown total_loss(const LossTerms& terms, const LossWeights& weights) {
  weights.validate();
  const double t[6] = {terms.rgb,     terms.mask,      terms.normal,
                       terms.eikonal, terms.laplacian, terms.consistency};
  for (int i = 0; i < 6; ++i)
    if (!std::isfinite(t[i]))
      throw NumericError(std::string("objective: ") + kTermNames[i] +
                         " term is not finite");
  LossBreakdown b;
  b.terms = terms;
  // Same accumulation order as build_total, so tape and log agree bitwise.
  double acc = terms.rgb * weights.rgb;
  acc += terms.mask * weights.mask;
  acc += terms.normal * weights.normal;
  acc += terms.eikonal * weights.eikonal;
  acc += terms.laplacian * weights.laplacian;
  acc += terms.consistency * weights.consistency;
  b.total = acc;
  return b;
}

double l1_image_loss(const Image& rendered, const Image& target) {
  if (rendered.width != target.width || rendered.height != target.height ||
      rendered.channels != target.channels)
    throw DataError("objective: image shapes do not match");
  if (rendered.data.size() == 0) return 0.0;
  return (rendered.data - target.data).cwiseAbs().mean();
}

double eikonal_penalty(const MatXd& gradients) {
  if (gradients.rows() == 0) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < gradients.rows(); ++i) {
    double r = gradients.row(i).norm() - 1.0;
    acc += r * r;
  }
  return acc / static_cast<double>(gradients.rows());
}

double laplacian_reg(const MatXd& vertices, const MatXi& faces) {
  const Eigen::Index nv = vertices.rows();
  require_faces_in_range(faces, nv);
  if (nv == 0) return 0.0;

  // Ring membership via sorted directed-edge lists; duplicates from faces
  // sharing an edge collapse in the unique pass.
  std::vector<std::pair<std::int32_t, std::int32_t>> dir;
  dir.reserve(static_cast<std::size_t>(faces.rows()) * 6);
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) {
      std::int32_t u = faces(f, k), v = faces(f, (k + 1) % 3);
      if (u == v) continue;
      dir.emplace_back(u, v);
      dir.emplace_back(v, u);
    }
  std::sort(dir.begin(), dir.end());
  dir.erase(std::unique(dir.begin(), dir.end()), dir.end());

  double acc = 0.0;
  std::size_t i = 0;
  while (i < dir.size()) {
    std::int32_t v = dir[i].first;
    Eigen::RowVector3d centroid = Eigen::RowVector3d::Zero();
    int degree = 0;
    for (; i < dir.size() && dir[i].first == v; ++i, ++degree)
      centroid += vertices.row(dir[i].second);
    centroid /= degree;
    acc += (vertices.row(v) - centroid).squaredNorm();
  }
  return acc / static_cast<double>(nv);
}

double normal_consistency_reg(const MatXd& vertices, const MatXi& faces) {
  require_faces_in_range(faces, vertices.rows());
  const Eigen::Index nf = faces.rows();
  if (nf == 0) return 0.0;

  MatXd normals(nf, 3);
  for (Eigen::Index f = 0; f < nf; ++f) {
    Eigen::RowVector3d a = vertices.row(faces(f, 0));
    Eigen::RowVector3d e1 = vertices.row(faces(f, 1)) - a;
    Eigen::RowVector3d e2 = vertices.row(faces(f, 2)) - a;
    Eigen::RowVector3d n = e1.cross(e2);
    double len = n.norm();
    // Degenerate faces keep a zero normal, the convention normalize_rows
    // uses on the tape.
    normals.row(f) = len < 1e-12 ? Eigen::RowVector3d::Zero().eval()
                                 : (n / len).eval();
  }

  std::map<std::pair<std::int32_t, std::int32_t>, std::vector<Eigen::Index>>
      edge_faces;
  for (Eigen::Index f = 0; f < nf; ++f)
    for (int k = 0; k < 3; ++k) {
      std::int32_t u = faces(f, k), v = faces(f, (k + 1) % 3);
      if (u != v) edge_faces[edge_key(u, v)].push_back(f);
    }

  double acc = 0.0;
  long pairs = 0;
  for (const auto& [key, fs] : edge_faces) {
    if (fs.size() != 2) continue;
    acc += 1.0 - normals.row(fs[0]).dot(normals.row(fs[1]));
    ++pairs;
  }
  return pairs == 0 ? 0.0 : acc / static_cast<double>(pairs);
}

LaplacianPlan plan_laplacian(const MatXi& faces, Eigen::Index num_vertices) {
  require_faces_in_range(faces, num_vertices);
  LaplacianPlan plan;
  plan.num_vertices = num_vertices;
  plan.inv_degree = Eigen::VectorXd::Zero(num_vertices);
  plan.has_ring = Eigen::VectorXd::Zero(num_vertices);

  std::map<std::pair<std::int32_t, std::int32_t>, char> edges;
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) {
      std::int32_t u = faces(f, k), v = faces(f, (k + 1) % 3);
      if (u != v) edges.emplace(edge_key(u, v), 0);
    }

  Eigen::VectorXi degree = Eigen::VectorXi::Zero(num_vertices);
  plan.neighbor.reserve(edges.size() * 2);
  plan.receiver.reserve(edges.size() * 2);
  for (const auto& [key, unused] : edges) {
    plan.neighbor.push_back(key.second);
    plan.receiver.push_back(key.first);
    plan.neighbor.push_back(key.first);
    plan.receiver.push_back(key.second);
    ++degree[key.first];
    ++degree[key.second];
  }
  for (Eigen::Index v = 0; v < num_vertices; ++v)
    if (degree[v] > 0) {
      plan.inv_degree[v] = 1.0 / degree[v];
      plan.has_ring[v] = 1.0;
    }
  return plan;
}

NormalPairPlan plan_normal_pairs(const MatXi& faces,
                                 Eigen::Index num_vertices) {
  require_faces_in_range(faces, num_vertices);
  NormalPairPlan plan;
  plan.num_vertices = num_vertices;
  const Eigen::Index nf = faces.rows();
  plan.corner_a.reserve(nf);
  plan.corner_b.reserve(nf);
  plan.corner_c.reserve(nf);
  for (Eigen::Index f = 0; f < nf; ++f) {
    plan.corner_a.push_back(faces(f, 0));
    plan.corner_b.push_back(faces(f, 1));
    plan.corner_c.push_back(faces(f, 2));
  }

  std::map<std::pair<std::int32_t, std::int32_t>, std::vector<std::int32_t>>
      edge_faces;
  for (Eigen::Index f = 0; f < nf; ++f)
    for (int k = 0; k < 3; ++k) {
      std::int32_t u = faces(f, k), v = faces(f, (k + 1) % 3);
      if (u != v)
        edge_faces[edge_key(u, v)].push_back(static_cast<std::int32_t>(f));
    }
  for (const auto& [key, fs] : edge_faces) {
    if (fs.size() != 2) continue;
    plan.face_a.push_back(fs[0]);
    plan.face_b.push_back(fs[1]);
  }
  return plan;
}

}  // namespace sv
