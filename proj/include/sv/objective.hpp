#pragma once

// The training objective: photometric L1 terms on the rendered color, mask
// and normal images, an eikonal penalty keeping the field a signed distance,
// and two mesh smoothness regularizers (uniform-weight Laplacian energy and
// normal consistency across shared edges).
//
// Mesh terms follow the same plan/replay split as the rasterizer: the
// discrete one-ring and edge-pair structure is planned once per extracted
// mesh in plain integer code, and the tape builders replay pure arithmetic
// over those frozen index lists.  Every builder returns a 1x1 scalar Var.
//
// Value-level twins (l1_image_loss, eikonal_penalty, laplacian_reg,
// normal_consistency_reg) are independent Eigen loops used by evaluation
// and logging; tests hold them and the tape builders to the same closed
// forms.

#include "sv/errors.hpp"
#include "sv/image.hpp"
#include "sv/tape.hpp"
#include "sv/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace sv {

// ------------------------------------------------------------------ types

struct LossWeights {
  double rgb = 0.1;
  double mask = 15.0;
  double normal = 2.0;
  double eikonal = 0.1;
  double laplacian = 0.4;
  double consistency = 0.05;

  void validate() const;  // all weights finite and >= 0
};

// Unweighted term values of one iteration plus their weighted total.  The
// total is accumulated in the fixed order rgb, mask, normal, eikonal,
// laplacian, consistency — the same order build_total uses on the tape, so
// the two agree bitwise at double precision.
struct LossTerms {
  double rgb = 0.0;
  double mask = 0.0;
  double normal = 0.0;
  double eikonal = 0.0;
  double laplacian = 0.0;
  double consistency = 0.0;
};

struct LossBreakdown {
  LossTerms terms;
  double total = 0.0;

  static std::string csv_header();  // "iteration,rgb,...,total"
  std::string csv_row(long iteration) const;
};

// Checks every term is finite (NumericError naming the offender otherwise)
// and returns the breakdown with the canonical weighted total.
LossBreakdown total_loss(const LossTerms& terms, const LossWeights& weights);

// ---------------------------------------------------------- value versions

// Mean absolute difference over all samples of two images of identical
// shape (DataError otherwise).
double l1_image_loss(const Image& rendered, const Image& target);

// Mean of (|row| - 1)^2 over the rows of a K x 3 gradient matrix.
double eikonal_penalty(const MatXd& gradients);

// Mean over vertices of the squared distance to the centroid of the
// one-ring neighbours; isolated vertices contribute zero but still count
// toward the mean.  Empty meshes score zero.
double laplacian_reg(const MatXd& vertices, const MatXi& faces);

// Mean of (1 - cos) between face normals across edges shared by exactly
// two faces; zero when no such edge exists.  The +1 offset shifts the
// negative-cosine objective so a flat mesh scores zero with identical
// gradients.
double normal_consistency_reg(const MatXd& vertices, const MatXi& faces);

// ------------------------------------------------------------------ plans

// One-ring structure of a triangle mesh: each (neighbor, receiver) pair
// feeds one scatter-add row, inv_degree averages the ring (zero for
// isolated vertices), has_ring masks isolated rows out of the residual.
struct LaplacianPlan {
  Eigen::Index num_vertices = 0;
  std::vector<std::int32_t> neighbor;
  std::vector<std::int32_t> receiver;
  Eigen::VectorXd inv_degree;
  Eigen::VectorXd has_ring;
};

LaplacianPlan plan_laplacian(const MatXi& faces, Eigen::Index num_vertices);

// Face corner index columns plus the (face_a, face_b) pairs of every edge
// shared by exactly two faces.  Non-manifold edges (3+ faces) and boundary
// edges pair nothing.
struct NormalPairPlan {
  Eigen::Index num_vertices = 0;
  std::vector<std::int32_t> corner_a, corner_b, corner_c;
  std::vector<std::int32_t> face_a, face_b;
};

NormalPairPlan plan_normal_pairs(const MatXi& faces, Eigen::Index num_vertices);

// ----------------------------------------------------------- tape builders

template <class T>
Var build_l1_loss(TapeT<T>& tape, Var pred, Var target) {
  return tape.mean_all(tape.abs(tape.sub(pred, target)));
}

// Foreground-restricted variant: the loss is the mean over the given rows
// only (used when images are compared on the mask union instead of the
// full frame).
template <class T>
Var build_l1_loss(TapeT<T>& tape, Var pred, Var target,
                  const typename TapeT<T>::IndexVec& rows) {
  return build_l1_loss(tape, tape.gather_rows(pred, rows),
                       tape.gather_rows(target, rows));
}

// gradients is K x 3.  Rows of exactly zero norm (the sphere prior at the
// origin) contribute their (0-1)^2 = 1 with a zero subgradient, courtesy of
// the guarded sqrt rule.
template <class T>
Var build_eikonal(TapeT<T>& tape, Var gradients) {
  Var norm = tape.sqrt(tape.dot_rows(gradients, gradients));
  return tape.mean_all(tape.square(tape.offset(norm, -1.0)));
}

template <class T>
Var build_laplacian(TapeT<T>& tape, Var vertices, const LaplacianPlan& plan) {
  if (tape.val(vertices).rows() != plan.num_vertices)
    throw ConfigError("objective: laplacian plan built for a different mesh");
  if (plan.num_vertices == 0 || plan.neighbor.empty())
    return tape.constant_scalar(0.0);
  auto nb = TapeT<T>::make_indices(
      std::vector<std::int32_t>(plan.neighbor));
  auto rc = TapeT<T>::make_indices(
      std::vector<std::int32_t>(plan.receiver));
  Var sums = tape.scatter_add_rows(tape.gather_rows(vertices, nb), rc,
                                   plan.num_vertices);
  Var ring_mean =
      tape.mul_colvec(sums, tape.constant(plan.inv_degree.cast<T>()));
  Var diff = tape.mul_colvec(tape.sub(vertices, ring_mean),
                             tape.constant(plan.has_ring.cast<T>()));
  return tape.mean_all(tape.dot_rows(diff, diff));
}

template <class T>
Var build_normal_consistency(TapeT<T>& tape, Var vertices,
                             const NormalPairPlan& plan) {
  if (tape.val(vertices).rows() != plan.num_vertices)
    throw ConfigError("objective: normal plan built for a different mesh");
  if (plan.face_a.empty()) return tape.constant_scalar(0.0);
  auto idx = [](const std::vector<std::int32_t>& v) {
    return TapeT<T>::make_indices(std::vector<std::int32_t>(v));
  };
  Var a = tape.gather_rows(vertices, idx(plan.corner_a));
  Var b = tape.gather_rows(vertices, idx(plan.corner_b));
  Var c = tape.gather_rows(vertices, idx(plan.corner_c));
  Var n = tape.normalize_rows(
      tape.cross_rows(tape.sub(b, a), tape.sub(c, a)));
  Var cosv = tape.dot_rows(tape.gather_rows(n, idx(plan.face_a)),
                           tape.gather_rows(n, idx(plan.face_b)));
  return tape.mean_all(tape.offset(tape.neg(cosv), 1.0));
}

struct LossTermVars {
  Var rgb, mask, normal, eikonal, laplacian, consistency;
};

// Weighted sum in the canonical order; pair it with total_loss on the
// forward values for the finite check and the logged breakdown.
template <class T>
Var build_total(TapeT<T>& tape, const LossTermVars& terms,
                const LossWeights& w) {
  w.validate();
  Var acc = tape.scale(terms.rgb, w.rgb);
  acc = tape.add(acc, tape.scale(terms.mask, w.mask));
  acc = tape.add(acc, tape.scale(terms.normal, w.normal));
  acc = tape.add(acc, tape.scale(terms.eikonal, w.eikonal));
  acc = tape.add(acc, tape.scale(terms.laplacian, w.laplacian));
  acc = tape.add(acc, tape.scale(terms.consistency, w.consistency));
  return acc;
}

}  // namespace sv
