#pragma once

// Differentiable isosurface extraction on the fixed lattice, in the style of
// FlexiCubes.  The corner signs of the field freeze a combinatorial plan:
// which cells host a dual vertex, which cell edges cross the surface, and
// which interior grid edges emit a quad.  Everything that survives into the
// plan -- crossing points from weighted linear interpolation and
// beta-weighted dual-vertex centroids -- is plain tape arithmetic, so mesh
// vertices stay differentiable w.r.t. the field values and the extraction
// weights while the connectivity is held fixed.
//
// Conventions, pinned here and relied on by the tests:
//   * corner values <= 0 count as inside (exact zeros are inside),
//   * local corner c of a cell encodes its offset as bit0=+x, bit1=+y,
//     bit2=+z,
//   * kCellEdges lists the 12 cell edges grouped by axis, and within an
//     axis ordered by the remaining two offsets (lower axis = bit 0),
//   * one quad per sign-crossed interior grid edge, wound so triangle
//     normals point from inside (<= 0) to outside (> 0),
//   * quads split into triangles (q0,q1,q2), (q0,q2,q3).

#include "sv/errors.hpp"
#include "sv/grid.hpp"
#include "sv/mesh.hpp"
#include "sv/tape.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace sv {

inline constexpr std::array<std::array<int, 2>, 12> kCellEdges = {{
    {0, 1}, {2, 3}, {4, 5}, {6, 7},  // x-aligned
    {0, 2}, {1, 3}, {4, 6}, {5, 7},  // y-aligned
    {0, 4}, {1, 5}, {2, 6}, {3, 7},  // z-aligned
}};

struct ExtractionOptions {
  // A crossed grid edge on the boundary of the lattice has no full ring of
  // four cells and cannot emit a quad.  By default such edges are skipped
  // (and counted); set this to fail instead when the surface must stay
  // strictly inside the lattice.
  bool error_on_boundary = false;
};

struct ExtractionPlan {
  // Cells containing both signs, ascending cell id; dual vertex m lives in
  // crossed_cells[m].
  std::vector<std::int32_t> crossed_cells;

  // Flattened crossing list, grouped by dual vertex in cell order and by
  // local edge order within each cell.
  std::vector<std::int32_t> dual_of_crossing;  // K -> dual vertex index
  std::vector<std::int32_t> corner_a;          // K -> global corner id (lower)
  std::vector<std::int32_t> corner_b;          // K -> global corner id (upper)
  std::vector<std::int32_t> alpha_a;  // K -> 8*dual + local corner of a
  std::vector<std::int32_t> alpha_b;  // K -> 8*dual + local corner of b
  std::vector<std::int32_t> beta_of_crossing;  // K -> 12*dual + local edge
  MatXd ends_a;                                // K x 3 world position of a
  MatXd ends_b;                                // K x 3 world position of b

  MatXi faces;  // F x 3 indices into dual vertices
  Eigen::Index boundary_crossings = 0;

  Eigen::Index num_duals() const {
    return static_cast<Eigen::Index>(crossed_cells.size());
  }
  Eigen::Index num_crossings() const {
    return static_cast<Eigen::Index>(corner_a.size());
  }
};

template <class T>
ExtractionPlan plan_extraction(const GridTopology& grid, const MatX<T>& values,
                               const ExtractionOptions& opt = {}) {
  if (values.rows() != grid.num_corners() || values.cols() != 1)
    throw ConfigError("extraction: field values must be (corners x 1)");
  const int n = grid.n;
  const T* sp = values.data();
  auto inside = [sp](Eigen::Index corner) { return sp[corner] <= T(0); };

  ExtractionPlan plan;
  std::vector<std::int32_t> cell_to_dual(
      static_cast<size_t>(grid.num_cells()), -1);

  // Pass 1: dual vertices and their cell-edge crossings.
  for (int iz = 0; iz < n; ++iz)
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix) {
        Eigen::Index gc[8];
        for (int c = 0; c < 8; ++c)
          gc[c] = grid.corner_id(ix + (c & 1), iy + ((c >> 1) & 1),
                                 iz + ((c >> 2) & 1));
        int neg = 0;
        for (int c = 0; c < 8; ++c) neg += inside(gc[c]) ? 1 : 0;
        if (neg == 0 || neg == 8) continue;

        const Eigen::Index cell = grid.cell_id(ix, iy, iz);
        const std::int32_t dual =
            static_cast<std::int32_t>(plan.crossed_cells.size());
        cell_to_dual[static_cast<size_t>(cell)] = dual;
        plan.crossed_cells.push_back(static_cast<std::int32_t>(cell));

        for (int e = 0; e < 12; ++e) {
          const int ca = kCellEdges[e][0];
          const int cb = kCellEdges[e][1];
          if (inside(gc[ca]) == inside(gc[cb])) continue;
          plan.dual_of_crossing.push_back(dual);
          plan.corner_a.push_back(static_cast<std::int32_t>(gc[ca]));
          plan.corner_b.push_back(static_cast<std::int32_t>(gc[cb]));
          plan.alpha_a.push_back(8 * dual + ca);
          plan.alpha_b.push_back(8 * dual + cb);
          plan.beta_of_crossing.push_back(12 * dual + e);
        }
      }

  const Eigen::Index k = plan.num_crossings();
  plan.ends_a.resize(k, 3);
  plan.ends_b.resize(k, 3);
  auto corner_xyz = [&](std::int32_t id, MatXd& out, Eigen::Index row) {
    const int stride = n + 1;
    out(row, 0) = grid.coord(id % stride);
    out(row, 1) = grid.coord((id / stride) % stride);
    out(row, 2) = grid.coord(id / (stride * stride));
  };
  for (Eigen::Index i = 0; i < k; ++i) {
    corner_xyz(plan.corner_a[static_cast<size_t>(i)], plan.ends_a, i);
    corner_xyz(plan.corner_b[static_cast<size_t>(i)], plan.ends_b, i);
  }

  // Pass 2: one quad per sign-crossed interior grid edge.  The four cells
  // around an edge along axis a are visited counter-clockwise in the (b, c)
  // plane starting from the (-b, -c) cell, which makes the normal point
  // toward +a; when the lower endpoint is outside the order is reversed.
  std::vector<std::int32_t> tri;
  for (int axis = 0; axis < 3; ++axis) {
    const int b = (axis + 1) % 3;
    const int c = (axis + 2) % 3;
    static constexpr int kRing[4][2] = {{1, 1}, {0, 1}, {0, 0}, {1, 0}};
    for (int iz = 0; iz <= n; ++iz)
      for (int iy = 0; iy <= n; ++iy)
        for (int ix = 0; ix <= n; ++ix) {
          int p[3] = {ix, iy, iz};
          if (p[axis] >= n) continue;
          const Eigen::Index ga = grid.corner_id(ix, iy, iz);
          int q[3] = {ix, iy, iz};
          q[axis] += 1;
          const Eigen::Index gb = grid.corner_id(q[0], q[1], q[2]);
          if (inside(ga) == inside(gb)) continue;
          if (p[b] < 1 || p[b] > n - 1 || p[c] < 1 || p[c] > n - 1) {
            ++plan.boundary_crossings;
            continue;
          }
          std::int32_t quad[4];
          for (int r = 0; r < 4; ++r) {
            int cc[3] = {p[0], p[1], p[2]};
            cc[b] -= kRing[r][0];
            cc[c] -= kRing[r][1];
            const Eigen::Index cell = grid.cell_id(cc[0], cc[1], cc[2]);
            quad[r] = cell_to_dual[static_cast<size_t>(cell)];
          }
          if (!inside(ga)) std::swap(quad[1], quad[3]);
          tri.insert(tri.end(), {quad[0], quad[1], quad[2]});
          tri.insert(tri.end(), {quad[0], quad[2], quad[3]});
        }
  }
  plan.faces.resize(static_cast<Eigen::Index>(tri.size() / 3), 3);
  for (Eigen::Index f = 0; f < plan.faces.rows(); ++f)
    for (int j = 0; j < 3; ++j)
      plan.faces(f, j) = tri[static_cast<size_t>(3 * f + j)];

  if (opt.error_on_boundary && plan.boundary_crossings > 0)
    throw DataError("extraction: surface crosses the lattice boundary on " +
                    std::to_string(plan.boundary_crossings) + " grid edges");
  return plan;
}

// Dual vertex positions (num_duals x 3) for a planned extraction.  Crossing
// points use the weighted interpolation t = wa*|sa| / (wa*|sa| + wb*|sb|)
// with per-corner weights wa, wb = softplus(raw alpha); each dual vertex is
// the centroid of its cell's crossings weighted by softplus(raw beta).
template <class T>
Var build_dual_vertices(TapeT<T>& tape, ParamStoreT<T>& store, Var values,
                        const CellWeightsT<T>& weights,
                        const ExtractionPlan& plan) {
  const Eigen::Index m = plan.num_duals();
  if (m == 0) throw DataError("extraction: empty plan, no surface to build");

  std::vector<std::int32_t> rows =
      weights.per_cell ? plan.crossed_cells
                       : std::vector<std::int32_t>(static_cast<size_t>(m), 0);
  auto row_idx = TapeT<T>::make_indices(std::move(rows));

  Var alpha = tape.softplus(
      tape.gather_rows(tape.param(store, weights.alpha), row_idx));
  Var beta = tape.softplus(
      tape.gather_rows(tape.param(store, weights.beta), row_idx));
  Var alpha_flat = tape.reshape(alpha, 8 * m, 1);
  Var beta_flat = tape.reshape(beta, 12 * m, 1);

  auto idx_a = TapeT<T>::make_indices(plan.alpha_a);
  auto idx_b = TapeT<T>::make_indices(plan.alpha_b);
  Var wa = tape.gather_rows(alpha_flat, idx_a);
  Var wb = tape.gather_rows(alpha_flat, idx_b);
  Var bw = tape.gather_rows(beta_flat,
                            TapeT<T>::make_indices(plan.beta_of_crossing));

  Var sa = tape.abs(tape.gather_rows(values, TapeT<T>::make_indices(plan.corner_a)));
  Var sb = tape.abs(tape.gather_rows(values, TapeT<T>::make_indices(plan.corner_b)));
  Var na = tape.mul(wa, sa);
  Var nb = tape.mul(wb, sb);
  Var t = tape.div(na, tape.add(na, nb));  // K x 1

  Var ea = tape.constant(plan.ends_a.template cast<T>());
  Var delta = tape.constant((plan.ends_b - plan.ends_a).template cast<T>());
  Var u = tape.add(ea, tape.mul_colvec(delta, t));  // K x 3 crossing points

  auto dual_idx = TapeT<T>::make_indices(plan.dual_of_crossing);
  Var num = tape.scatter_add_rows(tape.mul_colvec(u, bw), dual_idx, m);
  Var den = tape.scatter_add_rows(bw, dual_idx, m);
  return tape.div_colvec(num, den);
}

// Area-weighted vertex normals as tape arithmetic (normalized cross-product
// accumulation), matching sv::vertex_normals at the value level.
template <class T>
Var build_vertex_normals(TapeT<T>& tape, Var vertices, const MatXi& faces) {
  const Eigen::Index nf = faces.rows();
  const Eigen::Index nv = tape.val(vertices).rows();
  std::vector<std::int32_t> i0, i1, i2, all;
  i0.reserve(nf);
  i1.reserve(nf);
  i2.reserve(nf);
  all.reserve(3 * nf);
  for (Eigen::Index f = 0; f < nf; ++f) {
    i0.push_back(faces(f, 0));
    i1.push_back(faces(f, 1));
    i2.push_back(faces(f, 2));
  }
  all.insert(all.end(), i0.begin(), i0.end());
  all.insert(all.end(), i1.begin(), i1.end());
  all.insert(all.end(), i2.begin(), i2.end());

  Var p0 = tape.gather_rows(vertices, TapeT<T>::make_indices(std::move(i0)));
  Var p1 = tape.gather_rows(vertices, TapeT<T>::make_indices(std::move(i1)));
  Var p2 = tape.gather_rows(vertices, TapeT<T>::make_indices(std::move(i2)));
  Var fn = tape.cross_rows(tape.sub(p1, p0), tape.sub(p2, p0));
  Var stacked = tape.concat_rows({fn, fn, fn});
  Var acc = tape.scatter_add_rows(stacked, TapeT<T>::make_indices(std::move(all)), nv);
  return tape.normalize_rows(acc);
}

namespace detail {

// Shared value-level assembly: same arithmetic as build_dual_vertices, given
// the post-softplus weights per crossing.
inline MatXd assemble_dual_vertices(const ExtractionPlan& plan,
                                    const Eigen::VectorXd& wa,
                                    const Eigen::VectorXd& wb,
                                    const Eigen::VectorXd& bw,
                                    const Eigen::VectorXd& sa,
                                    const Eigen::VectorXd& sb) {
  const Eigen::Index m = plan.num_duals();
  MatXd num = MatXd::Zero(m, 3);
  Eigen::VectorXd den = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < plan.num_crossings(); ++i) {
    const double na = wa[i] * sa[i];
    const double nb = wb[i] * sb[i];
    const double t = na / (na + nb);
    const Eigen::RowVector3d u =
        plan.ends_a.row(i) + t * (plan.ends_b.row(i) - plan.ends_a.row(i));
    const Eigen::Index d = plan.dual_of_crossing[static_cast<size_t>(i)];
    num.row(d) += bw[i] * u;
    den[d] += bw[i];
  }
  for (Eigen::Index d = 0; d < m; ++d) num.row(d) /= den[d];
  return num;
}

}  // namespace detail

// Non-differentiable extraction with softplus(raw) corner and centroid
// weights; pass (1 x 8) / (1 x 12) raw blocks to share one weight row across
// all cells.  Used for reference meshes and for exporting the final surface.
template <class T>
TriMesh extract_mesh(const GridTopology& grid, const MatX<T>& values,
                     const MatX<T>& alpha_raw, const MatX<T>& beta_raw,
                     const ExtractionOptions& opt = {},
                     ExtractionPlan* out_plan = nullptr) {
  if (alpha_raw.cols() != 8 || beta_raw.cols() != 12 ||
      alpha_raw.rows() != beta_raw.rows())
    throw ConfigError("extraction: weight blocks must be (rows x 8) and (rows x 12)");
  const bool per_cell = alpha_raw.rows() > 1;
  if (per_cell && alpha_raw.rows() != grid.num_cells())
    throw ConfigError("extraction: per-cell weights must have one row per cell");

  ExtractionPlan plan = plan_extraction(grid, values, opt);
  TriMesh mesh;
  mesh.faces = plan.faces;
  mesh.vertices.resize(plan.num_duals(), 3);
  if (plan.num_duals() > 0) {
    const Eigen::Index k = plan.num_crossings();
    Eigen::VectorXd wa(k), wb(k), bw(k), sa(k), sb(k);
    auto soft = [](double x) {
      return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    };
    for (Eigen::Index i = 0; i < k; ++i) {
      const size_t si = static_cast<size_t>(i);
      const Eigen::Index dual = plan.dual_of_crossing[si];
      const Eigen::Index row =
          per_cell ? plan.crossed_cells[static_cast<size_t>(dual)] : 0;
      wa[i] = soft(static_cast<double>(alpha_raw(row, plan.alpha_a[si] % 8)));
      wb[i] = soft(static_cast<double>(alpha_raw(row, plan.alpha_b[si] % 8)));
      bw[i] = soft(
          static_cast<double>(beta_raw(row, plan.beta_of_crossing[si] % 12)));
      sa[i] = std::abs(static_cast<double>(values(plan.corner_a[si], 0)));
      sb[i] = std::abs(static_cast<double>(values(plan.corner_b[si], 0)));
    }
    mesh.vertices = detail::assemble_dual_vertices(plan, wa, wb, bw, sa, sb);
  }
  if (out_plan) *out_plan = std::move(plan);
  return mesh;
}

// Unit-weight extraction: plain linear interpolation with uniform centroids.
template <class T>
TriMesh extract_mesh(const GridTopology& grid, const MatX<T>& values,
                     const ExtractionOptions& opt = {},
                     ExtractionPlan* out_plan = nullptr) {
  const T raw_one = static_cast<T>(std::log(std::expm1(1.0)));
  MatX<T> alpha = MatX<T>::Constant(1, 8, raw_one);
  MatX<T> beta = MatX<T>::Constant(1, 12, raw_one);
  return extract_mesh(grid, values, alpha, beta, opt, out_plan);
}

}  // namespace sv
