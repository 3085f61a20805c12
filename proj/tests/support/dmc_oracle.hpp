#pragma once

// Brute-force reference implementation of weighted dual-style isosurface
// extraction, used to validate the engine.  Written independently of the
// engine code on purpose: explicit coordinate arithmetic throughout, the
// quad ring around each crossed grid edge is recovered geometrically by
// sorting dual vertices by angle, and the canonical vertex order comes from
// sorting by cell id.  Deliberately slow and simple.
//
// Shared conventions under test: values <= 0 are inside; local corner
// c = dx + 2*dy + 4*dz; local edge = 4*axis + 2*hi + lo where (lo, hi) are
// the edge offsets along the two non-axis directions in ascending axis
// order; crossing t = wa*|va| / (wa*|va| + wb*|vb|); dual vertex = weighted
// centroid of its cell's crossings; triangles (q0,q1,q2), (q0,q2,q3) with
// normals pointing from inside to outside.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

namespace dmc_oracle {

struct Mesh {
  std::vector<long> cells;  // ascending cell id, one per vertex
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<int, 3>> faces;
  long boundary_edges = 0;
};

using ValueFn = std::function<double(int, int, int)>;     // corner (ix,iy,iz)
using WeightFn = std::function<double(long, int)>;        // (cell id, slot)

inline bool is_inside(double v) { return v <= 0.0; }
inline double coord_of(int i, int n) { return -1.0 + 2.0 * i / n; }
inline int local_corner(int dx, int dy, int dz) { return dx + 2 * dy + 4 * dz; }

// `alpha` receives a local corner (0..7), `beta` a local edge (0..11); both
// are expected to return positive (post-activation) weights.
inline Mesh extract(int n, const ValueFn& value, const WeightFn& alpha,
                    const WeightFn& beta) {
  std::map<long, std::array<double, 3>> dual_pos;

  for (int cz = 0; cz < n; ++cz)
    for (int cy = 0; cy < n; ++cy)
      for (int cx = 0; cx < n; ++cx) {
        bool any_in = false, any_out = false;
        for (int dz = 0; dz <= 1; ++dz)
          for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx)
              (is_inside(value(cx + dx, cy + dy, cz + dz)) ? any_in : any_out) =
                  true;
        if (!any_in || !any_out) continue;
        const long cell = (static_cast<long>(cz) * n + cy) * n + cx;

        double acc[3] = {0.0, 0.0, 0.0};
        double wsum = 0.0;
        for (int axis = 0; axis < 3; ++axis) {
          int other[2];
          int k = 0;
          for (int a = 0; a < 3; ++a)
            if (a != axis) other[k++] = a;
          for (int hi = 0; hi <= 1; ++hi)
            for (int lo = 0; lo <= 1; ++lo) {
              int oa[3] = {0, 0, 0};
              oa[other[0]] = lo;
              oa[other[1]] = hi;
              int ob[3] = {oa[0], oa[1], oa[2]};
              ob[axis] = 1;
              const double va = value(cx + oa[0], cy + oa[1], cz + oa[2]);
              const double vb = value(cx + ob[0], cy + ob[1], cz + ob[2]);
              if (is_inside(va) == is_inside(vb)) continue;

              const double wa = alpha(cell, local_corner(oa[0], oa[1], oa[2]));
              const double wb = alpha(cell, local_corner(ob[0], ob[1], ob[2]));
              const double t = wa * std::fabs(va) /
                               (wa * std::fabs(va) + wb * std::fabs(vb));
              const int base[3] = {cx, cy, cz};
              double u[3];
              for (int a = 0; a < 3; ++a) {
                const double pa = coord_of(base[a] + oa[a], n);
                const double pb = coord_of(base[a] + ob[a], n);
                u[a] = pa + t * (pb - pa);
              }
              const double w = beta(cell, 4 * axis + 2 * hi + lo);
              for (int a = 0; a < 3; ++a) acc[a] += w * u[a];
              wsum += w;
            }
        }
        dual_pos[cell] = {acc[0] / wsum, acc[1] / wsum, acc[2] / wsum};
      }

  Mesh mesh;
  std::map<long, int> index_of;
  for (const auto& [cell, pos] : dual_pos) {
    index_of[cell] = static_cast<int>(mesh.vertices.size());
    mesh.cells.push_back(cell);
    mesh.vertices.push_back(pos);
  }

  // Faces: for each sign-crossed interior grid edge along `axis`, collect
  // the four surrounding dual vertices and order them counter-clockwise in
  // the plane spanned by the next two axes in cyclic order (a right-handed
  // frame, so counter-clockwise means the normal points toward +axis).
  // Sorting by angle around the edge point starts the ring in the (-,-)
  // quadrant automatically, because atan2 there is most negative.
  for (int axis = 0; axis < 3; ++axis) {
    const int ax_b = (axis + 1) % 3;
    const int ax_c = (axis + 2) % 3;
    for (int pa = 0; pa < n; ++pa)
      for (int pb = 0; pb <= n; ++pb)
        for (int pc = 0; pc <= n; ++pc) {
          int p[3];
          p[axis] = pa;
          p[ax_b] = pb;
          p[ax_c] = pc;
          int q[3] = {p[0], p[1], p[2]};
          q[axis] = pa + 1;
          const double va = value(p[0], p[1], p[2]);
          const double vb = value(q[0], q[1], q[2]);
          if (is_inside(va) == is_inside(vb)) continue;
          if (pb < 1 || pb > n - 1 || pc < 1 || pc > n - 1) {
            ++mesh.boundary_edges;
            continue;
          }

          struct RingEntry {
            double angle;
            int vertex;
          };
          std::vector<RingEntry> ring;
          const double eb = coord_of(pb, n);
          const double ec = coord_of(pc, n);
          for (int db = 0; db <= 1; ++db)
            for (int dc = 0; dc <= 1; ++dc) {
              int cc[3];
              cc[axis] = pa;
              cc[ax_b] = pb - db;
              cc[ax_c] = pc - dc;
              const long cell = (static_cast<long>(cc[2]) * n + cc[1]) * n + cc[0];
              auto it = index_of.find(cell);
              if (it == index_of.end())
                throw std::logic_error("oracle: ring cell has no dual vertex");
              const auto& v = mesh.vertices[static_cast<size_t>(it->second)];
              ring.push_back(
                  {std::atan2(v[ax_c] - ec, v[ax_b] - eb), it->second});
            }
          std::sort(ring.begin(), ring.end(),
                    [](const RingEntry& x, const RingEntry& y) {
                      return x.angle < y.angle;
                    });
          int r[4] = {ring[0].vertex, ring[1].vertex, ring[2].vertex,
                      ring[3].vertex};
          if (!is_inside(va)) std::swap(r[1], r[3]);
          mesh.faces.push_back({r[0], r[1], r[2]});
          mesh.faces.push_back({r[0], r[2], r[3]});
        }
  }
  return mesh;
}

inline Mesh extract_unit(int n, const ValueFn& value) {
  auto one = [](long, int) { return 1.0; };
  return extract(n, value, one, one);
}

}  // namespace dmc_oracle
