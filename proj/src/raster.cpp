#include "sv/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sv {

namespace {

// Screen-space handedness: pixel y grows downward, so triangles that face
// the camera (counter-clockwise when wound from outside and seen from the
// eye) have negative signed area in pixel coordinates.
double signed_area2(double x0, double y0, double x1, double y1, double x2,
                    double y2) {
  return (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
}

struct EdgeRec {
  int front = 0;
  int total = 0;
  std::int32_t u = -1, v = -1;  // directed as wound in the first front face
  std::int32_t face = -1;
};

struct SilEdge {
  // Endpoint order is reversed from the face winding, which puts the
  // surface on the positive side of cross2(b-a, p-a).
  std::int32_t a = -1, b = -1;
  std::int32_t face = -1;
};

}  // namespace

RasterOutput plan_raster(const MatXd& vertices, const MatXi& faces,
                         const CameraBasis& cam, const RasterOptions& opt) {
  if (vertices.cols() != 3 && vertices.rows() > 0)
    throw ConfigError("raster: vertices must be Vx3");
  if (faces.cols() != 3 && faces.rows() > 0)
    throw ConfigError("raster: faces must be Fx3");
  if (cam.width < 1 || cam.height < 1)
    throw ConfigError("raster: empty viewport");
  if (!vertices.allFinite())
    throw DataError("raster: non-finite vertex positions");

  const int w = cam.width, h = cam.height;
  const Eigen::Index hw = static_cast<Eigen::Index>(w) * h;
  const Eigen::Index nv = vertices.rows(), nf = faces.rows();
  for (Eigen::Index f = 0; f < nf; ++f)
    for (int k = 0; k < 3; ++k)
      if (faces(f, k) < 0 || faces(f, k) >= nv)
        throw DataError("raster: face references vertex out of range");

  RasterOutput out;
  out.width = w;
  out.height = h;
  out.face = VecXi::Constant(hw, -1);
  out.bary = MatXd::Zero(hw, 3);
  out.depth = Eigen::VectorXd::Zero(hw);
  out.coverage = Eigen::VectorXd::Zero(hw);
  if (nf == 0 || nv == 0) return out;

  Eigen::VectorXd sx(nv), sy(nv), z(nv);
  std::vector<char> ok(static_cast<std::size_t>(nv), 0);
  for (Eigen::Index v = 0; v < nv; ++v)
    ok[static_cast<std::size_t>(v)] =
        cam.project(vertices.row(v), sx[v], sy[v], z[v]) ? 1 : 0;

  // Depth test on affine-interpolated reciprocal depth (exact: 1/z is
  // affine in screen space over a triangle's plane).
  Eigen::VectorXd invz_buf = Eigen::VectorXd::Zero(hw);
  std::unordered_map<std::uint64_t, EdgeRec> edges;
  edges.reserve(static_cast<std::size_t>(nf) * 2);

  for (Eigen::Index f = 0; f < nf; ++f) {
    const std::int32_t i0 = faces(f, 0), i1 = faces(f, 1), i2 = faces(f, 2);
    if (!ok[static_cast<std::size_t>(i0)] ||
        !ok[static_cast<std::size_t>(i1)] ||
        !ok[static_cast<std::size_t>(i2)])
      continue;  // clipped whole at the near plane

    const double x0 = sx[i0], y0 = sy[i0], x1 = sx[i1], y1 = sy[i1],
                 x2 = sx[i2], y2 = sy[i2];
    const double area2 = signed_area2(x0, y0, x1, y1, x2, y2);
    const bool front = area2 < 0.0;

    for (int k = 0; k < 3; ++k) {
      const std::int32_t u = faces(f, k), v = faces(f, (k + 1) % 3);
      const std::uint64_t lo = static_cast<std::uint32_t>(std::min(u, v));
      const std::uint64_t hi = static_cast<std::uint32_t>(std::max(u, v));
      EdgeRec& rec = edges[(lo << 32) | hi];
      ++rec.total;
      if (front && ++rec.front == 1) {
        rec.u = u;
        rec.v = v;
        rec.face = static_cast<std::int32_t>(f);
      }
    }
    if (area2 == 0.0) continue;  // edge-on sliver covers nothing

    const double minx = std::min({x0, x1, x2}), maxx = std::max({x0, x1, x2});
    const double miny = std::min({y0, y1, y2}), maxy = std::max({y0, y1, y2});
    const int ix0 = std::max(0, static_cast<int>(std::floor(minx - 0.5)));
    const int ix1 = std::min(w - 1, static_cast<int>(std::ceil(maxx - 0.5)));
    const int iy0 = std::max(0, static_cast<int>(std::floor(miny - 0.5)));
    const int iy1 = std::min(h - 1, static_cast<int>(std::ceil(maxy - 0.5)));
    const double s = front ? -1.0 : 1.0;
    // Inclusive within rounding noise: a pixel center sitting on a shared
    // edge must be claimed by at least one neighbor, not dropped by both.
    const double tol = 1e-10 * std::abs(area2);

    for (int iy = iy0; iy <= iy1; ++iy) {
      const double cy = iy + 0.5;
      for (int ix = ix0; ix <= ix1; ++ix) {
        const double cx = ix + 0.5;
        const double w0 = (x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1);
        const double w1 = (x0 - x2) * (cy - y2) - (y0 - y2) * (cx - x2);
        const double w2 = (x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0);
        if (s * w0 < -tol || s * w1 < -tol || s * w2 < -tol) continue;
        const double ws = w0 + w1 + w2;
        if (ws == 0.0) continue;
        const double b0 = w0 / ws, b1 = w1 / ws, b2 = w2 / ws;
        const double iz = b0 / z[i0] + b1 / z[i1] + b2 / z[i2];
        const Eigen::Index pix = static_cast<Eigen::Index>(iy) * w + ix;
        if (iz > invz_buf[pix]) {
          invz_buf[pix] = iz;
          out.face[pix] = static_cast<std::int32_t>(f);
          out.bary(pix, 0) = b0;
          out.bary(pix, 1) = b1;
          out.bary(pix, 2) = b2;
        }
      }
    }
  }

  // Convert winners to perspective-correct barycentrics and depth.
  for (Eigen::Index pix = 0; pix < hw; ++pix) {
    const std::int32_t f = out.face[pix];
    if (f < 0) continue;
    const double iz = invz_buf[pix];
    out.bary(pix, 0) = out.bary(pix, 0) / z[faces(f, 0)] / iz;
    out.bary(pix, 1) = out.bary(pix, 1) / z[faces(f, 1)] / iz;
    out.bary(pix, 2) = out.bary(pix, 2) / z[faces(f, 2)] / iz;
    out.depth[pix] = 1.0 / iz;
  }

  // Visible silhouette: edges wound once by a front face and shared with at
  // most one other (non-front) face.
  std::vector<SilEdge> sil;
  for (const auto& kv : edges) {
    const EdgeRec& rec = kv.second;
    if (rec.front == 1 && rec.total <= 2) sil.push_back({rec.v, rec.u, rec.face});
  }
  std::sort(sil.begin(), sil.end(), [](const SilEdge& p, const SilEdge& q) {
    return p.a != q.a ? p.a < q.a : p.b < q.b;
  });
  out.num_silhouette_edges = sil.size();

  // Antialiasing band: nearest silhouette edge within one pixel of each
  // center.  Covered pixels keep an edge only while their surface matches
  // the edge's own face extended affinely in reciprocal depth; otherwise
  // they belong to a different layer and stay at full coverage.
  std::vector<double> best(static_cast<std::size_t>(hw),
                           std::numeric_limits<double>::infinity());
  std::vector<std::int32_t> best_edge(static_cast<std::size_t>(hw), -1);

  for (std::size_t ei = 0; ei < sil.size(); ++ei) {
    const SilEdge& e = sil[ei];
    const double ax = sx[e.a], ay = sy[e.a], bx = sx[e.b], by = sy[e.b];
    const double ex = bx - ax, ey = by - ay;
    const double len2 = ex * ex + ey * ey;
    if (len2 < 1e-24) continue;

    const std::int32_t j0 = faces(e.face, 0), j1 = faces(e.face, 1),
                       j2 = faces(e.face, 2);
    const double fx0 = sx[j0], fy0 = sy[j0], fx1 = sx[j1], fy1 = sy[j1],
                 fx2 = sx[j2], fy2 = sy[j2];
    const double farea = signed_area2(fx0, fy0, fx1, fy1, fx2, fy2);

    const double minx = std::min(ax, bx), maxx = std::max(ax, bx);
    const double miny = std::min(ay, by), maxy = std::max(ay, by);
    const int ix0 = std::max(0, static_cast<int>(std::floor(minx)) - 2);
    const int ix1 = std::min(w - 1, static_cast<int>(std::ceil(maxx)) + 2);
    const int iy0 = std::max(0, static_cast<int>(std::floor(miny)) - 2);
    const int iy1 = std::min(h - 1, static_cast<int>(std::ceil(maxy)) + 2);

    for (int iy = iy0; iy <= iy1; ++iy) {
      const double cy = iy + 0.5;
      for (int ix = ix0; ix <= ix1; ++ix) {
        const double cx = ix + 0.5;
        const double tc = std::clamp(
            ((cx - ax) * ex + (cy - ay) * ey) / len2, 0.0, 1.0);
        const double dx = cx - (ax + tc * ex), dy = cy - (ay + tc * ey);
        const double dseg2 = dx * dx + dy * dy;
        if (dseg2 > 1.0) continue;
        const Eigen::Index pix = static_cast<Eigen::Index>(iy) * w + ix;
        if (out.face[pix] >= 0 && farea != 0.0) {
          const double w0 = (fx2 - fx1) * (cy - fy1) - (fy2 - fy1) * (cx - fx1);
          const double w1 = (fx0 - fx2) * (cy - fy2) - (fy0 - fy2) * (cx - fx2);
          const double w2 = (fx1 - fx0) * (cy - fy0) - (fy1 - fy0) * (cx - fx0);
          const double plane_iz =
              (w0 / z[j0] + w1 / z[j1] + w2 / z[j2]) / farea;
          if (std::abs(invz_buf[pix] - plane_iz) > opt.invz_tolerance)
            continue;
        }
        const double dseg = std::sqrt(dseg2);
        if (dseg < best[static_cast<std::size_t>(pix)]) {
          best[static_cast<std::size_t>(pix)] = dseg;
          best_edge[static_cast<std::size_t>(pix)] =
              static_cast<std::int32_t>(ei);
        }
      }
    }
  }

  for (Eigen::Index pix = 0; pix < hw; ++pix) {
    const std::int32_t ei = best_edge[static_cast<std::size_t>(pix)];
    if (ei >= 0) {
      const SilEdge& e = sil[static_cast<std::size_t>(ei)];
      const double ax = sx[e.a], ay = sy[e.a];
      const double ex = sx[e.b] - ax, ey = sy[e.b] - ay;
      const double cx = static_cast<double>(pix % w) + 0.5;
      const double cy = static_cast<double>(pix / w) + 0.5;
      const double d =
          (ex * (cy - ay) - ey * (cx - ax)) / std::sqrt(ex * ex + ey * ey);
      out.coverage[pix] = std::clamp(0.5 + d, 0.0, 1.0);
      out.band_pixel.push_back(static_cast<std::int32_t>(pix));
      out.band_edge_a.push_back(e.a);
      out.band_edge_b.push_back(e.b);
      out.band_face.push_back(out.face[pix]);
    } else if (out.face[pix] >= 0) {
      out.coverage[pix] = 1.0;
      out.interior.push_back(static_cast<std::int32_t>(pix));
    }
  }
  return out;
}

// --------------------------------------------------------------- values

namespace detail {

MatXd surface_attr(const RasterOutput& ras, const MatXd& vertices,
                   const MatXi& faces, const MatXd& attr,
                   const CameraBasis& cam, std::vector<char>& touched) {
  const Eigen::Index hw = ras.num_pixels();
  if (attr.rows() != vertices.rows())
    throw ConfigError("render: one attribute row per vertex required");
  MatXd out = MatXd::Zero(hw, attr.cols());
  touched.assign(static_cast<std::size_t>(hw), 0);

  for (Eigen::Index pix = 0; pix < hw; ++pix) {
    const std::int32_t f = ras.face[pix];
    if (f < 0) continue;
    out.row(pix) = ras.bary(pix, 0) * attr.row(faces(f, 0)) +
                   ras.bary(pix, 1) * attr.row(faces(f, 1)) +
                   ras.bary(pix, 2) * attr.row(faces(f, 2));
    touched[static_cast<std::size_t>(pix)] = 1;
  }

  for (std::size_t i = 0; i < ras.band_pixel.size(); ++i) {
    if (ras.band_face[i] >= 0) continue;  // covered: handled above
    const std::int32_t pix = ras.band_pixel[i];
    const std::int32_t va = ras.band_edge_a[i], vb = ras.band_edge_b[i];
    double ax = 0, ay = 0, za = 0, bx = 0, by = 0, zb = 0;
    if (!cam.project(vertices.row(va), ax, ay, za) ||
        !cam.project(vertices.row(vb), bx, by, zb))
      throw DataError("render: plan does not match these vertices");
    const double ex = bx - ax, ey = by - ay;
    const double len2 = ex * ex + ey * ey;
    const double cx = static_cast<double>(pix % ras.width) + 0.5;
    const double cy = static_cast<double>(pix / ras.width) + 0.5;
    const double t = std::clamp(
        ((cx - ax) * ex + (cy - ay) * ey) / len2, 0.0, 1.0);
    const double qa = (1.0 - t) / za, qb = t / zb;
    const double wa = qa / (qa + qb);
    out.row(pix) = wa * attr.row(va) + (1.0 - wa) * attr.row(vb);
    touched[static_cast<std::size_t>(pix)] = 1;
  }
  return out;
}

namespace {

// Composite per-pixel surface rows against a constant background using the
// planned coverage.
Image composite(const RasterOutput& ras, const MatXd& surf,
                const Eigen::RowVectorXd& background) {
  Image img = Image::solid(ras.width, ras.height, background);
  for (std::int32_t pix : ras.interior) img.data.row(pix) = surf.row(pix);
  for (std::size_t i = 0; i < ras.band_pixel.size(); ++i) {
    const std::int32_t pix = ras.band_pixel[i];
    const double cov = ras.coverage[pix];
    img.data.row(pix) = cov * surf.row(pix) + (1.0 - cov) * background;
  }
  return img;
}

}  // namespace
}  // namespace detail

Image render_mask_values(const RasterOutput& ras) {
  Image img(ras.width, ras.height, 1);
  img.data.col(0) = ras.coverage;
  return img;
}

Image render_attr_values(const RasterOutput& ras, const MatXd& vertices,
                         const MatXi& faces, const MatXd& attr,
                         const CameraBasis& cam,
                         const Eigen::RowVectorXd& background) {
  std::vector<char> touched;
  MatXd surf = detail::surface_attr(ras, vertices, faces, attr, cam, touched);
  return detail::composite(ras, surf, background);
}

Image render_normal_values(const RasterOutput& ras, const MatXd& vertices,
                           const MatXi& faces, const MatXd& vertex_normals,
                           const CameraBasis& cam) {
  std::vector<char> touched;
  MatXd surf =
      detail::surface_attr(ras, vertices, faces, vertex_normals, cam, touched);
  for (Eigen::Index pix = 0; pix < surf.rows(); ++pix) {
    if (!touched[static_cast<std::size_t>(pix)]) continue;
    Eigen::Vector3d n = surf.row(pix).transpose();
    const double norm = n.norm();
    n = norm < 1e-12 ? Eigen::Vector3d::Zero() : Eigen::Vector3d(n / norm);
    surf.row(pix) = ((cam.R * n).array() * 0.5 + 0.5).transpose();
  }
  Eigen::RowVector3d bg(0.5, 0.5, 1.0);
  return detail::composite(ras, surf, bg);
}

Image shade_values(const RasterOutput& ras, const MatXd& vertices,
                   const MatXi& faces, const CameraBasis& cam,
                   const std::function<MatXd(const MatXd&)>& color_at) {
  std::vector<char> touched;
  MatXd pos = detail::surface_attr(ras, vertices, faces, vertices, cam,
                                   touched);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index pix = 0; pix < pos.rows(); ++pix)
    if (touched[static_cast<std::size_t>(pix)]) rows.push_back(pix);

  MatXd surf = MatXd::Zero(pos.rows(), 3);
  if (!rows.empty()) {
    MatXd pts(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t i = 0; i < rows.size(); ++i)
      pts.row(static_cast<Eigen::Index>(i)) = pos.row(rows[i]);
    MatXd rgb = color_at(pts);
    if (rgb.rows() != pts.rows() || rgb.cols() != 3)
      throw ConfigError("render: color lookup must return Px3");
    for (std::size_t i = 0; i < rows.size(); ++i)
      surf.row(rows[i]) = rgb.row(static_cast<Eigen::Index>(i));
  }
  Eigen::RowVector3d bg(1.0, 1.0, 1.0);
  return detail::composite(ras, surf, bg);
}

}  // namespace sv
