#pragma once

// Differentiable surface rasterization.
//
// Rendering happens in two phases.  plan_raster() makes every discrete
// decision in plain double arithmetic: which triangle wins each pixel's
// depth test, which edges form the visible silhouette, and which pixels
// fall inside the one-pixel antialiasing band around it.  Its RasterOutput
// freezes those decisions as index lists.  build_render() then replays only
// the surviving arithmetic on a tape -- projection, barycentric
// interpolation, edge coverage, shading -- so gradients reach vertex
// positions, vertex normals and the color network without ever branching on
// tape values.
//
// Coverage model: interior pixels are fully covered.  A pixel whose center
// lies within one pixel of a visible silhouette edge belongs to the band and
// gets
//
//   coverage = clamp(0.5 + d, 0, 1)
//
// where d is the signed perpendicular distance (in pixels) from the pixel
// center to the edge line, positive on the surface side.  Covered band
// pixels are shaded from their depth-test winner; uncovered ones sample the
// surface at the clamped foot of the perpendicular, which keeps the shading
// point attached to the edge as it moves.  Band pixels are composited
// against the background by coverage.
//
// Conventions fixed here and mirrored by the synthetic data generator:
// backgrounds are white for RGB, (0.5, 0.5, 1) for normals (the
// toward-camera normal encoded as (n+1)/2) and zero for masks.  Backface
// culling is off; a triangle with any vertex not strictly in front of the
// near plane is dropped whole; an entirely clipped or empty mesh renders as
// pure background rather than an error.

#include "sv/camera.hpp"
#include "sv/errors.hpp"
#include "sv/image.hpp"
#include "sv/tape.hpp"
#include "sv/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace sv {

struct RasterOptions {
  // A covered pixel keeps a silhouette edge only while the reciprocal depth
  // of its surface stays within this tolerance of the edge's own face
  // extended to the pixel.  Beyond it the pixel shows a different depth
  // layer: antialiasing there would blend the background through geometry,
  // so the pixel renders at full coverage instead.
  double invz_tolerance = 0.01;
};

// Frozen per-view rasterization decisions plus the value-level buffers
// derived from them.  Pixels are indexed row-major, pix = y*width + x, with
// pixel centers at half-integer coordinates.
struct RasterOutput {
  int width = 0;
  int height = 0;

  VecXi face;                // depth-test winner per pixel, -1 where none
  MatXd bary;                // perspective-correct barycentrics of the winner
  Eigen::VectorXd depth;     // view-space depth of the winner, 0 where none
  Eigen::VectorXd coverage;  // antialiased mask in [0, 1]

  // Covered pixels away from every silhouette edge (coverage exactly 1).
  std::vector<std::int32_t> interior;

  // Pixels whose center lies within one pixel of a visible silhouette edge.
  // Edge endpoints are ordered so the surface side of cross2(b-a, p-a) is
  // positive; band_face is the covering face, or -1 when the pixel is
  // uncovered and shades at the edge foot.
  std::vector<std::int32_t> band_pixel;
  std::vector<std::int32_t> band_edge_a;
  std::vector<std::int32_t> band_edge_b;
  std::vector<std::int32_t> band_face;

  std::size_t num_silhouette_edges = 0;

  Eigen::Index num_pixels() const {
    return static_cast<Eigen::Index>(width) * height;
  }
};

RasterOutput plan_raster(const MatXd& vertices, const MatXi& faces,
                         const CameraBasis& cam,
                         const RasterOptions& opt = {});

// ------------------------------------------------------- value-level views

// Coverage buffer as a single-channel image.
Image render_mask_values(const RasterOutput& ras);

// Barycentric blend of arbitrary per-vertex attributes, composited against
// `background` by coverage.  Covered pixels interpolate the winning
// triangle; uncovered band pixels interpolate along their edge.
Image render_attr_values(const RasterOutput& ras, const MatXd& vertices,
                         const MatXi& faces, const MatXd& attr,
                         const CameraBasis& cam,
                         const Eigen::RowVectorXd& background);

// Vertex-normal rendering: blend, renormalize, rotate into camera space and
// encode as (n+1)/2 over the (0.5, 0.5, 1) background.
Image render_normal_values(const RasterOutput& ras, const MatXd& vertices,
                           const MatXi& faces, const MatXd& vertex_normals,
                           const CameraBasis& cam);

// RGB shading through a value-level color lookup: world positions are
// interpolated per shaded pixel and passed to `color_at` as a (P x 3) batch
// returning (P x 3) colors in [0, 1].
Image shade_values(const RasterOutput& ras, const MatXd& vertices,
                   const MatXi& faces, const CameraBasis& cam,
                   const std::function<MatXd(const MatXd&)>& color_at);

namespace detail {

// Shared interpolation core of the value-level renders: per-pixel surface
// attribute rows (no background, no coverage), with `touched` marking the
// pixels that received a value.
MatXd surface_attr(const RasterOutput& ras, const MatXd& vertices,
                   const MatXi& faces, const MatXd& attr,
                   const CameraBasis& cam, std::vector<char>& touched);

}  // namespace detail

// --------------------------------------------------------- tape rendering

struct RenderVars {
  Var rgb;     // (H*W x 3)
  Var normal;  // (H*W x 3), encoded camera-space normals
  Var mask;    // (H*W x 1)
};

// Differentiable replay of a frozen plan.  `vertices` and `vertex_normals`
// are (V x 3) tape nodes whose values match the ones the plan was built
// from; `color_at` maps a (P x 3) world-position node to (P x 3) colors.
// The same formulas as the value-level renders run as tape ops, so forward
// values agree with plan_raster up to rounding.
template <class T>
RenderVars build_render(TapeT<T>& tape, Var vertices, Var vertex_normals,
                        const MatXi& faces, const CameraBasis& cam,
                        const RasterOutput& ras,
                        const std::function<Var(TapeT<T>&, Var)>& color_at) {
  using Mat = MatX<T>;
  using Tape = TapeT<T>;
  const Eigen::Index hw = ras.num_pixels();
  const int w = ras.width;

  Mat bg_nrm_row(1, 3);
  bg_nrm_row << T(0.5), T(0.5), T(1);

  RenderVars out;
  out.rgb = tape.constant(Mat::Ones(hw, 3));
  out.normal = tape.constant(Mat(bg_nrm_row.replicate(hw, 1)));
  out.mask = tape.constant(Mat::Zero(hw, 1));

  const Eigen::Index n_int = static_cast<Eigen::Index>(ras.interior.size());
  const Eigen::Index n_band = static_cast<Eigen::Index>(ras.band_pixel.size());
  if (n_int + n_band == 0) return out;

  // Band entries split by coverage: covered pixels shade through their
  // winning face like interior ones, uncovered pixels through the edge foot.
  std::vector<std::int32_t> bc, bu;
  for (Eigen::Index i = 0; i < n_band; ++i)
    (ras.band_face[i] >= 0 ? bc : bu).push_back(static_cast<std::int32_t>(i));
  const Eigen::Index n_bc = static_cast<Eigen::Index>(bc.size());
  const Eigen::Index n_bu = static_cast<Eigen::Index>(bu.size());
  const Eigen::Index n_surf = n_int + n_bc;

  auto center_rows = [&](const std::vector<std::int32_t>& pix) {
    Mat c(static_cast<Eigen::Index>(pix.size()), 2);
    for (std::size_t i = 0; i < pix.size(); ++i) {
      c(static_cast<Eigen::Index>(i), 0) = static_cast<T>(pix[i] % w + 0.5);
      c(static_cast<Eigen::Index>(i), 1) = static_cast<T>(pix[i] / w + 0.5);
    }
    return c;
  };

  // In-tape projection of every vertex, mirroring CameraBasis::project.
  // Vertices of dropped triangles are never gathered; the depth clamp keeps
  // their rows finite so no NaN leaks into shared backward buffers.
  Var rot = tape.constant(Mat(cam.R.transpose().cast<T>()));
  Mat neg_eye = (-cam.eye.transpose()).template cast<T>();
  Var vc = tape.matmul(tape.add_rowvec(vertices, tape.constant(neg_eye)), rot);
  Var depth =
      tape.clamp(tape.neg(tape.slice_cols(vc, 2, 1)), cam.near_clip, 1e9);
  Var invz =
      tape.div(tape.constant(Mat::Ones(tape.val(vc).rows(), 1)), depth);
  Var px = tape.scale(
      tape.offset(tape.scale(tape.mul(tape.slice_cols(vc, 0, 1), invz),
                             cam.focal / cam.aspect),
                  1.0),
      0.5 * ras.width);
  Var py = tape.scale(
      tape.offset(
          tape.scale(tape.mul(tape.slice_cols(vc, 1, 1), invz), -cam.focal),
          1.0),
      0.5 * ras.height);
  Var scr = tape.concat_cols({px, py});

  auto cross2 = [&](Var u, Var v) {
    return tape.sub(
        tape.mul(tape.slice_cols(u, 0, 1), tape.slice_cols(v, 1, 1)),
        tape.mul(tape.slice_cols(u, 1, 1), tape.slice_cols(v, 0, 1)));
  };

  // Surface samples in the order [interior, covered band, uncovered band];
  // positions and normals are assembled jointly so the color network and
  // the normal pipeline each run once.
  std::vector<Var> pos_parts, nrm_parts;

  if (n_surf > 0) {
    std::vector<std::int32_t> spix, i0, i1, i2;
    spix.reserve(static_cast<std::size_t>(n_surf));
    for (std::int32_t p : ras.interior) spix.push_back(p);
    for (std::int32_t j : bc) spix.push_back(ras.band_pixel[j]);
    i0.reserve(spix.size());
    i1.reserve(spix.size());
    i2.reserve(spix.size());
    for (std::int32_t p : ras.interior) {
      std::int32_t f = ras.face[p];
      i0.push_back(faces(f, 0));
      i1.push_back(faces(f, 1));
      i2.push_back(faces(f, 2));
    }
    for (std::int32_t j : bc) {
      std::int32_t f = ras.band_face[j];
      i0.push_back(faces(f, 0));
      i1.push_back(faces(f, 1));
      i2.push_back(faces(f, 2));
    }
    auto g0 = Tape::make_indices(std::move(i0));
    auto g1 = Tape::make_indices(std::move(i1));
    auto g2 = Tape::make_indices(std::move(i2));

    Var s0 = tape.gather_rows(scr, g0);
    Var s1 = tape.gather_rows(scr, g1);
    Var s2 = tape.gather_rows(scr, g2);
    Var pc = tape.constant(center_rows(spix));

    Var w0 = cross2(tape.sub(s2, s1), tape.sub(pc, s1));
    Var w1 = cross2(tape.sub(s0, s2), tape.sub(pc, s2));
    Var w2 = cross2(tape.sub(s1, s0), tape.sub(pc, s0));
    Var ws = tape.add(tape.add(w0, w1), w2);
    Var q0 = tape.mul(tape.div(w0, ws), tape.gather_rows(invz, g0));
    Var q1 = tape.mul(tape.div(w1, ws), tape.gather_rows(invz, g1));
    Var q2 = tape.mul(tape.div(w2, ws), tape.gather_rows(invz, g2));
    Var qs = tape.add(tape.add(q0, q1), q2);
    Var b0 = tape.div(q0, qs);
    Var b1 = tape.div(q1, qs);
    Var b2 = tape.div(q2, qs);

    pos_parts.push_back(tape.add(
        tape.add(tape.mul_colvec(tape.gather_rows(vertices, g0), b0),
                 tape.mul_colvec(tape.gather_rows(vertices, g1), b1)),
        tape.mul_colvec(tape.gather_rows(vertices, g2), b2)));
    nrm_parts.push_back(tape.add(
        tape.add(tape.mul_colvec(tape.gather_rows(vertex_normals, g0), b0),
                 tape.mul_colvec(tape.gather_rows(vertex_normals, g1), b1)),
        tape.mul_colvec(tape.gather_rows(vertex_normals, g2), b2)));
  }

  if (n_bu > 0) {
    std::vector<std::int32_t> upix, ea, eb;
    upix.reserve(static_cast<std::size_t>(n_bu));
    for (std::int32_t j : bu) {
      upix.push_back(ras.band_pixel[j]);
      ea.push_back(ras.band_edge_a[j]);
      eb.push_back(ras.band_edge_b[j]);
    }
    auto ga = Tape::make_indices(std::move(ea));
    auto gb = Tape::make_indices(std::move(eb));

    Var as = tape.gather_rows(scr, ga);
    Var bs = tape.gather_rows(scr, gb);
    Var pc = tape.constant(center_rows(upix));
    Var e = tape.sub(bs, as);
    Var t = tape.clamp(
        tape.div(tape.dot_rows(tape.sub(pc, as), e), tape.dot_rows(e, e)),
        0.0, 1.0);
    // Perspective-correct lerp along the edge through reciprocal depths.
    Var qa = tape.mul(tape.offset(tape.neg(t), 1.0), tape.gather_rows(invz, ga));
    Var qb = tape.mul(t, tape.gather_rows(invz, gb));
    Var qs = tape.add(qa, qb);
    Var wa = tape.div(qa, qs);
    Var wb = tape.div(qb, qs);

    pos_parts.push_back(
        tape.add(tape.mul_colvec(tape.gather_rows(vertices, ga), wa),
                 tape.mul_colvec(tape.gather_rows(vertices, gb), wb)));
    nrm_parts.push_back(
        tape.add(tape.mul_colvec(tape.gather_rows(vertex_normals, ga), wa),
                 tape.mul_colvec(tape.gather_rows(vertex_normals, gb), wb)));
  }

  Var positions =
      pos_parts.size() == 1 ? pos_parts[0] : tape.concat_rows(pos_parts);
  Var blended =
      nrm_parts.size() == 1 ? nrm_parts[0] : tape.concat_rows(nrm_parts);
  Var enc = tape.scale(
      tape.offset(tape.matmul(tape.normalize_rows(blended), rot), 1.0), 0.5);
  Var rgb = color_at(tape, positions);

  // Image assembly: interior rows then band rows, scattered in one pass.
  std::vector<std::int32_t> img_idx;
  img_idx.reserve(static_cast<std::size_t>(n_int + n_band));
  for (std::int32_t p : ras.interior) img_idx.push_back(p);
  for (std::int32_t p : ras.band_pixel) img_idx.push_back(p);

  std::vector<Var> rgb_rows, nrm_rows, mask_rows;
  if (n_int > 0) {
    rgb_rows.push_back(tape.slice_rows(rgb, 0, n_int));
    nrm_rows.push_back(tape.slice_rows(enc, 0, n_int));
    mask_rows.push_back(tape.constant(Mat::Ones(n_int, 1)));
  }

  if (n_band > 0) {
    std::vector<std::int32_t> bpix(ras.band_pixel.begin(),
                                   ras.band_pixel.end());
    auto ga = Tape::make_indices(std::vector<std::int32_t>(
        ras.band_edge_a.begin(), ras.band_edge_a.end()));
    auto gb = Tape::make_indices(std::vector<std::int32_t>(
        ras.band_edge_b.begin(), ras.band_edge_b.end()));
    Var as = tape.gather_rows(scr, ga);
    Var bs = tape.gather_rows(scr, gb);
    Var pc = tape.constant(center_rows(bpix));
    Var e = tape.sub(bs, as);
    Var len = tape.sqrt(tape.dot_rows(e, e));
    Var d = tape.div(cross2(e, tape.sub(pc, as)), len);
    Var cov = tape.clamp(tape.offset(d, 0.5), 0.0, 1.0);
    Var om = tape.offset(tape.neg(cov), 1.0);

    // Surface rows rearranged into band order.
    Var srgb, snrm;
    if (n_bu == 0) {
      srgb = tape.slice_rows(rgb, n_int, n_bc);
      snrm = tape.slice_rows(enc, n_int, n_bc);
    } else if (n_bc == 0) {
      srgb = tape.slice_rows(rgb, n_surf, n_bu);
      snrm = tape.slice_rows(enc, n_surf, n_bu);
    } else {
      std::vector<std::int32_t> perm = bc;
      perm.insert(perm.end(), bu.begin(), bu.end());
      auto gp = Tape::make_indices(std::move(perm));
      srgb = tape.scatter_rows(
          tape.constant(Mat::Zero(n_band, 3)), gp,
          tape.concat_rows({tape.slice_rows(rgb, n_int, n_bc),
                            tape.slice_rows(rgb, n_surf, n_bu)}));
      snrm = tape.scatter_rows(
          tape.constant(Mat::Zero(n_band, 3)), gp,
          tape.concat_rows({tape.slice_rows(enc, n_int, n_bc),
                            tape.slice_rows(enc, n_surf, n_bu)}));
    }

    rgb_rows.push_back(tape.add(tape.mul_colvec(srgb, cov),
                                tape.mul_colvec(tape.constant(Mat::Ones(n_band, 3)), om)));
    nrm_rows.push_back(tape.add(
        tape.mul_colvec(snrm, cov),
        tape.mul_colvec(tape.constant(Mat(bg_nrm_row.replicate(n_band, 1))), om)));
    mask_rows.push_back(cov);
  }

  auto gi = Tape::make_indices(std::move(img_idx));
  auto one_or_cat = [&](std::vector<Var>& parts) {
    return parts.size() == 1 ? parts[0] : tape.concat_rows(parts);
  };
  out.rgb = tape.scatter_rows(out.rgb, gi, one_or_cat(rgb_rows));
  out.normal = tape.scatter_rows(out.normal, gi, one_or_cat(nrm_rows));
  out.mask = tape.scatter_rows(out.mask, gi, one_or_cat(mask_rows));
  return out;
}

}  // namespace sv
