#pragma once

// Orientation-aware texture baking.
//
// Training drives texture through the color field, but the exported mesh
// takes its final vertex colors from the supervising images directly: each
// vertex picks the view whose eye direction best aligns with its normal,
// projects into that view, and bilinearly samples the RGB image there.
// Committing to a single view per vertex is what suppresses ghosting — in
// the overlap band between two adjacent views their pixels disagree, and
// any blend smears that disagreement across the surface.
//
// Occlusion comes from per-view depth maps rendered off the mesh itself: a
// vertex counts as visible in a view when it projects inside the image,
// its depth matches the depth buffer within a tolerance, and its normal
// faces the eye.  Vertices no view can see fall back to the color field.

#include "sv/camera.hpp"
#include "sv/dataio.hpp"
#include "sv/mesh.hpp"
#include "sv/tensor.hpp"

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace sv {

// One row per vertex, one column per view; true means depth-visible and
// front-facing (visible(i, k) implies dot(normal_i, eye_k - v_i) > 0).
struct VisibilityTable {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> visible;

  Eigen::Index num_vertices() const { return visible.rows(); }
  Eigen::Index num_views() const { return visible.cols(); }
};

// Depth slack matched to the extraction lattice: vertices sit anywhere in
// their cell and the depth buffer is sampled at pixel centers, so a bit
// over one cell of tolerance separates self-occlusion from rounding.
double visibility_depth_tolerance(int grid_cells);

// Renders a depth map from every pose and tests each vertex against it.
// Normals are derived from the mesh geometry (area-weighted); vertices
// with no incident area have no orientation and are never visible.
VisibilityTable compute_visibility(const TriMesh& mesh,
                                   const std::vector<CameraPose>& poses,
                                   double depth_tol);

// Index of the visible view maximizing cos(normal, direction from point to
// the eye), -1 when no view is visible.  `normal` should be unit length
// (only the argmax is used, so scale does not change the answer); exact
// ties resolve to the lowest index.
int nearest_view(const Eigen::RowVector3d& normal,
                 const Eigen::RowVector3d& point,
                 const std::vector<CameraPose>& poses,
                 const Eigen::Array<bool, 1, Eigen::Dynamic>& visible);

// Bilinear sample at pixel coordinates (centers at half-integers), clamped
// to the image border; returns one value per channel.
Eigen::RowVectorXd sample_bilinear(const Image& img, double sx, double sy);

// Copy of the mesh with per-vertex colors pulled from each vertex's
// nearest view.  `fallback` maps world positions to RGB for vertices that
// are invisible everywhere; it may be empty when the table shows full
// coverage.  Colors are clamped to [0, 1].
TriMesh bake_vertex_colors(const TriMesh& mesh, const ViewSet& views,
                           const VisibilityTable& vis,
                           const std::function<MatXd(const MatXd&)>& fallback);

// Ablation baseline: averages the samples of every visible view instead of
// committing to the nearest one.  Ghosts wherever adjacent views disagree.
TriMesh bake_vertex_colors_uniform(
    const TriMesh& mesh, const ViewSet& views, const VisibilityTable& vis,
    const std::function<MatXd(const MatXd&)>& fallback);

}  // namespace sv
