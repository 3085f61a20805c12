#include "sv/texture.hpp"

#include "sv/errors.hpp"
#include "sv/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace sv {

namespace {

// Unit vertex normals; rows without incident triangle area stay zero, which
// makes the strict front-facing test fail and routes them to the fallback.
MatXd unit_normals(const TriMesh& mesh) {
  MatXd n = vertex_normals(mesh.vertices, mesh.faces);
  for (Eigen::Index i = 0; i < n.rows(); ++i) {
    double len = n.row(i).norm();
    if (len > 1e-12) n.row(i) /= len;
  }
  return n;
}

std::vector<CameraBasis> bases_for(const std::vector<CameraPose>& poses) {
  std::vector<CameraBasis> cams;
  cams.reserve(poses.size());
  for (const CameraPose& pose : poses) cams.push_back(camera_basis(pose));
  return cams;
}

int nearest_among(const Eigen::RowVector3d& normal,
                  const Eigen::RowVector3d& point,
                  const std::vector<CameraBasis>& cams,
                  const Eigen::Array<bool, 1, Eigen::Dynamic>& visible) {
  int best = -1;
  double best_cos = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < static_cast<int>(cams.size()); ++k) {
    if (!visible[k]) continue;
    Eigen::RowVector3d to_eye = cams[k].eye.transpose() - point;
    double len = to_eye.norm();
    if (len < 1e-12) continue;
    double c = normal.dot(to_eye) / len;
    if (c > best_cos) {  // strict: ties keep the lowest index
      best_cos = c;
      best = k;
    }
  }
  return best;
}

void require_table_shape(const TriMesh& mesh, std::size_t num_views,
                         const VisibilityTable& vis) {
  if (vis.num_vertices() != mesh.num_vertices() ||
      vis.num_views() != static_cast<Eigen::Index>(num_views))
    throw DataError(
        "texture: visibility table shape does not match the mesh and views");
}

enum class BakeMode { kNearest, kUniformAverage };

TriMesh bake_impl(const TriMesh& mesh, const ViewSet& views,
                  const VisibilityTable& vis,
                  const std::function<MatXd(const MatXd&)>& fallback,
                  BakeMode mode) {
  require_table_shape(mesh, views.views.size(), vis);
  for (std::size_t k = 0; k < views.views.size(); ++k) {
    views.views[k].rgb.validate("texture: view " + std::to_string(k) +
                                " rgb");
    if (views.views[k].rgb.channels != 3)
      throw DataError("texture: view " + std::to_string(k) +
                      " rgb must have 3 channels");
  }

  const Eigen::Index nv = mesh.num_vertices();
  const MatXd normals = unit_normals(mesh);

  std::vector<CameraPose> poses;
  poses.reserve(views.views.size());
  for (const View& v : views.views) poses.push_back(v.pose);
  const std::vector<CameraBasis> cams = bases_for(poses);

  TriMesh out = mesh;
  out.colors = MatXd::Zero(nv, 3);

  std::vector<Eigen::Index> orphans;
  for (Eigen::Index i = 0; i < nv; ++i) {
    const Eigen::RowVector3d p = mesh.vertices.row(i);
    const Eigen::RowVector3d n = normals.row(i);

    Eigen::RowVector3d color = Eigen::RowVector3d::Zero();
    int hits = 0;
    if (mode == BakeMode::kNearest) {
      int k = nearest_among(n, p, cams, vis.visible.row(i));
      double sx, sy, depth;
      if (k >= 0 && cams[k].project(p.transpose(), sx, sy, depth)) {
        color = sample_bilinear(views.views[k].rgb, sx, sy);
        hits = 1;
      }
    } else {
      for (int k = 0; k < static_cast<int>(cams.size()); ++k) {
        if (!vis.visible(i, k)) continue;
        double sx, sy, depth;
        if (!cams[k].project(p.transpose(), sx, sy, depth)) continue;
        color += sample_bilinear(views.views[k].rgb, sx, sy);
        ++hits;
      }
      if (hits > 0) color /= hits;
    }

    if (hits > 0)
      out.colors.row(i) = color;
    else
      orphans.push_back(i);
  }

  if (!orphans.empty()) {
    if (!fallback)
      throw ConfigError("texture: " + std::to_string(orphans.size()) +
                        " vertices are invisible in every view and no "
                        "fallback color field was given");
    MatXd pts(static_cast<Eigen::Index>(orphans.size()), 3);
    for (Eigen::Index j = 0; j < pts.rows(); ++j)
      pts.row(j) = mesh.vertices.row(orphans[static_cast<std::size_t>(j)]);
    MatXd colors = fallback(pts);
    if (colors.rows() != pts.rows() || colors.cols() != 3)
      throw DataError("texture: fallback returned a misshapen color matrix");
    for (Eigen::Index j = 0; j < pts.rows(); ++j)
      out.colors.row(orphans[static_cast<std::size_t>(j)]) = colors.row(j);
  }

  out.colors = out.colors.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

}  // namespace

double visibility_depth_tolerance(int grid_cells) {
  if (grid_cells < 1)
    throw ConfigError("texture: grid cells must be positive");
  return 1.5 * (2.0 / grid_cells);
}

VisibilityTable compute_visibility(const TriMesh& mesh,
                                   const std::vector<CameraPose>& poses,
                                   double depth_tol) {
  if (!(depth_tol > 0.0))
    throw ConfigError("texture: depth tolerance must be positive");

  const Eigen::Index nv = mesh.num_vertices();
  const Eigen::Index nk = static_cast<Eigen::Index>(poses.size());
  VisibilityTable table;
  table.visible.setConstant(nv, nk, false);
  if (nv == 0 || nk == 0) return table;

  const MatXd normals = unit_normals(mesh);

  for (Eigen::Index k = 0; k < nk; ++k) {
    const CameraBasis cam = camera_basis(poses[static_cast<std::size_t>(k)]);
    const RasterOutput ras = plan_raster(mesh.vertices, mesh.faces, cam);

    for (Eigen::Index i = 0; i < nv; ++i) {
      const Eigen::Vector3d p = mesh.vertices.row(i).transpose();
      if (normals.row(i).dot((cam.eye - p).transpose()) <= 0.0) continue;

      double sx, sy, depth;
      if (!cam.project(p, sx, sy, depth)) continue;
      if (sx < 0.0 || sx >= cam.width || sy < 0.0 || sy >= cam.height)
        continue;

      // A vertex on a silhouette projects onto the boundary between
      // covered and uncovered pixels, so its own pixel may show whatever
      // lies behind.  Test the 2x2 bilinear footprint instead: if any of
      // the pixels the color sample would touch sees the surface at this
      // depth, the view genuinely supervises the vertex.
      const int x0 = static_cast<int>(std::floor(sx - 0.5));
      const int y0 = static_cast<int>(std::floor(sy - 0.5));
      for (int dy = 0; dy < 2 && !table.visible(i, k); ++dy) {
        const int py = std::clamp(y0 + dy, 0, cam.height - 1);
        for (int dx = 0; dx < 2; ++dx) {
          const int px = std::clamp(x0 + dx, 0, cam.width - 1);
          const Eigen::Index pix =
              static_cast<Eigen::Index>(py) * cam.width + px;
          if (ras.face[pix] >= 0 &&
              std::abs(depth - ras.depth[pix]) <= depth_tol) {
            table.visible(i, k) = true;
            break;
          }
        }
      }
    }
  }
  return table;
}

int nearest_view(const Eigen::RowVector3d& normal,
                 const Eigen::RowVector3d& point,
                 const std::vector<CameraPose>& poses,
                 const Eigen::Array<bool, 1, Eigen::Dynamic>& visible) {
  if (visible.size() != static_cast<Eigen::Index>(poses.size()))
    throw DataError("texture: visibility row does not match the pose count");
  return nearest_among(normal, point, bases_for(poses), visible);
}

Eigen::RowVectorXd sample_bilinear(const Image& img, double sx, double sy) {
  if (img.width < 1 || img.height < 1)
    throw DataError("texture: cannot sample an empty image");

  const double fx = sx - 0.5;
  const double fy = sy - 0.5;
  const double x0 = std::floor(fx);
  const double y0 = std::floor(fy);
  const double tx = fx - x0;
  const double ty = fy - y0;

  const auto cx = [&](double x) {
    return std::clamp(static_cast<int>(x), 0, img.width - 1);
  };
  const auto cy = [&](double y) {
    return std::clamp(static_cast<int>(y), 0, img.height - 1);
  };
  const int xa = cx(x0), xb = cx(x0 + 1);
  const int ya = cy(y0), yb = cy(y0 + 1);

  Eigen::RowVectorXd out(img.channels);
  for (int c = 0; c < img.channels; ++c)
    out[c] = (1.0 - ty) * ((1.0 - tx) * img.at(xa, ya, c) +
                           tx * img.at(xb, ya, c)) +
             ty * ((1.0 - tx) * img.at(xa, yb, c) + tx * img.at(xb, yb, c));
  return out;
}

TriMesh bake_vertex_colors(const TriMesh& mesh, const ViewSet& views,
                           const VisibilityTable& vis,
                           const std::function<MatXd(const MatXd&)>& fallback) {
  return bake_impl(mesh, views, vis, fallback, BakeMode::kNearest);
}

TriMesh bake_vertex_colors_uniform(
    const TriMesh& mesh, const ViewSet& views, const VisibilityTable& vis,
    const std::function<MatXd(const MatXd&)>& fallback) {
  return bake_impl(mesh, views, vis, fallback, BakeMode::kUniformAverage);
}

}  // namespace sv
