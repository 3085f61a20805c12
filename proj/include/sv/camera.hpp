#pragma once

// Perspective camera model shared by data generation, rasterization and
// texture baking.
//
// World frame: right-handed, +Z up, object centered at the origin inside
// [-1, 1]^3.  A pose orbits the origin: the eye sits at radius r, azimuth a
// (degrees, around +Z from +X) and elevation e (degrees above the XY plane),
// looking at the origin.  Camera space follows the usual convention of
// x-right / y-up / looking down -z, and screen coordinates put pixel (0, 0)
// at the top-left with pixel centers at half-integer positions.

#include "sv/tensor.hpp"

#include <Eigen/Dense>

namespace sv {

struct CameraPose {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double radius = 3.0;
  double fov_deg = 40.0;  // vertical field of view
  int width = 256;
  int height = 256;
  double near_clip = 0.1;
  double far_clip = 10.0;
};

struct CameraBasis {
  Eigen::Vector3d eye = Eigen::Vector3d::Zero();
  // World-to-camera rotation; rows are the camera right / up / back axes,
  // so cam = R * (world - eye) and the view direction is -R.row(2).
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  double focal = 1.0;   // cot(fov/2), applied to y; x uses focal / aspect
  double aspect = 1.0;  // width / height
  int width = 256;
  int height = 256;
  double near_clip = 0.1;
  double far_clip = 10.0;

  Eigen::Vector3d to_cam(const Eigen::Vector3d& p) const {
    return R * (p - eye);
  }
  Eigen::Vector3d normal_to_cam(const Eigen::Vector3d& n) const {
    return R * n;
  }

  // Perspective projection to pixel coordinates.  Returns false when the
  // point is not strictly in front of the near plane; sx/sy/depth are then
  // unspecified.  `depth` is the positive view-space distance along the
  // optical axis (the perspective divisor).
  bool project(const Eigen::Vector3d& p, double& sx, double& sy,
               double& depth) const {
    Eigen::Vector3d c = to_cam(p);
    depth = -c.z();
    if (depth <= near_clip) return false;
    double ndc_x = (focal / aspect) * c.x() / depth;
    double ndc_y = focal * c.y() / depth;
    sx = (ndc_x + 1.0) * 0.5 * width;
    sy = (1.0 - ndc_y) * 0.5 * height;
    return true;
  }

  // Ray through a pixel center, for ray marching synthetic views.
  void pixel_ray(double sx, double sy, Eigen::Vector3d& origin,
                 Eigen::Vector3d& dir) const {
    double ndc_x = 2.0 * sx / width - 1.0;
    double ndc_y = 1.0 - 2.0 * sy / height;
    Eigen::Vector3d cam(ndc_x * aspect / focal, ndc_y / focal, -1.0);
    origin = eye;
    dir = (R.transpose() * cam).normalized();
  }
};

// Build the orbit basis.  Throws ConfigError for poses looking straight
// along the up axis (elevation +-90 degrees), where the frame degenerates.
CameraBasis camera_basis(const CameraPose& pose);

}  // namespace sv
