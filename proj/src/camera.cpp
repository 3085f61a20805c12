#include "sv/camera.hpp"

#include "sv/errors.hpp"

#include <cmath>

namespace sv {

CameraBasis camera_basis(const CameraPose& pose) {
  if (pose.width <= 0 || pose.height <= 0)
    throw ConfigError("camera: image dimensions must be positive");
  if (pose.fov_deg <= 0.0 || pose.fov_deg >= 180.0)
    throw ConfigError("camera: vertical fov must lie in (0, 180) degrees");
  if (pose.radius <= 0.0) throw ConfigError("camera: radius must be positive");
  if (pose.near_clip <= 0.0 || pose.far_clip <= pose.near_clip)
    throw ConfigError("camera: need 0 < near < far");

  const double deg = M_PI / 180.0;
  double az = pose.azimuth_deg * deg;
  double el = pose.elevation_deg * deg;
  double ce = std::cos(el);
  if (std::abs(ce) < 1e-9)
    throw ConfigError(
        "camera: elevation of +-90 degrees degenerates the view frame");

  CameraBasis b;
  b.eye = pose.radius *
          Eigen::Vector3d(ce * std::cos(az), ce * std::sin(az), std::sin(el));

  // Look-at-origin frame with +Z as the world up reference.
  Eigen::Vector3d back = b.eye.normalized();            // camera +z
  Eigen::Vector3d up0(0.0, 0.0, 1.0);
  Eigen::Vector3d right = up0.cross(back).normalized();  // camera +x
  Eigen::Vector3d up = back.cross(right);                // camera +y
  b.R.row(0) = right;
  b.R.row(1) = up;
  b.R.row(2) = back;

  b.aspect = static_cast<double>(pose.width) / pose.height;
  b.focal = 1.0 / std::tan(0.5 * pose.fov_deg * deg);
  b.width = pose.width;
  b.height = pose.height;
  b.near_clip = pose.near_clip;
  b.far_clip = pose.far_clip;
  return b;
}

}  // namespace sv
