#pragma once

// Analytic test scenes standing in for the multi-view diffusion stage.
// Each scene is a closed-form SDF — exact primitives composed with min,
// max, and the quadratic smooth union — paired with an analytic gradient
// and a position-driven albedo.  Every node carries a Lipschitz bound so
// the sphere tracer can take provably safe steps: a bound of L means
// |f(x)| / L never overshoots the zero level.

#include "sv/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace sv {

struct SdfNode {
  std::function<double(const Eigen::RowVector3d&)> value;
  std::function<Eigen::RowVector3d(const Eigen::RowVector3d&)> gradient;
  double lipschitz = 1.0;
};

SdfNode sdf_sphere(const Eigen::RowVector3d& center, double radius);
SdfNode sdf_box(const Eigen::RowVector3d& center,
                const Eigen::RowVector3d& half_extent);
// Ring around the z axis through `center`.
SdfNode sdf_torus(const Eigen::RowVector3d& center, double major,
                  double minor);
SdfNode sdf_capsule(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b,
                    double radius);

SdfNode sdf_union(SdfNode a, SdfNode b);
SdfNode sdf_intersection(SdfNode a, SdfNode b);
// Quadratic polynomial blend with radius k; gradient is the exact convex
// combination h grad_a + (1-h) grad_b, so the bound stays at
// max(L_a, L_b).
SdfNode sdf_smooth_union(SdfNode a, SdfNode b, double k);

using ColorFn =
    std::function<Eigen::RowVector3d(const Eigen::RowVector3d&)>;

struct SyntheticScene {
  std::string name;
  SdfNode shape;
  ColorFn albedo;
};

// Registry of the built-in scenes; unknown names throw ConfigError.
//   sphere    centered ball, uniform red
//   box       axis-aligned block, uniform blue
//   torus     z-axis ring, uniform amber
//   two_tone  ball split red/blue across the z = 0 plane
//   snowman   two smooth-blended balls with a red scarf band
SyntheticScene make_scene(const std::string& name);
std::vector<std::string> scene_names();

}  // namespace sv
