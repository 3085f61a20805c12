#pragma once

// Geometry and image evaluation: Chamfer distance, volume IoU, F-score and
// PSNR, plus the shared normalization protocol.
//
// Meshes are compared after mapping both through the transform that centers
// the REFERENCE mesh's bounding box at the origin and scales its diagonal
// to 2.  Normalizing with one shared transform (rather than each mesh with
// its own) keeps scale errors visible: a reconstruction 10% too small
// should pay for it in Chamfer, not have it normalized away.  Synthetic
// ground truth shares the world frame, so no pose alignment happens.
//
// Chamfer here is the absolute (not squared) symmetric mean nearest-
// neighbor distance between area-weighted surface samples; the report
// records that choice.

#include "sv/image.hpp"
#include "sv/mesh.hpp"
#include "sv/rng.hpp"
#include "sv/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace sv {

// n points drawn uniformly by face area; deterministic in (mesh, seed).
MatXd sample_surface(const TriMesh& mesh, int n, std::uint64_t seed);

// Symmetric mean point-to-nearest-point distance between n-point samplings
// of each surface, grid-accelerated.  Each mesh's sample stream is seeded
// from its own content mixed with `seed`, which makes the result exactly
// symmetric in the arguments and exactly zero for identical meshes.
double chamfer(const TriMesh& a, const TriMesh& b, int n, std::uint64_t seed);

// Occupancy IoU of the two solids, voxelized at res^3 over their joint
// bounding box by parity ray casting along x.  Both meshes must be
// watertight.  An empty union (both solids below voxel resolution) reads
// as identical emptiness and reports 1.
double volume_iou(const TriMesh& a, const TriMesh& b, int res);

// F-score at threshold tau, in percent: precision is the fraction of
// a-samples within tau of b's samples, recall the mirror image, and
// F = 200 PR / (P + R) (0 when both vanish).  Sampling as in chamfer.
double fscore(const TriMesh& a, const TriMesh& b, double tau, int n,
              std::uint64_t seed);

// 10 log10(1 / MSE) on the [0, 1] scale; identical images report +infinity.
double psnr(const Image& a, const Image& b);

// Shared normalization derived from a reference mesh: translate the
// bounding-box center to the origin, scale the diagonal to 2.
struct NormalizeTransform {
  Eigen::RowVector3d center = Eigen::RowVector3d::Zero();
  double scale = 1.0;
};

NormalizeTransform normalization_for(const TriMesh& reference);
TriMesh normalized(const TriMesh& mesh, const NormalizeTransform& t);

struct EvalOptions {
  int samples = 10000;
  int voxel_res = 128;
  double fscore_tau = 0.05;
  std::uint64_t seed = 7;
};

struct EvalReport {
  double chamfer = 0.0;
  double volume_iou = 0.0;
  double fscore_percent = 0.0;
  std::optional<double> psnr_mean_db;  // filled by image evaluation, if run
  int samples = 0;
  int voxel_res = 0;
  double fscore_tau = 0.0;
  std::uint64_t seed = 0;
  std::string chamfer_kind = "absolute";

  std::string json_string() const;
};

// Chamfer, IoU and F-score of candidate against reference on the
// reference-normalized scale.
EvalReport evaluate_geometry(const TriMesh& candidate,
                             const TriMesh& reference,
                             const EvalOptions& opt = {});

}  // namespace sv
