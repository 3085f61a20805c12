#pragma once

// Supervision datasets on disk and in memory: the canonical six-view orbit,
// a sphere-traced ground-truth generator for the synthetic scenes, 8-bit PNG
// conversion, and OBJ / binary PLY mesh exchange.
//
// Dataset directory layout:
//   cameras.json           { "radius", "fov_deg", "width", "height",
//                            "views": [{ "azimuth_deg", "elevation_deg" }] }
//   view_{i}_rgb.png       8-bit RGB
//   view_{i}_normal.png    8-bit RGB, camera-space normals encoded (n+1)/2
//   view_{i}_mask.png      8-bit grayscale, 255 = foreground
//
// Generator conventions bit-match the renderer: white RGB background,
// (0.5, 0.5, 1) normal background, zero mask.

#include "sv/camera.hpp"
#include "sv/image.hpp"
#include "sv/mesh.hpp"
#include "sv/scene.hpp"

#include <filesystem>
#include <vector>

namespace sv {

struct View {
  CameraPose pose;
  Image rgb;
  Image normal;
  Image mask;
};

struct ViewSet {
  std::vector<View> views;

  // Enforces the dataset invariants (six views, 3/3/1 channels, one shared
  // resolution, distinct poses, samples in range); DataError names the
  // violated rule.
  void validate() const;
};

// The six-pose orbit: azimuths 30..330 in 60-degree steps, elevations
// alternating -10 / +20 degrees, radius 3.
std::vector<CameraPose> canonical_poses();

// Sphere-trace every pose against the scene at the given square resolution.
// Rays march with steps f / L (L the scene's Lipschitz bound) for at most
// 256 steps; pixels that never converge stay background.  Images come back
// unquantized; save_dataset performs the 8-bit rounding.  `headlight`
// multiplies albedo by the cosine toward the camera (off matches the flat
// supervision the reconstruction assumes).
ViewSet generate_views(const SyntheticScene& scene,
                       const std::vector<CameraPose>& poses, int resolution,
                       bool headlight = false);

void save_dataset(const std::filesystem::path& dir, const ViewSet& set);
ViewSet load_dataset(const std::filesystem::path& dir);

// ------------------------------------------------------------------- png

// Round to 8 bits per sample, the precision the PNG files carry.
Image quantize8(const Image& img);

// Grayscale for 1-channel images, RGB for 3-channel.  Reading accepts any
// 8/16-bit gray / palette / RGB(A) file and folds it to 1 or 3 channels in
// [0, 1].
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

// ------------------------------------------------------------------ mesh

enum class MeshFormat { kObj, kPly };

// OBJ writes "v x y z [r g b]" plus 1-based "f" lines; PLY is binary
// little-endian with uchar vertex colors.  import_mesh dispatches on the
// extension and reads back exactly these layouts.
void export_mesh(const TriMesh& mesh, const std::filesystem::path& path,
                 MeshFormat format);
TriMesh import_mesh(const std::filesystem::path& path);

// Ground-truth surface of a scene: unit-weight extraction over an N-cell
// lattice, with albedo colors and area-weighted unit normals at vertices.
TriMesh reference_mesh(const SyntheticScene& scene, int cells);

}  // namespace sv
