#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sv/extraction.hpp"
#include "sv/grid.hpp"
#include "sv/metrics.hpp"
#include "sv/scene.hpp"

#include "json.hpp"

#include <cmath>
#include <limits>

using namespace sv;
using Vec = Eigen::RowVector3d;

namespace {

TriMesh cube(const Vec& lo, double side) {
  TriMesh m;
  m.vertices.resize(8, 3);
  for (int i = 0; i < 8; ++i)
    m.vertices.row(i) =
        lo + side * Vec(i & 1 ? 1 : 0, i & 2 ? 1 : 0, i & 4 ? 1 : 0);
  m.faces.resize(12, 3);
  m.faces << 0, 2, 1, 1, 2, 3,  // z = lo
      4, 5, 6, 5, 7, 6,         // z = hi
      0, 1, 4, 1, 5, 4,         // y = lo
      2, 6, 3, 3, 6, 7,         // y = hi
      0, 4, 2, 2, 4, 6,         // x = lo
      1, 3, 5, 3, 7, 5;         // x = hi
  return m;
}

// Sphere of the given radius extracted on a lattice, then rescaled so the
// final radius can exceed the [-1, 1] extraction domain.
TriMesh sphere_mesh(double radius, int cells) {
  double base = 0.5;
  SdfNode shape = sdf_sphere(Vec::Zero(), base);
  GridTopology grid(cells);
  MatXd corners = grid.corner_positions<double>();
  MatXd values(corners.rows(), 1);
  for (Eigen::Index i = 0; i < corners.rows(); ++i)
    values(i, 0) = shape.value(corners.row(i));
  TriMesh m = extract_mesh(grid, values);
  m.vertices *= radius / base;
  return m;
}

TriMesh translated(const TriMesh& m, const Vec& t) {
  TriMesh out = m;
  out.vertices.rowwise() += t;
  return out;
}

}  // namespace

TEST_CASE("surface sampling is area-weighted and deterministic") {
  TriMesh box = cube(Vec(0, 0, 0), 1.0);
  MatXd pts = sample_surface(box, 6000, 11);
  REQUIRE(pts.rows() == 6000);

  // Every sample lies on the cube surface: some coordinate is 0 or 1 and
  // the rest are inside [0, 1].
  int per_face[6] = {0, 0, 0, 0, 0, 0};
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    CHECK(pts.row(i).minCoeff() >= -1e-12);
    CHECK(pts.row(i).maxCoeff() <= 1.0 + 1e-12);
    double border = 1e300;
    int face = -1;
    for (int c = 0; c < 3; ++c) {
      if (std::abs(pts(i, c)) < border) {
        border = std::abs(pts(i, c));
        face = 2 * c;
      }
      if (std::abs(pts(i, c) - 1.0) < border) {
        border = std::abs(pts(i, c) - 1.0);
        face = 2 * c + 1;
      }
    }
    CHECK(border < 1e-12);
    ++per_face[face];
  }
  // Equal-area faces draw equal sample shares (4-sigma multinomial band).
  for (int f = 0; f < 6; ++f)
    CHECK(std::abs(per_face[f] / 6000.0 - 1.0 / 6.0) < 0.02);

  MatXd again = sample_surface(box, 6000, 11);
  CHECK((again - pts).cwiseAbs().maxCoeff() == 0.0);
  MatXd other = sample_surface(box, 6000, 12);
  CHECK((other - pts).cwiseAbs().maxCoeff() > 0.0);

  CHECK_THROWS_AS(sample_surface(box, 0, 1), ConfigError);
  CHECK_THROWS_AS(sample_surface(TriMesh{}, 10, 1), DataError);

  TriMesh flat;  // three identical vertices: zero area
  flat.vertices = MatXd::Zero(3, 3);
  flat.faces.resize(1, 3);
  flat.faces << 0, 1, 2;
  CHECK_THROWS_AS(sample_surface(flat, 10, 1), DataError);
}

TEST_CASE("chamfer matches concentric-sphere geometry") {
  TriMesh unit = sphere_mesh(1.0, 40);
  TriMesh bigger = sphere_mesh(1.1, 40);

  CHECK(chamfer(unit, unit, 4000, 5) == 0.0);

  double d = chamfer(unit, bigger, 10000, 5);
  CHECK(d == doctest::Approx(0.1).epsilon(0.01));

  // Exact symmetry, by construction.
  CHECK(chamfer(unit, bigger, 3000, 9) == chamfer(bigger, unit, 3000, 9));

  // Translation bounds the distance.
  TriMesh shifted = translated(unit, Vec(0.07, 0, 0));
  CHECK(chamfer(unit, shifted, 4000, 5) <= 0.07 + 1e-12);
  CHECK(chamfer(unit, shifted, 4000, 5) > 0.0);

  // Rigid motion of both meshes moves the value only by sampling noise.
  double theta = 0.7;
  Eigen::Matrix3d rot;
  rot << std::cos(theta), -std::sin(theta), 0, std::sin(theta),
      std::cos(theta), 0, 0, 0, 1;
  TriMesh ru = unit, rb = bigger;
  ru.vertices = (rot * unit.vertices.transpose()).transpose();
  rb.vertices = (rot * bigger.vertices.transpose()).transpose();
  ru.vertices.rowwise() += Vec(0.3, -0.2, 0.5);
  rb.vertices.rowwise() += Vec(0.3, -0.2, 0.5);
  CHECK(chamfer(ru, rb, 10000, 5) == doctest::Approx(d).epsilon(0.005));

  CHECK_THROWS_AS(chamfer(unit, TriMesh{}, 100, 1), DataError);
}

TEST_CASE("volume iou counts voxel parity overlap") {
  TriMesh a = cube(Vec(0, 0, 0), 1.0);
  CHECK(volume_iou(a, a, 64) == 1.0);

  TriMesh far_away = cube(Vec(5, 5, 5), 1.0);
  CHECK(volume_iou(a, far_away, 32) == 0.0);

  // Half-overlapping unit cubes: intersection 1/2, union 3/2.
  TriMesh half = cube(Vec(0.5, 0, 0), 1.0);
  CHECK(volume_iou(a, half, 64) == doctest::Approx(1.0 / 3.0).epsilon(0.02));

  TriMesh unit = sphere_mesh(1.0, 40);
  TriMesh bigger = sphere_mesh(1.1, 40);
  // 0.0115 * (1 + 0.751) ~ 0.02 absolute.
  double iou = volume_iou(unit, bigger, 128);
  CHECK(iou == doctest::Approx(std::pow(1.0 / 1.1, 3)).epsilon(0.0115));

  // Open surfaces are rejected by the watertight preflight.
  TriMesh open_box = cube(Vec(0, 0, 0), 1.0);
  open_box.faces.conservativeResize(10, 3);
  CHECK_THROWS_AS(volume_iou(open_box, a, 32), DataError);
  CHECK_THROWS_AS(volume_iou(a, open_box, 32), DataError);
  CHECK_THROWS_AS(volume_iou(a, a, 4), ConfigError);
}

TEST_CASE("fscore rewards only samples within the threshold") {
  TriMesh unit = sphere_mesh(1.0, 40);
  TriMesh bigger = sphere_mesh(1.1, 40);

  CHECK(fscore(unit, unit, 0.05, 4000, 3) == 100.0);

  // Concentric shells 0.1 apart: no sample pair comes within 0.05.
  CHECK(fscore(unit, bigger, 0.05, 10000, 3) == 0.0);

  // ...but widening the threshold past the gap accepts everything.
  CHECK(fscore(unit, bigger, 0.2, 4000, 3) > 99.0);

  CHECK(fscore(unit, bigger, 0.05, 3000, 7) ==
        fscore(bigger, unit, 0.05, 3000, 7));

  // Extra junk geometry on one side costs precision or recall, not both.
  TriMesh junked = unit;
  TriMesh junk = cube(Vec(3, 3, 3), 0.2);
  Eigen::Index nv = junked.num_vertices();
  junked.vertices.conservativeResize(nv + 8, 3);
  junked.vertices.bottomRows(8) = junk.vertices;
  Eigen::Index nf = junked.num_faces();
  junked.faces.conservativeResize(nf + 12, 3);
  junked.faces.bottomRows(12) = (junk.faces.array() + static_cast<int>(nv)).matrix();
  double f = fscore(junked, unit, 0.05, 6000, 3);
  CHECK(f > 50.0);
  CHECK(f < 100.0);

  CHECK_THROWS_AS(fscore(unit, bigger, 0.0, 100, 1), ConfigError);
}

TEST_CASE("psnr follows the log-mse formula") {
  Image a(8, 8, 3);
  Image b(8, 8, 3);
  b.data.setConstant(0.1);  // MSE 0.01
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));

  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a) > 0.0);

  Image ones(8, 8, 3);
  ones.data.setConstant(1.0);
  CHECK(psnr(a, ones) == doctest::Approx(0.0).epsilon(1e-12));

  Image small(4, 8, 3);
  CHECK_THROWS_AS(psnr(a, small), DataError);
  Image gray(8, 8, 1);
  CHECK_THROWS_AS(psnr(a, gray), DataError);
}

TEST_CASE("evaluation normalizes on the reference scale and reports json") {
  TriMesh ref = sphere_mesh(0.6, 32);

  NormalizeTransform t = normalization_for(ref);
  TriMesh n = normalized(ref, t);
  Eigen::RowVector3d lo = n.vertices.colwise().minCoeff();
  Eigen::RowVector3d hi = n.vertices.colwise().maxCoeff();
  CHECK((hi - lo).norm() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK((0.5 * (lo + hi)).norm() < 1e-12);

  EvalReport self = evaluate_geometry(ref, ref);
  CHECK(self.chamfer == 0.0);
  CHECK(self.volume_iou == 1.0);
  CHECK(self.fscore_percent == 100.0);
  CHECK(self.fscore_tau == 0.05);
  CHECK(self.samples == 10000);

  // A candidate at 3x scale keeps its scale error after the shared
  // transform; per-mesh normalization would have hidden it.
  TriMesh inflated = ref;
  inflated.vertices *= 3.0;
  EvalReport off = evaluate_geometry(inflated, ref);
  CHECK(off.chamfer > 0.5);
  CHECK(off.volume_iou < 0.25);

  // Nearby lattice resolutions agree closely but not exactly.
  EvalReport close = evaluate_geometry(sphere_mesh(0.6, 28), ref);
  CHECK(close.chamfer > 0.0);
  CHECK(close.chamfer < 0.02);
  CHECK(close.volume_iou > 0.95);
  CHECK(close.volume_iou <= 1.0);
  CHECK(close.fscore_percent == 100.0);

  nlohmann::json j = nlohmann::json::parse(self.json_string());
  CHECK(j["chamfer"].get<double>() == 0.0);
  CHECK(j["volume_iou"].get<double>() == 1.0);
  CHECK(j["chamfer_kind"].get<std::string>() == "absolute");
  CHECK(j["seed"].get<std::uint64_t>() == 7);
  CHECK(!j.contains("psnr_mean_db"));

  EvalReport withpsnr = self;
  withpsnr.psnr_mean_db = 31.5;
  nlohmann::json j2 = nlohmann::json::parse(withpsnr.json_string());
  CHECK(j2["psnr_mean_db"].get<double>() == 31.5);

  TriMesh point;
  point.vertices = MatXd::Zero(3, 3);
  point.faces.resize(1, 3);
  point.faces << 0, 1, 2;
  CHECK_THROWS_AS(normalization_for(point), DataError);
  CHECK_THROWS_AS(normalization_for(TriMesh{}), DataError);
}
