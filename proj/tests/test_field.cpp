#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sv/field.hpp"
#include "sv/grad_check.hpp"

#include <cmath>

using namespace sv;
using Mat = MatXd;
using Tape = TapeT<double>;
using Store = ParamStoreT<double>;

namespace {

EncodingConfig tiny_enc() {
  EncodingConfig cfg;
  cfg.fourier_octaves = 2;
  cfg.hash_levels = 2;
  cfg.base_res = 2;
  cfg.finest_res = 4;
  cfg.channels = 2;
  cfg.table_size = 64;
  cfg.alpha = 0.1;
  return cfg;
}

FieldConfig tiny_field() {
  FieldConfig cfg;
  cfg.hidden = 8;
  return cfg;
}

// Points picked away from trilinear cell faces of both levels so central
// differences in x stay on one smooth piece.
Mat probe_points() {
  Mat X(4, 3);
  X << 0.11, -0.23, 0.37, -0.41, 0.29, -0.13, 0.33, 0.17, -0.29, -0.07, -0.37,
      0.23;
  return X;
}

}  // namespace

TEST_CASE("field starts as the exact sphere prior") {
  Store store;
  Rng rng(1);
  auto field =
      FieldT<double>::create(store, tiny_enc(), tiny_field(), rng);

  Mat X(3, 3);
  X << 0.0, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0, -0.3, 0.4;
  Mat s = field.sdf_values(store, X);
  CHECK(s(0, 0) == doctest::Approx(-0.5));         // origin: -r0
  CHECK(s(1, 0) == doctest::Approx(0.2));          // |x| - 0.5
  CHECK(s(2, 0) == doctest::Approx(0.0).epsilon(1e-12));

  // Zero last layer also means the analytic gradient is the bare prior.
  Mat g = field.sdf_gradient_values(store, X.bottomRows(2));
  CHECK(g(0, 0) == doctest::Approx(1.0));
  CHECK(g(0, 1) == doctest::Approx(0.0));
  CHECK(g(1, 0) == doctest::Approx(0.0));
  CHECK(g(1, 1) == doctest::Approx(-0.6));
  CHECK(g(1, 2) == doctest::Approx(0.8));

  // Color head initializes to mid grey everywhere.
  Mat c = field.color_values(store, X);
  CHECK((c.array() - 0.5).abs().maxCoeff() == 0.0);
}

TEST_CASE("analytic sdf gradient matches finite differences") {
  Store store;
  Rng rng(2);
  auto field =
      FieldT<double>::create(store, tiny_enc(), tiny_field(), rng);
  // Wake the network up so the MLP path contributes.
  Rng wr(3);
  for (int b = 0; b < store.size(); ++b) {
    Mat& v = store.value(store.id_at(b));
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v.data()[i] += wr.uniform(-0.05, 0.05);
  }

  Mat X = probe_points();
  Mat g = field.sdf_gradient_values(store, X);
  double h = 1e-6;
  for (int d = 0; d < 3; ++d) {
    Mat Xp = X, Xm = X;
    Xp.col(d).array() += h;
    Xm.col(d).array() -= h;
    Mat fd = (field.sdf_values(store, Xp) - field.sdf_values(store, Xm)) /
             (2 * h);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      double rel = std::abs(g(i, d) - fd(i, 0)) /
                   std::max({std::abs(g(i, d)), std::abs(fd(i, 0)), 1e-9});
      CHECK(rel < 1e-6);
    }
  }
}

TEST_CASE("sdf+gradient pipeline backpropagates into every block") {
  Store store;
  Rng rng(4);
  EncodingConfig enc = tiny_enc();
  FieldConfig fc = tiny_field();
  auto field = FieldT<double>::create(store, enc, fc, rng);
  Rng wr(5);
  for (int b = 0; b < store.size(); ++b) {
    Mat& v = store.value(store.id_at(b));
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v.data()[i] += wr.uniform(-0.05, 0.05);
  }

  Mat X = probe_points();
  Mat x_unit = ((X.array() + 1.0) * 0.5).matrix();
  Mat four = fourier_features_plain(X, enc.fourier_octaves);
  Mat four_tan = fourier_tangents_plain(X, enc.fourier_octaves);

  // Step and floor sized to the FD noise of this loss (|L| ~ 0.3): entries
  // below 1e-5 are verified absolutely, the rest relatively.
  GradCheckReport rep = check_gradients(
      store, 1e-5, [&](Tape& tape, Store& st) -> Var {
        EncodingWithTangents e = build_encoding_with_tangents(
            tape, st, enc, field.grid_for_geometry(), x_unit, four, four_tan);
        Var prior_s = tape.constant(prior_values(X, fc.prior_radius));
        Var prior_g = tape.constant(prior_gradients(X));
        SdfWithGrad sg = build_sdf_with_grad(tape, st, field.sdf, e.features,
                                             e.tangents, prior_s, prior_g);
        // Touch the color head too so its blocks are exercised.
        Var cfeat = build_encoding(tape, st, enc, field.grid_for_color(),
                                   tape.constant(Mat(X)));
        Var col = build_color(tape, st, field.color, cfeat);
        return tape.add(
            tape.add(tape.mean_all(tape.square(sg.sdf)),
                     tape.mean_all(tape.square(sg.gradient))),
            tape.mean_all(tape.square(col)));
      },
      /*denom_floor=*/1e-5);
  CHECK(rep.max_rel_err() < 1e-6);
  CHECK(rep.max_abs_err() < 1e-9);
}

TEST_CASE("field creation is deterministic for a fixed seed") {
  Store s1, s2;
  Rng r1(77), r2(77);
  auto f1 = FieldT<double>::create(s1, tiny_enc(), tiny_field(), r1);
  auto f2 = FieldT<double>::create(s2, tiny_enc(), tiny_field(), r2);
  (void)f1;
  (void)f2;
  REQUIRE(s1.size() == s2.size());
  for (int b = 0; b < s1.size(); ++b) {
    CHECK(s1.name(s1.id_at(b)) == s2.name(s2.id_at(b)));
    CHECK((s1.value(s1.id_at(b)).array() == s2.value(s2.id_at(b)).array())
              .all());
  }
}

TEST_CASE("separate color grid adds texture-group tables") {
  Store store;
  Rng rng(8);
  FieldConfig fc = tiny_field();
  fc.separate_color_grid = true;
  auto field = FieldT<double>::create(store, tiny_enc(), fc, rng);
  REQUIRE(field.color_grid.has_value());
  CHECK(store.group(field.color_grid->tables[0]) == ParamGroup::kTexture);
  CHECK(store.group(field.geo_grid->tables[0]) == ParamGroup::kGeometry);
  CHECK(field.grid_for_color() == &*field.color_grid);

  // Default: color reuses the geometry grid.
  Store store2;
  Rng rng2(8);
  auto f2 = FieldT<double>::create(store2, tiny_enc(), tiny_field(), rng2);
  CHECK(f2.grid_for_color() == f2.grid_for_geometry());
}

TEST_CASE("field config validation") {
  FieldConfig bad = tiny_field();
  bad.hidden = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_field();
  bad.prior_radius = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
