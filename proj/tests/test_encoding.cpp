#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sv/encoding.hpp"
#include "sv/rng.hpp"

#include <cmath>

using namespace sv;
using Mat = MatXd;
using Tape = TapeT<double>;
using Store = ParamStoreT<double>;

TEST_CASE("default resolution schedule") {
  EncodingConfig cfg;  // defaults: 16 -> 1024 over 12 levels
  cfg.validate();
  HashGridMeta m = make_hash_meta(cfg);
  // Geometric progression rounded per level; endpoints exact.  Expected
  // values worked out by hand from round(16 * 64^(l/11)).
  std::vector<int> expect{16, 23, 34, 50, 73, 106, 155, 226, 329, 481, 702,
                          1024};
  REQUIRE(m.level_res.size() == expect.size());
  for (std::size_t l = 0; l < expect.size(); ++l)
    CHECK(m.level_res[l] == expect[l]);
  // Dense storage exactly while (res+1)^3 fits in the table budget:
  // 74^3 = 405224 <= 2^19 but 107^3 exceeds it.
  for (std::size_t l = 0; l < expect.size(); ++l) {
    CHECK(m.level_dense[l] == (l <= 4));
    if (m.level_dense[l])
      CHECK(m.level_rows[l] ==
            static_cast<std::int64_t>(expect[l] + 1) * (expect[l] + 1) *
                (expect[l] + 1));
    else
      CHECK(m.level_rows[l] == (std::int64_t(1) << 19));
  }
}

TEST_CASE("config validation rejects bad values") {
  auto bad = [](auto&& fix) {
    EncodingConfig cfg;
    fix(cfg);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  };
  bad([](EncodingConfig& c) { c.fourier_octaves = 0; });
  bad([](EncodingConfig& c) { c.hash_levels = 0; });
  bad([](EncodingConfig& c) { c.finest_res = c.base_res - 1; });
  bad([](EncodingConfig& c) {
    c.hash_levels = 1;
    c.finest_res = 2 * c.base_res;
  });
  bad([](EncodingConfig& c) { c.channels = 0; });
  bad([](EncodingConfig& c) { c.table_size = 100; });  // not a power of two
  bad([](EncodingConfig& c) { c.alpha = -0.5; });
  // Fourier-only mode ignores hash parameters entirely.
  EncodingConfig ok;
  ok.mode = EncodingMode::kFourierOnly;
  ok.table_size = 100;
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("spatial hash matches hand-computed values") {
  const std::int64_t ts = std::int64_t(1) << 19;
  CHECK(HashGridMeta::spatial_hash(0, 0, 0, ts) == 0u);
  CHECK(HashGridMeta::spatial_hash(1, 0, 0, ts) == 1u);
  // 2654435761 mod 2^19 and 805459861 mod 2^19.
  CHECK(HashGridMeta::spatial_hash(0, 1, 0, ts) == 489905u);
  CHECK(HashGridMeta::spatial_hash(0, 0, 1, ts) == 153493u);
  // Full xor mix: 1 ^ 2654435761 ^ 805459861, masked.
  CHECK(HashGridMeta::spatial_hash(1, 1, 1, ts) == 339493u);
}

TEST_CASE("fourier features: layout, values, plain/op agreement") {
  Mat X(2, 3);
  X << 0.5, -0.25, 0.75, -1.0, 0.0, 1.0;
  int m = 3;
  Mat F = fourier_features_plain(X, m);
  REQUIRE(F.cols() == 18);
  // Octave 0: [sin(x) sin(y) sin(z) cos(x) cos(y) cos(z)], then doubled
  // frequencies.
  CHECK(F(0, 0) == doctest::Approx(std::sin(0.5)));
  CHECK(F(0, 1) == doctest::Approx(std::sin(-0.25)));
  CHECK(F(0, 3) == doctest::Approx(std::cos(0.5)));
  CHECK(F(0, 6) == doctest::Approx(std::sin(1.0)));   // sin(2x)
  CHECK(F(0, 9) == doctest::Approx(std::cos(1.0)));   // cos(2x)
  CHECK(F(1, 12) == doctest::Approx(std::sin(-4.0)));  // sin(4x), x=-1
  Tape tape;
  Var f = tape.fourier_encode(tape.constant(Mat(X)), m);
  CHECK((tape.val(f) - F).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fourier tangents match finite differences") {
  Mat X(3, 3);
  X << 0.3, -0.7, 0.1, -0.2, 0.9, -0.5, 0.0, 0.4, 0.8;
  int m = 4;
  Mat T = fourier_tangents_plain(X, m);
  double h = 1e-7;
  for (int d = 0; d < 3; ++d) {
    Mat Xp = X, Xm = X;
    Xp.col(d).array() += h;
    Xm.col(d).array() -= h;
    Mat fd = (fourier_features_plain(Xp, m) - fourier_features_plain(Xm, m)) /
             (2 * h);
    CHECK((T.middleRows(3 * d, 3) - fd).cwiseAbs().maxCoeff() < 1e-5);
  }
}

namespace {

EncodingConfig tiny_cfg() {
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

}  // namespace

TEST_CASE("hash table creation: shape, init range, determinism") {
  EncodingConfig cfg = tiny_cfg();
  Store s1, s2;
  Rng r1(42), r2(42);
  auto g1 = HashGridT<double>::create(s1, cfg, r1, "hash",
                                      ParamGroup::kGeometry);
  auto g2 = HashGridT<double>::create(s2, cfg, r2, "hash",
                                      ParamGroup::kGeometry);
  REQUIRE(g1.tables.size() == 2);
  CHECK(s1.value(g1.tables[0]).rows() == 27);  // dense 3^3
  CHECK(s1.value(g1.tables[1]).rows() == 64);  // 5^3 = 125 > 64, hashed
  for (BlockId id : g1.tables) {
    CHECK(s1.value(id).cwiseAbs().maxCoeff() <= 1e-4);
    CHECK(s1.value(id).cwiseAbs().maxCoeff() > 0.0);
  }
  CHECK((s1.value(g1.tables[0]).array() == s2.value(g2.tables[0]).array())
            .all());
}

TEST_CASE("features at lattice vertices hit single table rows") {
  // At an exact grid vertex all trilinear weight collapses onto one corner,
  // so the feature equals that row of the table.
  EncodingConfig cfg = tiny_cfg();
  cfg.mode = EncodingMode::kHashOnly;
  Store store;
  Rng rng(7);
  auto grid = HashGridT<double>::create(store, cfg, rng, "hash",
                                        ParamGroup::kGeometry);
  // Unit-cube point (1/2, 0, 1) is the vertex (1, 0, 2) of the res-2 level.
  Mat u(1, 3);
  u << 0.5, 0.0, 1.0;
  Tape tape;
  Var f = tape.hash_features(tape.constant(Mat(u)), grid.meta,
                             grid.table_vars(tape, store));
  const Mat& tab0 = store.value(grid.tables[0]);
  Eigen::Index row = (2 * 3 + 0) * 3 + 1;  // dense (z*n + y)*n + x, n = 3
  CHECK(tape.val(f)(0, 0) == doctest::Approx(tab0(row, 0)));
  CHECK(tape.val(f)(0, 1) == doctest::Approx(tab0(row, 1)));
}

TEST_CASE("trilinear weights form a partition of unity") {
  EncodingConfig cfg = tiny_cfg();
  cfg.mode = EncodingMode::kHashOnly;
  Store store;
  Rng rng(9);
  auto grid = HashGridT<double>::create(store, cfg, rng, "hash",
                                        ParamGroup::kGeometry);
  // Constant tables: features must equal the constant regardless of x.
  store.value(grid.tables[0]).col(0).setConstant(0.25);
  store.value(grid.tables[0]).col(1).setConstant(-0.5);
  store.value(grid.tables[1]).col(0).setConstant(0.25);
  store.value(grid.tables[1]).col(1).setConstant(-0.5);
  Rng prng(31);
  Mat u(20, 3);
  for (Eigen::Index i = 0; i < u.size(); ++i)
    u.data()[i] = prng.uniform(0.0, 1.0);
  Tape tape;
  Var f = tape.hash_features(tape.constant(Mat(u)), grid.meta,
                             grid.table_vars(tape, store));
  for (Eigen::Index i = 0; i < 20; ++i) {
    CHECK(tape.val(f)(i, 0) == doctest::Approx(0.25));
    CHECK(tape.val(f)(i, 1) == doctest::Approx(-0.5));
    CHECK(tape.val(f)(i, 2) == doctest::Approx(0.25));
    CHECK(tape.val(f)(i, 3) == doctest::Approx(-0.5));
  }
}

TEST_CASE("hybrid layout concatenates fourier then scaled hash") {
  EncodingConfig cfg = tiny_cfg();
  Store store;
  Rng rng(5);
  auto grid = HashGridT<double>::create(store, cfg, rng, "hash",
                                        ParamGroup::kGeometry);
  // Make hash features visible against the alpha scale.
  for (BlockId id : grid.tables) store.value(id).setRandom();

  Mat X(4, 3);
  X << 0.1, -0.4, 0.7, -0.9, 0.2, 0.0, 0.5, 0.5, -0.5, -0.1, -0.2, -0.3;
  Mat full = encode_values(store, cfg, &grid, X);
  REQUIRE(full.cols() == cfg.feature_dim());

  Mat four = fourier_features_plain(X, cfg.fourier_octaves);
  CHECK((full.leftCols(four.cols()) - four).cwiseAbs().maxCoeff() == 0.0);

  EncodingConfig hcfg = cfg;
  hcfg.mode = EncodingMode::kHashOnly;
  Mat hash = encode_values(store, hcfg, &grid, X);
  CHECK((full.rightCols(hash.cols()) - cfg.alpha * hash)
            .cwiseAbs()
            .maxCoeff() < 1e-15);

  EncodingConfig fcfg = cfg;
  fcfg.mode = EncodingMode::kFourierOnly;
  const HashGridT<double>* no_grid = nullptr;
  CHECK(encode_values(store, fcfg, no_grid, X).cols() == 12);
}

TEST_CASE("lattice encoding with tangents matches the pointwise builders") {
  EncodingConfig cfg = tiny_cfg();
  Store store;
  Rng rng(13);
  auto grid = HashGridT<double>::create(store, cfg, rng, "hash",
                                        ParamGroup::kGeometry);
  for (BlockId id : grid.tables) store.value(id).setRandom();

  Mat X(3, 3);
  X << 0.13, -0.42, 0.61, -0.77, 0.08, 0.29, 0.55, -0.21, -0.68;
  Mat x_unit = ((X.array() + 1.0) * 0.5).matrix();
  Mat four = fourier_features_plain(X, cfg.fourier_octaves);
  Mat four_tan = fourier_tangents_plain(X, cfg.fourier_octaves);

  Tape tape;
  EncodingWithTangents e = build_encoding_with_tangents(
      tape, store, cfg, &grid, x_unit, four, four_tan);
  CHECK((tape.val(e.features) - encode_values(store, cfg, &grid, X))
            .cwiseAbs()
            .maxCoeff() < 1e-14);

  // Tangents against finite differences of the full encoding in world x.
  double h = 1e-6;
  for (int d = 0; d < 3; ++d) {
    Mat Xp = X, Xm = X;
    Xp.col(d).array() += h;
    Xm.col(d).array() -= h;
    Mat fd = (encode_values(store, cfg, &grid, Xp) -
              encode_values(store, cfg, &grid, Xm)) /
             (2 * h);
    Mat an = tape.val(e.tangents).middleRows(3 * d, 3);
    CHECK((an - fd).cwiseAbs().maxCoeff() < 1e-6);
  }
}
