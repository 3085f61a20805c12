// Gradient and behavior checks for the array tape.
//
// Every differentiable primitive is verified against central differences at
// several random parameter draws.  The generic harness wraps the op output o
// in loss = sum(C .* o) with a fixed random C, so each output entry gets an
// independent adjoint and indexing mistakes cannot cancel out.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sv/grad_check.hpp"
#include "sv/param_store.hpp"
#include "sv/rng.hpp"
#include "sv/tape.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace sv;
using Mat = MatXd;
using Tape = TapeT<double>;
using Store = ParamStoreT<double>;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double lo,
               double hi) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

struct BlockSpec {
  Eigen::Index rows, cols;
  double lo = -1.0, hi = 1.0;
  // Optional entry fixup (nudging away from kinks etc.).
  std::function<double(double)> post;
};

// Runs check_gradients over `draws` random draws of the given blocks and
// returns the worst relative error seen.  `build` receives the parameter
// leaf vars in block order and returns the op output (any shape).
double op_check(const std::vector<BlockSpec>& specs,
                const std::function<Var(Tape&, std::vector<Var>&)>& build,
                int draws = 10, double step = 1e-6) {
  double worst_rel = 0.0, worst_abs = 0.0;
  for (int d = 0; d < draws; ++d) {
    Rng rng(1000 + 77 * static_cast<std::uint64_t>(d));
    Store store;
    for (std::size_t b = 0; b < specs.size(); ++b) {
      const BlockSpec& s = specs[b];
      BlockId id = store.add("b" + std::to_string(b), s.rows, s.cols,
                             ParamGroup::kGeometry);
      Mat m = random_mat(rng, s.rows, s.cols, s.lo, s.hi);
      if (s.post)
        for (Eigen::Index i = 0; i < m.size(); ++i)
          m.data()[i] = s.post(m.data()[i]);
      store.value(id) = m;
    }
    // Fixed random adjoint mix, drawn after the parameters.
    GradCheckReport rep = check_gradients(
        store, step, [&](Tape& tape, Store& st) -> Var {
          std::vector<Var> ps;
          for (int b = 0; b < st.size(); ++b)
            ps.push_back(tape.param(st, st.id_at(b)));
          Var out = build(tape, ps);
          Rng crng(5000 + 13 * static_cast<std::uint64_t>(d));
          Mat C = random_mat(crng, tape.val(out).rows(), tape.val(out).cols(),
                             -1.0, 1.0);
          return tape.sum_all(tape.mul(out, tape.constant(std::move(C))));
        });
    worst_rel = std::max(worst_rel, rep.max_rel_err());
    worst_abs = std::max(worst_abs, rep.max_abs_err());
  }
  CHECK(worst_abs < 1e-8);
  return worst_rel;
}

double nudge_from(double x, double kink, double pad) {
  if (std::abs(x - kink) < pad) return kink + (x >= kink ? pad : -pad);
  return x;
}

}  // namespace

TEST_CASE("elementwise binary ops") {
  auto two = [](Eigen::Index r, Eigen::Index c, double lo, double hi) {
    return std::vector<BlockSpec>{{r, c, lo, hi, nullptr},
                                  {r, c, lo, hi, nullptr}};
  };
  CHECK(op_check(two(4, 5, -1, 1), [](Tape& t, std::vector<Var>& p) {
          return t.add(p[0], p[1]);
        }) < 1e-6);
  CHECK(op_check(two(4, 5, -1, 1), [](Tape& t, std::vector<Var>& p) {
          return t.sub(p[0], p[1]);
        }) < 1e-6);
  CHECK(op_check(two(4, 5, -1, 1), [](Tape& t, std::vector<Var>& p) {
          return t.mul(p[0], p[1]);
        }) < 1e-6);
  // Denominators bounded away from zero.
  std::vector<BlockSpec> dv{{4, 5, -1, 1, nullptr}, {4, 5, 0.6, 1.8, nullptr}};
  CHECK(op_check(dv, [](Tape& t, std::vector<Var>& p) {
          return t.div(p[0], p[1]);
        }) < 1e-6);
}

TEST_CASE("scalar scale and offset") {
  std::vector<BlockSpec> one{{3, 4, -1, 1, nullptr}};
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.scale(p[0], -1.7);
        }) < 1e-6);
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.offset(p[0], 0.9);
        }) < 1e-6);
}

TEST_CASE("broadcast ops") {
  std::vector<BlockSpec> rv{{5, 3, -1, 1, nullptr}, {1, 3, -1, 1, nullptr}};
  CHECK(op_check(rv, [](Tape& t, std::vector<Var>& p) {
          return t.add_rowvec(p[0], p[1]);
        }) < 1e-6);
  std::vector<BlockSpec> cv{{5, 3, -1, 1, nullptr}, {5, 1, -1, 1, nullptr}};
  CHECK(op_check(cv, [](Tape& t, std::vector<Var>& p) {
          return t.mul_colvec(p[0], p[1]);
        }) < 1e-6);
  std::vector<BlockSpec> dv{{5, 3, -1, 1, nullptr}, {5, 1, 0.5, 1.5, nullptr}};
  CHECK(op_check(dv, [](Tape& t, std::vector<Var>& p) {
          return t.div_colvec(p[0], p[1]);
        }) < 1e-6);
}

TEST_CASE("matmul") {
  std::vector<BlockSpec> mm{{4, 6, -1, 1, nullptr}, {6, 3, -1, 1, nullptr}};
  CHECK(op_check(mm, [](Tape& t, std::vector<Var>& p) {
          return t.matmul(p[0], p[1]);
        }) < 1e-6);
}

TEST_CASE("shape ops") {
  std::vector<BlockSpec> two{{4, 3, -1, 1, nullptr}, {4, 2, -1, 1, nullptr}};
  CHECK(op_check(two, [](Tape& t, std::vector<Var>& p) {
          return t.concat_cols({p[0], p[1]});
        }) < 1e-6);
  std::vector<BlockSpec> tr{{4, 3, -1, 1, nullptr}, {2, 3, -1, 1, nullptr}};
  CHECK(op_check(tr, [](Tape& t, std::vector<Var>& p) {
          return t.concat_rows({p[0], p[1]});
        }) < 1e-6);
  std::vector<BlockSpec> one{{6, 4, -1, 1, nullptr}};
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.slice_rows(p[0], 1, 3);
        }) < 1e-6);
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.slice_cols(p[0], 2, 2);
        }) < 1e-6);
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.reshape(p[0], 3, 8);
        }) < 1e-6);
}

TEST_CASE("gather and scatter") {
  auto idx = Tape::make_indices({2, 0, 5, 2, 2, 4});
  std::vector<BlockSpec> one{{6, 3, -1, 1, nullptr}};
  CHECK(op_check(one, [&](Tape& t, std::vector<Var>& p) {
          return t.gather_rows(p[0], idx);
        }) < 1e-6);

  auto sidx = Tape::make_indices({1, 4, 1, 0});  // duplicates accumulate
  std::vector<BlockSpec> src{{4, 3, -1, 1, nullptr}};
  CHECK(op_check(src, [&](Tape& t, std::vector<Var>& p) {
          return t.scatter_add_rows(p[0], sidx, 6);
        }) < 1e-6);

  auto uidx = Tape::make_indices({5, 0, 3});  // unique rows
  std::vector<BlockSpec> both{{6, 2, -1, 1, nullptr}, {3, 2, -1, 1, nullptr}};
  CHECK(op_check(both, [&](Tape& t, std::vector<Var>& p) {
          return t.scatter_rows(p[0], uidx, p[1]);
        }) < 1e-6);
}

TEST_CASE("reductions") {
  std::vector<BlockSpec> one{{5, 4, -1, 1, nullptr}};
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.sum_rows(p[0]);
        }) < 1e-6);
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.sum_all(p[0]);
        }) < 1e-6);
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.mean_all(p[0]);
        }) < 1e-6);
}

TEST_CASE("rowwise geometry ops") {
  std::vector<BlockSpec> two{{5, 3, -1, 1, nullptr}, {5, 3, -1, 1, nullptr}};
  CHECK(op_check(two, [](Tape& t, std::vector<Var>& p) {
          return t.dot_rows(p[0], p[1]);
        }) < 1e-6);
  CHECK(op_check(two, [](Tape& t, std::vector<Var>& p) {
          return t.cross_rows(p[0], p[1]);
        }) < 1e-6);
  // Rows bounded away from zero norm for the smooth branch.
  std::vector<BlockSpec> nz{{5, 3, 0.4, 1.2, nullptr}};
  CHECK(op_check(nz, [](Tape& t, std::vector<Var>& p) {
          return t.normalize_rows(p[0]);
        }) < 1e-6);
}

TEST_CASE("unary nonlinearities") {
  std::vector<BlockSpec> one{{4, 5, -2, 2, nullptr}};
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.sin(p[0]);
        }) < 1e-6);
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.cos(p[0]);
        }) < 1e-6);
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.square(p[0]);
        }) < 1e-6);
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.softplus(p[0]);
        }) < 1e-6);
  CHECK(op_check(one, [](Tape& t, std::vector<Var>& p) {
          return t.sigmoid(p[0]);
        }) < 1e-6);

  std::vector<BlockSpec> pos{{4, 5, 0.3, 2.0, nullptr}};
  CHECK(op_check(pos, [](Tape& t, std::vector<Var>& p) {
          return t.sqrt(p[0]);
        }) < 1e-6);

  std::vector<BlockSpec> away0{
      {4, 5, -1, 1, [](double x) { return nudge_from(x, 0.0, 1e-3); }}};
  CHECK(op_check(away0, [](Tape& t, std::vector<Var>& p) {
          return t.abs(p[0]);
        }) < 1e-6);

  std::vector<BlockSpec> cl{{4, 5, 0, 1, [](double x) {
                               return nudge_from(nudge_from(x, 0.25, 1e-3),
                                                 0.75, 1e-3);
                             }}};
  CHECK(op_check(cl, [](Tape& t, std::vector<Var>& p) {
          return t.clamp(p[0], 0.25, 0.75);
        }) < 1e-6);
}

TEST_CASE("fourier encoding gradient in the points") {
  std::vector<BlockSpec> pts{{6, 3, -1, 1, nullptr}};
  CHECK(op_check(pts, [](Tape& t, std::vector<Var>& p) {
          return t.fourier_encode(p[0], 4);
        }) < 1e-6);
}

namespace {

HashGridMeta small_meta() {
  HashGridMeta m;
  m.levels = 2;
  m.channels = 2;
  m.table_size = 32;
  m.level_res = {2, 3};
  // (2+1)^3 = 27 <= 32 dense; (3+1)^3 = 64 > 32 hashed.
  m.level_dense = {true, false};
  m.level_rows = {27, 32};
  return m;
}

}  // namespace

TEST_CASE("hash features gradient in tables and points") {
  HashGridMeta meta = small_meta();
  // blocks: table0, table1, points (strict interior, away from cell faces
  // where trilinear weights kink).
  auto interior = [meta](double x) {
    double u = 0.06 + 0.88 * (x + 1.0) / 2.0;  // into (0.06, 0.94)
    for (int r : meta.level_res) {
      double f = u * r - std::floor(u * r);
      if (f < 0.02) u += 0.03 / r;
      if (f > 0.98) u -= 0.03 / r;
    }
    return u;
  };
  std::vector<BlockSpec> specs{
      {27, 2, -1, 1, nullptr},
      {32, 2, -1, 1, nullptr},
      {5, 3, -1, 1, interior},
  };
  CHECK(op_check(specs, [&](Tape& t, std::vector<Var>& p) {
          return t.hash_features(p[2], meta, {p[0], p[1]});
        }) < 1e-6);
}

TEST_CASE("fused hash features+tangents gradient in tables") {
  HashGridMeta meta = small_meta();
  Mat X(4, 3);
  X << 0.11, 0.52, 0.83, 0.47, 0.21, 0.13, 0.61, 0.74, 0.41, 0.33, 0.91, 0.57;
  std::vector<BlockSpec> specs{{27, 2, -1, 1, nullptr},
                               {32, 2, -1, 1, nullptr}};
  CHECK(op_check(specs, [&](Tape& t, std::vector<Var>& p) {
          Var x = t.constant(Mat(X));
          return t.hash_features_with_tangents(x, meta, {p[0], p[1]});
        }) < 1e-6);
}

TEST_CASE("fused tangents equal finite differences of features") {
  HashGridMeta meta = small_meta();
  Rng rng(99);
  Mat t0 = random_mat(rng, 27, 2, -1, 1), t1 = random_mat(rng, 32, 2, -1, 1);
  Mat X(3, 3);
  X << 0.31, 0.42, 0.55, 0.63, 0.27, 0.71, 0.44, 0.58, 0.36;

  Tape tape;
  Var v0 = tape.constant(Mat(t0)), v1 = tape.constant(Mat(t1));
  Var x = tape.constant(Mat(X));
  Var bundle = tape.hash_features_with_tangents(x, meta, {v0, v1});
  const Mat& B = tape.val(bundle);

  double h = 1e-6;
  for (int dir = 0; dir < 3; ++dir) {
    Mat Xp = X, Xm = X;
    Xp.col(dir).array() += h;
    Xm.col(dir).array() -= h;
    Tape t2;
    Var a0 = t2.constant(Mat(t0)), a1 = t2.constant(Mat(t1));
    Var fp = t2.hash_features(t2.constant(std::move(Xp)), meta, {a0, a1});
    Var fm = t2.hash_features(t2.constant(std::move(Xm)), meta, {a0, a1});
    Mat fd = (t2.val(fp) - t2.val(fm)) / (2 * h);
    Mat an = B.middleRows(3 * (dir + 1), 3);
    CHECK((an - fd).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("subgradient conventions at kinks") {
  Store store;
  BlockId id = store.add("x", 1, 4, ParamGroup::kGeometry);
  store.value(id) << -1.0, 0.0, 0.25, 0.75;

  Tape tape;
  Var x = tape.param(store, id);
  Var y = tape.sum_all(tape.abs(x));
  tape.backward(y);
  CHECK(store.grad(id)(0, 0) == -1.0);
  CHECK(store.grad(id)(0, 1) == 0.0);  // abs'(0) = 0

  store.zero_grads();
  Tape t2;
  Var x2 = t2.param(store, id);
  Var c = t2.sum_all(t2.clamp(x2, 0.25, 0.75));
  t2.backward(c);
  CHECK(store.grad(id)(0, 0) == 0.0);  // below the interval
  CHECK(store.grad(id)(0, 2) == 0.0);  // exactly at the lower corner
  CHECK(store.grad(id)(0, 3) == 0.0);  // exactly at the upper corner
}

TEST_CASE("normalize of a near-zero row is zero with zero gradient") {
  Store store;
  BlockId id = store.add("v", 2, 3, ParamGroup::kGeometry);
  store.value(id) << 1e-15, -1e-15, 1e-16, 3.0, 0.0, 4.0;

  Tape tape;
  Var v = tape.param(store, id);
  Var n = tape.normalize_rows(v);
  CHECK(tape.val(n).row(0).norm() == 0.0);
  CHECK(tape.val(n)(1, 0) == doctest::Approx(0.6));
  Var loss = tape.sum_all(n);
  tape.backward(loss);
  CHECK(store.grad(id).row(0).norm() == 0.0);
  CHECK(store.grad(id).row(1).norm() > 0.0);
}

TEST_CASE("sqrt at zero keeps a bounded (zero) slope") {
  Store store;
  BlockId id = store.add("x", 1, 2, ParamGroup::kGeometry);
  store.value(id) << 0.0, 4.0;
  Tape tape;
  Var x = tape.param(store, id);
  Var y = tape.sum_all(tape.sqrt(x));
  tape.backward(y);
  CHECK(store.grad(id)(0, 0) == 0.0);
  CHECK(store.grad(id)(0, 1) == doctest::Approx(0.25));
}

TEST_CASE("backward is deterministic and linear in the loss") {
  Rng rng(7);
  Store store;
  BlockId a = store.add("a", 4, 4, ParamGroup::kGeometry);
  BlockId b = store.add("b", 4, 4, ParamGroup::kGeometry);
  store.value(a) = random_mat(rng, 4, 4, -1, 1);
  store.value(b) = random_mat(rng, 4, 4, 0.5, 1.5);

  auto run = [&](double scale_factor) {
    store.zero_grads();
    Tape tape;
    Var va = tape.param(store, a), vb = tape.param(store, b);
    Var out = tape.mean_all(
        tape.mul(tape.softplus(tape.matmul(va, vb)), tape.sin(va)));
    tape.backward(tape.scale(out, scale_factor));
    return std::make_pair(Mat(store.grad(a)), Mat(store.grad(b)));
  };

  auto [ga1, gb1] = run(1.0);
  auto [ga2, gb2] = run(1.0);
  // Bitwise identical on repeat.
  CHECK((ga1.array() == ga2.array()).all());
  CHECK((gb1.array() == gb2.array()).all());

  auto [ga4, gb4] = run(4.0);
  CHECK((ga4 - 4.0 * ga1).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((gb4 - 4.0 * gb1).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("a parameter used twice accumulates both contributions") {
  Store store;
  BlockId id = store.add("x", 1, 1, ParamGroup::kGeometry);
  store.value(id)(0, 0) = 3.0;
  Tape tape;
  Var x = tape.param(store, id);
  // y = x^2 + 5x, via two separate uses of the same leaf
  Var y = tape.add(tape.mul(x, x), tape.scale(x, 5.0));
  tape.backward(y);
  CHECK(store.grad(id)(0, 0) == doctest::Approx(11.0));
}

TEST_CASE("constant-only graphs have no gradient flow") {
  Tape tape;
  Var c = tape.constant_scalar(2.0);
  Var y = tape.mean_all(tape.square(c));
  CHECK(!tape.needs(y));
  tape.backward(y);  // no-op, must not throw
}

TEST_CASE("non-finite forward values are reported with the offending op") {
  Store store;
  BlockId id = store.add("x", 1, 1, ParamGroup::kGeometry);
  store.value(id)(0, 0) = 1.0;
  Tape tape;
  Var x = tape.param(store, id);
  Var z = tape.div(x, tape.constant_scalar(0.0));
  Var loss = tape.sum_all(z);
  CHECK_THROWS_WITH_AS(tape.backward(loss),
                       doctest::Contains("div"), NumericError);
}

TEST_CASE("backward requires a scalar loss") {
  Store store;
  BlockId id = store.add("x", 2, 2, ParamGroup::kGeometry);
  store.value(id).setOnes();
  Tape tape;
  Var x = tape.param(store, id);
  CHECK_THROWS_AS(tape.backward(x), ConfigError);
}

TEST_CASE("check_gradients on a sum of squares") {
  Rng rng(11);
  Store store;
  BlockId id = store.add("w", 3, 3, ParamGroup::kGeometry);
  store.value(id) = random_mat(rng, 3, 3, -1, 1);
  GradCheckReport rep =
      check_gradients(store, 1e-5, [&](Tape& tape, Store& st) {
        Var w = tape.param(st, st.id_at(0));
        return tape.sum_all(tape.square(w));
      });
  CHECK(rep.max_rel_err() < 1e-8);
}

TEST_CASE("check_gradients rejects a zero step") {
  Store store;
  BlockId id = store.add("w", 1, 1, ParamGroup::kGeometry);
  store.value(id)(0, 0) = 1.0;
  CHECK_THROWS_AS(check_gradients(store, 0.0,
                                  [&](Tape& tape, Store& st) {
                                    return tape.sum_all(
                                        tape.param(st, st.id_at(0)));
                                  }),
                  ConfigError);
}

TEST_CASE("scatter_rows leaves unwritten rows tied to the base") {
  Store store;
  BlockId base = store.add("base", 4, 2, ParamGroup::kGeometry);
  BlockId src = store.add("src", 2, 2, ParamGroup::kGeometry);
  store.value(base).setConstant(1.0);
  store.value(src).setConstant(2.0);
  Tape tape;
  auto idx = Tape::make_indices({1, 3});
  Var out = tape.scatter_rows(tape.param(store, base), idx,
                              tape.param(store, src));
  tape.backward(tape.sum_all(out));
  // Overwritten rows: base gets no gradient; others: gradient 1.
  CHECK(store.grad(base).row(0).sum() == doctest::Approx(2.0));
  CHECK(store.grad(base).row(1).sum() == doctest::Approx(0.0));
  CHECK(store.grad(base).row(2).sum() == doctest::Approx(2.0));
  CHECK(store.grad(base).row(3).sum() == doctest::Approx(0.0));
  CHECK(store.grad(src).sum() == doctest::Approx(4.0));
}

TEST_CASE("hash features are identical across repeated evaluation") {
  HashGridMeta meta = small_meta();
  Rng rng(3);
  Mat t0 = random_mat(rng, 27, 2, -1, 1), t1 = random_mat(rng, 32, 2, -1, 1);
  Mat X = random_mat(rng, 10, 3, 0.0, 1.0);
  Mat first;
  for (int rep = 0; rep < 2; ++rep) {
    Tape tape;
    Var f = tape.hash_features(tape.constant(Mat(X)), meta,
                               {tape.constant(Mat(t0)), tape.constant(Mat(t1))});
    if (rep == 0)
      first = tape.val(f);
    else
      CHECK((first.array() == tape.val(f).array()).all());
  }
}

TEST_CASE("points outside the unit cube clamp with zero point-gradient") {
  HashGridMeta meta = small_meta();
  Rng rng(5);
  Mat t0 = random_mat(rng, 27, 2, -1, 1), t1 = random_mat(rng, 32, 2, -1, 1);

  Store store;
  BlockId pid = store.add("pts", 2, 3, ParamGroup::kGeometry);
  store.value(pid) << 1.4, 0.5, 0.5, -0.2, 0.5, 0.5;

  Tape tape;
  Var x = tape.param(store, pid);
  Var f = tape.hash_features(x, meta,
                             {tape.constant(Mat(t0)), tape.constant(Mat(t1))});
  tape.backward(tape.sum_all(f));
  // The clamped coordinate is saturated: no gradient along x there.
  CHECK(store.grad(pid)(0, 0) == 0.0);
  CHECK(store.grad(pid)(1, 0) == 0.0);

  // Value equals evaluation at the clamped position.
  Tape t2;
  Mat Xc(2, 3);
  Xc << 1.0, 0.5, 0.5, 0.0, 0.5, 0.5;
  Var fc = t2.hash_features(t2.constant(std::move(Xc)), meta,
                            {t2.constant(Mat(t0)), t2.constant(Mat(t1))});
  CHECK((tape.val(f) - t2.val(fc)).cwiseAbs().maxCoeff() == 0.0);
}
