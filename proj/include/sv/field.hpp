#pragma once

// The implicit scene representation: a small MLP over the hybrid encoding
// predicting a signed distance, plus a one-layer color head.
//
// The SDF is f(x) = MLP(encode(x)) + (|x| - r0): the additive sphere prior
// makes the zero level set start as a centered sphere of radius r0 with
// unit-norm gradient, so extraction produces a sensible mesh from the very
// first iteration.  The final MLP layer is zero-initialized, which makes the
// prior exact at iteration 0.
//
// Gradients of f with respect to position (needed by the eikonal term) are
// built analytically: encoding tangents propagate forward through the MLP
// as 3P-row stacks, dH = (dZ W) .* sigmoid(Z) for softplus layers.  Because
// the whole tangent pipeline is made of tape ops, the eikonal loss
// backpropagates exactly into every parameter.

#include "sv/encoding.hpp"
#include "sv/errors.hpp"
#include "sv/param_store.hpp"
#include "sv/rng.hpp"
#include "sv/tape.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace sv {

struct FieldConfig {
  int hidden = 64;
  double prior_radius = 0.5;
  bool separate_color_grid = false;  // color head reuses the geometry grid

  void validate() const {
    if (hidden < 1 || hidden > 4096)
      throw ConfigError("field: hidden width out of range");
    if (!(prior_radius > 0.0) || prior_radius >= 1.0)
      throw ConfigError("field: prior_radius must lie in (0, 1)");
  }
};

namespace detail {

template <class T>
void xavier_init(MatX<T>& w, Rng& rng) {
  double s = std::sqrt(6.0 / (static_cast<double>(w.rows()) + w.cols()));
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w.data()[i] = static_cast<T>(rng.uniform(-s, s));
}

}  // namespace detail

template <class T>
struct SdfNetworkT {
  BlockId w1, b1, w2, b2, w3, b3;
  int in_dim = 0, hidden = 0;

  static SdfNetworkT create(ParamStoreT<T>& store, int in_dim, int hidden,
                            Rng& rng) {
    SdfNetworkT n;
    n.in_dim = in_dim;
    n.hidden = hidden;
    n.w1 = store.add("sdf.w1", in_dim, hidden, ParamGroup::kGeometry);
    n.b1 = store.add("sdf.b1", 1, hidden, ParamGroup::kGeometry);
    n.w2 = store.add("sdf.w2", hidden, hidden, ParamGroup::kGeometry);
    n.b2 = store.add("sdf.b2", 1, hidden, ParamGroup::kGeometry);
    n.w3 = store.add("sdf.w3", hidden, 1, ParamGroup::kGeometry);
    n.b3 = store.add("sdf.b3", 1, 1, ParamGroup::kGeometry);
    detail::xavier_init(store.value(n.w1), rng);
    detail::xavier_init(store.value(n.w2), rng);
    // w3/b3 stay zero: the field starts as the bare sphere prior.
    return n;
  }
};

template <class T>
struct ColorNetworkT {
  BlockId w, b;

  static ColorNetworkT create(ParamStoreT<T>& store, int in_dim) {
    ColorNetworkT n;
    n.w = store.add("color.w", in_dim, 3, ParamGroup::kTexture);
    n.b = store.add("color.b", 1, 3, ParamGroup::kTexture);
    // Zero weights put every output at sigmoid(0) = mid grey.
    return n;
  }
};

// ---------------------------------------------------------------- priors

template <class T>
MatX<T> prior_values(const MatX<T>& x_world, double r0) {
  MatX<T> s(x_world.rows(), 1);
  s.col(0) = x_world.rowwise().norm().array() - static_cast<T>(r0);
  return s;
}

// Gradient x/|x| of the prior, zero at the (measure-zero) origin.
template <class T>
MatX<T> prior_gradients(const MatX<T>& x_world) {
  MatX<T> g(x_world.rows(), 3);
  for (Eigen::Index i = 0; i < x_world.rows(); ++i) {
    T n = x_world.row(i).norm();
    if (n < static_cast<T>(1e-12))
      g.row(i).setZero();
    else
      g.row(i) = x_world.row(i) / n;
  }
  return g;
}

// --------------------------------------------------------------- builders

// SDF head on top of precomputed features; prior_s is the constant
// (|x| - r0) column for the same points.
template <class T>
Var build_sdf(TapeT<T>& tape, ParamStoreT<T>& store, const SdfNetworkT<T>& net,
              Var features, Var prior_s) {
  Var z1 = tape.add_rowvec(tape.matmul(features, tape.param(store, net.w1)),
                           tape.param(store, net.b1));
  Var h1 = tape.softplus(z1);
  Var z2 = tape.add_rowvec(tape.matmul(h1, tape.param(store, net.w2)),
                           tape.param(store, net.b2));
  Var h2 = tape.softplus(z2);
  Var out = tape.add_rowvec(tape.matmul(h2, tape.param(store, net.w3)),
                            tape.param(store, net.b3));
  return tape.add(out, prior_s);
}

struct SdfWithGrad {
  Var sdf;       // (P x 1)
  Var gradient;  // (P x 3), d(sdf)/d(world position)
};

// SDF and its analytic spatial gradient at P fixed points.  `tangents` is
// the (3P x D) world-scale encoding tangent stack; prior_g the constant
// prior gradient rows.
template <class T>
SdfWithGrad build_sdf_with_grad(TapeT<T>& tape, ParamStoreT<T>& store,
                                const SdfNetworkT<T>& net, Var features,
                                Var tangents, Var prior_s, Var prior_g) {
  const Eigen::Index P = tape.val(features).rows();
  if (tape.val(tangents).rows() != 3 * P)
    throw ConfigError("field: tangent stack must have 3P rows");

  // Index map replicating per-point rows across the three tangent blocks.
  std::vector<std::int32_t> tile;
  tile.reserve(static_cast<std::size_t>(3 * P));
  for (int d = 0; d < 3; ++d)
    for (Eigen::Index i = 0; i < P; ++i)
      tile.push_back(static_cast<std::int32_t>(i));
  auto tile3 = TapeT<T>::make_indices(std::move(tile));

  Var W1 = tape.param(store, net.w1);
  Var W2 = tape.param(store, net.w2);
  Var W3 = tape.param(store, net.w3);

  Var z1 = tape.add_rowvec(tape.matmul(features, W1),
                           tape.param(store, net.b1));
  Var s1 = tape.sigmoid(z1);
  Var h1 = tape.softplus(z1);
  Var t1 = tape.mul(tape.matmul(tangents, W1), tape.gather_rows(s1, tile3));

  Var z2 = tape.add_rowvec(tape.matmul(h1, W2), tape.param(store, net.b2));
  Var s2 = tape.sigmoid(z2);
  Var h2 = tape.softplus(z2);
  Var t2 = tape.mul(tape.matmul(t1, W2), tape.gather_rows(s2, tile3));

  Var out = tape.add_rowvec(tape.matmul(h2, W3), tape.param(store, net.b3));
  Var t3 = tape.matmul(t2, W3);  // (3P x 1)

  SdfWithGrad r;
  r.sdf = tape.add(out, prior_s);
  Var gx = tape.slice_rows(t3, 0, P);
  Var gy = tape.slice_rows(t3, P, P);
  Var gz = tape.slice_rows(t3, 2 * P, P);
  r.gradient = tape.add(tape.concat_cols({gx, gy, gz}), prior_g);
  return r;
}

template <class T>
Var build_color(TapeT<T>& tape, ParamStoreT<T>& store,
                const ColorNetworkT<T>& net, Var features) {
  return tape.sigmoid(tape.add_rowvec(
      tape.matmul(features, tape.param(store, net.w)),
      tape.param(store, net.b)));
}

// ----------------------------------------------------------------- field

// Everything that defines the scene representation, owning handles into one
// parameter store.
template <class T>
struct FieldT {
  EncodingConfig enc;
  FieldConfig cfg;
  std::optional<HashGridT<T>> geo_grid;    // absent in fourier-only mode
  std::optional<HashGridT<T>> color_grid;  // present when separate
  SdfNetworkT<T> sdf;
  ColorNetworkT<T> color;

  static FieldT create(ParamStoreT<T>& store, const EncodingConfig& enc,
                       const FieldConfig& cfg, Rng& rng) {
    enc.validate();
    cfg.validate();
    FieldT f;
    f.enc = enc;
    f.cfg = cfg;
    if (enc.uses_hash())
      f.geo_grid = HashGridT<T>::create(store, enc, rng, "hash",
                                        ParamGroup::kGeometry);
    f.sdf = SdfNetworkT<T>::create(store, enc.feature_dim(), cfg.hidden, rng);
    if (cfg.separate_color_grid && enc.uses_hash())
      f.color_grid = HashGridT<T>::create(store, enc, rng, "colorhash",
                                          ParamGroup::kTexture);
    f.color = ColorNetworkT<T>::create(store, enc.feature_dim());
    return f;
  }

  const HashGridT<T>* grid_for_geometry() const {
    return geo_grid ? &*geo_grid : nullptr;
  }
  const HashGridT<T>* grid_for_color() const {
    if (color_grid) return &*color_grid;
    return grid_for_geometry();
  }

  // Encoded features of differentiable world points, color variant.
  Var build_color_at(TapeT<T>& tape, ParamStoreT<T>& store, Var x_world) const {
    Var feat = build_encoding(tape, store, enc, grid_for_color(), x_world);
    return sv::build_color(tape, store, color, feat);
  }

  // ------------------------------------------------------------- values

  MatX<T> sdf_values(ParamStoreT<T>& store, const MatX<T>& x_world) const {
    TapeT<T> tape;
    Var x = tape.constant(MatX<T>(x_world));
    Var feat = build_encoding(tape, store, enc, grid_for_geometry(), x);
    Var prior = tape.constant(prior_values(x_world, cfg.prior_radius));
    Var s = build_sdf(tape, store, sdf, feat, prior);
    return tape.val(s);
  }

  MatX<T> sdf_gradient_values(ParamStoreT<T>& store,
                              const MatX<T>& x_world) const {
    TapeT<T> tape;
    MatX<T> x_unit = ((x_world.array() + T(1)) * T(0.5)).matrix();
    MatX<T> four, four_tan;
    if (enc.uses_fourier()) {
      four = fourier_features_plain(x_world, enc.fourier_octaves);
      four_tan = fourier_tangents_plain(x_world, enc.fourier_octaves);
    }
    EncodingWithTangents e = build_encoding_with_tangents(
        tape, store, enc, grid_for_geometry(), x_unit, four, four_tan);
    Var prior_s = tape.constant(prior_values(x_world, cfg.prior_radius));
    Var prior_g = tape.constant(prior_gradients(x_world));
    SdfWithGrad sg = build_sdf_with_grad(tape, store, sdf, e.features,
                                         e.tangents, prior_s, prior_g);
    return tape.val(sg.gradient);
  }

  MatX<T> color_values(ParamStoreT<T>& store, const MatX<T>& x_world) const {
    TapeT<T> tape;
    Var x = tape.constant(MatX<T>(x_world));
    Var c = build_color_at(tape, store, x);
    return tape.val(c);
  }
};

}  // namespace sv
