#pragma once

// Hybrid positional encoding: low-octave Fourier features of the raw
// coordinates concatenated with multi-resolution hash-grid features, the
// latter scaled by a blend factor alpha.  The Fourier half changes smoothly
// everywhere and anchors coarse shape; the hash half carries high-frequency
// detail that the SDF network could not otherwise represent with a small
// MLP.
//
// Domains: Fourier features take world coordinates in [-1, 1]; the hash
// grid addresses the unit cube, so world points are mapped through
// u = (x + 1) / 2 first (and clamped by the fused ops if outside).

#include "sv/errors.hpp"
#include "sv/param_store.hpp"
#include "sv/rng.hpp"
#include "sv/tape.hpp"
#include "sv/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace sv {

enum class EncodingMode { kHybrid, kFourierOnly, kHashOnly };

struct EncodingConfig {
  int fourier_octaves = 6;
  int hash_levels = 12;
  int base_res = 16;
  int finest_res = 1024;
  int channels = 2;
  std::int64_t table_size = std::int64_t(1) << 19;
  double alpha = 0.1;
  EncodingMode mode = EncodingMode::kHybrid;

  void validate() const;
  int fourier_dim() const { return 6 * fourier_octaves; }
  int hash_dim() const { return hash_levels * channels; }
  int feature_dim() const {
    switch (mode) {
      case EncodingMode::kFourierOnly:
        return fourier_dim();
      case EncodingMode::kHashOnly:
        return hash_dim();
      case EncodingMode::kHybrid:
        return fourier_dim() + hash_dim();
    }
    return 0;
  }
  bool uses_fourier() const { return mode != EncodingMode::kHashOnly; }
  bool uses_hash() const { return mode != EncodingMode::kFourierOnly; }
};

// Per-level resolutions follow a geometric progression from base_res to
// finest_res inclusive; levels small enough to index densely get exactly
// (res+1)^3 rows, the rest share table_size rows through the spatial hash.
HashGridMeta make_hash_meta(const EncodingConfig& cfg);

template <class T>
struct HashGridT {
  HashGridMeta meta;
  std::vector<BlockId> tables;

  std::vector<Var> table_vars(TapeT<T>& tape, ParamStoreT<T>& store) const {
    std::vector<Var> vs;
    vs.reserve(tables.size());
    for (BlockId id : tables) vs.push_back(tape.param(store, id));
    return vs;
  }

  static HashGridT create(ParamStoreT<T>& store, const EncodingConfig& cfg,
                          Rng& rng, const std::string& name_prefix,
                          ParamGroup group) {
    HashGridT g;
    g.meta = make_hash_meta(cfg);
    for (int l = 0; l < g.meta.levels; ++l) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s.level%02d", name_prefix.c_str(),
                    l);
      BlockId id = store.add(name, g.meta.level_rows[l], cfg.channels, group);
      MatX<T>& v = store.value(id);
      for (Eigen::Index i = 0; i < v.size(); ++i)
        v.data()[i] = static_cast<T>(rng.uniform(-1e-4, 1e-4));
      g.tables.push_back(id);
    }
    return g;
  }
};

// ------------------------------------------------------------------ plain
// Non-tape feature evaluation, used to precompute constants of the fixed
// training lattice and verified against the tape ops in tests.

template <class T>
MatX<T> fourier_features_plain(const MatX<T>& X, int octaves) {
  MatX<T> out(X.rows(), 6 * octaves);
  for (int f = 0; f < octaves; ++f) {
    T k = static_cast<T>(std::ldexp(1.0, f));
    out.middleCols(6 * f, 3) = (X.array() * k).sin();
    out.middleCols(6 * f + 3, 3) = (X.array() * k).cos();
  }
  return out;
}

// d(features)/d(world x), stacked as three P-row blocks (directions x,y,z).
// Each coordinate only feeds its own sin/cos columns.
template <class T>
MatX<T> fourier_tangents_plain(const MatX<T>& X, int octaves) {
  const Eigen::Index P = X.rows();
  MatX<T> out = MatX<T>::Zero(3 * P, 6 * octaves);
  for (int f = 0; f < octaves; ++f) {
    T k = static_cast<T>(std::ldexp(1.0, f));
    for (int d = 0; d < 3; ++d) {
      out.block(d * P, 6 * f + d, P, 1) =
          k * (X.col(d).array() * k).cos().matrix();
      out.block(d * P, 6 * f + 3 + d, P, 1) =
          -k * (X.col(d).array() * k).sin().matrix();
    }
  }
  return out;
}

// --------------------------------------------------------------- builders

// World point to hash-domain map, differentiable.
template <class T>
Var build_unit_cube_map(TapeT<T>& tape, Var x_world) {
  return tape.offset(tape.scale(x_world, 0.5), 0.5);
}

// Full encoding of (possibly differentiable) world points.  `grid` may be
// null only in fourier-only mode.
template <class T>
Var build_encoding(TapeT<T>& tape, ParamStoreT<T>& store,
                   const EncodingConfig& cfg, const HashGridT<T>* grid,
                   Var x_world) {
  Var fourier, hash;
  if (cfg.uses_fourier())
    fourier = tape.fourier_encode(x_world, cfg.fourier_octaves);
  if (cfg.uses_hash()) {
    if (!grid) throw ConfigError("encoding: hash grid required by mode");
    Var u = build_unit_cube_map(tape, x_world);
    hash = tape.hash_features(u, grid->meta, grid->table_vars(tape, store));
  }
  switch (cfg.mode) {
    case EncodingMode::kFourierOnly:
      return fourier;
    case EncodingMode::kHashOnly:
      return hash;
    case EncodingMode::kHybrid:
      return tape.concat_cols({fourier, tape.scale(hash, cfg.alpha)});
  }
  throw ConfigError("encoding: invalid mode");
}

struct EncodingWithTangents {
  Var features;  // (P x D)
  Var tangents;  // (3P x D), world-scale directional derivatives
};

// Encoding of a fixed lattice together with analytic tangents, from
// precomputed Fourier constants.  The hash tangents come from the fused op
// in unit-cube scale and pick up the 1/2 world-to-unit chain factor here.
template <class T>
EncodingWithTangents build_encoding_with_tangents(
    TapeT<T>& tape, ParamStoreT<T>& store, const EncodingConfig& cfg,
    const HashGridT<T>* grid, const MatX<T>& x_unit_const,
    const MatX<T>& fourier_const, const MatX<T>& fourier_tan_const) {
  const Eigen::Index P = x_unit_const.rows();
  Var f, ft, h, htan;
  if (cfg.uses_fourier()) {
    f = tape.constant_view(fourier_const);
    ft = tape.constant_view(fourier_tan_const);
  }
  if (cfg.uses_hash()) {
    if (!grid) throw ConfigError("encoding: hash grid required by mode");
    Var u = tape.constant_view(x_unit_const);
    Var bundle = tape.hash_features_with_tangents(
        u, grid->meta, grid->table_vars(tape, store));
    h = tape.slice_rows(bundle, 0, P);
    htan = tape.scale(tape.slice_rows(bundle, P, 3 * P), 0.5);
  }
  switch (cfg.mode) {
    case EncodingMode::kFourierOnly:
      return {f, ft};
    case EncodingMode::kHashOnly:
      return {h, htan};
    case EncodingMode::kHybrid:
      return {tape.concat_cols({f, tape.scale(h, cfg.alpha)}),
              tape.concat_cols({ft, tape.scale(htan, cfg.alpha)})};
  }
  throw ConfigError("encoding: invalid mode");
}

// Value-level encoding of world points (test and tooling convenience).
template <class T>
MatX<T> encode_values(ParamStoreT<T>& store, const EncodingConfig& cfg,
                      const HashGridT<T>* grid, const MatX<T>& x_world) {
  TapeT<T> tape;
  Var x = tape.constant(MatX<T>(x_world));
  Var e = build_encoding(tape, store, cfg, grid, x);
  return tape.val(e);
}

}  // namespace sv
