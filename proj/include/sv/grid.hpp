#pragma once

// The fixed sampling lattice for isosurface extraction: N^3 cells spanning
// [-1, 1]^3, with (N+1)^3 corners.  Corner and cell ids are linearized
// x-fastest, which fixes the canonical ordering used for deterministic
// extraction and parameter layout.

#include "sv/param_store.hpp"
#include "sv/rng.hpp"
#include "sv/tensor.hpp"

#include <cmath>

namespace sv {

struct GridTopology {
  int n = 0;  // cells per axis

  explicit GridTopology(int cells_per_axis) : n(cells_per_axis) {
    if (n < 2) throw ConfigError("grid: need at least 2 cells per axis");
  }

  Eigen::Index num_corners() const {
    Eigen::Index k = n + 1;
    return k * k * k;
  }
  Eigen::Index num_cells() const {
    Eigen::Index k = n;
    return k * k * k;
  }
  double spacing() const { return 2.0 / n; }

  Eigen::Index corner_id(int ix, int iy, int iz) const {
    Eigen::Index k = n + 1;
    return (static_cast<Eigen::Index>(iz) * k + iy) * k + ix;
  }
  Eigen::Index cell_id(int ix, int iy, int iz) const {
    Eigen::Index k = n;
    return (static_cast<Eigen::Index>(iz) * k + iy) * k + ix;
  }

  double coord(int i) const { return -1.0 + 2.0 * i / n; }

  template <class T>
  MatX<T> corner_positions() const {
    MatX<T> X(num_corners(), 3);
    Eigen::Index row = 0;
    for (int iz = 0; iz <= n; ++iz)
      for (int iy = 0; iy <= n; ++iy)
        for (int ix = 0; ix <= n; ++ix) {
          X(row, 0) = static_cast<T>(coord(ix));
          X(row, 1) = static_cast<T>(coord(iy));
          X(row, 2) = static_cast<T>(coord(iz));
          ++row;
        }
    return X;
  }
};

// Trainable extraction weights: interpolation weights for the 8 corners and
// centroid weights for the 12 edges of every cell.  Stored pre-softplus and
// initialized to softplus^-1(1) so extraction starts at plain linear
// interpolation with uniform centroids.  The shared variant keeps a single
// row applied to all cells.
template <class T>
struct CellWeightsT {
  BlockId alpha;  // (cells x 8) or (1 x 8)
  BlockId beta;   // (cells x 12) or (1 x 12)
  bool per_cell = true;

  static CellWeightsT create(ParamStoreT<T>& store, Eigen::Index num_cells,
                             bool per_cell) {
    CellWeightsT w;
    w.per_cell = per_cell;
    Eigen::Index rows = per_cell ? num_cells : 1;
    w.alpha = store.add("cells.alpha", rows, 8, ParamGroup::kGeometry);
    w.beta = store.add("cells.beta", rows, 12, ParamGroup::kGeometry);
    const T raw_one = static_cast<T>(std::log(std::expm1(1.0)));
    store.value(w.alpha).setConstant(raw_one);
    store.value(w.beta).setConstant(raw_one);
    return w;
  }

  Eigen::Index weight_row(Eigen::Index cell) const {
    return per_cell ? cell : 0;
  }
};

}  // namespace sv
