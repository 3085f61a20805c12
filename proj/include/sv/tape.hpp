#pragma once

// Reverse-mode automatic differentiation over dense arrays.
//
// The engine records a define-by-run graph where every node is a whole
// tensor (a point batch, a feature matrix, an image), not an individual
// scalar.  Forward values are computed eagerly as ops are recorded;
// backward() walks the nodes in reverse creation order, invoking one closure
// per node that routes the node's adjoint into the adjoints of its inputs.
// Parameter leaves accumulate directly into the gradient buffers of their
// ParamStoreT, so after backward() the store holds d(loss)/d(block) for
// every block that participated.
//
// Conventions at non-smooth points (these are relied on by the training
// objective and are covered by the gradient-check suite):
//   * abs'(0) = 0
//   * clamp' = 0 outside the open interval and at the clamp corners
//   * sqrt'(x) = 0 for x <= 1e-24 (guards eikonal terms at zero gradient)
//   * normalize_rows maps near-zero rows (norm < eps) to zero with zero
//     gradient, treating the degenerate row as locally constant.
//
// A tape lives for one forward/backward cycle.  Adjoint buffers are released
// eagerly as the reverse sweep moves past each node, which keeps the peak
// adjoint footprint proportional to the widest layer instead of the whole
// graph.

#include "sv/errors.hpp"
#include "sv/param_store.hpp"
#include "sv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace sv {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Upper bound on hash-grid feature channels; keeps the fused-op inner loops
// on the stack.
inline constexpr int kMaxHashChannels = 8;

namespace detail {

// Numerically stable softplus / sigmoid for Eigen array expressions.
template <class T>
T softplus_scalar(T x) {
  // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// Resolutions and addressing for one multi-resolution hash grid.  Kept here
// (rather than in the encoding header) because the fused hash-feature ops
// need it; the encoding module re-exports it.
struct HashGridMeta {
  int levels = 0;
  int channels = 0;
  std::int64_t table_size = 0;       // rows per hashed level, power of two
  std::vector<int> level_res;        // cells per axis, one entry per level
  std::vector<bool> level_dense;     // true when (res+1)^3 <= table_size
  std::vector<std::int64_t> level_rows;  // actual rows of each level's table

  static std::uint32_t spatial_hash(std::uint32_t x, std::uint32_t y,
                                    std::uint32_t z, std::int64_t table_size) {
    // Instant-NGP style coordinate hash; the first prime is 1 so the
    // x-coordinate enters unmixed.
    std::uint32_t h = x ^ (y * 2654435761u) ^ (z * 805459861u);
    return h & static_cast<std::uint32_t>(table_size - 1);
  }

  std::int64_t row_of(int level, int ix, int iy, int iz) const {
    int n = level_res[level] + 1;  // vertices per axis
    if (level_dense[level])
      return (static_cast<std::int64_t>(iz) * n + iy) * n + ix;
    return spatial_hash(static_cast<std::uint32_t>(ix),
                        static_cast<std::uint32_t>(iy),
                        static_cast<std::uint32_t>(iz), table_size);
  }
};

template <class T>
class TapeT {
 public:
  using Mat = MatX<T>;
  using Tensor = TensorT<T>;
  using Store = ParamStoreT<T>;

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  // ---------------------------------------------------------------- leaves

  Var constant(Mat m) {
    return push("constant", Tensor::owned(std::move(m)), false, nullptr);
  }

  // Constant that borrows externally owned storage (per-run caches).
  Var constant_view(const Mat& m) {
    return push("constant", Tensor::borrowed(m), false, nullptr);
  }

  Var constant_scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = static_cast<T>(v);
    return constant(std::move(m));
  }

  // Parameter leaf: borrows the block's value, accumulates straight into the
  // block's gradient buffer on backward.
  Var param(Store& store, BlockId id) {
    auto bw = [&store, id](TapeT& tape, const Mat& adj) {
      (void)tape;
      store.grad(id) += adj;
    };
    return push("param", Tensor::borrowed(store.value(id)), true, bw);
  }

  // ---------------------------------------------------------- element-wise

  Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Mat out = val(a) + val(b);
    auto bw = [a, b](TapeT& t, const Mat& adj) {
      if (t.needs(a)) t.accum(a, adj);
      if (t.needs(b)) t.accum(b, adj);
    };
    return push("add", own(std::move(out)), needs(a) || needs(b), bw);
  }

  Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Mat out = val(a) - val(b);
    auto bw = [a, b](TapeT& t, const Mat& adj) {
      if (t.needs(a)) t.accum(a, adj);
      if (t.needs(b)) t.accum(b, -adj);
    };
    return push("sub", own(std::move(out)), needs(a) || needs(b), bw);
  }

  Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Mat out = val(a).cwiseProduct(val(b));
    auto bw = [a, b](TapeT& t, const Mat& adj) {
      if (t.needs(a)) t.accum(a, adj.cwiseProduct(t.val(b)));
      if (t.needs(b)) t.accum(b, adj.cwiseProduct(t.val(a)));
    };
    return push("mul", own(std::move(out)), needs(a) || needs(b), bw);
  }

  Var div(Var a, Var b) {
    require_same_shape(a, b, "div");
    Mat out = val(a).cwiseQuotient(val(b));
    Var self{next_id()};
    auto bw = [a, b, self](TapeT& t, const Mat& adj) {
      if (t.needs(a)) t.accum(a, adj.cwiseQuotient(t.val(b)));
      if (t.needs(b))
        t.accum(b, -adj.cwiseProduct(t.val(self)).cwiseQuotient(t.val(b)));
    };
    return push("div", own(std::move(out)), needs(a) || needs(b), bw);
  }

  Var scale(Var a, double s) {
    Mat out = val(a) * static_cast<T>(s);
    auto bw = [a, s](TapeT& t, const Mat& adj) {
      t.accum(a, adj * static_cast<T>(s));
    };
    return push("scale", own(std::move(out)), needs(a), bw);
  }

  Var offset(Var a, double s) {
    Mat out = val(a).array() + static_cast<T>(s);
    auto bw = [a](TapeT& t, const Mat& adj) { t.accum(a, adj); };
    return push("offset", own(std::move(out)), needs(a), bw);
  }

  Var neg(Var a) { return scale(a, -1.0); }

  // ------------------------------------------------------------ broadcasts

  // (P x D) + (1 x D)
  Var add_rowvec(Var a, Var b) {
    if (val(b).rows() != 1 || val(a).cols() != val(b).cols())
      throw ConfigError("add_rowvec: shape mismatch");
    Mat out = val(a).rowwise() + val(b).row(0);
    auto bw = [a, b](TapeT& t, const Mat& adj) {
      if (t.needs(a)) t.accum(a, adj);
      if (t.needs(b)) t.accum(b, adj.colwise().sum());
    };
    return push("add_rowvec", own(std::move(out)), needs(a) || needs(b), bw);
  }

  // (P x D) * (P x 1), column broadcast
  Var mul_colvec(Var a, Var b) {
    require_colvec(a, b, "mul_colvec");
    Mat out = val(a).array().colwise() * val(b).col(0).array();
    auto bw = [a, b](TapeT& t, const Mat& adj) {
      if (t.needs(a))
        t.accum(a, adj.array().colwise() * t.val(b).col(0).array());
      if (t.needs(b))
        t.accum(b, adj.cwiseProduct(t.val(a)).rowwise().sum());
    };
    return push("mul_colvec", own(std::move(out)), needs(a) || needs(b), bw);
  }

  // (P x D) / (P x 1), column broadcast
  Var div_colvec(Var a, Var b) {
    require_colvec(a, b, "div_colvec");
    Mat out = val(a).array().colwise() / val(b).col(0).array();
    Var self{next_id()};
    auto bw = [a, b, self](TapeT& t, const Mat& adj) {
      if (t.needs(a))
        t.accum(a, adj.array().colwise() / t.val(b).col(0).array());
      if (t.needs(b)) {
        Mat num = adj.cwiseProduct(t.val(self)).rowwise().sum();
        t.accum(b, -(num.array().colwise() / t.val(b).col(0).array()));
      }
    };
    return push("div_colvec", own(std::move(out)), needs(a) || needs(b), bw);
  }

  // -------------------------------------------------------- linear algebra

  Var matmul(Var a, Var b) {
    if (val(a).cols() != val(b).rows())
      throw ConfigError("matmul: inner dimensions disagree");
    Mat out = val(a) * val(b);
    auto bw = [a, b](TapeT& t, const Mat& adj) {
      if (t.needs(a)) t.accum(a, adj * t.val(b).transpose());
      if (t.needs(b)) t.accum(b, t.val(a).transpose() * adj);
    };
    return push("matmul", own(std::move(out)), needs(a) || needs(b), bw);
  }

  // --------------------------------------------------------- shape surgery

  Var concat_cols(const std::vector<Var>& parts) {
    return concat(parts, /*along_rows=*/false);
  }

  Var concat_rows(const std::vector<Var>& parts) {
    return concat(parts, /*along_rows=*/true);
  }

  Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n) {
    if (r0 < 0 || r0 + n > val(a).rows())
      throw ConfigError("slice_rows: range out of bounds");
    Mat out = val(a).middleRows(r0, n);
    auto bw = [a, r0, n](TapeT& t, const Mat& adj) {
      if (!t.needs(a)) return;
      t.adj_ref(a).middleRows(r0, n) += adj;
    };
    return push("slice_rows", own(std::move(out)), needs(a), bw);
  }

  Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n) {
    if (c0 < 0 || c0 + n > val(a).cols())
      throw ConfigError("slice_cols: range out of bounds");
    Mat out = val(a).middleCols(c0, n);
    auto bw = [a, c0, n](TapeT& t, const Mat& adj) {
      if (!t.needs(a)) return;
      t.adj_ref(a).middleCols(c0, n) += adj;
    };
    return push("slice_cols", own(std::move(out)), needs(a), bw);
  }

  // Row-major reinterpretation: same scalars, new shape.
  Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
    const Mat& A = val(a);
    if (A.size() != rows * cols)
      throw ConfigError("reshape: element count mismatch");
    Mat out(rows, cols);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(out.data(), out.size()) =
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(A.data(),
                                                              A.size());
    auto bw = [a](TapeT& t, const Mat& adj) {
      if (!t.needs(a)) return;
      Mat& da = t.adj_ref(a);
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(da.data(), da.size()) +=
          Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(adj.data(),
                                                                adj.size());
    };
    return push("reshape", own(std::move(out)), needs(a), bw);
  }

  // ------------------------------------------------------- gather / scatter

  using IndexVec = std::shared_ptr<const std::vector<std::int32_t>>;

  static IndexVec make_indices(std::vector<std::int32_t> v) {
    return std::make_shared<const std::vector<std::int32_t>>(std::move(v));
  }

  Var gather_rows(Var a, IndexVec idx) {
    const Mat& A = val(a);
    Mat out(static_cast<Eigen::Index>(idx->size()), A.cols());
    for (std::size_t i = 0; i < idx->size(); ++i) {
      std::int32_t r = (*idx)[i];
      if (r < 0 || r >= A.rows())
        throw ConfigError("gather_rows: index out of range");
      out.row(static_cast<Eigen::Index>(i)) = A.row(r);
    }
    auto bw = [a, idx](TapeT& t, const Mat& adj) {
      if (!t.needs(a)) return;
      Mat& da = t.adj_ref(a);
      for (std::size_t i = 0; i < idx->size(); ++i)
        da.row((*idx)[i]) += adj.row(static_cast<Eigen::Index>(i));
    };
    return push("gather_rows", own(std::move(out)), needs(a), bw);
  }

  // Rows of `a` are added into a zero matrix of `out_rows` rows at positions
  // given by idx (duplicates accumulate, in index order).
  Var scatter_add_rows(Var a, IndexVec idx, Eigen::Index out_rows) {
    const Mat& A = val(a);
    if (static_cast<Eigen::Index>(idx->size()) != A.rows())
      throw ConfigError("scatter_add_rows: index count != rows");
    Mat out = Mat::Zero(out_rows, A.cols());
    for (std::size_t i = 0; i < idx->size(); ++i) {
      std::int32_t r = (*idx)[i];
      if (r < 0 || r >= out_rows)
        throw ConfigError("scatter_add_rows: index out of range");
      out.row(r) += A.row(static_cast<Eigen::Index>(i));
    }
    auto bw = [a, idx](TapeT& t, const Mat& adj) {
      if (!t.needs(a)) return;
      Mat& da = t.adj_ref(a);
      for (std::size_t i = 0; i < idx->size(); ++i)
        da.row(static_cast<Eigen::Index>(i)) += adj.row((*idx)[i]);
    };
    return push("scatter_add_rows", own(std::move(out)), needs(a), bw);
  }

  // Copy of `base` with rows at idx overwritten by the rows of `a`.
  // Indices must be unique; used to splat per-pixel results into images.
  Var scatter_rows(Var base, IndexVec idx, Var a) {
    const Mat& A = val(a);
    const Mat& B = val(base);
    if (static_cast<Eigen::Index>(idx->size()) != A.rows())
      throw ConfigError("scatter_rows: index count != rows");
    if (A.cols() != B.cols())
      throw ConfigError("scatter_rows: column mismatch");
    Mat out = B;
    for (std::size_t i = 0; i < idx->size(); ++i) {
      std::int32_t r = (*idx)[i];
      if (r < 0 || r >= B.rows())
        throw ConfigError("scatter_rows: index out of range");
      out.row(r) = A.row(static_cast<Eigen::Index>(i));
    }
    auto bw = [base, idx, a](TapeT& t, const Mat& adj) {
      if (t.needs(a)) {
        Mat& da = t.adj_ref(a);
        for (std::size_t i = 0; i < idx->size(); ++i)
          da.row(static_cast<Eigen::Index>(i)) += adj.row((*idx)[i]);
      }
      if (t.needs(base)) {
        Mat masked = adj;
        for (std::size_t i = 0; i < idx->size(); ++i)
          masked.row((*idx)[i]).setZero();
        t.accum(base, masked);
      }
    };
    return push("scatter_rows", own(std::move(out)), needs(a) || needs(base),
                bw);
  }

  // ------------------------------------------------------------ reductions

  Var sum_rows(Var a) {
    Mat out = val(a).rowwise().sum();
    auto bw = [a](TapeT& t, const Mat& adj) {
      if (!t.needs(a)) return;
      Mat& da = t.adj_ref(a);
      da.array().colwise() += adj.col(0).array();
    };
    return push("sum_rows", own(std::move(out)), needs(a), bw);
  }

  Var sum_all(Var a) {
    Mat out(1, 1);
    out(0, 0) = val(a).sum();
    auto bw = [a](TapeT& t, const Mat& adj) {
      if (!t.needs(a)) return;
      t.adj_ref(a).array() += adj(0, 0);
    };
    return push("sum_all", own(std::move(out)), needs(a), bw);
  }

  Var mean_all(Var a) {
    const Mat& A = val(a);
    if (A.size() == 0) throw ConfigError("mean_all: empty input");
    T inv = T(1) / static_cast<T>(A.size());
    Mat out(1, 1);
    out(0, 0) = A.sum() * inv;
    auto bw = [a, inv](TapeT& t, const Mat& adj) {
      if (!t.needs(a)) return;
      t.adj_ref(a).array() += adj(0, 0) * inv;
    };
    return push("mean_all", own(std::move(out)), needs(a), bw);
  }

  // ----------------------------------------------------- row-wise geometry

  Var dot_rows(Var a, Var b) {
    require_same_shape(a, b, "dot_rows");
    Mat out = val(a).cwiseProduct(val(b)).rowwise().sum();
    auto bw = [a, b](TapeT& t, const Mat& adj) {
      if (t.needs(a))
        t.accum(a, t.val(b).array().colwise() * adj.col(0).array());
      if (t.needs(b))
        t.accum(b, t.val(a).array().colwise() * adj.col(0).array());
    };
    return push("dot_rows", own(std::move(out)), needs(a) || needs(b), bw);
  }

  Var cross_rows(Var a, Var b) {
    require_same_shape(a, b, "cross_rows");
    if (val(a).cols() != 3) throw ConfigError("cross_rows: needs 3 columns");
    Mat out = cross3(val(a), val(b));
    auto bw = [a, b](TapeT& t, const Mat& adj) {
      // adj . (da x b) = da . (b x adj);  adj . (a x db) = db . (adj x a)
      if (t.needs(a)) t.accum(a, cross3(t.val(b), adj));
      if (t.needs(b)) t.accum(b, cross3(adj, t.val(a)));
    };
    return push("cross_rows", own(std::move(out)), needs(a) || needs(b), bw);
  }

  Var normalize_rows(Var a, double eps = 1e-12) {
    const Mat& A = val(a);
    Mat out(A.rows(), A.cols());
    auto norms = std::make_shared<Eigen::Matrix<T, Eigen::Dynamic, 1>>(
        A.rowwise().norm());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      T n = (*norms)(i);
      if (n < static_cast<T>(eps))
        out.row(i).setZero();
      else
        out.row(i) = A.row(i) / n;
    }
    Var self{next_id()};
    auto bw = [a, self, norms, eps](TapeT& t, const Mat& adj) {
      if (!t.needs(a)) return;
      const Mat& U = t.val(self);
      Mat da(U.rows(), U.cols());
      for (Eigen::Index i = 0; i < U.rows(); ++i) {
        T n = (*norms)(i);
        if (n < static_cast<T>(eps)) {
          da.row(i).setZero();
          continue;
        }
        T d = adj.row(i).dot(U.row(i));
        da.row(i) = (adj.row(i) - d * U.row(i)) / n;
      }
      t.accum(a, da);
    };
    return push("normalize_rows", own(std::move(out)), needs(a), bw);
  }

  // ----------------------------------------------------------- nonlinearity

  Var sin(Var a) {
    Mat out = val(a).array().sin();
    auto bw = [a](TapeT& t, const Mat& adj) {
      t.accum(a, adj.array() * t.val(a).array().cos());
    };
    return push("sin", own(std::move(out)), needs(a), bw);
  }

  Var cos(Var a) {
    Mat out = val(a).array().cos();
    auto bw = [a](TapeT& t, const Mat& adj) {
      t.accum(a, -(adj.array() * t.val(a).array().sin()));
    };
    return push("cos", own(std::move(out)), needs(a), bw);
  }

  Var sqrt(Var a) {
    Mat out = val(a).array().sqrt();
    Var self{next_id()};
    auto bw = [a, self](TapeT& t, const Mat& adj) {
      if (!t.needs(a)) return;
      const Mat& S = t.val(self);
      // Guarded half-power rule: zero slope where the root underflows, so
      // norms of exactly-zero vectors do not poison the gradient.
      Mat da =
          (S.array() > T(1e-12))
              .select(adj.array() * T(0.5) / S.array().max(T(1e-12)), T(0))
              .matrix();
      t.accum(a, da);
    };
    return push("sqrt", own(std::move(out)), needs(a), bw);
  }

  Var abs(Var a) {
    Mat out = val(a).array().abs();
    auto bw = [a](TapeT& t, const Mat& adj) {
      Mat sign = t.val(a).unaryExpr([](T x) {
        return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
      });
      t.accum(a, adj.cwiseProduct(sign));
    };
    return push("abs", own(std::move(out)), needs(a), bw);
  }

  Var square(Var a) {
    Mat out = val(a).array().square();
    auto bw = [a](TapeT& t, const Mat& adj) {
      t.accum(a, T(2) * adj.cwiseProduct(t.val(a)));
    };
    return push("square", own(std::move(out)), needs(a), bw);
  }

  Var softplus(Var a) {
    Mat out = val(a).unaryExpr([](T x) { return detail::softplus_scalar(x); });
    auto bw = [a](TapeT& t, const Mat& adj) {
      Mat sig = t.val(a).unaryExpr(
          [](T x) { return detail::sigmoid_scalar(x); });
      t.accum(a, adj.cwiseProduct(sig));
    };
    return push("softplus", own(std::move(out)), needs(a), bw);
  }

  Var sigmoid(Var a) {
    Mat out = val(a).unaryExpr([](T x) { return detail::sigmoid_scalar(x); });
    Var self{next_id()};
    auto bw = [a, self](TapeT& t, const Mat& adj) {
      const Mat& S = t.val(self);
      t.accum(a, adj.array() * S.array() * (T(1) - S.array()));
    };
    return push("sigmoid", own(std::move(out)), needs(a), bw);
  }

  Var clamp(Var a, double lo, double hi) {
    T l = static_cast<T>(lo), h = static_cast<T>(hi);
    Mat out = val(a).array().max(l).min(h);
    auto bw = [a, l, h](TapeT& t, const Mat& adj) {
      const Mat& A = t.val(a);
      // Strict interior test: zero slope at the clamp corners themselves.
      Mat da = ((A.array() > l) && (A.array() < h))
                   .select(adj, Mat::Zero(A.rows(), A.cols()));
      t.accum(a, da);
    };
    return push("clamp", own(std::move(out)), needs(a), bw);
  }

  // ------------------------------------------------------- fused encodings

  // Fourier features of raw coordinates: for each octave f < m the block
  // [sin(2^f x), cos(2^f x)] over the three coordinates, so the output has
  // 6*m columns in octave-major order.
  Var fourier_encode(Var x, int m) {
    const Mat& X = val(x);
    if (X.cols() != 3) throw ConfigError("fourier_encode: points must be Px3");
    if (m < 1) throw ConfigError("fourier_encode: octave count must be >= 1");
    Mat out(X.rows(), 6 * m);
    for (int f = 0; f < m; ++f) {
      T k = static_cast<T>(std::ldexp(1.0, f));
      out.middleCols(6 * f, 3) = (X.array() * k).sin();
      out.middleCols(6 * f + 3, 3) = (X.array() * k).cos();
    }
    auto bw = [x, m](TapeT& t, const Mat& adj) {
      if (!t.needs(x)) return;
      const Mat& X = t.val(x);
      Mat dx = Mat::Zero(X.rows(), 3);
      for (int f = 0; f < m; ++f) {
        T k = static_cast<T>(std::ldexp(1.0, f));
        dx.array() += k * adj.middleCols(6 * f, 3).array() *
                      (X.array() * k).cos();
        dx.array() -= k * adj.middleCols(6 * f + 3, 3).array() *
                      (X.array() * k).sin();
      }
      t.accum(x, dx);
    };
    return push("fourier_encode", own(std::move(out)), needs(x), bw);
  }

  // Multi-resolution hash-grid features.  `x` holds points in the unit cube
  // (clamped if outside); `tables` is one parameter Var per level.  Output
  // is (P x levels*channels), levels coarse-to-fine.  Both the tables and,
  // when `x` is differentiable, the points receive gradients; the trilinear
  // geometry is recomputed in the backward pass instead of being stored.
  Var hash_features(Var x, const HashGridMeta& meta,
                    const std::vector<Var>& tables) {
    const Mat& X = val(x);
    if (X.cols() != 3) throw ConfigError("hash_features: points must be Px3");
    if (static_cast<int>(tables.size()) != meta.levels)
      throw ConfigError("hash_features: table count != levels");
    if (meta.channels < 1 || meta.channels > kMaxHashChannels)
      throw ConfigError("hash_features: unsupported channel count");
    auto m = std::make_shared<HashGridMeta>(meta);
    const Eigen::Index P = X.rows();
    const int C = meta.channels;
    Mat out(P, static_cast<Eigen::Index>(meta.levels) * C);

    bool any_grad = needs(x);
    for (Var tv : tables) any_grad = any_grad || needs(tv);

    for (int l = 0; l < meta.levels; ++l) {
      const T* tab = val(tables[l]).data();
      for (Eigen::Index i = 0; i < P; ++i) {
        CornerSet cs = corners(*m, l, X.row(i));
        T acc[kMaxHashChannels] = {};
        for (int c = 0; c < 8; ++c) {
          const T* trow = tab + cs.row[c] * C;
          for (int ch = 0; ch < C; ++ch) acc[ch] += cs.w[c] * trow[ch];
        }
        T* orow = out.data() + i * out.cols() + l * C;
        for (int ch = 0; ch < C; ++ch) orow[ch] = acc[ch];
      }
    }

    std::vector<Var> tabs = tables;
    auto bw = [x, m, tabs](TapeT& t, const Mat& adj) {
      const Mat& X = t.val(x);
      const Eigen::Index P = X.rows();
      const int C = m->channels;
      bool want_dx = t.needs(x);
      Mat dx;
      if (want_dx) dx = Mat::Zero(P, 3);
      for (int l = 0; l < m->levels; ++l) {
        bool want_dt = t.needs(tabs[l]);
        if (!want_dt && !want_dx) continue;
        T* dtab = want_dt ? t.adj_ref(tabs[l]).data() : nullptr;
        const T* tab = t.val(tabs[l]).data();
        for (Eigen::Index i = 0; i < P; ++i) {
          CornerSet cs = corners(*m, l, X.row(i));
          const T* g = adj.data() + i * adj.cols() + l * C;
          for (int c = 0; c < 8; ++c) {
            const std::int64_t r = cs.row[c] * C;
            if (dtab)
              for (int ch = 0; ch < C; ++ch) dtab[r + ch] += cs.w[c] * g[ch];
            if (want_dx) {
              T dot = T(0);
              for (int ch = 0; ch < C; ++ch) dot += g[ch] * tab[r + ch];
              dx(i, 0) += cs.dw[c][0] * dot;
              dx(i, 1) += cs.dw[c][1] * dot;
              dx(i, 2) += cs.dw[c][2] * dot;
            }
          }
        }
      }
      if (want_dx) t.accum(x, dx);
    };
    return push("hash_features", own(std::move(out)), any_grad, bw);
  }

  // Hash features together with their three unit-cube directional
  // derivatives, for constant points.  Output stacks four P-row blocks:
  // [features; d/du_x; d/du_y; d/du_z], each (P x levels*channels).  Fusing
  // the four reads means every table row is fetched once per point instead
  // of four times, which matters because these lookups are the only
  // cache-unfriendly traffic in the training loop.  Differentiable in the
  // tables only (the points are a fixed lattice).
  Var hash_features_with_tangents(Var x, const HashGridMeta& meta,
                                  const std::vector<Var>& tables) {
    const Mat& X = val(x);
    if (X.cols() != 3)
      throw ConfigError("hash_features_with_tangents: points must be Px3");
    if (static_cast<int>(tables.size()) != meta.levels)
      throw ConfigError("hash_features_with_tangents: table count != levels");
    if (meta.channels < 1 || meta.channels > kMaxHashChannels)
      throw ConfigError("hash_features_with_tangents: unsupported channels");
    auto m = std::make_shared<HashGridMeta>(meta);
    const Eigen::Index P = X.rows();
    const int C = meta.channels;
    const Eigen::Index D = static_cast<Eigen::Index>(meta.levels) * C;
    Mat out = Mat::Zero(4 * P, D);

    bool any_grad = false;
    for (Var tv : tables) any_grad = any_grad || needs(tv);

    for (int l = 0; l < meta.levels; ++l) {
      const T* tab = val(tables[l]).data();
      for (Eigen::Index i = 0; i < P; ++i) {
        CornerSet cs = corners(*m, l, X.row(i));
        T acc[4][kMaxHashChannels] = {};
        for (int c = 0; c < 8; ++c) {
          const T* trow = tab + cs.row[c] * C;
          for (int ch = 0; ch < C; ++ch) {
            T v = trow[ch];
            acc[0][ch] += cs.w[c] * v;
            acc[1][ch] += cs.dw[c][0] * v;
            acc[2][ch] += cs.dw[c][1] * v;
            acc[3][ch] += cs.dw[c][2] * v;
          }
        }
        for (int b = 0; b < 4; ++b) {
          T* orow = out.data() + (b * P + i) * D + l * C;
          for (int ch = 0; ch < C; ++ch) orow[ch] = acc[b][ch];
        }
      }
    }

    std::vector<Var> tabs = tables;
    auto bw = [x, m, tabs](TapeT& t, const Mat& adj) {
      const Mat& X = t.val(x);
      const Eigen::Index P = X.rows();
      const int C = m->channels;
      const Eigen::Index D = adj.cols();
      for (int l = 0; l < m->levels; ++l) {
        if (!t.needs(tabs[l])) continue;
        T* dtab = t.adj_ref(tabs[l]).data();
        for (Eigen::Index i = 0; i < P; ++i) {
          CornerSet cs = corners(*m, l, X.row(i));
          const T* g0 = adj.data() + i * D + l * C;
          const T* g1 = adj.data() + (P + i) * D + l * C;
          const T* g2 = adj.data() + (2 * P + i) * D + l * C;
          const T* g3 = adj.data() + (3 * P + i) * D + l * C;
          for (int c = 0; c < 8; ++c) {
            T* drow = dtab + cs.row[c] * C;
            for (int ch = 0; ch < C; ++ch) {
              drow[ch] += cs.w[c] * g0[ch] + cs.dw[c][0] * g1[ch] +
                          cs.dw[c][1] * g2[ch] + cs.dw[c][2] * g3[ch];
            }
          }
        }
      }
    };
    return push("hash_features_with_tangents", own(std::move(out)), any_grad,
                bw);
  }

  // ------------------------------------------------------------- inspection

  const Mat& val(Var v) const { return node(v.id).value.get(); }
  bool needs(Var v) const { return node(v.id).needs_grad; }
  std::size_t num_nodes() const { return nodes_.size(); }
  const char* op_name(Var v) const { return node(v.id).op; }

  // ---------------------------------------------------------------- engine

  // Reverse sweep from a finite scalar loss.  Parameter gradients accumulate
  // into their stores; intermediate adjoints are freed as soon as consumed.
  void backward(Var loss) {
    const Mat& L = val(loss);
    if (L.rows() != 1 || L.cols() != 1)
      throw ConfigError("backward: loss must be a 1x1 scalar");
    if (!std::isfinite(static_cast<double>(L(0, 0)))) {
      // Identify the first offender in creation (topological) order so the
      // error points at the op that produced the bad value.
      for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].value.get().allFinite()) {
          throw NumericError(std::string("backward: non-finite value in op '") +
                             nodes_[i].op + "' (node " + std::to_string(i) +
                             ")");
        }
      }
      throw NumericError("backward: loss is non-finite");
    }
    Node& last = node(loss.id);
    if (!last.needs_grad) return;  // loss independent of all parameters
    last.adj = std::make_unique<Mat>(Mat::Constant(1, 1, T(1)));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.adj && n.backward) n.backward(*this, *n.adj);
      n.adj.reset();
    }
  }

  // Adjoint accumulation: allocate (zeroed) on first touch, then add.
  template <class Derived>
  void accum(Var v, const Eigen::MatrixBase<Derived>& e) {
    if (!needs(v)) return;
    adj_ref(v) += e.derived();
  }
  template <class Derived>
  void accum(Var v, const Eigen::ArrayBase<Derived>& e) {
    if (!needs(v)) return;
    adj_ref(v).array() += e.derived();
  }

  Mat& adj_ref(Var v) {
    Node& n = node(v.id);
    if (!n.adj)
      n.adj = std::make_unique<Mat>(
          Mat::Zero(n.value.rows(), n.value.cols()));
    return *n.adj;
  }

 private:
  struct Node {
    const char* op;
    Tensor value;
    bool needs_grad = false;
    std::unique_ptr<Mat> adj;
    std::function<void(TapeT&, const Mat&)> backward;
  };

  // Trilinear corner addressing shared by the fused hash ops.  Weights and
  // their unit-cube derivatives for the 8 cell corners of one point at one
  // level; recomputed on demand (cheaper than retaining P x levels x 8
  // records across the whole tape).
  struct CornerSet {
    std::int64_t row[8];
    T w[8];
    T dw[8][3];
  };

  template <class RowExpr>
  static CornerSet corners(const HashGridMeta& m, int level,
                           const RowExpr& xr) {
    CornerSet cs;
    int r = m.level_res[level];
    double p[3], f[3];
    int base[3];
    bool interior[3];
    for (int d = 0; d < 3; ++d) {
      double xd = std::min(std::max(static_cast<double>(xr(d)), 0.0), 1.0);
      interior[d] = static_cast<double>(xr(d)) > 0.0 &&
                    static_cast<double>(xr(d)) < 1.0;
      p[d] = xd * r;
      double fl = std::floor(p[d]);
      int b = static_cast<int>(fl);
      if (b > r - 1) b = r - 1;  // x == 1 lands in the last cell
      base[d] = b;
      f[d] = p[d] - b;
    }
    for (int c = 0; c < 8; ++c) {
      int cx = c & 1, cy = (c >> 1) & 1, cz = (c >> 2) & 1;
      cs.row[c] = m.row_of(level, base[0] + cx, base[1] + cy, base[2] + cz);
      double wx = cx ? f[0] : 1.0 - f[0];
      double wy = cy ? f[1] : 1.0 - f[1];
      double wz = cz ? f[2] : 1.0 - f[2];
      cs.w[c] = static_cast<T>(wx * wy * wz);
      // d(weight)/d(unit-cube x) includes the level scale r; clamped points
      // sit on the boundary and get zero slope there.
      double sx = cx ? 1.0 : -1.0, sy = cy ? 1.0 : -1.0, sz = cz ? 1.0 : -1.0;
      cs.dw[c][0] = interior[0] ? static_cast<T>(sx * wy * wz * r) : T(0);
      cs.dw[c][1] = interior[1] ? static_cast<T>(sy * wx * wz * r) : T(0);
      cs.dw[c][2] = interior[2] ? static_cast<T>(sz * wx * wy * r) : T(0);
    }
    return cs;
  }

  static Mat cross3(const Mat& a, const Mat& b) {
    Mat out(a.rows(), 3);
    out.col(0) = a.col(1).cwiseProduct(b.col(2)) -
                 a.col(2).cwiseProduct(b.col(1));
    out.col(1) = a.col(2).cwiseProduct(b.col(0)) -
                 a.col(0).cwiseProduct(b.col(2));
    out.col(2) = a.col(0).cwiseProduct(b.col(1)) -
                 a.col(1).cwiseProduct(b.col(0));
    return out;
  }

  Var concat(const std::vector<Var>& parts, bool along_rows) {
    if (parts.empty()) throw ConfigError("concat: no inputs");
    Eigen::Index rows = val(parts[0]).rows(), cols = val(parts[0]).cols();
    Eigen::Index total = 0;
    bool any = false;
    for (Var p : parts) {
      const Mat& M = val(p);
      if (along_rows) {
        if (M.cols() != cols) throw ConfigError("concat_rows: column mismatch");
        total += M.rows();
      } else {
        if (M.rows() != rows) throw ConfigError("concat_cols: row mismatch");
        total += M.cols();
      }
      any = any || needs(p);
    }
    Mat out(along_rows ? total : rows, along_rows ? cols : total);
    Eigen::Index off = 0;
    for (Var p : parts) {
      const Mat& M = val(p);
      if (along_rows) {
        out.middleRows(off, M.rows()) = M;
        off += M.rows();
      } else {
        out.middleCols(off, M.cols()) = M;
        off += M.cols();
      }
    }
    std::vector<Var> ps = parts;
    auto bw = [ps, along_rows](TapeT& t, const Mat& adj) {
      Eigen::Index off = 0;
      for (Var p : ps) {
        const Mat& M = t.val(p);
        Eigen::Index w = along_rows ? M.rows() : M.cols();
        if (t.needs(p)) {
          if (along_rows)
            t.accum(p, adj.middleRows(off, w));
          else
            t.accum(p, adj.middleCols(off, w));
        }
        off += w;
      }
    };
    return push(along_rows ? "concat_rows" : "concat_cols",
                own(std::move(out)), any, bw);
  }

  static Tensor own(Mat&& m) { return Tensor::owned(std::move(m)); }

  int next_id() const { return static_cast<int>(nodes_.size()); }

  Var push(const char* op, Tensor value, bool needs_grad,
           std::function<void(TapeT&, const Mat&)> backward) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = needs_grad ? std::move(backward) : nullptr;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(int id) {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw ConfigError("tape: invalid variable handle");
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw ConfigError("tape: invalid variable handle");
    return nodes_[static_cast<std::size_t>(id)];
  }

  void require_same_shape(Var a, Var b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw ConfigError(std::string(op) + ": shape mismatch");
  }

  void require_colvec(Var a, Var b, const char* op) const {
    if (val(b).cols() != 1 || val(a).rows() != val(b).rows())
      throw ConfigError(std::string(op) + ": expected column vector broadcast");
  }

  std::vector<Node> nodes_;
};

using Tapef = TapeT<float>;
using Taped = TapeT<double>;

}  // namespace sv
