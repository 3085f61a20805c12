#pragma once

// Dense row-major tensors used throughout the reconstruction pipeline.
//
// Everything the engine touches is a 2-D array of scalars: point batches are
// (P x 3), feature batches (P x D), images are flattened to (H*W x C), and
// scalars are (1 x 1).  A TensorT either owns its storage or borrows a
// read-only view of a matrix owned elsewhere (parameter blocks, cached
// encodings of the fixed lattice), which keeps large constants out of the
// per-iteration allocation churn.

#include <Eigen/Dense>

#include <cstdint>
#include <utility>

namespace sv {

template <class T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatXf = MatX<float>;
using MatXd = MatX<double>;

// Row-major integer index buffers (gather/scatter tables, face lists).
using MatXi =
    Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecXi = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 1>;

template <class T>
class TensorT {
 public:
  using Mat = MatX<T>;

  TensorT() = default;

  static TensorT owned(Mat&& m) {
    TensorT t;
    t.owned_ = std::move(m);
    return t;
  }

  // Borrow a matrix owned elsewhere.  The referent must outlive the tensor;
  // tapes rely on this for parameter blocks and per-run constant caches.
  static TensorT borrowed(const Mat& m) {
    TensorT t;
    t.view_ = &m;
    return t;
  }

  const Mat& get() const { return view_ ? *view_ : owned_; }
  Eigen::Index rows() const { return get().rows(); }
  Eigen::Index cols() const { return get().cols(); }
  Eigen::Index size() const { return get().size(); }

 private:
  Mat owned_;
  const Mat* view_ = nullptr;
};

}  // namespace sv
