#pragma once

// Row-major floating point images, one row per pixel (pix = y*width + x).
// Channel count is 1 (masks) or 3 (RGB / encoded normals); samples live in
// [0, 1].

#include "sv/errors.hpp"
#include "sv/tensor.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace sv {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  MatXd data;  // (height*width) x channels

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c) {
    data = MatXd::Zero(static_cast<Eigen::Index>(w) * h, c);
  }

  static Image solid(int w, int h, const Eigen::RowVectorXd& color) {
    Image img(w, h, static_cast<int>(color.cols()));
    img.data.rowwise() = color;
    return img;
  }

  Eigen::Index num_pixels() const {
    return static_cast<Eigen::Index>(width) * height;
  }

  double& at(int x, int y, int c) {
    return data(static_cast<Eigen::Index>(y) * width + x, c);
  }
  double at(int x, int y, int c) const {
    return data(static_cast<Eigen::Index>(y) * width + x, c);
  }

  // Shape and range check; `slack` absorbs the last-ulp excursions of
  // encoded unit normals.
  void validate(const std::string& what, double slack = 1e-9) const {
    if (width < 1 || height < 1)
      throw DataError(what + ": empty image");
    if (channels != 1 && channels != 3)
      throw DataError(what + ": channel count must be 1 or 3");
    if (data.rows() != num_pixels() || data.cols() != channels)
      throw DataError(what + ": sample buffer does not match dimensions");
    if (!data.allFinite())
      throw DataError(what + ": non-finite samples");
    if (data.minCoeff() < -slack || data.maxCoeff() > 1.0 + slack)
      throw DataError(what + ": samples outside [0, 1]");
  }
};

}  // namespace sv
