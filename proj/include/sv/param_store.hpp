#pragma once

// Named parameter blocks with matching gradient accumulators.
//
// A ParamStoreT owns every trainable array in the pipeline (network weights,
// hash tables, per-cell extraction weights).  Blocks are registered once, in
// a fixed order, and addressed by handle; the tape borrows block values as
// leaf tensors and accumulates into the paired gradient buffers during the
// backward pass.  Each block carries a learning-rate group tag so the
// optimizer can apply the per-part step sizes without knowing the network
// layout.

#include "sv/errors.hpp"
#include "sv/tensor.hpp"

#include <string>
#include <vector>

namespace sv {

struct BlockId {
  int index = -1;
  bool valid() const { return index >= 0; }
};

// Learning-rate groups.  Geometry covers the SDF network, hash tables and
// extraction cell weights; texture covers the color head.
enum class ParamGroup { kGeometry, kTexture };

template <class T>
class ParamStoreT {
 public:
  using Mat = MatX<T>;

  struct Block {
    std::string name;
    ParamGroup group = ParamGroup::kGeometry;
    Mat value;
    Mat grad;
  };

  BlockId add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
              ParamGroup group) {
    for (const Block& b : blocks_) {
      if (b.name == name)
        throw ConfigError("duplicate parameter block '" + name + "'");
    }
    Block b;
    b.name = name;
    b.group = group;
    b.value = Mat::Zero(rows, cols);
    b.grad = Mat::Zero(rows, cols);
    blocks_.push_back(std::move(b));
    return BlockId{static_cast<int>(blocks_.size()) - 1};
  }

  Mat& value(BlockId id) { return block(id).value; }
  const Mat& value(BlockId id) const { return block(id).value; }
  Mat& grad(BlockId id) { return block(id).grad; }
  const Mat& grad(BlockId id) const { return block(id).grad; }
  const std::string& name(BlockId id) const { return block(id).name; }
  ParamGroup group(BlockId id) const { return block(id).group; }

  int size() const { return static_cast<int>(blocks_.size()); }
  BlockId id_at(int i) const { return BlockId{i}; }

  BlockId find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (blocks_[i].name == name) return BlockId{i};
    return BlockId{};
  }

  void zero_grads() {
    for (Block& b : blocks_) b.grad.setZero();
  }

  Eigen::Index total_parameters() const {
    Eigen::Index n = 0;
    for (const Block& b : blocks_) n += b.value.size();
    return n;
  }

  Block& block(BlockId id) {
    if (id.index < 0 || id.index >= size())
      throw ConfigError("invalid parameter block handle");
    return blocks_[id.index];
  }
  const Block& block(BlockId id) const {
    if (id.index < 0 || id.index >= size())
      throw ConfigError("invalid parameter block handle");
    return blocks_[id.index];
  }

 private:
  std::vector<Block> blocks_;
};

using ParamStoref = ParamStoreT<float>;
using ParamStored = ParamStoreT<double>;

}  // namespace sv
