#pragma once

// The optimization loop: Adam over every parameter block, one extract ->
// render -> loss -> backward -> step cycle per iteration, full-batch over
// all views.
//
// Cost model.  The full-lattice SDF evaluation needed to plan extraction is
// a value-only pass (chunked, no tape growth); the differentiable pass then
// re-evaluates just the corners the plan actually references and scatters
// them into the constant value column, so backward never sweeps the dense
// lattice.  The eikonal term runs on those same active corners plus a fixed
// coarse sub-lattice sweep: the crossing corners are where the weighted
// interpolation needs unit slope, the sweep keeps the far field from
// drifting.  Both point sets are deterministic functions of the iteration
// state, which keeps the loss free of sampling noise.
//
// Everything here is single-threaded and bitwise deterministic for a fixed
// seed; the `deterministic` flag reserves the right to parallelize when it
// is false but does not change results today.

#include "sv/dataio.hpp"
#include "sv/encoding.hpp"
#include "sv/errors.hpp"
#include "sv/field.hpp"
#include "sv/grid.hpp"
#include "sv/mesh.hpp"
#include "sv/objective.hpp"
#include "sv/param_store.hpp"
#include "sv/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sv {

// ------------------------------------------------------------------- adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamStateT {
  AdamConfig hyper;
  long step = 0;
  std::vector<MatX<T>> m;  // first moments, shaped like the store blocks
  std::vector<MatX<T>> v;  // second moments

  static AdamStateT create(const ParamStoreT<T>& store,
                           const AdamConfig& hyper = {}) {
    AdamStateT s;
    s.hyper = hyper;
    s.m.reserve(static_cast<std::size_t>(store.size()));
    s.v.reserve(static_cast<std::size_t>(store.size()));
    for (int i = 0; i < store.size(); ++i) {
      const MatX<T>& val = store.value(store.id_at(i));
      s.m.push_back(MatX<T>::Zero(val.rows(), val.cols()));
      s.v.push_back(MatX<T>::Zero(val.rows(), val.cols()));
    }
    return s;
  }
};

// One bias-corrected Adam update over every block, with its own learning
// rate per block, then zeroes the gradients.  Non-finite gradients abort
// with the offending block's name.
template <class T>
void adam_step(ParamStoreT<T>& store, AdamStateT<T>& state,
               const std::vector<double>& lr_per_block) {
  const int n = store.size();
  if (static_cast<int>(state.m.size()) != n ||
      static_cast<int>(state.v.size()) != n)
    throw ConfigError("adam: state does not match the parameter store");
  if (static_cast<int>(lr_per_block.size()) != n)
    throw ConfigError("adam: need one learning rate per block");
  for (int i = 0; i < n; ++i) {
    const BlockId id = store.id_at(i);
    if (state.m[i].rows() != store.value(id).rows() ||
        state.m[i].cols() != store.value(id).cols())
      throw ConfigError("adam: state does not match the parameter store");
    if (!store.grad(id).allFinite())
      throw NumericError("adam: non-finite gradient in block '" +
                         store.name(id) + "'");
  }

  ++state.step;
  const double b1 = state.hyper.beta1, b2 = state.hyper.beta2;
  const T bc1 = static_cast<T>(1.0 - std::pow(b1, state.step));
  const T bc2 = static_cast<T>(1.0 - std::pow(b2, state.step));
  for (int i = 0; i < n; ++i) {
    const BlockId id = store.id_at(i);
    const MatX<T>& g = store.grad(id);
    MatX<T>& m = state.m[i];
    MatX<T>& v = state.v[i];
    m = static_cast<T>(b1) * m + static_cast<T>(1.0 - b1) * g;
    v = (static_cast<T>(b2) * v.array() +
         static_cast<T>(1.0 - b2) * g.array().square())
            .matrix();
    const T lr = static_cast<T>(lr_per_block[static_cast<std::size_t>(i)]);
    store.value(id).array() -=
        lr * (m.array() / bc1) /
        ((v.array() / bc2).sqrt() + static_cast<T>(state.hyper.eps));
  }
  store.zero_grads();
}

// ------------------------------------------------------------------ config

struct TrainConfig {
  int iterations = 600;
  double lr_geometry = 1e-3;  // SDF net, hash tables, extraction weights
  double lr_texture = 1e-2;   // color head
  // Extraction cell weights inherit lr_geometry unless overridden here.
  std::optional<double> lr_cells;
  int grid_cells = 96;  // lattice resolution N
  LossWeights weights;
  EncodingConfig encoding;
  FieldConfig field;
  AdamConfig adam;
  std::uint64_t seed = 0;
  bool deterministic = true;
  bool per_cell_weights = true;   // one alpha/beta row per cell vs shared
  bool foreground_only = false;   // image L1 on the foreground union only
  bool orientation_bake = true;   // final colors: nearest view vs averaging

  void validate() const;
};

struct TrainLogRow {
  long iteration = 0;
  LossBreakdown loss;
};

struct TrainResult {
  TriMesh mesh;  // final extraction with baked vertex colors
  std::vector<TrainLogRow> log;
  // mean | ||grad f|| - 1 | over all lattice corners at the final state
  double mean_grad_residual = 0.0;
};

// ----------------------------------------------------------------- session

// A training session owns the parameter store, the field and the cached
// lattice constants.  step() runs one full iteration; run() loops to the
// configured count and finalizes the textured mesh.  Checkpoints capture
// parameters, Adam moments and the iteration counter, so a reloaded session
// continues bit-identically in deterministic mode.
template <class T>
class TrainerT {
 public:
  TrainerT(ViewSet views, TrainConfig cfg);

  // One iteration.  Returns the loss breakdown, or nullopt when the field
  // had no zero crossing on the lattice (the step is skipped; more than 50
  // consecutive skips abort with NumericError).
  std::optional<LossBreakdown> step();

  // Runs until the configured iteration count, then extracts and bakes the
  // final mesh.  The log holds one row per non-skipped iteration.
  TrainResult run();

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

  // Extraction with the current parameters (unbaked, with unit normals).
  TriMesh current_mesh();
  // Final-quality mesh: extraction plus the configured color bake.
  TriMesh textured_mesh();

  double mean_gradient_residual();

  long iteration() const { return iter_; }
  const TrainConfig& config() const { return cfg_; }
  ParamStoreT<T>& store() { return store_; }
  const ParamStoreT<T>& store() const { return store_; }
  const FieldT<T>& field() const { return field_; }
  AdamStateT<T>& adam_state() { return adam_; }
  // Which blocks have seen a nonzero gradient so far (no-dead-parameters
  // diagnostic).
  const std::vector<char>& grad_ever_nonzero() const { return grad_seen_; }

 private:
  MatX<T> lattice_values();

  TrainConfig cfg_;
  ViewSet views_;
  GridTopology grid_;
  ParamStoreT<T> store_;
  FieldT<T> field_;
  CellWeightsT<T> cells_;
  AdamStateT<T> adam_;
  std::vector<double> lr_per_block_;

  std::vector<CameraBasis> cams_;
  std::vector<MatX<T>> target_rgb_, target_normal_, target_mask_;

  // Lattice constants, chunked for the value-only pass.
  MatXd lat_world_;  // (corners x 3), double for exact re-derivation
  std::vector<MatX<T>> chunk_unit_, chunk_fourier_, chunk_prior_;
  std::vector<std::int32_t> coarse_ids_;  // fixed eikonal sweep corners

  long iter_ = 0;
  int consecutive_empty_ = 0;
  std::vector<char> grad_seen_;
};

using Trainerf = TrainerT<float>;
using Trainerd = TrainerT<double>;

// Single-shot training entry point: float session, full run.
TrainResult train(const ViewSet& views, const TrainConfig& cfg);

}  // namespace sv
