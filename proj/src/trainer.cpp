#include "sv/trainer.hpp"

#include "sv/camera.hpp"
#include "sv/extraction.hpp"
#include "sv/raster.hpp"
#include "sv/texture.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace sv {

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

namespace {

// Value-only lattice passes run in fixed-height chunks so the throwaway
// tape stays small; the split is per-row independent and does not change
// the results.
constexpr Eigen::Index kValueChunkRows = 65536;

// Consecutive empty extractions tolerated before the run aborts.
constexpr int kMaxConsecutiveEmpty = 50;

TrainConfig validated(TrainConfig cfg) {
  cfg.validate();
  return cfg;
}

// Sorted unique global corner ids referenced by the plan's crossings.
std::vector<std::int32_t> plan_corner_ids(const ExtractionPlan& plan) {
  std::vector<std::int32_t> ids;
  ids.reserve(2 * plan.corner_a.size());
  ids.insert(ids.end(), plan.corner_a.begin(), plan.corner_a.end());
  ids.insert(ids.end(), plan.corner_b.begin(), plan.corner_b.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

MatXd unit_vertex_normals(const MatXd& vertices, const MatXi& faces) {
  MatXd n = vertex_normals(vertices, faces);
  for (Eigen::Index i = 0; i < n.rows(); ++i) {
    const double len = n.row(i).norm();
    if (len > 1e-20)
      n.row(i) /= len;
    else
      n.row(i).setZero();
  }
  return n;
}

// ------------------------------------------------------- checkpoint format
// "SVCK" | version | scalar size | iteration | adam step | adam hyper |
// block count | per block: name, shape, value, m, v.  Raw little-endian.

constexpr char kCkptMagic[4] = {'S', 'V', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

void put_raw(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class S>
void put(std::ostream& os, const S& v) {
  put_raw(os, &v, sizeof v);
}

void get_raw(std::istream& is, void* p, std::size_t n, const std::string& path) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is)
    throw DataError("checkpoint: truncated or unreadable file '" + path + "'");
}

template <class S>
S get(std::istream& is, const std::string& path) {
  S v{};
  get_raw(is, &v, sizeof v, path);
  return v;
}

}  // namespace

// ----------------------------------------------------------------- config

void TrainConfig::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (iterations < 1)
    throw ConfigError("trainer: iterations must be at least 1");
  if (!positive(lr_geometry))
    throw ConfigError("trainer: lr_geometry must be positive");
  if (!positive(lr_texture))
    throw ConfigError("trainer: lr_texture must be positive");
  if (lr_cells && !positive(*lr_cells))
    throw ConfigError("trainer: lr_cells must be positive");
  if (grid_cells < 2 || grid_cells > 512)
    throw ConfigError("trainer: grid_cells must lie in [2, 512]");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("trainer: adam betas must lie in [0, 1)");
  if (!positive(adam.eps))
    throw ConfigError("trainer: adam eps must be positive");
  weights.validate();
  encoding.validate();
  field.validate();
}

// ---------------------------------------------------------------- session

template <class T>
TrainerT<T>::TrainerT(ViewSet views, TrainConfig cfg)
    : cfg_(validated(std::move(cfg))),
      views_(std::move(views)),
      grid_(cfg_.grid_cells) {
  // Parameter blocks, in a fixed registration order the checkpoint relies
  // on: field first (hash tables, SDF net, color head), then cell weights.
  Rng rng(cfg_.seed);
  field_ = FieldT<T>::create(store_, cfg_.encoding, cfg_.field, rng);
  cells_ = CellWeightsT<T>::create(store_, grid_.num_cells(),
                                   cfg_.per_cell_weights);
  adam_ = AdamStateT<T>::create(store_, cfg_.adam);
  grad_seen_.assign(static_cast<std::size_t>(store_.size()), 0);

  lr_per_block_.resize(static_cast<std::size_t>(store_.size()));
  for (int i = 0; i < store_.size(); ++i) {
    const BlockId id = store_.id_at(i);
    double lr = store_.group(id) == ParamGroup::kTexture ? cfg_.lr_texture
                                                         : cfg_.lr_geometry;
    if (store_.name(id).rfind("cells.", 0) == 0 && cfg_.lr_cells)
      lr = *cfg_.lr_cells;
    lr_per_block_[static_cast<std::size_t>(i)] = lr;
  }

  // Dataset checks: this loop trains on any view count >= 1 with one shared
  // resolution (the canonical datasets have six).
  if (views_.views.empty())
    throw DataError("trainer: dataset has no views");
  const int w = views_.views[0].rgb.width;
  const int h = views_.views[0].rgb.height;
  for (std::size_t k = 0; k < views_.views.size(); ++k) {
    const View& v = views_.views[k];
    const std::string where = "trainer: view " + std::to_string(k);
    if (v.rgb.channels != 3 || v.normal.channels != 3 || v.mask.channels != 1)
      throw DataError(where + " must have rgb 3, normal 3, mask 1 channels");
    if (v.rgb.width != w || v.rgb.height != h || v.normal.width != w ||
        v.normal.height != h || v.mask.width != w || v.mask.height != h)
      throw DataError(where + " images disagree on resolution");
    if (v.pose.width != w || v.pose.height != h)
      throw DataError(where + " pose resolution does not match its images");
    cams_.push_back(camera_basis(v.pose));
    target_rgb_.emplace_back(v.rgb.data.cast<T>());
    target_normal_.emplace_back(v.normal.data.cast<T>());
    target_mask_.emplace_back(v.mask.data.cast<T>());
  }

  // Lattice constants.  World positions stay in double as the reference;
  // the chunks hold exactly what the value pass consumes.
  lat_world_ = grid_.corner_positions<double>();
  const Eigen::Index P = lat_world_.rows();
  for (Eigen::Index r0 = 0; r0 < P; r0 += kValueChunkRows) {
    const Eigen::Index len = std::min<Eigen::Index>(kValueChunkRows, P - r0);
    const MatX<T> w_chunk = lat_world_.middleRows(r0, len).cast<T>();
    chunk_unit_.push_back(
        ((w_chunk * static_cast<T>(0.5)).array() + static_cast<T>(0.5))
            .matrix());
    if (cfg_.encoding.uses_fourier())
      chunk_fourier_.push_back(
          fourier_features_plain(w_chunk, cfg_.encoding.fourier_octaves));
    chunk_prior_.push_back(prior_values(w_chunk, cfg_.field.prior_radius));
  }

  // Fixed coarse sweep for the eikonal term: every `stride`-th lattice plane
  // plus the far face, so the far field is pinned even when the surface
  // occupies a corner of the volume.
  const int n = grid_.n;
  const int stride = std::max(1, n / 16);
  std::vector<int> axis;
  for (int i = 0; i <= n; i += stride) axis.push_back(i);
  if (axis.back() != n) axis.push_back(n);
  for (int iz : axis)
    for (int iy : axis)
      for (int ix : axis)
        coarse_ids_.push_back(
            static_cast<std::int32_t>(grid_.corner_id(ix, iy, iz)));
}

template <class T>
MatX<T> TrainerT<T>::lattice_values() {
  const Eigen::Index P = lat_world_.rows();
  MatX<T> out(P, 1);
  Eigen::Index r0 = 0;
  for (std::size_t c = 0; c < chunk_unit_.size(); ++c) {
    const Eigen::Index len = chunk_unit_[c].rows();
    TapeT<T> tape;
    Var feats;
    switch (cfg_.encoding.mode) {
      case EncodingMode::kFourierOnly:
        feats = tape.constant_view(chunk_fourier_[c]);
        break;
      case EncodingMode::kHashOnly: {
        const HashGridT<T>* g = field_.grid_for_geometry();
        feats = tape.hash_features(tape.constant_view(chunk_unit_[c]), g->meta,
                                   g->table_vars(tape, store_));
        break;
      }
      case EncodingMode::kHybrid: {
        const HashGridT<T>* g = field_.grid_for_geometry();
        Var hash =
            tape.hash_features(tape.constant_view(chunk_unit_[c]), g->meta,
                               g->table_vars(tape, store_));
        feats = tape.concat_cols({tape.constant_view(chunk_fourier_[c]),
                                  tape.scale(hash, cfg_.encoding.alpha)});
        break;
      }
    }
    Var s = build_sdf(tape, store_, field_.sdf, feats,
                      tape.constant_view(chunk_prior_[c]));
    out.middleRows(r0, len) = tape.val(s);
    r0 += len;
  }
  return out;
}

template <class T>
std::optional<LossBreakdown> TrainerT<T>::step() {
  MatX<T> vals = lattice_values();
  if (!vals.allFinite())
    throw NumericError("trainer: non-finite SDF value on the lattice at "
                       "iteration " +
                       std::to_string(iter_));

  ExtractionPlan plan = plan_extraction(grid_, vals);
  if (plan.num_duals() == 0) {
    ++iter_;
    ++consecutive_empty_;
    if (consecutive_empty_ > kMaxConsecutiveEmpty)
      throw NumericError(
          "trainer: extraction stayed empty for " +
          std::to_string(consecutive_empty_) +
          " consecutive iterations (surface left the lattice), aborting at "
          "iteration " +
          std::to_string(iter_ - 1));
    return std::nullopt;
  }
  consecutive_empty_ = 0;

  // Differentiable SDF pass over the corners the plan references plus the
  // coarse sweep; everything downstream reads those rows.
  std::vector<std::int32_t> active = plan_corner_ids(plan);
  std::vector<std::int32_t> epts;
  epts.reserve(active.size() + coarse_ids_.size());
  std::set_union(active.begin(), active.end(), coarse_ids_.begin(),
                 coarse_ids_.end(), std::back_inserter(epts));
  std::vector<std::int32_t> active_pos(active.size());
  for (std::size_t i = 0, j = 0; i < active.size(); ++i) {
    while (epts[j] != active[i]) ++j;
    active_pos[i] = static_cast<std::int32_t>(j);
  }

  const Eigen::Index ne = static_cast<Eigen::Index>(epts.size());
  MatX<T> e_world(ne, 3);
  for (Eigen::Index i = 0; i < ne; ++i)
    e_world.row(i) = lat_world_.row(epts[static_cast<std::size_t>(i)]).cast<T>();
  const MatX<T> e_unit =
      ((e_world * static_cast<T>(0.5)).array() + static_cast<T>(0.5)).matrix();
  MatX<T> e_fourier, e_fourier_tan;
  if (cfg_.encoding.uses_fourier()) {
    e_fourier = fourier_features_plain(e_world, cfg_.encoding.fourier_octaves);
    e_fourier_tan =
        fourier_tangents_plain(e_world, cfg_.encoding.fourier_octaves);
  }
  const MatX<T> e_prior = prior_values(e_world, cfg_.field.prior_radius);
  const MatX<T> e_prior_grad = prior_gradients(e_world);

  TapeT<T> tape;
  EncodingWithTangents enc = build_encoding_with_tangents(
      tape, store_, cfg_.encoding, field_.grid_for_geometry(), e_unit,
      e_fourier, e_fourier_tan);
  SdfWithGrad sg = build_sdf_with_grad(
      tape, store_, field_.sdf, enc.features, enc.tangents,
      tape.constant_view(e_prior), tape.constant_view(e_prior_grad));

  // Extraction replay: the plan's corners re-evaluated on the tape, spliced
  // into the frozen value column (the untouched rows are constants).
  Var sdf_active =
      tape.gather_rows(sg.sdf, TapeT<T>::make_indices(std::move(active_pos)));
  Var values_full =
      tape.scatter_rows(tape.constant_view(vals),
                        TapeT<T>::make_indices(std::move(active)), sdf_active);
  Var verts = build_dual_vertices(tape, store_, values_full, cells_, plan);
  Var vnrm = build_vertex_normals(tape, verts, plan.faces);
  const MatXd verts_d = tape.val(verts).template cast<double>();

  std::function<Var(TapeT<T>&, Var)> color_fn = [this](TapeT<T>& t, Var pos) {
    return field_.build_color_at(t, store_, pos);
  };

  // Full batch: every view rendered against the same mesh, terms averaged.
  const int num_views = static_cast<int>(views_.views.size());
  Var rgb_sum, mask_sum, normal_sum;
  for (int k = 0; k < num_views; ++k) {
    RasterOutput ras = plan_raster(verts_d, plan.faces, cams_[k]);
    RenderVars rv =
        build_render(tape, verts, vnrm, plan.faces, cams_[k], ras, color_fn);
    Var rgb_target = tape.constant_view(target_rgb_[k]);
    Var normal_target = tape.constant_view(target_normal_[k]);
    Var mask_target = tape.constant_view(target_mask_[k]);

    Var tr, tm, tn;
    std::vector<std::int32_t> fg;
    if (cfg_.foreground_only) {
      const MatXd& tmask = views_.views[static_cast<std::size_t>(k)].mask.data;
      for (Eigen::Index p = 0; p < ras.num_pixels(); ++p)
        if (tmask(p, 0) > 0.0 || ras.coverage(p) > 0.0)
          fg.push_back(static_cast<std::int32_t>(p));
    }
    if (!fg.empty()) {
      auto rows = TapeT<T>::make_indices(std::move(fg));
      tr = build_l1_loss(tape, rv.rgb, rgb_target, rows);
      tm = build_l1_loss(tape, rv.mask, mask_target, rows);
      tn = build_l1_loss(tape, rv.normal, normal_target, rows);
    } else {
      // Full frame; also the fallback when the foreground union is empty
      // (both images are then pure background and the loss is exactly zero).
      tr = build_l1_loss(tape, rv.rgb, rgb_target);
      tm = build_l1_loss(tape, rv.mask, mask_target);
      tn = build_l1_loss(tape, rv.normal, normal_target);
    }
    rgb_sum = (k == 0) ? tr : tape.add(rgb_sum, tr);
    mask_sum = (k == 0) ? tm : tape.add(mask_sum, tm);
    normal_sum = (k == 0) ? tn : tape.add(normal_sum, tn);
  }

  const LaplacianPlan lap_plan = plan_laplacian(plan.faces, plan.num_duals());
  const NormalPairPlan pair_plan =
      plan_normal_pairs(plan.faces, plan.num_duals());

  LossTermVars tv;
  tv.rgb = tape.scale(rgb_sum, 1.0 / num_views);
  tv.mask = tape.scale(mask_sum, 1.0 / num_views);
  tv.normal = tape.scale(normal_sum, 1.0 / num_views);
  tv.eikonal = build_eikonal(tape, sg.gradient);
  tv.laplacian = build_laplacian(tape, verts, lap_plan);
  tv.consistency = build_normal_consistency(tape, verts, pair_plan);
  Var total = build_total(tape, tv, cfg_.weights);

  LossTerms terms;
  terms.rgb = static_cast<double>(tape.val(tv.rgb)(0, 0));
  terms.mask = static_cast<double>(tape.val(tv.mask)(0, 0));
  terms.normal = static_cast<double>(tape.val(tv.normal)(0, 0));
  terms.eikonal = static_cast<double>(tape.val(tv.eikonal)(0, 0));
  terms.laplacian = static_cast<double>(tape.val(tv.laplacian)(0, 0));
  terms.consistency = static_cast<double>(tape.val(tv.consistency)(0, 0));
  LossBreakdown breakdown = total_loss(terms, cfg_.weights);

  tape.backward(total);

  for (int i = 0; i < store_.size(); ++i)
    if (!grad_seen_[static_cast<std::size_t>(i)] &&
        store_.grad(store_.id_at(i)).squaredNorm() > T(0))
      grad_seen_[static_cast<std::size_t>(i)] = 1;

  adam_step(store_, adam_, lr_per_block_);
  ++iter_;
  return breakdown;
}

template <class T>
TrainResult TrainerT<T>::run() {
  TrainResult out;
  if (iter_ < cfg_.iterations)
    out.log.reserve(static_cast<std::size_t>(cfg_.iterations - iter_));
  while (iter_ < cfg_.iterations) {
    const long it = iter_;
    std::optional<LossBreakdown> bd = step();
    if (bd) out.log.push_back(TrainLogRow{it, *bd});
  }
  out.mesh = textured_mesh();
  out.mean_grad_residual = mean_gradient_residual();
  return out;
}

template <class T>
TriMesh TrainerT<T>::current_mesh() {
  const MatX<T> vals = lattice_values();
  TriMesh mesh = extract_mesh(grid_, vals, store_.value(cells_.alpha),
                              store_.value(cells_.beta));
  if (mesh.num_vertices() > 0)
    mesh.normals = unit_vertex_normals(mesh.vertices, mesh.faces);
  return mesh;
}

template <class T>
TriMesh TrainerT<T>::textured_mesh() {
  TriMesh mesh = current_mesh();
  if (mesh.num_vertices() == 0) return mesh;
  std::vector<CameraPose> poses;
  poses.reserve(views_.views.size());
  for (const View& v : views_.views) poses.push_back(v.pose);
  const VisibilityTable vis = compute_visibility(
      mesh, poses, visibility_depth_tolerance(cfg_.grid_cells));
  auto fallback = [this](const MatXd& pts) -> MatXd {
    const MatX<T> p = pts.cast<T>();
    return field_.color_values(store_, p).template cast<double>();
  };
  return cfg_.orientation_bake
             ? bake_vertex_colors(mesh, views_, vis, fallback)
             : bake_vertex_colors_uniform(mesh, views_, vis, fallback);
}

template <class T>
double TrainerT<T>::mean_gradient_residual() {
  constexpr Eigen::Index kChunk = 32768;
  const Eigen::Index P = lat_world_.rows();
  double sum = 0.0;
  for (Eigen::Index r0 = 0; r0 < P; r0 += kChunk) {
    const Eigen::Index len = std::min<Eigen::Index>(kChunk, P - r0);
    const MatX<T> w = lat_world_.middleRows(r0, len).cast<T>();
    const MatX<T> g = field_.sdf_gradient_values(store_, w);
    for (Eigen::Index i = 0; i < len; ++i)
      sum += std::abs(static_cast<double>(g.row(i).norm()) - 1.0);
  }
  return sum / static_cast<double>(P);
}

template <class T>
void TrainerT<T>::save_checkpoint(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw DataError("checkpoint: cannot open '" + path.string() +
                    "' for writing");
  put_raw(os, kCkptMagic, sizeof kCkptMagic);
  put(os, kCkptVersion);
  put(os, static_cast<std::uint32_t>(sizeof(T)));
  put(os, static_cast<std::int64_t>(iter_));
  put(os, static_cast<std::int64_t>(adam_.step));
  put(os, adam_.hyper.beta1);
  put(os, adam_.hyper.beta2);
  put(os, adam_.hyper.eps);
  put(os, static_cast<std::uint32_t>(store_.size()));
  for (int i = 0; i < store_.size(); ++i) {
    const BlockId id = store_.id_at(i);
    const std::string& name = store_.name(id);
    const MatX<T>& value = store_.value(id);
    put(os, static_cast<std::uint32_t>(name.size()));
    put_raw(os, name.data(), name.size());
    put(os, static_cast<std::int64_t>(value.rows()));
    put(os, static_cast<std::int64_t>(value.cols()));
    const std::size_t bytes =
        static_cast<std::size_t>(value.size()) * sizeof(T);
    put_raw(os, value.data(), bytes);
    put_raw(os, adam_.m[static_cast<std::size_t>(i)].data(), bytes);
    put_raw(os, adam_.v[static_cast<std::size_t>(i)].data(), bytes);
  }
  os.flush();
  if (!os)
    throw DataError("checkpoint: write to '" + path.string() + "' failed");
}

template <class T>
void TrainerT<T>::load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open '" + p + "'");

  char magic[4];
  get_raw(is, magic, sizeof magic, p);
  if (std::memcmp(magic, kCkptMagic, sizeof magic) != 0)
    throw DataError("checkpoint: '" + p + "' is not a checkpoint file");
  if (get<std::uint32_t>(is, p) != kCkptVersion)
    throw DataError("checkpoint: unsupported version in '" + p + "'");
  if (get<std::uint32_t>(is, p) != sizeof(T))
    throw DataError("checkpoint: scalar precision mismatch in '" + p + "'");

  const auto iter = get<std::int64_t>(is, p);
  const auto adam_step_count = get<std::int64_t>(is, p);
  AdamConfig hyper;
  hyper.beta1 = get<double>(is, p);
  hyper.beta2 = get<double>(is, p);
  hyper.eps = get<double>(is, p);
  const auto count = get<std::uint32_t>(is, p);
  if (count != static_cast<std::uint32_t>(store_.size()))
    throw DataError("checkpoint: parameter block count mismatch in '" + p +
                    "'");

  // Stage everything before committing so a mismatch mid-file leaves the
  // session untouched.
  std::vector<MatX<T>> values(count), ms(count), vs(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(is, p);
    if (name_len > 256)
      throw DataError("checkpoint: corrupt block name in '" + p + "'");
    std::string name(name_len, '\0');
    get_raw(is, name.data(), name_len, p);
    const auto rows = get<std::int64_t>(is, p);
    const auto cols = get<std::int64_t>(is, p);

    const BlockId id = store_.id_at(static_cast<int>(i));
    const MatX<T>& current = store_.value(id);
    if (name != store_.name(id) || rows != current.rows() ||
        cols != current.cols())
      throw DataError("checkpoint: block '" + name +
                      "' does not match the current model layout");

    const std::size_t bytes =
        static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) *
        sizeof(T);
    values[i].resize(rows, cols);
    ms[i].resize(rows, cols);
    vs[i].resize(rows, cols);
    get_raw(is, values[i].data(), bytes, p);
    get_raw(is, ms[i].data(), bytes, p);
    get_raw(is, vs[i].data(), bytes, p);
  }

  for (std::uint32_t i = 0; i < count; ++i) {
    store_.value(store_.id_at(static_cast<int>(i))) = std::move(values[i]);
    adam_.m[i] = std::move(ms[i]);
    adam_.v[i] = std::move(vs[i]);
  }
  adam_.hyper = hyper;
  adam_.step = adam_step_count;
  iter_ = iter;
  consecutive_empty_ = 0;
  store_.zero_grads();
}

template class TrainerT<float>;
template class TrainerT<double>;

TrainResult train(const ViewSet& views, const TrainConfig& cfg) {
  TrainerT<float> session(views, cfg);
  return session.run();
}

}  // namespace sv
