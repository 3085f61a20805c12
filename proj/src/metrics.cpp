#include "sv/metrics.hpp"

#include "sv/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <unordered_map>
#include <vector>

namespace sv {

namespace {

void require_sampleable(const TriMesh& mesh, int n) {
  if (n < 1) throw ConfigError("metrics: sample count must be positive");
  if (mesh.num_vertices() == 0 || mesh.num_faces() == 0)
    throw DataError("metrics: cannot sample an empty mesh");
}

// FNV-1a over the raw vertex and face bytes.  Mixing this into the sample
// seed ties each mesh's point stream to its content, so swapping the
// arguments of chamfer/fscore reuses the exact same samples per mesh.
std::uint64_t content_hash(const TriMesh& mesh) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  mix(mesh.vertices.data(), sizeof(double) * mesh.vertices.size());
  mix(mesh.faces.data(), sizeof(std::int32_t) * mesh.faces.size());
  return h;
}

MatXd sample_with_rng(const TriMesh& mesh, int n, Rng& rng) {
  const Eigen::Index nf = mesh.num_faces();
  std::vector<double> cumulative(static_cast<std::size_t>(nf));
  double total = 0.0;
  for (Eigen::Index f = 0; f < nf; ++f) {
    Eigen::RowVector3d a = mesh.vertices.row(mesh.faces(f, 0));
    Eigen::RowVector3d e1 = mesh.vertices.row(mesh.faces(f, 1)) - a;
    Eigen::RowVector3d e2 = mesh.vertices.row(mesh.faces(f, 2)) - a;
    total += 0.5 * e1.cross(e2).norm();
    cumulative[static_cast<std::size_t>(f)] = total;
  }
  if (!(total > 0.0))
    throw DataError("metrics: mesh has no surface area to sample");

  MatXd pts(n, 3);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform01() * total;
    auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    Eigen::Index f = it == cumulative.end()
                         ? nf - 1
                         : static_cast<Eigen::Index>(it - cumulative.begin());
    // Square-root warp gives uniform density over the triangle.
    double r1 = std::sqrt(rng.uniform01());
    double r2 = rng.uniform01();
    double b0 = 1.0 - r1, b1 = r1 * (1.0 - r2), b2 = r1 * r2;
    pts.row(i) = b0 * mesh.vertices.row(mesh.faces(f, 0)) +
                 b1 * mesh.vertices.row(mesh.faces(f, 1)) +
                 b2 * mesh.vertices.row(mesh.faces(f, 2));
  }
  return pts;
}

MatXd content_seeded_samples(const TriMesh& mesh, int n, std::uint64_t seed) {
  Rng rng(content_hash(mesh) ^ seed);
  return sample_with_rng(mesh, n, rng);
}

// Uniform hash grid over a fixed point set, answering nearest-neighbor
// distance queries by expanding Chebyshev shells of cells.
class PointGrid {
 public:
  explicit PointGrid(const MatXd& pts) : pts_(pts) {
    lo_ = pts.colwise().minCoeff();
    Eigen::RowVector3d extent = pts.colwise().maxCoeff() - lo_;
    double target = std::cbrt(static_cast<double>(pts.rows()));
    h_ = std::max(extent.maxCoeff() / std::max(target, 1.0), 1e-12);
    for (int c = 0; c < 3; ++c)
      span_[c] = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(std::floor(extent[c] / h_)) + 1);
    cells_.reserve(static_cast<std::size_t>(pts.rows()));
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
      cells_[key(cell_of(pts.row(i)))].push_back(static_cast<std::int32_t>(i));
  }

  double nearest_distance(const Eigen::RowVector3d& q) const {
    const std::array<std::int64_t, 3> cq = cell_of(q);
    // Rings beyond this cover no cells at all, from any query position.
    std::int64_t kmax = 0;
    for (int c = 0; c < 3; ++c)
      kmax = std::max({kmax, std::abs(cq[c]), std::abs(span_[c] - 1 - cq[c])});

    double best = std::numeric_limits<double>::infinity();
    for (std::int64_t k = 0; k <= kmax; ++k) {
      for (std::int64_t dz = -k; dz <= k; ++dz)
        for (std::int64_t dy = -k; dy <= k; ++dy)
          for (std::int64_t dx = -k; dx <= k; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != k)
              continue;
            std::array<std::int64_t, 3> c = {cq[0] + dx, cq[1] + dy,
                                             cq[2] + dz};
            if (c[0] < 0 || c[0] >= span_[0] || c[1] < 0 || c[1] >= span_[1] ||
                c[2] < 0 || c[2] >= span_[2])
              continue;
            auto it = cells_.find(key(c));
            if (it == cells_.end()) continue;
            for (std::int32_t idx : it->second)
              best = std::min(best, (pts_.row(idx) - q).norm());
          }
      // A cell at Chebyshev ring k+1 is at least k whole cells away.
      if (best <= static_cast<double>(k) * h_) break;
    }
    return best;
  }

 private:
  std::array<std::int64_t, 3> cell_of(const Eigen::RowVector3d& p) const {
    std::array<std::int64_t, 3> c;
    for (int i = 0; i < 3; ++i)
      c[i] = static_cast<std::int64_t>(std::floor((p[i] - lo_[i]) / h_));
    return c;
  }

  static std::int64_t key(const std::array<std::int64_t, 3>& c) {
    return (c[0] << 42) ^ (c[1] << 21) ^ c[2];
  }

  const MatXd& pts_;
  Eigen::RowVector3d lo_;
  double h_ = 1.0;
  std::int64_t span_[3] = {1, 1, 1};
  std::unordered_map<std::int64_t, std::vector<std::int32_t>> cells_;
};

double mean_nearest(const MatXd& from, const PointGrid& to) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < from.rows(); ++i)
    acc += to.nearest_distance(from.row(i));
  return acc / static_cast<double>(from.rows());
}

double fraction_within(const MatXd& from, const PointGrid& to, double tau) {
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < from.rows(); ++i)
    hits += to.nearest_distance(from.row(i)) <= tau;
  return static_cast<double>(hits) / static_cast<double>(from.rows());
}

// Parity ray casting: one +x ray per (y, z) voxel line, crossings gathered
// per line with a 2D triangle binning pass.
struct Voxelizer {
  int res;
  Eigen::RowVector3d lo, hi;
  double step[3];

  Voxelizer(int res_, const Eigen::RowVector3d& lo_,
            const Eigen::RowVector3d& hi_)
      : res(res_), lo(lo_), hi(hi_) {
    for (int c = 0; c < 3; ++c)
      step[c] = (hi[c] - lo[c]) / static_cast<double>(res);
  }

  double center(int axis, int i) const {
    return lo[axis] + (i + 0.5) * step[axis];
  }

  std::vector<bool> occupancy(const TriMesh& mesh) const {
    const Eigen::Index nf = mesh.num_faces();

    // Bin triangles by the (y, z) voxel columns their bbox overlaps.
    std::vector<std::vector<std::int32_t>> bins(
        static_cast<std::size_t>(res) * res);
    for (Eigen::Index f = 0; f < nf; ++f) {
      Eigen::Matrix3d tri;
      for (int v = 0; v < 3; ++v) tri.row(v) = mesh.vertices.row(mesh.faces(f, v));
      double ymin = tri.col(1).minCoeff(), ymax = tri.col(1).maxCoeff();
      double zmin = tri.col(2).minCoeff(), zmax = tri.col(2).maxCoeff();
      int iy0 = std::clamp(
          static_cast<int>(std::floor((ymin - lo[1]) / step[1] - 0.5)), 0,
          res - 1);
      int iy1 = std::clamp(
          static_cast<int>(std::ceil((ymax - lo[1]) / step[1] - 0.5)), 0,
          res - 1);
      int iz0 = std::clamp(
          static_cast<int>(std::floor((zmin - lo[2]) / step[2] - 0.5)), 0,
          res - 1);
      int iz1 = std::clamp(
          static_cast<int>(std::ceil((zmax - lo[2]) / step[2] - 0.5)), 0,
          res - 1);
      for (int iz = iz0; iz <= iz1; ++iz)
        for (int iy = iy0; iy <= iy1; ++iy)
          bins[static_cast<std::size_t>(iz) * res + iy].push_back(
              static_cast<std::int32_t>(f));
    }

    std::vector<bool> occ(static_cast<std::size_t>(res) * res * res, false);
    std::vector<double> xs;
    for (int iz = 0; iz < res; ++iz) {
      const double z = center(2, iz);
      for (int iy = 0; iy < res; ++iy) {
        const double y = center(1, iy);
        xs.clear();
        for (std::int32_t f : bins[static_cast<std::size_t>(iz) * res + iy]) {
          const Eigen::RowVector3d a = mesh.vertices.row(mesh.faces(f, 0));
          const Eigen::RowVector3d b = mesh.vertices.row(mesh.faces(f, 1));
          const Eigen::RowVector3d c = mesh.vertices.row(mesh.faces(f, 2));
          // 2D barycentrics in the (y, z) projection.
          const double d00 = (b[1] - a[1]) * (c[2] - a[2]) -
                             (b[2] - a[2]) * (c[1] - a[1]);
          if (d00 == 0.0) continue;  // projects to a segment
          const double w0 = ((b[1] - y) * (c[2] - z) - (b[2] - z) * (c[1] - y)) / d00;
          const double w1 = ((c[1] - y) * (a[2] - z) - (c[2] - z) * (a[1] - y)) / d00;
          const double w2 = 1.0 - w0 - w1;
          if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
          xs.push_back(w0 * a[0] + w1 * b[0] + w2 * c[0]);
        }
        std::sort(xs.begin(), xs.end());

        std::size_t next = 0;
        bool inside = false;
        for (int ix = 0; ix < res; ++ix) {
          const double x = center(0, ix);
          while (next < xs.size() && xs[next] <= x) {
            inside = !inside;
            ++next;
          }
          if (inside)
            occ[(static_cast<std::size_t>(iz) * res + iy) *
                    static_cast<std::size_t>(res) +
                ix] = true;
        }
      }
    }
    return occ;
  }
};

void require_watertight(const TriMesh& mesh, const char* which) {
  if (!analyze_topology(mesh).watertight)
    throw DataError(std::string("metrics: ") + which +
                    " mesh must be watertight for volume IoU");
}

}  // namespace

MatXd sample_surface(const TriMesh& mesh, int n, std::uint64_t seed) {
  require_sampleable(mesh, n);
  Rng rng(seed);
  return sample_with_rng(mesh, n, rng);
}

double chamfer(const TriMesh& a, const TriMesh& b, int n, std::uint64_t seed) {
  require_sampleable(a, n);
  require_sampleable(b, n);
  MatXd pa = content_seeded_samples(a, n, seed);
  MatXd pb = content_seeded_samples(b, n, seed);
  PointGrid ga(pa), gb(pb);
  return 0.5 * (mean_nearest(pa, gb) + mean_nearest(pb, ga));
}

double volume_iou(const TriMesh& a, const TriMesh& b, int res) {
  if (res < 8) throw ConfigError("metrics: voxel resolution must be >= 8");
  if (a.num_faces() == 0 || b.num_faces() == 0)
    throw DataError("metrics: cannot voxelize an empty mesh");
  require_watertight(a, "first");
  require_watertight(b, "second");

  Eigen::RowVector3d lo =
      a.vertices.colwise().minCoeff().cwiseMin(b.vertices.colwise().minCoeff());
  Eigen::RowVector3d hi =
      a.vertices.colwise().maxCoeff().cwiseMax(b.vertices.colwise().maxCoeff());
  // Pad so boundary faces never sit exactly on the voxel lattice.
  Eigen::RowVector3d pad =
      ((hi - lo).maxCoeff() * 1e-3 + 1e-9) * Eigen::RowVector3d::Ones();
  Voxelizer vox(res, lo - pad, hi + pad);

  std::vector<bool> oa = vox.occupancy(a);
  std::vector<bool> ob = vox.occupancy(b);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < oa.size(); ++i) {
    inter += oa[i] && ob[i];
    uni += oa[i] || ob[i];
  }
  if (uni == 0) return 1.0;  // both below resolution: identical emptiness
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double fscore(const TriMesh& a, const TriMesh& b, double tau, int n,
              std::uint64_t seed) {
  if (!(tau > 0.0)) throw ConfigError("metrics: f-score threshold must be positive");
  require_sampleable(a, n);
  require_sampleable(b, n);
  MatXd pa = content_seeded_samples(a, n, seed);
  MatXd pb = content_seeded_samples(b, n, seed);
  PointGrid ga(pa), gb(pb);
  double precision = fraction_within(pa, gb, tau);
  double recall = fraction_within(pb, ga, tau);
  if (precision + recall == 0.0) return 0.0;
  return 200.0 * precision * recall / (precision + recall);
}

double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw DataError("metrics: image shapes do not match");
  if (a.num_pixels() == 0) throw DataError("metrics: empty images");
  double mse = (a.data - b.data).squaredNorm() /
               static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

NormalizeTransform normalization_for(const TriMesh& reference) {
  if (reference.num_vertices() == 0)
    throw DataError("metrics: cannot normalize an empty mesh");
  Eigen::RowVector3d lo = reference.vertices.colwise().minCoeff();
  Eigen::RowVector3d hi = reference.vertices.colwise().maxCoeff();
  double diag = (hi - lo).norm();
  if (!(diag > 0.0))
    throw DataError("metrics: reference mesh has a degenerate bounding box");
  NormalizeTransform t;
  t.center = 0.5 * (lo + hi);
  t.scale = 2.0 / diag;
  return t;
}

TriMesh normalized(const TriMesh& mesh, const NormalizeTransform& t) {
  TriMesh out = mesh;
  out.vertices = (mesh.vertices.rowwise() - t.center) * t.scale;
  return out;
}

std::string EvalReport::json_string() const {
  nlohmann::json j;
  j["chamfer"] = chamfer;
  j["chamfer_kind"] = chamfer_kind;
  j["volume_iou"] = volume_iou;
  j["fscore_percent"] = fscore_percent;
  j["fscore_tau"] = fscore_tau;
  if (psnr_mean_db) j["psnr_mean_db"] = *psnr_mean_db;
  j["samples"] = samples;
  j["voxel_res"] = voxel_res;
  j["seed"] = seed;
  return j.dump(2);
}

EvalReport evaluate_geometry(const TriMesh& candidate,
                             const TriMesh& reference,
                             const EvalOptions& opt) {
  NormalizeTransform t = normalization_for(reference);
  TriMesh cand = normalized(candidate, t);
  TriMesh ref = normalized(reference, t);

  EvalReport report;
  report.samples = opt.samples;
  report.voxel_res = opt.voxel_res;
  report.fscore_tau = opt.fscore_tau;
  report.seed = opt.seed;
  report.chamfer = sv::chamfer(cand, ref, opt.samples, opt.seed);
  report.volume_iou = sv::volume_iou(cand, ref, opt.voxel_res);
  report.fscore_percent =
      sv::fscore(cand, ref, opt.fscore_tau, opt.samples, opt.seed);
  return report;
}

}  // namespace sv
