#include "sv/dataio.hpp"

#include "sv/errors.hpp"
#include "sv/extraction.hpp"
#include "sv/grid.hpp"

#include "json.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

static_assert(std::endian::native == std::endian::little,
              "binary PLY writer assumes a little-endian host");

namespace sv {
namespace {

constexpr int kTraceSteps = 256;
constexpr double kHitEps = 1e-5;

std::string view_file(int i, const char* kind) {
  return "view_" + std::to_string(i) + "_" + kind + ".png";
}

// ------------------------------------------------------------------- png
// libpng longjmps to the setjmp point on error, so these helpers keep the
// jump frame free of C++ object churn: buffers are allocated up front and
// the error path only closes C handles.

// Default libpng handlers print to stderr before jumping; we report through
// DataError instead, so keep the console quiet.
void png_quiet_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
void png_quiet_warning(png_structp, png_const_charp) {}

bool write_png_impl(const char* path, int w, int h, int ch,
                    std::vector<unsigned char>& bytes,
                    std::vector<png_bytep>& rows, std::string& err) {
  FILE* fp = std::fopen(path, "wb");
  if (!fp) {
    err = "cannot open for writing";
    return false;
  }
  png_structp png = png_create_write_struct(
      PNG_LIBPNG_VER_STRING, nullptr, png_quiet_error, png_quiet_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    err = "libpng init failed";
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    err = "libpng write error";
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), 8,
               ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] =
        bytes.data() + static_cast<size_t>(y) * w * ch;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  return true;
}

bool read_png_impl(const char* path, int& w, int& h, int& ch,
                   std::vector<unsigned char>& bytes,
                   std::vector<png_bytep>& rows, std::string& err) {
  FILE* fp = std::fopen(path, "rb");
  if (!fp) {
    err = "cannot open";
    return false;
  }
  png_structp png = png_create_read_struct(
      PNG_LIBPNG_VER_STRING, nullptr, png_quiet_error, png_quiet_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    err = "libpng init failed";
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    err = "not a decodable png";
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  // Fold everything to 8-bit gray or RGB.
  png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA)
    png_set_strip_alpha(png);
  png_read_update_info(png, info);

  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  ch = static_cast<int>(png_get_channels(png, info));
  if ((ch != 1 && ch != 3) || w < 1 || h < 1) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    err = "unsupported channel layout";
    return false;
  }
  bytes.resize(static_cast<size_t>(w) * h * ch);
  rows.resize(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] =
        bytes.data() + static_cast<size_t>(y) * w * ch;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return true;
}

Image mask_to_single_channel(Image img) {
  if (img.channels != 3) return img;
  Image out(img.width, img.height, 1);
  out.data.col(0) = img.data.rowwise().mean();
  return out;
}

}  // namespace

void ViewSet::validate() const {
  if (views.size() != 6)
    throw DataError("dataset: expected 6 views, have " +
                    std::to_string(views.size()));
  int w = views[0].rgb.width, h = views[0].rgb.height;
  for (size_t i = 0; i < views.size(); ++i) {
    const View& v = views[i];
    const std::string tag = "dataset: view " + std::to_string(i);
    if (v.rgb.channels != 3)
      throw DataError(tag + " rgb must have 3 channels");
    if (v.normal.channels != 3)
      throw DataError(tag + " normal must have 3 channels");
    if (v.mask.channels != 1)
      throw DataError(tag + " mask must have 1 channel");
    for (const Image* img : {&v.rgb, &v.normal, &v.mask})
      if (img->width != w || img->height != h)
        throw DataError(tag + " images must share one resolution");
    v.rgb.validate(tag + " rgb");
    v.normal.validate(tag + " normal");
    v.mask.validate(tag + " mask");
    for (size_t j = 0; j < i; ++j)
      if (std::abs(views[j].pose.azimuth_deg - v.pose.azimuth_deg) < 1e-9 &&
          std::abs(views[j].pose.elevation_deg - v.pose.elevation_deg) < 1e-9)
        throw DataError("dataset: views " + std::to_string(j) + " and " +
                        std::to_string(i) + " share a camera pose");
  }
}

std::vector<CameraPose> canonical_poses() {
  std::vector<CameraPose> poses(6);
  for (int i = 0; i < 6; ++i) {
    poses[i].azimuth_deg = 30.0 + 60.0 * i;
    poses[i].elevation_deg = i % 2 == 0 ? -10.0 : 20.0;
    poses[i].radius = 3.0;
  }
  return poses;
}

ViewSet generate_views(const SyntheticScene& scene,
                       const std::vector<CameraPose>& poses, int resolution,
                       bool headlight) {
  if (resolution < 1)
    throw ConfigError("dataset: resolution must be positive");
  if (!(scene.shape.lipschitz > 0.0))
    throw ConfigError("dataset: scene needs a positive Lipschitz bound");

  ViewSet out;
  out.views.reserve(poses.size());
  const double inv_l = 1.0 / scene.shape.lipschitz;

  for (CameraPose pose : poses) {
    pose.width = pose.height = resolution;
    CameraBasis cam = camera_basis(pose);

    View view;
    view.pose = pose;
    view.rgb = Image::solid(resolution, resolution,
                            Eigen::RowVector3d(1.0, 1.0, 1.0));
    view.normal = Image::solid(resolution, resolution,
                               Eigen::RowVector3d(0.5, 0.5, 1.0));
    view.mask = Image(resolution, resolution, 1);

    for (int y = 0; y < resolution; ++y)
      for (int x = 0; x < resolution; ++x) {
        Eigen::Vector3d origin, dir;
        cam.pixel_ray(x + 0.5, y + 0.5, origin, dir);

        double t = 0.0;
        bool hit = false;
        Eigen::RowVector3d p;
        for (int step = 0; step < kTraceSteps; ++step) {
          p = (origin + t * dir).transpose();
          double f = scene.shape.value(p);
          if (f < kHitEps) {
            hit = true;
            break;
          }
          t += f * inv_l;
          if (t > pose.far_clip) break;
        }
        if (!hit) continue;

        Eigen::RowVector3d g = scene.shape.gradient(p);
        double gn = g.norm();
        Eigen::Vector3d n =
            gn < 1e-12 ? -dir : Eigen::Vector3d(g.transpose() / gn);
        Eigen::Vector3d ncam = cam.normal_to_cam(n);
        for (int c = 0; c < 3; ++c)
          view.normal.at(x, y, c) = 0.5 * (ncam[c] + 1.0);

        Eigen::RowVector3d col = scene.albedo(p);
        if (headlight) col *= std::max(-dir.dot(n), 0.0);
        for (int c = 0; c < 3; ++c)
          view.rgb.at(x, y, c) = std::clamp(col[c], 0.0, 1.0);
        view.mask.at(x, y, 0) = 1.0;
      }
    out.views.push_back(std::move(view));
  }
  return out;
}

// ---------------------------------------------------------------- png api

Image quantize8(const Image& img) {
  Image out = img;
  out.data = (img.data.array().max(0.0).min(1.0) * 255.0)
                 .round()
                 .matrix() /
             255.0;
  return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  img.validate("png: " + path.string());
  std::vector<unsigned char> bytes(
      static_cast<size_t>(img.num_pixels()) * img.channels);
  for (Eigen::Index pix = 0; pix < img.num_pixels(); ++pix)
    for (int c = 0; c < img.channels; ++c)
      bytes[static_cast<size_t>(pix) * img.channels + c] =
          static_cast<unsigned char>(
              std::lround(std::clamp(img.data(pix, c), 0.0, 1.0) * 255.0));
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  std::string err;
  if (!write_png_impl(path.string().c_str(), img.width, img.height,
                      img.channels, bytes, rows, err))
    throw DataError("png: " + path.string() + ": " + err);
}

Image read_png(const std::filesystem::path& path) {
  int w = 0, h = 0, ch = 0;
  std::vector<unsigned char> bytes;
  std::vector<png_bytep> rows;
  std::string err;
  if (!read_png_impl(path.string().c_str(), w, h, ch, bytes, rows, err))
    throw DataError("png: " + path.string() + ": " + err);
  Image img(w, h, ch);
  for (Eigen::Index pix = 0; pix < img.num_pixels(); ++pix)
    for (int c = 0; c < ch; ++c)
      img.data(pix, c) =
          bytes[static_cast<size_t>(pix) * ch + c] / 255.0;
  return img;
}

// ----------------------------------------------------------- dataset disk

void save_dataset(const std::filesystem::path& dir, const ViewSet& set) {
  set.validate();
  const CameraPose& p0 = set.views[0].pose;
  for (const View& v : set.views)
    if (v.pose.radius != p0.radius || v.pose.fov_deg != p0.fov_deg ||
        v.pose.width != p0.width || v.pose.height != p0.height)
      throw DataError(
          "dataset: poses must share radius, fov, and resolution");

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  nlohmann::json j;
  j["radius"] = p0.radius;
  j["fov_deg"] = p0.fov_deg;
  j["width"] = set.views[0].rgb.width;
  j["height"] = set.views[0].rgb.height;
  j["views"] = nlohmann::json::array();
  for (const View& v : set.views)
    j["views"].push_back({{"azimuth_deg", v.pose.azimuth_deg},
                          {"elevation_deg", v.pose.elevation_deg}});
  std::ofstream os(dir / "cameras.json");
  os << j.dump(2) << "\n";
  if (!os)
    throw DataError("dataset: cannot write " +
                    (dir / "cameras.json").string());

  for (size_t i = 0; i < set.views.size(); ++i) {
    const View& v = set.views[i];
    int k = static_cast<int>(i);
    write_png(dir / view_file(k, "rgb"), quantize8(v.rgb));
    write_png(dir / view_file(k, "normal"), quantize8(v.normal));
    write_png(dir / view_file(k, "mask"), quantize8(v.mask));
  }
}

ViewSet load_dataset(const std::filesystem::path& dir) {
  const std::filesystem::path cam_path = dir / "cameras.json";
  std::ifstream is(cam_path);
  if (!is) throw DataError("dataset: missing file " + cam_path.string());

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset: malformed cameras.json: " +
                    std::string(e.what()));
  }

  ViewSet set;
  try {
    const double radius = j.at("radius").get<double>();
    const double fov = j.at("fov_deg").get<double>();
    const int w = j.at("width").get<int>();
    const int h = j.at("height").get<int>();
    for (const auto& jv : j.at("views")) {
      View view;
      view.pose.azimuth_deg = jv.at("azimuth_deg").get<double>();
      view.pose.elevation_deg = jv.at("elevation_deg").get<double>();
      view.pose.radius = radius;
      view.pose.fov_deg = fov;
      view.pose.width = w;
      view.pose.height = h;
      set.views.push_back(std::move(view));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset: cameras.json missing field: " +
                    std::string(e.what()));
  }

  for (size_t i = 0; i < set.views.size(); ++i) {
    View& view = set.views[i];
    int k = static_cast<int>(i);
    const std::pair<const char*, Image*> parts[3] = {
        {"rgb", &view.rgb}, {"normal", &view.normal}, {"mask", &view.mask}};
    for (auto [kind, target] : parts) {
      std::filesystem::path p = dir / view_file(k, kind);
      if (!std::filesystem::exists(p))
        throw DataError("dataset: missing file " + p.string());
      *target = read_png(p);
      if (target->width != view.pose.width ||
          target->height != view.pose.height)
        throw DataError("dataset: " + p.string() +
                        " does not match the cameras.json resolution");
    }
    view.mask = mask_to_single_channel(std::move(view.mask));
  }
  set.validate();
  return set;
}

// ---------------------------------------------------------------- meshes

namespace {

void export_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("mesh: cannot write " + path.string());
  os.precision(9);
  const bool colored = mesh.has_colors();
  for (Eigen::Index v = 0; v < mesh.num_vertices(); ++v) {
    os << "v " << mesh.vertices(v, 0) << " " << mesh.vertices(v, 1) << " "
       << mesh.vertices(v, 2);
    if (colored)
      os << " " << mesh.colors(v, 0) << " " << mesh.colors(v, 1) << " "
         << mesh.colors(v, 2);
    os << "\n";
  }
  for (Eigen::Index f = 0; f < mesh.num_faces(); ++f)
    os << "f " << mesh.faces(f, 0) + 1 << " " << mesh.faces(f, 1) + 1 << " "
       << mesh.faces(f, 2) + 1 << "\n";
  if (!os) throw DataError("mesh: cannot write " + path.string());
}

TriMesh import_obj(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("mesh: cannot read " + path.string());
  std::vector<Eigen::RowVector3d> verts, colors;
  std::vector<Eigen::RowVector3i> faces;
  bool all_colored = true;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z))
        throw DataError("mesh: malformed vertex line in " + path.string());
      verts.emplace_back(x, y, z);
      double r, g, b;
      if (ls >> r >> g >> b)
        colors.emplace_back(r, g, b);
      else
        all_colored = false;
    } else if (tag == "f") {
      std::string tok;
      int idx[3];
      for (int k = 0; k < 3; ++k) {
        if (!(ls >> tok))
          throw DataError("mesh: malformed face line in " + path.string());
        // "7", "7/1", "7/1/3" all reference vertex 7.
        idx[k] = std::atoi(tok.c_str());
        if (idx[k] < 1)
          throw DataError("mesh: unsupported face index in " + path.string());
        idx[k] -= 1;
      }
      faces.emplace_back(idx[0], idx[1], idx[2]);
    }
  }
  TriMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(i) = verts[i];
  if (all_colored && colors.size() == verts.size() && !colors.empty()) {
    mesh.colors.resize(mesh.vertices.rows(), 3);
    for (size_t i = 0; i < colors.size(); ++i) mesh.colors.row(i) = colors[i];
  }
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (size_t i = 0; i < faces.size(); ++i) mesh.faces.row(i) = faces[i];
  if (mesh.faces.size() > 0 && mesh.num_vertices() > 0 &&
      (mesh.faces.maxCoeff() >= mesh.num_vertices() ||
       mesh.faces.minCoeff() < 0))
    throw DataError("mesh: face index out of range in " + path.string());
  if (mesh.faces.size() > 0 && mesh.num_vertices() == 0)
    throw DataError("mesh: face index out of range in " + path.string());
  return mesh;
}

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void export_ply(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("mesh: cannot write " + path.string());
  const bool colored = mesh.has_colors();
  os << "ply\nformat binary_little_endian 1.0\n";
  os << "element vertex " << mesh.num_vertices() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  if (colored)
    os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "element face " << mesh.num_faces() << "\n";
  os << "property list uchar int vertex_indices\nend_header\n";
  for (Eigen::Index v = 0; v < mesh.num_vertices(); ++v) {
    for (int c = 0; c < 3; ++c)
      put(os, static_cast<float>(mesh.vertices(v, c)));
    if (colored)
      for (int c = 0; c < 3; ++c)
        put(os, static_cast<unsigned char>(std::lround(
                    std::clamp(mesh.colors(v, c), 0.0, 1.0) * 255.0)));
  }
  for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
    put(os, static_cast<unsigned char>(3));
    for (int c = 0; c < 3; ++c)
      put(os, static_cast<std::int32_t>(mesh.faces(f, c)));
  }
  if (!os) throw DataError("mesh: cannot write " + path.string());
}

TriMesh import_ply(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("mesh: cannot read " + path.string());
  auto bad = [&](const std::string& why) {
    return DataError("mesh: " + why + " in " + path.string());
  };

  std::string line;
  std::getline(is, line);
  if (line != "ply") throw bad("not a ply file");
  Eigen::Index nv = -1, nf = -1;
  bool colored = false, in_vertex = false;
  std::vector<std::string> vprops;
  while (std::getline(is, line)) {
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "comment") continue;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian")
        throw bad("unsupported ply format '" + fmt + "'");
    } else if (tag == "element") {
      std::string which;
      Eigen::Index count;
      ls >> which >> count;
      in_vertex = which == "vertex";
      if (which == "vertex")
        nv = count;
      else if (which == "face")
        nf = count;
      else
        throw bad("unsupported ply element '" + which + "'");
    } else if (tag == "property") {
      std::string type, name;
      ls >> type;
      if (type == "list") {
        std::string ct, it;
        ls >> ct >> it >> name;
        if (ct != "uchar" || (it != "int" && it != "int32") ||
            name != "vertex_indices")
          throw bad("unsupported ply face layout");
      } else {
        ls >> name;
        if (in_vertex) vprops.push_back(type + " " + name);
      }
    }
  }
  if (nv < 0 || nf < 0) throw bad("truncated ply header");
  if (vprops.size() >= 3 && vprops[0] == "float x" && vprops[1] == "float y" &&
      vprops[2] == "float z") {
    if (vprops.size() == 6 && vprops[3] == "uchar red" &&
        vprops[4] == "uchar green" && vprops[5] == "uchar blue")
      colored = true;
    else if (vprops.size() != 3)
      throw bad("unsupported ply vertex layout");
  } else {
    throw bad("unsupported ply vertex layout");
  }

  TriMesh mesh;
  mesh.vertices.resize(nv, 3);
  if (colored) mesh.colors.resize(nv, 3);
  for (Eigen::Index v = 0; v < nv; ++v) {
    float xyz[3];
    is.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
    for (int c = 0; c < 3; ++c) mesh.vertices(v, c) = xyz[c];
    if (colored) {
      unsigned char rgb[3];
      is.read(reinterpret_cast<char*>(rgb), sizeof(rgb));
      for (int c = 0; c < 3; ++c) mesh.colors(v, c) = rgb[c] / 255.0;
    }
  }
  mesh.faces.resize(nf, 3);
  for (Eigen::Index f = 0; f < nf; ++f) {
    unsigned char count;
    is.read(reinterpret_cast<char*>(&count), 1);
    if (count != 3) throw bad("non-triangle ply face");
    std::int32_t idx[3];
    is.read(reinterpret_cast<char*>(idx), sizeof(idx));
    for (int c = 0; c < 3; ++c) mesh.faces(f, c) = idx[c];
  }
  if (!is) throw bad("truncated ply data");
  if (mesh.faces.size() > 0 &&
      (mesh.faces.minCoeff() < 0 || mesh.faces.maxCoeff() >= nv))
    throw bad("face index out of range");
  return mesh;
}

}  // namespace

void export_mesh(const TriMesh& mesh, const std::filesystem::path& path,
                 MeshFormat format) {
  if (format == MeshFormat::kObj)
    export_obj(mesh, path);
  else
    export_ply(mesh, path);
}

TriMesh import_mesh(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (ext == ".obj") return import_obj(path);
  if (ext == ".ply") return import_ply(path);
  throw ConfigError("mesh: unsupported extension '" + ext + "'");
}

TriMesh reference_mesh(const SyntheticScene& scene, int cells) {
  GridTopology grid(cells);
  MatXd pts = grid.corner_positions<double>();
  MatXd values(grid.num_corners(), 1);
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    values(i, 0) = scene.shape.value(pts.row(i));

  TriMesh mesh = extract_mesh(grid, values);
  mesh.colors.resize(mesh.num_vertices(), 3);
  for (Eigen::Index v = 0; v < mesh.num_vertices(); ++v) {
    Eigen::RowVector3d c = scene.albedo(mesh.vertices.row(v));
    mesh.colors.row(v) = c.cwiseMax(0.0).cwiseMin(1.0);
  }
  mesh.normals = vertex_normals(mesh.vertices, mesh.faces);
  for (Eigen::Index v = 0; v < mesh.normals.rows(); ++v) {
    double n = mesh.normals.row(v).norm();
    if (n > 1e-12) mesh.normals.row(v) /= n;
  }
  return mesh;
}

}  // namespace sv
