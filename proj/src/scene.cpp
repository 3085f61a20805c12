#include "sv/scene.hpp"

#include "sv/errors.hpp"

#include <algorithm>
#include <cmath>

namespace sv {
namespace {

using Vec = Eigen::RowVector3d;

Vec safe_dir(const Vec& v) {
  double n = v.norm();
  return n < 1e-12 ? Vec(1, 0, 0) : Vec(v / n);
}

double sign_of(double x) { return x >= 0.0 ? 1.0 : -1.0; }

}  // namespace

SdfNode sdf_sphere(const Vec& center, double radius) {
  SdfNode n;
  n.value = [=](const Vec& p) { return (p - center).norm() - radius; };
  n.gradient = [=](const Vec& p) { return safe_dir(p - center); };
  return n;
}

SdfNode sdf_box(const Vec& center, const Vec& half_extent) {
  SdfNode n;
  n.value = [=](const Vec& p) {
    Vec q = (p - center).cwiseAbs() - half_extent;
    double inside = std::min(q.maxCoeff(), 0.0);
    return q.cwiseMax(0.0).norm() + inside;
  };
  n.gradient = [=](const Vec& p) {
    Vec d = p - center;
    Vec q = d.cwiseAbs() - half_extent;
    if ((q.array() > 0.0).any()) {
      Vec outer = q.cwiseMax(0.0);
      Vec g = safe_dir(outer);
      for (int i = 0; i < 3; ++i) g[i] *= sign_of(d[i]);
      return g;
    }
    // Inside: face of the least-negative axis.
    int axis = 0;
    q.maxCoeff(&axis);
    Vec g = Vec::Zero();
    g[axis] = sign_of(d[axis]);
    return g;
  };
  return n;
}

SdfNode sdf_torus(const Vec& center, double major, double minor) {
  SdfNode n;
  n.value = [=](const Vec& p) {
    Vec d = p - center;
    double ring = std::hypot(d.x(), d.y()) - major;
    return std::hypot(ring, d.z()) - minor;
  };
  n.gradient = [=](const Vec& p) {
    Vec d = p - center;
    double axial = std::hypot(d.x(), d.y());
    double cx = axial < 1e-12 ? 1.0 : d.x() / axial;
    double cy = axial < 1e-12 ? 0.0 : d.y() / axial;
    double ring = axial - major;
    double qn = std::hypot(ring, d.z());
    if (qn < 1e-12) return Vec(0, 0, 1);
    return Vec(ring / qn * cx, ring / qn * cy, d.z() / qn);
  };
  return n;
}

SdfNode sdf_capsule(const Vec& a, const Vec& b, double radius) {
  SdfNode n;
  double len2 = std::max((b - a).squaredNorm(), 1e-24);
  n.value = [=](const Vec& p) {
    double t = std::clamp((p - a).dot(b - a) / len2, 0.0, 1.0);
    return (p - (a + t * (b - a))).norm() - radius;
  };
  n.gradient = [=](const Vec& p) {
    double t = std::clamp((p - a).dot(b - a) / len2, 0.0, 1.0);
    return safe_dir(p - (a + t * (b - a)));
  };
  return n;
}

SdfNode sdf_union(SdfNode a, SdfNode b) {
  SdfNode n;
  n.lipschitz = std::max(a.lipschitz, b.lipschitz);
  n.value = [a, b](const Vec& p) { return std::min(a.value(p), b.value(p)); };
  n.gradient = [a, b](const Vec& p) {
    return a.value(p) <= b.value(p) ? a.gradient(p) : b.gradient(p);
  };
  return n;
}

SdfNode sdf_intersection(SdfNode a, SdfNode b) {
  SdfNode n;
  n.lipschitz = std::max(a.lipschitz, b.lipschitz);
  n.value = [a, b](const Vec& p) { return std::max(a.value(p), b.value(p)); };
  n.gradient = [a, b](const Vec& p) {
    return a.value(p) >= b.value(p) ? a.gradient(p) : b.gradient(p);
  };
  return n;
}

SdfNode sdf_smooth_union(SdfNode a, SdfNode b, double k) {
  if (!(k > 0.0)) throw ConfigError("scene: smooth union needs k > 0");
  SdfNode n;
  n.lipschitz = std::max(a.lipschitz, b.lipschitz);
  n.value = [a, b, k](const Vec& p) {
    double fa = a.value(p), fb = b.value(p);
    double h = std::clamp(0.5 + 0.5 * (fb - fa) / k, 0.0, 1.0);
    return fb + (fa - fb) * h - k * h * (1.0 - h);
  };
  // d/dfa = h and d/dfb = 1 - h (the quadratic correction cancels the
  // clamp-interior h' terms), so the gradient is a plain blend.
  n.gradient = [a, b, k](const Vec& p) {
    double fa = a.value(p), fb = b.value(p);
    double h = std::clamp(0.5 + 0.5 * (fb - fa) / k, 0.0, 1.0);
    return Vec(h * a.gradient(p) + (1.0 - h) * b.gradient(p));
  };
  return n;
}

namespace {

ColorFn constant_color(const Vec& c) {
  return [c](const Vec&) { return c; };
}

}  // namespace

SyntheticScene make_scene(const std::string& name) {
  SyntheticScene s;
  s.name = name;
  if (name == "sphere") {
    s.shape = sdf_sphere(Vec::Zero(), 0.6);
    s.albedo = constant_color(Vec(0.8, 0.12, 0.12));
  } else if (name == "box") {
    s.shape = sdf_box(Vec::Zero(), Vec(0.45, 0.32, 0.38));
    s.albedo = constant_color(Vec(0.2, 0.45, 0.85));
  } else if (name == "torus") {
    s.shape = sdf_torus(Vec::Zero(), 0.45, 0.18);
    s.albedo = constant_color(Vec(0.9, 0.65, 0.15));
  } else if (name == "two_tone") {
    s.shape = sdf_sphere(Vec::Zero(), 0.55);
    s.albedo = [](const Vec& p) {
      return p.z() >= 0.0 ? Vec(0.85, 0.1, 0.1) : Vec(0.1, 0.15, 0.85);
    };
  } else if (name == "snowman") {
    s.shape = sdf_smooth_union(sdf_sphere(Vec(0, 0, -0.22), 0.38),
                               sdf_sphere(Vec(0, 0, 0.3), 0.26), 0.05);
    s.albedo = [](const Vec& p) {
      return std::abs(p.z() - 0.1) < 0.05 ? Vec(0.75, 0.1, 0.1)
                                          : Vec(0.92, 0.92, 0.95);
    };
  } else {
    throw ConfigError("scene: unknown scene '" + name + "'");
  }
  return s;
}

std::vector<std::string> scene_names() {
  return {"sphere", "box", "torus", "two_tone", "snowman"};
}

}  // namespace sv
