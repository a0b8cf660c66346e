#include "radpose/phantom.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "radpose/random.hpp"

namespace radpose {

namespace {

Vec3 vec3(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

struct Inclusion {
  Vec3 center;
  Vec3 radii;
  double contrast;
};

// t-interval of the line inside an infinite cylinder of radius r around the
// local x axis; returns false when empty.
bool cylinder_interval(const Vec3& o, const Vec3& d, double r, double& t0, double& t1) {
  const double a = d.y() * d.y() + d.z() * d.z();
  const double b = o.y() * d.y() + o.z() * d.z();
  const double c = o.y() * o.y() + o.z() * o.z() - r * r;
  if (a < 1e-15) {
    if (c > 0.0) return false;
    t0 = -std::numeric_limits<double>::infinity();
    t1 = std::numeric_limits<double>::infinity();
    return true;
  }
  const double disc = b * b - a * c;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  t0 = (-b - sq) / a;
  t1 = (-b + sq) / a;
  return true;
}

double capped_cylinder_chord(const Vec3& o, const Vec3& d, double r, double x0, double x1) {
  double t0, t1;
  if (!cylinder_interval(o, d, r, t0, t1)) return 0.0;
  if (std::abs(d.x()) < 1e-15) {
    if (o.x() < x0 || o.x() > x1) return 0.0;
  } else {
    double s0 = (x0 - o.x()) / d.x();
    double s1 = (x1 - o.x()) / d.x();
    if (s0 > s1) std::swap(s0, s1);
    t0 = std::max(t0, s0);
    t1 = std::min(t1, s1);
  }
  return std::max(0.0, t1 - t0);
}

// Orthonormal screw frame: columns (axis, y, z) with y from the given vector.
Mat3 screw_frame(const Vec3& axis, const Vec3& y_hint) {
  Mat3 r;
  const Vec3 x = axis.normalized();
  const Vec3 y = (y_hint - y_hint.dot(x) * x).normalized();
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = x.cross(y);
  return r;
}

}  // namespace

double Volume::sample(const Vec3& world) const {
  const double fx = (world.x() - origin.x()) / spacing.x();
  const double fy = (world.y() - origin.y()) / spacing.y();
  const double fz = (world.z() - origin.z()) / spacing.z();
  if (fx < 0.0 || fy < 0.0 || fz < 0.0 || fx > dims[0] - 1 || fy > dims[1] - 1 || fz > dims[2] - 1)
    return 0.0;
  const int i = std::min(static_cast<int>(fx), dims[0] - 2 < 0 ? 0 : dims[0] - 2);
  const int j = std::min(static_cast<int>(fy), dims[1] - 2 < 0 ? 0 : dims[1] - 2);
  const int k = std::min(static_cast<int>(fz), dims[2] - 2 < 0 ? 0 : dims[2] - 2);
  const double tx = fx - i, ty = fy - j, tz = fz - k;
  const std::size_t sx = dims[0] > 1 ? 1 : 0;
  const std::size_t sy = dims[1] > 1 ? static_cast<std::size_t>(dims[0]) : 0;
  const std::size_t sz = dims[2] > 1 ? static_cast<std::size_t>(dims[0]) * dims[1] : 0;
  const float* p = data.data() + index(i, j, k);
  const double c00 = p[0] + tx * (p[sx] - p[0]);
  const double c10 = p[sy] + tx * (p[sy + sx] - p[sy]);
  const double c01 = p[sz] + tx * (p[sz + sx] - p[sz]);
  const double c11 = p[sz + sy] + tx * (p[sz + sy + sx] - p[sz + sy]);
  const double c0 = c00 + ty * (c10 - c00);
  const double c1 = c01 + ty * (c11 - c01);
  return c0 + tz * (c1 - c0);
}

Volume Volume::uniform(std::array<int, 3> dims, const Vec3& spacing, float mu) {
  Volume v;
  v.dims = dims;
  v.spacing = spacing;
  v.origin = -0.5 * Vec3((dims[0] - 1) * spacing.x(), (dims[1] - 1) * spacing.y(),
                         (dims[2] - 1) * spacing.z());
  v.data.assign(v.voxel_count(), mu);
  return v;
}

Vec3 AnatomyShape::surface_point(const Vec3& dir) const {
  const Vec3 d = dir.normalized();
  const double s = std::sqrt((d.array() / semi_axes.array()).square().sum());
  return center + d / s;
}

Vec3 AnatomyShape::surface_normal(const Vec3& point) const {
  const Vec3 rel = point - center;
  return (rel.array() / semi_axes.array().square()).matrix().normalized();
}

AnatomyShape anatomy_shape(const AnatomySpec& spec) {
  Rng rng(derive_seed(spec.seed, {0x5A}));
  AnatomyShape shape;
  for (int a = 0; a < 3; ++a)
    shape.semi_axes[a] = spec.semi_axes[a] * (1.0 + spec.axis_jitter * rng.uniform(-1.0, 1.0));
  return shape;
}

Volume generate_anatomy(const AnatomySpec& spec) {
  Volume vol;
  vol.dims = spec.dims;
  vol.spacing = spec.spacing;
  vol.seed = spec.seed;
  vol.origin = -0.5 * Vec3((spec.dims[0] - 1) * spec.spacing.x(), (spec.dims[1] - 1) * spec.spacing.y(),
                           (spec.dims[2] - 1) * spec.spacing.z());
  vol.data.assign(vol.voxel_count(), 0.0f);

  const AnatomyShape shape = anatomy_shape(spec);
  const Vec3 outer = shape.semi_axes;
  const Vec3 inner = (outer.array() - spec.shell_thickness).max(1e-9).matrix();

  Rng rng(derive_seed(spec.seed, {0x1C}));
  std::vector<Inclusion> inclusions;
  inclusions.reserve(static_cast<std::size_t>(std::max(0, spec.n_inclusions)));
  for (int n = 0; n < spec.n_inclusions; ++n) {
    Vec3 c;
    do {
      c = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    } while (c.squaredNorm() > 1.0);
    Inclusion inc;
    inc.center = shape.center + c.cwiseProduct(inner);
    const double r = rng.uniform(spec.inclusion_radius[0], spec.inclusion_radius[1]);
    inc.radii = Vec3(r * rng.uniform(0.6, 1.4), r * rng.uniform(0.6, 1.4), r * rng.uniform(0.6, 1.4));
    inc.contrast = rng.uniform(spec.inclusion_contrast[0], spec.inclusion_contrast[1]);
    inclusions.push_back(inc);
  }

  for (int k = 0; k < vol.dims[2]; ++k) {
    for (int j = 0; j < vol.dims[1]; ++j) {
      for (int i = 0; i < vol.dims[0]; ++i) {
        const Vec3 p = vol.origin + Vec3(i * vol.spacing.x(), j * vol.spacing.y(), k * vol.spacing.z());
        const Vec3 rel = p - shape.center;
        if ((rel.array() / outer.array()).square().sum() > 1.0) continue;
        double mu;
        if ((rel.array() / inner.array()).square().sum() > 1.0) {
          mu = spec.mu_bone;
        } else {
          mu = spec.mu_soft;
          for (const auto& inc : inclusions) {
            if (((p - inc.center).array() / inc.radii.array()).square().sum() <= 1.0) mu += inc.contrast;
          }
        }
        vol.at(i, j, k) = static_cast<float>(std::clamp(mu, 0.0, spec.mu_bone));
      }
    }
  }
  return vol;
}

void save_volume(const Volume& vol, const std::filesystem::path& stem) {
  nlohmann::json header = {
      {"dims", vol.dims},
      {"spacing", {vol.spacing.x(), vol.spacing.y(), vol.spacing.z()}},
      {"origin", {vol.origin.x(), vol.origin.y(), vol.origin.z()}},
      {"seed", vol.seed},
      {"dtype", "float32-le"},
      {"order", "x-fastest"}};
  std::ofstream hj(stem.string() + ".json");
  if (!hj) throw Error(ErrorCode::Io, "cannot write " + stem.string() + ".json");
  hj << header.dump(2) << '\n';
  std::ofstream raw(stem.string() + ".raw", std::ios::binary);
  if (!raw) throw Error(ErrorCode::Io, "cannot write " + stem.string() + ".raw");
  static_assert(std::endian::native == std::endian::little, "raw volume IO assumes little-endian host");
  raw.write(reinterpret_cast<const char*>(vol.data.data()),
            static_cast<std::streamsize>(vol.data.size() * sizeof(float)));
}

Volume load_volume(const std::filesystem::path& stem) {
  std::ifstream hj(stem.string() + ".json");
  if (!hj) throw Error(ErrorCode::Io, "cannot read " + stem.string() + ".json");
  const auto header = nlohmann::json::parse(hj);
  Volume vol;
  vol.dims = header.at("dims").get<std::array<int, 3>>();
  vol.spacing = vec3(header.at("spacing"));
  vol.origin = vec3(header.at("origin"));
  vol.seed = header.value("seed", std::uint64_t{0});
  vol.data.resize(vol.voxel_count());
  std::ifstream raw(stem.string() + ".raw", std::ios::binary);
  if (!raw) throw Error(ErrorCode::Io, "cannot read " + stem.string() + ".raw");
  raw.read(reinterpret_cast<char*>(vol.data.data()),
           static_cast<std::streamsize>(vol.data.size() * sizeof(float)));
  if (raw.gcount() != static_cast<std::streamsize>(vol.data.size() * sizeof(float)))
    throw Error(ErrorCode::Io, "truncated voxel file " + stem.string() + ".raw");
  return vol;
}

void ScrewModel::validate() const {
  if (!(shaft_length > 0 && shaft_radius > 0 && head_radius > 0 && head_length > 0 && mu_metal > 0 &&
        keypoint_offset > 0))
    throw Error(ErrorCode::InvalidConfig, "screw dimensions must be positive");
  if (head_radius < shaft_radius) throw Error(ErrorCode::InvalidConfig, "head_radius < shaft_radius");
}

ScrewKeypoints screw_keypoints(const ScrewModel& s, const WorldPose& wp, const ProjectionGeometry& g) {
  const Vec3 axis = wp.axis.normalized();
  const Vec3 view = (wp.origin - g.source).normalized();
  if (axis_view_angle(wp, g) < kMinAxisViewAngleDeg)
    throw Error(ErrorCode::DegenerateAxis, "axis within 2 degrees of the viewing ray");
  const Vec3 w = axis.cross(view).normalized();

  ScrewKeypoints kp;
  const double len = s.shaft_length;
  const double d = s.keypoint_offset;
  kp.local = {Vec3(0, 0, 0),  Vec3(len / 2, 0, 0), Vec3(len, 0, 0),
              Vec3(0, -d, 0), Vec3(0, d / 2, 0),  Vec3(0, d, 0)};
  const Mat3 frame = screw_frame(axis, w);
  for (std::size_t i = 0; i < kKeypointCount; ++i) {
    kp.world[i] = wp.origin + frame * kp.local[i];
    kp.image[i] = project_point(kp.world[i], g);
  }
  return kp;
}

double screw_ray_pathlength(const ScrewModel& s, const WorldPose& wp, const Vec3& ray_origin,
                            const Vec3& ray_dir) {
  const Vec3 axis = wp.axis.normalized();
  Vec3 hint = axis.unitOrthogonal();
  const Mat3 frame = screw_frame(axis, hint);
  const Vec3 o = frame.transpose() * (ray_origin - wp.origin);
  const Vec3 d = frame.transpose() * ray_dir;
  return capped_cylinder_chord(o, d, s.head_radius, -s.head_length, 0.0) +
         capped_cylinder_chord(o, d, s.shaft_radius, 0.0, s.shaft_length);
}

std::vector<Eigen::Vector2d> screw_outline(const ScrewModel& s) {
  const std::vector<Eigen::Vector2d> corners = {
      {-s.head_length, -s.head_radius}, {0.0, -s.head_radius},         {0.0, -s.shaft_radius},
      {s.shaft_length, -s.shaft_radius}, {s.shaft_length, s.shaft_radius}, {0.0, s.shaft_radius},
      {0.0, s.head_radius},              {-s.head_length, s.head_radius}};
  std::vector<Eigen::Vector2d> out;
  for (std::size_t i = 0; i < corners.size(); ++i) {
    const auto& a = corners[i];
    const auto& b = corners[(i + 1) % corners.size()];
    const int pieces = std::max(1, static_cast<int>(std::ceil((b - a).norm() / 1.0 - 1e-9)));
    for (int k = 0; k < pieces; ++k) out.push_back(a + (b - a) * (static_cast<double>(k) / pieces));
  }
  out.push_back(out.front());
  return out;
}

Vec3 screw_radial_direction(const WorldPose& wp) {
  const Vec3 axis = wp.axis.normalized();
  Vec3 ref = axis.cross(Vec3::UnitZ());
  if (ref.norm() < 1e-6) ref = axis.cross(Vec3::UnitX());
  ref.normalize();
  const Eigen::AngleAxisd roll(deg2rad(wp.roll), axis);
  return roll * ref;
}

void to_json(nlohmann::json& j, const ScrewModel& s) {
  j = {{"shaft_length", s.shaft_length}, {"shaft_radius", s.shaft_radius},
       {"head_radius", s.head_radius},   {"head_length", s.head_length},
       {"mu_metal", s.mu_metal},         {"keypoint_offset", s.keypoint_offset}};
}

void from_json(const nlohmann::json& j, ScrewModel& s) {
  s.shaft_length = j.value("shaft_length", s.shaft_length);
  s.shaft_radius = j.value("shaft_radius", s.shaft_radius);
  s.head_radius = j.value("head_radius", s.head_radius);
  s.head_length = j.value("head_length", s.head_length);
  s.mu_metal = j.value("mu_metal", s.mu_metal);
  s.keypoint_offset = j.value("keypoint_offset", s.keypoint_offset);
}

void to_json(nlohmann::json& j, const AnatomySpec& a) {
  j = {{"seed", a.seed},
       {"dims", a.dims},
       {"spacing", {a.spacing.x(), a.spacing.y(), a.spacing.z()}},
       {"semi_axes", {a.semi_axes.x(), a.semi_axes.y(), a.semi_axes.z()}},
       {"axis_jitter", a.axis_jitter},
       {"shell_thickness", a.shell_thickness},
       {"mu_bone", a.mu_bone},
       {"mu_soft", a.mu_soft},
       {"n_inclusions", a.n_inclusions},
       {"inclusion_radius", a.inclusion_radius},
       {"inclusion_contrast", a.inclusion_contrast}};
}

void from_json(const nlohmann::json& j, AnatomySpec& a) {
  a.seed = j.value("seed", a.seed);
  a.dims = j.value("dims", a.dims);
  if (j.contains("spacing")) a.spacing = vec3(j.at("spacing"));
  if (j.contains("semi_axes")) a.semi_axes = vec3(j.at("semi_axes"));
  a.axis_jitter = j.value("axis_jitter", a.axis_jitter);
  a.shell_thickness = j.value("shell_thickness", a.shell_thickness);
  a.mu_bone = j.value("mu_bone", a.mu_bone);
  a.mu_soft = j.value("mu_soft", a.mu_soft);
  a.n_inclusions = j.value("n_inclusions", a.n_inclusions);
  a.inclusion_radius = j.value("inclusion_radius", a.inclusion_radius);
  a.inclusion_contrast = j.value("inclusion_contrast", a.inclusion_contrast);
}

}  // namespace radpose
