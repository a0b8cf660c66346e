#include "radpose/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace radpose {

namespace {

constexpr double kParallelEps = 1e-12;

Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::InvalidConfig, "expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json vec3_to_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

// Orthonormal frame of the plane that contains the viewing ray through
// x_instr and the detector-parallel direction of alpha. Every axis that
// projects with forward angle alpha is cos(b) * p + sin(b) * r, |b| < 90deg.
struct ViewPlane {
  Vec3 r;  // unit viewing ray
  Vec3 e;  // detector-parallel direction of alpha
  Vec3 p;  // unit, in plane, perpendicular to r, p.e > 0
  double amp;    // sin(tilt) = amp * sin(b + phase)
  double phase;
  double split;  // axis.e = cos(b - split)
};

ViewPlane view_plane(const ImagePose& ip, const ProjectionGeometry& g) {
  ViewPlane vp;
  vp.r = g.ray_direction(ip.x_instr);
  const double a = deg2rad(ip.alpha);
  vp.e = std::cos(a) * g.detector_u + std::sin(a) * g.detector_v;
  const double er = vp.e.dot(vp.r);
  const double k = std::sqrt(std::max(0.0, 1.0 - er * er));
  vp.p = (vp.e - er * vp.r) / k;
  const Vec3 n = g.normal();
  const double pn = vp.p.dot(n);
  const double rn = vp.r.dot(n);
  vp.amp = std::hypot(pn, rn);
  vp.phase = std::atan2(pn, rn);
  vp.split = std::atan2(er, k);
  return vp;
}

double wrap_rad(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

}  // namespace

double wrap_deg(double deg) {
  double w = std::remainder(deg, 360.0);
  if (w <= -180.0) w += 360.0;
  return w;
}

Vec3 ProjectionGeometry::normal() const {
  Vec3 n = detector_u.cross(detector_v).normalized();
  if ((detector_origin - source).dot(n) < 0.0) n = -n;
  return n;
}

double ProjectionGeometry::source_to_detector() const {
  return (detector_origin - source).dot(normal());
}

Vec3 ProjectionGeometry::pixel_to_world(const Pixel& px) const {
  return detector_origin + pixel_spacing * (px.x() * detector_u + px.y() * detector_v);
}

Vec3 ProjectionGeometry::ray_direction(const Pixel& px) const {
  return (pixel_to_world(px) - source).normalized();
}

Pixel ProjectionGeometry::principal_point() const {
  const Vec3 foot = source + source_to_detector() * normal();
  const Vec3 d = foot - detector_origin;
  return {d.dot(detector_u) / pixel_spacing, d.dot(detector_v) / pixel_spacing};
}

bool ProjectionGeometry::contains(const Pixel& px) const {
  return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= image_width - 1.0 &&
         px.y() <= image_height - 1.0;
}

void ProjectionGeometry::validate() const {
  if (image_width <= 0 || image_height <= 0)
    throw Error(ErrorCode::InvalidGeometry, "image dimensions must be positive");
  if (!(pixel_spacing > 0.0)) throw Error(ErrorCode::InvalidGeometry, "pixel_spacing must be > 0");
  if (std::abs(detector_u.norm() - 1.0) > 1e-9 || std::abs(detector_v.norm() - 1.0) > 1e-9)
    throw Error(ErrorCode::InvalidGeometry, "detector axes must be unit vectors");
  if (std::abs(detector_u.dot(detector_v)) > 1e-9)
    throw Error(ErrorCode::InvalidGeometry, "detector_u and detector_v must be orthogonal");
  if (source_to_detector() < 1e-9)
    throw Error(ErrorCode::InvalidGeometry, "source lies on the detector plane");
  const Pixel pp = principal_point();
  if (pp.x() < -0.5 || pp.y() < -0.5 || pp.x() > image_width - 0.5 || pp.y() > image_height - 0.5)
    throw Error(ErrorCode::InvalidGeometry, "principal ray misses the image rectangle");
}

ProjectionGeometry make_carm_geometry(const CArmSpec& carm, const Vec3& isocenter,
                                      const Vec3& view_dir, double in_plane_deg) {
  const Vec3 d = view_dir.normalized();
  Vec3 ref = Vec3::UnitY();
  if (ref.cross(d).norm() < 1e-6) ref = Vec3::UnitZ();
  const Vec3 u0 = ref.cross(d).normalized();
  const Vec3 v0 = d.cross(u0);
  const double psi = deg2rad(in_plane_deg);

  ProjectionGeometry g;
  g.detector_u = std::cos(psi) * u0 + std::sin(psi) * v0;
  g.detector_v = -std::sin(psi) * u0 + std::cos(psi) * v0;
  g.source = isocenter - carm.source_to_isocenter * d;
  g.pixel_spacing = carm.pixel_spacing;
  g.image_width = carm.image_width;
  g.image_height = carm.image_height;
  const Vec3 center = g.source + carm.source_to_detector * d;
  g.detector_origin = center - 0.5 * (carm.image_width - 1) * carm.pixel_spacing * g.detector_u -
                      0.5 * (carm.image_height - 1) * carm.pixel_spacing * g.detector_v;
  return g;
}

ProjectionGeometry default_geometry(const CArmSpec& carm) {
  return make_carm_geometry(carm, Vec3::Zero(), Vec3::UnitZ(), 0.0);
}

ProjectionGeometry transformed(const ProjectionGeometry& g, const RigidTransform& t) {
  ProjectionGeometry out = g;
  out.source = t * g.source;
  out.detector_origin = t * g.detector_origin;
  out.detector_u = t.linear() * g.detector_u;
  out.detector_v = t.linear() * g.detector_v;
  return out;
}

Pixel project_point(const Vec3& p, const ProjectionGeometry& g) {
  const Vec3 n = g.normal();
  const Vec3 d = p - g.source;
  const double denom = d.dot(n);
  if (std::abs(denom) < kParallelEps)
    throw Error(ErrorCode::RayParallelToDetector, "ray through point is parallel to the detector");
  if (denom < 0.0) throw Error(ErrorCode::PointBehindSource, "point lies behind the source");
  const Vec3 hit = g.source + (g.source_to_detector() / denom) * d;
  const Vec3 rel = hit - g.detector_origin;
  return {rel.dot(g.detector_u) / g.pixel_spacing, rel.dot(g.detector_v) / g.pixel_spacing};
}

ImagePose world_to_image_pose(const WorldPose& wp, const ProjectionGeometry& g) {
  const Vec3 axis = wp.axis.normalized();
  ImagePose ip;
  ip.x_instr = project_point(wp.origin, g);
  const Pixel ahead = project_point(wp.origin + 10.0 * axis, g);
  const Pixel d = ahead - ip.x_instr;
  if (d.norm() < 1e-6)
    throw Error(ErrorCode::DegenerateAxis, "instrument axis is aligned with the viewing ray");
  ip.alpha = wrap_deg(rad2deg(std::atan2(d.y(), d.x())));
  ip.depth = (wp.origin - g.source).norm();
  ip.tilt = rad2deg(std::asin(std::clamp(axis.dot(g.normal()), -1.0, 1.0)));
  const double a = deg2rad(ip.alpha);
  const Vec3 e = std::cos(a) * g.detector_u + std::sin(a) * g.detector_v;
  ip.axis_sign = axis.dot(e) >= 0.0 ? 1 : -1;
  return ip;
}

WorldPose image_to_world_pose(const ImagePose& ip, const ProjectionGeometry& g) {
  if (!(std::abs(ip.tilt) <= 90.0)) throw Error(ErrorCode::InvalidTilt, "|tilt| exceeds 90 degrees");
  if (!(ip.depth > 0.0)) throw Error(ErrorCode::InvalidGeometry, "depth must be positive");

  const ViewPlane vp = view_plane(ip, g);
  WorldPose wp;
  wp.origin = g.source + ip.depth * vp.r;

  double s = std::sin(deg2rad(ip.tilt)) / vp.amp;
  if (std::abs(s) > 1.0 + 1e-12)
    throw Error(ErrorCode::InvalidTilt, "tilt is not realizable at this image position");
  s = std::clamp(s, -1.0, 1.0);
  const double base = std::asin(s);
  const std::array<double, 2> candidates{wrap_rad(base - vp.phase), wrap_rad(kPi - base - vp.phase)};
  // Tilts at the ends of the realizable range put one candidate on the
  // axis_sign boundary, so take the best-aligned candidate within rounding.
  double best = -1e-9;
  bool found = false;
  for (double b : candidates) {
    if (std::cos(b) <= kParallelEps) continue;
    const Vec3 axis = (std::cos(b) * vp.p + std::sin(b) * vp.r).normalized();
    const double aligned = ip.axis_sign * axis.dot(vp.e);
    if (aligned < best) continue;
    best = aligned;
    wp.axis = axis;
    found = true;
  }
  if (found) return wp;
  throw Error(ErrorCode::InvalidTilt, "tilt/axis_sign combination is not realizable");
}

std::pair<double, double> realizable_tilt_range(const ImagePose& ip, const ProjectionGeometry& g,
                                                double min_ray_angle_deg) {
  const ViewPlane vp = view_plane(ip, g);
  const double limit = kPi / 2 - deg2rad(min_ray_angle_deg);
  // axis.e keeps the sign of axis_sign on a half-turn centered at split (or split + pi).
  const double center = ip.axis_sign > 0 ? vp.split : vp.split + kPi;
  const double start = wrap_rad(center - kPi / 2);
  // |b| <= limit is shorter than a half-turn, so at most one 2pi-shift of
  // the half-turn overlaps it.
  double lo = 1.0;
  double hi = -1.0;
  for (double shift : {-2 * kPi, 0.0, 2 * kPi}) {
    const double a = std::max(start + shift, -limit);
    const double b = std::min(start + shift + kPi, limit);
    if (a <= b) {
      lo = a;
      hi = b;
    }
  }
  if (lo > hi) throw Error(ErrorCode::InvalidTilt, "no realizable tilt for this axis_sign");

  auto tilt_at = [&](double b) {
    return rad2deg(std::asin(std::clamp(vp.amp * std::sin(b + vp.phase), -1.0, 1.0)));
  };
  double tmin = std::min(tilt_at(lo), tilt_at(hi));
  double tmax = std::max(tilt_at(lo), tilt_at(hi));
  for (double crit : {kPi / 2 - vp.phase, -kPi / 2 - vp.phase}) {
    for (double shift : {-2 * kPi, 0.0, 2 * kPi}) {
      const double b = crit + shift;
      if (b > lo && b < hi) {
        tmin = std::min(tmin, tilt_at(b));
        tmax = std::max(tmax, tilt_at(b));
      }
    }
  }
  return {tmin, tmax};
}

Eigen::Vector2d position_error_components_mm(const WorldPose& gt, const Pixel& est_px,
                                              const ProjectionGeometry& g) {
  const Vec3 n = g.normal();
  const Vec3 d = g.pixel_to_world(est_px) - g.source;
  const double denom = d.dot(n);
  if (std::abs(denom) < kParallelEps)
    throw Error(ErrorCode::RayParallelToDetector, "estimate ray cannot reach the instrument plane");
  const double t = (gt.origin - g.source).dot(n) / denom;
  const Vec3 delta = g.source + t * d - gt.origin;
  return {delta.dot(g.detector_u), delta.dot(g.detector_v)};
}

double position_error_mm(const WorldPose& gt, const Pixel& est_px, const ProjectionGeometry& g) {
  return position_error_components_mm(gt, est_px, g).norm();
}

double forward_angle_error(double gt_alpha, double est_alpha) {
  return wrap_deg(est_alpha - gt_alpha);
}

double axis_view_angle(const WorldPose& wp, const ProjectionGeometry& g) {
  const Vec3 r = (wp.origin - g.source).normalized();
  return rad2deg(std::acos(std::clamp(std::abs(wp.axis.normalized().dot(r)), 0.0, 1.0)));
}

void to_json(nlohmann::json& j, const ProjectionGeometry& g) {
  j = {{"source", vec3_to_json(g.source)},
       {"detector_origin", vec3_to_json(g.detector_origin)},
       {"detector_u", vec3_to_json(g.detector_u)},
       {"detector_v", vec3_to_json(g.detector_v)},
       {"pixel_spacing", g.pixel_spacing},
       {"image_width", g.image_width},
       {"image_height", g.image_height}};
}

void from_json(const nlohmann::json& j, ProjectionGeometry& g) {
  g.source = vec3_from_json(j.at("source"));
  g.detector_origin = vec3_from_json(j.at("detector_origin"));
  g.detector_u = vec3_from_json(j.at("detector_u"));
  g.detector_v = vec3_from_json(j.at("detector_v"));
  g.pixel_spacing = j.at("pixel_spacing").get<double>();
  g.image_width = j.at("image_width").get<int>();
  g.image_height = j.at("image_height").get<int>();
}

void to_json(nlohmann::json& j, const WorldPose& p) {
  j = {{"origin", vec3_to_json(p.origin)}, {"axis", vec3_to_json(p.axis)}, {"roll", p.roll}};
}

void from_json(const nlohmann::json& j, WorldPose& p) {
  p.origin = vec3_from_json(j.at("origin"));
  p.axis = vec3_from_json(j.at("axis"));
  p.roll = j.value("roll", 0.0);
}

void to_json(nlohmann::json& j, const ImagePose& p) {
  j = {{"x_instr", {p.x_instr.x(), p.x_instr.y()}},
       {"alpha", p.alpha},
       {"depth", p.depth},
       {"tilt", p.tilt},
       {"axis_sign", p.axis_sign}};
}

void from_json(const nlohmann::json& j, ImagePose& p) {
  const auto& x = j.at("x_instr");
  p.x_instr = {x.at(0).get<double>(), x.at(1).get<double>()};
  p.alpha = j.at("alpha").get<double>();
  p.depth = j.at("depth").get<double>();
  p.tilt = j.at("tilt").get<double>();
  p.axis_sign = j.value("axis_sign", 1);
}

void to_json(nlohmann::json& j, const CArmSpec& c) {
  j = {{"source_to_detector", c.source_to_detector},
       {"source_to_isocenter", c.source_to_isocenter},
       {"image_width", c.image_width},
       {"image_height", c.image_height},
       {"pixel_spacing", c.pixel_spacing}};
}

void from_json(const nlohmann::json& j, CArmSpec& c) {
  c.source_to_detector = j.value("source_to_detector", c.source_to_detector);
  c.source_to_isocenter = j.value("source_to_isocenter", c.source_to_isocenter);
  c.image_width = j.value("image_width", c.image_width);
  c.image_height = j.value("image_height", c.image_height);
  c.pixel_spacing = j.value("pixel_spacing", c.pixel_spacing);
}

}  // namespace radpose
