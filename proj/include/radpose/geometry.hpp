#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <json.hpp>
#include <utility>

#include "radpose/error.hpp"

namespace radpose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Pixel = Eigen::Vector2d;
using RigidTransform = Eigen::Isometry3d;

constexpr double kPi = 3.14159265358979323846;
constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle in degrees to (-180, 180].
double wrap_deg(double deg);

/// 5-DOF instrument pose. `origin` is the screw-head point, `axis` points
/// from head toward tip. Roll is kept for display and never scored.
struct WorldPose {
  Vec3 origin = Vec3::Zero();
  Vec3 axis = Vec3::UnitX();
  double roll = 0.0;  // degrees, [-180, 180)
};

/// Cone-beam projection. Pixel (i, j) has its center at
/// detector_origin + pixel_spacing * (i * detector_u + j * detector_v);
/// image +y (rows) runs along detector_v.
struct ProjectionGeometry {
  Vec3 source = Vec3::Zero();
  Vec3 detector_origin = Vec3::Zero();
  Vec3 detector_u = Vec3::UnitX();
  Vec3 detector_v = Vec3::UnitY();
  double pixel_spacing = 1.0;  // mm/px
  int image_width = 0;
  int image_height = 0;

  /// Unit detector normal, oriented from the source toward the detector.
  Vec3 normal() const;
  /// Perpendicular distance from the source to the detector plane.
  double source_to_detector() const;
  /// World position of a (sub-)pixel location on the detector.
  Vec3 pixel_to_world(const Pixel& px) const;
  /// Unit direction of the ray from the source through a pixel.
  Vec3 ray_direction(const Pixel& px) const;
  /// Foot point of the source on the detector plane, in pixels.
  Pixel principal_point() const;
  bool contains(const Pixel& px) const;

  /// Throws InvalidGeometry when an invariant is violated.
  void validate() const;
};

/// Physical c-arm parameters used to place a ProjectionGeometry.
struct CArmSpec {
  double source_to_detector = 1000.0;  // mm
  double source_to_isocenter = 500.0;  // mm
  int image_width = 256;
  int image_height = 256;
  double pixel_spacing = 1.0;  // mm/px at the detector
};

/// Geometry looking along `view_dir` through `isocenter`, with the principal
/// ray hitting the image center. `in_plane_deg` rotates the detector axes
/// about the view direction.
ProjectionGeometry make_carm_geometry(const CArmSpec& carm, const Vec3& isocenter,
                                      const Vec3& view_dir, double in_plane_deg = 0.0);

/// Isocenter at the world origin, viewing along +z, detector_u = +x.
ProjectionGeometry default_geometry(const CArmSpec& carm = {});

/// Rigidly moves source and detector; used for the second annotation view.
ProjectionGeometry transformed(const ProjectionGeometry& g, const RigidTransform& t);

/// 2D pose on one radiograph.
///
/// `axis_sign` records whether the 3D axis has a positive component along the
/// detector-parallel direction of `alpha`. Together with `tilt` it makes the
/// inverse mapping to a WorldPose unique.
struct ImagePose {
  Pixel x_instr = Pixel::Zero();
  double alpha = 0.0;  // degrees, (-180, 180], raster convention (+y down)
  double depth = 0.0;  // mm, |origin - source|
  double tilt = 0.0;   // degrees, angle between axis and the detector plane
  int axis_sign = 1;
};

Pixel project_point(const Vec3& p, const ProjectionGeometry& g);

ImagePose world_to_image_pose(const WorldPose& wp, const ProjectionGeometry& g);

WorldPose image_to_world_pose(const ImagePose& ip, const ProjectionGeometry& g);

/// Closed interval [min, max] of tilts (degrees) reachable for ip's position,
/// forward angle and axis_sign while keeping the axis at least
/// `min_ray_angle_deg` away from the viewing ray.
std::pair<double, double> realizable_tilt_range(const ImagePose& ip, const ProjectionGeometry& g,
                                                double min_ray_angle_deg);

/// Distance between gt.origin and the back-projection of est_px onto the
/// detector-parallel plane through gt.origin.
double position_error_mm(const WorldPose& gt, const Pixel& est_px, const ProjectionGeometry& g);

/// Back-projected error vector resolved along (detector_u, detector_v), mm.
Eigen::Vector2d position_error_components_mm(const WorldPose& gt, const Pixel& est_px,
                                              const ProjectionGeometry& g);

/// Signed estimate-minus-truth difference wrapped to (-180, 180].
double forward_angle_error(double gt_alpha, double est_alpha);

/// Angle in degrees between the axis and the viewing ray through the origin.
double axis_view_angle(const WorldPose& wp, const ProjectionGeometry& g);

void to_json(nlohmann::json& j, const ProjectionGeometry& g);
void from_json(const nlohmann::json& j, ProjectionGeometry& g);
void to_json(nlohmann::json& j, const WorldPose& p);
void from_json(const nlohmann::json& j, WorldPose& p);
void to_json(nlohmann::json& j, const ImagePose& p);
void from_json(const nlohmann::json& j, ImagePose& p);
void to_json(nlohmann::json& j, const CArmSpec& c);
void from_json(const nlohmann::json& j, CArmSpec& c);

}  // namespace radpose
