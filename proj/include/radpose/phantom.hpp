#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "radpose/geometry.hpp"

namespace radpose {

/// Scalar attenuation volume. Voxel (0,0,0) is centered at `origin`; data is
/// stored x-fastest.
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing = Vec3::Ones();  // mm/voxel
  Vec3 origin = Vec3::Zero();   // mm
  std::uint64_t seed = 0;
  std::vector<float> data;      // mu, 1/mm

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }
  float& at(int i, int j, int k) { return data[index(i, j, k)]; }
  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  /// Box spanned by the voxel centers.
  Vec3 lower() const { return origin; }
  Vec3 upper() const {
    return origin + Vec3((dims[0] - 1) * spacing.x(), (dims[1] - 1) * spacing.y(),
                         (dims[2] - 1) * spacing.z());
  }

  /// Trilinear interpolation; zero outside the voxel-center box.
  double sample(const Vec3& world) const;

  /// Uniform volume of the given size centered at the world origin.
  static Volume uniform(std::array<int, 3> dims, const Vec3& spacing, float mu);
};

struct AnatomySpec {
  std::uint64_t seed = 1;
  std::array<int, 3> dims{128, 128, 128};
  Vec3 spacing = Vec3::Ones();
  Vec3 semi_axes{56.0, 48.0, 60.0};  // mm, outer surface of the shell
  double axis_jitter = 0.08;         // relative seeded variation of semi_axes
  double shell_thickness = 4.0;      // mm
  double mu_bone = 0.05;             // 1/mm
  double mu_soft = 0.02;             // 1/mm
  int n_inclusions = 40;
  std::array<double, 2> inclusion_radius{3.0, 12.0};      // mm
  std::array<double, 2> inclusion_contrast{-0.02, 0.03};  // 1/mm, added to mu_soft
};

/// Seeded outer ellipsoid of an anatomy (center and semi-axes after jitter).
struct AnatomyShape {
  Vec3 center = Vec3::Zero();
  Vec3 semi_axes = Vec3::Ones();

  /// Point on the ellipsoid surface in the direction `dir` from the center.
  Vec3 surface_point(const Vec3& dir) const;
  /// Outward unit normal at a surface point.
  Vec3 surface_normal(const Vec3& point) const;
};

AnatomyShape anatomy_shape(const AnatomySpec& spec);

/// Ellipsoidal bone shell around soft tissue with seeded ellipsoidal
/// inclusions; bit-identical for identical specs.
Volume generate_anatomy(const AnatomySpec& spec);

void save_volume(const Volume& vol, const std::filesystem::path& stem);
Volume load_volume(const std::filesystem::path& stem);

/// Screw solid: head cylinder on local x in [-head_length, 0], shaft cylinder
/// on [0, shaft_length]; the origin is the head/shaft junction.
struct ScrewModel {
  double shaft_length = 9.0;
  double shaft_radius = 1.0;
  double head_radius = 2.0;
  double head_length = 2.0;
  double mu_metal = 2.0;         // 1/mm
  double keypoint_offset = 3.0;  // d, mm

  void validate() const;
};

/// Keypoint order A1, A2, A3 (main axis, head to tip), B1, B2, B3 (offsets
/// -d, d/2, d on the orthogonal line).
constexpr std::size_t kKeypointCount = 6;

struct ScrewKeypoints {
  /// Local frame: x = axis, y = unit(axis x view ray), z = x cross y.
  std::array<Vec3, kKeypointCount> local;
  std::array<Vec3, kKeypointCount> world;
  std::array<Pixel, kKeypointCount> image;
};

/// Keypoint construction is rejected when the axis is closer than this to the
/// viewing ray.
constexpr double kMinAxisViewAngleDeg = 2.0;

ScrewKeypoints screw_keypoints(const ScrewModel& s, const WorldPose& wp, const ProjectionGeometry& g);

/// Chord length (mm) of the full line origin + t * dir inside the screw solid.
double screw_ray_pathlength(const ScrewModel& s, const WorldPose& wp, const Vec3& ray_origin,
                            const Vec3& ray_dir);

/// Closed axial cross-section contour in local (axial, radial) coordinates,
/// densified to at most 1 mm between vertices.
std::vector<Eigen::Vector2d> screw_outline(const ScrewModel& s);

/// Roll-dependent unit vector perpendicular to the axis, used to lay the
/// outline's radial coordinate into the world.
Vec3 screw_radial_direction(const WorldPose& wp);

void to_json(nlohmann::json& j, const ScrewModel& s);
void from_json(const nlohmann::json& j, ScrewModel& s);
void to_json(nlohmann::json& j, const AnatomySpec& a);
void from_json(const nlohmann::json& j, AnatomySpec& a);

}  // namespace radpose
