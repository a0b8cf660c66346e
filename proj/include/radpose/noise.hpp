#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "radpose/geometry.hpp"
#include "radpose/random.hpp"

namespace radpose {

/// Annotation noise scale. All standard deviations are proportional to eta.
struct NoiseLevel {
  double eta = 0.0;

  double position_sigma_px() const { return eta; }
  double angle_sigma_deg() const { return 10.0 * eta; }
  double depth_sigma_mm() const { return 17.5 * eta; }
  double tilt_sigma_deg() const { return 5.0 * eta; }

  void validate() const;
};

/// Raw image-space offsets, before any clamping.
struct Perturbation {
  double du = 0.0, dv = 0.0;  // px
  double dalpha = 0.0;        // deg
  double ddepth = 0.0;        // mm
  double dtilt = 0.0;         // deg
};

/// Draw order: du, dv, dalpha, ddepth, dtilt.
Perturbation draw_perturbation(const NoiseLevel& nl, Rng& rng);

/// Tilt is limited to +-89 deg and to the tilts the perturbed image pose can
/// realize while staying this far from the viewing ray.
constexpr double kNoiseTiltMarginDeg = 2.0;

/// Perturbed pose in image space, mapped back to the world.
WorldPose perturb(const WorldPose& wp, const ProjectionGeometry& g, const NoiseLevel& nl, Rng& rng);

/// Applies a given perturbation (with clamping) to a pose.
WorldPose apply_perturbation(const WorldPose& wp, const ProjectionGeometry& g, const Perturbation& p);

struct Annotation {
  WorldPose world;
  ImagePose image;
  double eta = 0.0;
  std::uint64_t seed = 0;
};

struct AnnotatedImage {
  std::string id;
  WorldPose truth;
  ProjectionGeometry geometry;
};

/// image id -> k annotations. Each (image, k-index) draws from its own
/// derived stream, so the result does not depend on processing order.
using AnnotationSet = std::map<std::string, std::vector<Annotation>>;

AnnotationSet annotate_dataset(const std::vector<AnnotatedImage>& images, const NoiseLevel& nl, int k,
                               std::uint64_t master_seed);

void to_json(nlohmann::json& j, const Annotation& a);
void from_json(const nlohmann::json& j, Annotation& a);

}  // namespace radpose
