#include "radpose/noise.hpp"

#include <algorithm>
#include <cmath>

namespace radpose {

void NoiseLevel::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw Error(ErrorCode::InvalidConfig, "eta must be finite and >= 0");
}

Perturbation draw_perturbation(const NoiseLevel& nl, Rng& rng) {
  Perturbation p;
  p.du = rng.normal(0.0, nl.position_sigma_px());
  p.dv = rng.normal(0.0, nl.position_sigma_px());
  p.dalpha = rng.normal(0.0, nl.angle_sigma_deg());
  p.ddepth = rng.normal(0.0, nl.depth_sigma_mm());
  p.dtilt = rng.normal(0.0, nl.tilt_sigma_deg());
  return p;
}

WorldPose apply_perturbation(const WorldPose& wp, const ProjectionGeometry& g, const Perturbation& p) {
  const ImagePose gt = world_to_image_pose(wp, g);
  ImagePose ip = gt;
  ip.x_instr += Pixel(p.du, p.dv);
  ip.alpha = wrap_deg(gt.alpha + p.dalpha);
  // A point must stay in front of the source.
  ip.depth = std::max(gt.depth + p.ddepth, 1e-3 * gt.depth);
  ip.tilt = std::clamp(gt.tilt + p.dtilt, -89.0, 89.0);

  std::pair<double, double> range;
  try {
    range = realizable_tilt_range(ip, g, kNoiseTiltMarginDeg);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InvalidTilt) throw;
    // The perturbed direction cannot carry this axis_sign.
    ip.axis_sign = -ip.axis_sign;
    range = realizable_tilt_range(ip, g, kNoiseTiltMarginDeg);
  }
  ip.tilt = std::clamp(ip.tilt, range.first, range.second);
  WorldPose out = image_to_world_pose(ip, g);
  out.roll = wp.roll;
  return out;
}

WorldPose perturb(const WorldPose& wp, const ProjectionGeometry& g, const NoiseLevel& nl, Rng& rng) {
  nl.validate();
  if (nl.eta == 0.0) {
    // Still consume the draws so streams stay aligned across noise levels.
    draw_perturbation(nl, rng);
    return wp;
  }
  return apply_perturbation(wp, g, draw_perturbation(nl, rng));
}

AnnotationSet annotate_dataset(const std::vector<AnnotatedImage>& images, const NoiseLevel& nl, int k,
                               std::uint64_t master_seed) {
  if (k < 1) throw Error(ErrorCode::InvalidConfig, "annotations per image must be >= 1");
  AnnotationSet out;
  for (const auto& img : images) {
    auto& list = out[img.id];
    for (int i = 0; i < k; ++i) {
      Annotation a;
      a.eta = nl.eta;
      a.seed = derive_seed(master_seed, {fnv1a64(img.id), static_cast<std::uint64_t>(i)});
      Rng rng(a.seed);
      a.world = perturb(img.truth, img.geometry, nl, rng);
      a.image = world_to_image_pose(a.world, img.geometry);
      list.push_back(a);
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const Annotation& a) {
  j = {{"world_pose", a.world}, {"image_pose", a.image}, {"eta", a.eta}, {"seed", a.seed}};
}

void from_json(const nlohmann::json& j, Annotation& a) {
  a.world = j.at("world_pose").get<WorldPose>();
  a.image = j.at("image_pose").get<ImagePose>();
  a.eta = j.at("eta").get<double>();
  a.seed = j.at("seed").get<std::uint64_t>();
}

}  // namespace radpose
