#pragma once

#include <vector>

#include "radpose/geometry.hpp"
#include "radpose/renderer.hpp"

namespace radpose {

struct PatchSpec {
  int width = 64;
  int height = 32;
  Eigen::Vector2d anchor{0.25, 0.5};  // expected origin, fraction of the patch extent
  bool normalize = true;

  int pixel_count() const { return width * height; }
  void validate() const;
};

/// Similarity transform between image pixels and the standard-pose patch.
///
/// Patch pixel (i, j) has its center at (i, j); the estimate x_est maps to
/// the anchor and the estimated axis direction maps to patch +x. Normalized
/// coordinates put the patch center at (0, 0) and the outer corners at
/// (+-1, +-1).
class PatchFrame {
 public:
  PatchFrame() = default;
  PatchFrame(const Pixel& x_est, double alpha_deg, const PatchSpec& spec);

  Pixel image_to_patch_px(const Pixel& image_pt) const;
  Pixel patch_px_to_image(const Pixel& patch_pt) const;
  Eigen::Vector2d image_to_patch_coords(const Pixel& image_pt) const;
  Pixel patch_to_image_coords(const Eigen::Vector2d& normalized) const;

  /// Homogeneous 3x3 matrix of image_to_patch_coords.
  Eigen::Matrix3d image_to_normalized_matrix() const;

  const Pixel& x_est() const { return x_est_; }
  double alpha() const { return alpha_deg_; }
  const Pixel& anchor_px() const { return anchor_px_; }
  int width() const { return width_; }
  int height() const { return height_; }

 private:
  Pixel x_est_ = Pixel::Zero();
  double alpha_deg_ = 0.0;
  double cos_a_ = 1.0;
  double sin_a_ = 0.0;
  Pixel anchor_px_ = Pixel::Zero();
  int width_ = 1;
  int height_ = 1;
};

struct Patch {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // row-major
  PatchFrame frame;

  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Bilinear sample with border clamping.
double sample_bilinear(const RadiographImage& img, const Pixel& pt);

/// Rotate/crop around the estimate into the standard pose. Throws
/// EstimateOutOfImage when est.x_instr lies outside the image.
Patch extract_patch(const RadiographImage& img, const ImagePose& est, const PatchSpec& spec);

void to_json(nlohmann::json& j, const PatchSpec& s);
void from_json(const nlohmann::json& j, PatchSpec& s);

}  // namespace radpose
