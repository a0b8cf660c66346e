#include "radpose/patchify.hpp"

#include <algorithm>
#include <cmath>

namespace radpose {

void PatchSpec::validate() const {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidConfig, "patch dimensions must be positive");
  if (!(anchor.x() > 0.0 && anchor.x() < 1.0 && anchor.y() > 0.0 && anchor.y() < 1.0))
    throw Error(ErrorCode::InvalidConfig, "patch anchor must lie in (0, 1)^2");
}

PatchFrame::PatchFrame(const Pixel& x_est, double alpha_deg, const PatchSpec& spec)
    : x_est_(x_est),
      alpha_deg_(alpha_deg),
      cos_a_(std::cos(deg2rad(alpha_deg))),
      sin_a_(std::sin(deg2rad(alpha_deg))),
      anchor_px_(spec.anchor.x() * spec.width - 0.5, spec.anchor.y() * spec.height - 0.5),
      width_(spec.width),
      height_(spec.height) {}

Pixel PatchFrame::image_to_patch_px(const Pixel& image_pt) const {
  const Pixel d = image_pt - x_est_;
  // Rotation by -alpha.
  return Pixel(cos_a_ * d.x() + sin_a_ * d.y(), -sin_a_ * d.x() + cos_a_ * d.y()) + anchor_px_;
}

Pixel PatchFrame::patch_px_to_image(const Pixel& patch_pt) const {
  const Pixel d = patch_pt - anchor_px_;
  return Pixel(cos_a_ * d.x() - sin_a_ * d.y(), sin_a_ * d.x() + cos_a_ * d.y()) + x_est_;
}

Eigen::Vector2d PatchFrame::image_to_patch_coords(const Pixel& image_pt) const {
  const Pixel p = image_to_patch_px(image_pt);
  return {(p.x() + 0.5) * 2.0 / width_ - 1.0, (p.y() + 0.5) * 2.0 / height_ - 1.0};
}

Pixel PatchFrame::patch_to_image_coords(const Eigen::Vector2d& normalized) const {
  const Pixel p((normalized.x() + 1.0) * width_ / 2.0 - 0.5, (normalized.y() + 1.0) * height_ / 2.0 - 0.5);
  return patch_px_to_image(p);
}

Eigen::Matrix3d PatchFrame::image_to_normalized_matrix() const {
  Eigen::Matrix3d translate_in = Eigen::Matrix3d::Identity();
  translate_in(0, 2) = -x_est_.x();
  translate_in(1, 2) = -x_est_.y();
  Eigen::Matrix3d rotate = Eigen::Matrix3d::Identity();
  rotate(0, 0) = cos_a_;
  rotate(0, 1) = sin_a_;
  rotate(1, 0) = -sin_a_;
  rotate(1, 1) = cos_a_;
  Eigen::Matrix3d scale = Eigen::Matrix3d::Identity();
  scale(0, 0) = 2.0 / width_;
  scale(1, 1) = 2.0 / height_;
  scale(0, 2) = (anchor_px_.x() + 0.5) * 2.0 / width_ - 1.0;
  scale(1, 2) = (anchor_px_.y() + 0.5) * 2.0 / height_ - 1.0;
  return scale * rotate * translate_in;
}

double sample_bilinear(const RadiographImage& img, const Pixel& pt) {
  const double x = std::clamp(pt.x(), 0.0, img.width - 1.0);
  const double y = std::clamp(pt.y(), 0.0, img.height - 1.0);
  const int x0 = std::min(static_cast<int>(x), std::max(img.width - 2, 0));
  const int y0 = std::min(static_cast<int>(y), std::max(img.height - 2, 0));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double tx = x - x0, ty = y - y0;
  const double top = img.at(x0, y0) + tx * (img.at(x1, y0) - img.at(x0, y0));
  const double bottom = img.at(x0, y1) + tx * (img.at(x1, y1) - img.at(x0, y1));
  return top + ty * (bottom - top);
}

Patch extract_patch(const RadiographImage& img, const ImagePose& est, const PatchSpec& spec) {
  if (!(est.x_instr.allFinite() && est.x_instr.x() >= 0.0 && est.x_instr.y() >= 0.0 &&
        est.x_instr.x() <= img.width - 1.0 && est.x_instr.y() <= img.height - 1.0))
    throw Error(ErrorCode::EstimateOutOfImage, "initial estimate lies outside the image");
  Patch patch;
  patch.width = spec.width;
  patch.height = spec.height;
  patch.frame = PatchFrame(est.x_instr, est.alpha, spec);
  patch.pixels.resize(static_cast<std::size_t>(spec.pixel_count()));
  for (int j = 0; j < spec.height; ++j)
    for (int i = 0; i < spec.width; ++i)
      patch.pixels[static_cast<std::size_t>(j) * spec.width + i] =
          static_cast<float>(sample_bilinear(img, patch.frame.patch_px_to_image(Pixel(i, j))));

  if (spec.normalize) {
    double mean = 0.0;
    for (float v : patch.pixels) mean += v;
    mean /= static_cast<double>(patch.pixels.size());
    double var = 0.0;
    for (float v : patch.pixels) var += (v - mean) * (v - mean);
    var /= static_cast<double>(patch.pixels.size());
    const double scale = 1.0 / std::sqrt(std::max(var, 1e-8));
    for (float& v : patch.pixels) v = static_cast<float>((v - mean) * scale);
  }
  return patch;
}

void to_json(nlohmann::json& j, const PatchSpec& s) {
  j = {{"width", s.width},
       {"height", s.height},
       {"anchor", {s.anchor.x(), s.anchor.y()}},
       {"normalize", s.normalize}};
}

void from_json(const nlohmann::json& j, PatchSpec& s) {
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  if (j.contains("anchor")) s.anchor = {j["anchor"].at(0).get<double>(), j["anchor"].at(1).get<double>()};
  s.normalize = j.value("normalize", s.normalize);
}

}  // namespace radpose
