#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "radpose/geometry.hpp"
#include "radpose/phantom.hpp"

namespace radpose {

struct RenderMeta {
  ProjectionGeometry geometry;
  std::string geometry_id;
  std::uint64_t anatomy_seed = 0;
  WorldPose world_pose;
  ImagePose image_pose;
  std::string settings_hash;
};

/// Line-integral radiograph, row-major (x fastest).
struct RadiographImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;
  RenderMeta meta;

  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  static RadiographImage blank(int width, int height);
};

/// Default ray step: half the smallest voxel spacing.
double default_step(const Volume& vol);

/// Anatomy-only line integrals with uniform midpoint samples along each
/// source-to-pixel ray, clipped to the voxel-center box.
RadiographImage render_anatomy(const Volume& vol, const ProjectionGeometry& g, double step);

/// Screw-only line integrals (mu_metal times the analytic chord).
RadiographImage render_screw(const ScrewModel& screw, const WorldPose& wp, const ProjectionGeometry& g);

/// Anatomy plus screw, with ground-truth metadata filled in.
RadiographImage render(const Volume& vol, const ScrewModel& screw, const WorldPose& wp,
                       const ProjectionGeometry& g, double step);

/// Inverted display window: lo -> 255, hi -> 0, round-half-up.
std::vector<std::uint8_t> window_to_8bit(const RadiographImage& img, double lo, double hi);

/// 16-bit quantization used by the dataset PNGs.
std::vector<std::uint16_t> quantize_16bit(const RadiographImage& img, double lo, double hi);
void dequantize_16bit(const std::vector<std::uint16_t>& q, double lo, double hi, RadiographImage& img);

std::string encode_png_gray8(int width, int height, const std::vector<std::uint8_t>& pixels);
void write_png_gray8(const std::filesystem::path& path, int width, int height,
                     const std::vector<std::uint8_t>& pixels);
void write_png_gray16(const std::filesystem::path& path, int width, int height,
                      const std::vector<std::uint16_t>& pixels);
/// Reads a 16-bit (or 8-bit, widened) grayscale PNG.
std::vector<std::uint16_t> read_png_gray16(const std::filesystem::path& path, int& width, int& height);

void write_raw_f32(const std::filesystem::path& path, const RadiographImage& img);
void read_raw_f32(const std::filesystem::path& path, RadiographImage& img);

}  // namespace radpose
