#include "radpose/renderer.hpp"

#include <fmt/format.h>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "radpose/parallel.hpp"
#include "radpose/random.hpp"

namespace radpose {

namespace {

// Ray/box slab test; returns false when the line misses the box or only
// touches it.
bool clip_to_box(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi, double& t0, double& t1) {
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo[a] || o[a] > hi[a]) return false;
      continue;
    }
    double s0 = (lo[a] - o[a]) / d[a];
    double s1 = (hi[a] - o[a]) / d[a];
    if (s0 > s1) std::swap(s0, s1);
    t0 = std::max(t0, s0);
    t1 = std::min(t1, s1);
  }
  return t1 > t0;
}

double integrate_ray(const Volume& vol, const Vec3& o, const Vec3& d, double step) {
  double t0, t1;
  if (!clip_to_box(o, d, vol.lower(), vol.upper(), t0, t1)) return 0.0;
  const double length = t1 - t0;
  const auto n = static_cast<long>(std::ceil(length / step - 1e-12));
  if (n <= 0) return 0.0;
  const double h = length / static_cast<double>(n);
  const Vec3 inv = vol.spacing.cwiseInverse();
  const Vec3 f0 = (o - vol.origin).cwiseProduct(inv);
  const Vec3 df = d.cwiseProduct(inv);
  const int nx = vol.dims[0], ny = vol.dims[1], nz = vol.dims[2];
  const std::size_t sy = static_cast<std::size_t>(nx);
  const std::size_t sz = static_cast<std::size_t>(nx) * ny;
  const float* data = vol.data.data();
  double sum = 0.0;
  for (long k = 0; k < n; ++k) {
    const double t = t0 + (static_cast<double>(k) + 0.5) * h;
    const double fx = std::clamp(f0.x() + t * df.x(), 0.0, nx - 1.0);
    const double fy = std::clamp(f0.y() + t * df.y(), 0.0, ny - 1.0);
    const double fz = std::clamp(f0.z() + t * df.z(), 0.0, nz - 1.0);
    const int i = std::min(static_cast<int>(fx), std::max(nx - 2, 0));
    const int j = std::min(static_cast<int>(fy), std::max(ny - 2, 0));
    const int l = std::min(static_cast<int>(fz), std::max(nz - 2, 0));
    const double tx = fx - i, ty = fy - j, tz = fz - l;
    const float* p = data + i + sy * j + sz * l;
    const std::size_t ox = nx > 1 ? 1 : 0, oy = ny > 1 ? sy : 0, oz = nz > 1 ? sz : 0;
    const double c00 = p[0] + tx * (p[ox] - p[0]);
    const double c10 = p[oy] + tx * (p[oy + ox] - p[oy]);
    const double c01 = p[oz] + tx * (p[oz + ox] - p[oz]);
    const double c11 = p[oz + oy] + tx * (p[oz + oy + ox] - p[oz + oy]);
    const double c0 = c00 + ty * (c10 - c00);
    const double c1 = c01 + ty * (c11 - c01);
    sum += c0 + tz * (c1 - c0);
  }
  return sum * h;
}

std::uint64_t hash_double(std::uint64_t h, double v) { return mix64(h ^ std::bit_cast<std::uint64_t>(v)); }

std::string settings_hash(const Volume& vol, const ScrewModel& s, double step) {
  std::uint64_t h = mix64(vol.seed);
  for (double v : {step, vol.spacing.x(), vol.spacing.y(), vol.spacing.z(), s.shaft_length,
                   s.shaft_radius, s.head_radius, s.head_length, s.mu_metal})
    h = hash_double(h, v);
  for (int d : vol.dims) h = mix64(h ^ static_cast<std::uint64_t>(d));
  return fmt::format("{:016x}", h);
}

struct PngWriteDeleter {
  png_structp png;
  png_infop info;
  ~PngWriteDeleter() { png_destroy_write_struct(&png, &info); }
};

void png_append(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

void png_flush_noop(png_structp) {}

std::string encode_png(int width, int height, int bit_depth, const std::uint8_t* rows, std::size_t row_bytes) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::Io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  PngWriteDeleter guard{png, info};
  if (!info) throw Error(ErrorCode::Io, "png_create_info_struct failed");
  std::string out;
  if (setjmp(png_jmpbuf(png))) throw Error(ErrorCode::Io, "PNG encoding failed");
  png_set_write_fn(png, &out, png_append, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rows + static_cast<std::size_t>(y) * row_bytes));
  png_write_end(png, nullptr);
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace

RadiographImage RadiographImage::blank(int width, int height) {
  RadiographImage img;
  img.width = width;
  img.height = height;
  img.pixels.assign(static_cast<std::size_t>(width) * height, 0.0f);
  img.meta.geometry.image_width = width;
  img.meta.geometry.image_height = height;
  return img;
}

double default_step(const Volume& vol) { return 0.5 * vol.spacing.minCoeff(); }

RadiographImage render_anatomy(const Volume& vol, const ProjectionGeometry& g, double step) {
  if (!(step > 0.0)) throw Error(ErrorCode::InvalidConfig, "render step must be > 0");
  {
    const Vec3 principal = g.normal();
    double t0, t1;
    if (!clip_to_box(g.source, principal, vol.lower(), vol.upper(), t0, t1))
      throw Error(ErrorCode::EmptyScene, "principal ray misses the volume");
  }
  RadiographImage img = RadiographImage::blank(g.image_width, g.image_height);
  img.meta.geometry = g;
  img.meta.anatomy_seed = vol.seed;
  parallel_for(g.image_height, [&](int y) {
    for (int x = 0; x < g.image_width; ++x) {
      const Vec3 d = g.ray_direction(Pixel(x, y));
      img.at(x, y) = static_cast<float>(integrate_ray(vol, g.source, d, step));
    }
  });
  return img;
}

RadiographImage render_screw(const ScrewModel& screw, const WorldPose& wp, const ProjectionGeometry& g) {
  RadiographImage img = RadiographImage::blank(g.image_width, g.image_height);
  img.meta.geometry = g;
  img.meta.world_pose = wp;
  parallel_for(g.image_height, [&](int y) {
    for (int x = 0; x < g.image_width; ++x) {
      const Vec3 d = g.ray_direction(Pixel(x, y));
      img.at(x, y) = static_cast<float>(screw.mu_metal * screw_ray_pathlength(screw, wp, g.source, d));
    }
  });
  return img;
}

RadiographImage render(const Volume& vol, const ScrewModel& screw, const WorldPose& wp,
                       const ProjectionGeometry& g, double step) {
  RadiographImage img = render_anatomy(vol, g, step);
  parallel_for(g.image_height, [&](int y) {
    for (int x = 0; x < g.image_width; ++x) {
      const Vec3 d = g.ray_direction(Pixel(x, y));
      // Same float terms as render_anatomy + render_screw, so the images add exactly.
      const auto screw_part =
          static_cast<float>(screw.mu_metal * screw_ray_pathlength(screw, wp, g.source, d));
      img.at(x, y) += screw_part;
    }
  });
  img.meta.world_pose = wp;
  img.meta.image_pose = world_to_image_pose(wp, g);
  img.meta.settings_hash = settings_hash(vol, screw, step);
  return img;
}

std::vector<std::uint8_t> window_to_8bit(const RadiographImage& img, double lo, double hi) {
  if (!(lo < hi)) throw Error(ErrorCode::InvalidConfig, "window requires lo < hi");
  std::vector<std::uint8_t> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = 255.0 * (1.0 - (img.pixels[i] - lo) / (hi - lo));
    out[i] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
  }
  return out;
}

std::vector<std::uint16_t> quantize_16bit(const RadiographImage& img, double lo, double hi) {
  if (!(lo < hi)) throw Error(ErrorCode::InvalidConfig, "quantization requires lo < hi");
  std::vector<std::uint16_t> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = 65535.0 * (img.pixels[i] - lo) / (hi - lo);
    out[i] = static_cast<std::uint16_t>(std::clamp(std::floor(v + 0.5), 0.0, 65535.0));
  }
  return out;
}

void dequantize_16bit(const std::vector<std::uint16_t>& q, double lo, double hi, RadiographImage& img) {
  img.pixels.resize(q.size());
  for (std::size_t i = 0; i < q.size(); ++i)
    img.pixels[i] = static_cast<float>(lo + (hi - lo) * (q[i] / 65535.0));
}

std::string encode_png_gray8(int width, int height, const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw Error(ErrorCode::ShapeMismatch, "pixel buffer does not match image size");
  return encode_png(width, height, 8, pixels.data(), static_cast<std::size_t>(width));
}

void write_png_gray8(const std::filesystem::path& path, int width, int height,
                     const std::vector<std::uint8_t>& pixels) {
  write_file(path, encode_png_gray8(width, height, pixels));
}

void write_png_gray16(const std::filesystem::path& path, int width, int height,
                      const std::vector<std::uint16_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw Error(ErrorCode::ShapeMismatch, "pixel buffer does not match image size");
  write_file(path, encode_png(width, height, 16, reinterpret_cast<const std::uint8_t*>(pixels.data()),
                              static_cast<std::size_t>(width) * 2));
}

std::vector<std::uint16_t> read_png_gray16(const std::filesystem::path& path, int& width, int& height) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw Error(ErrorCode::Io, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_read_struct(png, info, nullptr); }
  } guard{&png, &info};
  if (!png || !info) throw Error(ErrorCode::Io, "libpng initialisation failed");
  if (setjmp(png_jmpbuf(png))) throw Error(ErrorCode::Io, "PNG decoding failed for " + path.string());
  png_init_io(png, fp.get());
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY)
    throw Error(ErrorCode::Io, "expected a grayscale PNG: " + path.string());
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  std::vector<std::uint8_t> raw(row_bytes * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) png_read_row(png, raw.data() + static_cast<std::size_t>(y) * row_bytes, nullptr);
  png_read_end(png, nullptr);

  std::vector<std::uint16_t> out(static_cast<std::size_t>(width) * height);
  if (depth == 16) {
    for (int y = 0; y < height; ++y)
      std::memcpy(out.data() + static_cast<std::size_t>(y) * width, raw.data() + static_cast<std::size_t>(y) * row_bytes,
                  static_cast<std::size_t>(width) * 2);
  } else {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        out[static_cast<std::size_t>(y) * width + x] =
            static_cast<std::uint16_t>(raw[static_cast<std::size_t>(y) * row_bytes + x] * 257);
  }
  return out;
}

void write_raw_f32(const std::filesystem::path& path, const RadiographImage& img) {
  static_assert(std::endian::native == std::endian::little, "raw sidecars are little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
}

void read_raw_f32(const std::filesystem::path& path, RadiographImage& img) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size() * sizeof(float)))
    throw Error(ErrorCode::Io, "truncated raw image " + path.string());
}

}  // namespace radpose
