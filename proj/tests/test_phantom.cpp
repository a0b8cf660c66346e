#include <gtest/gtest.h>

#include <cmath>

#include "radpose/phantom.hpp"
#include "test_support.hpp"

namespace radpose {
namespace {

AnatomySpec small_spec(std::uint64_t seed) {
  AnatomySpec s;
  s.seed = seed;
  s.dims = {48, 44, 50};
  s.spacing = Vec3(2.5, 2.5, 2.5);
  return s;
}

// Brute-force chord: fraction of fine samples inside the two cylinders.
double sampled_chord(const ScrewModel& s, const WorldPose& wp, const Vec3& o, const Vec3& d) {
  const Vec3 axis = wp.axis.normalized();
  const double h = 1e-3;
  double inside = 0.0;
  const double t_mid = (wp.origin - o).dot(d);
  for (double t = t_mid - 20.0; t < t_mid + 20.0; t += h) {
    const Vec3 rel = o + (t + 0.5 * h) * d - wp.origin;
    const double x = rel.dot(axis);
    const double r = (rel - x * axis).norm();
    const bool head = x >= -s.head_length && x <= 0.0 && r <= s.head_radius;
    const bool shaft = x >= 0.0 && x <= s.shaft_length && r <= s.shaft_radius;
    if (head || shaft) inside += h;
  }
  return inside;
}

TEST(Volume, TrilinearSampleReproducesLinearField) {
  Volume v = Volume::uniform({5, 6, 7}, Vec3(1.0, 2.0, 0.5), 0.0f);
  auto field = [](const Vec3& p) { return 0.3 + 0.01 * p.x() - 0.02 * p.y() + 0.04 * p.z(); };
  for (int k = 0; k < 7; ++k)
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 5; ++i)
        v.at(i, j, k) = static_cast<float>(field(v.origin + Vec3(i * 1.0, j * 2.0, k * 0.5)));
  Rng rng(1);
  for (int n = 0; n < 500; ++n) {
    const Vec3 p = v.lower() + (v.upper() - v.lower()).cwiseProduct(
                                   Vec3(rng.uniform(), rng.uniform(), rng.uniform()));
    EXPECT_NEAR(v.sample(p), field(p), 1e-6);
  }
  EXPECT_NEAR(v.sample(v.upper()), field(v.upper()), 1e-6);
  EXPECT_EQ(v.sample(v.upper() + Vec3(1e-6, 0, 0)), 0.0);
  EXPECT_EQ(v.sample(v.lower() - Vec3(0, 0, 1e-6)), 0.0);
}

TEST(Volume, UniformIsCentered) {
  const Volume v = Volume::uniform({4, 4, 4}, Vec3(2, 2, 2), 0.5f);
  EXPECT_NEAR((v.lower() + v.upper()).norm(), 0.0, 1e-12);
  EXPECT_EQ(v.voxel_count(), 64u);
  EXPECT_FLOAT_EQ(v.sample(Vec3::Zero()), 0.5f);
}

TEST(Anatomy, IsBitIdenticalForSameSpecAndDiffersAcrossSeeds) {
  const Volume a = generate_anatomy(small_spec(7));
  const Volume b = generate_anatomy(small_spec(7));
  const Volume c = generate_anatomy(small_spec(8));
  EXPECT_EQ(a.data, b.data);
  EXPECT_NE(a.data, c.data);
  EXPECT_EQ(a.seed, 7u);
}

TEST(Anatomy, ShellIsBoneAndOutsideIsAir) {
  const AnatomySpec spec = small_spec(3);
  const Volume v = generate_anatomy(spec);
  const AnatomyShape shape = anatomy_shape(spec);
  for (float mu : v.data) {
    ASSERT_GE(mu, 0.0f);
    ASSERT_LE(mu, static_cast<float>(spec.mu_bone));
  }
  Rng rng(4);
  int checked = 0;
  for (int n = 0; n < 200; ++n) {
    const Vec3 dir = testing::random_unit(rng);
    const Vec3 surf = shape.surface_point(dir);
    const Vec3 normal = shape.surface_normal(surf);
    // 1.5 mm inside the outer surface is within the 4 mm shell for these curvatures.
    const Vec3 in_shell = surf - 1.5 * normal;
    const Vec3 outside = surf + 4.0 * normal;
    auto nearest = [&](const Vec3& p, int& i, int& j, int& k) {
      const Vec3 f = (p - v.origin).cwiseQuotient(v.spacing);
      i = static_cast<int>(std::lround(f.x()));
      j = static_cast<int>(std::lround(f.y()));
      k = static_cast<int>(std::lround(f.z()));
      return i >= 0 && j >= 0 && k >= 0 && i < v.dims[0] && j < v.dims[1] && k < v.dims[2];
    };
    int i, j, k;
    if (nearest(outside, i, j, k)) EXPECT_EQ(v.at(i, j, k), 0.0f);
    // Voxel centers are on a 2.5 mm grid; test only those that sit in the shell.
    if (nearest(in_shell, i, j, k)) {
      const Vec3 c = v.origin + Vec3(i, j, k).cwiseProduct(v.spacing);
      const Vec3 rel = (c - shape.center).cwiseQuotient(shape.semi_axes);
      const Vec3 inner = shape.semi_axes.array() - spec.shell_thickness;
      const Vec3 rel_in = (c - shape.center).cwiseQuotient(inner);
      if (rel.squaredNorm() <= 1.0 && rel_in.squaredNorm() > 1.0) {
        EXPECT_FLOAT_EQ(v.at(i, j, k), static_cast<float>(spec.mu_bone));
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(AnatomyShape, SurfacePointAndNormalMatchImplicitFunction) {
  AnatomyShape s;
  s.semi_axes = Vec3(50, 40, 60);
  Rng rng(5);
  auto f = [&](const Vec3& p) { return (p.cwiseQuotient(s.semi_axes)).squaredNorm() - 1.0; };
  for (int n = 0; n < 100; ++n) {
    const Vec3 dir = testing::random_unit(rng);
    const Vec3 p = s.surface_point(dir);
    EXPECT_NEAR(f(p), 0.0, 1e-12);
    EXPECT_NEAR(p.normalized().dot(dir), 1.0, 1e-12);
    const double h = 1e-5;
    Vec3 grad;
    for (int a = 0; a < 3; ++a) {
      Vec3 e = Vec3::Zero();
      e[a] = h;
      grad[a] = (f(p + e) - f(p - e)) / (2 * h);
    }
    EXPECT_NEAR((s.surface_normal(p) - grad.normalized()).norm(), 0.0, 1e-7);
  }
}

TEST(AnatomyShape, JitterStaysWithinBounds) {
  for (std::uint64_t seed = 1; seed < 50; ++seed) {
    AnatomySpec spec;
    spec.seed = seed;
    const auto shape = anatomy_shape(spec);
    for (int a = 0; a < 3; ++a) {
      EXPECT_LE(std::abs(shape.semi_axes[a] / spec.semi_axes[a] - 1.0), spec.axis_jitter + 1e-12);
    }
  }
}

TEST(VolumeIo, RoundTripsExactly) {
  const Volume v = generate_anatomy(small_spec(9));
  const auto dir = testing::scratch_dir("volume_io");
  save_volume(v, dir / "vol");
  const Volume back = load_volume(dir / "vol");
  EXPECT_EQ(back.dims, v.dims);
  EXPECT_EQ(back.spacing, v.spacing);
  EXPECT_EQ(back.origin, v.origin);
  EXPECT_EQ(back.seed, v.seed);
  EXPECT_EQ(back.data, v.data);
  EXPECT_THROW(load_volume(dir / "missing"), Error);
}

TEST(ScrewChord, AnalyticSpecialCases) {
  ScrewModel s;
  WorldPose wp;
  wp.axis = Vec3::UnitX();
  const Vec3 down = Vec3::UnitZ();
  // Through the shaft middle, perpendicular to the axis.
  EXPECT_NEAR(screw_ray_pathlength(s, wp, Vec3(4.5, 0, -50), down), 2 * s.shaft_radius, 1e-12);
  // Through the head.
  EXPECT_NEAR(screw_ray_pathlength(s, wp, Vec3(-1.0, 0, -50), down), 2 * s.head_radius, 1e-12);
  // Offset by half the shaft radius: chord 2 sqrt(r^2 - y^2).
  EXPECT_NEAR(screw_ray_pathlength(s, wp, Vec3(4.5, 0.5, -50), down), 2 * std::sqrt(1.0 - 0.25), 1e-12);
  // Along the axis: full length, head and shaft together.
  EXPECT_NEAR(screw_ray_pathlength(s, wp, Vec3(-30, 0, 0), Vec3::UnitX()), s.head_length + s.shaft_length,
              1e-12);
  // Miss.
  EXPECT_EQ(screw_ray_pathlength(s, wp, Vec3(4.5, 3.0, -50), down), 0.0);
  EXPECT_EQ(screw_ray_pathlength(s, wp, Vec3(12.0, 0, -50), down), 0.0);
}

TEST(ScrewChord, MatchesSampledOracleForObliqueRays) {
  ScrewModel s;
  Rng rng(6);
  for (int n = 0; n < 40; ++n) {
    WorldPose wp;
    wp.origin = Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
    wp.axis = testing::random_unit(rng);
    const Vec3 d = testing::random_unit(rng);
    const Vec3 target = wp.origin + wp.axis * rng.uniform(-2, 9) + testing::random_unit(rng) * rng.uniform(0, 1.5);
    const Vec3 o = target - 40.0 * d;
    EXPECT_NEAR(screw_ray_pathlength(s, wp, o, d), sampled_chord(s, wp, o, d), 4e-3) << n;
  }
}

TEST(ScrewKeypointsTest, LayoutFollowsAxisAndOrthogonalLine) {
  ScrewModel s;
  const auto g = default_geometry();
  Rng rng(7);
  for (int n = 0; n < 50; ++n) {
    const WorldPose wp = testing::random_pose(rng);
    const auto kp = screw_keypoints(s, wp, g);
    const Vec3 view = (wp.origin - g.source).normalized();
    EXPECT_NEAR((kp.world[0] - wp.origin).norm(), 0.0, 1e-12);
    EXPECT_NEAR((kp.world[2] - (wp.origin + s.shaft_length * wp.axis)).norm(), 0.0, 1e-9);
    EXPECT_NEAR((kp.world[1] - 0.5 * (kp.world[0] + kp.world[2])).norm(), 0.0, 1e-9);
    const Vec3 b = kp.world[5] - kp.world[3];
    EXPECT_NEAR(b.norm(), 2 * s.keypoint_offset, 1e-9);
    EXPECT_NEAR(b.dot(wp.axis), 0.0, 1e-9);
    EXPECT_NEAR(b.dot(view), 0.0, 1e-9);
    EXPECT_NEAR((kp.world[4] - (wp.origin + 0.25 * b)).norm(), 0.0, 1e-9);
    for (std::size_t k = 0; k < kKeypointCount; ++k)
      EXPECT_NEAR((kp.image[k] - project_point(kp.world[k], g)).norm(), 0.0, 1e-12);
  }
}

TEST(ScrewKeypointsTest, AxisAlongViewRayIsRejected) {
  const auto g = default_geometry();
  WorldPose wp;
  wp.axis = Vec3(std::sin(deg2rad(1.0)), 0, std::cos(deg2rad(1.0)));
  EXPECT_THROW(screw_keypoints(ScrewModel{}, wp, g), Error);
}

TEST(ScrewOutline, IsClosedAndDense) {
  const ScrewModel s;
  const auto out = screw_outline(s);
  ASSERT_GT(out.size(), 8u);
  EXPECT_EQ(out.front(), out.back());
  for (std::size_t i = 1; i < out.size(); ++i) EXPECT_LE((out[i] - out[i - 1]).norm(), 1.0 + 1e-12);
  double minx = 1e9, maxx = -1e9, maxr = 0;
  for (const auto& p : out) {
    minx = std::min(minx, p.x());
    maxx = std::max(maxx, p.x());
    maxr = std::max(maxr, std::abs(p.y()));
  }
  EXPECT_DOUBLE_EQ(minx, -s.head_length);
  EXPECT_DOUBLE_EQ(maxx, s.shaft_length);
  EXPECT_DOUBLE_EQ(maxr, s.head_radius);
}

TEST(ScrewModelTest, ValidationAndJson) {
  ScrewModel s;
  EXPECT_NO_THROW(s.validate());
  s.head_radius = 0.5;
  EXPECT_THROW(s.validate(), Error);
  s = ScrewModel{};
  s.shaft_length = 12.5;
  const ScrewModel back = nlohmann::json::parse(nlohmann::json(s).dump()).get<ScrewModel>();
  EXPECT_EQ(back.shaft_length, 12.5);
  EXPECT_EQ(back.keypoint_offset, s.keypoint_offset);
}

TEST(ScrewRadial, IsUnitPerpendicularAndRotatesWithRoll) {
  WorldPose wp;
  wp.axis = Vec3(0.2, 0.3, 0.9).normalized();
  const Vec3 r0 = screw_radial_direction(wp);
  wp.roll = 90.0;
  const Vec3 r90 = screw_radial_direction(wp);
  EXPECT_NEAR(r0.norm(), 1.0, 1e-12);
  EXPECT_NEAR(r0.dot(wp.axis), 0.0, 1e-12);
  EXPECT_NEAR(r0.dot(r90), 0.0, 1e-12);
  EXPECT_NEAR(r0.cross(r90).dot(wp.axis), 1.0, 1e-12);
}

}  // namespace
}  // namespace radpose
