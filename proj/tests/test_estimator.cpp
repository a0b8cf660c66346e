#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "radpose/estimator.hpp"
#include "test_support.hpp"

namespace radpose {
namespace {

using testing::OracleRegressor;

// Sum of squared perpendicular distances to the line through the centroid.
double perpendicular_cost(const std::vector<Pixel>& pts, double theta) {
  Pixel c = Pixel::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  const Pixel n(-std::sin(theta), std::cos(theta));
  double s = 0.0;
  for (const auto& p : pts) s += std::pow((p - c).dot(n), 2);
  return s;
}

// Keypoints moved in image space before conversion to patch coordinates.
class EditedOracle final : public KeypointPredictor {
 public:
  using Edit = std::function<void(std::array<Pixel, kKeypointCount>&)>;
  EditedOracle(const ScrewKeypoints& kp, Edit edit) : image_(kp.image) { edit(image_); }
  KeypointSet predict(const Patch& patch) const override {
    KeypointSet out;
    for (std::size_t k = 0; k < kKeypointCount; ++k) out.points[k] = patch.frame.image_to_patch_coords(image_[k]);
    return out;
  }

 private:
  std::array<Pixel, kKeypointCount> image_;
};

RadiographImage blank_image() {
  RadiographImage img = RadiographImage::blank(256, 256);
  img.meta.geometry = default_geometry();
  return img;
}

TEST(FitLine, MatchesGridSearchOptimum) {
  Rng rng(1);
  for (int n = 0; n < 30; ++n) {
    const double theta = rng.uniform(-kPi, kPi);
    const Pixel dir(std::cos(theta), std::sin(theta));
    std::vector<Pixel> pts;
    for (int i = 0; i < 5; ++i)
      pts.push_back(Pixel(50, 60) + (i * 3.0) * dir + Pixel(rng.normal(0, 0.7), rng.normal(0, 0.7)));
    const Line2 fit = fit_line(pts);
    double best = 0.0, best_cost = 1e300;
    for (double t = 0.0; t < kPi; t += deg2rad(0.005)) {
      const double c = perpendicular_cost(pts, t);
      if (c < best_cost) {
        best_cost = c;
        best = t;
      }
    }
    const Pixel grid_dir(std::cos(best), std::sin(best));
    EXPECT_GT(std::abs(fit.direction.dot(grid_dir)), std::cos(deg2rad(0.01))) << n;
    EXPECT_NEAR(fit.direction.norm(), 1.0, 1e-12);
    EXPECT_LE(perpendicular_cost(pts, std::atan2(fit.direction.y(), fit.direction.x())), best_cost + 1e-9);
    EXPECT_GT(fit.direction.dot(pts.back() - pts.front()), 0.0);
  }
}

TEST(FitLine, ExactPointsAndDegeneracy) {
  const std::vector<Pixel> pts{{3, 1}, {2, 3}, {1, 5}};
  const Line2 l = fit_line(pts);
  EXPECT_NEAR((l.point - Pixel(2, 3)).norm(), 0.0, 1e-12);
  EXPECT_NEAR((l.direction - Pixel(-1, 2).normalized()).norm(), 0.0, 1e-12);
  const std::vector<Pixel> same{{1, 1}, {1, 1}, {1, 1}};
  try {
    fit_line(same);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegeneratePoints);
  }
}

TEST(IntersectLines, MatchesLinearSolve) {
  Rng rng(2);
  for (int n = 0; n < 100; ++n) {
    Line2 a{Pixel(rng.uniform(0, 100), rng.uniform(0, 100)), Pixel(rng.normal(), rng.normal()).normalized()};
    Line2 b{Pixel(rng.uniform(0, 100), rng.uniform(0, 100)), Pixel(rng.normal(), rng.normal()).normalized()};
    const double angle = rad2deg(std::asin(std::abs(a.direction.x() * b.direction.y() - a.direction.y() * b.direction.x())));
    if (angle < 10.5) continue;
    Eigen::Matrix2d M;
    M.col(0) = a.direction;
    M.col(1) = -b.direction;
    const Eigen::Vector2d st = M.fullPivLu().solve(b.point - a.point);
    const Pixel want = a.point + st[0] * a.direction;
    EXPECT_NEAR((intersect_lines(a, b, 10.0) - want).norm(), 0.0, 1e-9);
  }
}

TEST(IntersectLines, RejectsLinesBelowMinimumAngle) {
  const Line2 a{Pixel(0, 0), Pixel(1, 0)};
  auto at = [](double deg) { return Line2{Pixel(5, 5), Pixel(std::cos(deg2rad(deg)), std::sin(deg2rad(deg)))}; };
  EXPECT_NO_THROW(intersect_lines(a, at(10.5), 10.0));
  EXPECT_NO_THROW(intersect_lines(a, at(169.5), 10.0));
  for (double deg : {9.5, 170.5, 0.0}) {
    try {
      intersect_lines(a, at(deg), 10.0);
      FAIL() << deg;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::NearParallel);
    }
  }
}

TEST(LineHelpers, ClosestPointAndDirectionAngle) {
  const Line2 l{Pixel(1, 1), Pixel(1, 0)};
  EXPECT_NEAR((closest_point(l, Pixel(4, 7)) - Pixel(4, 1)).norm(), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(direction_angle_deg(Pixel(1, 0)), 0.0);
  EXPECT_DOUBLE_EQ(direction_angle_deg(Pixel(0, 1)), 90.0);
  EXPECT_DOUBLE_EQ(direction_angle_deg(Pixel(-1, 0)), 180.0);
  EXPECT_DOUBLE_EQ(direction_angle_deg(Pixel(0, -2)), -90.0);
}

TEST(Reconstruct, OracleKeypointsGiveExactPose) {
  const auto g = default_geometry();
  Rng rng(3);
  for (int n = 0; n < 100; ++n) {
    const WorldPose wp = testing::random_pose(rng);
    const ImagePose gt = world_to_image_pose(wp, g);
    ImagePose current = gt;
    current.x_instr += Pixel(rng.normal(0, 4), rng.normal(0, 4));
    current.alpha = wrap_deg(gt.alpha + rng.normal(0, 8));
    current.depth = 123.0;
    const PatchFrame frame(current.x_instr, current.alpha, PatchSpec{});
    const auto kp = screw_keypoints(ScrewModel{}, wp, g);
    Patch dummy;
    dummy.frame = frame;
    const auto rec = reconstruct(OracleRegressor(kp).predict(dummy), frame, current, 10.0);
    EXPECT_FALSE(rec.fallback);
    EXPECT_NEAR((rec.pose.x_instr - gt.x_instr).norm(), 0.0, 1e-8);
    EXPECT_NEAR(forward_angle_error(gt.alpha, rec.pose.alpha), 0.0, 1e-8);
    EXPECT_EQ(rec.pose.depth, 123.0);
    EXPECT_EQ(rec.pose.tilt, current.tilt);
  }
}

TEST(Estimate, OracleRegressorConvergesToGroundTruth) {
  const auto img = blank_image();
  const auto& g = img.meta.geometry;
  Rng rng(4);
  EstimatorConfig cfg;
  for (int n = 0; n < 50; ++n) {
    const WorldPose wp = testing::random_pose(rng);
    const ImagePose gt = world_to_image_pose(wp, g);
    ImagePose init = gt;
    init.x_instr += Pixel(rng.normal(0, 5), rng.normal(0, 5));
    init.alpha = wrap_deg(gt.alpha + rng.normal(0, 10));
    const OracleRegressor oracle(screw_keypoints(ScrewModel{}, wp, g));
    const auto r = estimate(img, init, oracle, cfg);
    EXPECT_EQ(r.iterations_done, 3);
    ASSERT_EQ(r.trace.size(), 4u);
    EXPECT_EQ(r.trace.front().x_instr, init.x_instr);
    EXPECT_FALSE(r.out_of_image);
    EXPECT_NEAR(position_error_mm(wp, r.pose.x_instr, g), 0.0, 1e-8);
    EXPECT_NEAR(forward_angle_error(gt.alpha, r.pose.alpha), 0.0, 1e-8);
    // Converged after the first iteration.
    EXPECT_NEAR((r.trace[1].x_instr - gt.x_instr).norm(), 0.0, 1e-8);
  }
}

TEST(Estimate, ShiftingLineBAlongAxisMovesOriginAlongAxis) {
  const auto img = blank_image();
  const auto& g = img.meta.geometry;
  WorldPose wp;
  wp.axis = Vec3(std::cos(deg2rad(30.0)), std::sin(deg2rad(30.0)), 0.0);
  const auto kp = screw_keypoints(ScrewModel{}, wp, g);
  const Pixel axis_dir = (kp.image[2] - kp.image[0]).normalized();
  const double shift = 2.5;
  const EditedOracle shifted(kp, [&](auto& pts) {
    for (std::size_t k = 3; k < 6; ++k) pts[k] += shift * axis_dir;
  });
  const ImagePose gt = world_to_image_pose(wp, g);
  const auto r = estimate(img, gt, shifted, EstimatorConfig{});
  EXPECT_NEAR((r.pose.x_instr - (gt.x_instr + shift * axis_dir)).norm(), 0.0, 1e-8);
  EXPECT_NEAR(forward_angle_error(gt.alpha, r.pose.alpha), 0.0, 1e-8);
}

TEST(Estimate, RotatingLineAAboutOriginChangesOnlyAngle) {
  const auto img = blank_image();
  const auto& g = img.meta.geometry;
  WorldPose wp;
  wp.axis = Vec3(0.0, -1.0, 0.3).normalized();
  const auto kp = screw_keypoints(ScrewModel{}, wp, g);
  const double phi = deg2rad(12.0);
  const Eigen::Rotation2Dd rot(phi);
  const EditedOracle rotated(kp, [&](auto& pts) {
    for (std::size_t k = 1; k < 3; ++k) pts[k] = pts[0] + rot * (pts[k] - pts[0]);
  });
  const ImagePose gt = world_to_image_pose(wp, g);
  EstimatorConfig cfg;
  cfg.iterations = 1;
  const auto r = estimate(img, gt, rotated, cfg);
  EXPECT_NEAR((r.pose.x_instr - gt.x_instr).norm(), 0.0, 1e-8);
  EXPECT_NEAR(forward_angle_error(gt.alpha, r.pose.alpha), 12.0, 1e-8);
}

TEST(Estimate, ParallelLinesFallBackToLineA) {
  const auto img = blank_image();
  const auto& g = img.meta.geometry;
  WorldPose wp;
  wp.axis = Vec3::UnitX();
  const auto kp = screw_keypoints(ScrewModel{}, wp, g);
  // Put line B on a parallel offset of line A.
  const EditedOracle parallel(kp, [&](auto& pts) {
    for (std::size_t k = 0; k < 3; ++k) pts[k + 3] = pts[k] + Pixel(0.0, 4.0);
  });
  EstimatorConfig cfg;
  cfg.iterations = 1;
  const ImagePose gt = world_to_image_pose(wp, g);
  const auto r = estimate(img, gt, parallel, cfg);
  EXPECT_TRUE(r.fallback);
  // Closest point on A to B's centroid is A's own centroid (A2).
  EXPECT_NEAR((r.pose.x_instr - kp.image[1]).norm(), 0.0, 1e-8);
}

TEST(Estimate, OutOfImageHandling) {
  const auto img = blank_image();
  const auto& g = img.meta.geometry;
  WorldPose wp;
  wp.axis = Vec3::UnitX();
  const auto kp = screw_keypoints(ScrewModel{}, wp, g);
  ImagePose init = world_to_image_pose(wp, g);
  init.x_instr = Pixel(-3, 10);
  try {
    estimate(img, init, OracleRegressor(kp), EstimatorConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EstimateOutOfImage);
  }
  // A predictor that drags the estimate off the detector.
  const EditedOracle away(kp, [](auto& pts) {
    for (auto& p : pts) p += Pixel(500.0, 0.0);
  });
  init = world_to_image_pose(wp, g);
  const auto r = estimate(img, init, away, EstimatorConfig{});
  EXPECT_TRUE(r.out_of_image);
  EXPECT_EQ(r.pose.x_instr, init.x_instr);
  EXPECT_EQ(r.iterations_done, 1);
}

TEST(EvaluationCsv, HeaderAndRowAgree) {
  std::ostringstream os;
  write_evaluation_header(os);
  EvaluationRecord r;
  r.image_id = "test_00001";
  r.repetition = 2;
  r.iterations = 3;
  r.x_gt = Pixel(1.5, 2);
  r.position_error_mm = 0.25;
  r.fallback = true;
  write_evaluation_row(os, r);
  std::istringstream in(os.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header,
            "image_id,repetition,iterations,x_gt_u,x_gt_v,x_est_u,x_est_v,alpha_gt,alpha_est,position_error_mm,"
            "pos_err_u_mm,pos_err_v_mm,forward_angle_error_deg,fallback,out_of_image");
  EXPECT_EQ(row, "test_00001,2,3,1.5,2,0,0,0,0,0.25,0,0,0,1,0");
}

TEST(EstimatorConfigTest, ValidationAndJson) {
  EstimatorConfig c;
  EXPECT_NO_THROW(c.validate());
  c.iterations = 0;
  EXPECT_THROW(c.validate(), Error);
  c = EstimatorConfig{};
  c.min_line_angle_deg = 90.0;
  EXPECT_THROW(c.validate(), Error);
  c = EstimatorConfig{};
  c.iterations = 5;
  const auto back = nlohmann::json::parse(nlohmann::json(c).dump()).get<EstimatorConfig>();
  EXPECT_EQ(back.iterations, 5);
  EXPECT_EQ(back.patch.width, c.patch.width);
}

}  // namespace
}  // namespace radpose
