#pragma once

#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "radpose/geometry.hpp"
#include "radpose/patchify.hpp"
#include "radpose/regressor.hpp"

namespace radpose {

struct Line2 {
  Pixel point = Pixel::Zero();      // centroid of the fitted points
  Pixel direction = Pixel::UnitX();  // unit length
};

/// Total-least-squares line. The direction points from the first point
/// toward the last. Throws DegeneratePoints when all points coincide.
Line2 fit_line(std::span<const Pixel> points);

/// Unique intersection of two lines. Throws NearParallel when the lines meet
/// at less than `min_angle_deg`.
Pixel intersect_lines(const Line2& a, const Line2& b, double min_angle_deg);

/// Point on `line` closest to `p`.
Pixel closest_point(const Line2& line, const Pixel& p);

/// Forward angle (degrees, raster convention) of an image direction.
double direction_angle_deg(const Pixel& dir);

struct EstimatorConfig {
  int iterations = 3;
  double min_line_angle_deg = 10.0;
  PatchSpec patch;

  void validate() const;
};

struct Reconstruction {
  ImagePose pose;
  bool fallback = false;  // lines nearly parallel; origin taken on line A
};

/// Keypoints (normalized patch coordinates) to an image pose. Depth, tilt and
/// axis_sign are copied from `current`.
Reconstruction reconstruct(const KeypointSet& kp, const PatchFrame& frame, const ImagePose& current,
                           double min_line_angle_deg);

struct EstimateResult {
  ImagePose pose;
  std::vector<ImagePose> trace;  // initial estimate followed by one entry per completed iteration
  bool fallback = false;         // any iteration used the near-parallel fallback
  bool out_of_image = false;     // aborted early; pose is the last valid estimate
  int iterations_done = 0;
};

EstimateResult estimate(const RadiographImage& img, const ImagePose& initial, const KeypointPredictor& model,
                        const EstimatorConfig& cfg);

/// One evaluation row.
struct EvaluationRecord {
  std::string image_id;
  int repetition = 0;
  int iterations = 0;
  Pixel x_gt = Pixel::Zero();
  Pixel x_est = Pixel::Zero();
  double alpha_gt = 0.0;
  double alpha_est = 0.0;
  double position_error_mm = 0.0;
  Eigen::Vector2d position_error_uv_mm = Eigen::Vector2d::Zero();
  double forward_angle_error_deg = 0.0;
  bool fallback = false;
  bool out_of_image = false;
};

void write_evaluation_header(std::ostream& os);
void write_evaluation_row(std::ostream& os, const EvaluationRecord& r);

void to_json(nlohmann::json& j, const EstimatorConfig& c);
void from_json(const nlohmann::json& j, EstimatorConfig& c);

}  // namespace radpose
