#include "radpose/estimator.hpp"

#include <cmath>

#include "radpose/stats.hpp"

namespace radpose {

Line2 fit_line(std::span<const Pixel> points) {
  if (points.size() < 2) throw Error(ErrorCode::DegeneratePoints, "at least two points are required");
  Pixel centroid = Pixel::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());

  double sxx = 0.0, syy = 0.0, sxy = 0.0, spread = 0.0;
  for (const auto& p : points) {
    const Pixel d = p - centroid;
    sxx += d.x() * d.x();
    syy += d.y() * d.y();
    sxy += d.x() * d.y();
    spread = std::max(spread, d.norm());
  }
  if (spread < 1e-9) throw Error(ErrorCode::DegeneratePoints, "all points coincide");

  // Principal axis of the 2x2 scatter matrix.
  const double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  Line2 line;
  line.point = centroid;
  line.direction = Pixel(std::cos(theta), std::sin(theta));
  if (line.direction.dot(points.back() - points.front()) < 0.0) line.direction = -line.direction;
  return line;
}

Pixel intersect_lines(const Line2& a, const Line2& b, double min_angle_deg) {
  const double cross = a.direction.x() * b.direction.y() - a.direction.y() * b.direction.x();
  // |cross| = sin of the angle between the lines.
  if (std::abs(cross) < std::sin(deg2rad(min_angle_deg)) || cross == 0.0)
    throw Error(ErrorCode::NearParallel, "lines are nearly parallel");
  const Pixel d = b.point - a.point;
  const double t = (d.x() * b.direction.y() - d.y() * b.direction.x()) / cross;
  return a.point + t * a.direction;
}

Pixel closest_point(const Line2& line, const Pixel& p) {
  return line.point + (p - line.point).dot(line.direction) * line.direction;
}

double direction_angle_deg(const Pixel& dir) { return wrap_deg(rad2deg(std::atan2(dir.y(), dir.x()))); }

void EstimatorConfig::validate() const {
  if (iterations < 1) throw Error(ErrorCode::InvalidConfig, "iterations must be at least 1");
  if (!(min_line_angle_deg > 0.0 && min_line_angle_deg < 90.0))
    throw Error(ErrorCode::InvalidConfig, "min_line_angle_deg must lie in (0, 90)");
  patch.validate();
}

Reconstruction reconstruct(const KeypointSet& kp, const PatchFrame& frame, const ImagePose& current,
                           double min_line_angle_deg) {
  std::array<Pixel, 3> a_pts, b_pts;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!kp.points[i].allFinite() || !kp.points[i + 3].allFinite())
      throw Error(ErrorCode::DegeneratePoints, "non-finite keypoint");
    a_pts[i] = frame.patch_to_image_coords(kp.points[i]);
    b_pts[i] = frame.patch_to_image_coords(kp.points[i + 3]);
  }
  const Line2 a = fit_line(a_pts);
  const Line2 b = fit_line(b_pts);

  Reconstruction r;
  r.pose = current;
  r.pose.alpha = direction_angle_deg(a.direction);
  try {
    r.pose.x_instr = intersect_lines(a, b, min_line_angle_deg);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NearParallel) throw;
    r.pose.x_instr = closest_point(a, b.point);
    r.fallback = true;
  }
  return r;
}

namespace {

bool inside(const RadiographImage& img, const Pixel& p) {
  return p.allFinite() && p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= img.width - 1.0 && p.y() <= img.height - 1.0;
}

}  // namespace

EstimateResult estimate(const RadiographImage& img, const ImagePose& initial, const KeypointPredictor& model,
                        const EstimatorConfig& cfg) {
  cfg.validate();
  if (!inside(img, initial.x_instr))
    throw Error(ErrorCode::EstimateOutOfImage, "initial estimate lies outside the image");

  EstimateResult result;
  result.pose = initial;
  result.trace.push_back(initial);
  for (int it = 0; it < cfg.iterations; ++it) {
    Patch patch;
    try {
      patch = extract_patch(img, result.pose, cfg.patch);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EstimateOutOfImage) throw;
      result.out_of_image = true;
      break;
    }
    const Reconstruction rec = reconstruct(model.predict(patch), patch.frame, result.pose, cfg.min_line_angle_deg);
    result.fallback = result.fallback || rec.fallback;
    result.pose = rec.pose;
    result.trace.push_back(rec.pose);
    ++result.iterations_done;
  }
  // A final estimate that left the image is not a valid estimate.
  if (!inside(img, result.pose.x_instr)) {
    result.out_of_image = true;
    for (auto it = result.trace.rbegin(); it != result.trace.rend(); ++it) {
      if (inside(img, it->x_instr)) {
        result.pose = *it;
        break;
      }
    }
  }
  return result;
}

void write_evaluation_header(std::ostream& os) {
  os << "image_id,repetition,iterations,x_gt_u,x_gt_v,x_est_u,x_est_v,alpha_gt,alpha_est,"
        "position_error_mm,pos_err_u_mm,pos_err_v_mm,forward_angle_error_deg,fallback,out_of_image\n";
}

void write_evaluation_row(std::ostream& os, const EvaluationRecord& r) {
  using stats::format_number;
  os << r.image_id << ',' << r.repetition << ',' << r.iterations << ',' << format_number(r.x_gt.x()) << ','
     << format_number(r.x_gt.y()) << ',' << format_number(r.x_est.x()) << ',' << format_number(r.x_est.y()) << ','
     << format_number(r.alpha_gt) << ',' << format_number(r.alpha_est) << ',' << format_number(r.position_error_mm)
     << ',' << format_number(r.position_error_uv_mm.x()) << ',' << format_number(r.position_error_uv_mm.y()) << ','
     << format_number(r.forward_angle_error_deg) << ',' << (r.fallback ? 1 : 0) << ',' << (r.out_of_image ? 1 : 0)
     << '\n';
}

void to_json(nlohmann::json& j, const EstimatorConfig& c) {
  j = {{"iterations", c.iterations}, {"min_line_angle_deg", c.min_line_angle_deg}, {"patch", c.patch}};
}

void from_json(const nlohmann::json& j, EstimatorConfig& c) {
  c.iterations = j.value("iterations", c.iterations);
  c.min_line_angle_deg = j.value("min_line_angle_deg", c.min_line_angle_deg);
  if (j.contains("patch")) c.patch = j["patch"].get<PatchSpec>();
}

}  // namespace radpose
