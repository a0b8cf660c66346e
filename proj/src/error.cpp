#include "radpose/error.hpp"

namespace radpose {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::RayParallelToDetector: return "RayParallelToDetector";
    case ErrorCode::PointBehindSource: return "PointBehindSource";
    case ErrorCode::DegenerateAxis: return "DegenerateAxis";
    case ErrorCode::InvalidTilt: return "InvalidTilt";
    case ErrorCode::InvalidGeometry: return "InvalidGeometry";
    case ErrorCode::EmptyScene: return "EmptyScene";
    case ErrorCode::EstimateOutOfImage: return "EstimateOutOfImage";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::DegeneratePoints: return "DegeneratePoints";
    case ErrorCode::NearParallel: return "NearParallel";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::DegenerateX: return "DegenerateX";
    case ErrorCode::SizeExceedsDataset: return "SizeExceedsDataset";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace radpose
