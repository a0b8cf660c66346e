#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace radpose {

enum class ErrorCode {
  RayParallelToDetector,
  PointBehindSource,
  DegenerateAxis,
  InvalidTilt,
  InvalidGeometry,
  EmptyScene,
  EstimateOutOfImage,
  ShapeMismatch,
  DivergenceDetected,
  DegeneratePoints,
  NearParallel,
  TooFewSamples,
  DegenerateX,
  SizeExceedsDataset,
  InvalidConfig,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace radpose
