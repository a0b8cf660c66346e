#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "radpose/experiments.hpp"

namespace httplib {
class Server;
}

namespace radpose {

/// Result of one scored view.
struct ViewScore {
  int view = 0;
  std::string image_id;
  ImagePose image_pose;  // submitted pose traced onto this detector
  double position_error_mm = 0.0;
  double forward_angle_error_deg = 0.0;
  double tilt_gt_deg = 0.0;
};

struct AnnotationRecord {
  std::string task_id;
  std::string annotator;
  std::string attempt;
  WorldPose submitted;
  std::string started_at;
  std::string submitted_at;
  std::vector<ViewScore> views;
};

nlohmann::json record_to_json(const AnnotationRecord& r, bool include_scores);
AnnotationRecord record_from_json(const nlohmann::json& j);

/// Simple status/body pair so the request logic is testable without sockets.
struct ServiceResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Task pairs over the expert split, scoring and an append-only JSON-lines
/// store. All public methods are thread-safe.
class AnnotationService {
 public:
  struct Options {
    std::filesystem::path dataset_dir;
    std::filesystem::path store;
    bool study_mode = false;
    double window_lo = 0.0;
    double window_hi = 0.0;  // <= window_lo selects each image's maximum
    ScrewModel screw;
  };

  explicit AnnotationService(Options options);

  static Options options_from_config(const ExperimentConfig& cfg);

  ServiceResponse list_tasks(const std::string& annotator) const;
  ServiceResponse get_task(const std::string& id) const;
  ServiceResponse get_image(const std::string& image_id) const;
  ServiceResponse get_screw(const std::string& id) const;
  ServiceResponse get_reference(const std::string& id) const;
  ServiceResponse submit(const std::string& task_id, const std::string& body);
  ServiceResponse results_csv() const;
  ServiceResponse close_session();
  ServiceResponse status() const;

  /// Scores a pose against a task's ground truth in both views.
  std::vector<ViewScore> score(const std::string& task_id, const WorldPose& pose) const;

  std::vector<AnnotationRecord> records() const;
  std::size_t task_count() const { return tasks_.size(); }

  /// Installs the HTTP routes on a server.
  void mount(httplib::Server& server);

 private:
  struct View {
    DatasetImage image;
    std::string png;  // encoded 8-bit display image
  };
  struct Task {
    std::string id;
    std::vector<View> views;
  };

  const Task* find_task(const std::string& id) const;
  bool scores_visible() const;
  void append(const AnnotationRecord& r);

  Options options_;
  std::vector<Task> tasks_;
  std::map<std::string, std::size_t> task_index_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> image_index_;  // image id -> (task, view)
  mutable std::mutex mutex_;
  std::vector<AnnotationRecord> records_;
  bool closed_ = false;
};

/// Blocks serving on host:port. Returns false when binding fails.
bool serve(AnnotationService& service, const std::string& host, int port);

}  // namespace radpose
