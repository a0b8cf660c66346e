#include "radpose/annotation_service.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fmt/format.h>
#include <httplib.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace radpose {

namespace {

ServiceResponse json_response(int status, const nlohmann::json& j) { return {status, j.dump(), "application/json"}; }

ServiceResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::time_point_cast<std::chrono::seconds>(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now - secs).count();
  const std::time_t t = std::chrono::system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}.{:03d}Z", tm.tm_year + 1900, tm.tm_mon + 1,
                     tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
}

// CSV field quoting for free-text columns.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

bool valid_pose(const WorldPose& p) {
  return p.origin.allFinite() && p.axis.allFinite() && p.axis.norm() > 1e-9 && std::isfinite(p.roll);
}

}  // namespace

nlohmann::json record_to_json(const AnnotationRecord& r, bool include_scores) {
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : r.views) {
    nlohmann::json jv = {{"view", v.view}, {"image_id", v.image_id}, {"image_pose", v.image_pose}};
    if (include_scores) {
      jv["position_error_mm"] = v.position_error_mm;
      jv["forward_angle_error_deg"] = v.forward_angle_error_deg;
      jv["tilt_gt_deg"] = v.tilt_gt_deg;
    }
    views.push_back(std::move(jv));
  }
  return {{"task_id", r.task_id},       {"annotator", r.annotator},       {"attempt", r.attempt},
          {"world_pose", r.submitted},  {"started_at", r.started_at},     {"submitted_at", r.submitted_at},
          {"views", views}};
}

AnnotationRecord record_from_json(const nlohmann::json& j) {
  AnnotationRecord r;
  r.task_id = j.at("task_id").get<std::string>();
  r.annotator = j.at("annotator").get<std::string>();
  r.attempt = j.at("attempt").get<std::string>();
  r.submitted = j.at("world_pose").get<WorldPose>();
  r.started_at = j.value("started_at", "");
  r.submitted_at = j.value("submitted_at", "");
  for (const auto& jv : j.at("views")) {
    ViewScore v;
    v.view = jv.at("view").get<int>();
    v.image_id = jv.at("image_id").get<std::string>();
    v.image_pose = jv.at("image_pose").get<ImagePose>();
    v.position_error_mm = jv.value("position_error_mm", 0.0);
    v.forward_angle_error_deg = jv.value("forward_angle_error_deg", 0.0);
    v.tilt_gt_deg = jv.value("tilt_gt_deg", 0.0);
    r.views.push_back(v);
  }
  return r;
}

AnnotationService::Options AnnotationService::options_from_config(const ExperimentConfig& cfg) {
  Options o;
  o.dataset_dir = cfg.workdir / "dataset";
  o.store = std::filesystem::path(cfg.service.store).is_absolute() ? std::filesystem::path(cfg.service.store)
                                                                   : cfg.workdir / cfg.service.store;
  o.study_mode = cfg.service.mode == "study";
  o.window_lo = cfg.service.window_lo;
  o.window_hi = cfg.service.window_hi;
  o.screw = cfg.screw;
  return o;
}

AnnotationService::AnnotationService(Options options) : options_(std::move(options)) {
  DatasetSplit expert;
  if (std::filesystem::exists(options_.dataset_dir / "expert" / "meta.json"))
    expert = load_split(options_.dataset_dir, "expert");

  for (std::size_t i = 0; i < expert.images.size(); ++i) {
    const DatasetImage& d = expert.images[i];
    const std::string scene = d.scene.empty() ? d.id : d.scene;
    auto it = task_index_.find(scene);
    if (it == task_index_.end()) {
      it = task_index_.emplace(scene, tasks_.size()).first;
      tasks_.push_back({scene, {}});
    }
    const RadiographImage img = expert.load(i);
    double hi = options_.window_hi;
    if (!(hi > options_.window_lo)) {
      hi = options_.window_lo;
      for (float v : img.pixels) hi = std::max(hi, static_cast<double>(v));
      if (!(hi > options_.window_lo)) hi = options_.window_lo + 1.0;
    }
    Task& task = tasks_[it->second];
    image_index_[d.id] = {it->second, task.views.size()};
    task.views.push_back({d, encode_png_gray8(img.width, img.height, window_to_8bit(img, options_.window_lo, hi))});
  }

  if (!options_.store.empty() && std::filesystem::exists(options_.store)) {
    std::ifstream in(options_.store);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::Io, "corrupt record in " + options_.store.string());
      records_.push_back(record_from_json(j));
    }
  }
}

const AnnotationService::Task* AnnotationService::find_task(const std::string& id) const {
  const auto it = task_index_.find(id);
  return it == task_index_.end() ? nullptr : &tasks_[it->second];
}

bool AnnotationService::scores_visible() const { return !options_.study_mode || closed_; }

ServiceResponse AnnotationService::list_tasks(const std::string& annotator) const {
  if (tasks_.empty()) return error_response(404, "no expert split available");
  std::lock_guard lock(mutex_);
  nlohmann::json list = nlohmann::json::array();
  for (const auto& t : tasks_) {
    bool done = false;
    for (const auto& r : records_) done = done || (r.task_id == t.id && r.annotator == annotator);
    list.push_back({{"id", t.id}, {"status", done ? "done" : "pending"}, {"views", t.views.size()}});
  }
  return json_response(200, {{"annotator", annotator},
                             {"mode", options_.study_mode ? "study" : "practice"},
                             {"tasks", list}});
}

ServiceResponse AnnotationService::get_task(const std::string& id) const {
  const Task* t = find_task(id);
  if (!t) return error_response(404, "unknown task " + id);
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : t->views)
    views.push_back({{"view", v.image.view},
                     {"image_id", v.image.id},
                     {"image_url", "/api/images/" + v.image.id + ".png"},
                     {"geometry", v.image.geometry}});
  return json_response(200, {{"id", t->id}, {"screw_model", "default"}, {"views", views}});
}

ServiceResponse AnnotationService::get_image(const std::string& image_id) const {
  const auto it = image_index_.find(image_id);
  if (it == image_index_.end()) return error_response(404, "unknown image " + image_id);
  return {200, tasks_[it->second.first].views[it->second.second].png, "image/png"};
}

ServiceResponse AnnotationService::get_screw(const std::string& id) const {
  if (id != "default") return error_response(404, "unknown screw model " + id);
  nlohmann::json outline = nlohmann::json::array();
  for (const auto& p : screw_outline(options_.screw)) outline.push_back({p.x(), p.y()});
  return json_response(200, {{"id", id},
                             {"dimensions", options_.screw},
                             {"outline", outline},
                             {"outline_frame", "axial coordinate along the axis from the origin, radial coordinate "
                                               "along the roll-dependent radial direction"}});
}

ServiceResponse AnnotationService::get_reference(const std::string& id) const {
  const Task* t = find_task(id);
  if (!t) return error_response(404, "unknown task " + id);
  {
    std::lock_guard lock(mutex_);
    if (!scores_visible()) return error_response(403, "ground truth is hidden in study mode");
  }
  const WorldPose& truth = t->views.front().image.truth;
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : t->views) views.push_back({{"view", v.image.view}, {"image_pose", v.image.truth_image}});
  return json_response(200, {{"id", id}, {"world_pose", truth}, {"radial_direction",
                                                                  {screw_radial_direction(truth).x(),
                                                                   screw_radial_direction(truth).y(),
                                                                   screw_radial_direction(truth).z()}},
                             {"views", views}});
}

std::vector<ViewScore> AnnotationService::score(const std::string& task_id, const WorldPose& pose) const {
  const Task* t = find_task(task_id);
  if (!t) throw Error(ErrorCode::InvalidConfig, "unknown task " + task_id);
  std::vector<ViewScore> out;
  for (const auto& v : t->views) {
    ViewScore s;
    s.view = v.image.view;
    s.image_id = v.image.id;
    s.image_pose = world_to_image_pose(pose, v.image.geometry);
    s.position_error_mm = position_error_mm(v.image.truth, s.image_pose.x_instr, v.image.geometry);
    s.forward_angle_error_deg = forward_angle_error(v.image.truth_image.alpha, s.image_pose.alpha);
    s.tilt_gt_deg = v.image.truth_image.tilt;
    out.push_back(s);
  }
  return out;
}

void AnnotationService::append(const AnnotationRecord& r) {
  if (options_.store.empty()) return;
  std::filesystem::create_directories(options_.store.parent_path());
  const std::string line = record_to_json(r, true).dump() + "\n";
  const int fd = ::open(options_.store.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error(ErrorCode::Io, "cannot open store " + options_.store.string());
  ::flock(fd, LOCK_EX);
  std::size_t written = 0;
  bool ok = true;
  while (written < line.size()) {
    const ssize_t n = ::write(fd, line.data() + written, line.size() - written);
    if (n <= 0) {
      ok = false;
      break;
    }
    written += static_cast<std::size_t>(n);
  }
  ::flock(fd, LOCK_UN);
  ::close(fd);
  if (!ok) throw Error(ErrorCode::Io, "write failed for " + options_.store.string());
}

ServiceResponse AnnotationService::submit(const std::string& task_id, const std::string& body) {
  if (!find_task(task_id)) return error_response(404, "unknown task " + task_id);
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return error_response(400, "body must be a JSON object");

  AnnotationRecord r;
  r.task_id = task_id;
  try {
    r.annotator = j.at("annotator").get<std::string>();
    r.submitted = j.at("world_pose").get<WorldPose>();
    r.started_at = j.value("started_at", "");
    if (j.contains("attempt")) r.attempt = j["attempt"].is_string() ? j["attempt"].get<std::string>()
                                                                     : j["attempt"].dump();
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, std::string("invalid submission: ") + e.what());
  }
  if (r.annotator.empty()) return error_response(400, "annotator must not be empty");
  if (!valid_pose(r.submitted)) return error_response(400, "pose must be finite with a non-zero axis");
  r.submitted.axis.normalize();
  try {
    r.views = score(task_id, r.submitted);
  } catch (const Error& e) {
    return error_response(400, std::string("pose is not projectable: ") + e.what());
  }

  std::lock_guard lock(mutex_);
  std::size_t previous = 0;
  for (const auto& old : records_) {
    if (old.task_id != task_id || old.annotator != r.annotator) continue;
    ++previous;
    if (!r.attempt.empty() && old.attempt == r.attempt)
      return error_response(409, "attempt " + r.attempt + " already recorded");
  }
  if (r.attempt.empty()) r.attempt = std::to_string(previous + 1);
  r.submitted_at = utc_now();
  append(r);
  records_.push_back(r);
  return json_response(201, record_to_json(r, scores_visible()));
}

ServiceResponse AnnotationService::results_csv() const {
  std::lock_guard lock(mutex_);
  if (!scores_visible()) return error_response(403, "results are available after the session is closed");
  std::ostringstream os;
  os << "task_id,annotator,attempt,view,pos_err_mm,fwd_angle_err_deg,tilt_gt_deg,started_at,submitted_at\n";
  for (const auto& r : records_)
    for (const auto& v : r.views)
      os << csv_field(r.task_id) << ',' << csv_field(r.annotator) << ',' << csv_field(r.attempt) << ',' << v.view
         << ',' << stats::format_number(v.position_error_mm) << ','
         << stats::format_number(v.forward_angle_error_deg) << ',' << stats::format_number(v.tilt_gt_deg) << ','
         << csv_field(r.started_at) << ',' << csv_field(r.submitted_at) << '\n';
  return {200, os.str(), "text/csv"};
}

ServiceResponse AnnotationService::close_session() {
  std::lock_guard lock(mutex_);
  closed_ = true;
  return json_response(200, {{"closed", true}});
}

ServiceResponse AnnotationService::status() const {
  std::lock_guard lock(mutex_);
  return json_response(200, {{"mode", options_.study_mode ? "study" : "practice"},
                             {"closed", closed_},
                             {"tasks", tasks_.size()},
                             {"records", records_.size()}});
}

std::vector<AnnotationRecord> AnnotationService::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

void AnnotationService::mount(httplib::Server& server) {
  auto reply = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
    res.set_header("Access-Control-Allow-Origin", "*");
  };
  server.Get("/api/status", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, status()); });
  server.Get("/api/tasks", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, list_tasks(req.get_param_value("annotator")));
  });
  server.Get(R"(/api/tasks/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_task(req.matches[1]));
  });
  server.Get(R"(/api/tasks/([^/]+)/reference)", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_reference(req.matches[1]));
  });
  server.Post(R"(/api/tasks/([^/]+)/annotations)",
              [this, reply](const httplib::Request& req, httplib::Response& res) {
                reply(res, submit(req.matches[1], req.body));
              });
  server.Get(R"(/api/images/([^/]+)\.png)", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_image(req.matches[1]));
  });
  server.Get(R"(/api/screw/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_screw(req.matches[1]));
  });
  server.Get("/api/results.csv", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, results_csv());
  });
  server.Post("/api/session/close", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, close_session());
  });
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

bool serve(AnnotationService& service, const std::string& host, int port) {
  httplib::Server server;
  service.mount(server);
  return server.listen(host, port);
}

}  // namespace radpose
