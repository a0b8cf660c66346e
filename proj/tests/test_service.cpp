#include <gtest/gtest.h>

#include <sstream>
#include <thread>

#include "radpose/annotation_service.hpp"
#include "test_support.hpp"
#include "tiny_config.hpp"

// Included last: resolv.h defines a macro that collides with Eigen internals.
#include <httplib.h>

namespace radpose {
namespace {

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    workdir_ = testing::scratch_dir("service");
    cfg_ = testing::tiny_config(workdir_, {"dataset.expert=2", "dataset.train=1", "dataset.validation=1",
                                           "dataset.test=1"});
    generate_dataset(cfg_);
    expert_ = load_split(cfg_.workdir / "dataset", "expert");
  }

  AnnotationService make(bool study, const std::string& store_name) const {
    auto opts = AnnotationService::options_from_config(cfg_);
    opts.study_mode = study;
    opts.store = workdir_ / store_name;
    std::filesystem::remove(opts.store);
    return AnnotationService(opts);
  }

  static const DatasetImage& first_view(const std::string& task) {
    for (const auto& img : expert_.images)
      if (img.scene == task) return img;
    throw std::runtime_error("no view for " + task);
  }

  static std::string submission(const WorldPose& pose, const std::string& annotator = "ann",
                                const std::string& attempt = "") {
    nlohmann::json j = {{"annotator", annotator}, {"world_pose", pose}, {"started_at", "2026-01-01T00:00:00Z"}};
    if (!attempt.empty()) j["attempt"] = attempt;
    return j.dump();
  }

  static nlohmann::json body(const ServiceResponse& r) { return nlohmann::json::parse(r.body); }

  static inline std::filesystem::path workdir_;
  static inline ExperimentConfig cfg_;
  static inline DatasetSplit expert_;
};

TEST_F(ServiceTest, TasksPairTwoViewsPerScene) {
  auto svc = make(false, "tasks.jsonl");
  ASSERT_EQ(svc.task_count(), 2u);
  const auto r = svc.list_tasks("ann");
  ASSERT_EQ(r.status, 200);
  const auto j = body(r);
  EXPECT_EQ(j["mode"], "practice");
  ASSERT_EQ(j["tasks"].size(), 2u);
  EXPECT_EQ(j["tasks"][0]["id"], "expert_00000");
  EXPECT_EQ(j["tasks"][0]["views"], 2);
  EXPECT_EQ(j["tasks"][0]["status"], "pending");

  const auto task = body(svc.get_task("expert_00000"));
  ASSERT_EQ(task["views"].size(), 2u);
  EXPECT_EQ(task["views"][1]["image_id"], "expert_00000_v1");
  EXPECT_EQ(task["views"][1]["image_url"], "/api/images/expert_00000_v1.png");
  EXPECT_TRUE(task["views"][0].contains("geometry"));
  EXPECT_EQ(svc.get_task("nope").status, 404);
}

TEST_F(ServiceTest, ImagesAreEightBitPngs) {
  auto svc = make(false, "images.jsonl");
  const auto r = svc.get_image("expert_00001_v0");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "image/png");
  ASSERT_GT(r.body.size(), 33u);
  EXPECT_EQ(r.body.substr(0, 8), std::string("\x89PNG\r\n\x1a\n", 8));
  EXPECT_EQ(static_cast<unsigned char>(r.body[24]), 8u);  // IHDR bit depth
  EXPECT_EQ(svc.get_image("missing").status, 404);
}

TEST_F(ServiceTest, ScrewModelIsServed) {
  auto svc = make(false, "screw.jsonl");
  const auto r = svc.get_screw("default");
  ASSERT_EQ(r.status, 200);
  const auto j = body(r);
  EXPECT_TRUE(j.contains("dimensions"));
  EXPECT_FALSE(j["outline"].empty());
  EXPECT_EQ(svc.get_screw("other").status, 404);
}

TEST_F(ServiceTest, TruthScoresZeroInBothViews) {
  auto svc = make(false, "truth.jsonl");
  const auto& img = first_view("expert_00000");
  const auto r = svc.submit("expert_00000", submission(img.truth));
  ASSERT_EQ(r.status, 201) << r.body;
  const auto j = body(r);
  EXPECT_EQ(j["attempt"], "1");
  ASSERT_EQ(j["views"].size(), 2u);
  for (const auto& v : j["views"]) {
    EXPECT_NEAR(v["position_error_mm"].get<double>(), 0.0, 1e-9);
    EXPECT_NEAR(v["forward_angle_error_deg"].get<double>(), 0.0, 1e-9);
  }
  EXPECT_EQ(body(svc.list_tasks("ann"))["tasks"][0]["status"], "done");
  EXPECT_EQ(body(svc.list_tasks("someone"))["tasks"][0]["status"], "pending");
}

TEST_F(ServiceTest, ShiftAlongDetectorScoresKnownDistance) {
  auto svc = make(false, "shift.jsonl");
  const auto& img = first_view("expert_00001");
  WorldPose moved = img.truth;
  // A shift parallel to the detector stays in the scoring plane, so the error is the shift itself.
  moved.origin += 3.0 * img.geometry.detector_u;
  const auto scores = svc.score("expert_00001", moved);
  ASSERT_EQ(scores.size(), 2u);
  EXPECT_NEAR(scores[0].position_error_mm, 3.0, 1e-6);
  EXPECT_NEAR(scores[0].forward_angle_error_deg,
              forward_angle_error(img.truth_image.alpha, world_to_image_pose(moved, img.geometry).alpha), 1e-9);
  EXPECT_NEAR(scores[0].position_error_mm,
              position_error_mm(img.truth, project_point(moved.origin, img.geometry), img.geometry), 1e-9);
  EXPECT_GT(scores[1].position_error_mm, 0.0);
}

TEST_F(ServiceTest, RejectsBadSubmissions) {
  auto svc = make(false, "bad.jsonl");
  const auto& img = first_view("expert_00000");
  EXPECT_EQ(svc.submit("nope", submission(img.truth)).status, 404);
  EXPECT_EQ(svc.submit("expert_00000", "{not json").status, 400);
  EXPECT_EQ(svc.submit("expert_00000", "[1,2]").status, 400);
  EXPECT_EQ(svc.submit("expert_00000", R"({"annotator":"a"})").status, 400);
  EXPECT_EQ(svc.submit("expert_00000", submission(img.truth, "")).status, 400);
  WorldPose zero = img.truth;
  zero.axis = Vec3::Zero();
  EXPECT_EQ(svc.submit("expert_00000", submission(zero)).status, 400);
  WorldPose behind = img.truth;
  behind.origin = img.geometry.source - 10.0 * img.geometry.normal();
  EXPECT_EQ(svc.submit("expert_00000", submission(behind)).status, 400);
  EXPECT_TRUE(svc.records().empty());
}

TEST_F(ServiceTest, AttemptsAutoNumberAndDuplicatesConflict) {
  auto svc = make(false, "attempts.jsonl");
  const auto pose = first_view("expert_00000").truth;
  EXPECT_EQ(body(svc.submit("expert_00000", submission(pose)))["attempt"], "1");
  EXPECT_EQ(body(svc.submit("expert_00000", submission(pose)))["attempt"], "2");
  EXPECT_EQ(body(svc.submit("expert_00000", submission(pose, "other")))["attempt"], "1");
  EXPECT_EQ(svc.submit("expert_00000", submission(pose, "ann", "x")).status, 201);
  EXPECT_EQ(svc.submit("expert_00000", submission(pose, "ann", "x")).status, 409);
  EXPECT_EQ(svc.records().size(), 4u);
}

TEST_F(ServiceTest, StoreReloadsAfterRestart) {
  const auto pose = first_view("expert_00001").truth;
  auto opts = AnnotationService::options_from_config(cfg_);
  opts.store = workdir_ / "reload.jsonl";
  std::filesystem::remove(opts.store);
  {
    AnnotationService svc(opts);
    ASSERT_EQ(svc.submit("expert_00001", submission(pose)).status, 201);
    ASSERT_EQ(svc.submit("expert_00000", submission(pose, "b")).status, 201);
  }
  AnnotationService again(opts);
  const auto recs = again.records();
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].task_id, "expert_00001");
  EXPECT_EQ(recs[1].annotator, "b");
  EXPECT_EQ(body(again.submit("expert_00001", submission(pose)))["attempt"], "2");
}

TEST_F(ServiceTest, ResultsCsvHasOneRowPerView) {
  auto svc = make(false, "csv.jsonl");
  ASSERT_EQ(svc.submit("expert_00000", submission(first_view("expert_00000").truth)).status, 201);
  const auto r = svc.results_csv();
  ASSERT_EQ(r.status, 200);
  std::istringstream in(r.body);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "task_id,annotator,attempt,view,pos_err_mm,fwd_angle_err_deg,tilt_gt_deg,started_at,submitted_at");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) {
      ++rows;
      EXPECT_EQ(line.rfind("expert_00000,ann,1,", 0), 0u) << line;
    }
  EXPECT_EQ(rows, 2);
}

TEST_F(ServiceTest, StudyModeHidesScoresUntilClosed) {
  auto svc = make(true, "study.jsonl");
  const auto pose = first_view("expert_00000").truth;
  const auto j = body(svc.submit("expert_00000", submission(pose)));
  EXPECT_FALSE(j["views"][0].contains("position_error_mm"));
  EXPECT_EQ(svc.get_reference("expert_00000").status, 403);
  EXPECT_EQ(svc.results_csv().status, 403);
  EXPECT_EQ(body(svc.list_tasks("ann"))["mode"], "study");

  EXPECT_EQ(body(svc.close_session())["closed"], true);
  EXPECT_EQ(svc.results_csv().status, 200);
  const auto ref = svc.get_reference("expert_00000");
  ASSERT_EQ(ref.status, 200);
  const auto rj = body(ref);
  EXPECT_EQ(rj["views"].size(), 2u);
  const WorldPose truth = rj["world_pose"].get<WorldPose>();
  EXPECT_LT((truth.origin - pose.origin).norm(), 1e-9);
  EXPECT_EQ(svc.get_reference("nope").status, 404);
  const auto status = body(svc.status());
  EXPECT_EQ(status["closed"], true);
  EXPECT_EQ(status["records"], 1);
}

TEST_F(ServiceTest, PracticeModeShowsReferenceImmediately) {
  auto svc = make(false, "practice.jsonl");
  EXPECT_EQ(svc.get_reference("expert_00001").status, 200);
}

TEST_F(ServiceTest, HttpRoutesOverLoopback) {
  auto svc = make(false, "http.jsonl");
  httplib::Server server;
  svc.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto tasks = client.Get("/api/tasks?annotator=web");
  ASSERT_TRUE(tasks);
  EXPECT_EQ(tasks->status, 200);
  EXPECT_EQ(tasks->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(nlohmann::json::parse(tasks->body)["annotator"], "web");

  auto png = client.Get("/api/images/expert_00000_v0.png");
  ASSERT_TRUE(png);
  EXPECT_EQ(png->status, 200);
  EXPECT_EQ(png->get_header_value("Content-Type"), "image/png");

  auto post = client.Post("/api/tasks/expert_00000/annotations",
                          submission(first_view("expert_00000").truth, "web"), "application/json");
  ASSERT_TRUE(post);
  EXPECT_EQ(post->status, 201);

  auto missing = client.Get("/api/tasks/nope");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  auto preflight = client.Options("/api/tasks/expert_00000/annotations");
  ASSERT_TRUE(preflight);
  EXPECT_EQ(preflight->status, 204);
  EXPECT_FALSE(preflight->get_header_value("Access-Control-Allow-Methods").empty());

  auto closed = client.Post("/api/session/close");
  ASSERT_TRUE(closed);
  EXPECT_EQ(closed->status, 200);

  server.stop();
  thread.join();
}

}  // namespace
}  // namespace radpose
