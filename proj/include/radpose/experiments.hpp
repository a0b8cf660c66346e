#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "radpose/estimator.hpp"
#include "radpose/geometry.hpp"
#include "radpose/noise.hpp"
#include "radpose/phantom.hpp"
#include "radpose/regressor.hpp"
#include "radpose/renderer.hpp"
#include "radpose/stats.hpp"

namespace radpose {

/// Per-image c-arm placement around the sampled instrument pose.
struct CArmSampling {
  double iso_jitter_mm = 8.0;     // per-component sigma of the isocenter around the screw origin
  double max_tilt_deg = 45.0;     // view direction tilt out of the plane perpendicular to the axis
  double second_view_deg = 60.0;  // expert split: rotation of the second view about world z
};

struct DatasetSpec {
  std::vector<std::uint64_t> anatomy_seeds{101, 202, 303};
  int test_anatomy = 2;  // index into anatomy_seeds
  int train = 1000;
  int validation = 200;
  int test = 100;
  int expert = 20;
  int references = 20;  // per anatomy
  double position_sigma_mm = 5.0;
  double direction_cone_deg = 20.0;
  double reference_cone_deg = 30.0;
  double render_step = 0.5;  // mm; <= 0 selects half the voxel spacing
  bool keep_raw = false;     // also write float32 sidecars
  double scale = 1.0;        // multiplies every image count and sweep size

  int scaled(int n) const;
};

struct NoiseSweepSpec {
  std::vector<double> etas{0, 1, 2, 3, 4};
  int repetitions = 10;
};

struct SizeSweepSpec {
  std::vector<int> sizes{16, 31, 63, 125, 500, 1000};
  double eta = 4.0;
  bool triple_annotation = true;
  bool include_interpolated = false;
  int interpolated_size = 250;
  int repetitions = 10;
};

struct ServiceSpec {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string mode = "practice";  // or "study"
  std::string store = "annotations/records.jsonl";
  double window_lo = 0.0;  // display window in line-integral units; hi <= lo selects per-image max
  double window_hi = 0.0;
};

struct ExperimentConfig {
  std::filesystem::path workdir = "work";
  std::uint64_t seed = 1;
  CArmSpec geometry;
  CArmSampling carm;
  ScrewModel screw;
  AnatomySpec anatomy;  // template; the seed is replaced per anatomy
  DatasetSpec dataset;
  PatchSpec patch;
  AugmentSpec augment;
  NetworkConfig network;
  TrainConfig training;
  EstimatorConfig estimator;
  NoiseSweepSpec noise_sweep;
  SizeSweepSpec size_sweep;
  ServiceSpec service;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Sets a dotted key (`dataset.train=400`). The value is parsed as JSON and
/// kept as a string when that fails. Throws InvalidConfig for malformed
/// assignments or paths through non-objects.
void apply_override(nlohmann::json& j, std::string_view assignment);

/// Reads a JSON config, applies overrides in order, then an optional seed.
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {},
                             std::optional<std::uint64_t> seed = std::nullopt);

ExperimentConfig config_from_json(nlohmann::json j, const std::vector<std::string>& overrides = {},
                                  std::optional<std::uint64_t> seed = std::nullopt);

using Logger = std::function<void(std::string_view)>;

// ---------------------------------------------------------------------------
// Dataset

struct ReferencePose {
  int anatomy = 0;
  int index = 0;
  WorldPose pose;
};

/// Poses on the lateral faces of the anatomy shell, pointing inward.
std::vector<ReferencePose> reference_poses(const ExperimentConfig& cfg, int anatomy);

/// Pose in the vicinity of a reference (position sigma, direction cone).
WorldPose sample_pose(const WorldPose& reference, const DatasetSpec& spec, Rng& rng);

/// Viewing geometry around a pose; the axis stays at least 90 - max_tilt_deg
/// away from the principal ray.
ProjectionGeometry sample_geometry(const ExperimentConfig& cfg, const WorldPose& pose, Rng& rng);

AnatomySpec anatomy_spec(const ExperimentConfig& cfg, int anatomy);

struct DatasetImage {
  std::string id;
  std::string file;  // relative to the split directory
  std::string scene;  // expert split: shared by the two views
  int view = 0;
  int anatomy = 0;
  std::uint64_t anatomy_seed = 0;
  int reference = 0;
  WorldPose truth;
  ImagePose truth_image;
  ProjectionGeometry geometry;
  double quant_lo = 0.0;
  double quant_hi = 1.0;
  std::string settings_hash;
};

struct DatasetSplit {
  std::string name;
  std::filesystem::path dir;
  std::vector<DatasetImage> images;

  /// Dequantized line-integral image with metadata.
  RadiographImage load(std::size_t index) const;
  const DatasetImage& find(std::string_view id) const;
};

inline constexpr std::array<std::string_view, 4> kSplitNames{"train", "validation", "test", "expert"};

/// Renders every split into cfg.workdir/dataset. Deterministic in the config.
void generate_dataset(const ExperimentConfig& cfg, const Logger& log = {});

DatasetSplit load_split(const std::filesystem::path& dataset_dir, std::string_view name);

// ---------------------------------------------------------------------------
// Annotation, training and evaluation

/// Seed for annotation draws; independent of eta, so conditions differ only
/// in the noise scale.
std::uint64_t annotation_seed(const ExperimentConfig& cfg);

std::vector<AnnotatedImage> annotation_inputs(const DatasetSplit& split, std::size_t count);

void save_annotations(const std::filesystem::path& path, const std::map<std::string, AnnotationSet>& by_split);
std::map<std::string, AnnotationSet> load_annotations(const std::filesystem::path& path);
std::filesystem::path annotation_path(const ExperimentConfig& cfg, double eta, int k);

struct TrainingCondition {
  std::string name;
  double eta = 0.0;
  int size = 0;  // number of training images
  int k = 1;     // annotations per training image
  int epochs = 0;
};

/// Annotations of the full train and validation splits at one noise level,
/// keyed by split name.
using SplitAnnotations = std::map<std::string, AnnotationSet>;

SplitAnnotations annotate_splits(const ExperimentConfig& cfg, const DatasetSplit& train, const DatasetSplit& val,
                                 double eta, int k);

struct TrainedModel {
  TrainingCondition condition;
  ModelCheckpoint checkpoint;
  std::vector<EpochRecord> history;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
  std::size_t skipped = 0;
};

/// Trains on the nested subset of `condition.size` training images using the
/// first `condition.k` annotations of each; validation uses one annotation per
/// image.
TrainedModel train_condition(const ExperimentConfig& cfg, const DatasetSplit& train, const DatasetSplit& val,
                             const SplitAnnotations& annotations, const TrainingCondition& condition,
                             const Logger& log = {});

/// Initial estimate for (image, repetition); identical across conditions.
ImagePose initial_estimate(const ExperimentConfig& cfg, const DatasetImage& img, int repetition);

std::vector<EvaluationRecord> evaluate_model(const ExperimentConfig& cfg, const DatasetSplit& test,
                                             const KeypointPredictor& model, int repetitions);

struct ConditionResult {
  TrainingCondition condition;
  std::vector<EvaluationRecord> records;
  stats::Summary position;  // position_error_mm
  stats::Summary angle;     // signed forward-angle error
  double position_component_std_mm = 0.0;  // signed u and v errors pooled
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
  std::size_t skipped = 0;
  int best_epoch = 0;
  std::string config_hash;
  std::vector<EpochRecord> history;
};

struct ExperimentResult {
  std::string name;
  std::vector<ConditionResult> conditions;
  /// Noise sweep: fit of median position error against eta.
  std::optional<stats::LinearFit> fit;
  double spearman = 0.0;             // condition medians vs eta or size
  double annotation_sigma_mm = 0.0;  // injected position sigma at the instrument plane (test split)
};

/// Summarizes one condition's records.
ConditionResult summarize_condition(const TrainedModel& model, std::vector<EvaluationRecord> records);

/// Size-sweep epoch count giving the same number of gradient updates as the
/// largest condition: ceil(base_epochs * max_samples / samples).
int normalized_epochs(int base_epochs, std::size_t max_samples, std::size_t samples);

/// Resolved sweep sizes (scaled, sorted, optionally with the interpolated size).
std::vector<int> sweep_sizes(const ExperimentConfig& cfg);

/// Nested subset: the first `size` images of a fixed seeded permutation.
std::vector<std::size_t> training_subset(const ExperimentConfig& cfg, std::size_t available, int size);

/// Mean over the test split of eta px converted to mm at the instrument plane.
double annotation_sigma_mm(const DatasetSplit& test, double eta);

ExperimentResult run_noise_sweep(const ExperimentConfig& cfg, const Logger& log = {});
ExperimentResult run_size_sweep(const ExperimentConfig& cfg, const Logger& log = {});

/// errors.csv, summary.csv, fit.csv and provenance.json under dir.
void write_results(const ExperimentResult& result, const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Source revision baked in at configure time.
std::string_view code_version();

}  // namespace radpose
