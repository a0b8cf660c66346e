#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "radpose/patchify.hpp"
#include "radpose/phantom.hpp"
#include "radpose/random.hpp"

namespace radpose {

/// Six keypoints in normalized patch coordinates, order A1 A2 A3 B1 B2 B3.
struct KeypointSet {
  std::array<Eigen::Vector2d, kKeypointCount> points{};

  /// Flattened (x0, y0, x1, y1, ...).
  Eigen::VectorXd flat() const;
  static KeypointSet from_flat(std::span<const double> values);
};

constexpr int kOutputWidth = 2 * static_cast<int>(kKeypointCount);

struct NetworkConfig {
  int input = 64 * 32;
  std::vector<int> hidden{256, 64};
  int output = kOutputWidth;
  double leaky_slope = 0.01;
  std::uint64_t init_seed = 1;

  std::vector<int> widths() const;
  void validate() const;
};

/// Fully connected network: leaky-ReLU hidden layers, linear output.
template <typename Scalar>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Layer {
    Matrix weight;  // out x in
    Vector bias;
  };

  struct Gradients {
    std::vector<Layer> layers;
    double loss = 0.0;
  };

  Mlp() = default;
  /// He-normal weights from config.init_seed, zero biases.
  explicit Mlp(const NetworkConfig& config);
  /// All parameters zero.
  static Mlp zeros(const NetworkConfig& config);

  /// inputs: input x batch; returns output x batch.
  Matrix forward(const Matrix& inputs) const;

  /// Mean over batch and outputs of the squared error.
  double loss(const Matrix& inputs, const Matrix& targets) const;

  /// Exact gradients of loss() with respect to every parameter.
  Gradients backward(const Matrix& inputs, const Matrix& targets) const;

  const NetworkConfig& config() const { return config_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out = Mlp<Other>::zeros(config_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      out.layers()[l].weight = layers_[l].weight.template cast<Other>();
      out.layers()[l].bias = layers_[l].bias.template cast<Other>();
    }
    return out;
  }

 private:
  NetworkConfig config_;
  std::vector<Layer> layers_;
};

extern template class Mlp<float>;
extern template class Mlp<double>;

/// Anything that maps a standard-pose patch to keypoints.
class KeypointPredictor {
 public:
  virtual ~KeypointPredictor() = default;
  virtual KeypointSet predict(const Patch& patch) const = 0;
};

/// Serializable trained model; the network is stored in float32.
struct ModelCheckpoint {
  NetworkConfig config;
  Mlp<float> network;
  int epoch = 0;
  double val_error = 0.0;
  std::string config_hash;
};

/// Throws ShapeMismatch when the patch size differs from the network input.
KeypointSet forward(const Mlp<float>& net, const Patch& patch);

class NetworkPredictor final : public KeypointPredictor {
 public:
  explicit NetworkPredictor(Mlp<float> net) : net_(std::move(net)) {}
  KeypointSet predict(const Patch& patch) const override { return forward(net_, patch); }
  const Mlp<float>& network() const { return net_; }

 private:
  Mlp<float> net_;
};

/// Initial-estimate perturbation used for training patches and evaluation.
struct AugmentSpec {
  double position_sigma_px = 5.0;
  double angle_sigma_deg = 10.0;
  int patches_per_image = 20;
  int validation_patches_per_image = 2;
};

/// Patches as columns plus their 12-value targets.
struct TrainingSet {
  Eigen::MatrixXf inputs;   // pixels x samples
  Eigen::MatrixXf targets;  // 12 x samples
  std::size_t skipped_out_of_image = 0;
  std::size_t skipped_degenerate = 0;

  std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
};

/// One training image and its (possibly noisy, possibly repeated) annotations.
struct ImageAnnotations {
  std::uint64_t key = 0;  // stable image identity; seeds the augmentation draws
  std::vector<WorldPose> annotations;
};

using ImageLoader = std::function<RadiographImage(std::size_t)>;

/// For every (image, annotation) pair draws `patches_per_image` initial
/// estimates around the annotation, extracts the patch there and expresses
/// the annotation's keypoints in that patch frame.
TrainingSet make_training_set(std::span<const ImageAnnotations> items, const ImageLoader& load,
                              const ScrewModel& screw, const PatchSpec& spec, const AugmentSpec& augment,
                              int patches_per_image, std::uint64_t seed);

/// Samples an initial estimate around `center` (position and forward angle).
ImagePose perturb_estimate(const ImagePose& center, const AugmentSpec& augment, Rng& rng);

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 64;
  int epochs = 40;
  double lr_decay = 0.3;
  std::vector<double> lr_milestones{0.5, 0.8};  // fractions of the epoch count
  std::uint64_t shuffle_seed = 7;

  double learning_rate_at(int epoch) const;  // 1-based epoch
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ModelCheckpoint best;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch SGD with momentum on the mean squared error; returns the epoch
/// with the lowest validation loss (earliest on ties).
TrainResult train(const NetworkConfig& net_config, const TrainConfig& config, const TrainingSet& train_set,
                  const TrainingSet& val_set, const EpochCallback& on_epoch = {});

double evaluate_loss(const Mlp<float>& net, const TrainingSet& set);

std::string config_hash(const NetworkConfig& net, const TrainConfig& train);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const AugmentSpec& a);
void from_json(const nlohmann::json& j, AugmentSpec& a);

}  // namespace radpose
