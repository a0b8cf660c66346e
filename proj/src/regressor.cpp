#include "radpose/regressor.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

namespace radpose {

Eigen::VectorXd KeypointSet::flat() const {
  Eigen::VectorXd v(kOutputWidth);
  for (std::size_t i = 0; i < kKeypointCount; ++i) {
    v[2 * i] = points[i].x();
    v[2 * i + 1] = points[i].y();
  }
  return v;
}

KeypointSet KeypointSet::from_flat(std::span<const double> values) {
  if (values.size() != static_cast<std::size_t>(kOutputWidth))
    throw Error(ErrorCode::ShapeMismatch, "keypoint vector must have 12 entries");
  KeypointSet kp;
  for (std::size_t i = 0; i < kKeypointCount; ++i) kp.points[i] = {values[2 * i], values[2 * i + 1]};
  return kp;
}

std::vector<int> NetworkConfig::widths() const {
  std::vector<int> w{input};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(output);
  return w;
}

void NetworkConfig::validate() const {
  if (output != kOutputWidth) throw Error(ErrorCode::InvalidConfig, "network output width must be 12");
  if (input <= 0) throw Error(ErrorCode::InvalidConfig, "network input width must be positive");
  for (int h : hidden)
    if (h <= 0) throw Error(ErrorCode::InvalidConfig, "hidden widths must be positive");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0))
    throw Error(ErrorCode::InvalidConfig, "leaky_slope must lie in [0, 1)");
}

template <typename Scalar>
Mlp<Scalar> Mlp<Scalar>::zeros(const NetworkConfig& config) {
  Mlp net;
  net.config_ = config;
  const auto w = config.widths();
  for (std::size_t l = 0; l + 1 < w.size(); ++l)
    net.layers_.push_back({Matrix::Zero(w[l + 1], w[l]), Vector::Zero(w[l + 1])});
  return net;
}

template <typename Scalar>
Mlp<Scalar>::Mlp(const NetworkConfig& config) : Mlp(zeros(config)) {
  config.validate();
  Rng rng(config.init_seed);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& W = layers_[l].weight;
    const bool hidden_input = l > 0;
    const double gain = hidden_input ? 2.0 / (1.0 + config.leaky_slope * config.leaky_slope) : 1.0;
    const double sigma = std::sqrt(gain / static_cast<double>(W.cols()));
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = static_cast<Scalar>(rng.normal(0.0, sigma));
  }
}

template <typename Scalar>
std::size_t Mlp<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

template <typename Scalar>
auto Mlp<Scalar>::forward(const Matrix& inputs) const -> Matrix {
  if (inputs.rows() != config_.input) throw Error(ErrorCode::ShapeMismatch, "input width mismatch");
  const auto slope = static_cast<Scalar>(config_.leaky_slope);
  Matrix a = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    if (l + 1 < layers_.size()) z = z.unaryExpr([slope](Scalar v) { return v > Scalar(0) ? v : slope * v; });
    a = std::move(z);
  }
  return a;
}

template <typename Scalar>
double Mlp<Scalar>::loss(const Matrix& inputs, const Matrix& targets) const {
  const Matrix out = forward(inputs);
  if (out.rows() != targets.rows() || out.cols() != targets.cols())
    throw Error(ErrorCode::ShapeMismatch, "target shape mismatch");
  return (out - targets).template cast<double>().squaredNorm() / static_cast<double>(out.size());
}

template <typename Scalar>
auto Mlp<Scalar>::backward(const Matrix& inputs, const Matrix& targets) const -> Gradients {
  if (inputs.rows() != config_.input) throw Error(ErrorCode::ShapeMismatch, "input width mismatch");
  if (targets.rows() != config_.output || targets.cols() != inputs.cols())
    throw Error(ErrorCode::ShapeMismatch, "target shape mismatch");
  const auto slope = static_cast<Scalar>(config_.leaky_slope);
  const std::size_t depth = layers_.size();

  // activations[0] = inputs, pre[l] = pre-activation of layer l.
  std::vector<Matrix> activations(depth + 1);
  std::vector<Matrix> pre(depth);
  activations[0] = inputs;
  for (std::size_t l = 0; l < depth; ++l) {
    pre[l] = layers_[l].weight * activations[l];
    pre[l].colwise() += layers_[l].bias;
    if (l + 1 < depth)
      activations[l + 1] = pre[l].unaryExpr([slope](Scalar v) { return v > Scalar(0) ? v : slope * v; });
    else
      activations[l + 1] = pre[l];
  }

  Gradients g;
  g.layers.resize(depth);
  const Matrix residual = activations[depth] - targets;
  const double count = static_cast<double>(residual.size());
  g.loss = residual.template cast<double>().squaredNorm() / count;

  Matrix delta = residual * static_cast<Scalar>(2.0 / count);
  for (std::size_t l = depth; l-- > 0;) {
    g.layers[l].weight = delta * activations[l].transpose();
    g.layers[l].bias = delta.rowwise().sum();
    if (l > 0) {
      Matrix back = layers_[l].weight.transpose() * delta;
      back.array() *= pre[l - 1].unaryExpr([slope](Scalar v) { return v > Scalar(0) ? Scalar(1) : slope; }).array();
      delta = std::move(back);
    }
  }
  return g;
}

template class Mlp<float>;
template class Mlp<double>;

KeypointSet forward(const Mlp<float>& net, const Patch& patch) {
  if (static_cast<int>(patch.pixels.size()) != net.config().input)
    throw Error(ErrorCode::ShapeMismatch, "patch size does not match the network input");
  const Eigen::Map<const Eigen::MatrixXf> x(patch.pixels.data(), static_cast<Eigen::Index>(patch.pixels.size()), 1);
  const Eigen::MatrixXf y = net.forward(x);
  std::array<double, kOutputWidth> values{};
  for (int i = 0; i < kOutputWidth; ++i) values[static_cast<std::size_t>(i)] = y(i, 0);
  return KeypointSet::from_flat(values);
}

ImagePose perturb_estimate(const ImagePose& center, const AugmentSpec& augment, Rng& rng) {
  ImagePose est = center;
  const double du = rng.normal(0.0, augment.position_sigma_px);
  const double dv = rng.normal(0.0, augment.position_sigma_px);
  const double da = rng.normal(0.0, augment.angle_sigma_deg);
  est.x_instr += Pixel(du, dv);
  est.alpha = wrap_deg(center.alpha + da);
  return est;
}

TrainingSet make_training_set(std::span<const ImageAnnotations> items, const ImageLoader& load,
                              const ScrewModel& screw, const PatchSpec& spec, const AugmentSpec& augment,
                              int patches_per_image, std::uint64_t seed) {
  std::size_t capacity = 0;
  for (const auto& item : items) capacity += item.annotations.size() * static_cast<std::size_t>(patches_per_image);
  TrainingSet set;
  set.inputs.resize(spec.pixel_count(), static_cast<Eigen::Index>(capacity));
  set.targets.resize(kOutputWidth, static_cast<Eigen::Index>(capacity));
  Eigen::Index col = 0;

  for (std::size_t i = 0; i < items.size(); ++i) {
    const RadiographImage img = load(i);
    const ProjectionGeometry& g = img.meta.geometry;
    for (std::size_t a = 0; a < items[i].annotations.size(); ++a) {
      const WorldPose& ann = items[i].annotations[a];
      Rng rng(derive_seed(seed, {items[i].key, a}));
      ImagePose center;
      ScrewKeypoints kp;
      try {
        center = world_to_image_pose(ann, g);
        kp = screw_keypoints(screw, ann, g);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateAxis) throw;
        set.skipped_degenerate += static_cast<std::size_t>(patches_per_image);
        continue;
      }
      for (int p = 0; p < patches_per_image; ++p) {
        const ImagePose est = perturb_estimate(center, augment, rng);
        if (!img.meta.geometry.contains(est.x_instr)) {
          ++set.skipped_out_of_image;
          continue;
        }
        const Patch patch = extract_patch(img, est, spec);
        set.inputs.col(col) = Eigen::Map<const Eigen::VectorXf>(patch.pixels.data(), spec.pixel_count());
        for (std::size_t k = 0; k < kKeypointCount; ++k) {
          const Eigen::Vector2d t = patch.frame.image_to_patch_coords(kp.image[k]);
          set.targets(static_cast<Eigen::Index>(2 * k), col) = static_cast<float>(t.x());
          set.targets(static_cast<Eigen::Index>(2 * k + 1), col) = static_cast<float>(t.y());
        }
        ++col;
      }
    }
  }
  set.inputs.conservativeResize(Eigen::NoChange, col);
  set.targets.conservativeResize(Eigen::NoChange, col);
  return set;
}

double TrainConfig::learning_rate_at(int epoch) const {
  double lr = learning_rate;
  for (double m : lr_milestones) {
    const int milestone = static_cast<int>(std::lround(m * epochs));
    if (epoch > milestone) lr *= lr_decay;
  }
  return lr;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || batch_size <= 0 || epochs <= 0 ||
      !(lr_decay > 0.0))
    throw Error(ErrorCode::InvalidConfig, "invalid training hyperparameters");
}

double evaluate_loss(const Mlp<float>& net, const TrainingSet& set) {
  if (set.size() == 0) throw Error(ErrorCode::TooFewSamples, "empty evaluation set");
  constexpr Eigen::Index kChunk = 1024;
  double sum = 0.0;
  for (Eigen::Index start = 0; start < set.inputs.cols(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, set.inputs.cols() - start);
    const Eigen::MatrixXf out = net.forward(set.inputs.middleCols(start, n));
    sum += (out - set.targets.middleCols(start, n)).cast<double>().squaredNorm();
  }
  return sum / static_cast<double>(set.targets.size());
}

TrainResult train(const NetworkConfig& net_config, const TrainConfig& config, const TrainingSet& train_set,
                  const TrainingSet& val_set, const EpochCallback& on_epoch) {
  net_config.validate();
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0)
    throw Error(ErrorCode::TooFewSamples, "training and validation sets must be non-empty");
  if (train_set.inputs.rows() != net_config.input)
    throw Error(ErrorCode::ShapeMismatch, "training inputs do not match the network input");

  using Layer = Mlp<float>::Layer;
  Mlp<float> net(net_config);
  std::vector<Layer> velocity;
  for (const auto& l : net.layers())
    velocity.push_back({Eigen::MatrixXf::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXf::Zero(l.bias.size())});

  TrainResult result;
  result.best.config = net_config;
  result.best.network = net;
  result.best.epoch = 0;
  result.best.val_error = std::numeric_limits<double>::infinity();
  result.best.config_hash = config_hash(net_config, config);

  const auto n = static_cast<std::uint64_t>(train_set.size());
  std::vector<Eigen::Index> order(n);
  Eigen::MatrixXf batch_x(train_set.inputs.rows(), config.batch_size);
  Eigen::MatrixXf batch_t(kOutputWidth, config.batch_size);
  const auto momentum = static_cast<float>(config.momentum);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto lr = static_cast<float>(config.learning_rate_at(epoch));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng shuffle(derive_seed(config.shuffle_seed, {static_cast<std::uint64_t>(epoch)}));
    for (std::uint64_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

    double loss_sum = 0.0;
    for (std::uint64_t start = 0; start < n; start += static_cast<std::uint64_t>(config.batch_size)) {
      const auto b = static_cast<Eigen::Index>(std::min<std::uint64_t>(config.batch_size, n - start));
      batch_x.resize(Eigen::NoChange, b);
      batch_t.resize(Eigen::NoChange, b);
      for (Eigen::Index c = 0; c < b; ++c) {
        batch_x.col(c) = train_set.inputs.col(order[start + static_cast<std::uint64_t>(c)]);
        batch_t.col(c) = train_set.targets.col(order[start + static_cast<std::uint64_t>(c)]);
      }
      const auto grads = net.backward(batch_x, batch_t);
      if (!std::isfinite(grads.loss))
        throw Error(ErrorCode::DivergenceDetected, fmt::format("non-finite loss in epoch {}", epoch));
      for (std::size_t l = 0; l < velocity.size(); ++l) {
        velocity[l].weight = momentum * velocity[l].weight + grads.layers[l].weight;
        velocity[l].bias = momentum * velocity[l].bias + grads.layers[l].bias;
        net.layers()[l].weight -= lr * velocity[l].weight;
        net.layers()[l].bias -= lr * velocity[l].bias;
      }
      loss_sum += grads.loss * static_cast<double>(b);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = config.learning_rate_at(epoch);
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.val_loss = evaluate_loss(net, val_set);
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss))
      throw Error(ErrorCode::DivergenceDetected, fmt::format("non-finite loss in epoch {}", epoch));
    result.history.push_back(rec);
    if (rec.val_loss < result.best.val_error) {
      result.best.val_error = rec.val_loss;
      result.best.epoch = epoch;
      result.best.network = net;
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

std::string config_hash(const NetworkConfig& net, const TrainConfig& train) {
  const nlohmann::json j = {{"network", net}, {"training", train}};
  return fmt::format("{:016x}", fnv1a64(j.dump()));
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& l : ckpt.network.layers())
    layout.push_back({{"weight", {l.weight.rows(), l.weight.cols()}}, {"bias", l.bias.size()}});
  const nlohmann::json header = {{"format", "radpose-checkpoint-1"},
                                 {"config", ckpt.config},
                                 {"epoch", ckpt.epoch},
                                 {"val_error", ckpt.val_error},
                                 {"config_hash", ckpt.config_hash},
                                 {"parameter_count", ckpt.network.parameter_count()},
                                 {"layout", layout},
                                 {"weight_order", "row-major"},
                                 {"dtype", "float32-le"}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << header.dump() << '\n';
  static_assert(std::endian::native == std::endian::little, "checkpoint blob is little-endian");
  for (const auto& l : ckpt.network.layers()) {
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = l.weight;
    out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(l.bias.data()), static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != "radpose-checkpoint-1")
    throw Error(ErrorCode::Io, "unrecognized checkpoint format in " + path.string());
  ModelCheckpoint ckpt;
  ckpt.config = header.at("config").get<NetworkConfig>();
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.val_error = header.at("val_error").get<double>();
  ckpt.config_hash = header.value("config_hash", "");
  ckpt.network = Mlp<float>::zeros(ckpt.config);
  for (auto& l : ckpt.network.layers()) {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w(l.weight.rows(), l.weight.cols());
    in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(l.bias.data()), static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
    if (!in) throw Error(ErrorCode::Io, "truncated checkpoint " + path.string());
    l.weight = w;
  }
  return ckpt;
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = {{"input", c.input},
       {"hidden", c.hidden},
       {"output", c.output},
       {"leaky_slope", c.leaky_slope},
       {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  c.input = j.value("input", c.input);
  c.hidden = j.value("hidden", c.hidden);
  c.output = j.value("output", c.output);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.init_seed = j.value("init_seed", c.init_seed);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"momentum", c.momentum},     {"batch_size", c.batch_size},
       {"epochs", c.epochs},               {"lr_decay", c.lr_decay},     {"lr_milestones", c.lr_milestones},
       {"shuffle_seed", c.shuffle_seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.lr_milestones = j.value("lr_milestones", c.lr_milestones);
  c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
}

void to_json(nlohmann::json& j, const AugmentSpec& a) {
  j = {{"position_sigma_px", a.position_sigma_px},
       {"angle_sigma_deg", a.angle_sigma_deg},
       {"patches_per_image", a.patches_per_image},
       {"validation_patches_per_image", a.validation_patches_per_image}};
}

void from_json(const nlohmann::json& j, AugmentSpec& a) {
  a.position_sigma_px = j.value("position_sigma_px", a.position_sigma_px);
  a.angle_sigma_deg = j.value("angle_sigma_deg", a.angle_sigma_deg);
  a.patches_per_image = j.value("patches_per_image", a.patches_per_image);
  a.validation_patches_per_image = j.value("validation_patches_per_image", a.validation_patches_per_image);
}

}  // namespace radpose
