#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "radpose/experiments.hpp"
#include "radpose/parallel.hpp"

#ifndef RADPOSE_CODE_VERSION
#define RADPOSE_CODE_VERSION "unknown"
#endif

namespace radpose {

namespace {

std::uint64_t key(std::string_view s) { return fnv1a64(s); }

std::string eta_label(double eta) { return fmt::format("{:g}", eta); }

void emit(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

}  // namespace

std::string_view code_version() { return RADPOSE_CODE_VERSION; }

std::uint64_t annotation_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, {key("annotations")}); }

std::vector<AnnotatedImage> annotation_inputs(const DatasetSplit& split, std::size_t count) {
  std::vector<AnnotatedImage> out;
  for (std::size_t i = 0; i < std::min(count, split.images.size()); ++i)
    out.push_back({split.images[i].id, split.images[i].truth, split.images[i].geometry});
  return out;
}

std::filesystem::path annotation_path(const ExperimentConfig& cfg, double eta, int k) {
  return cfg.workdir / "annotations" / eta_label(eta) / fmt::format("k{}.json", k);
}

void save_annotations(const std::filesystem::path& path, const std::map<std::string, AnnotationSet>& by_split) {
  std::filesystem::create_directories(path.parent_path());
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [split, set] : by_split) {
    nlohmann::json s = nlohmann::json::object();
    for (const auto& [id, list] : set) s[id] = list;
    j[split] = std::move(s);
  }
  auto out = open_out(path);
  out << j.dump(1) << '\n';
}

std::map<std::string, AnnotationSet> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::Io, "malformed " + path.string());
  std::map<std::string, AnnotationSet> out;
  for (const auto& [split, set] : j.items())
    for (const auto& [id, list] : set.items()) out[split][id] = list.get<std::vector<Annotation>>();
  return out;
}

SplitAnnotations annotate_splits(const ExperimentConfig& cfg, const DatasetSplit& train, const DatasetSplit& val,
                                 double eta, int k) {
  const NoiseLevel nl{eta};
  SplitAnnotations out;
  out["train"] = annotate_dataset(annotation_inputs(train, train.images.size()), nl, k, annotation_seed(cfg));
  out["validation"] = annotate_dataset(annotation_inputs(val, val.images.size()), nl, 1, annotation_seed(cfg));
  return out;
}

std::vector<std::size_t> training_subset(const ExperimentConfig& cfg, std::size_t available, int size) {
  if (size < 1 || static_cast<std::size_t>(size) > available)
    throw Error(ErrorCode::SizeExceedsDataset,
                fmt::format("requested {} training images but the split has {}", size, available));
  std::vector<std::size_t> order(available);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, {key("subset")}));
  for (std::size_t i = available - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  order.resize(static_cast<std::size_t>(size));
  // Prefixes of one permutation are nested; sorting keeps load order stable.
  std::sort(order.begin(), order.end());
  return order;
}

TrainedModel train_condition(const ExperimentConfig& cfg, const DatasetSplit& train, const DatasetSplit& val,
                             const SplitAnnotations& annotations, const TrainingCondition& condition,
                             const Logger& log) {
  const auto subset = training_subset(cfg, train.images.size(), condition.size);
  const AnnotationSet& train_ann = annotations.at("train");
  const AnnotationSet& val_ann = annotations.at("validation");

  auto items_for = [](const DatasetSplit& split, const std::vector<std::size_t>& indices, const AnnotationSet& set,
                      int k) {
    std::vector<ImageAnnotations> items;
    for (std::size_t idx : indices) {
      const auto& id = split.images[idx].id;
      const auto& list = set.at(id);
      if (static_cast<int>(list.size()) < k)
        throw Error(ErrorCode::InvalidConfig, fmt::format("image {} has fewer than {} annotations", id, k));
      ImageAnnotations item;
      item.key = fnv1a64(id);
      for (int a = 0; a < k; ++a) item.annotations.push_back(list[static_cast<std::size_t>(a)].world);
      items.push_back(std::move(item));
    }
    return items;
  };

  const auto train_items = items_for(train, subset, train_ann, condition.k);
  std::vector<std::size_t> val_indices(val.images.size());
  std::iota(val_indices.begin(), val_indices.end(), std::size_t{0});
  const auto val_items = items_for(val, val_indices, val_ann, 1);

  const TrainingSet train_set = make_training_set(
      train_items, [&](std::size_t i) { return train.load(subset[i]); }, cfg.screw, cfg.patch, cfg.augment,
      cfg.augment.patches_per_image, derive_seed(cfg.seed, {key("train-patches")}));
  const TrainingSet val_set = make_training_set(
      val_items, [&](std::size_t i) { return val.load(val_indices[i]); }, cfg.screw, cfg.patch, cfg.augment,
      cfg.augment.validation_patches_per_image, derive_seed(cfg.seed, {key("validation-patches")}));

  TrainConfig tc = cfg.training;
  if (condition.epochs > 0) tc.epochs = condition.epochs;
  emit(log, fmt::format("{}: {} training / {} validation patches, {} epochs", condition.name, train_set.size(),
                        val_set.size(), tc.epochs));

  const int report_every = std::max(1, tc.epochs / 8);
  TrainResult result = radpose::train(cfg.network, tc, train_set, val_set, [&](const EpochRecord& r) {
    if (r.epoch % report_every == 0 || r.epoch == tc.epochs)
      emit(log, fmt::format("{}: epoch {}/{} lr {:.4g} train {:.5f} val {:.5f}", condition.name, r.epoch, tc.epochs,
                            r.learning_rate, r.train_loss, r.val_loss));
  });

  TrainedModel model;
  model.condition = condition;
  model.condition.epochs = tc.epochs;
  model.checkpoint = std::move(result.best);
  model.history = std::move(result.history);
  model.train_samples = train_set.size();
  model.val_samples = val_set.size();
  model.skipped = train_set.skipped_degenerate + train_set.skipped_out_of_image + val_set.skipped_degenerate +
                  val_set.skipped_out_of_image;
  return model;
}

ImagePose initial_estimate(const ExperimentConfig& cfg, const DatasetImage& img, int repetition) {
  Rng rng(derive_seed(cfg.seed, {key("initial"), key(img.id), static_cast<std::uint64_t>(repetition)}));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const ImagePose est = perturb_estimate(img.truth_image, cfg.augment, rng);
    if (img.geometry.contains(est.x_instr)) return est;
  }
  throw Error(ErrorCode::EstimateOutOfImage, "cannot draw an initial estimate inside image " + img.id);
}

std::vector<EvaluationRecord> evaluate_model(const ExperimentConfig& cfg, const DatasetSplit& test,
                                             const KeypointPredictor& model, int repetitions) {
  const std::size_t n = test.images.size();
  std::vector<EvaluationRecord> records(n * static_cast<std::size_t>(repetitions));
  parallel_for(static_cast<int>(n), [&](int i) {
    const DatasetImage& d = test.images[static_cast<std::size_t>(i)];
    const RadiographImage img = test.load(static_cast<std::size_t>(i));
    for (int rep = 0; rep < repetitions; ++rep) {
      const EstimateResult est = estimate(img, initial_estimate(cfg, d, rep), model, cfg.estimator);
      EvaluationRecord& r = records[static_cast<std::size_t>(i) * repetitions + rep];
      r.image_id = d.id;
      r.repetition = rep;
      r.iterations = est.iterations_done;
      r.x_gt = d.truth_image.x_instr;
      r.x_est = est.pose.x_instr;
      r.alpha_gt = d.truth_image.alpha;
      r.alpha_est = est.pose.alpha;
      r.position_error_uv_mm = position_error_components_mm(d.truth, est.pose.x_instr, d.geometry);
      r.position_error_mm = r.position_error_uv_mm.norm();
      r.forward_angle_error_deg = forward_angle_error(d.truth_image.alpha, est.pose.alpha);
      r.fallback = est.fallback;
      r.out_of_image = est.out_of_image;
    }
  });
  return records;
}

ConditionResult summarize_condition(const TrainedModel& model, std::vector<EvaluationRecord> records) {
  ConditionResult c;
  c.condition = model.condition;
  std::vector<double> pos, ang, comp;
  for (const auto& r : records) {
    pos.push_back(r.position_error_mm);
    ang.push_back(r.forward_angle_error_deg);
    comp.push_back(r.position_error_uv_mm.x());
    comp.push_back(r.position_error_uv_mm.y());
  }
  c.position = stats::summarize(pos);
  c.angle = stats::summarize(ang);
  c.position_component_std_mm = stats::stddev(comp);
  c.records = std::move(records);
  c.train_samples = model.train_samples;
  c.val_samples = model.val_samples;
  c.skipped = model.skipped;
  c.best_epoch = model.checkpoint.epoch;
  c.config_hash = model.checkpoint.config_hash;
  c.history = model.history;
  return c;
}

int normalized_epochs(int base_epochs, std::size_t max_samples, std::size_t samples) {
  if (samples == 0) throw Error(ErrorCode::TooFewSamples, "no training samples");
  const auto num = static_cast<std::uint64_t>(base_epochs) * max_samples;
  return static_cast<int>((num + samples - 1) / samples);
}

std::vector<int> sweep_sizes(const ExperimentConfig& cfg) {
  std::vector<int> sizes;
  for (int s : cfg.size_sweep.sizes) sizes.push_back(cfg.dataset.scaled(s));
  if (cfg.size_sweep.include_interpolated) sizes.push_back(cfg.dataset.scaled(cfg.size_sweep.interpolated_size));
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  return sizes;
}

double annotation_sigma_mm(const DatasetSplit& test, double eta) {
  if (test.images.empty()) throw Error(ErrorCode::TooFewSamples, "empty test split");
  double sum = 0.0;
  for (const auto& d : test.images) {
    const auto& g = d.geometry;
    const double plane = (d.truth.origin - g.source).dot(g.normal());
    sum += eta * g.pixel_spacing * plane / g.source_to_detector();
  }
  return sum / static_cast<double>(test.images.size());
}

namespace {

struct Splits {
  DatasetSplit train, val, test;
};

Splits load_training_splits(const ExperimentConfig& cfg) {
  const auto root = cfg.workdir / "dataset";
  return {load_split(root, "train"), load_split(root, "validation"), load_split(root, "test")};
}

ConditionResult run_condition(const ExperimentConfig& cfg, const Splits& s, const SplitAnnotations& ann,
                              const TrainingCondition& cond, const std::string& experiment, int repetitions,
                              const Logger& log) {
  const TrainedModel model = train_condition(cfg, s.train, s.val, ann, cond, log);
  const auto models = cfg.workdir / "models";
  std::filesystem::create_directories(models);
  save_checkpoint(model.checkpoint, models / fmt::format("{}_{}.ckpt", experiment, cond.name));
  const NetworkPredictor predictor(model.checkpoint.network);
  ConditionResult r = summarize_condition(model, evaluate_model(cfg, s.test, predictor, repetitions));
  emit(log, fmt::format("{}: median position error {:.4f} mm, angle error std {:.3f} deg", cond.name,
                        r.position.median, r.angle.std));
  return r;
}

}  // namespace

ExperimentResult run_noise_sweep(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  const Splits s = load_training_splits(cfg);
  ExperimentResult result;
  result.name = "noise_sweep";
  const int size = static_cast<int>(s.train.images.size());
  std::vector<double> etas, medians;
  for (double eta : cfg.noise_sweep.etas) {
    const SplitAnnotations ann = annotate_splits(cfg, s.train, s.val, eta, 1);
    save_annotations(annotation_path(cfg, eta, 1), ann);
    TrainingCondition cond{"eta_" + eta_label(eta), eta, size, 1, cfg.training.epochs};
    result.conditions.push_back(run_condition(cfg, s, ann, cond, result.name, cfg.noise_sweep.repetitions, log));
    etas.push_back(eta);
    medians.push_back(result.conditions.back().position.median);
  }
  if (etas.size() >= 2) {
    result.fit = stats::linear_fit(etas, medians);
    result.spearman = stats::spearman(etas, medians);
  }
  result.annotation_sigma_mm =
      annotation_sigma_mm(s.test, *std::max_element(cfg.noise_sweep.etas.begin(), cfg.noise_sweep.etas.end()));
  return result;
}

ExperimentResult run_size_sweep(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  const Splits s = load_training_splits(cfg);
  const std::vector<int> sizes = sweep_sizes(cfg);
  const int max_size = sizes.back();
  if (static_cast<std::size_t>(max_size) > s.train.images.size())
    throw Error(ErrorCode::SizeExceedsDataset,
                fmt::format("size {} exceeds the {} training images", max_size, s.train.images.size()));

  const double eta = cfg.size_sweep.eta;
  const int k_max = cfg.size_sweep.triple_annotation ? 3 : 1;
  const SplitAnnotations ann = annotate_splits(cfg, s.train, s.val, eta, k_max);
  save_annotations(annotation_path(cfg, eta, k_max), ann);

  ExperimentResult result;
  result.name = "size_sweep";
  const auto max_samples = static_cast<std::size_t>(max_size);
  std::vector<double> xs, medians;
  for (int size : sizes) {
    TrainingCondition cond{fmt::format("size_{}", size), eta, size, 1,
                           normalized_epochs(cfg.training.epochs, max_samples, static_cast<std::size_t>(size))};
    result.conditions.push_back(run_condition(cfg, s, ann, cond, result.name, cfg.size_sweep.repetitions, log));
    xs.push_back(size);
    medians.push_back(result.conditions.back().position.median);
  }
  if (cfg.size_sweep.triple_annotation) {
    TrainingCondition cond{fmt::format("size_{}_k3", max_size), eta, max_size, 3,
                           normalized_epochs(cfg.training.epochs, max_samples, 3 * max_samples)};
    result.conditions.push_back(run_condition(cfg, s, ann, cond, result.name, cfg.size_sweep.repetitions, log));
  }
  if (xs.size() >= 2) result.spearman = stats::spearman(xs, medians);
  result.annotation_sigma_mm = annotation_sigma_mm(s.test, eta);
  return result;
}

void write_results(const ExperimentResult& result, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  using stats::format_number;
  std::filesystem::create_directories(dir);

  {
    auto out = open_out(dir / "errors.csv");
    out << "condition,eta,size,k,";
    write_evaluation_header(out);
    for (const auto& c : result.conditions)
      for (const auto& r : c.records) {
        out << c.condition.name << ',' << format_number(c.condition.eta) << ',' << c.condition.size << ','
            << c.condition.k << ',';
        write_evaluation_row(out, r);
      }
  }

  {
    const std::vector<std::string> labels{"condition", "eta", "size", "k"};
    auto out = open_out(dir / "summary.csv");
    stats::write_summary_header(out, labels);
    for (const auto& c : result.conditions) {
      stats::ErrorSample pos, ang, u, v;
      for (const auto& r : c.records) {
        pos.values.push_back(r.position_error_mm);
        ang.values.push_back(r.forward_angle_error_deg);
        u.values.push_back(r.position_error_uv_mm.x());
        v.values.push_back(r.position_error_uv_mm.y());
      }
      for (auto* sample : {&pos, &ang, &u, &v})
        sample->labels = {{"condition", c.condition.name},
                          {"eta", format_number(c.condition.eta)},
                          {"size", std::to_string(c.condition.size)},
                          {"k", std::to_string(c.condition.k)}};
      stats::write_summary_row(out, labels, pos, "position_error_mm");
      stats::write_summary_row(out, labels, ang, "forward_angle_error_deg");
      stats::write_summary_row(out, labels, u, "pos_err_u_mm");
      stats::write_summary_row(out, labels, v, "pos_err_v_mm");
    }
  }

  {
    auto out = open_out(dir / "fit.csv");
    out << "quantity,value\n";
    out << "spearman_median_position_error," << format_number(result.spearman) << '\n';
    if (result.fit) {
      out << "slope_median_position_error," << format_number(result.fit->slope) << '\n';
      out << "intercept_median_position_error," << format_number(result.fit->intercept) << '\n';
      out << "r2_median_position_error," << format_number(result.fit->r2) << '\n';
    }
    out << "annotation_sigma_mm," << format_number(result.annotation_sigma_mm) << '\n';
    for (const auto& c : result.conditions)
      out << "position_component_std_mm:" << c.condition.name << ',' << format_number(c.position_component_std_mm)
          << '\n';
  }

  {
    auto out = open_out(dir / "training.csv");
    out << "condition,epoch,learning_rate,train_loss,val_loss\n";
    for (const auto& c : result.conditions)
      for (const auto& h : c.history)
        out << c.condition.name << ',' << h.epoch << ',' << format_number(h.learning_rate) << ','
            << format_number(h.train_loss) << ',' << format_number(h.val_loss) << '\n';
  }

  // The workdir is excluded so runs in different directories compare equal.
  nlohmann::json config = cfg;
  config.erase("workdir");
  nlohmann::json conditions = nlohmann::json::array();
  for (const auto& c : result.conditions)
    conditions.push_back({{"name", c.condition.name},
                          {"eta", c.condition.eta},
                          {"size", c.condition.size},
                          {"k", c.condition.k},
                          {"epochs", c.condition.epochs},
                          {"best_epoch", c.best_epoch},
                          {"train_samples", c.train_samples},
                          {"val_samples", c.val_samples},
                          {"skipped_samples", c.skipped},
                          {"config_hash", c.config_hash}});
  const nlohmann::json provenance = {{"experiment", result.name},
                                     {"code_version", code_version()},
                                     {"seed", cfg.seed},
                                     {"annotation_seed", annotation_seed(cfg)},
                                     {"config", config},
                                     {"conditions", conditions}};
  auto out = open_out(dir / "provenance.json");
  out << provenance.dump(1) << '\n';
}

}  // namespace radpose
