#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "radpose/annotation_service.hpp"
#include "radpose/experiments.hpp"

using namespace radpose;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("--config", c.config, "JSON configuration file");
  if (config_required) opt->required();
  cmd->add_option("--set", c.overrides, "Override a config field, e.g. dataset.train=400")->take_all();
  cmd->add_option("--seed", c.seed, "Override the master seed");
}

ExperimentConfig resolve(const Common& c) {
  if (c.config.empty()) return config_from_json(nlohmann::json::object(), c.overrides, c.seed);
  return load_config(c.config, c.overrides, c.seed);
}

void log_line(std::string_view msg) { std::cerr << msg << '\n'; }

void print_summary(const ExperimentResult& r) {
  for (const auto& c : r.conditions)
    fmt::print("{:<14} median position {:.4f} mm  std(u,v) {:.4f} mm  angle std {:.3f} deg\n", c.condition.name,
               c.position.median, c.position_component_std_mm, c.angle.std);
  if (r.fit) fmt::print("fit: slope {:.5g} intercept {:.5g} R^2 {:.5f}\n", r.fit->slope, r.fit->intercept, r.fit->r2);
  fmt::print("spearman {:.3f}; annotation sigma at instrument plane {:.4f} mm\n", r.spearman, r.annotation_sigma_mm);
}

std::vector<double> read_csv_column(const std::string& path, const std::string& column) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const auto it = std::find(header.begin(), header.end(), column);
  if (it == header.end()) throw Error(ErrorCode::InvalidConfig, "column " + column + " not found in " + path);
  const auto index = static_cast<std::size_t>(it - header.begin());
  std::vector<double> values;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::size_t i = 0;
    while (i <= index && std::getline(ss, cell, ',')) ++i;
    if (i == index + 1 && !cell.empty()) values.push_back(std::stod(cell));
  }
  return values;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic radiograph screw pose estimation lab"};
  app.require_subcommand(1);

  Common phantom_opts, render_opts, dataset_opts, annotate_opts, train_opts, eval_opts, noise_opts, size_opts,
      qq_opts, serve_opts;

  auto* phantom = app.add_subcommand("phantom", "Generate an anatomy volume");
  add_common(phantom, phantom_opts);
  int phantom_index = 0;
  std::string phantom_out;
  phantom->add_option("--anatomy", phantom_index, "Anatomy index into dataset.anatomy_seeds");
  phantom->add_option("--out", phantom_out, "Output stem (writes .json and .raw)");

  auto* render_cmd = app.add_subcommand("render", "Render one radiograph with a sampled pose");
  add_common(render_cmd, render_opts);
  int render_anatomy = 0;
  std::uint64_t render_sample = 0;
  std::string render_out = "render.png";
  render_cmd->add_option("--anatomy", render_anatomy, "Anatomy index");
  render_cmd->add_option("--sample", render_sample, "Sample index (seeds the pose)");
  render_cmd->add_option("--out", render_out, "Output PNG (8-bit display); metadata goes next to it");

  auto* dataset = app.add_subcommand("dataset", "Render all dataset splits");
  add_common(dataset, dataset_opts);

  auto* annotate = app.add_subcommand("annotate", "Write noisy annotations for train and validation");
  add_common(annotate, annotate_opts);
  double annotate_eta = 0.0;
  int annotate_k = 1;
  annotate->add_option("--eta", annotate_eta, "Noise level")->required();
  annotate->add_option("--k", annotate_k, "Annotations per training image");

  auto* train_cmd = app.add_subcommand("train", "Train one model");
  add_common(train_cmd, train_opts);
  double train_eta = 0.0;
  int train_size = 0, train_k = 1, train_epochs = 0;
  std::string train_name;
  train_cmd->add_option("--eta", train_eta, "Noise level of the training annotations");
  train_cmd->add_option("--size", train_size, "Number of training images (default: all)");
  train_cmd->add_option("--k", train_k, "Annotations per training image");
  train_cmd->add_option("--epochs", train_epochs, "Epoch count (default: training.epochs)");
  train_cmd->add_option("--name", train_name, "Model name (default derived from the condition)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(eval_cmd, eval_opts);
  std::string eval_model, eval_out;
  int eval_reps = 10;
  eval_cmd->add_option("--model", eval_model, "Checkpoint path")->required();
  eval_cmd->add_option("--repetitions", eval_reps, "Initial-estimate repetitions per image");
  eval_cmd->add_option("--out", eval_out, "Results directory (default: results/eval_<model>)");

  auto* sweep_noise = app.add_subcommand("sweep-noise", "Noise-level experiment");
  add_common(sweep_noise, noise_opts);

  auto* sweep_size = app.add_subcommand("sweep-size", "Dataset-size experiment");
  add_common(sweep_size, size_opts);

  auto* qq = app.add_subcommand("qq", "Normal Q-Q analysis of one CSV column");
  add_common(qq, qq_opts, false);
  std::string qq_input, qq_column = "pos_err_mm", qq_out;
  qq->add_option("--input", qq_input, "CSV file")->required();
  qq->add_option("--column", qq_column, "Column name");
  qq->add_option("--out", qq_out, "Output CSV of quantile pairs");

  auto* serve_cmd = app.add_subcommand("serve", "Run the annotation service");
  add_common(serve_cmd, serve_opts);
  std::optional<int> serve_port;
  std::string serve_mode;
  serve_cmd->add_option("--port", serve_port, "TCP port");
  serve_cmd->add_option("--mode", serve_mode, "practice or study")->check(CLI::IsMember({"practice", "study"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*phantom) {
      const auto cfg = resolve(phantom_opts);
      const AnatomySpec spec = anatomy_spec(cfg, phantom_index);
      const auto stem = phantom_out.empty() ? cfg.workdir / "phantoms" / fmt::format("anatomy_{}", spec.seed)
                                            : std::filesystem::path(phantom_out);
      if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
      save_volume(generate_anatomy(spec), stem);
      fmt::print("wrote {}.json / {}.raw\n", stem.string(), stem.string());
    } else if (*render_cmd) {
      const auto cfg = resolve(render_opts);
      const auto refs = reference_poses(cfg, render_anatomy);
      Rng rng(derive_seed(cfg.seed, {fnv1a64("cli-render"), render_sample}));
      const WorldPose pose = sample_pose(refs[rng.below(refs.size())].pose, cfg.dataset, rng);
      const ProjectionGeometry g = sample_geometry(cfg, pose, rng);
      const Volume vol = generate_anatomy(anatomy_spec(cfg, render_anatomy));
      const double step = cfg.dataset.render_step > 0 ? cfg.dataset.render_step : default_step(vol);
      const RadiographImage img = render(vol, cfg.screw, pose, g, step);
      double hi = 0.0;
      for (float v : img.pixels) hi = std::max(hi, static_cast<double>(v));
      const std::filesystem::path out(render_out);
      if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
      write_png_gray8(out, img.width, img.height, window_to_8bit(img, 0.0, hi > 0 ? hi : 1.0));
      std::filesystem::path meta_path = out;
      meta_path.replace_extension(".json");
      std::ofstream meta(meta_path);
      meta << nlohmann::json{{"world_pose", img.meta.world_pose},
                             {"image_pose", img.meta.image_pose},
                             {"geometry", img.meta.geometry},
                             {"settings_hash", img.meta.settings_hash}}
                  .dump(1)
           << '\n';
      fmt::print("wrote {} and {}\n", out.string(), meta_path.string());
    } else if (*dataset) {
      const auto cfg = resolve(dataset_opts);
      generate_dataset(cfg, log_line);
      fmt::print("dataset written to {}\n", (cfg.workdir / "dataset").string());
    } else if (*annotate) {
      const auto cfg = resolve(annotate_opts);
      const auto root = cfg.workdir / "dataset";
      const auto ann = annotate_splits(cfg, load_split(root, "train"), load_split(root, "validation"),
                                       annotate_eta, annotate_k);
      const auto path = annotation_path(cfg, annotate_eta, annotate_k);
      save_annotations(path, ann);
      fmt::print("wrote {}\n", path.string());
    } else if (*train_cmd) {
      const auto cfg = resolve(train_opts);
      const auto root = cfg.workdir / "dataset";
      const DatasetSplit train = load_split(root, "train"), val = load_split(root, "validation");
      TrainingCondition cond;
      cond.eta = train_eta;
      cond.size = train_size > 0 ? train_size : static_cast<int>(train.images.size());
      cond.k = train_k;
      cond.epochs = train_epochs;
      cond.name = train_name.empty() ? fmt::format("eta_{:g}_size_{}_k{}", train_eta, cond.size, train_k) : train_name;
      const auto ann_path = annotation_path(cfg, train_eta, train_k);
      const SplitAnnotations ann = std::filesystem::exists(ann_path)
                                       ? load_annotations(ann_path)
                                       : annotate_splits(cfg, train, val, train_eta, train_k);
      const TrainedModel model = train_condition(cfg, train, val, ann, cond, log_line);
      const auto path = cfg.workdir / "models" / (cond.name + ".ckpt");
      std::filesystem::create_directories(path.parent_path());
      save_checkpoint(model.checkpoint, path);
      fmt::print("wrote {} (best epoch {}, validation loss {:.6f})\n", path.string(), model.checkpoint.epoch,
                 model.checkpoint.val_error);
    } else if (*eval_cmd) {
      const auto cfg = resolve(eval_opts);
      const ModelCheckpoint ckpt = load_checkpoint(eval_model);
      const DatasetSplit test = load_split(cfg.workdir / "dataset", "test");
      TrainedModel model;
      model.condition.name = std::filesystem::path(eval_model).stem().string();
      model.checkpoint = ckpt;
      ExperimentResult result;
      result.name = "eval_" + model.condition.name;
      result.conditions.push_back(
          summarize_condition(model, evaluate_model(cfg, test, NetworkPredictor(ckpt.network), eval_reps)));
      const auto dir = eval_out.empty() ? cfg.workdir / "results" / result.name : std::filesystem::path(eval_out);
      write_results(result, cfg, dir);
      print_summary(result);
    } else if (*sweep_noise) {
      const auto cfg = resolve(noise_opts);
      const auto result = run_noise_sweep(cfg, log_line);
      write_results(result, cfg, cfg.workdir / "results" / result.name);
      print_summary(result);
    } else if (*sweep_size) {
      const auto cfg = resolve(size_opts);
      const auto result = run_size_sweep(cfg, log_line);
      write_results(result, cfg, cfg.workdir / "results" / result.name);
      print_summary(result);
    } else if (*qq) {
      const auto values = read_csv_column(qq_input, qq_column);
      const auto r = stats::qq_normal(values);
      if (!qq_out.empty()) {
        std::ofstream out(qq_out);
        if (!out) throw Error(ErrorCode::Io, "cannot write " + qq_out);
        stats::write_qq_csv(out, r);
      }
      fmt::print("n {}  slope {:.6g}  intercept {:.6g}  R^2 {:.6f}  within 1 sigma {:.3f}  within 1.5 sigma {:.3f}\n",
                 r.points.size(), r.slope, r.intercept, r.r2, r.within_1sigma, r.within_15sigma);
    } else if (*serve_cmd) {
      auto cfg = resolve(serve_opts);
      if (serve_port) cfg.service.port = *serve_port;
      if (!serve_mode.empty()) cfg.service.mode = serve_mode;
      AnnotationService service(AnnotationService::options_from_config(cfg));
      fmt::print("serving {} tasks on http://{}:{} ({} mode)\n", service.task_count(), cfg.service.host,
                 cfg.service.port, cfg.service.mode);
      std::fflush(stdout);
      if (!serve(service, cfg.service.host, cfg.service.port))
        throw Error(ErrorCode::Io, fmt::format("cannot listen on {}:{}", cfg.service.host, cfg.service.port));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
