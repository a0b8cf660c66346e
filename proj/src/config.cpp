#include <cmath>
#include <fstream>

#include "radpose/experiments.hpp"

namespace radpose {

int DatasetSpec::scaled(int n) const {
  return std::max(1, static_cast<int>(std::floor(n * scale + 0.5)));
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (dataset.anatomy_seeds.size() < 2) fail("dataset.anatomy_seeds needs at least two anatomies");
  if (dataset.test_anatomy < 0 || dataset.test_anatomy >= static_cast<int>(dataset.anatomy_seeds.size()))
    fail("dataset.test_anatomy is out of range");
  if (dataset.train < 1 || dataset.validation < 1 || dataset.test < 1 || dataset.expert < 0)
    fail("dataset split sizes must be positive");
  if (dataset.references < 1) fail("dataset.references must be >= 1");
  if (!(dataset.scale > 0.0)) fail("dataset.scale must be > 0");
  if (!(carm.max_tilt_deg >= 0.0 && carm.max_tilt_deg < 88.0)) fail("carm.max_tilt_deg must lie in [0, 88)");
  if (noise_sweep.etas.empty()) fail("noise_sweep.etas must not be empty");
  for (double e : noise_sweep.etas) NoiseLevel{e}.validate();
  if (noise_sweep.repetitions < 1 || size_sweep.repetitions < 1) fail("repetitions must be >= 1");
  if (size_sweep.sizes.empty()) fail("size_sweep.sizes must not be empty");
  if (service.mode != "practice" && service.mode != "study") fail("service.mode must be practice or study");
  screw.validate();
  patch.validate();
  network.validate();
  training.validate();
  estimator.validate();
  if (network.input != patch.pixel_count()) fail("network.input must equal the patch pixel count");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json estimator = c.estimator;
  estimator.erase("patch");
  j = {{"workdir", c.workdir.string()},
       {"seed", c.seed},
       {"geometry", c.geometry},
       {"carm",
        {{"iso_jitter_mm", c.carm.iso_jitter_mm},
         {"max_tilt_deg", c.carm.max_tilt_deg},
         {"second_view_deg", c.carm.second_view_deg}}},
       {"screw", c.screw},
       {"anatomy", c.anatomy},
       {"dataset",
        {{"anatomy_seeds", c.dataset.anatomy_seeds},
         {"test_anatomy", c.dataset.test_anatomy},
         {"train", c.dataset.train},
         {"validation", c.dataset.validation},
         {"test", c.dataset.test},
         {"expert", c.dataset.expert},
         {"references", c.dataset.references},
         {"position_sigma_mm", c.dataset.position_sigma_mm},
         {"direction_cone_deg", c.dataset.direction_cone_deg},
         {"reference_cone_deg", c.dataset.reference_cone_deg},
         {"render_step", c.dataset.render_step},
         {"keep_raw", c.dataset.keep_raw},
         {"scale", c.dataset.scale}}},
       {"patch", c.patch},
       {"augment", c.augment},
       {"network", c.network},
       {"training", c.training},
       {"estimator", estimator},
       {"noise_sweep", {{"etas", c.noise_sweep.etas}, {"repetitions", c.noise_sweep.repetitions}}},
       {"size_sweep",
        {{"sizes", c.size_sweep.sizes},
         {"eta", c.size_sweep.eta},
         {"triple_annotation", c.size_sweep.triple_annotation},
         {"include_interpolated", c.size_sweep.include_interpolated},
         {"interpolated_size", c.size_sweep.interpolated_size},
         {"repetitions", c.size_sweep.repetitions}}},
       {"service",
        {{"host", c.service.host},
         {"port", c.service.port},
         {"mode", c.service.mode},
         {"store", c.service.store},
         {"window_lo", c.service.window_lo},
         {"window_hi", c.service.window_hi}}}};
}

namespace {

const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw Error(ErrorCode::InvalidConfig, std::string(key) + " must be an object");
  return j.at(key);
}

}  // namespace

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c.workdir = j.value("workdir", c.workdir.string());
  c.seed = j.value("seed", c.seed);
  if (j.contains("geometry")) c.geometry = j.at("geometry").get<CArmSpec>();

  const auto& carm = section(j, "carm");
  c.carm.iso_jitter_mm = carm.value("iso_jitter_mm", c.carm.iso_jitter_mm);
  c.carm.max_tilt_deg = carm.value("max_tilt_deg", c.carm.max_tilt_deg);
  c.carm.second_view_deg = carm.value("second_view_deg", c.carm.second_view_deg);

  if (j.contains("screw")) from_json(j.at("screw"), c.screw);
  if (j.contains("anatomy")) from_json(j.at("anatomy"), c.anatomy);

  const auto& ds = section(j, "dataset");
  auto& d = c.dataset;
  d.anatomy_seeds = ds.value("anatomy_seeds", d.anatomy_seeds);
  d.test_anatomy = ds.value("test_anatomy", d.test_anatomy);
  d.train = ds.value("train", d.train);
  d.validation = ds.value("validation", d.validation);
  d.test = ds.value("test", d.test);
  d.expert = ds.value("expert", d.expert);
  d.references = ds.value("references", d.references);
  d.position_sigma_mm = ds.value("position_sigma_mm", d.position_sigma_mm);
  d.direction_cone_deg = ds.value("direction_cone_deg", d.direction_cone_deg);
  d.reference_cone_deg = ds.value("reference_cone_deg", d.reference_cone_deg);
  d.render_step = ds.value("render_step", d.render_step);
  d.keep_raw = ds.value("keep_raw", d.keep_raw);
  d.scale = ds.value("scale", d.scale);

  if (j.contains("patch")) from_json(j.at("patch"), c.patch);
  if (j.contains("augment")) from_json(j.at("augment"), c.augment);
  if (j.contains("network")) from_json(j.at("network"), c.network);
  if (j.contains("training")) from_json(j.at("training"), c.training);
  if (j.contains("estimator")) from_json(j.at("estimator"), c.estimator);
  c.estimator.patch = c.patch;

  const auto& ns = section(j, "noise_sweep");
  c.noise_sweep.etas = ns.value("etas", c.noise_sweep.etas);
  c.noise_sweep.repetitions = ns.value("repetitions", c.noise_sweep.repetitions);

  const auto& ss = section(j, "size_sweep");
  auto& s = c.size_sweep;
  s.sizes = ss.value("sizes", s.sizes);
  s.eta = ss.value("eta", s.eta);
  s.triple_annotation = ss.value("triple_annotation", s.triple_annotation);
  s.include_interpolated = ss.value("include_interpolated", s.include_interpolated);
  s.interpolated_size = ss.value("interpolated_size", s.interpolated_size);
  s.repetitions = ss.value("repetitions", s.repetitions);

  const auto& sv = section(j, "service");
  c.service.host = sv.value("host", c.service.host);
  c.service.port = sv.value("port", c.service.port);
  c.service.mode = sv.value("mode", c.service.mode);
  c.service.store = sv.value("store", c.service.store);
  c.service.window_lo = sv.value("window_lo", c.service.window_lo);
  c.service.window_hi = sv.value("window_hi", c.service.window_hi);
}

void apply_override(nlohmann::json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw Error(ErrorCode::InvalidConfig, "override must look like key=value: " + std::string(assignment));
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));

  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(ErrorCode::InvalidConfig, "empty path segment in override " + key);
    if (!node->is_object()) throw Error(ErrorCode::InvalidConfig, "override path crosses a non-object: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig config_from_json(nlohmann::json j, const std::vector<std::string>& overrides,
                                  std::optional<std::uint64_t> seed) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config root must be a JSON object");
  for (const auto& o : overrides) apply_override(j, o);
  if (seed) j["seed"] = *seed;
  ExperimentConfig cfg;
  try {
    cfg = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                             std::optional<std::uint64_t> seed) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read config " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::InvalidConfig, "config is not valid JSON: " + path.string());
  return config_from_json(std::move(j), overrides, seed);
}

}  // namespace radpose
