#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>

#include "radpose/experiments.hpp"
#include "radpose/parallel.hpp"

namespace radpose {

namespace {

std::uint64_t key(std::string_view s) { return fnv1a64(s); }

// Two unit vectors completing v to a right-handed orthonormal frame.
std::pair<Vec3, Vec3> perpendicular_basis(const Vec3& v) {
  const Vec3 helper = std::abs(v.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 a = v.cross(helper).normalized();
  return {a, v.cross(a).normalized()};
}

// Uniform direction on the spherical cap of half-angle max_deg around center.
Vec3 cone_sample(const Vec3& center, double max_deg, Rng& rng) {
  const Vec3 c = center.normalized();
  const auto [a, b] = perpendicular_basis(c);
  const double cos_max = std::cos(deg2rad(max_deg));
  const double cos_t = 1.0 - rng.uniform() * (1.0 - cos_max);
  const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
  const double phi = rng.uniform(-kPi, kPi);
  return (cos_t * c + sin_t * (std::cos(phi) * a + std::sin(phi) * b)).normalized();
}

struct SampledView {
  ProjectionGeometry geometry;
  Vec3 isocenter;
};

SampledView sample_view(const ExperimentConfig& cfg, const WorldPose& pose, Rng& rng) {
  const AnatomySpec& a = cfg.anatomy;
  const Vec3 half = 0.5 * Vec3((a.dims[0] - 1) * a.spacing.x(), (a.dims[1] - 1) * a.spacing.y(),
                               (a.dims[2] - 1) * a.spacing.z());
  // The isocenter stays inside the volume so the principal ray crosses it.
  const Vec3 limit = (half.array() - 5.0).max(0.0).matrix();
  Vec3 iso;
  for (int c = 0; c < 3; ++c)
    iso[c] = std::clamp(pose.origin[c] + rng.normal(0.0, cfg.carm.iso_jitter_mm), -limit[c], limit[c]);

  const Vec3 axis = pose.axis.normalized();
  const auto [b1, b2] = perpendicular_basis(axis);
  const double phi = rng.uniform(-kPi, kPi);
  const Vec3 w = std::cos(phi) * b1 + std::sin(phi) * b2;
  const double t = deg2rad(rng.uniform(-cfg.carm.max_tilt_deg, cfg.carm.max_tilt_deg));
  const Vec3 view = (std::cos(t) * w + std::sin(t) * axis).normalized();
  const double in_plane = rng.uniform(-180.0, 180.0);
  return {make_carm_geometry(cfg.geometry, iso, view, in_plane), iso};
}

bool projects_inside(const WorldPose& pose, const ProjectionGeometry& g, double margin_px) {
  const Pixel p = project_point(pose.origin, g);
  return p.x() >= margin_px && p.y() >= margin_px && p.x() <= g.image_width - 1.0 - margin_px &&
         p.y() <= g.image_height - 1.0 - margin_px;
}

// Poses and geometries for one split; no rendering.
std::vector<DatasetImage> plan_split(const ExperimentConfig& cfg, std::string_view split,
                                     const std::vector<std::vector<ReferencePose>>& refs) {
  const auto& ds = cfg.dataset;
  const int n_anat = static_cast<int>(ds.anatomy_seeds.size());
  std::vector<int> train_anatomies;
  for (int a = 0; a < n_anat; ++a)
    if (a != ds.test_anatomy) train_anatomies.push_back(a);

  int count = 0;
  if (split == "train") count = ds.scaled(ds.train);
  if (split == "validation") count = ds.scaled(ds.validation);
  if (split == "test") count = ds.scaled(ds.test);
  if (split == "expert") count = ds.expert == 0 ? 0 : ds.scaled(ds.expert);

  std::vector<DatasetImage> out;
  for (int i = 0; i < count; ++i) {
    int anatomy = 0;
    if (split == "test")
      anatomy = ds.test_anatomy;
    else if (split == "expert")
      anatomy = i % n_anat;
    else
      anatomy = train_anatomies[static_cast<std::size_t>(i) % train_anatomies.size()];

    Rng rng(derive_seed(cfg.seed, {key("pose"), key(split), static_cast<std::uint64_t>(i)}));
    const std::string id = fmt::format("{}_{:05d}", split, i);

    // Rejection keeps the screw origin well inside the image and, for the
    // expert split, the two views distinct and both usable.
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw Error(ErrorCode::InvalidConfig, "cannot place a usable view for " + id);
      const int r = static_cast<int>(rng.below(refs[static_cast<std::size_t>(anatomy)].size()));
      const WorldPose pose = sample_pose(refs[static_cast<std::size_t>(anatomy)][static_cast<std::size_t>(r)].pose,
                                         ds, rng);
      const SampledView v0 = sample_view(cfg, pose, rng);
      const double margin = 0.25 * std::min(cfg.geometry.image_width, cfg.geometry.image_height);
      if (!projects_inside(pose, v0.geometry, margin)) continue;

      std::vector<ProjectionGeometry> views{v0.geometry};
      if (split == "expert") {
        RigidTransform t = RigidTransform::Identity();
        t.translate(v0.isocenter);
        t.rotate(Eigen::AngleAxisd(deg2rad(cfg.carm.second_view_deg), Vec3::UnitZ()));
        t.translate(-v0.isocenter);
        const ProjectionGeometry g1 = transformed(v0.geometry, t);
        const double between = rad2deg(std::acos(std::clamp(v0.geometry.normal().dot(g1.normal()), -1.0, 1.0)));
        if (between < 0.5 * cfg.carm.second_view_deg) continue;
        if (!projects_inside(pose, g1, margin) || axis_view_angle(pose, g1) < 20.0) continue;
        views.push_back(g1);
      }
      for (std::size_t v = 0; v < views.size(); ++v) {
        DatasetImage img;
        img.id = split == "expert" ? fmt::format("{}_v{}", id, v) : id;
        img.file = "images/" + img.id + ".png";
        img.scene = split == "expert" ? id : "";
        img.view = static_cast<int>(v);
        img.anatomy = anatomy;
        img.anatomy_seed = ds.anatomy_seeds[static_cast<std::size_t>(anatomy)];
        img.reference = r;
        img.truth = pose;
        img.geometry = views[v];
        img.truth_image = world_to_image_pose(pose, views[v]);
        out.push_back(std::move(img));
      }
      break;
    }
  }
  return out;
}

nlohmann::json image_to_json(const DatasetImage& img) {
  return {{"id", img.id},
          {"file", img.file},
          {"scene", img.scene},
          {"view", img.view},
          {"anatomy", img.anatomy},
          {"anatomy_seed", img.anatomy_seed},
          {"reference", img.reference},
          {"world_pose", img.truth},
          {"image_pose", img.truth_image},
          {"geometry", img.geometry},
          {"quantization", {{"lo", img.quant_lo}, {"hi", img.quant_hi}}},
          {"settings_hash", img.settings_hash}};
}

DatasetImage image_from_json(const nlohmann::json& j) {
  DatasetImage img;
  img.id = j.at("id").get<std::string>();
  img.file = j.at("file").get<std::string>();
  img.scene = j.value("scene", "");
  img.view = j.value("view", 0);
  img.anatomy = j.at("anatomy").get<int>();
  img.anatomy_seed = j.at("anatomy_seed").get<std::uint64_t>();
  img.reference = j.value("reference", 0);
  img.truth = j.at("world_pose").get<WorldPose>();
  img.truth_image = j.at("image_pose").get<ImagePose>();
  img.geometry = j.at("geometry").get<ProjectionGeometry>();
  img.quant_lo = j.at("quantization").at("lo").get<double>();
  img.quant_hi = j.at("quantization").at("hi").get<double>();
  img.settings_hash = j.value("settings_hash", "");
  return img;
}

}  // namespace

AnatomySpec anatomy_spec(const ExperimentConfig& cfg, int anatomy) {
  AnatomySpec spec = cfg.anatomy;
  spec.seed = cfg.dataset.anatomy_seeds.at(static_cast<std::size_t>(anatomy));
  return spec;
}

std::vector<ReferencePose> reference_poses(const ExperimentConfig& cfg, int anatomy) {
  const AnatomySpec spec = anatomy_spec(cfg, anatomy);
  const AnatomyShape shape = anatomy_shape(spec);
  Rng rng(derive_seed(cfg.seed, {key("reference"), spec.seed}));
  std::vector<ReferencePose> refs;
  for (int r = 0; r < cfg.dataset.references; ++r) {
    const double side = r % 2 == 0 ? 1.0 : -1.0;
    const Vec3 dir(side, rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    ReferencePose ref;
    ref.anatomy = anatomy;
    ref.index = r;
    ref.pose.origin = shape.surface_point(dir);
    ref.pose.axis = cone_sample(-shape.surface_normal(ref.pose.origin), cfg.dataset.reference_cone_deg, rng);
    ref.pose.roll = rng.uniform(-180.0, 180.0);
    refs.push_back(ref);
  }
  return refs;
}

WorldPose sample_pose(const WorldPose& reference, const DatasetSpec& spec, Rng& rng) {
  WorldPose p;
  for (int c = 0; c < 3; ++c) p.origin[c] = reference.origin[c] + rng.normal(0.0, spec.position_sigma_mm);
  p.axis = cone_sample(reference.axis, spec.direction_cone_deg, rng);
  p.roll = rng.uniform(-180.0, 180.0);
  return p;
}

ProjectionGeometry sample_geometry(const ExperimentConfig& cfg, const WorldPose& pose, Rng& rng) {
  return sample_view(cfg, pose, rng).geometry;
}

RadiographImage DatasetSplit::load(std::size_t index) const {
  const DatasetImage& d = images.at(index);
  int w = 0, h = 0;
  const auto q = read_png_gray16(dir / d.file, w, h);
  if (w != d.geometry.image_width || h != d.geometry.image_height)
    throw Error(ErrorCode::Io, "image size does not match its geometry: " + (dir / d.file).string());
  RadiographImage img = RadiographImage::blank(w, h);
  dequantize_16bit(q, d.quant_lo, d.quant_hi, img);
  img.meta.geometry = d.geometry;
  img.meta.geometry_id = d.id;
  img.meta.anatomy_seed = d.anatomy_seed;
  img.meta.world_pose = d.truth;
  img.meta.image_pose = d.truth_image;
  img.meta.settings_hash = d.settings_hash;
  return img;
}

const DatasetImage& DatasetSplit::find(std::string_view id) const {
  for (const auto& img : images)
    if (img.id == id) return img;
  throw Error(ErrorCode::Io, fmt::format("image {} not found in split {}", id, name));
}

void generate_dataset(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto root = cfg.workdir / "dataset";
  const int n_anat = static_cast<int>(cfg.dataset.anatomy_seeds.size());
  std::vector<std::vector<ReferencePose>> refs;
  for (int a = 0; a < n_anat; ++a) refs.push_back(reference_poses(cfg, a));

  for (std::string_view split : kSplitNames) {
    std::vector<DatasetImage> images = plan_split(cfg, split, refs);
    const auto dir = root / std::string(split);
    std::filesystem::create_directories(dir / "images");

    // Only anatomies referenced by this split are generated.
    std::vector<std::optional<Volume>> volumes(static_cast<std::size_t>(n_anat));
    for (const auto& img : images)
      if (!volumes[static_cast<std::size_t>(img.anatomy)])
        volumes[static_cast<std::size_t>(img.anatomy)] = generate_anatomy(anatomy_spec(cfg, img.anatomy));

    std::mutex log_mutex;
    std::size_t done = 0;
    parallel_for(static_cast<int>(images.size()), [&](int i) {
      DatasetImage& d = images[static_cast<std::size_t>(i)];
      const Volume& vol = *volumes[static_cast<std::size_t>(d.anatomy)];
      const double step = cfg.dataset.render_step > 0.0 ? cfg.dataset.render_step : default_step(vol);
      const RadiographImage img = render(vol, cfg.screw, d.truth, d.geometry, step);
      float hi = 0.0f;
      for (float v : img.pixels) hi = std::max(hi, v);
      d.quant_lo = 0.0;
      d.quant_hi = hi > 0.0f ? static_cast<double>(hi) : 1.0;
      write_png_gray16(dir / d.file, img.width, img.height, quantize_16bit(img, d.quant_lo, d.quant_hi));
      if (cfg.dataset.keep_raw) write_raw_f32(dir / ("images/" + d.id + ".f32"), img);
      std::lock_guard lock(log_mutex);
      d.settings_hash = img.meta.settings_hash;
      if (log && (++done % 100 == 0 || done == images.size()))
        log(fmt::format("{}: rendered {}/{}", split, done, images.size()));
    });

    std::set<std::uint64_t> seeds;
    for (const auto& d : images) seeds.insert(d.anatomy_seed);
    nlohmann::json meta = {{"split", split},
                           {"anatomy_seeds", seeds},
                           {"screw", cfg.screw},
                           {"images", nlohmann::json::array()}};
    for (const auto& d : images) meta["images"].push_back(image_to_json(d));
    std::ofstream out(dir / "meta.json");
    if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / "meta.json").string());
    out << meta.dump(1) << '\n';
  }
}

DatasetSplit load_split(const std::filesystem::path& dataset_dir, std::string_view name) {
  DatasetSplit split;
  split.name = std::string(name);
  split.dir = dataset_dir / std::string(name);
  const auto path = split.dir / "meta.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "missing split metadata " + path.string());
  const auto meta = nlohmann::json::parse(in, nullptr, false);
  if (meta.is_discarded()) throw Error(ErrorCode::Io, "malformed " + path.string());
  for (const auto& j : meta.at("images")) split.images.push_back(image_from_json(j));
  return split;
}

}  // namespace radpose
