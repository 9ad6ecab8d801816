#include "cloudtomo/pipeline.hpp"

#include "cloudtomo/errors.hpp"
#include "cloudtomo/imager.hpp"
#include "cloudtomo/io.hpp"
#include "cloudtomo/microphysics.hpp"
#include "cloudtomo/parallel.hpp"
#include "cloudtomo/retrieval.hpp"

#include <Eigen/Core>
#include <boost/version.hpp>
#include <json.hpp>
#include <openssl/opensslv.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <map>
#include <mutex>

#ifndef CLOUDTOMO_VERSION
#define CLOUDTOMO_VERSION "0.0.0"
#endif

namespace cloudtomo {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Stream labels for the master seed; the view index space of measure_image stays below these.
constexpr std::uint64_t kSceneStream = 0x5343454e45ULL;

constexpr double kReferenceReMax = 15.4;

json config_json(const ExperimentConfig& config) {
  json out = json::object();
  for (const auto& [section, key, value] : config_entries(config)) {
    if (section == "run" && key == "output") continue;
    out[section][key] = value;
  }
  return out;
}

json library_versions() {
  json v;
  v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  v["boost"] = BOOST_LIB_VERSION;
  v["openssl"] = OPENSSL_VERSION_TEXT;
  v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  return v;
}

// Records the files one stage reads and writes, relative to the output directory.
class StageLog {
 public:
  StageLog(const ExperimentConfig& config, Stage stage) : config_(config), stage_(stage), root_(config.output) {}

  fs::path path(const std::string& name) const { return root_ / name; }

  fs::path input(const std::string& name) {
    const fs::path p = path(name);
    if (!fs::exists(p))
      throw std::runtime_error("stage " + to_string(stage_) + " needs " + p.string() + "; run the earlier stages first");
    inputs_.emplace_back(name);
    return p;
  }

  fs::path output(const std::string& name) {
    outputs_.emplace_back(name);
    return path(name);
  }

  void write_json(const std::string& name, const json& doc) { save_text(output(name), doc.dump(2) + "\n"); }

  void finish() const {
    json m;
    m["tool"] = "cloudtomo";
    m["version"] = std::string(version());
    m["stage"] = to_string(stage_);
    m["seed"] = config_.seed;
    m["streams"] = {{"scene", "make_stream(seed, " + std::to_string(kSceneStream) + ", 0, 0)"},
                    {"noise", "make_stream(seed, view, pixel, channel)"}};
    m["threads_env"] = "CLOUDTOMO_THREADS";
    m["libraries"] = library_versions();
    m["config"] = config_json(config_);
    json in = json::object(), out = json::object();
    for (const auto& n : inputs_) in[n] = sha256_file(path(n));
    for (const auto& n : outputs_) out[n] = sha256_file(path(n));
    m["inputs"] = in;
    m["outputs"] = out;
    save_text(path("manifest_" + to_string(stage_) + ".json"), m.dump(2) + "\n");
  }

 private:
  const ExperimentConfig& config_;
  Stage stage_;
  fs::path root_;
  std::vector<std::string> inputs_, outputs_;
};

// Smooth random field in [-1, 1]: mean of a few plane waves with wavelengths near the box size.
class SmoothField {
 public:
  SmoothField(RandomStream& rng, const Eigen::Vector3d& extent) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& w : waves_) {
      Eigen::Vector3d k;
      for (int a = 0; a < 3; ++a) k[a] = (0.5 + 1.5 * u(rng)) * (u(rng) < 0.5 ? -1.0 : 1.0) / extent[a];
      w.k = 2.0 * std::numbers::pi * k;
      w.phase = 2.0 * std::numbers::pi * u(rng);
    }
  }

  double operator()(const Eigen::Vector3d& p) const {
    double s = 0.0;
    for (const auto& w : waves_) s += std::sin(w.k.dot(p) + w.phase);
    return s / static_cast<double>(waves_.size());
  }

 private:
  struct Wave {
    Eigen::Vector3d k;
    double phase = 0.0;
  };
  std::array<Wave, 4> waves_;
};

VoxelCloud blob_cloud(const SceneConfig& s, std::uint64_t seed) {
  VoxelCloud shape({s.nx, s.ny, s.nz}, Eigen::Vector3d::Constant(s.voxel_size), s.base_height,
                   s.effective_variance);
  RandomStream rng = make_stream(seed, kSceneStream, 0, 0);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  const Eigen::Vector3d lo = shape.box_min(), hi = shape.box_max();
  const Eigen::Vector3d extent = hi - lo;
  const Eigen::Vector3d center = 0.5 * (lo + hi);
  Eigen::Vector3d semi;
  for (int a = 0; a < 3; ++a) semi[a] = 0.5 * extent[a] * (0.85 + 0.15 * u(rng));
  // Flat-bottomed dome: the ellipsoid is centered on the bottom layer.
  const double z_center = lo.z() + 0.5 * s.voxel_size;
  semi.z() = (extent.z() - 0.5 * s.voxel_size) * (0.9 + 0.1 * u(rng));

  const auto& d = shape.dims();
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k) {
        const Eigen::Vector3d c = shape.voxel_center(i, j, k);
        const double r2 = std::pow((c.x() - center.x()) / semi.x(), 2) + std::pow((c.y() - center.y()) / semi.y(), 2) +
                          std::pow((c.z() - z_center) / semi.z(), 2);
        shape.mask(i, j, k) = r2 <= 1.0 ? 1 : 0;
      }
  if (shape.masked_count() == 0) shape.mask.fill(1);

  VoxelCloud cloud = monotonic_profile(s.alpha_lwc, s.alpha_re, shape);
  const SmoothField f_lwc(rng, extent), f_re(rng, extent);
  const double re_cap = s.preset == "reference" ? kReferenceReMax : kReMax;
  for (Eigen::Index v = 0; v < cloud.voxel_count(); ++v) {
    if (!cloud.mask[v]) continue;
    const auto [i, j, k] = cloud.lwc.unravel(v);
    const Eigen::Vector3d c = cloud.voxel_center(i, j, k);
    cloud.lwc[v] = std::max(kLwcMin, cloud.lwc[v] * (1.0 + s.perturbation * f_lwc(c)));
    cloud.re[v] = std::clamp(cloud.re[v] * (1.0 + 0.2 * s.perturbation * f_re(c)), kReMin, re_cap);
  }
  return cloud;
}

json cloud_summary(const VoxelCloud& c) {
  double lwc_max = 0.0, re_max = 0.0;
  for (Eigen::Index v = 0; v < c.voxel_count(); ++v) {
    if (!c.mask[v]) continue;
    lwc_max = std::max(lwc_max, c.lwc[v]);
    re_max = std::max(re_max, c.re[v]);
  }
  return {{"dims", {c.dims()[0], c.dims()[1], c.dims()[2]}},
          {"masked_voxels", c.masked_count()},
          {"base_height_m", c.base_height},
          {"top_height_m", c.box_max().z()},
          {"lwc_max", lwc_max},
          {"re_max", re_max}};
}

VoxelCloud load_truth(StageLog& log) { return load_grid(log.input("truth.grid")); }

SingleScatterModel make_model(const ExperimentConfig& config, double effective_variance) {
  return SingleScatterModel(load_optics(config, effective_variance), config.render);
}

// Horizontal means over the masked voxels of each layer.
std::vector<std::vector<double>> layer_profiles(const VoxelCloud& init, const VoxelCloud& truth) {
  std::vector<std::vector<double>> rows;
  const auto& d = init.dims();
  for (int k = 0; k < d[2]; ++k) {
    double sl[2] = {0, 0}, sr[2] = {0, 0};
    int n[2] = {0, 0};
    const VoxelCloud* clouds[2] = {&init, &truth};
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < d[0]; ++i)
        for (int j = 0; j < d[1]; ++j) {
          if (!clouds[c]->mask(i, j, k)) continue;
          sl[c] += clouds[c]->lwc(i, j, k);
          sr[c] += clouds[c]->re(i, j, k);
          ++n[c];
        }
    auto mean = [](double s, int count) { return count ? s / count : 0.0; };
    rows.push_back({init.layer_altitude(k) / 1000.0, mean(sl[0], n[0]), mean(sr[0], n[0]), mean(sl[1], n[1]),
                    mean(sr[1], n[1])});
  }
  return rows;
}

double phase_code(Phase p) {
  switch (p) {
    case Phase::Joint: return 0.0;
    case Phase::LwcOnly: return 1.0;
    case Phase::ReOnly: return 2.0;
  }
  return -1.0;
}

void save_view_images(StageLog& log, const MeasurementSet& set) {
  for (std::size_t v = 0; v < set.views.size(); ++v) {
    const StokesImage& img = set.views[v].image;
    char stem[32];
    std::snprintf(stem, sizeof stem, "images/view%02zu_", v);
    const std::string s = stem;
    save_pgm16(log.output(s + "I.pgm"), img.I, img.width, img.height);
    save_pgm16(log.output(s + "Q.pgm"), img.Q, img.width, img.height);
    save_pgm16(log.output(s + "U.pgm"), img.U, img.width, img.height);
    save_pgm16(log.output(s + "DoLP.pgm"), img.dolp(), img.width, img.height);
  }
}

// ---- stages ----------------------------------------------------------------------

void stage_render(const ExperimentConfig& config) {
  StageLog log(config, Stage::Render);
  const VoxelCloud truth = synthesize_cloud(config.scene, config.seed);
  const SingleScatterModel model = make_model(config, truth.effective_variance);
  const MeasurementSet set = simulate_measurements(config, truth, model);

  save_grid(log.output("truth.grid"), truth);
  save_measurements(log.output("measurements.txt"), set);
  save_view_images(log, set);

  json views = json::array();
  const Eigen::Vector3d target = scene_target(truth);
  for (const auto& v : set.views) {
    views.push_back({{"satellite", v.satellite + 1},
                     {"cloudbow", v.cloudbow},
                     {"view_zenith_deg", view_zenith_angle(v.camera.position, target)},
                     {"scattering_angle_deg",
                      scattering_angle(set.sun.direction(), (target - v.camera.position).normalized())}});
  }
  log.write_json("render.json", {{"truth", cloud_summary(truth)},
                                 {"exposure_s", set.exposure},
                                 {"saturated_pixels", set.saturated_pixels},
                                 {"noise", config.noise},
                                 {"views", views}});
  log.finish();
}

void stage_init(const ExperimentConfig& config) {
  StageLog log(config, Stage::Init);
  const MeasurementSet meas = load_measurements(log.input("measurements.txt"));
  const VoxelCloud truth = load_truth(log);
  const VoxelCloud shape = retrieval_shape(config.scene, truth);
  const SingleScatterModel model = make_model(config, truth.effective_variance);
  const InitResult init = grid_search_init(config.init, meas, model, shape);

  save_grid(log.output("init.grid"), init.cloud);
  const bool monotonic = init.method == InitMethod::MStokes || init.method == InitMethod::MDolp;
  const GridAxis& ax_l = monotonic ? config.init.alpha_lwc : config.init.lwc;
  const GridAxis& ax_r = monotonic ? config.init.alpha_re : config.init.re;
  if (init.surface.size() > 0) {
    const auto vl = ax_l.values(), vr = ax_r.values();
    std::vector<std::vector<double>> rows;
    Eigen::ArrayXd heat(init.surface.size());
    for (int a = 0; a < init.surface.rows(); ++a)
      for (int b = 0; b < init.surface.cols(); ++b) {
        rows.push_back({vl[a], vr[b], init.surface(a, b)});
        heat[a * init.surface.cols() + b] = std::log10(std::max(init.surface(a, b), 1e-300));
      }
    save_csv(log.output("init_surface.csv"), {monotonic ? "alpha_lwc" : "lwc", monotonic ? "alpha_re" : "re", "cost"},
             rows);
    save_pgm16(log.output("init_surface_log10.pgm"), heat, static_cast<int>(init.surface.cols()),
               static_cast<int>(init.surface.rows()));
  }
  save_csv(log.output("init_profiles.csv"), {"z_km", "lwc_init", "re_init", "lwc_truth", "re_truth"},
           layer_profiles(init.cloud, truth));
  log.write_json("init.json", {{"method", to_string(init.method)},
                               {"param_lwc", init.param_lwc},
                               {"param_re", init.param_re},
                               {"index_lwc", init.index_lwc},
                               {"index_re", init.index_re},
                               {"dolp_excluded", init.dolp_excluded}});
  log.finish();
}

void stage_retrieve(const ExperimentConfig& config) {
  StageLog log(config, Stage::Retrieve);
  const MeasurementSet meas = load_measurements(log.input("measurements.txt"));
  const VoxelCloud init = load_grid(log.input("init.grid"));
  const SingleScatterModel model = make_model(config, init.effective_variance);
  RetrievalOptions options = config.retrieval;
  options.re_min = std::max(options.re_min, config.optics.re_min);
  options.re_max = std::min(options.re_max, config.optics.re_max);
  options.failure_dump = log.path("failure.grid");
  const RetrievalResult result = retrieve(meas, init, model, options);

  save_grid(log.output("retrieved.grid"), result.cloud);
  std::vector<std::vector<double>> history, phases;
  for (const auto& h : result.history)
    history.push_back({double(h.cycle), phase_code(h.phase), double(h.iteration), h.cost, h.step});
  for (const auto& p : result.phases)
    phases.push_back({double(p.cycle), phase_code(p.phase), double(p.iterations), p.start_cost, p.end_cost,
                      p.converged ? 1.0 : 0.0});
  save_csv(log.output("cost_history.csv"), {"cycle", "phase", "iteration", "cost", "step"}, history);
  save_csv(log.output("phase_log.csv"),
           {"cycle", "phase", "iterations", "start_cost", "end_cost", "converged"}, phases);
  json ph = json::array();
  for (const auto& p : result.phases)
    ph.push_back({{"cycle", p.cycle},
                  {"phase", to_string(p.phase)},
                  {"iterations", p.iterations},
                  {"start_cost", p.start_cost},
                  {"end_cost", p.end_cost},
                  {"converged", p.converged}});
  log.write_json("retrieval.json", {{"mode", to_string(options.mode)},
                                    {"cost", to_string(options.cost)},
                                    {"phase_codes", {{"joint", 0}, {"lwc_only", 1}, {"re_only", 2}}},
                                    {"initial_cost", result.initial_cost},
                                    {"final_cost", result.final_cost},
                                    {"phases", ph}});
  log.finish();
}

void stage_evaluate(const ExperimentConfig& config) {
  StageLog log(config, Stage::Evaluate);
  const VoxelCloud truth = load_truth(log);
  json report;
  auto add = [&](const char* label, const char* file) {
    if (!fs::exists(log.path(file))) return;
    const ErrorReport e = epsilon_errors(load_grid(log.input(file)), truth);
    report[label] = {{"eps_lwc", e.eps_lwc}, {"eps_re", e.eps_re}};
  };
  add("init", "init.grid");
  add("retrieved", "retrieved.grid");
  if (report.empty()) throw std::runtime_error("evaluate needs init.grid or retrieved.grid in " + config.output);
  if (report.contains("init") && report.contains("retrieved")) {
    report["improved"] = {
        {"lwc", report["retrieved"]["eps_lwc"].get<double>() < report["init"]["eps_lwc"].get<double>()},
        {"re", report["retrieved"]["eps_re"].get<double>() < report["init"]["eps_re"].get<double>()}};
  }
  log.write_json("evaluation.json", report);
  log.finish();
}

void stage_plan_cloudbow(const ExperimentConfig& config) {
  StageLog log(config, Stage::PlanCloudbow);
  const VoxelCloud truth = synthesize_cloud(config.scene, config.seed);
  const Eigen::Vector3d target = scene_target(truth);
  const Constellation c = make_constellation(config, target);
  const CloudbowPlan plan =
      plan_cloudbow_scan(c, target, config.cloudbow.angle_min, config.cloudbow.angle_max, config.cloudbow.resolution);

  std::vector<std::vector<double>> rows;
  json poses = json::array();
  for (const auto& p : plan.poses) {
    const double vza = view_zenith_angle(p.camera.position, target);
    const double arc_deg = p.arc_angle * 180.0 / std::numbers::pi;
    rows.push_back({double(p.satellite + 1), arc_deg, vza, p.scattering_angle});
    poses.push_back({{"satellite", p.satellite + 1},
                     {"arc_angle_deg", arc_deg},
                     {"view_zenith_deg", vza},
                     {"scattering_angle_deg", p.scattering_angle}});
  }
  json nominal = json::array();
  for (std::size_t i = 0; i < c.cameras.size(); ++i)
    nominal.push_back({{"satellite", i + 1},
                       {"view_zenith_deg", view_zenith_angle(c.cameras[i].position, target)},
                       {"scattering_angle_deg", plan.nominal_angles[i]}});
  json selected = json::array();
  for (int s : plan.selected) selected.push_back(s + 1);
  save_csv(log.output("cloudbow.csv"), {"satellite", "arc_angle_deg", "view_zenith_deg", "scattering_angle_deg"},
           rows);
  log.write_json("cloudbow.json", {{"range_deg", {config.cloudbow.angle_min, config.cloudbow.angle_max}},
                                   {"resolution_deg", config.cloudbow.resolution},
                                   {"selected", selected},
                                   {"satellites", nominal},
                                   {"poses", poses}});
  log.finish();
}

}  // namespace

std::string_view version() { return CLOUDTOMO_VERSION; }

VoxelCloud synthesize_cloud(const SceneConfig& scene, std::uint64_t seed) {
  if (scene.kind == "file") return load_grid(scene.file);
  if (scene.kind == "monotonic") {
    VoxelCloud shape({scene.nx, scene.ny, scene.nz}, Eigen::Vector3d::Constant(scene.voxel_size), scene.base_height,
                     scene.effective_variance);
    shape.mask.fill(1);
    return monotonic_profile(scene.alpha_lwc, scene.alpha_re, shape);
  }
  if (scene.kind == "blob") return blob_cloud(scene, seed);
  throw ConfigError("unknown scene kind '" + scene.kind + "'");
}

VoxelCloud retrieval_shape(const SceneConfig& scene, const VoxelCloud& truth) {
  VoxelCloud shape = truth.empty_like();
  if (scene.mask == "box") shape.mask.fill(1);
  return shape;
}

Eigen::Vector3d scene_target(const VoxelCloud& cloud) { return 0.5 * (cloud.box_min() + cloud.box_max()); }

Constellation make_constellation(const ExperimentConfig& config, const Eigen::Vector3d& target) {
  const auto& c = config.constellation;
  return build_string_of_pearls(c.satellites, c.altitude_km, c.spacing_km, target, c.nadir_index, c.optics,
                                config.sun);
}

std::vector<MeasuredView> plan_views(const ExperimentConfig& config, const Eigen::Vector3d& target) {
  const Constellation c = make_constellation(config, target);
  std::vector<MeasuredView> views;
  for (std::size_t i = 0; i < c.cameras.size(); ++i) views.push_back({c.cameras[i], static_cast<int>(i), false, {}});
  if (config.cloudbow.enabled) {
    const CloudbowPlan plan = plan_cloudbow_scan(c, target, config.cloudbow.angle_min, config.cloudbow.angle_max,
                                                 config.cloudbow.resolution);
    for (const auto& p : plan.poses) views.push_back({p.camera, p.satellite, true, {}});
  }
  return views;
}

std::shared_ptr<const BulkOpticsTable> load_optics(const ExperimentConfig& config, double effective_variance) {
  OpticsTableSpec spec = config.optics;
  spec.effective_variance = effective_variance;
  // Stages of one process share tables.
  static std::mutex mutex;
  static std::map<std::string, std::shared_ptr<const BulkOpticsTable>> built;
  std::lock_guard lock(mutex);
  auto& slot = built[spec.cache_key()];
  if (!slot) {
    slot = std::make_shared<const BulkOpticsTable>(config.optics_cache.empty()
                                                       ? BulkOpticsTable::build(spec)
                                                       : BulkOpticsTable::load_or_build(spec, config.optics_cache));
  }
  return slot;
}

MeasurementSet simulate_measurements(const ExperimentConfig& config, const VoxelCloud& truth,
                                     const ForwardModel& model) {
  MeasurementSet set;
  set.views = plan_views(config, scene_target(truth));
  set.sun = config.sun;
  set.band = config.band;
  set.seed = config.seed;
  const std::vector<StokesImage> radiance = render_views(model, truth, set.cameras(), config.sun);
  double peak = 0.0;
  for (const auto& r : radiance) peak = std::max(peak, r.max_channel());
  if (!(peak > 0.0)) throw NumericalError("the truth renders black in every view; check the scene and sun");
  set.exposure = choose_exposure(peak, config.sensor, config.band);
  for (std::size_t v = 0; v < set.views.size(); ++v) {
    const ImageMeasurement m = measure_image(radiance[v], set.views[v].camera, set.exposure, config.sensor,
                                             config.band, config.noise, config.seed, v);
    set.views[v].image = m.image;
    set.saturated_pixels += m.saturated_pixels;
  }
  return set;
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::Render: return "render";
    case Stage::Init: return "init";
    case Stage::Retrieve: return "retrieve";
    case Stage::Evaluate: return "evaluate";
    case Stage::PlanCloudbow: return "plan-cloudbow";
    case Stage::Full: return "full";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : {Stage::Render, Stage::Init, Stage::Retrieve, Stage::Evaluate, Stage::PlanCloudbow, Stage::Full})
    if (to_string(s) == name) return s;
  throw std::invalid_argument("unknown stage '" + std::string(name) + "'");
}

void run_stage(Stage stage, const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.output);
  switch (stage) {
    case Stage::Render: stage_render(config); break;
    case Stage::Init: stage_init(config); break;
    case Stage::Retrieve: stage_retrieve(config); break;
    case Stage::Evaluate: stage_evaluate(config); break;
    case Stage::PlanCloudbow: stage_plan_cloudbow(config); break;
    case Stage::Full:
      if (config.cloudbow.enabled) stage_plan_cloudbow(config);
      stage_render(config);
      stage_init(config);
      stage_retrieve(config);
      stage_evaluate(config);
      break;
  }
}

void write_error_record(const fs::path& output, std::string_view stage, std::string_view kind,
                        std::string_view message, int exit_code) {
  json e = {{"tool", "cloudtomo"},
            {"version", std::string(version())},
            {"stage", std::string(stage)},
            {"kind", std::string(kind)},
            {"message", std::string(message)},
            {"exit_code", exit_code}};
  save_text(output / "error.json", e.dump(2) + "\n");
}

}  // namespace cloudtomo
