#pragma once

#include "cloudtomo/cloud.hpp"
#include "cloudtomo/config.hpp"
#include "cloudtomo/geometry.hpp"
#include "cloudtomo/measurements.hpp"
#include "cloudtomo/optics.hpp"
#include "cloudtomo/render.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cloudtomo {

std::string_view version();

/// Deterministic synthetic cloud for the scene settings. The seed only affects the blob kind.
VoxelCloud synthesize_cloud(const SceneConfig& scene, std::uint64_t seed);

/// Support of the retrieval: the truth mask, or every voxel for mask = box.
VoxelCloud retrieval_shape(const SceneConfig& scene, const VoxelCloud& truth);

/// Point every camera looks at: the center of the cloud box.
Eigen::Vector3d scene_target(const VoxelCloud& cloud);

Constellation make_constellation(const ExperimentConfig& config, const Eigen::Vector3d& target);

/// Constellation cameras followed by the cloudbow poses when enabled.
std::vector<MeasuredView> plan_views(const ExperimentConfig& config, const Eigen::Vector3d& target);

/// Bulk optics for the given effective variance, cached on disk when optics.cache is set.
std::shared_ptr<const BulkOpticsTable> load_optics(const ExperimentConfig& config, double effective_variance);

/// Renders the truth through the imager: noiseless radiance sets the exposure, then every
/// view is measured with per-view noise streams derived from the seed.
MeasurementSet simulate_measurements(const ExperimentConfig& config, const VoxelCloud& truth,
                                     const ForwardModel& model);

enum class Stage { Render, Init, Retrieve, Evaluate, PlanCloudbow, Full };
std::string to_string(Stage stage);
Stage parse_stage(std::string_view name);

/// Runs one stage (Full chains render, init, retrieve, evaluate and plan-cloudbow) with
/// config.output as the artifact directory. Later stages read earlier artifacts from it.
/// Every stage writes manifest_<stage>.json listing the config, seed, library versions
/// and the SHA-256 of its inputs and outputs.
void run_stage(Stage stage, const ExperimentConfig& config);

/// Machine-readable failure record written to <output>/error.json.
void write_error_record(const std::filesystem::path& output, std::string_view stage, std::string_view kind,
                        std::string_view message, int exit_code);

}  // namespace cloudtomo
