#pragma once

#include "cloudtomo/geometry.hpp"
#include "cloudtomo/imager.hpp"
#include "cloudtomo/optics.hpp"
#include "cloudtomo/render.hpp"
#include "cloudtomo/retrieval.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cloudtomo {

struct SceneConfig {
  std::string kind = "blob";        // monotonic | blob | file
  std::string preset = "reference"; // reference | custom
  std::string file;                 // GridFile for kind = file
  std::string mask = "truth";       // truth | box: retrieval support
  int nx = 7, ny = 7, nz = 7;
  double voxel_size = 20.0;         // m
  double base_height = 550.0;       // m
  double effective_variance = 0.1;
  double alpha_lwc = 1.0;           // g/m^3/km
  double alpha_re = 9.0;            // um/km^(1/3)
  double perturbation = 0.25;       // relative amplitude of blob structure
};

struct ConstellationConfig {
  int satellites = 10;
  double altitude_km = 500.0;
  double spacing_km = 100.0;
  int nadir_index = 5;  // 1-based
  Camera optics;        // focal length, aperture, pitch, resolution, roll
};

struct CloudbowConfig {
  bool enabled = true;
  double angle_min = 135.0;
  double angle_max = 150.0;
  double resolution = 1.5;
};

struct ExperimentConfig {
  SceneConfig scene;
  ConstellationConfig constellation;
  SunGeometry sun;
  BandSpec band;
  SensorSpec sensor;
  bool noise = true;
  OpticsTableSpec optics;
  std::string optics_cache;  // empty: build the table in memory
  RenderOptions render;
  CloudbowConfig cloudbow;
  InitConfig init;
  RetrievalOptions retrieval;
  std::uint64_t seed = 0;
  std::string output = "out";

  /// Cross-field checks; throws ConfigError naming the offending keys.
  void validate() const;
};

/// Parses "key = value" lines under [section] headers; '#' starts a comment.
/// Unknown sections or keys, duplicates and bad values raise ConfigError with the line.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);

/// Canonical text listing every key, including defaults; parse_config reads it back.
std::string serialize_config(const ExperimentConfig& config);

/// Every (section, key, value) in canonical order.
std::vector<std::array<std::string, 3>> config_entries(const ExperimentConfig& config);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace cloudtomo
