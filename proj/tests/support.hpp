#pragma once

#include "cloudtomo/cloud.hpp"
#include "cloudtomo/geometry.hpp"
#include "cloudtomo/measurements.hpp"
#include "cloudtomo/render.hpp"
#include "cloudtomo/optics.hpp"

#include <filesystem>
#include <memory>
#include <random>
#include <numbers>
#include <string>
#include <vector>

namespace cloudtomo::test {

inline std::filesystem::path cache_dir() { return CLOUDTOMO_TEST_CACHE; }

// Reduced table: coarse r_e axis, 0.5 degree angles, fewer radius nodes.
inline OpticsTableSpec small_spec() {
  OpticsTableSpec s;
  s.re_min = 4.0;
  s.re_max = 16.0;
  s.re_step = 1.0;
  s.angle_count = 361;
  s.radius_nodes = 96;
  return s;
}

inline std::shared_ptr<const BulkOpticsTable> small_optics() {
  static const auto table = std::make_shared<const BulkOpticsTable>(
      BulkOpticsTable::load_or_build(small_spec(), cache_dir() / "small_optics.bin"));
  return table;
}

inline std::shared_ptr<const BulkOpticsTable> full_optics() {
  static const auto table = std::make_shared<const BulkOpticsTable>(
      BulkOpticsTable::load_or_build(OpticsTableSpec{}, cache_dir() / "full_optics.bin"));
  return table;
}

// Fresh directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = cache_dir() / "scratch" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Cube cloud with random LWC and r_e in every voxel, r_e kept away from the table nodes.
inline VoxelCloud random_cloud(int n, double dx, std::uint64_t seed, double lwc_lo = 0.05, double lwc_hi = 0.3) {
  VoxelCloud c({n, n, n}, Eigen::Vector3d::Constant(dx), 600.0, 0.1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lwc(lwc_lo, lwc_hi), cell(0.2, 0.8);
  std::uniform_int_distribution<int> node(6, 13);
  for (Eigen::Index v = 0; v < c.voxel_count(); ++v) {
    c.mask[v] = 1;
    c.lwc[v] = lwc(rng);
    c.re[v] = node(rng) + cell(rng);
  }
  return c;
}

// Cameras on the North-South plane at the given distance from the cloud center, view
// zeniths spread over [-45, 40] degrees, focal length set for the ground footprint.
inline std::vector<Camera> near_views(const VoxelCloud& c, int count, int resolution, double distance,
                                      double footprint) {
  const Eigen::Vector3d target = 0.5 * (c.box_min() + c.box_max());
  Camera optics;
  optics.resolution = resolution;
  optics.focal_length = distance * optics.pixel_pitch / footprint;
  std::vector<Camera> out;
  for (int v = 0; v < count; ++v) {
    const double zen = (count == 1 ? 0.0 : -45.0 + 85.0 * v / (count - 1)) * std::numbers::pi / 180.0;
    const Eigen::Vector3d pos = target + distance * Eigen::Vector3d(std::sin(zen), 0.0, std::cos(zen));
    out.push_back(aim_camera(optics, pos, target));
  }
  return out;
}

// Noiseless measurements of a cloud: the rendered radiance itself.
inline MeasurementSet render_measurements(const ForwardModel& model, const VoxelCloud& truth,
                                          const std::vector<Camera>& cameras, const SunGeometry& sun = {}) {
  MeasurementSet m;
  m.sun = sun;
  const std::vector<StokesImage> images = render_views(model, truth, cameras, sun);
  for (std::size_t v = 0; v < cameras.size(); ++v) m.views.push_back({cameras[v], static_cast<int>(v), false, images[v]});
  return m;
}

}  // namespace cloudtomo::test
