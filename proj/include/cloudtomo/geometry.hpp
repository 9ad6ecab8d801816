#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <vector>

namespace cloudtomo {

inline constexpr double kEarthRadius = 6371.0e3;  // m

// Local ENU frame: x = North, y = East, z = Up.
inline const Eigen::Vector3d kZenith = Eigen::Vector3d::UnitZ();

/// Pinhole camera. The 0-degree polarizer axis is the image horizontal axis, rotated
/// by roll about the optical axis.
struct Camera {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();           // m, ENU
  Eigen::Vector3d optical_axis = -Eigen::Vector3d::UnitZ();     // unit
  double roll_deg = 0.0;
  double focal_length = 0.08625;  // m; 20 m ground pixel from 500 km at 3.45 um pitch
  double aperture = 0.04;         // m
  double pixel_pitch = 3.45e-6;   // m
  int resolution = 32;            // pixels per side

  void validate() const;
  /// Image horizontal axis (0-degree polarizer direction), unit, orthogonal to the optical axis.
  Eigen::Vector3d right() const;
  Eigen::Vector3d up() const;
  /// Unit direction through image-plane offsets (u, v) in pixels from the image center.
  Eigen::Vector3d direction(double u_px, double v_px) const;
};

Camera aim_camera(const Camera& optics, const Eigen::Vector3d& position, const Eigen::Vector3d& target);

struct SunGeometry {
  double zenith_deg = 25.0;
  double azimuth_deg = 90.0;  // clockwise from North; 90 = East
  double irradiance = 1.0;
  /// Unit vector pointing toward the sun.
  Eigen::Vector3d direction() const;
};

struct Constellation {
  std::vector<Camera> cameras;
  SunGeometry sun;
  // Along-track arc angles (rad, positive North) and orbit radius when built from an orbit.
  std::vector<double> arc_angles;
  double orbit_radius = 0.0;
  Eigen::Vector3d target = Eigen::Vector3d::Zero();
};

/// Satellites on one orbit track over the North axis at Y = 0, spaced by spacing_km
/// along the orbit arc, every camera aimed at target. nadir_index is 1-based; satellite
/// i sits (nadir_index - i) spacings North of nadir.
Constellation build_string_of_pearls(int count, double altitude_km, double spacing_km,
                                     const Eigen::Vector3d& target, int nadir_index,
                                     const Camera& optics = Camera{}, const SunGeometry& sun = SunGeometry{});

/// Position on the orbit track at arc angle gamma (rad).
Eigen::Vector3d orbit_position(double orbit_radius, double arc_angle);

/// Signed off-zenith view angle (degrees) at target, positive when the camera is North.
double view_zenith_angle(const Eigen::Vector3d& camera_position, const Eigen::Vector3d& target);

struct RayGrid {
  Eigen::Vector3d origin;
  int width = 0;
  int height = 0;
  std::vector<Eigen::Vector3d> directions;  // row-major, row = image v index
};

RayGrid pixel_rays(const Camera& camera);

struct MeridianFrame {
  Eigen::Vector3d b;      // perpendicular to the meridian plane
  Eigen::Vector3d l;      // in the meridian plane
  Eigen::Vector3d omega;  // propagation
};

/// b = z x omega / |z x omega|, l = omega x b. For omega parallel to z, b = (-1, 0, 0).
MeridianFrame meridian_frame(const Eigen::Vector3d& omega);

/// Angle (degrees) between the incident sunlight and the light leaving toward the camera
/// along view_ray (camera -> scene).
double scattering_angle(const Eigen::Vector3d& sun_direction, const Eigen::Vector3d& view_ray);

struct CloudbowPose {
  int satellite = 0;           // 0-based index into the constellation
  double arc_angle = 0.0;      // rad
  double scattering_angle = 0.0;
  Camera camera;
};

struct CloudbowPlan {
  std::vector<int> selected;   // 0-based satellite indices
  std::vector<double> nominal_angles;  // nominal scattering angle per satellite
  std::vector<CloudbowPose> poses;
};

/// Picks the satellites whose nominal scattering angle at target is closest to the
/// midpoint of angle_range (two when tied) and places extra along-track poses so
/// that the sampled scattering angles are the centers of ceil(width / resolution)
/// equal bins over angle_range. Throws std::runtime_error if an angle is unreachable.
CloudbowPlan plan_cloudbow_scan(const Constellation& constellation, const Eigen::Vector3d& target,
                                double angle_min_deg, double angle_max_deg, double resolution_deg = 1.5);

}  // namespace cloudtomo
