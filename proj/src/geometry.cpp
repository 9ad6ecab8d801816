#include "cloudtomo/geometry.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace cloudtomo {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double clamp_unit(double c) { return std::clamp(c, -1.0, 1.0); }

}  // namespace

void Camera::validate() const {
  if (std::abs(optical_axis.norm() - 1.0) > 1e-9) throw std::invalid_argument("optical axis must be unit length");
  if (!(focal_length > 0.0 && aperture > 0.0 && pixel_pitch > 0.0))
    throw std::invalid_argument("focal length, aperture and pixel pitch must be positive");
  if (resolution <= 0) throw std::invalid_argument("resolution must be positive");
}

Eigen::Vector3d Camera::right() const {
  // North-up image for downward-looking cameras.
  Eigen::Vector3d reference = Eigen::Vector3d::UnitX();
  Eigen::Vector3d r = reference.cross(optical_axis);
  if (r.norm() < 1e-9) r = kZenith.cross(optical_axis);
  r.normalize();
  if (roll_deg == 0.0) return r;
  const double c = std::cos(roll_deg * kDeg), s = std::sin(roll_deg * kDeg);
  return (c * r + s * optical_axis.cross(r)).normalized();
}

Eigen::Vector3d Camera::up() const { return optical_axis.cross(right()); }

Eigen::Vector3d Camera::direction(double u_px, double v_px) const {
  const double scale = pixel_pitch / focal_length;
  const Eigen::Vector3d d = optical_axis + (u_px * scale) * right() + (v_px * scale) * up();
  return d / d.norm();
}

Camera aim_camera(const Camera& optics, const Eigen::Vector3d& position, const Eigen::Vector3d& target) {
  Camera cam = optics;
  cam.position = position;
  cam.optical_axis = (target - position).normalized();
  return cam;
}

Eigen::Vector3d SunGeometry::direction() const {
  const double th = zenith_deg * kDeg, ph = azimuth_deg * kDeg;
  return {std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)};
}

Eigen::Vector3d orbit_position(double orbit_radius, double arc_angle) {
  return {orbit_radius * std::sin(arc_angle), 0.0, orbit_radius * std::cos(arc_angle) - kEarthRadius};
}

Constellation build_string_of_pearls(int count, double altitude_km, double spacing_km,
                                     const Eigen::Vector3d& target, int nadir_index, const Camera& optics,
                                     const SunGeometry& sun) {
  if (count < 1) throw std::invalid_argument("constellation needs at least one satellite");
  if (!(altitude_km > 0.0)) throw std::invalid_argument("altitude must be positive");
  if (count > 1 && !(spacing_km > 0.0)) throw std::invalid_argument("spacing must be positive");
  if (nadir_index < 1 || nadir_index > count) throw std::invalid_argument("nadir index out of range");
  if (!(sun.zenith_deg >= 0.0 && sun.zenith_deg < 90.0)) throw std::invalid_argument("sun must be above the horizon");

  Constellation out;
  out.sun = sun;
  out.target = target;
  out.orbit_radius = kEarthRadius + altitude_km * 1e3;
  for (int i = 1; i <= count; ++i) {
    const double arc = (nadir_index - i) * spacing_km * 1e3 / out.orbit_radius;
    Eigen::Vector3d pos = orbit_position(out.orbit_radius, arc);
    if (i == nadir_index) pos = Eigen::Vector3d(target.x(), target.y(), pos.z());
    out.arc_angles.push_back(arc);
    out.cameras.push_back(aim_camera(optics, pos, target));
  }
  return out;
}

double view_zenith_angle(const Eigen::Vector3d& camera_position, const Eigen::Vector3d& target) {
  const Eigen::Vector3d d = camera_position - target;
  const double angle = std::acos(clamp_unit(d.z() / d.norm())) / kDeg;
  return d.x() < 0.0 ? -angle : angle;
}

RayGrid pixel_rays(const Camera& camera) {
  camera.validate();
  RayGrid grid;
  grid.origin = camera.position;
  grid.width = grid.height = camera.resolution;
  grid.directions.reserve(static_cast<std::size_t>(grid.width) * grid.height);
  const double half = 0.5 * camera.resolution;
  for (int row = 0; row < grid.height; ++row) {
    for (int col = 0; col < grid.width; ++col) {
      grid.directions.push_back(camera.direction(col + 0.5 - half, row + 0.5 - half));
    }
  }
  return grid;
}

MeridianFrame meridian_frame(const Eigen::Vector3d& omega) {
  Eigen::Vector3d c = kZenith.cross(omega);
  const double n = c.norm();
  const Eigen::Vector3d b = n < 1e-9 ? Eigen::Vector3d(-1.0, 0.0, 0.0) : Eigen::Vector3d(c / n);
  return {b, omega.cross(b), omega};
}

double scattering_angle(const Eigen::Vector3d& sun_direction, const Eigen::Vector3d& view_ray) {
  return std::acos(clamp_unit(sun_direction.dot(view_ray))) / kDeg;
}

CloudbowPlan plan_cloudbow_scan(const Constellation& constellation, const Eigen::Vector3d& target,
                                double angle_min_deg, double angle_max_deg, double resolution_deg) {
  if (constellation.arc_angles.size() != constellation.cameras.size() || constellation.cameras.empty())
    throw std::invalid_argument("cloudbow planning needs an orbit-built constellation");
  if (!(angle_min_deg >= 120.0 && angle_max_deg <= 180.0 && angle_min_deg <= angle_max_deg))
    throw std::invalid_argument("cloudbow range must lie within [120, 180] degrees");
  if (!(resolution_deg > 0.0)) throw std::invalid_argument("resolution must be positive");

  const Eigen::Vector3d sun = constellation.sun.direction();
  const double orbit = constellation.orbit_radius;
  auto angle_at = [&](double arc) {
    return scattering_angle(sun, (target - orbit_position(orbit, arc)).normalized());
  };

  CloudbowPlan plan;
  const double mid = 0.5 * (angle_min_deg + angle_max_deg);
  double best = std::numeric_limits<double>::infinity();
  for (const Camera& cam : constellation.cameras) {
    const double theta = scattering_angle(sun, (target - cam.position).normalized());
    plan.nominal_angles.push_back(theta);
    best = std::min(best, std::abs(theta - mid));
  }
  for (int s = 0; s < static_cast<int>(plan.nominal_angles.size()) && plan.selected.size() < 2; ++s) {
    if (std::abs(plan.nominal_angles[s] - mid) - best < 1e-6) plan.selected.push_back(s);
  }

  // Reachable along-track arc: view zenith below 80 degrees.
  const double horizon = std::asin(std::clamp(kEarthRadius / orbit * std::sin((180.0 - 80.0) * kDeg), -1.0, 1.0));
  const double arc_limit = 80.0 * kDeg - horizon;
  const int scan_steps = 20000;

  std::vector<double> roots;
  auto find_roots = [&](double wanted) {
    roots.clear();
    double prev_arc = -arc_limit;
    double prev = angle_at(prev_arc) - wanted;
    for (int i = 1; i <= scan_steps; ++i) {
      const double arc = -arc_limit + 2.0 * arc_limit * i / scan_steps;
      const double cur = angle_at(arc) - wanted;
      if (prev == 0.0) roots.push_back(prev_arc);
      else if ((prev < 0.0) != (cur < 0.0) && cur != 0.0) {
        double lo = prev_arc, hi = arc, flo = prev;
        for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
          const double m = 0.5 * (lo + hi);
          const double fm = angle_at(m) - wanted;
          if ((fm < 0.0) == (flo < 0.0)) {
            lo = m;
            flo = fm;
          } else {
            hi = m;
          }
        }
        roots.push_back(0.5 * (lo + hi));
      }
      prev_arc = arc;
      prev = cur;
    }
    if (prev == 0.0) roots.push_back(prev_arc);
  };

  std::vector<int> used(constellation.cameras.size(), 0);
  const double width = angle_max_deg - angle_min_deg;
  const int samples = std::max(1, static_cast<int>(std::ceil(width / resolution_deg - 1e-9)));
  for (int j = 0; j < samples; ++j) {
    const double wanted = width == 0.0 ? angle_min_deg : angle_min_deg + (j + 0.5) * width / samples;
    CloudbowPose pose;
    double best_shift = std::numeric_limits<double>::infinity();
    for (int s : plan.selected) {
      const double home = constellation.arc_angles[s];
      if (std::abs(plan.nominal_angles[s] - wanted) < 1e-12) {
        if (0.0 < best_shift) {
          best_shift = 0.0;
          pose.satellite = s;
          pose.arc_angle = home;
        }
        continue;
      }
      find_roots(wanted);
      for (double r : roots) {
        const double shift = std::abs(r - home);
        // Mirror-image ties go to the satellite with fewer poses so far.
        const bool tie = std::abs(shift - best_shift) < 1e-9 && used[s] < used[pose.satellite];
        if (shift < best_shift - 1e-9 || tie) {
          best_shift = std::abs(r - home);
          pose.satellite = s;
          pose.arc_angle = r;
        }
      }
    }
    if (!std::isfinite(best_shift))
      throw std::runtime_error("no orbit position reaches scattering angle " + std::to_string(wanted));
    const Eigen::Vector3d pos = best_shift == 0.0 ? constellation.cameras[pose.satellite].position
                                                  : orbit_position(orbit, pose.arc_angle);
    pose.camera = aim_camera(constellation.cameras[pose.satellite], pos, target);
    pose.scattering_angle = scattering_angle(sun, pose.camera.optical_axis);
    ++used[pose.satellite];
    plan.poses.push_back(pose);
  }
  return plan;
}

}  // namespace cloudtomo
