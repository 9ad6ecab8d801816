#pragma once

#include "cloudtomo/cloud.hpp"
#include "cloudtomo/geometry.hpp"
#include "cloudtomo/optics.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace cloudtomo::test {

// Optical depth from x toward +dir to the box exit: every voxel's slab interval is
// intersected independently, so no traversal state is shared with the renderer.
inline double slab_optical_depth(const VoxelCloud& c, const BulkOpticsTable& optics, const Eigen::Vector3d& x,
                                 const Eigen::Vector3d& dir) {
  const auto& d = c.dims();
  double tau = 0.0;
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k) {
        if (!c.mask(i, j, k)) continue;
        const Eigen::Vector3d lo = c.box_min() + Eigen::Vector3d(i, j, k).cwiseProduct(c.voxel_size);
        const Eigen::Vector3d hi = lo + c.voxel_size;
        double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
        bool miss = false;
        for (int a = 0; a < 3; ++a) {
          if (dir[a] == 0.0) {
            if (x[a] < lo[a] || x[a] > hi[a]) miss = true;
            continue;
          }
          double ta = (lo[a] - x[a]) / dir[a], tb = (hi[a] - x[a]) / dir[a];
          if (ta > tb) std::swap(ta, tb);
          t0 = std::max(t0, ta);
          t1 = std::min(t1, tb);
        }
        if (miss || !(t1 > t0)) continue;
        tau += optics.sample(c.re(i, j, k)).mass_extinction * c.lwc(i, j, k) * (t1 - t0);
      }
  return tau;
}

// Single-scatter Stokes radiance along one camera ray. Each masked voxel's chord is
// found by its own slab test and split into midpoint steps no longer than h; both
// attenuation paths use slab_optical_depth.
inline Eigen::Vector3d line_integral_oracle(const VoxelCloud& c, const BulkOpticsTable& optics,
                                            const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                            const Eigen::Vector3d& sun, double irradiance, double h) {
  const double mu = std::clamp(sun.dot(dir), -1.0, 1.0);
  const double theta = std::acos(mu) * 180.0 / std::numbers::pi;
  // Singly scattered sunlight is polarized relative to the scattering plane; chi is the
  // angle from the meridian l axis to the in-plane direction perpendicular to omega.
  const Eigen::Vector3d omega = -dir;
  const MeridianFrame f = meridian_frame(omega);
  const Eigen::Vector3d e_par = omega.cross((-sun).cross(omega)).normalized();
  const double chi = std::atan2(e_par.dot(f.b), e_par.dot(f.l));

  Eigen::Vector3d s = Eigen::Vector3d::Zero();
  const auto& d = c.dims();
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k) {
        if (!c.mask(i, j, k)) continue;
        const Eigen::Vector3d lo = c.box_min() + Eigen::Vector3d(i, j, k).cwiseProduct(c.voxel_size);
        const Eigen::Vector3d hi = lo + c.voxel_size;
        double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
          double ta = (lo[a] - origin[a]) / dir[a], tb = (hi[a] - origin[a]) / dir[a];
          if (ta > tb) std::swap(ta, tb);
          t0 = std::max(t0, ta);
          t1 = std::min(t1, tb);
        }
        if (!(t1 > t0)) continue;
        const double re = c.re(i, j, k);
        const double beta = optics.sample(re).mass_extinction * c.lwc(i, j, k);
        const double albedo = optics.sample(re).albedo;
        const PhaseSample p = optics.phase(re, theta);
        const int steps = static_cast<int>(std::ceil((t1 - t0) / h));
        const double dt = (t1 - t0) / steps;
        for (int n = 0; n < steps; ++n) {
          const Eigen::Vector3d x = origin + (t0 + (n + 0.5) * dt) * dir;
          const double tau = slab_optical_depth(c, optics, x, -dir) + slab_optical_depth(c, optics, x, sun);
          const double src = irradiance / (4.0 * std::numbers::pi) * albedo * beta * std::exp(-tau) * dt;
          s[0] += src * p.p11;
          s[1] += src * p.p12 * std::cos(2.0 * chi);
          s[2] += src * p.p12 * std::sin(2.0 * chi);
        }
      }
  return s;
}

}  // namespace cloudtomo::test
