#pragma once

#include "cloudtomo/cloud.hpp"
#include "cloudtomo/geometry.hpp"
#include "cloudtomo/grid.hpp"
#include "cloudtomo/optics.hpp"

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <vector>

namespace cloudtomo {

/// Per-pixel [I, Q, U] in the meridian frame of each pixel's center ray, row-major.
struct StokesImage {
  int width = 0;
  int height = 0;
  Eigen::ArrayXd I, Q, U;

  StokesImage() = default;
  StokesImage(int w, int h)
      : width(w), height(h), I(Eigen::ArrayXd::Zero(w * h)), Q(I), U(I) {}

  Eigen::Index size() const { return I.size(); }
  bool same_shape(const StokesImage& o) const { return width == o.width && height == o.height; }
  Eigen::ArrayXd dolp() const;
  /// Largest polarizer-channel radiance I + sqrt(Q^2 + U^2).
  double max_channel() const;

  friend bool operator==(const StokesImage& a, const StokesImage& b) {
    return a.same_shape(b) && (a.I == b.I).all() && (a.Q == b.Q).all() && (a.U == b.U).all();
  }
};

struct RenderOptions {
  int supersample = 1;          ///< n x n rays per pixel
  double max_substep = 1.0;     ///< m, longest sub-segment of the in-scatter integral
  bool rayleigh = false;
  double rayleigh_beta0 = 7.0e-6;        ///< 1/m at sea level
  double rayleigh_scale_height = 8000.0; ///< m
  double surface_albedo = 0.0;  ///< Lambertian floor at z = 0; 0 disables it
};

/// dCost/dLWC and dCost/dr_e on the cloud grid.
struct CloudGradient {
  Grid3<double> lwc;
  Grid3<double> re;
};

class ForwardModel {
 public:
  virtual ~ForwardModel() = default;

  virtual StokesImage render(const VoxelCloud& cloud, const Camera& camera, const SunGeometry& sun) const = 0;

  /// Gradient of sum_p (wI_p I_p + wQ_p Q_p + wU_p U_p) with respect to every voxel's
  /// LWC and r_e, where w is the adjoint image (the residual for a squared-error cost).
  /// Unmasked voxels get exactly zero.
  virtual StokesImage render_with_gradient(const VoxelCloud& cloud, const Camera& camera,
                                           const SunGeometry& sun, const StokesImage& adjoint,
                                           CloudGradient& gradient) const = 0;
};

/// Single-scattering vector radiative transfer with exact voxel traversal.
class SingleScatterModel : public ForwardModel {
 public:
  SingleScatterModel(std::shared_ptr<const BulkOpticsTable> optics, RenderOptions options = {});

  StokesImage render(const VoxelCloud& cloud, const Camera& camera, const SunGeometry& sun) const override;
  StokesImage render_with_gradient(const VoxelCloud& cloud, const Camera& camera, const SunGeometry& sun,
                                   const StokesImage& adjoint, CloudGradient& gradient) const override;

  const BulkOpticsTable& optics() const { return *optics_; }
  const RenderOptions& options() const { return options_; }

 private:
  StokesImage run(const VoxelCloud& cloud, const Camera& camera, const SunGeometry& sun,
                  const StokesImage* adjoint, CloudGradient* gradient) const;

  std::shared_ptr<const BulkOpticsTable> optics_;
  RenderOptions options_;
};

/// Calls visit(flat voxel index, t_enter, t_exit) for every voxel crossed by
/// origin + t dir with t in [t_min, t_max], in order. dir must be unit length.
void traverse_voxels(const VoxelCloud& cloud, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                     double t_min, double t_max, const std::function<void(Eigen::Index, double, double)>& visit);

/// Cloud optical depth of the straight segment a -> b.
double optical_depth(const VoxelCloud& cloud, const BulkOpticsTable& optics, const Eigen::Vector3d& a,
                     const Eigen::Vector3d& b);

/// Renders every camera; views run concurrently.
std::vector<StokesImage> render_views(const ForwardModel& model, const VoxelCloud& cloud,
                                      const std::vector<Camera>& cameras, const SunGeometry& sun);

}  // namespace cloudtomo
