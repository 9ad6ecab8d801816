#pragma once

#include "cloudtomo/grid.hpp"

#include <Eigen/Core>

#include <cstdint>

namespace cloudtomo {

inline constexpr double kReMin = 2.5;   // um, floor of the parametric profiles
inline constexpr double kReMax = 40.0;  // um, validity cap
inline constexpr double kLwcMin = 1.0e-4;  // g/m^3

// Voxelized cloud. The grid spans x in [-nx dx / 2, nx dx / 2], likewise y, and
// z in [base_height, base_height + nz dz]; voxel (i, j, k) is the cell with
// lower corner box_min() + (i dx, j dy, k dz).
class VoxelCloud {
 public:
  VoxelCloud() = default;
  VoxelCloud(const GridDims& dims, const Eigen::Vector3d& voxel_size, double base_height,
             double effective_variance = 0.1);

  Grid3<double> lwc;          // g/m^3
  Grid3<double> re;           // um
  Grid3<std::uint8_t> mask;   // 1 inside the cloud
  Eigen::Vector3d voxel_size{20.0, 20.0, 20.0};  // m
  double base_height = 0.0;                       // m, bottom face of the grid
  double effective_variance = 0.1;

  const GridDims& dims() const { return lwc.dims(); }
  Eigen::Index voxel_count() const { return lwc.size(); }
  Eigen::Index masked_count() const;

  Eigen::Vector3d box_min() const;
  Eigen::Vector3d box_max() const;
  Eigen::Vector3d voxel_center(int i, int j, int k) const;
  double layer_altitude(int k) const { return base_height + (k + 0.5) * voxel_size.z(); }

  /// Lowest masked voxel-center altitude; throws if the mask is empty.
  double lowest_masked_altitude() const;

  /// Throws std::invalid_argument on shape mismatch, negative LWC, LWC outside the
  /// mask, or r_e outside [re_min, re_max] inside the mask.
  void validate(double re_min = kReMin, double re_max = kReMax) const;

  /// Same geometry and mask, zero LWC and r_e.
  VoxelCloud empty_like() const;

  friend bool operator==(const VoxelCloud& a, const VoxelCloud& b);
};

}  // namespace cloudtomo
