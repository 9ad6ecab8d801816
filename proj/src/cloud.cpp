#include "cloudtomo/cloud.hpp"

#include <limits>
#include <stdexcept>

namespace cloudtomo {

VoxelCloud::VoxelCloud(const GridDims& dims, const Eigen::Vector3d& voxel_size_m, double base_height_m,
                       double ve)
    : lwc(dims), re(dims), mask(dims), voxel_size(voxel_size_m), base_height(base_height_m),
      effective_variance(ve) {
  if ((voxel_size.array() <= 0.0).any()) throw std::invalid_argument("voxel size must be positive");
}

Eigen::Index VoxelCloud::masked_count() const {
  return (mask.array() != 0).count();
}

Eigen::Vector3d VoxelCloud::box_min() const {
  return {-0.5 * dims()[0] * voxel_size.x(), -0.5 * dims()[1] * voxel_size.y(), base_height};
}

Eigen::Vector3d VoxelCloud::box_max() const {
  return box_min() + Eigen::Vector3d(dims()[0] * voxel_size.x(), dims()[1] * voxel_size.y(),
                                     dims()[2] * voxel_size.z());
}

Eigen::Vector3d VoxelCloud::voxel_center(int i, int j, int k) const {
  return box_min() + voxel_size.cwiseProduct(Eigen::Vector3d(i + 0.5, j + 0.5, k + 0.5));
}

double VoxelCloud::lowest_masked_altitude() const {
  for (int k = 0; k < dims()[2]; ++k)
    for (int i = 0; i < dims()[0]; ++i)
      for (int j = 0; j < dims()[1]; ++j)
        if (mask(i, j, k)) return layer_altitude(k);
  throw std::invalid_argument("mask is empty");
}

void VoxelCloud::validate(double re_min, double re_max) const {
  if (!lwc.same_shape(re) || !lwc.same_shape(mask)) throw std::invalid_argument("grid shapes differ");
  if (!(effective_variance > 0.0 && effective_variance < 0.5))
    throw std::invalid_argument("effective variance must lie in (0, 0.5)");
  for (Eigen::Index v = 0; v < voxel_count(); ++v) {
    if (!(lwc[v] >= 0.0)) throw std::invalid_argument("LWC must be nonnegative and finite");
    if (!mask[v]) {
      if (lwc[v] != 0.0) throw std::invalid_argument("LWC must vanish outside the mask");
      continue;
    }
    if (!(re[v] >= re_min && re[v] <= re_max))
      throw std::invalid_argument("effective radius outside the valid range inside the mask");
  }
}

VoxelCloud VoxelCloud::empty_like() const {
  VoxelCloud out(dims(), voxel_size, base_height, effective_variance);
  out.mask = mask;
  return out;
}

bool operator==(const VoxelCloud& a, const VoxelCloud& b) {
  return a.lwc == b.lwc && a.re == b.re && a.mask == b.mask && a.voxel_size == b.voxel_size &&
         a.base_height == b.base_height && a.effective_variance == b.effective_variance;
}

}  // namespace cloudtomo
