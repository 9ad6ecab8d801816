#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <stdexcept>

namespace cloudtomo {

using GridDims = std::array<int, 3>;

// Dense 3D array, (i, j, k) = (x/North, y/East, z/Up), k fastest.
template <typename Scalar>
class Grid3 {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Grid3() = default;
  explicit Grid3(const GridDims& dims, Scalar fill = Scalar(0))
      : dims_(dims), data_(Storage::Constant(checked_size(dims), fill)) {}

  const GridDims& dims() const { return dims_; }
  int nx() const { return dims_[0]; }
  int ny() const { return dims_[1]; }
  int nz() const { return dims_[2]; }
  Eigen::Index size() const { return data_.size(); }

  Eigen::Index index(int i, int j, int k) const {
    return (static_cast<Eigen::Index>(i) * dims_[1] + j) * dims_[2] + k;
  }
  std::array<int, 3> unravel(Eigen::Index flat) const {
    const int k = static_cast<int>(flat % dims_[2]);
    flat /= dims_[2];
    const int j = static_cast<int>(flat % dims_[1]);
    return {static_cast<int>(flat / dims_[1]), j, k};
  }

  Scalar& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
  const Scalar& operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }
  Scalar& operator[](Eigen::Index flat) { return data_[flat]; }
  const Scalar& operator[](Eigen::Index flat) const { return data_[flat]; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  void fill(Scalar value) { data_.setConstant(value); }

  bool same_shape(const GridDims& other) const { return dims_ == other; }
  template <typename Other>
  bool same_shape(const Grid3<Other>& other) const { return dims_ == other.dims(); }

  friend bool operator==(const Grid3& a, const Grid3& b) {
    return a.dims_ == b.dims_ && (a.data_ == b.data_).all();
  }

 private:
  static Eigen::Index checked_size(const GridDims& dims) {
    for (int d : dims) {
      if (d <= 0) throw std::invalid_argument("grid dimensions must be positive");
    }
    return static_cast<Eigen::Index>(dims[0]) * dims[1] * dims[2];
  }

  GridDims dims_{0, 0, 0};
  Storage data_;
};

}  // namespace cloudtomo
