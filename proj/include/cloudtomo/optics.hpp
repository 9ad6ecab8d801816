#pragma once

#include "cloudtomo/microphysics.hpp"

#include <Eigen/Core>

#include <complex>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cloudtomo {

/// Water at 645 nm.
inline constexpr std::complex<double> kWaterIndexRed{1.331, 1.64e-8};

/// Axes and physical inputs of a bulk optics table.
struct OpticsTableSpec {
  double wavelength_nm = 645.0;
  std::complex<double> refractive_index = kWaterIndexRed;
  double effective_variance = 0.1;
  double re_min = 2.5;
  double re_max = 40.0;
  double re_step = 0.25;
  int angle_count = 721;   // uniform over [0, 180] degrees
  int radius_nodes = 256;  // log-spaced per r_e node

  std::vector<double> re_axis() const;
  std::vector<double> angle_axis() const;
  /// Identifies the table contents for the on-disk cache.
  std::string cache_key() const;
};

/// Gamma-averaged optical properties for a single r_e.
struct BulkOpticsNode {
  double effective_radius = 0.0;
  double mass_extinction = 0.0;        ///< beta / LWC, m^2/g
  double single_scatter_albedo = 0.0;
  double normalization = 0.0;          ///< (1/4pi) int P11 dOmega before renormalization
  double tail_mass = 0.0;              ///< cross-section weight outside the radius grid
  Eigen::ArrayXd p11, p12, p33, p34;   ///< per angle node
};

/// Integrates Mie cross sections and scattering matrices over the gamma law on a log
/// radius grid, then renormalizes the phase matrix so that the tabulated P11 (taken as
/// piecewise linear in angle) integrates to 4 pi. Throws NumericalError if the grid
/// misses more than 1e-4 of the cross-section or volume weight.
BulkOpticsNode bulk_from_distribution(const DropletDistribution& dist, double wavelength_nm,
                                      std::complex<double> refractive_index,
                                      std::span<const double> angles_deg, int radius_nodes = 256);

/// Molecular scattering matrix (no depolarization), normalized to 4 pi.
Eigen::Matrix4d rayleigh_phase(double theta_deg);

struct OpticsSample {
  double mass_extinction = 0.0;
  double d_mass_extinction = 0.0;  // per um
  double albedo = 0.0;
  double d_albedo = 0.0;
};

struct PhaseSample {
  double p11 = 0.0;
  double d_p11 = 0.0;
  double p12 = 0.0;
  double d_p12 = 0.0;
};

// Table over r_e nodes. Lookups are cubic Hermite in r_e with tabulated
// central-difference slopes, and linear in scattering angle. Values outside the
// r_e axis clamp to the end nodes with zero slope.
class BulkOpticsTable {
 public:
  BulkOpticsTable() = default;

  static BulkOpticsTable build(const OpticsTableSpec& spec);
  /// Loads a cached table whose key and content hash match, else builds and writes the cache.
  static BulkOpticsTable load_or_build(const OpticsTableSpec& spec, const std::filesystem::path& cache);
  static std::optional<BulkOpticsTable> load(const OpticsTableSpec& spec, const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  const OpticsTableSpec& spec() const { return spec_; }
  const std::vector<double>& re_axis() const { return re_axis_; }
  const std::vector<double>& angle_axis() const { return angle_axis_; }
  int re_count() const { return static_cast<int>(re_axis_.size()); }
  int angle_count() const { return static_cast<int>(angle_axis_.size()); }

  const Eigen::VectorXd& mass_extinction() const { return mass_ext_; }
  const Eigen::VectorXd& albedo() const { return albedo_; }
  /// Rows are r_e nodes, columns angle nodes.
  const Eigen::MatrixXd& p11() const { return p11_; }
  const Eigen::MatrixXd& p12() const { return p12_; }
  const Eigen::MatrixXd& p33() const { return p33_; }
  const Eigen::MatrixXd& p34() const { return p34_; }

  OpticsSample sample(double re) const;
  PhaseSample phase(double re, double theta_deg) const;

  // P11/P12 at one scattering angle for every r_e node, with their r_e slopes.
  class PhaseSlice {
   public:
    PhaseSample at(double re) const;

   private:
    friend class BulkOpticsTable;
    const BulkOpticsTable* table_ = nullptr;
    Eigen::VectorXd p11_, p12_, dp11_, dp12_;
  };
  PhaseSlice phase_slice(double theta_deg) const;

 private:
  void finalize();
  std::string payload() const;

  OpticsTableSpec spec_;
  std::vector<double> re_axis_;
  std::vector<double> angle_axis_;
  Eigen::VectorXd mass_ext_, albedo_, d_mass_ext_, d_albedo_;
  Eigen::MatrixXd p11_, p12_, p33_, p34_, dp11_, dp12_;
};

}  // namespace cloudtomo
