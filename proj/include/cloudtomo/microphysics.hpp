#pragma once

#include <span>

namespace cloudtomo {

class VoxelCloud;

/// Liquid water density, g/m^3 (1 g/cm^3).
inline constexpr double kWaterDensity = 1.0e6;

/// Gamma droplet size distribution
///   n(r) = N C r^(1/v_e - 3) exp(-r / (r_e v_e)),  C = (r_e v_e)^(2 - 1/v_e) / Gamma(1/v_e - 2)
/// with r in micrometers and n in droplets per micrometer per m^3.
struct DropletDistribution {
  double number_concentration = 0.0;  ///< N, m^-3
  double effective_radius = 10.0;     ///< r_e, um
  double effective_variance = 0.1;    ///< v_e, in (0, 0.5)

  /// Throws std::domain_error when N < 0, r_e <= 0 or v_e outside (0, 0.5).
  void validate() const;

  /// Gamma shape k = 1/v_e - 2 and scale theta = r_e v_e (um); n(r) = N r^(k-1) e^(-r/theta) / (Gamma(k) theta^k).
  double shape() const { return 1.0 / effective_variance - 2.0; }
  double scale() const { return effective_radius * effective_variance; }
};

double gamma_density(const DropletDistribution& dist, double radius_um);

/// Closed-form raw moment integral of r^p n(r) dr (um^p m^-3), p > -k.
double gamma_moment(const DropletDistribution& dist, double power);

/// Liquid water content in g/m^3.
double lwc_of(const DropletDistribution& dist);

/// Number concentration N (m^-3) giving the requested LWC.
double number_concentration(double lwc, double effective_radius, double effective_variance);

struct EffectiveMoments {
  double effective_radius = 0.0;
  double effective_variance = 0.0;
};

/// Area-weighted radius moments of a tabulated density using trapezoid weights.
/// Throws std::domain_error if the r^2-weighted mass is zero.
EffectiveMoments effective_moments(std::span<const double> radii_um, std::span<const double> density);

struct ErrorReport {
  double eps_lwc = 0.0;
  double eps_re = 0.0;
};

/// Relative L1 errors ||est - truth||_1 / ||truth||_1 over the union of both masks.
ErrorReport epsilon_errors(const VoxelCloud& estimate, const VoxelCloud& truth);

}  // namespace cloudtomo
