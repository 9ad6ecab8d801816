#include "cloudtomo/microphysics.hpp"

#include "cloudtomo/cloud.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace cloudtomo {

namespace {

// um^3 -> m^3
constexpr double kCubicMicron = 1.0e-18;

}  // namespace

void DropletDistribution::validate() const {
  if (!(number_concentration >= 0.0) || !std::isfinite(number_concentration))
    throw std::domain_error("number concentration must be finite and >= 0");
  if (!(effective_radius > 0.0) || !std::isfinite(effective_radius))
    throw std::domain_error("effective radius must be > 0");
  if (!(effective_variance > 0.0 && effective_variance < 0.5))
    throw std::domain_error("effective variance must lie in (0, 0.5)");
}

double gamma_density(const DropletDistribution& dist, double radius_um) {
  dist.validate();
  if (!(radius_um >= 0.0)) throw std::domain_error("radius must be >= 0");
  if (dist.number_concentration == 0.0) return 0.0;
  const double k = dist.shape();
  const double theta = dist.scale();
  if (radius_um == 0.0) {
    if (k > 1.0) return 0.0;
    if (k == 1.0) return dist.number_concentration / theta;
    return std::numeric_limits<double>::infinity();
  }
  const double log_n = std::log(dist.number_concentration) - std::lgamma(k) - k * std::log(theta) +
                       (k - 1.0) * std::log(radius_um) - radius_um / theta;
  return std::exp(log_n);
}

double gamma_moment(const DropletDistribution& dist, double power) {
  dist.validate();
  const double k = dist.shape();
  if (!(k + power > 0.0)) throw std::domain_error("moment order below the gamma support");
  return dist.number_concentration * std::pow(dist.scale(), power) *
         std::exp(std::lgamma(k + power) - std::lgamma(k));
}

double lwc_of(const DropletDistribution& dist) {
  return 4.0 / 3.0 * std::numbers::pi * kWaterDensity * kCubicMicron * gamma_moment(dist, 3.0);
}

double number_concentration(double lwc, double effective_radius, double effective_variance) {
  if (!(effective_radius > 0.0)) throw std::domain_error("effective radius must be > 0");
  if (!(lwc >= 0.0)) throw std::domain_error("LWC must be >= 0");
  if (lwc == 0.0) return 0.0;
  const DropletDistribution unit{1.0, effective_radius, effective_variance};
  return lwc / lwc_of(unit);
}

EffectiveMoments effective_moments(std::span<const double> radii_um, std::span<const double> density) {
  if (radii_um.size() != density.size() || radii_um.empty())
    throw std::invalid_argument("radius and density tables must be nonempty and equally sized");
  const std::size_t n = radii_um.size();
  // Trapezoid weights; a single sample gets unit weight.
  auto weight = [&](std::size_t i) {
    if (n == 1) return 1.0;
    const double left = i > 0 ? radii_um[i] - radii_um[i - 1] : 0.0;
    const double right = i + 1 < n ? radii_um[i + 1] - radii_um[i] : 0.0;
    return 0.5 * (left + right);
  };
  double area = 0.0;
  double volume = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (density[i] < 0.0) throw std::domain_error("density must be nonnegative");
    const double r = radii_um[i];
    const double w = weight(i) * density[i] * r * r;
    area += w;
    volume += w * r;
  }
  if (!(area > 0.0)) throw std::domain_error("degenerate distribution: zero cross-section moment");
  const double re = volume / area;
  double spread = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = radii_um[i];
    spread += weight(i) * density[i] * r * r * (r - re) * (r - re);
  }
  return {re, spread / (re * re * area)};
}

ErrorReport epsilon_errors(const VoxelCloud& estimate, const VoxelCloud& truth) {
  if (estimate.dims() != truth.dims()) throw std::invalid_argument("grid shapes differ");
  double lwc_diff = 0.0, lwc_norm = 0.0, re_diff = 0.0, re_norm = 0.0;
  for (Eigen::Index v = 0; v < truth.voxel_count(); ++v) {
    if (!estimate.mask[v] && !truth.mask[v]) continue;
    lwc_diff += std::abs(estimate.lwc[v] - truth.lwc[v]);
    lwc_norm += std::abs(truth.lwc[v]);
    re_diff += std::abs(estimate.re[v] - truth.re[v]);
    re_norm += std::abs(truth.re[v]);
  }
  if (lwc_norm == 0.0 || re_norm == 0.0)
    throw std::domain_error("ground truth is identically zero on the comparison support");
  return {lwc_diff / lwc_norm, re_diff / re_norm};
}

}  // namespace cloudtomo
