#pragma once

#include "cloudtomo/geometry.hpp"
#include "cloudtomo/render.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace cloudtomo {

/// Piecewise-linear curve over wavelength (nm), clamped beyond its ends.
struct SpectralCurve {
  std::vector<double> wavelength_nm;
  std::vector<double> value;

  static SpectralCurve flat(double v) { return {{0.0}, {v}}; }
  double at(double nm) const;
  void validate(double lo, double hi) const;
};

// Defaults follow the IMX250MYR polarization sensor; QE and optics efficiency are flat.
struct SensorSpec {
  double pixel_pitch = 3.45e-6;   // m
  double aperture = 0.04;         // m
  double focal_length = 0.08625;  // m
  SpectralCurve qe = SpectralCurve::flat(0.5);
  SpectralCurve optics_efficiency = SpectralCurve::flat(0.9);
  double full_well = 10500.0;  // electrons
  double read_noise = 2.31;    // electrons RMS
  double dark_current = 3.51;  // electrons / s
  int bits = 10;

  void validate() const;
  double lsb() const { return full_well / std::ldexp(1.0, bits); }
  double quant_noise() const;
};

struct BandSpec {
  double lambda_min = 620.0;  // nm
  double lambda_max = 670.0;  // nm
  SpectralCurve toa_scale = SpectralCurve::flat(1.0);

  void validate() const;
};

/// Electrons per (J m^-2 sr^-1) at wavelength lambda: pi tau (D / 2f)^2 QE (lambda / hc) p^2.
double gamma_lambda(const SensorSpec& spec, double lambda_nm);

/// Band integral of gamma_lambda times the TOA scale (trapezoid on a 0.1 nm lattice
/// merged with the curve nodes); electrons per unit band radiance per second.
double band_response(const SensorSpec& spec, const BandSpec& band);

double electrons_expected(double radiance, double exposure_s, const SensorSpec& spec, const BandSpec& band);

/// Exposure at which a radiance of scene_max fills 90% of the full well.
/// Throws std::domain_error when scene_max is not positive.
double choose_exposure(double scene_max, const SensorSpec& spec, const BandSpec& band);

using RandomStream = std::mt19937_64;

/// Independent stream per (seed, view, pixel, channel).
RandomStream make_stream(std::uint64_t seed, std::uint64_t view, std::uint64_t pixel, std::uint64_t channel);

/// Poisson shot and dark noise, rounded Gaussian read noise, clipping to the full well,
/// then uniform quantization to 2^bits levels over [0, full_well].
double apply_noise(double expected, double exposure_s, const SensorSpec& spec, RandomStream& rng);

double snr(double electrons, double exposure_s, const SensorSpec& spec);

/// Polarizer channel angles psi in measurement order.
inline constexpr std::array<double, 4> kPolarizerAngles{90.0, 45.0, 135.0, 0.0};

/// Rows [1, cos 2psi, sin 2psi].
Eigen::Matrix<double, 4, 3> polarizer_matrix();
/// Least-squares inverse of polarizer_matrix().
Eigen::Matrix<double, 3, 4> polarizer_inverse();

/// Mueller rotation of (I, Q, U) by alpha (rad): Q' = cos2a Q - sin2a U, U' = sin2a Q + cos2a U.
Eigen::Vector3d rotate_stokes(const Eigen::Vector3d& s, double alpha);

/// Angle (rad) from the camera 0-degree polarizer axis to the meridian l axis,
/// anticlockwise looking along the propagation direction.
double polarizer_rotation(const MeridianFrame& frame, const Eigen::Vector3d& polarizer_axis);

struct PixelMeasurement {
  Eigen::Vector3d stokes = Eigen::Vector3d::Zero();
  std::array<double, 4> electrons{};
  bool saturated = false;
};

/// Four-channel measurement of a meridian-frame Stokes triple. rng == nullptr gives
/// the noiseless expected response; streams must hold one generator per channel.
PixelMeasurement measure_stokes(const Eigen::Vector3d& stokes, double alpha, double exposure_s,
                                const SensorSpec& spec, const BandSpec& band, std::array<RandomStream, 4>* rng);

struct ImageMeasurement {
  StokesImage image;
  int saturated_pixels = 0;
};

/// Measures every pixel of a rendered view; noise streams derive from (seed, view).
ImageMeasurement measure_image(const StokesImage& radiance, const Camera& camera, double exposure_s,
                               const SensorSpec& spec, const BandSpec& band, bool noise, std::uint64_t seed,
                               std::uint64_t view);

}  // namespace cloudtomo
