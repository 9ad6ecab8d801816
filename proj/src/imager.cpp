#include "cloudtomo/imager.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace cloudtomo {

namespace {

constexpr double kPlanck = 6.62607015e-34;  // J s
constexpr double kLightSpeed = 299792458.0; // m / s
constexpr double kLatticeStep = 0.1;        // nm

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

double SpectralCurve::at(double nm) const {
  if (wavelength_nm.size() == 1) return value.front();
  if (nm <= wavelength_nm.front()) return value.front();
  if (nm >= wavelength_nm.back()) return value.back();
  const auto it = std::upper_bound(wavelength_nm.begin(), wavelength_nm.end(), nm);
  const std::size_t i = static_cast<std::size_t>(it - wavelength_nm.begin()) - 1;
  const double f = (nm - wavelength_nm[i]) / (wavelength_nm[i + 1] - wavelength_nm[i]);
  return value[i] + f * (value[i + 1] - value[i]);
}

void SpectralCurve::validate(double lo, double hi) const {
  if (wavelength_nm.empty() || wavelength_nm.size() != value.size())
    throw std::invalid_argument("spectral curve needs matching wavelength and value lists");
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (!(value[i] >= lo && value[i] <= hi)) throw std::invalid_argument("spectral curve value out of range");
    if (i > 0 && !(wavelength_nm[i] > wavelength_nm[i - 1]))
      throw std::invalid_argument("spectral curve wavelengths must increase");
  }
}

void SensorSpec::validate() const {
  if (!(pixel_pitch > 0.0 && aperture > 0.0 && focal_length > 0.0))
    throw std::invalid_argument("pixel pitch, aperture and focal length must be positive");
  qe.validate(0.0, 1.0);
  optics_efficiency.validate(0.0, 1.0);
  if (!(full_well > 0.0)) throw std::invalid_argument("full well must be positive");
  if (read_noise < 0.0 || dark_current < 0.0) throw std::invalid_argument("noise terms must be nonnegative");
  if (bits < 1 || bits > 24) throw std::invalid_argument("quantization bits must lie in [1, 24]");
}

double SensorSpec::quant_noise() const { return lsb() / std::sqrt(12.0); }

void BandSpec::validate() const {
  if (!(lambda_min > 0.0 && lambda_max > lambda_min)) throw std::invalid_argument("band needs 0 < lambda_min < lambda_max");
  toa_scale.validate(0.0, std::numeric_limits<double>::max());
}

double gamma_lambda(const SensorSpec& spec, double lambda_nm) {
  const double ratio = spec.aperture / (2.0 * spec.focal_length);
  const double lambda_m = lambda_nm * 1e-9;
  return std::numbers::pi * spec.optics_efficiency.at(lambda_nm) * ratio * ratio * spec.qe.at(lambda_nm) *
         (lambda_m / (kPlanck * kLightSpeed)) * spec.pixel_pitch * spec.pixel_pitch;
}

double band_response(const SensorSpec& spec, const BandSpec& band) {
  std::vector<double> lattice;
  const int steps = std::max(1, static_cast<int>(std::ceil((band.lambda_max - band.lambda_min) / kLatticeStep)));
  for (int i = 0; i <= steps; ++i)
    lattice.push_back(band.lambda_min + (band.lambda_max - band.lambda_min) * i / steps);
  for (const SpectralCurve* c : {&spec.qe, &spec.optics_efficiency, &band.toa_scale}) {
    for (double nm : c->wavelength_nm) {
      if (nm > band.lambda_min && nm < band.lambda_max) lattice.push_back(nm);
    }
  }
  std::sort(lattice.begin(), lattice.end());
  lattice.erase(std::unique(lattice.begin(), lattice.end()), lattice.end());

  double sum = 0.0;
  double prev = gamma_lambda(spec, lattice[0]) * band.toa_scale.at(lattice[0]);
  for (std::size_t i = 1; i < lattice.size(); ++i) {
    const double cur = gamma_lambda(spec, lattice[i]) * band.toa_scale.at(lattice[i]);
    sum += 0.5 * (prev + cur) * (lattice[i] - lattice[i - 1]);
    prev = cur;
  }
  return sum;
}

double electrons_expected(double radiance, double exposure_s, const SensorSpec& spec, const BandSpec& band) {
  return exposure_s * radiance * band_response(spec, band);
}

double choose_exposure(double scene_max, const SensorSpec& spec, const BandSpec& band) {
  if (!(scene_max > 0.0)) throw std::domain_error("scene maximum radiance must be positive");
  return 0.9 * spec.full_well / (scene_max * band_response(spec, band));
}

RandomStream make_stream(std::uint64_t seed, std::uint64_t view, std::uint64_t pixel, std::uint64_t channel) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ view);
  h = splitmix64(h ^ pixel);
  h = splitmix64(h ^ channel);
  return RandomStream(h);
}

double apply_noise(double expected, double exposure_s, const SensorSpec& spec, RandomStream& rng) {
  if (!(expected >= 0.0)) throw std::domain_error("expected electrons must be nonnegative");
  const double mean = expected + spec.dark_current * exposure_s;
  double n = 0.0;
  if (mean > 0.0) n = static_cast<double>(std::poisson_distribution<long long>(mean)(rng));
  if (spec.read_noise > 0.0) n += std::nearbyint(std::normal_distribution<double>(0.0, spec.read_noise)(rng));
  n = std::clamp(n, 0.0, spec.full_well);
  const double lsb = spec.lsb();
  const double top = std::ldexp(1.0, spec.bits) - 1.0;
  return std::min(std::nearbyint(n / lsb), top) * lsb;
}

double snr(double electrons, double exposure_s, const SensorSpec& spec) {
  if (electrons <= 0.0) return 0.0;
  const double q = spec.quant_noise();
  return electrons / std::sqrt(electrons + spec.dark_current * exposure_s + spec.read_noise * spec.read_noise + q * q);
}

Eigen::Matrix<double, 4, 3> polarizer_matrix() {
  Eigen::Matrix<double, 4, 3> g;
  for (int i = 0; i < 4; ++i) {
    const double psi = kPolarizerAngles[i] * std::numbers::pi / 180.0;
    g.row(i) << 1.0, std::cos(2.0 * psi), std::sin(2.0 * psi);
  }
  // Exact entries; avoids cos(pi) rounding noise.
  g.col(1) << -1.0, 0.0, 0.0, 1.0;
  g.col(2) << 0.0, 1.0, -1.0, 0.0;
  return g;
}

Eigen::Matrix<double, 3, 4> polarizer_inverse() {
  const Eigen::Matrix<double, 4, 3> g = polarizer_matrix();
  return (g.transpose() * g).inverse() * g.transpose();
}

Eigen::Vector3d rotate_stokes(const Eigen::Vector3d& s, double alpha) {
  const double c = std::cos(2.0 * alpha), sn = std::sin(2.0 * alpha);
  return {s[0], c * s[1] - sn * s[2], sn * s[1] + c * s[2]};
}

double polarizer_rotation(const MeridianFrame& frame, const Eigen::Vector3d& polarizer_axis) {
  Eigen::Vector3d c0 = polarizer_axis - polarizer_axis.dot(frame.omega) * frame.omega;
  if (c0.norm() < 1e-12) throw std::invalid_argument("polarizer axis is parallel to the ray");
  c0.normalize();
  return -std::atan2(c0.dot(frame.b), c0.dot(frame.l));
}

PixelMeasurement measure_stokes(const Eigen::Vector3d& stokes, double alpha, double exposure_s,
                                const SensorSpec& spec, const BandSpec& band, std::array<RandomStream, 4>* rng) {
  static const Eigen::Matrix<double, 4, 3> g = polarizer_matrix();
  static const Eigen::Matrix<double, 3, 4> g_inv = polarizer_inverse();
  const double response = exposure_s * band_response(spec, band);

  PixelMeasurement out;
  const Eigen::Vector4d channels = g * rotate_stokes(stokes, alpha);
  Eigen::Vector4d measured = channels;
  if (rng) {
    for (int i = 0; i < 4; ++i) {
      const double expected = std::max(0.0, channels[i]) * response;
      out.electrons[i] = apply_noise(expected, exposure_s, spec, (*rng)[i]);
      if (out.electrons[i] >= spec.full_well * (1.0 - 1.0 / std::ldexp(1.0, spec.bits))) out.saturated = true;
      measured[i] = out.electrons[i] / response;
    }
  } else {
    for (int i = 0; i < 4; ++i) out.electrons[i] = channels[i] * response;
  }
  out.stokes = rotate_stokes(g_inv * measured, -alpha);
  return out;
}

ImageMeasurement measure_image(const StokesImage& radiance, const Camera& camera, double exposure_s,
                               const SensorSpec& spec, const BandSpec& band, bool noise, std::uint64_t seed,
                               std::uint64_t view) {
  if (radiance.width != camera.resolution || radiance.height != camera.resolution)
    throw std::invalid_argument("image shape does not match the camera");
  const RayGrid rays = pixel_rays(camera);
  const Eigen::Vector3d axis0 = camera.right();
  ImageMeasurement out{StokesImage(radiance.width, radiance.height), 0};
  for (Eigen::Index p = 0; p < radiance.size(); ++p) {
    const MeridianFrame frame = meridian_frame(-rays.directions[p]);
    const double alpha = polarizer_rotation(frame, axis0);
    const Eigen::Vector3d s(radiance.I[p], radiance.Q[p], radiance.U[p]);
    PixelMeasurement m;
    if (noise) {
      std::array<RandomStream, 4> streams;
      for (int c = 0; c < 4; ++c) streams[c] = make_stream(seed, view, static_cast<std::uint64_t>(p), c);
      m = measure_stokes(s, alpha, exposure_s, spec, band, &streams);
    } else {
      m = measure_stokes(s, alpha, exposure_s, spec, band, nullptr);
    }
    out.image.I[p] = m.stokes[0];
    out.image.Q[p] = m.stokes[1];
    out.image.U[p] = m.stokes[2];
    if (m.saturated) ++out.saturated_pixels;
  }
  return out;
}

}  // namespace cloudtomo
