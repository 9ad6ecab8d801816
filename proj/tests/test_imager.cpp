#include "cloudtomo/geometry.hpp"
#include "cloudtomo/imager.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace cloudtomo;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Sample mean and variance of n noisy reads at one expected signal.
std::pair<double, double> noise_moments(double expected, double dt, const SensorSpec& spec, int n, std::uint64_t seed) {
  RandomStream rng = make_stream(seed, 0, 0, 0);
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = apply_noise(expected, dt, spec, rng);
    const double d = x - mean;
    mean += d / (i + 1);
    m2 += d * (x - mean);
  }
  return {mean, m2 / (n - 1)};
}

}  // namespace

TEST_CASE("radiometric response") {
  const SensorSpec spec;
  const BandSpec band;
  const double hc = 6.62607015e-34 * 299792458.0;
  const double expected = std::numbers::pi * 0.9 * std::pow(0.04 / (2 * 0.08625), 2) * 0.5 * (645e-9 / hc) * 3.45e-6 * 3.45e-6;
  CHECK(gamma_lambda(spec, 645.0) == doctest::Approx(expected).epsilon(1e-12));
  // gamma is linear in lambda for flat curves, so the trapezoid rule is exact.
  const double integral = 0.5 * (gamma_lambda(spec, 620.0) + gamma_lambda(spec, 670.0)) * 50.0;
  CHECK(band_response(spec, band) == doctest::Approx(integral).epsilon(1e-12));
  CHECK(electrons_expected(2.0, 0.5, spec, band) == doctest::Approx(band_response(spec, band)).epsilon(1e-14));

  SUBCASE("exposure fills 90 percent of the full well at the scene maximum") {
    const double dt = choose_exposure(3.0, spec, band);
    CHECK(electrons_expected(3.0, dt, spec, band) == doctest::Approx(0.9 * spec.full_well));
    CHECK_THROWS_AS(choose_exposure(0.0, spec, band), std::domain_error);
  }
  SUBCASE("spectral curves interpolate linearly and clamp") {
    SpectralCurve c{{600.0, 700.0}, {0.2, 0.6}};
    CHECK(c.at(650.0) == doctest::Approx(0.4));
    CHECK(c.at(500.0) == 0.2);
    CHECK(c.at(800.0) == 0.6);
    SensorSpec ramp = spec;
    ramp.qe = c;
    // Trapezoid on a 0.1 nm lattice of a quadratic integrand.
    double ref = 0.0;
    for (int i = 0; i < 500; ++i) {
      const double a = 620.0 + 0.1 * i, b = a + 0.1;
      ref += 0.5 * (gamma_lambda(ramp, a) + gamma_lambda(ramp, b)) * 0.1;
    }
    CHECK(band_response(ramp, band) == doctest::Approx(ref).epsilon(1e-10));
  }
  SUBCASE("invalid specs") {
    SensorSpec bad = spec;
    bad.bits = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = spec;
    bad.qe = SpectralCurve{{600.0, 590.0}, {0.5, 0.5}};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    BandSpec b = band;
    b.lambda_max = 600.0;
    CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  }
}

TEST_CASE("noise moments follow the variance budget") {
  SensorSpec spec;
  const double dt = 1.0;
  const double q = spec.lsb() / std::sqrt(12.0);
  for (double n : {200.0, 2000.0, 8000.0}) {
    CAPTURE(n);
    const auto [mean, var] = noise_moments(n, dt, spec, 100000, static_cast<std::uint64_t>(n));
    const double budget = n + spec.dark_current * dt + spec.read_noise * spec.read_noise + q * q;
    CHECK(std::abs(var / budget - 1.0) < 0.05);
    CHECK(std::abs(mean - (n + spec.dark_current * dt)) < 3.0 * std::sqrt(budget / 100000));
    CHECK(snr(n, dt, spec) == doctest::Approx(n / std::sqrt(budget)));
  }
}

TEST_CASE("noise clips and quantizes") {
  SensorSpec spec;
  RandomStream rng = make_stream(1, 2, 3, 4);
  for (int i = 0; i < 1000; ++i) {
    const double x = apply_noise(1e6, 0.01, spec, rng);
    CHECK(x <= spec.full_well);
    CHECK(std::abs(x / spec.lsb() - std::nearbyint(x / spec.lsb())) < 1e-9);
  }
  CHECK(apply_noise(1e6, 0.01, spec, rng) == doctest::Approx(1023 * spec.lsb()));
  SensorSpec quiet = spec;
  quiet.read_noise = 0.0;
  quiet.dark_current = 0.0;
  CHECK(apply_noise(0.0, 1.0, quiet, rng) == 0.0);
  CHECK_THROWS_AS(apply_noise(-1.0, 1.0, spec, rng), std::domain_error);
}

TEST_CASE("SNR properties") {
  SensorSpec spec;
  double prev = 0.0;
  for (double n = 1.0; n < spec.full_well; n *= 1.5) {
    const double s = snr(n, 0.01, spec);
    CHECK(s > prev);
    CHECK(s < std::sqrt(n));
    prev = s;
  }
  CHECK(snr(1e6, 0.0, spec) == doctest::Approx(1000.0).epsilon(1e-4));
  CHECK(snr(0.0, 1.0, spec) == 0.0);
}

TEST_CASE("independent streams") {
  RandomStream a = make_stream(1, 0, 0, 0), b = make_stream(1, 0, 0, 1), c = make_stream(1, 0, 0, 0);
  CHECK(a() != b());
  RandomStream a2 = make_stream(1, 0, 0, 0);
  a2();
  CHECK(c() == make_stream(1, 0, 0, 0)());
  CHECK(make_stream(2, 0, 0, 0)() != make_stream(1, 0, 0, 0)());
  CHECK(make_stream(1, 1, 0, 0)() != make_stream(1, 0, 1, 0)());
}

TEST_CASE("polarizer geometry") {
  const auto g = polarizer_matrix();
  const auto gi = polarizer_inverse();
  CHECK((gi * g - Eigen::Matrix3d::Identity()).norm() < 1e-15);
  for (int i = 0; i < 4; ++i) {
    const double psi = kPolarizerAngles[i] * kDeg;
    CHECK(g(i, 1) == doctest::Approx(std::cos(2 * psi)));
    CHECK(g(i, 2) == doctest::Approx(std::sin(2 * psi)));
  }
  SUBCASE("rotations compose and preserve I and the polarized intensity") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int t = 0; t < 100; ++t) {
      const Eigen::Vector3d s(5.0, u(rng), u(rng));
      const double a = u(rng), b = u(rng);
      CHECK(rotate_stokes(rotate_stokes(s, a), b).isApprox(rotate_stokes(s, a + b), 1e-13));
      CHECK(rotate_stokes(s, std::numbers::pi).isApprox(s, 1e-13));
      CHECK(rotate_stokes(s, a).tail<2>().norm() == doctest::Approx(s.tail<2>().norm()));
    }
  }
  SUBCASE("rotation angle between camera axis and meridian frame") {
    const MeridianFrame nadir = meridian_frame(Eigen::Vector3d::UnitZ());
    // Upwelling light at nadir: l = omega x b.
    CHECK(polarizer_rotation(nadir, nadir.l) == doctest::Approx(0.0));
    CHECK(polarizer_rotation(nadir, nadir.b) == doctest::Approx(-std::numbers::pi / 2));
    CHECK_THROWS_AS(polarizer_rotation(nadir, Eigen::Vector3d::UnitZ()), std::invalid_argument);
  }
}

TEST_CASE("noiseless measurement reproduces the Stokes vector") {
  const SensorSpec spec;
  const BandSpec band;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0), ang(-3.2, 3.2);
  for (int t = 0; t < 200; ++t) {
    const double i = 1.0 + std::abs(u(rng));
    const Eigen::Vector3d s(i, 0.5 * i * u(rng), 0.5 * i * u(rng));
    const PixelMeasurement m = measure_stokes(s, ang(rng), 0.01, spec, band, nullptr);
    CHECK((m.stokes - s).norm() <= 1e-12 * s.norm());
    CHECK_FALSE(m.saturated);
  }
}

TEST_CASE("noisy measurement of an image") {
  const SensorSpec spec;
  const BandSpec band;
  Camera cam;
  cam.resolution = 16;
  StokesImage img(16, 16);
  img.I.setConstant(1.0);
  img.Q.setConstant(-0.2);
  img.U.setConstant(0.1);
  const double dt = choose_exposure(img.max_channel(), spec, band);
  const ImageMeasurement a = measure_image(img, cam, dt, spec, band, true, 5, 0);
  const ImageMeasurement b = measure_image(img, cam, dt, spec, band, true, 5, 0);
  const ImageMeasurement c = measure_image(img, cam, dt, spec, band, true, 5, 1);
  CHECK(a.image == b.image);
  CHECK_FALSE(a.image == c.image);
  CHECK(a.saturated_pixels == 0);
  // Per-pixel noise is a few percent at these signal levels.
  CHECK(std::abs(a.image.I.mean() - 1.0) < 0.01);
  CHECK(std::abs(a.image.Q.mean() + 0.2) < 0.01);
  CHECK(std::abs(a.image.U.mean() - 0.1) < 0.01);
  const ImageMeasurement clean = measure_image(img, cam, dt, spec, band, false, 5, 0);
  CHECK((clean.image.I - 1.0).abs().maxCoeff() < 1e-12);
  CHECK((clean.image.Q + 0.2).abs().maxCoeff() < 1e-12);

  SUBCASE("overexposure saturates") {
    const ImageMeasurement hot = measure_image(img, cam, 10.0 * dt, spec, band, true, 5, 0);
    CHECK(hot.saturated_pixels == 256);
  }
  CHECK_THROWS_AS(measure_image(StokesImage(4, 4), cam, dt, spec, band, false, 0, 0), std::invalid_argument);
}
