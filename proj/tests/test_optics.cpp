#include "cloudtomo/errors.hpp"
#include "cloudtomo/mie.hpp"
#include "cloudtomo/optics.hpp"
#include "support.hpp"

#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/bessel_prime.hpp>
#include <doctest.h>

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <vector>

using namespace cloudtomo;
using cd = std::complex<double>;

namespace {

struct Reference {
  double q_ext = 0.0, q_sca = 0.0;
  std::vector<cd> s1, s2;
};

// Direct Riccati-Bessel evaluation for a real index, with Boost spherical Bessel functions.
Reference reference_mie(double x, double m, const std::vector<double>& angles_deg) {
  using boost::math::sph_bessel;
  using boost::math::sph_bessel_prime;
  using boost::math::sph_neumann;
  using boost::math::sph_neumann_prime;
  const int n_max = static_cast<int>(std::ceil(x + 4.05 * std::cbrt(x) + 2.0));
  const double mx = m * x;
  Reference out;
  out.s1.assign(angles_deg.size(), 0.0);
  out.s2.assign(angles_deg.size(), 0.0);
  std::vector<cd> a(n_max + 1), b(n_max + 1);
  for (unsigned n = 1; n <= static_cast<unsigned>(n_max); ++n) {
    const double psi_x = x * sph_bessel(n, x), dpsi_x = sph_bessel(n, x) + x * sph_bessel_prime(n, x);
    const double psi_mx = mx * sph_bessel(n, mx), dpsi_mx = sph_bessel(n, mx) + mx * sph_bessel_prime(n, mx);
    const double chi_x = x * sph_neumann(n, x), dchi_x = sph_neumann(n, x) + x * sph_neumann_prime(n, x);
    const cd xi_x(psi_x, chi_x), dxi_x(dpsi_x, dchi_x);
    a[n] = (m * psi_mx * dpsi_x - psi_x * dpsi_mx) / (m * psi_mx * dxi_x - xi_x * dpsi_mx);
    b[n] = (psi_mx * dpsi_x - m * psi_x * dpsi_mx) / (psi_mx * dxi_x - m * xi_x * dpsi_mx);
    out.q_ext += (2.0 * n + 1.0) * (a[n] + b[n]).real();
    out.q_sca += (2.0 * n + 1.0) * (std::norm(a[n]) + std::norm(b[n]));
  }
  out.q_ext *= 2.0 / (x * x);
  out.q_sca *= 2.0 / (x * x);
  for (std::size_t k = 0; k < angles_deg.size(); ++k) {
    const double mu = std::cos(angles_deg[k] * std::numbers::pi / 180.0);
    double pi_prev = 0.0, pi_cur = 1.0;
    for (int n = 1; n <= n_max; ++n) {
      const double tau = n * mu * pi_cur - (n + 1) * pi_prev;
      const double f = (2.0 * n + 1.0) / (n * (n + 1.0));
      out.s1[k] += f * (a[n] * pi_cur + b[n] * tau);
      out.s2[k] += f * (a[n] * tau + b[n] * pi_cur);
      const double pi_next = ((2.0 * n + 1.0) * mu * pi_cur - (n + 1.0) * pi_prev) / n;
      pi_prev = pi_cur;
      pi_cur = pi_next;
    }
  }
  return out;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST_CASE("Mie matches a direct Riccati-Bessel evaluation") {
  const std::vector<double> angles{0.0, 10.0, 45.0, 90.0, 137.5, 140.0, 180.0};
  for (double x : {0.3, 1.0, 5.0, 12.0, 30.0}) {
    CAPTURE(x);
    const Reference ref = reference_mie(x, 1.331, angles);
    const MieResult mie = mie_single(x, {1.331, 0.0}, angles);
    CHECK(rel(mie.q_ext, ref.q_ext) < 1e-9);
    CHECK(rel(mie.q_sca, ref.q_sca) < 1e-9);
    for (std::size_t k = 0; k < angles.size(); ++k) {
      CHECK(std::abs(mie.s1[k] - ref.s1[k]) < 1e-8 * (1.0 + std::abs(ref.s1[k])));
      CHECK(std::abs(mie.s2[k] - ref.s2[k]) < 1e-8 * (1.0 + std::abs(ref.s2[k])));
    }
  }
}

TEST_CASE("Mie invariants") {
  const std::vector<double> angles{0.0, 60.0, 180.0};
  for (double x : {0.5, 3.0, 50.0, 300.0}) {
    CAPTURE(x);
    const MieResult r = mie_single(x, {1.331, 0.0}, angles);
    // Lossless sphere and the optical theorem.
    CHECK(rel(r.q_sca, r.q_ext) < 1e-10);
    CHECK(rel(r.q_ext, 4.0 / (x * x) * r.s1[0].real()) < 1e-10);
    CHECK(std::abs(r.s1[0] - r.s2[0]) < 1e-10 * std::abs(r.s1[0]));
    CHECK(std::abs(r.s1[2] + r.s2[2]) < 1e-9 * std::abs(r.s1[2]));
    const MieResult absorbing = mie_single(x, {1.331, 1e-3}, angles);
    CHECK(absorbing.q_sca < absorbing.q_ext);
  }
  SUBCASE("small-particle limit") {
    const double x = 1e-3;
    const cd m(1.331, 0.0);
    const double k = std::norm((m * m - 1.0) / (m * m + 2.0));
    CHECK(rel(mie_single(x, m, angles).q_sca, 8.0 / 3.0 * std::pow(x, 4) * k) < 1e-4);
  }
  SUBCASE("large-particle extinction paradox") {
    CHECK(mie_single(2000.0, cd(1.331, 0.0), angles).q_ext == doctest::Approx(2.0).epsilon(0.02));
  }
  CHECK_THROWS_AS(mie_single(0.0, {1.331, 0.0}, angles), std::domain_error);
}

TEST_CASE("Mie series is converged at the default truncation") {
  const std::vector<double> angles{0.0, 30.0, 90.0, 140.0, 180.0};
  for (double x : {1.0, 10.0, 100.0, 300.0}) {
    CAPTURE(x);
    const int n = mie_truncation(x);
    const MieResult a = mie_single(x, kWaterIndexRed, angles, n);
    const MieResult b = mie_single(x, kWaterIndexRed, angles, 2 * n);
    CHECK(rel(a.q_ext, b.q_ext) < 1e-8);
    CHECK(rel(a.q_sca, b.q_sca) < 1e-8);
    // Amplitudes relative to the forward peak; at x = 10 also angle by angle.
    const double peak = std::abs(b.s1[0]);
    for (std::size_t k = 0; k < angles.size(); ++k) {
      CHECK(std::abs(a.s1[k] - b.s1[k]) <= 1e-8 * (x <= 10.0 ? std::abs(b.s1[k]) : peak));
      CHECK(std::abs(a.s2[k] - b.s2[k]) <= 1e-8 * (x <= 10.0 ? std::abs(b.s2[k]) : peak));
    }
  }
}

TEST_CASE("bulk optics of a gamma distribution") {
  const DropletDistribution d{1.0, 10.0, 0.1};
  const auto angles = test::small_spec().angle_axis();
  const BulkOpticsNode coarse = bulk_from_distribution(d, 645.0, kWaterIndexRed, angles, 256);
  const BulkOpticsNode fine = bulk_from_distribution(d, 645.0, kWaterIndexRed, angles, 1024);
  // Narrow Mie resonances are not resolved by either grid; they shift the average by ~1e-3.
  CHECK(rel(coarse.mass_extinction, fine.mass_extinction) < 5e-3);
  CHECK(coarse.tail_mass < 1e-4);
  // Geometric optics: k = 3 Q / (4 rho r_e) with Q near 2.
  CHECK(coarse.mass_extinction == doctest::Approx(3.0 * 2.0 / (4.0 * 1e6 * 10e-6)).epsilon(0.08));
  CHECK(coarse.single_scatter_albedo > 0.9999);
  CHECK(coarse.single_scatter_albedo <= 1.0);
  CHECK(std::abs(coarse.normalization - 1.0) < 0.02);
  // P12 vanishes in the forward and backward directions.
  CHECK(std::abs(coarse.p12[0]) < 1e-9 * coarse.p11[0]);
  CHECK(std::abs(coarse.p12[angles.size() - 1]) < 1e-6 * coarse.p11[angles.size() - 1]);
  CHECK((coarse.p11.abs() >= coarse.p12.abs()).all());
}

TEST_CASE("bulk optics input checks") {
  const auto angles = test::small_spec().angle_axis();
  CHECK_THROWS_AS(bulk_from_distribution({1.0, 10.0, 0.5}, 645.0, kWaterIndexRed, angles), std::domain_error);
  CHECK_THROWS_AS(bulk_from_distribution({1.0, 10.0, 0.1}, 0.0, kWaterIndexRed, angles), std::domain_error);
  // Wide distributions stay inside the tail budget.
  CHECK(bulk_from_distribution({1.0, 10.0, 0.4}, 645.0, kWaterIndexRed, angles, 256).tail_mass < 1e-4);
}

TEST_CASE("optics table") {
  const auto table = test::small_optics();
  const auto& axis = table->re_axis();
  REQUIRE(axis.size() == 13);

  SUBCASE("P11 is normalized at every node") {
    const auto& ang = table->angle_axis();
    for (int r = 0; r < table->re_count(); ++r) {
      // Exact integral of the piecewise-linear P11 against sin(theta).
      double sum = 0.0;
      for (int a = 0; a + 1 < table->angle_count(); ++a) {
        const double t0 = ang[a] * std::numbers::pi / 180, t1 = ang[a + 1] * std::numbers::pi / 180, h = t1 - t0;
        const double p0 = table->p11()(r, a), p1 = table->p11()(r, a + 1);
        sum += p0 * (std::cos(t0) - std::cos(t1)) + (p1 - p0) / h * (std::sin(t1) - std::sin(t0) - h * std::cos(t1));
      }
      CHECK(0.5 * sum == doctest::Approx(1.0).epsilon(1e-3));
    }
  }

  SUBCASE("interpolation reproduces the nodes") {
    for (int r = 0; r < table->re_count(); ++r) {
      const OpticsSample s = table->sample(axis[r]);
      CHECK(s.mass_extinction == doctest::Approx(table->mass_extinction()[r]).epsilon(1e-14));
      CHECK(s.albedo == doctest::Approx(table->albedo()[r]).epsilon(1e-14));
      const int a = 200;
      CHECK(table->phase(axis[r], table->angle_axis()[a]).p11 == doctest::Approx(table->p11()(r, a)).epsilon(1e-14));
    }
  }

  SUBCASE("r_e slopes match finite differences") {
    const double h = 1e-6;
    for (double re : {4.3, 7.7, 10.5, 15.2}) {
      const OpticsSample s = table->sample(re);
      const double fd = (table->sample(re + h).mass_extinction - table->sample(re - h).mass_extinction) / (2 * h);
      CHECK(s.d_mass_extinction == doctest::Approx(fd).epsilon(1e-6));
      const PhaseSample p = table->phase(re, 141.3);
      const double fd11 = (table->phase(re + h, 141.3).p11 - table->phase(re - h, 141.3).p11) / (2 * h);
      const double fd12 = (table->phase(re + h, 141.3).p12 - table->phase(re - h, 141.3).p12) / (2 * h);
      CHECK(p.d_p11 == doctest::Approx(fd11).epsilon(1e-5));
      CHECK(p.d_p12 == doctest::Approx(fd12).epsilon(1e-5));
    }
  }

  SUBCASE("interpolation is continuous with a continuous slope across nodes") {
    for (double node : {6.0, 11.0}) {
      const double e = 1e-9;
      CHECK(table->sample(node - e).mass_extinction == doctest::Approx(table->sample(node + e).mass_extinction));
      CHECK(table->sample(node - e).d_mass_extinction ==
            doctest::Approx(table->sample(node + e).d_mass_extinction).epsilon(1e-6));
    }
  }

  SUBCASE("mass extinction falls roughly as 1 / r_e") {
    const double k5 = table->sample(5.0).mass_extinction, k15 = table->sample(15.0).mass_extinction;
    CHECK(k5 / k15 == doctest::Approx(3.0).epsilon(0.1));
    const auto& k = table->mass_extinction();
    for (int r = 1; r < table->re_count(); ++r) CHECK(k[r] < k[r - 1]);
    // Smooth in r_e: second differences are small next to first differences.
    for (int r = 1; r + 1 < table->re_count(); ++r)
      CHECK(std::abs(k[r + 1] - 2.0 * k[r] + k[r - 1]) < 0.3 * std::abs(k[r + 1] - k[r - 1]));
  }

  SUBCASE("cache round trip and corruption") {
    const auto dir = test::scratch_dir("optics_cache");
    table->save(dir / "t.bin");
    const auto loaded = BulkOpticsTable::load(table->spec(), dir / "t.bin");
    REQUIRE(loaded.has_value());
    CHECK(loaded->p11() == table->p11());
    CHECK(loaded->mass_extinction() == table->mass_extinction());
    OpticsTableSpec other = table->spec();
    other.wavelength_nm = 650.0;
    CHECK_FALSE(BulkOpticsTable::load(other, dir / "t.bin").has_value());
    {
      std::fstream f(dir / "t.bin", std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(-5, std::ios::end);
      f.put('\x7f');
    }
    CHECK_FALSE(BulkOpticsTable::load(table->spec(), dir / "t.bin").has_value());
  }
}

TEST_CASE("Rayleigh phase matrix") {
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double t = (i + 0.5) * std::numbers::pi / n;
    sum += rayleigh_phase(t * 180 / std::numbers::pi)(0, 0) * std::sin(t) * std::numbers::pi / n;
  }
  CHECK(0.5 * sum == doctest::Approx(1.0).epsilon(1e-6));
  const Eigen::Matrix4d p = rayleigh_phase(90.0);
  CHECK(-p(0, 1) / p(0, 0) == doctest::Approx(1.0));
}
