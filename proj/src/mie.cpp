#include "cloudtomo/mie.hpp"

#include "cloudtomo/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cloudtomo {

namespace {

using cd = std::complex<double>;

// True when the angle list is mirror-symmetric about 90 degrees, so only the first
// half needs the angular recurrences.
bool mirror_symmetric(std::span<const double> angles) {
  const std::size_t n = angles.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(angles[i] + angles[n - 1 - i] - 180.0) > 1e-9) return false;
  }
  return n > 1;
}

// D_n(z) = -n/z + J_{n-1/2}(z) / J_{n+1/2}(z), the Bessel ratio evaluated as a continued
// fraction with the modified Lentz method. Seeds the downward recurrence exactly.
cd log_derivative_lentz(int n, cd z) {
  const double nu = n + 0.5;
  const double tiny = 1e-300;
  cd f = 2.0 * nu / z;
  cd c = f, dd = 0.0;
  for (int k = 1; k < 100000; ++k) {
    const cd b = 2.0 * (nu + k) / z;
    dd = b - dd;
    if (std::abs(dd) < tiny) dd = tiny;
    c = b - 1.0 / c;
    if (std::abs(c) < tiny) c = tiny;
    dd = 1.0 / dd;
    const cd delta = c * dd;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return -static_cast<double>(n) / z + f;
}

}  // namespace

int mie_truncation(double size_parameter) {
  return static_cast<int>(std::ceil(size_parameter + 4.05 * std::cbrt(size_parameter) + 2.0));
}

MieResult mie_single(double x, cd m, std::span<const double> angles_deg, int terms) {
  if (!(x > 0.0) || !std::isfinite(x)) throw std::domain_error("size parameter must be positive");
  const int nstop = terms > 0 ? terms : mie_truncation(x);
  const cd y = m * x;
  const int nmx = static_cast<int>(std::max<double>(nstop, std::abs(y))) + 15;

  std::vector<cd> d(static_cast<std::size_t>(nmx) + 1);
  d[nmx] = log_derivative_lentz(nmx, y);
  for (int n = nmx; n >= 1; --n) {
    const cd rn_y = static_cast<double>(n) / y;
    d[n - 1] = rn_y - 1.0 / (d[n] + rn_y);
  }

  const std::size_t nang = angles_deg.size();
  const bool mirror = mirror_symmetric(angles_deg);
  const std::size_t nhalf = mirror ? (nang + 1) / 2 : nang;

  std::vector<double> mu(nhalf), pi_prev(nhalf, 0.0), pi_cur(nhalf, 1.0);
  for (std::size_t j = 0; j < nhalf; ++j) mu[j] = std::cos(angles_deg[j] * std::numbers::pi / 180.0);
  std::vector<cd> s1(nang, 0.0), s2(nang, 0.0);

  double psi0 = std::cos(x), psi1 = std::sin(x);
  double chi0 = -std::sin(x), chi1 = std::cos(x);
  cd xi1(psi1, -chi1);
  double qsca = 0.0, qext = 0.0;
  cd back = 0.0;
  double last_term = 0.0;

  for (int n = 1; n <= nstop; ++n) {
    const double rn = n;
    const double fn = (2.0 * rn + 1.0) / (rn * (rn + 1.0));
    const double psi = (2.0 * rn - 1.0) * psi1 / x - psi0;
    const double chi = (2.0 * rn - 1.0) * chi1 / x - chi0;
    const cd xi(psi, -chi);
    const cd da = d[n] / m + rn / x;
    const cd db = m * d[n] + rn / x;
    const cd an = (da * psi - psi1) / (da * xi - xi1);
    const cd bn = (db * psi - psi1) / (db * xi - xi1);

    last_term = (2.0 * rn + 1.0) * (std::norm(an) + std::norm(bn));
    qsca += last_term;
    qext += (2.0 * rn + 1.0) * (an.real() + bn.real());
    back += (2.0 * rn + 1.0) * ((n % 2) ? -1.0 : 1.0) * (an - bn);

    const double parity = (n % 2) ? 1.0 : -1.0;  // (-1)^(n-1)
    for (std::size_t j = 0; j < nhalf; ++j) {
      const double p = pi_cur[j];
      const double t = rn * mu[j] * p - (rn + 1.0) * pi_prev[j];
      s1[j] += fn * (an * p + bn * t);
      s2[j] += fn * (an * t + bn * p);
      const std::size_t jj = nang - 1 - j;
      if (mirror && jj != j) {
        s1[jj] += fn * parity * (an * p - bn * t);
        s2[jj] += fn * parity * (bn * p - an * t);
      }
      pi_cur[j] = ((2.0 * rn + 1.0) * mu[j] * p - (rn + 1.0) * pi_prev[j]) / rn;
      pi_prev[j] = p;
    }
    psi0 = psi1;
    psi1 = psi;
    chi0 = chi1;
    chi1 = chi;
    xi1 = cd(psi1, -chi1);
  }

  if (!(qsca > 0.0) || last_term > 1e-6 * qsca)
    throw NumericalError("Mie series did not converge by the truncation order");

  MieResult out;
  out.size_parameter = x;
  out.terms = nstop;
  out.q_sca = 2.0 / (x * x) * qsca;
  out.q_ext = 2.0 / (x * x) * qext;
  out.q_back = std::norm(back) / (x * x);
  out.angles_deg.assign(angles_deg.begin(), angles_deg.end());
  out.s1 = std::move(s1);
  out.s2 = std::move(s2);
  return out;
}

}  // namespace cloudtomo
