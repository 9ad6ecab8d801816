#pragma once

#include <complex>
#include <span>
#include <vector>

namespace cloudtomo {

struct MieResult {
  double size_parameter = 0.0;
  double q_ext = 0.0;
  double q_sca = 0.0;
  double q_back = 0.0;
  int terms = 0;
  std::vector<double> angles_deg;
  std::vector<std::complex<double>> s1;
  std::vector<std::complex<double>> s2;
};

/// Series length x + 4.05 x^(1/3) + 2, rounded up.
int mie_truncation(double size_parameter);

/// Lorenz-Mie solution for a homogeneous sphere: efficiencies and amplitude functions
/// S1, S2 at the requested scattering angles (degrees). Logarithmic derivatives use
/// downward recurrence from a continued-fraction seed. terms = 0 selects mie_truncation(x).
/// Throws std::domain_error for x <= 0 and NumericalError if the series has not decayed.
MieResult mie_single(double size_parameter, std::complex<double> refractive_index,
                     std::span<const double> angles_deg, int terms = 0);

}  // namespace cloudtomo
