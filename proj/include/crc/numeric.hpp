#pragma once

#include <cmath>
#include <complex>
#include <numbers>

namespace crc::numeric {

/// exp(z) - 1 without cancellation for small |z|.
inline std::complex<double> expm1(std::complex<double> z) {
  const double x = z.real();
  const double y = z.imag();
  const double s = std::sin(0.5 * y);
  const double c = std::cos(0.5 * y);
  const double em1 = std::expm1(x);
  const double two_s2 = 2.0 * s * s;
  // cos y - 1 = -2 sin^2(y/2), sin y = 2 sin(y/2) cos(y/2).
  return {em1 - (em1 + 1.0) * two_s2, (em1 + 1.0) * 2.0 * s * c};
}

/// Principal complex log; avoids the slow exact-rounding path of glibc clog.
inline std::complex<double> log(std::complex<double> z) {
  return {std::log(std::hypot(z.real(), z.imag())), std::atan2(z.imag(), z.real())};
}

/// log(1 + z) / z, continuous at z = 0.
inline std::complex<double> log1p_over_z(std::complex<double> z) {
  if (std::abs(z) < 1e-5) return 1.0 - z * (0.5 - z * (1.0 / 3.0 - 0.25 * z));
  const double x = z.real(), y = z.imag();
  if (std::abs(z) < 0.5) {
    // log|1 + z| = log1p(2x + x^2 + y^2) / 2 keeps full relative accuracy near z = 0.
    return std::complex<double>(0.5 * std::log1p(x * (2.0 + x) + y * y), std::atan2(y, 1.0 + x)) / z;
  }
  return log(1.0 + z) / z;
}

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace crc::numeric
