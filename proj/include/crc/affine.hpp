#pragma once

// Heston / Hull-White extended Bates affine characteristics.
//
// Two complex-argument conventions coexist here:
//  * riccati_solve, jump_cumulant and forward_characteristic take the
//    exponent argument u of E[exp(u X)];
//  * char_fn takes the Fourier variable u of E[exp(i u X)].
// char_fn is the only adapter between the two.

#include <array>
#include <complex>
#include <span>

namespace crc {

using cplx = std::complex<double>;

/// Time-homogeneous affine block of the model.
struct HestonParams {
  double r = 0.0;      // risk-free rate, per year
  double q = 0.0;      // dividend yield, per year
  double k = 1.0;      // mean-reversion speed, 1/year
  double theta = 0.04; // long-run variance
  double sigma = 0.3;  // vol-of-vol
  double rho = 0.0;

  bool feller() const { return 2.0 * k * theta > sigma * sigma; }

  /// Throws DomainError unless k, theta, sigma > 0 and rho in [-1, 1].
  /// The Feller condition is checked only when require_feller is set.
  void validate(bool require_feller = false) const;
  bool operator==(const HestonParams&) const = default;
};

struct MarketState {
  double x = 0.0;       // log-price
  double v = 0.04;      // instantaneous variance, >= 0
  double s0_ref = 1.0;  // reference spot used for reporting

  double spot() const;
  bool operator==(const MarketState&) const = default;
};

struct JumpBucket {
  double nu = 0.0;    // mean of the normal jump size
  double delta = 0.0; // std of the normal jump size, >= 0
  bool operator==(const JumpBucket&) const = default;
};

/// Compensated compound Poisson process with normal jumps whose law is
/// piecewise constant in time-to-maturity.
///
/// Bucket b covers [edges[b], edges[b+1]); the last bucket extends beyond
/// edges[5] so that maturities past the grid stay well defined.
struct JumpSpec {
  static constexpr std::size_t kBuckets = 5;

  double lambda = 0.0;
  std::array<JumpBucket, kBuckets> buckets{};
  std::array<double, kBuckets + 1> bucket_edges{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

  /// Same (nu, delta) in every bucket.
  static JumpSpec uniform(double lambda, double nu, double delta,
                          const std::array<double, kBuckets + 1>& edges);

  /// Edges {0, t[1], t[3], t[5], t[7], t[9]}: each bucket spans two
  /// adjacent maturities of a 10-point maturity grid.
  static std::array<double, kBuckets + 1> edges_from_maturities(std::span<const double> maturities);

  void validate() const;

  /// Bucket containing time-to-maturity t (t >= 0).
  std::size_t bucket_index(double t) const;
  bool operator==(const JumpSpec&) const = default;
};

/// Riccati exponents with phi(u, 0) = 0 and psi(u, 0) = 0.
struct RiccatiSolution {
  cplx phi;
  cplx psi;
};

/// Functional characteristic F(u, w) = k theta w + (r - q) u (no jumps).
cplx functional_F(cplx u, cplx w, const HestonParams& p);

/// Functional characteristic R_C(u, w).
cplx functional_R(cplx u, cplx w, const HestonParams& p);

/// Closed-form solution of dphi/dt = F(u, psi), dpsi/dt = R_C(u, psi) in the
/// branch-cut-stable ("little trap") form. The (r - q) drift is carried by phi.
/// Throws NumericDomainError if the result is not finite.
RiccatiSolution riccati_solve(cplx u, double tau, const HestonParams& p);

/// Jump cumulant of one bucket per unit time:
/// exp(u nu + u^2 delta^2 / 2) - 1 - u (exp(nu + delta^2 / 2) - 1).
cplx bucket_cumulant(cplx u, const JumpBucket& b);

/// mu_L(u, tau): lambda times the bucket cumulants integrated over [0, tau].
cplx jump_cumulant(cplx u, double tau, const JumpSpec& j);

/// d/dtau of jump_cumulant, i.e. lambda * bucket_cumulant at maturity t.
cplx jump_cumulant_rate(cplx u, double t, const JumpSpec& j);

/// E[exp(i u X_tau)] given the current state. Psi(0) == 1 exactly.
cplx char_fn(cplx u, double tau, const MarketState& state, const HestonParams& p, const JumpSpec& j);

/// log E[exp(u (X_tau - x))] for exponent argument u; the building block of
/// char_fn without the state shift.
cplx log_mgf(cplx u, double tau, double v, const HestonParams& p, const JumpSpec& j);

/// Forward characteristic theta_t(-iu, x) = F_{t+x}(u, psi(u, x)) + R_C(u, psi(u, x)) v
/// with u the exponent argument and t_cal the time elapsed since the jump
/// specification was calibrated.
cplx forward_characteristic(cplx u, double x_ttm, double t_cal, double v, const HestonParams& p,
                            const JumpSpec& j);

/// Explosion time of E[exp(u X)] for real u (infinity if moments never explode).
double moment_explosion_time(double u, const HestonParams& p);

}  // namespace crc
