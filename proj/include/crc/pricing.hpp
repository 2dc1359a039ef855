#pragma once

#include "crc/affine.hpp"

namespace crc {

enum class OptionKind { Call, Put };

struct OptionQuote {
  double strike = 100.0;
  double maturity = 1.0;  // years
  double price = 0.0;
  OptionKind kind = OptionKind::Call;
};

/// Fourier quadrature settings for the damped (Carr-Madan) integrand.
struct DampingConfig {
  enum class Mode {
    Fixed,  // use `alpha` for every strike
    Auto,   // per-strike damping minimising the integrand at the origin
  };

  Mode mode = Mode::Auto;
  double alpha = 0.75;
  double trunc = 200.0;  // initial upper frequency; extended while the tail is not negligible
  int n_nodes = 128;     // Gauss-Legendre nodes spread over [0, trunc] before refinement
  double abs_tol = 1e-9; // absolute price tolerance
  double rel_tol = 1e-10;

  void validate() const;
};

/// Black-Scholes price. vol == 0 or tau == 0 gives the discounted intrinsic value.
double bs_price(double spot, double strike, double tau, double vol, double r, double q, OptionKind kind);

/// Fourier price of a European option on exp(X). Out-of-the-money legs are
/// integrated directly (call damping for K >= F, put damping for K < F) and
/// the other leg follows by parity.
double fourier_price(const MarketState& state, const HestonParams& p, const JumpSpec& j, double strike, double tau,
                     OptionKind kind, const DampingConfig& cfg = {});

double call_price(const MarketState& state, const HestonParams& p, const JumpSpec& j, double strike, double tau,
                  const DampingConfig& cfg = {});

/// Put by put-call parity from call_price.
double put_price(const MarketState& state, const HestonParams& p, const JumpSpec& j, double strike, double tau,
                 const DampingConfig& cfg = {});

/// Black-Scholes implied volatility. Throws BoundError when the price is
/// outside (intrinsic, upper bound) and AccuracyError on non-convergence.
double implied_vol(const OptionQuote& quote, double spot, double r, double q);

/// Normalised undiscounted Black call b(x, s) = e^{x/2} N(x/s + s/2) - e^{-x/2} N(x/s - s/2)
/// with x = ln(F/K) and s = vol * sqrt(tau).
double normalised_black_call(double x, double s);

}  // namespace crc
