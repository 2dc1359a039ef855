#include "crc/pricing.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "crc/errors.hpp"
#include "crc/numeric.hpp"

namespace crc {

void DampingConfig::validate() const {
  if (!(alpha > 0.0)) throw DomainError("DampingConfig: alpha must be > 0");
  if (!(trunc > 0.0)) throw DomainError("DampingConfig: trunc must be > 0");
  if (n_nodes < 64) throw DomainError("DampingConfig: n_nodes must be >= 64");
  if (!(abs_tol > 0.0) || !(rel_tol > 0.0)) throw DomainError("DampingConfig: tolerances must be > 0");
}

double bs_price(double spot, double strike, double tau, double vol, double r, double q, OptionKind kind) {
  const double df = std::exp(-r * tau);
  const double fwd = spot * std::exp((r - q) * tau);
  if (vol <= 0.0 || tau <= 0.0) {
    const double intrinsic = kind == OptionKind::Call ? fwd - strike : strike - fwd;
    return df * std::max(intrinsic, 0.0);
  }
  const double s = vol * std::sqrt(tau);
  const double x = std::log(fwd / strike);
  const double scale = df * std::sqrt(fwd * strike);
  // Compute the out-of-the-money leg in normalised form and add intrinsic value by parity.
  const double otm = normalised_black_call(-std::abs(x), s);
  const double intrinsic = std::exp(0.5 * x) - std::exp(-0.5 * x);  // normalised F - K
  const bool call_is_otm = x <= 0.0;
  double b;
  if (kind == OptionKind::Call)
    b = call_is_otm ? otm : otm + intrinsic;
  else
    b = call_is_otm ? otm - intrinsic : otm;
  return scale * b;
}

double normalised_black_call(double x, double s) {
  if (s <= 0.0) return std::max(std::exp(0.5 * x) - std::exp(-0.5 * x), 0.0);
  const double d1 = x / s + 0.5 * s;
  const double d2 = x / s - 0.5 * s;
  return std::exp(0.5 * x) * numeric::norm_cdf(d1) - std::exp(-0.5 * x) * numeric::norm_cdf(d2);
}

namespace {

constexpr int kGaussPoints = 16;

struct GaussRule {
  std::array<double, kGaussPoints> x{};
  std::array<double, kGaussPoints> w{};
};

// Gauss-Legendre nodes on [-1, 1] by Newton iteration on P_n.
GaussRule make_gauss_rule() {
  GaussRule g;
  const int n = kGaussPoints;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= n; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    g.x[i] = -z;
    g.x[n - 1 - i] = z;
    g.w[i] = g.w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return g;
}

const GaussRule& gauss_rule() {
  static const GaussRule rule = make_gauss_rule();
  return rule;
}

// Damped transform of the normalised option value c(k) = E[(e^Y - e^k)^+] with
// Y = X_T - x - (r - q) tau (or the put when alpha < -1).
class DampedIntegrand {
 public:
  DampedIntegrand(const MarketState& st, const HestonParams& p, const JumpSpec& j, double tau, double alpha,
                  double k)
      : st_(st), p_(p), j_(j), tau_(tau), alpha_(alpha), k_(k) {}

  cplx log_psi_num(double w) const {
    const cplx z(alpha_ + 1.0, w);
    return log_mgf(z, tau_, st_.v, p_, j_) - z * (p_.r - p_.q) * tau_;
  }

  cplx psi(double w) const { return std::exp(log_psi_num(w)) / (cplx(alpha_, w) * cplx(alpha_ + 1.0, w)); }

  double operator()(double w) const {
    const cplx num = std::exp(log_psi_num(w) - cplx(0.0, w * k_));
    return (num / (cplx(alpha_, w) * cplx(alpha_ + 1.0, w))).real();
  }

 private:
  const MarketState& st_;
  const HestonParams& p_;
  const JumpSpec& j_;
  double tau_;
  double alpha_;
  double k_;
};

double gauss_panel(const DampedIntegrand& f, double a, double b) {
  const GaussRule& g = gauss_rule();
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (b + a);
  double acc = 0.0;
  for (int i = 0; i < kGaussPoints; ++i) acc += g.w[i] * f(mid + half * g.x[i]);
  return half * acc;
}

double adapt(const DampedIntegrand& f, double a, double b, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double left = gauss_panel(f, a, m);
  const double right = gauss_panel(f, m, b);
  const double refined = left + right;
  if (!std::isfinite(refined)) throw AccuracyError("fourier quadrature: non-finite panel");
  if (std::abs(refined - whole) <= tol) return refined;
  if (depth == 0)
    throw AccuracyError("fourier quadrature: refinement did not converge on [" + std::to_string(a) + ", " +
                        std::to_string(b) + "]");
  return adapt(f, a, m, left, 0.5 * tol, depth - 1) + adapt(f, m, b, right, 0.5 * tol, depth - 1);
}

// f(alpha) = -alpha k + log psi(0): the log of the damped integrand at the origin.
double damping_objective(const MarketState& st, const HestonParams& p, const JumpSpec& j, double tau, double k,
                         double alpha) {
  try {
    const double u = alpha + 1.0;
    const double lm = log_mgf(cplx(u, 0.0), tau, st.v, p, j).real() - u * (p.r - p.q) * tau;
    const double val = -alpha * k + lm - std::log(alpha * u);
    return std::isfinite(val) ? val : std::numeric_limits<double>::infinity();
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

// Largest |alpha| on the requested side whose (alpha + 1)-moment stays finite
// over tau with margin.
double damping_limit(const HestonParams& p, double tau, bool call_side, double cap) {
  auto ok = [&](double alpha) { return moment_explosion_time(alpha + 1.0, p) > 1.5 * tau; };
  const double base = call_side ? 0.0 : -1.0;
  const double sgn = call_side ? 1.0 : -1.0;
  if (ok(base + sgn * cap)) return cap;
  double lo = 0.0, hi = cap;  // offsets from base
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (ok(base + sgn * mid) ? lo : hi) = mid;
  }
  return lo;
}

double choose_alpha(const MarketState& st, const HestonParams& p, const JumpSpec& j, double tau, double k,
                    bool call_side, double fallback) {
  constexpr double kCap = 2000.0;
  const double limit = damping_limit(p, tau, call_side, kCap);
  if (!(limit > 1e-3)) return call_side ? fallback : -1.0 - fallback;
  const double base = call_side ? 0.0 : -1.0;
  const double sgn = call_side ? 1.0 : -1.0;
  auto f = [&](double off) { return damping_objective(st, p, j, tau, k, base + sgn * off); };
  // Golden-section search on the convex objective over the offset in (0, limit).
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = 1e-3, b = limit;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 100 && (b - a) > 1e-4 * (1.0 + a); ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = f(d);
    }
  }
  const double off = 0.5 * (a + b);
  if (!std::isfinite(f(off))) return call_side ? fallback : -1.0 - fallback;
  return base + sgn * off;
}

// Normalised option value e^{-alpha k}/pi * int_0^inf Re[e^{-iwk} psi(w)] dw.
double damped_fourier_value(const MarketState& st, const HestonParams& p, const JumpSpec& j, double tau, double k,
                            double alpha, const DampingConfig& cfg, double price_scale) {
  const DampedIntegrand f(st, p, j, tau, alpha, k);
  const int n_panels = std::max(1, cfg.n_nodes / kGaussPoints);
  const double width = cfg.trunc / n_panels;

  std::vector<double> coarse(n_panels);
  double estimate = 0.0, magnitude = 0.0;
  for (int i = 0; i < n_panels; ++i) {
    coarse[i] = gauss_panel(f, i * width, (i + 1) * width);
    estimate += coarse[i];
    magnitude += std::abs(coarse[i]);
  }
  if (!std::isfinite(estimate)) throw AccuracyError("fourier quadrature: non-finite integrand");

  // Convert the price tolerances into integral units.
  const double to_price = price_scale * std::exp(-alpha * k) / std::numbers::pi;
  double tol = std::min(cfg.abs_tol / to_price, cfg.rel_tol * std::abs(estimate));
  tol = std::max(tol, 64.0 * std::numeric_limits<double>::epsilon() * magnitude);
  if (!(tol > 0.0)) tol = std::numeric_limits<double>::min();

  constexpr int kDepth = 24;
  double total = 0.0;
  for (int i = 0; i < n_panels; ++i)
    total += adapt(f, i * width, (i + 1) * width, coarse[i], tol / n_panels, kDepth);

  // Extend the range until the 1/w^2-dominated tail is below tolerance.
  double a = cfg.trunc;
  constexpr double kMaxFrequency = 1e7;
  while (std::abs(f.psi(a)) * a > 0.1 * tol) {
    if (a > kMaxFrequency) throw AccuracyError("fourier quadrature: integrand tail does not decay");
    const double b = 2.0 * a;
    total += adapt(f, a, b, gauss_panel(f, a, b), 0.1 * tol, kDepth);
    a = b;
  }
  return std::exp(-alpha * k) / std::numbers::pi * total;
}

void check_pricing_inputs(double strike, double tau) {
  if (!(strike > 0.0) || !std::isfinite(strike)) throw DomainError("pricing: strike must be > 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("pricing: tau must be > 0");
}

}  // namespace

double fourier_price(const MarketState& state, const HestonParams& p, const JumpSpec& j, double strike, double tau,
                     OptionKind kind, const DampingConfig& cfg) {
  check_pricing_inputs(strike, tau);
  cfg.validate();
  const double spot = state.spot();
  const double df = std::exp(-p.r * tau);
  const double fwd = spot * std::exp((p.r - p.q) * tau);
  const double k = std::log(strike / fwd);
  const double scale = df * fwd;
  const double forward_minus_strike = df * (fwd - strike);

  double call, put;
  if (cfg.mode == DampingConfig::Mode::Fixed) {
    call = scale * damped_fourier_value(state, p, j, tau, k, cfg.alpha, cfg, scale);
    put = call - forward_minus_strike;
  } else if (k >= 0.0) {
    const double alpha = choose_alpha(state, p, j, tau, k, true, cfg.alpha);
    call = scale * damped_fourier_value(state, p, j, tau, k, alpha, cfg, scale);
    put = call - forward_minus_strike;
  } else {
    const double alpha = choose_alpha(state, p, j, tau, k, false, cfg.alpha);
    put = scale * damped_fourier_value(state, p, j, tau, k, alpha, cfg, scale);
    call = put + forward_minus_strike;
  }
  return kind == OptionKind::Call ? call : put;
}

double call_price(const MarketState& state, const HestonParams& p, const JumpSpec& j, double strike, double tau,
                  const DampingConfig& cfg) {
  return fourier_price(state, p, j, strike, tau, OptionKind::Call, cfg);
}

double put_price(const MarketState& state, const HestonParams& p, const JumpSpec& j, double strike, double tau,
                 const DampingConfig& cfg) {
  const double c = call_price(state, p, j, strike, tau, cfg);
  return c - state.spot() * std::exp(-p.q * tau) + strike * std::exp(-p.r * tau);
}

namespace {

// Solve normalised_black_call(x, s) = target for s with x <= 0 and 0 < target < e^{x/2}.
double solve_normalised(double x, double target) {
  const double upper = std::exp(0.5 * x);
  const double log_target = std::log(target);

  // Rational (Corrado-Miller) initial guess in normalised units.
  const double fk = upper - 1.0 / upper;  // normalised F - K
  const double c = target - 0.5 * fk;
  const double disc = c * c - fk * fk / std::numbers::pi;
  double s = std::sqrt(2.0 * std::numbers::pi) / (upper + 1.0 / upper) * (c + std::sqrt(std::max(disc, 0.0)));
  if (!(s > 0.0) || !std::isfinite(s)) s = std::sqrt(2.0 * std::abs(x)) + 0.1;

  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  constexpr int kMaxIter = 100;
  for (int it = 0; it < kMaxIter; ++it) {
    const double b = normalised_black_call(x, s);
    const double h = (b > 0.0) ? std::log(b) - log_target : -std::numeric_limits<double>::infinity();
    if (h == 0.0) return s;
    if (h < 0.0)
      lo = s;
    else
      hi = s;
    double next;
    if (std::isfinite(h)) {
      // Householder(3) on h(s) = ln b(x, s) - ln target.
      const double bp = std::exp(-0.5 * (x * x / (s * s) + 0.25 * s * s)) / std::sqrt(2.0 * std::numbers::pi);
      const double r2 = x * x / (s * s * s) - 0.25 * s;                // b'' / b'
      const double r3 = r2 * r2 - 3.0 * x * x / (s * s * s * s) - 0.25;  // b''' / b'
      const double q1 = bp / b;
      const double h1 = q1;
      const double h2 = q1 * r2 - q1 * q1;
      const double h3 = q1 * r3 - 3.0 * q1 * q1 * r2 + 2.0 * q1 * q1 * q1;
      const double nu = -h / h1;
      const double gamma = h2 / h1;
      const double delta = h3 / h1;
      next = s + nu * (1.0 + 0.5 * gamma * nu) / (1.0 + nu * (gamma + delta * nu / 6.0));
    } else {
      next = std::numeric_limits<double>::quiet_NaN();
    }
    if (!(next > lo && next < hi) || !std::isfinite(next)) {
      // Bisection fallback inside the bracket (geometric while unbounded above).
      next = std::isfinite(hi) ? 0.5 * (lo + hi) : std::max(2.0 * s, 2.0 * lo + 1e-3);
    }
    if (std::abs(next - s) <= 4.0 * std::numeric_limits<double>::epsilon() * s) return next;
    if (std::isfinite(hi) && (hi - lo) <= 4.0 * std::numeric_limits<double>::epsilon() * hi) return next;
    s = next;
  }
  throw AccuracyError("implied_vol: no convergence after " + std::to_string(kMaxIter) + " iterations");
}

}  // namespace

double implied_vol(const OptionQuote& quote, double spot, double r, double q) {
  check_pricing_inputs(quote.strike, quote.maturity);
  if (!(spot > 0.0)) throw DomainError("implied_vol: spot must be > 0");
  if (!std::isfinite(quote.price)) throw DomainError("implied_vol: non-finite price");
  const double tau = quote.maturity;
  const double df = std::exp(-r * tau);
  const double fwd = spot * std::exp((r - q) * tau);
  const double strike = quote.strike;

  const bool is_call = quote.kind == OptionKind::Call;
  const double lower = df * std::max(is_call ? fwd - strike : strike - fwd, 0.0);
  const double upper = is_call ? df * fwd : df * strike;
  if (!(quote.price > lower)) throw BoundError(BoundError::Bound::Lower, quote.price, lower);
  if (!(quote.price < upper)) throw BoundError(BoundError::Bound::Upper, quote.price, upper);

  const double x = std::log(fwd / strike);
  const double scale = df * std::sqrt(fwd * strike);
  double b = quote.price / scale;
  // Reduce to the out-of-the-money call at -|x| (put at x is the call at -x).
  const double intrinsic = std::exp(0.5 * x) - std::exp(-0.5 * x);
  if (is_call && x > 0.0) b -= intrinsic;
  if (!is_call && x < 0.0) b += intrinsic;
  const double xo = -std::abs(x);
  if (!(b > 0.0)) throw BoundError(BoundError::Bound::Lower, quote.price, lower);
  if (!(b < std::exp(0.5 * xo))) throw BoundError(BoundError::Bound::Upper, quote.price, upper);

  return solve_normalised(xo, b) / std::sqrt(tau);
}

}  // namespace crc
