#include "crc/affine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "crc/errors.hpp"
#include "crc/numeric.hpp"

namespace crc {

void HestonParams::validate(bool require_feller) const {
  if (!(k > 0.0)) throw DomainError("HestonParams: k must be > 0");
  if (!(theta > 0.0)) throw DomainError("HestonParams: theta must be > 0");
  if (!(sigma > 0.0)) throw DomainError("HestonParams: sigma must be > 0");
  if (!(rho >= -1.0 && rho <= 1.0)) throw DomainError("HestonParams: rho must lie in [-1, 1]");
  if (!std::isfinite(r) || !std::isfinite(q)) throw DomainError("HestonParams: r, q must be finite");
  if (require_feller && !feller()) throw DomainError("HestonParams: Feller condition 2 k theta > sigma^2 violated");
}

double MarketState::spot() const { return std::exp(x); }

JumpSpec JumpSpec::uniform(double lambda, double nu, double delta,
                           const std::array<double, kBuckets + 1>& edges) {
  JumpSpec j;
  j.lambda = lambda;
  j.buckets.fill(JumpBucket{nu, delta});
  j.bucket_edges = edges;
  return j;
}

std::array<double, JumpSpec::kBuckets + 1> JumpSpec::edges_from_maturities(std::span<const double> maturities) {
  if (maturities.size() != 2 * kBuckets) throw ShapeError("edges_from_maturities: need 10 maturities");
  std::array<double, kBuckets + 1> e{};
  e[0] = 0.0;
  for (std::size_t b = 1; b <= kBuckets; ++b) e[b] = maturities[2 * b - 1];
  return e;
}

void JumpSpec::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("JumpSpec: lambda must be >= 0");
  if (bucket_edges[0] != 0.0) throw DomainError("JumpSpec: bucket_edges[0] must be 0");
  for (std::size_t b = 0; b < kBuckets; ++b) {
    if (!(bucket_edges[b + 1] > bucket_edges[b])) throw DomainError("JumpSpec: bucket_edges must be strictly increasing");
    if (!(buckets[b].delta >= 0.0)) throw DomainError("JumpSpec: delta must be >= 0");
    if (!std::isfinite(buckets[b].nu) || !std::isfinite(buckets[b].delta)) throw DomainError("JumpSpec: non-finite bucket");
  }
}

std::size_t JumpSpec::bucket_index(double t) const {
  for (std::size_t b = 1; b < kBuckets; ++b)
    if (t < bucket_edges[b]) return b - 1;
  return kBuckets - 1;
}

cplx functional_F(cplx u, cplx w, const HestonParams& p) {
  return p.k * p.theta * w + (p.r - p.q) * u;
}

cplx functional_R(cplx u, cplx w, const HestonParams& p) {
  return 0.5 * u * (u - 1.0) + 0.5 * p.sigma * p.sigma * w * w + p.sigma * p.rho * u * w - p.k * w;
}

namespace {

bool finite(cplx z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

}  // namespace

RiccatiSolution riccati_solve(cplx u, double tau, const HestonParams& p) {
  if (!(tau >= 0.0)) throw DomainError("riccati_solve: tau must be >= 0");
  // a2 = 2 * R_C(u, 0). When it vanishes psi stays at its fixed point 0.
  const cplx a2 = u * u - u;
  if (a2 == cplx(0.0, 0.0) || tau == 0.0) {
    return {(p.r - p.q) * u * tau, cplx(0.0, 0.0)};
  }
  if (u.imag() == 0.0 && tau >= moment_explosion_time(u.real(), p))
    throw NumericDomainError("riccati_solve: exponential moment explodes before tau", u, tau);
  const double s2 = p.sigma * p.sigma;
  const cplx beta = p.k - p.sigma * p.rho * u;
  const cplx d = std::sqrt(beta * beta - s2 * a2);  // principal branch, Re(d) >= 0
  const cplx bpd = beta + d;
  // beta - d = s2 * a2 / (beta + d) keeps the small-sigma limit free of cancellation.
  const cplx g = s2 * a2 / (bpd * bpd);
  const cplx one_minus_e = -numeric::expm1(-d * tau);
  const cplx e = 1.0 - one_minus_e;
  const cplx one_minus_g = 1.0 - g;

  const cplx psi = a2 / bpd * one_minus_e / (1.0 - g * e);

  // log((1 - g e) / (1 - g)) = log1p(z), z = g (1 - e) / (1 - g); z / s2 is
  // formed without dividing by sigma.
  const cplx z_over_s2 = a2 / (bpd * bpd) * one_minus_e / one_minus_g;
  const cplx z = s2 * z_over_s2;
  const cplx phi = (p.r - p.q) * u * tau +
                   p.k * p.theta * (a2 * tau / bpd - 2.0 * numeric::log1p_over_z(z) * z_over_s2);

  if (!finite(phi) || !finite(psi)) throw NumericDomainError("riccati_solve: non-finite result", u, tau);
  return {phi, psi};
}

cplx bucket_cumulant(cplx u, const JumpBucket& b) {
  const double half_var = 0.5 * b.delta * b.delta;
  return numeric::expm1(u * b.nu + u * u * half_var) - u * std::expm1(b.nu + half_var);
}

cplx jump_cumulant(cplx u, double tau, const JumpSpec& j) {
  if (!(tau >= 0.0)) throw DomainError("jump_cumulant: tau must be >= 0");
  if (j.lambda == 0.0 || tau == 0.0) return {0.0, 0.0};
  cplx acc{0.0, 0.0};
  for (std::size_t b = 0; b < JumpSpec::kBuckets; ++b) {
    const double lo = j.bucket_edges[b];
    if (tau <= lo) break;
    const double hi = (b + 1 == JumpSpec::kBuckets) ? tau : std::min(tau, j.bucket_edges[b + 1]);
    acc += (hi - lo) * bucket_cumulant(u, j.buckets[b]);
  }
  const cplx out = j.lambda * acc;
  if (!finite(out)) throw NumericDomainError("jump_cumulant: non-finite result", u, tau);
  return out;
}

cplx jump_cumulant_rate(cplx u, double t, const JumpSpec& j) {
  if (j.lambda == 0.0) return {0.0, 0.0};
  return j.lambda * bucket_cumulant(u, j.buckets[j.bucket_index(t)]);
}

cplx log_mgf(cplx u, double tau, double v, const HestonParams& p, const JumpSpec& j) {
  const RiccatiSolution rs = riccati_solve(u, tau, p);
  const cplx out = rs.phi + rs.psi * v + jump_cumulant(u, tau, j);
  if (!finite(out)) throw NumericDomainError("log_mgf: non-finite result", u, tau);
  return out;
}

cplx char_fn(cplx u, double tau, const MarketState& state, const HestonParams& p, const JumpSpec& j) {
  const cplx z = cplx(0.0, 1.0) * u;
  const cplx out = std::exp(z * state.x + log_mgf(z, tau, state.v, p, j));
  if (!finite(out)) throw NumericDomainError("char_fn: non-finite result", u, tau);
  return out;
}

cplx forward_characteristic(cplx u, double x_ttm, double t_cal, double v, const HestonParams& p,
                            const JumpSpec& j) {
  if (!(x_ttm >= 0.0)) throw DomainError("forward_characteristic: x_ttm must be >= 0");
  const cplx psi = riccati_solve(u, x_ttm, p).psi;
  const cplx out = functional_F(u, psi, p) + jump_cumulant_rate(u, t_cal + x_ttm, j) + functional_R(u, psi, p) * v;
  if (!finite(out)) throw NumericDomainError("forward_characteristic: non-finite result", u, x_ttm);
  return out;
}

double moment_explosion_time(double u, const HestonParams& p) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  // psi' = a + b psi + c psi^2, psi(0) = 0
  const double a = 0.5 * u * (u - 1.0);
  if (a <= 0.0) return inf;
  const double b = p.sigma * p.rho * u - p.k;
  const double c = 0.5 * p.sigma * p.sigma;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) {
    const double gamma = std::sqrt(-disc);
    return 2.0 / gamma * (0.5 * std::numbers::pi - std::atan(b / gamma));
  }
  if (b < 0.0) return inf;  // both roots positive, psi converges to the smaller one
  const double d = std::sqrt(disc);
  if (d == 0.0) return 2.0 / b;
  return std::log((b + d) / (b - d)) / d;
}

}  // namespace crc
