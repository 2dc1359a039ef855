#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace crc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced a non-finite value (overflow for extreme u*tau).
class NumericDomainError : public Error {
 public:
  NumericDomainError(const std::string& what, std::complex<double> u, double tau)
      : Error(what + " (u=" + std::to_string(u.real()) + "+" + std::to_string(u.imag()) +
              "i, tau=" + std::to_string(tau) + ")"),
        u_(u),
        tau_(tau) {}

  std::complex<double> u() const { return u_; }
  double tau() const { return tau_; }

 private:
  std::complex<double> u_;
  double tau_;
};

/// An input lies outside the admissible domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Price outside the no-arbitrage band handed to the implied-vol solver.
class BoundError : public DomainError {
 public:
  enum class Bound { Lower, Upper };

  BoundError(Bound which, double price, double bound)
      : DomainError(std::string(which == Bound::Lower ? "price at or below lower (intrinsic) bound"
                                                      : "price at or above upper bound") +
                    ": price=" + std::to_string(price) + " bound=" + std::to_string(bound)),
        which_(which),
        price_(price),
        bound_(bound) {}

  Bound which() const { return which_; }
  double price() const { return price_; }
  double bound() const { return bound_; }

 private:
  Bound which_;
  double price_;
  double bound_;
};

/// Iterative scheme (quadrature, root finder) failed to reach tolerance.
class AccuracyError : public Error {
 public:
  using Error::Error;
};

/// Tensor / vector dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Persisted file failed version or checksum validation.
class CorruptionError : public IoError {
 public:
  using IoError::IoError;
};

/// Pricing or inversion failure at one grid point of a surface.
class SurfacePointError : public Error {
 public:
  SurfacePointError(std::size_t i, std::size_t j, const std::string& cause)
      : Error("surface point (maturity " + std::to_string(i) + ", moneyness " + std::to_string(j) + "): " + cause),
        i_(i),
        j_(j) {}
  std::size_t maturity_index() const { return i_; }
  std::size_t moneyness_index() const { return j_; }

 private:
  std::size_t i_;
  std::size_t j_;
};

/// Training produced a NaN loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch)
      : Error(what + " at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace crc
