#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qpst {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

using Warnings = std::vector<std::string>;

inline constexpr cplx kI{0.0, 1.0};

/// Oscillator label, 1-based as in the physics convention (sender = 1,
/// receiver = N). `index()` gives the 0-based storage position.
struct Mode {
  std::size_t number = 1;

  constexpr explicit Mode(std::size_t one_based) : number(one_based) {}
  [[nodiscard]] constexpr std::size_t index() const { return number - 1; }
  friend constexpr bool operator==(Mode, Mode) = default;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by decompose() when the eigenvector basis cannot be trusted.
class NearDefectiveError : public Error {
 public:
  NearDefectiveError(const std::string& what, double residual, double condition)
      : Error(what), residual(residual), condition(condition) {}
  double residual;
  double condition;
};

/// Raised when a probability that must be real carries an imaginary residue.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// Neumaier-compensated accumulator: the result does not depend on the
/// order in which terms of very different magnitude arrive.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  [[nodiscard]] double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

class ComplexCompensatedSum {
 public:
  void add(cplx x) {
    re_.add(x.real());
    im_.add(x.imag());
  }
  [[nodiscard]] cplx value() const { return {re_.value(), im_.value()}; }

 private:
  CompensatedSum re_;
  CompensatedSum im_;
};

}  // namespace qpst
