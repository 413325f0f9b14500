#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace grw {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or Hilbert-space dimension mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Input violates a mathematical precondition (non-Hermitian, not PSD, ...).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// An exact construction was asked to exceed its configured cost budget.
class BudgetError : public Error {
public:
    using Error::Error;
};

inline constexpr double kHermTol = 1e-12;
inline constexpr double kPsdEigClamp = 1e-10;

} // namespace grw
