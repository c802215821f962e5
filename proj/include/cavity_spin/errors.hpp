#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cavity_spin {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (e.g. negative density).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A certified invariant failed. `invariant` names it ("module.name").
class InvariantViolation : public Error {
 public:
  InvariantViolation(std::string invariant, const std::string& what)
      : Error(invariant + ": " + what), invariant_(std::move(invariant)) {}
  const std::string& invariant() const noexcept { return invariant_; }

 private:
  std::string invariant_;
};

/// Non-finite field value or vacuum; carries the first offending cell.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::array<int, 3> cell)
      : Error(what + " at cell (" + std::to_string(cell[0]) + ", " +
              std::to_string(cell[1]) + ", " + std::to_string(cell[2]) + ")"),
        cell_(cell) {}
  std::array<int, 3> cell() const noexcept { return cell_; }

 private:
  std::array<int, 3> cell_;
};

class PositivityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Steady profile would need a non-positive density somewhere.
class InfeasibleProfile : public Error {
 public:
  InfeasibleProfile(const std::string& what, std::array<int, 3> cell, double value)
      : Error(what), cell_(cell), value_(value) {}
  std::array<int, 3> cell() const noexcept { return cell_; }
  double value() const noexcept { return value_; }

 private:
  std::array<int, 3> cell_;
  double value_;
};

/// Iteration limit reached; carries the per-iteration change history.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> history)
      : Error(what), history_(std::move(history)) {}
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

/// Malformed or mismatched file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cavity_spin
