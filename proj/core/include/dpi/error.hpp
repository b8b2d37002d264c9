#pragma once

#include <stdexcept>
#include <string>

namespace dpi {

/// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind {
  kParameter = 1,  // usage / contract violation
  kData = 2,       // unreadable or malformed input
  kNumerical = 3,  // non-finite values, divergence
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& module, const std::string& what)
      : std::runtime_error(module + ": " + what), kind_(kind), module_(module) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
  std::string module_;
};

class ParameterError : public Error {
 public:
  ParameterError(const std::string& module, const std::string& what)
      : Error(ErrorKind::kParameter, module, what) {}
};

class DataError : public Error {
 public:
  DataError(const std::string& module, const std::string& what)
      : Error(ErrorKind::kData, module, what) {}
};

class NumericalError : public Error {
 public:
  NumericalError(const std::string& module, const std::string& what)
      : Error(ErrorKind::kNumerical, module, what) {}
};

}  // namespace dpi
