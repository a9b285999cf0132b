#pragma once

#include <stdexcept>
#include <string>

namespace itrnma {

/// Broad failure category. The CLI maps each one onto a distinct exit code.
enum class ErrorKind { config, data, numerical, identifiability, profile };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Unknown covariate, malformed term, inconsistent roles.
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Input data violates a precondition (bad CSV cell, empty arm, ...).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class DegenerateArmError : public DataError {
 public:
  explicit DegenerateArmError(const std::string& what) : DataError(what) {}
};

/// Design or information matrix is rank deficient.
class SingularDesignError : public Error {
 public:
  explicit SingularDesignError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class IdentifiabilityError : public Error {
 public:
  explicit IdentifiabilityError(const std::string& what)
      : Error(ErrorKind::identifiability, what) {}
};

class ProfileError : public Error {
 public:
  explicit ProfileError(const std::string& what) : Error(ErrorKind::profile, what) {}
};

}  // namespace itrnma
