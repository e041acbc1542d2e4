#pragma once

#include <stdexcept>
#include <string>

namespace igmrf {

/// Malformed or inconsistent user input (config, observation files, CLI).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mesh file could not be parsed or violates a mesh invariant.
class MeshError : public std::runtime_error {
 public:
  enum class Kind { parse, validation, non_conformal, degenerate };

  MeshError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Factorization failure, parameters outside their admissible region, or a
/// broken numerical invariant.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure: unreadable input, unwritable output.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace igmrf
