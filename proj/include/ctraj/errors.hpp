#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ctraj {

/// Malformed input: dimension or descriptor mismatch, bad knots, non-positive dt.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A query time fell outside the valid (half-open) domain of a trajectory.
class OutOfDomain : public std::out_of_range {
 public:
  OutOfDomain(const std::string& what, double t, double lo, double hi)
      : std::out_of_range(what + ": t=" + std::to_string(t) + " outside [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + ")"),
        t_(t),
        lo_(lo),
        hi_(hi) {}

  double time() const { return t_; }
  double lower() const { return lo_; }
  double upper() const { return hi_; }

 private:
  double t_, lo_, hi_;
};

/// The requested capability is not provided by this backend (e.g. acceleration from a WNOA prior).
class Unsupported : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Range-bearing geometry with the landmark at the sensor position.
class DegenerateGeometry : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid scenario or estimator configuration; carries the offending field name.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// The normal equations are singular or indefinite.
class RankDeficient : public std::runtime_error {
 public:
  RankDeficient(const std::string& what, std::vector<std::size_t> blocks)
      : std::runtime_error(what), blocks_(std::move(blocks)) {}

  /// Variable blocks with no information (empty when the failure is purely numerical).
  const std::vector<std::size_t>& unconstrained_blocks() const { return blocks_; }

 private:
  std::vector<std::size_t> blocks_;
};

}  // namespace ctraj
