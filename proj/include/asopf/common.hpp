#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace asopf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/* Internal unit system.
 *
 * Power lives in per-unit on a 100 MVA base; prices in $/MWh.  Quadratic
 * cost coefficients are held against per-unit power (a file-side value in
 * $/MW^2h becomes c2 * base when loaded), so marginal cost at dispatch p is
 * 2*c2*p + c1 in $/MWh with p in p.u.  Files carry MW and MW-based costs;
 * conversion happens only when reading or writing them.
 */
constexpr double kBaseMva = 100.0;

// Tie-break regularizer applied to the p^2 term of generators whose
// quadratic coefficient is exactly zero, keeping the QP strictly convex.
constexpr double kTieBreakEps = 1e-8;

// Bad inputs: shapes, ids, ranges, unreadable or malformed files.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A computation ran but did not produce a usable result (solver blow-up,
// training divergence, too many failed sample draws).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// A pipeline stage failed after its inputs validated.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage_name, const std::string& msg)
      : std::runtime_error(stage_name + ": " + msg), stage(std::move(stage_name)) {}
  std::string stage;
};

inline std::int64_t now_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Wall-clock spans are reported with a 1 microsecond floor so that a
// sub-microsecond measurement never serializes as zero.
inline std::int64_t elapsed_us(std::int64_t start) {
  std::int64_t d = now_us() - start;
  return d > 0 ? d : 1;
}

}  // namespace asopf
