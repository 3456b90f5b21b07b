#ifndef SMPBSDE_ERRORS_HPP
#define SMPBSDE_ERRORS_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace smpbsde {

enum class ErrorCategory {
  invalid_architecture,
  shape_mismatch,
  contract_violation,
  diverged_training,
  singular_control,
  unsupported_problem,
  grid_mismatch,
  domain,
  step_too_large,
  config,
  io,
};

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::invalid_architecture: return "invalid_architecture";
    case ErrorCategory::shape_mismatch: return "shape_mismatch";
    case ErrorCategory::contract_violation: return "contract_violation";
    case ErrorCategory::diverged_training: return "diverged_training";
    case ErrorCategory::singular_control: return "singular_control";
    case ErrorCategory::unsupported_problem: return "unsupported_problem";
    case ErrorCategory::grid_mismatch: return "grid_mismatch";
    case ErrorCategory::domain: return "domain";
    case ErrorCategory::step_too_large: return "step_too_large";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string message)
      : std::runtime_error(std::string(to_string(category)) + ": " + message),
        category_(category) {}

  ErrorCategory category() const { return category_; }

  // Step index for divergence errors, time stamp for singular-control errors.
  std::int64_t step = -1;
  double time = 0.0;

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& msg) {
  throw Error(c, msg);
}

[[noreturn]] inline void fail_at_step(ErrorCategory c, const std::string& msg,
                                      std::int64_t step) {
  Error e(c, msg + " (step " + std::to_string(step) + ")");
  e.step = step;
  throw e;
}

[[noreturn]] inline void fail_at_time(ErrorCategory c, const std::string& msg,
                                      double t) {
  Error e(c, msg + " (t = " + std::to_string(t) + ")");
  e.time = t;
  throw e;
}

inline void require(bool cond, ErrorCategory c, const std::string& msg) {
  if (!cond) fail(c, msg);
}

}  // namespace smpbsde

#endif  // SMPBSDE_ERRORS_HPP
