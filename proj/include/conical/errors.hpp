#pragma once

#include <stdexcept>

namespace conical {

// a caller contract was violated (inconsistent normalization, wrong topology
// for the requested operation, data outside the admissible range)
struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// the flow could not take an acceptable step above its minimum step size
struct BlowUpError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// malformed or contradictory configuration input
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

} // namespace conical
