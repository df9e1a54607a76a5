#pragma once

#include <stdexcept>
#include <string>

namespace dva {

// Error categories map onto CLI exit codes: usage=1, data=2, invariant=3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvariantError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dva
