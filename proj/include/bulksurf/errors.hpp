#pragma once

#include <stdexcept>
#include <string>

namespace bulksurf {

/// Bad input: violated precondition, malformed configuration, failed
/// hypothesis check. The CLI maps this to exit status 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation that should have worked did not (singular factorization,
/// non-finite state, line-search breakdown). The CLI maps this to exit 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace bulksurf
