#pragma once

#include <stdexcept>
#include <string>

namespace displab {

// State-space too large for exact enumeration, or a numerical routine could
// not reach its requested tolerance (best value attached in the message).
class ResourceError : public std::runtime_error {
  public:
    explicit ResourceError(const std::string& what) : std::runtime_error(what) {}
};

// step() called on a state with no unhappy particles.
class AlreadyDispersedError : public std::logic_error {
  public:
    explicit AlreadyDispersedError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace displab
