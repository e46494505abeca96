#pragma once

#include <stdexcept>
#include <string>

namespace nmaout {

// Malformed input, violated preconditions, disconnected networks.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite starting points, stuck blocks, failed convergence checks.
class SamplerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace nmaout
