#pragma once

#include <stdexcept>
#include <string>

namespace netgrowth {

/// Bad caller input: malformed parameters, files, shapes or options.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown: non-PD covariance, overflow in the exponential, ...
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace netgrowth
