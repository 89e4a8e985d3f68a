#pragma once

#include <stdexcept>
#include <string>

namespace hivaug {

// Input did not satisfy a documented precondition (bad file, bad config,
// inconsistent arguments). Maps to CLI exit status 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical stage could not produce a usable result: unconverged chains,
// all importance weights zero, non-PSD covariance. Maps to exit status 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hivaug
