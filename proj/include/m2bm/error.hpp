// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace m2bm {

// Invalid input, configuration or precondition violation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values, divergence or an ill-posed numerical problem.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace m2bm
