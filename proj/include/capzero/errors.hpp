// Copyright 2026 The capzero Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace capzero {

// Base class for every error raised by the library. Subclasses separate
// caller mistakes (contract), bad numbers (numeric) and bad files (io/parse)
// so the command line front end can map them to distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition on shapes, sizes or arguments was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// An index (target id, token id, class id) fell outside its valid range.
class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

// NaN/Inf appeared where finite values are required, or a statistic is
// undefined for the given input (e.g. zero variance).
class NumericError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Token not present in a closed vocabulary.
class OovError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. Messages carry the line number when one exists.
class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace capzero
