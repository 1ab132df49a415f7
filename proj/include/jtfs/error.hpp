// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace jtfs {

// Base of every error raised by the library. The CLI maps the subclasses
// onto its exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class SizeError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

// A filter is too narrow to be sampled on the requested grid.
class ResolutionError : public ConfigError {
public:
  using ConfigError::ConfigError;
};

class NumericError : public Error {
public:
  using Error::Error;
};

// Two coefficient sets disagree on their paths or shapes.
class IncompatibleError : public Error {
public:
  using Error::Error;
};

// Backward pass invoked without the intermediates of a traced forward pass.
class StateError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class FormatError : public IoError {
public:
  using IoError::IoError;
};

}  // namespace jtfs
