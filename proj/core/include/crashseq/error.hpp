#pragma once

#include <stdexcept>
#include <string>

namespace crashseq {

// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input: manifests, AVFX and checkpoint files,
// configs, images.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Violated precondition on an argument (shape, range, length).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A non-finite value appeared where the math guarantees a finite one.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// HTTP transport failure or timeout while talking to a VLM endpoint.
class TransportError : public Error {
 public:
  using Error::Error;
};

// A VLM answer that is neither "yes" nor "no".
class ResponseParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace crashseq
