#pragma once

#include <stdexcept>
#include <string>

namespace mocl {

// Base class for every error this library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimensions do not line up for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An operation produced a NaN or Inf value.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Input is mathematically degenerate (e.g. zero vector to cosine).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Unknown task id / missing entry.
class LookupError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or dimension mismatch between components.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid module composition (empty list, mixed kinds, weight mismatch).
class CompositionError : public Error {
 public:
  using Error::Error;
};

// A baseline was asked to do something its method does not support.
class UnsupportedKindError : public Error {
 public:
  using Error::Error;
};

// Continual-learning protocol violation (out-of-order task, data leakage).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss; carries the global step index.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step(step) {}
  long step = -1;
};

// Malformed input file; carries the offending line number when known.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what, long line = -1) : Error(what), line(line) {}
  long line = -1;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mocl
