#pragma once

#include <stdexcept>
#include <string>

namespace fuselage {

// Base of every error raised by the library. The CLI maps ParameterError and
// ConfigError to usage failures and everything else to data failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument value (sigma <= 0, image smaller than a patch, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Rectangle or coordinate outside its host raster.
class BoundsError : public Error {
 public:
  using Error::Error;
};

// Dataset content unusable for the requested operation (e.g. a missing class).
class DatasetError : public Error {
 public:
  using Error::Error;
};

// Non-finite or otherwise corrupt numeric data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Missing or unreadable file, malformed text record.
class IoError : public Error {
 public:
  using Error::Error;
};

// Binary or structured file whose layout does not match its declared format.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Key absent from a lookup table.
class LookupError : public Error {
 public:
  using Error::Error;
};

// Inconsistent pipeline configuration (e.g. external features without a table).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fuselage
