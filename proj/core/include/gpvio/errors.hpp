#pragma once

#include <stdexcept>
#include <string>

namespace gpvio {

/// Base class for recoverable estimation errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Knot or sample stamps are not strictly increasing.
class OrderingError : public Error {
 public:
  using Error::Error;
};

/// Query time outside the interval a model was built for.
class ExtrapolationError : public Error {
 public:
  using Error::Error;
};

/// Malformed IMU sample stream.
class StreamError : public Error {
 public:
  using Error::Error;
};

/// A measurement does not line up with the states it is evaluated against.
class AssociationError : public Error {
 public:
  using Error::Error;
};

/// Latent-state fixed point did not converge.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Rotation excursion reached the logarithm's singularity.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Landmark at or behind the minimum camera depth.
class BehindCameraError : public Error {
 public:
  using Error::Error;
};

/// Too few associated pose pairs for alignment.
class InsufficientOverlapError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unreadable input file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace gpvio
