#pragma once

#include <stdexcept>
#include <string>

namespace ugest {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class InputError : public Error { public: using Error::Error; };
class ContractError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };
class DetectionMiss : public Error { public: using Error::Error; };
class TrainingError : public Error { public: using Error::Error; };

}  // namespace ugest
