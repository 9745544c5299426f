#pragma once

#include <stdexcept>
#include <string>

namespace dsr {

// Base for all library errors. Subclasses carry the failure category in the
// type so call sites can catch precisely.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& msg) : Error("ShapeError: " + msg) {}
};

class InvalidScene : public Error {
public:
  explicit InvalidScene(const std::string& msg) : Error("InvalidScene: " + msg) {}
};

class InvalidScale : public Error {
public:
  explicit InvalidScale(const std::string& msg) : Error("InvalidScale: " + msg) {}
};

class MissingManifest : public Error {
public:
  explicit MissingManifest(const std::string& msg) : Error("MissingManifest: " + msg) {}
};

class CorruptDataset : public Error {
public:
  explicit CorruptDataset(const std::string& msg) : Error("CorruptDataset: " + msg) {}
};

class CorruptMatch : public Error {
public:
  explicit CorruptMatch(const std::string& msg) : Error("CorruptMatch: " + msg) {}
};

class CorruptCheckpoint : public Error {
public:
  explicit CorruptCheckpoint(const std::string& msg) : Error("CorruptCheckpoint: " + msg) {}
};

class NonFiniteLoss : public Error {
public:
  explicit NonFiniteLoss(const std::string& msg) : Error("NonFiniteLoss: " + msg) {}
};

class RangeError : public Error {
public:
  explicit RangeError(const std::string& msg) : Error("RangeError: " + msg) {}
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error("ConfigError: " + msg) {}
};

class UnsupportedLayer : public Error {
public:
  explicit UnsupportedLayer(const std::string& msg) : Error("UnsupportedLayer: " + msg) {}
};

}  // namespace dsr
