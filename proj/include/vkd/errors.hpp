#pragma once

#include <stdexcept>
#include <string>

namespace vkd {

// Shape or dimension disagreement between operands.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid argument value or numeric precondition violation.
class ValueError : public std::runtime_error {
 public:
  explicit ValueError(const std::string& what) : std::runtime_error(what) {}
};

// Bad key, bad value, or malformed entry in a config source.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// File could not be read, written, or parsed.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Training hit a non-finite loss; carries the offending batch index.
class TrainAbort : public std::runtime_error {
 public:
  TrainAbort(const std::string& what, long long batch_index)
      : std::runtime_error(what), batch_index(batch_index) {}
  long long batch_index;
};

}  // namespace vkd
