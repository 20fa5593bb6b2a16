// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dehaze {

/// Tensor or image shapes that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An argument outside the domain an operation is defined on.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// File system and codec failures. The message always carries the path.
class IoError : public std::runtime_error {
 public:
  IoError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Bad configuration (config files, empty data directories, bad flags).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when training produces a non-finite loss.
class TrainingFault : public std::runtime_error {
 public:
  TrainingFault(long iteration, const std::string& loss_name)
      : std::runtime_error("non-finite loss '" + loss_name + "' at iteration " +
                           std::to_string(iteration)),
        iteration_(iteration),
        loss_name_(loss_name) {}
  long iteration() const { return iteration_; }
  const std::string& loss_name() const { return loss_name_; }

 private:
  long iteration_;
  std::string loss_name_;
};

}  // namespace dehaze
