#pragma once

#include <stdexcept>
#include <string>

namespace rgbt {

/// Invalid model, tracker, or run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure to read a dataset, image, checkpoint, or result file.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fitting could not proceed (empty sample set, rank deficiency).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rgbt
