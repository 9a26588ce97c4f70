#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aptest {

// Row-major so that one device (or one training sample) is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// A test module is one (test circuit, stimulus) pair. Indices are zero-based
// internally; file names and reports use the one-based "m-n" form.
struct ModuleId {
  int circuit = 0;
  int stimulus = 0;

  friend bool operator==(const ModuleId&, const ModuleId&) = default;
  friend auto operator<=>(const ModuleId&, const ModuleId&) = default;

  // Row-major flat index over an M x N module grid.
  std::size_t flat(int num_stimuli) const {
    return static_cast<std::size_t>(circuit) * static_cast<std::size_t>(num_stimuli) +
           static_cast<std::size_t>(stimulus);
  }
  static ModuleId from_flat(std::size_t index, int num_stimuli) {
    return {static_cast<int>(index / static_cast<std::size_t>(num_stimuli)),
            static_cast<int>(index % static_cast<std::size_t>(num_stimuli))};
  }
  std::string label() const {
    return std::to_string(circuit + 1) + "-" + std::to_string(stimulus + 1);
  }
  std::string file_tag() const {
    return std::to_string(circuit + 1) + "_" + std::to_string(stimulus + 1);
  }
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidConfigError : public Error {
 public:
  using Error::Error;
};

class SimulationError : public Error {
 public:
  using Error::Error;
};

class InvalidDatasetError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class FitError : public Error {
 public:
  using Error::Error;
};

}  // namespace aptest
