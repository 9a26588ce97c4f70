#pragma once

// Fully-connected ReLU regression network trained on mean squared error with
// Adam. Used for the per-module predictors and for the combiner.

#include "aptest/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace aptest::nn {

struct MlpModel {
  std::vector<int> dims;         // input, hidden..., output
  std::vector<Matrix> weights;   // layer l: dims[l] x dims[l+1]
  std::vector<RowVector> biases; // layer l: 1 x dims[l+1]
  std::uint64_t init_seed = 0;

  std::size_t num_layers() const { return weights.size(); }
  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  std::size_t num_params() const;
  // Throws DimensionError if shapes disagree with dims or a parameter is non-finite.
  void validate() const;

  friend bool operator==(const MlpModel& a, const MlpModel& b);
};

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
MlpModel init_model(const std::vector<int>& dims, std::uint64_t seed);

Vector forward(const MlpModel& model, std::span<const double> x);
// Row-wise forward pass over a batch.
Matrix predict(const MlpModel& model, const Matrix& x);

// Mean over the batch of the squared Euclidean prediction error.
double loss_mse(const MlpModel& model, const Matrix& x, const Matrix& y);

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<RowVector> biases;
  double loss = 0.0;
};

// Exact gradient of loss_mse; the ReLU derivative at 0 is taken as 0.
Gradients backward(const MlpModel& model, const Matrix& x, const Matrix& y);

struct TrainConfig {
  double learning_rate = 5e-4;
  int batch_size = 32;
  int epochs = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t shuffle_seed = 0;
  // Share of the training rows held back for scoring (used by the pipeline).
  double validation_fraction = 0.15;

  void validate() const;
};

struct TrainResult {
  MlpModel model;
  double initial_loss = 0.0;
  // Sample-weighted mean of the mini-batch losses of each epoch.
  std::vector<double> loss_history;
};

TrainResult train(MlpModel model, const Matrix& x, const Matrix& y, const TrainConfig& cfg);

// One-line JSON header followed by the little-endian binary64 parameters.
std::string serialize(const MlpModel& model);
MlpModel deserialize(std::string_view bytes, const std::string& origin = "<memory>");
void save_model(const std::filesystem::path& path, const MlpModel& model);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace aptest::nn
