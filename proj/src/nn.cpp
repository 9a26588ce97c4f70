#include "aptest/nn.hpp"

#include "aptest/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace aptest::nn {

using nlohmann::json;

std::size_t MlpModel::num_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

void MlpModel::validate() const {
  if (dims.size() < 2) throw DimensionError("model needs at least input and output dims");
  if (weights.size() != dims.size() - 1 || biases.size() != weights.size()) {
    throw DimensionError("layer count does not match dims");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != dims[l] || weights[l].cols() != dims[l + 1] ||
        biases[l].size() != dims[l + 1]) {
      throw DimensionError("layer " + std::to_string(l) + " shape does not match dims");
    }
    if (!weights[l].allFinite() || !biases[l].allFinite()) {
      throw DimensionError("layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
}

bool operator==(const MlpModel& a, const MlpModel& b) {
  if (a.dims != b.dims || a.init_seed != b.init_seed || a.weights.size() != b.weights.size()) {
    return false;
  }
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
  }
  return true;
}

MlpModel init_model(const std::vector<int>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw DimensionError("init_model needs at least 2 layer dims");
  for (int d : dims) {
    if (d <= 0) throw DimensionError("layer dims must be positive");
  }
  MlpModel m;
  m.dims = dims;
  m.init_seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(dims[l], dims[l + 1]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    m.weights.push_back(std::move(w));
    m.biases.push_back(RowVector::Zero(dims[l + 1]));
  }
  return m;
}

namespace {

void check_input(const MlpModel& model, const Matrix& x) {
  if (x.cols() != model.input_dim()) {
    throw DimensionError("input width " + std::to_string(x.cols()) + " != model input dim " +
                         std::to_string(model.input_dim()));
  }
}

void check_batch(const MlpModel& model, const Matrix& x, const Matrix& y) {
  check_input(model, x);
  if (y.cols() != model.output_dim()) {
    throw DimensionError("label width " + std::to_string(y.cols()) + " != model output dim " +
                         std::to_string(model.output_dim()));
  }
  if (x.rows() != y.rows()) throw DimensionError("input and label batch sizes differ");
  if (x.rows() == 0) throw DimensionError("empty batch");
}

// Pre-activations of every layer for a batch; activations[l] feeds layer l.
struct Trace {
  std::vector<Matrix> activations;
  std::vector<Matrix> pre;
};

Trace run_forward(const MlpModel& model, const Matrix& x) {
  Trace t;
  const std::size_t L = model.num_layers();
  t.activations.reserve(L + 1);
  t.pre.reserve(L);
  t.activations.push_back(x);
  for (std::size_t l = 0; l < L; ++l) {
    Matrix z = t.activations.back() * model.weights[l];
    z.rowwise() += model.biases[l];
    if (l + 1 < L) {
      t.activations.push_back(z.cwiseMax(0.0));
    } else {
      t.activations.push_back(z);
    }
    t.pre.push_back(std::move(z));
  }
  return t;
}

}  // namespace

Matrix predict(const MlpModel& model, const Matrix& x) {
  check_input(model, x);
  Matrix a = x;
  const std::size_t L = model.num_layers();
  for (std::size_t l = 0; l < L; ++l) {
    Matrix z = a * model.weights[l];
    z.rowwise() += model.biases[l];
    a = l + 1 < L ? Matrix(z.cwiseMax(0.0)) : std::move(z);
  }
  return a;
}

Vector forward(const MlpModel& model, std::span<const double> x) {
  if (static_cast<int>(x.size()) != model.input_dim()) {
    throw DimensionError("input length " + std::to_string(x.size()) + " != model input dim " +
                         std::to_string(model.input_dim()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw DimensionError("non-finite input");
  }
  const Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  return predict(model, row).row(0).transpose();
}

double loss_mse(const MlpModel& model, const Matrix& x, const Matrix& y) {
  check_batch(model, x, y);
  return (predict(model, x) - y).rowwise().squaredNorm().mean();
}

Gradients backward(const MlpModel& model, const Matrix& x, const Matrix& y) {
  check_batch(model, x, y);
  const Trace t = run_forward(model, x);
  const std::size_t L = model.num_layers();
  const double batch = static_cast<double>(x.rows());

  Gradients g;
  g.weights.resize(L);
  g.biases.resize(L);
  Matrix delta = t.activations.back() - y;
  g.loss = delta.rowwise().squaredNorm().mean();
  delta *= 2.0 / batch;

  for (std::size_t l = L; l-- > 0;) {
    if (l + 1 < L) {
      delta = delta.cwiseProduct((t.pre[l].array() > 0.0).cast<double>().matrix());
    }
    g.weights[l].noalias() = t.activations[l].transpose() * delta;
    g.biases[l] = delta.colwise().sum();
    if (l > 0) delta = delta * model.weights[l].transpose();
  }
  return g;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidConfigError("learning_rate must be finite and >= 0");
  }
  if (batch_size < 1) throw InvalidConfigError("batch_size must be >= 1");
  if (epochs < 1) throw InvalidConfigError("epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidConfigError("adam betas must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw InvalidConfigError("adam epsilon must be > 0");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw InvalidConfigError("validation_fraction must be in (0, 1)");
  }
}

TrainResult train(MlpModel model, const Matrix& x, const Matrix& y, const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  if (x.rows() < 1) throw DimensionError("train needs at least one sample");
  check_batch(model, x, y);

  const std::size_t L = model.num_layers();
  std::vector<Matrix> mw(L), vw(L);
  std::vector<RowVector> mb(L), vb(L);
  for (std::size_t l = 0; l < L; ++l) {
    mw[l] = Matrix::Zero(model.weights[l].rows(), model.weights[l].cols());
    vw[l] = mw[l];
    mb[l] = RowVector::Zero(model.biases[l].size());
    vb[l] = mb[l];
  }

  TrainResult result;
  result.initial_loss = loss_mse(model, x, y);
  result.loss_history.reserve(static_cast<std::size_t>(cfg.epochs));

  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.shuffle_seed);

  double beta1_t = 1.0;
  double beta2_t = 1.0;
  Matrix bx, by;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n - start);
      bx.resize(static_cast<Eigen::Index>(count), x.cols());
      by.resize(static_cast<Eigen::Index>(count), y.cols());
      for (std::size_t i = 0; i < count; ++i) {
        bx.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(order[start + i]));
        by.row(static_cast<Eigen::Index>(i)) = y.row(static_cast<Eigen::Index>(order[start + i]));
      }
      const Gradients g = backward(model, bx, by);
      if (!std::isfinite(g.loss)) {
        throw TrainingError("training diverged (non-finite loss) in epoch " + std::to_string(epoch + 1),
                            epoch + 1);
      }
      loss_sum += g.loss * static_cast<double>(count);

      beta1_t *= cfg.beta1;
      beta2_t *= cfg.beta2;
      const double step = cfg.learning_rate * std::sqrt(1.0 - beta2_t) / (1.0 - beta1_t);
      // Same update as lr * m_hat / (sqrt(v_hat) + eps), with the corrections folded in.
      const double eps = cfg.epsilon * std::sqrt(1.0 - beta2_t);
      for (std::size_t l = 0; l < L; ++l) {
        mw[l] = cfg.beta1 * mw[l] + (1.0 - cfg.beta1) * g.weights[l];
        vw[l] = cfg.beta2 * vw[l] + (1.0 - cfg.beta2) * g.weights[l].cwiseAbs2();
        model.weights[l].array() -= step * mw[l].array() / (vw[l].array().sqrt() + eps);
        mb[l] = cfg.beta1 * mb[l] + (1.0 - cfg.beta1) * g.biases[l];
        vb[l] = cfg.beta2 * vb[l] + (1.0 - cfg.beta2) * g.biases[l].cwiseAbs2();
        model.biases[l].array() -= step * mb[l].array() / (vb[l].array().sqrt() + eps);
      }
    }
    const double epoch_loss = loss_sum / static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw TrainingError("training diverged (non-finite loss) in epoch " + std::to_string(epoch + 1),
                          epoch + 1);
    }
    result.loss_history.push_back(epoch_loss);
  }
  result.model = std::move(model);
  return result;
}

// -- serialization ---------------------------------------------------------

namespace {
constexpr const char* kFormat = "aptest-mlp/1";
}

std::string serialize(const MlpModel& model) {
  model.validate();
  std::string blob;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    io::append_f64_le(blob, std::span<const double>(model.weights[l].data(),
                                                    static_cast<std::size_t>(model.weights[l].size())));
    io::append_f64_le(blob, std::span<const double>(model.biases[l].data(),
                                                    static_cast<std::size_t>(model.biases[l].size())));
  }
  const json header = {
      {"format", kFormat},
      {"dims", model.dims},
      {"init_seed", model.init_seed},
      {"activation", "relu"},
      {"output_activation", "identity"},
      {"params", model.num_params()},
      {"layout", "per layer: weights (fan_in x fan_out, row-major) then biases"},
      {"crc32", io::crc32_hex(io::crc32(blob))},
  };
  return header.dump() + "\n" + blob;
}

MlpModel deserialize(std::string_view bytes, const std::string& origin) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw IoError(origin + ": missing model header");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw IoError(origin + ": corrupt model header: " + e.what());
  }
  const std::string_view blob = bytes.substr(nl + 1);
  MlpModel m;
  try {
    if (header.at("format") != kFormat) throw IoError(origin + ": unknown model format");
    if (header.at("activation") != "relu") throw IoError(origin + ": unsupported activation");
    if (io::crc32_hex(io::crc32(blob)) != header.at("crc32").get<std::string>()) {
      throw IoError(origin + ": checksum mismatch");
    }
    m.dims = header.at("dims").get<std::vector<int>>();
    m.init_seed = header.at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw IoError(origin + ": malformed model header: " + e.what());
  }
  if (m.dims.size() < 2) throw IoError(origin + ": model needs at least 2 dims");
  const std::vector<double> values = io::decode_f64_le(blob);
  std::size_t pos = 0;
  for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
    const auto rows = m.dims[l];
    const auto cols = m.dims[l + 1];
    if (rows <= 0 || cols <= 0) throw IoError(origin + ": non-positive layer dim");
    const auto need = static_cast<std::size_t>(rows + 1) * static_cast<std::size_t>(cols);
    if (pos + need > values.size()) throw IoError(origin + ": parameter blob too short");
    m.weights.push_back(Eigen::Map<const Matrix>(values.data() + pos, rows, cols));
    pos += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    m.biases.push_back(Eigen::Map<const RowVector>(values.data() + pos, cols));
    pos += static_cast<std::size_t>(cols);
  }
  if (pos != values.size()) throw IoError(origin + ": parameter blob has trailing data");
  return m;
}

void save_model(const std::filesystem::path& path, const MlpModel& model) {
  io::write_text(path, serialize(model));
}

MlpModel load_model(const std::filesystem::path& path) {
  return deserialize(io::read_text(path), path.string());
}

}  // namespace aptest::nn
