#include "aptest/nn.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace aptest;
using namespace aptest::nn;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double max_relative_gradient_error(MlpModel m, const Matrix& x, const Matrix& y) {
  const Gradients g = backward(m, x, y);
  const double h = 1e-5;
  double worst = 0.0;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = loss_mse(m, x, y);
    param = saved - h;
    const double down = loss_mse(m, x, y);
    param = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic) / scale);
  };
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    for (Eigen::Index i = 0; i < m.weights[l].size(); ++i) {
      check(m.weights[l].data()[i], g.weights[l].data()[i]);
    }
    for (Eigen::Index i = 0; i < m.biases[l].size(); ++i) check(m.biases[l][i], g.biases[l][i]);
  }
  return worst;
}

}  // namespace

TEST_CASE("zero weights output the final bias") {
  MlpModel m = init_model({3, 4, 2}, 1);
  for (auto& w : m.weights) w.setZero();
  m.biases.back() << 0.25, -1.5;
  for (const std::vector<double>& x : {std::vector<double>{1, 2, 3}, {-7, 0, 1e3}}) {
    const Vector out = forward(m, x);
    CHECK(out[0] == 0.25);
    CHECK(out[1] == -1.5);
  }
}

TEST_CASE("single identity layer passes the input through") {
  MlpModel m = init_model({3, 3}, 1);
  m.weights[0] = Matrix::Identity(3, 3);
  const std::vector<double> x = {0.5, -2.0, 7.0};
  const Vector out = forward(m, x);
  for (int i = 0; i < 3; ++i) CHECK(out[i] == x[static_cast<std::size_t>(i)]);
}

TEST_CASE("two-layer network matches hand evaluation") {
  MlpModel m = init_model({2, 2, 1}, 1);
  // Stored fan_in x fan_out, so column j holds the weights into unit j.
  m.weights[0] << 1.0, 2.0,
                  3.0, -1.0;
  m.biases[0] << 0.5, -4.0;
  m.weights[1] << 2.0, 5.0;
  m.biases[1] << 0.1;
  // x = [1, -1]: z = [1 - 3 + 0.5, 2 + 1 - 4] = [-1.5, -1], relu -> [0, 0]; out = 0.1
  const std::vector<double> x = {1.0, -1.0};
  CHECK(forward(m, x)[0] == doctest::Approx(0.1));
  // x = [2, -1]: z = [2 - 3 + 0.5, 4 + 1 - 4] = [-0.5, 1], relu -> [0, 1]; out = 5.1
  const std::vector<double> x2 = {2.0, -1.0};
  CHECK(forward(m, x2)[0] == doctest::Approx(5.1));
}

TEST_CASE("forward rejects wrong input width") {
  const MlpModel m = init_model({3, 2}, 1);
  const std::vector<double> x = {1.0, 2.0};
  CHECK_THROWS_AS(forward(m, x), DimensionError);
}

TEST_CASE("loss is the batch mean of squared error norms") {
  MlpModel m = init_model({2, 2}, 1);
  m.weights[0] = Matrix::Identity(2, 2);
  Matrix x(1, 2), y(1, 2);
  x << 1, 3;
  y << 1, 2;
  CHECK(loss_mse(m, x, y) == doctest::Approx(1.0));
  CHECK(loss_mse(m, x, x) == 0.0);

  Matrix x2(2, 2), y2(2, 2);
  x2 << 1, 0, 0, 0;
  y2 << 0, 0, 1, std::sqrt(2.0);  // squared norms 1 and 3
  CHECK(loss_mse(m, x2, y2) == doctest::Approx(2.0));
}

TEST_CASE("gradients match central finite differences") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> width(1, 6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> dims = {width(rng)};
    const int hidden = 1 + trial % 3;
    for (int h = 0; h < hidden; ++h) dims.push_back(width(rng));
    dims.push_back(width(rng));
    MlpModel m = init_model(dims, 1000 + static_cast<std::uint64_t>(trial));
    for (auto& b : m.biases) b = random_matrix(1, b.size(), rng) * 0.1;
    const Matrix x = random_matrix(5, dims.front(), rng);
    const Matrix y = random_matrix(5, dims.back(), rng);
    CHECK(max_relative_gradient_error(m, x, y) < 1e-4);
  }
}

TEST_CASE("output bias gradient has the closed form") {
  std::mt19937_64 rng(3);
  const MlpModel m = init_model({4, 5, 3}, 9);
  const Matrix x = random_matrix(7, 4, rng);
  const Matrix y = random_matrix(7, 3, rng);
  const Gradients g = backward(m, x, y);
  const RowVector expected = (2.0 / 7.0) * (predict(m, x) - y).colwise().sum();
  CHECK((g.biases.back() - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.loss == doctest::Approx(loss_mse(m, x, y)).epsilon(1e-14));
}

TEST_CASE("gradient vanishes at a perfect fit") {
  std::mt19937_64 rng(5);
  MlpModel m = init_model({3, 4, 2}, 2);
  m.biases[0].setConstant(50.0);  // every hidden unit strictly active
  const Matrix x = random_matrix(6, 3, rng);
  const Matrix y = predict(m, x);
  const Gradients g = backward(m, x, y);
  CHECK(g.loss == 0.0);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    CHECK(g.weights[l].cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.biases[l].cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("initialization") {
  const MlpModel a = init_model({10, 20, 5}, 1);
  const MlpModel b = init_model({10, 20, 5}, 2);
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / (a.dims[l] + a.dims[l + 1]));
    CHECK(a.weights[l].cwiseAbs().maxCoeff() <= bound);
    CHECK(a.biases[l].isZero(0.0));
  }
  CHECK_FALSE(a == b);
  CHECK(a == init_model({10, 20, 5}, 1));
  CHECK(a.num_params() == 10 * 20 + 20 + 20 * 5 + 5);
}

TEST_CASE("training") {
  Matrix x(64, 1);
  for (int i = 0; i < 64; ++i) x(i, 0) = -1.0 + 2.0 * i / 63.0;
  const Matrix y = 2.0 * x;
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 200;
  cfg.learning_rate = 1e-2;
  cfg.shuffle_seed = 4;

  SUBCASE("fits a linear target") {
    const TrainResult r = train(init_model({1, 8, 1}, 21), x, y, cfg);
    REQUIRE(r.loss_history.size() == 200);
    CHECK(r.loss_history.back() < 0.01 * r.initial_loss);
    CHECK(loss_mse(r.model, x, y) < 0.01 * r.initial_loss);
  }
  SUBCASE("zero learning rate leaves the parameters unchanged") {
    cfg.learning_rate = 0.0;
    cfg.epochs = 5;
    const MlpModel init = init_model({1, 8, 1}, 21);
    CHECK(train(init, x, y, cfg).model == init);
  }
  SUBCASE("identical seeds give identical parameters") {
    cfg.epochs = 20;
    const TrainResult a = train(init_model({1, 8, 1}, 21), x, y, cfg);
    const TrainResult b = train(init_model({1, 8, 1}, 21), x, y, cfg);
    CHECK(a.model == b.model);
    CHECK(a.loss_history == b.loss_history);
    cfg.shuffle_seed = 5;
    CHECK_FALSE(train(init_model({1, 8, 1}, 21), x, y, cfg).model == a.model);
  }
  SUBCASE("divergence is reported") {
    cfg.learning_rate = 1e300;
    cfg.epochs = 50;
    Matrix big = x * 1e200;
    CHECK_THROWS_AS(train(init_model({1, 8, 1}, 21), big, y, cfg), TrainingError);
  }
  SUBCASE("invalid config") {
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train(init_model({1, 8, 1}, 21), x, y, cfg), InvalidConfigError);
  }
}

TEST_CASE("model serialization round-trips bitwise") {
  std::mt19937_64 rng(8);
  MlpModel m = init_model({4, 3, 2}, 123);
  for (auto& b : m.biases) b = random_matrix(1, b.size(), rng);
  const std::string bytes = serialize(m);
  CHECK(deserialize(bytes) == m);

  const auto path = std::filesystem::temp_directory_path() / "aptest_nn_roundtrip.model";
  save_model(path, m);
  CHECK(load_model(path) == m);
  std::filesystem::remove(path);

  std::string corrupt = bytes;
  corrupt.back() = static_cast<char>(corrupt.back() ^ 0x1);
  CHECK_THROWS_AS(deserialize(corrupt), IoError);
  CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() - 8)), IoError);
}
