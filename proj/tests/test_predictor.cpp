#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "vbtta/adam.hpp"
#include "vbtta/error.hpp"
#include "vbtta/predictor.hpp"

using namespace vbtta;

namespace {

Eigen::VectorXd random_vector(Eigen::Index d, Rng& rng) {
  Eigen::VectorXd v(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    v(i) = rng.normal();
  }
  return v;
}

MlpModel random_model(std::vector<int> sizes, Head head, Rng& rng) {
  MlpModel m = make_mlp(std::move(sizes), head, rng);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    m.bias(l) = 0.1 * random_vector(m.bias(l).size(), rng);
  }
  return m;
}

// Smallest |pre-activation| over the hidden units at x.
double kink_distance(const MlpModel& m, const Eigen::VectorXd& x) {
  double closest = std::numeric_limits<double>::infinity();
  Eigen::VectorXd act = x;
  for (std::size_t l = 0; l + 1 < m.num_layers(); ++l) {
    const Eigen::VectorXd z = m.weight(l) * act + m.bias(l);
    closest = std::min(closest, z.cwiseAbs().minCoeff());
    act = z.cwiseMax(0.0);
  }
  return closest;
}

Eigen::MatrixXd fd_jacobian(const MlpModel& m, const Eigen::VectorXd& x) {
  Eigen::MatrixXd j(m.output_dim(), x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    const double h = 1e-5 * (1.0 + std::abs(x(c)));
    Eigen::VectorXd up = x;
    Eigen::VectorXd down = x;
    up(c) += h;
    down(c) -= h;
    j.col(c) = (forward(m, up) - forward(m, down)) / (2.0 * h);
  }
  return j;
}

Dataset line_dataset(int n, Rng& rng) {
  Dataset data;
  data.inputs.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    const double x = 2.0 * rng.uniform() - 1.0;
    data.inputs(i, 0) = x;
    data.labels.push_back({2.0 * x});
  }
  return data;
}

} // namespace

TEST_SUITE("predictor") {

TEST_CASE("single linear layer computes a·x") {
  MlpModel m({3, 1}, Head::linear);
  m.weight(0) << 1.5, -2.0, 0.5;
  const Eigen::VectorXd x = Eigen::Vector3d(1.0, 2.0, 4.0);
  CHECK(forward(m, x)(0) == 1.5 - 4.0 + 2.0);
  const Eigen::MatrixXd j = input_gradient(m, x);
  CHECK(j == m.weight(0));
}

TEST_CASE("zero model outputs zero") {
  MlpModel m({4, 8, 8, 2}, Head::class_scores);
  CHECK(forward(m, Eigen::VectorXd::Ones(4)) == Eigen::VectorXd::Zero(2));
}

TEST_CASE("forward is deterministic and batch agrees") {
  Rng rng(5);
  const MlpModel m = random_model({6, 16, 16, 1}, Head::linear, rng);
  const Eigen::VectorXd x = random_vector(6, rng);
  const Eigen::VectorXd first = forward(m, x);
  for (int i = 0; i < 100; ++i) {
    REQUIRE(forward(m, x) == first);
  }
  Eigen::MatrixXd rows(5, 6);
  for (int r = 0; r < 5; ++r) {
    rows.row(r) = random_vector(6, rng).transpose();
  }
  const Eigen::MatrixXd batch = forward_batch(m, rows);
  for (int r = 0; r < 5; ++r) {
    CHECK(std::abs(batch(r, 0) - forward(m, rows.row(r).transpose())(0)) <= 1e-12);
  }
  CHECK_THROWS_AS(forward(m, Eigen::VectorXd::Zero(5)), DomainError);
}

TEST_CASE("input Jacobian matches central differences") {
  Rng rng(77);
  int checked = 0;
  for (int trial = 0; checked < 20 && trial < 200; ++trial) {
    const MlpModel m = random_model({5, 12, 12, trial % 2 ? 3 : 1}, trial % 2 ? Head::class_scores : Head::linear, rng);
    const Eigen::VectorXd x = random_vector(5, rng);
    if (kink_distance(m, x) < 1e-3) {
      continue;
    }
    ++checked;
    const Eigen::MatrixXd analytic = input_gradient(m, x);
    const Eigen::MatrixXd numeric = fd_jacobian(m, x);
    const double scale = std::max(analytic.cwiseAbs().maxCoeff(), 1e-12);
    CHECK((analytic - numeric).cwiseAbs().maxCoeff() / scale <= 1e-4);
  }
  CHECK(checked == 20);
}

TEST_CASE("dead rectifiers give a zero Jacobian") {
  Rng rng(2);
  MlpModel m = random_model({4, 8, 8, 1}, Head::linear, rng);
  m.bias(0).setConstant(-1e3);
  const Eigen::MatrixXd j = input_gradient(m, random_vector(4, rng));
  CHECK(j.isZero(0.0));
}

TEST_CASE("parameter gradient matches finite differences") {
  Rng rng(13);
  for (Head head : {Head::linear, Head::class_scores}) {
    MlpModel m = random_model({3, 5, 4, head == Head::linear ? 1 : 3}, head, rng);
    Eigen::MatrixXd x(7, 3);
    Eigen::VectorXd y(7);
    for (int i = 0; i < 7; ++i) {
      x.row(i) = random_vector(3, rng).transpose();
      y(i) = head == Head::linear ? rng.normal() : static_cast<double>(rng.index(3));
    }
    const auto lg = loss_and_gradient(m, x, y);
    const Eigen::VectorXd p = m.parameters();
    Eigen::VectorXd fd(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double h = 1e-6 * (1.0 + std::abs(p(i)));
      Eigen::VectorXd q = p;
      q(i) += h;
      m.set_parameters(q);
      const double up = loss_and_gradient(m, x, y).loss;
      q(i) -= 2.0 * h;
      m.set_parameters(q);
      const double down = loss_and_gradient(m, x, y).loss;
      fd(i) = (up - down) / (2.0 * h);
    }
    m.set_parameters(p);
    CHECK((lg.gradient - fd).cwiseAbs().maxCoeff() / lg.gradient.cwiseAbs().maxCoeff() <= 1e-4);
  }
}

TEST_CASE("linear regression learns the slope") {
  Rng rng(3);
  const Dataset data = line_dataset(500, rng);
  // Least-squares oracle for y = a x + b.
  const Eigen::VectorXd xs = data.inputs.col(0);
  Eigen::MatrixXd design(500, 2);
  design.col(0) = xs;
  design.col(1).setOnes();
  Eigen::VectorXd ys(500);
  for (int i = 0; i < 500; ++i) {
    ys(i) = data.labels[static_cast<std::size_t>(i)][0];
  }
  const Eigen::Vector2d ls = design.colPivHouseholderQr().solve(ys);
  CHECK(std::abs(ls(0) - 2.0) <= 1e-12);

  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 16;
  cfg.seed = 9;
  const auto result = train(data, MlpModel({1, 1}, Head::linear), cfg);
  CHECK(std::abs(result.model.weight(0)(0, 0) - ls(0)) <= 0.05);
  CHECK(result.epoch_loss.size() == 200);
}

TEST_CASE("full-batch loss is non-increasing on a convex problem") {
  Rng rng(6);
  const Dataset data = line_dataset(200, rng);
  Rng init_rng(1);
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.batch_size = 200;
  cfg.learning_rate = 0.01;
  const auto result = train(data, make_mlp({1, 1}, Head::linear, init_rng), cfg);
  for (std::size_t e = 1; e < result.epoch_loss.size(); ++e) {
    CHECK(result.epoch_loss[e] <= result.epoch_loss[e - 1]);
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Rng rng(6);
  const Dataset data = line_dataset(64, rng);
  Rng init_rng(2);
  const MlpModel init = make_mlp({1, 8, 1}, Head::linear, init_rng);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  const auto result = train(data, init, cfg);
  CHECK(result.model.parameters() == init.parameters());
}

TEST_CASE("Adam first step has magnitude lr regardless of gradient scale") {
  // ε = 1e-8 only matters once |g| approaches it.
  for (double scale : {1e-3, 1.0, 1e6}) {
    Adam adam(3, AdamConfig{});
    Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
    adam.step(p, Eigen::Vector3d(1.0, -2.0, 0.5) * scale);
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(std::abs(p(i)) - 0.001) <= 0.001 * 1e-4);
    }
  }
}

TEST_CASE("training is deterministic") {
  Rng rng(6);
  const Dataset data = line_dataset(100, rng);
  Rng a(5);
  Rng b(5);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 11;
  const auto ra = train(data, make_mlp({1, 8, 8, 1}, Head::linear, a), cfg);
  const auto rb = train(data, make_mlp({1, 8, 8, 1}, Head::linear, b), cfg);
  CHECK(ra.model.parameters() == rb.model.parameters());
}

TEST_CASE("noisy label sets become separate pairs") {
  Dataset data;
  data.inputs = Eigen::MatrixXd::Zero(2, 1);
  data.inputs(1, 0) = 1.0;
  data.labels = {{1.0, 3.0}, {2.0}};
  const auto [x, y] = flatten_pairs(data);
  CHECK(x.rows() == 3);
  CHECK(y(0) == 1.0);
  CHECK(y(1) == 3.0);
  CHECK(x(2, 0) == 1.0);
}

TEST_CASE("dataset validation and training errors") {
  Dataset data;
  data.inputs = Eigen::MatrixXd::Zero(2, 1);
  data.labels = {{1.0}, {}};
  CHECK_THROWS_AS(data.validate(), DomainError);
  data.labels = {{1.0}, {2.0}};
  data.num_classes = 2;
  CHECK_THROWS_AS(data.validate(), DomainError);
  data.num_classes = 0;
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(data, MlpModel({1, 1}, Head::linear), cfg), DomainError);
  cfg.epochs = 1;
  cfg.learning_rate = 1e300;
  MlpModel big({1, 1}, Head::linear);
  big.weight(0)(0, 0) = 1e300;
  data.labels = {{1e300}, {-1e300}};
  CHECK_THROWS_AS(train(data, big, cfg), DivergenceError);
}

TEST_CASE("metrics examples") {
  const std::vector<double> same = {0.5, 1.0, -2.0};
  const auto exact = metrics(same, same);
  CHECK(exact.mse == 0.0);
  CHECK(exact.mae == 0.0);
  CHECK(exact.accuracy == 1.0);
  const std::vector<double> pred = {0.0, 2.0};
  const std::vector<double> truth = {1.0, 0.0};
  const auto m = metrics(pred, truth);
  CHECK(m.mae == 1.5);
  CHECK(m.mse == 2.5);
  const std::vector<double> cp = {0.0, 1.0, 1.0};
  const std::vector<double> ct = {0.0, 1.0, 2.0};
  CHECK(std::abs(metrics(cp, ct).accuracy - 2.0 / 3.0) <= 1e-15);
  CHECK_THROWS_AS(metrics(std::vector<double>{}, std::vector<double>{}), DomainError);
  CHECK_THROWS_AS(metrics(cp, truth), DomainError);
}

TEST_CASE("softmax") {
  const Eigen::VectorXd p = softmax(Eigen::Vector3d(1000.0, 1000.0, -1000.0));
  CHECK(std::abs(p(0) - 0.5) <= 1e-15);
  CHECK(p(2) == 0.0);
  CHECK(std::abs(p.sum() - 1.0) <= 1e-15);
}

TEST_CASE("model save and load round trip") {
  Rng rng(8);
  const MlpModel m = random_model({3, 4, 2}, Head::class_scores, rng);
  const auto path = std::filesystem::temp_directory_path() / "vbtta_test_model.bin";
  save_model(m, path);
  const MlpModel back = load_model(path);
  CHECK(back.sizes() == m.sizes());
  CHECK(back.head() == m.head());
  CHECK(back.parameters() == m.parameters());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_model(path), IoError);
}

} // TEST_SUITE
