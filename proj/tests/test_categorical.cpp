#include <cmath>

#include "doctest.h"
#include "vbtta/error.hpp"
#include "vbtta/vbcore.hpp"

using namespace vbtta;

namespace {

ProbitComponent component(std::initializer_list<double> means, std::initializer_list<double> sds) {
  ProbitComponent c;
  c.means = Eigen::Map<const Eigen::VectorXd>(means.begin(), static_cast<Eigen::Index>(means.size()));
  c.sds = Eigen::Map<const Eigen::VectorXd>(sds.begin(), static_cast<Eigen::Index>(sds.size()));
  return c;
}

} // namespace

TEST_SUITE("categorical") {

TEST_CASE("two symmetric classes") {
  const auto c = component({0.0, 0.0}, {1.0, 1.0});
  CHECK(std::abs(probit_class_probability(c, 1) - 0.5) <= 1e-9);
}

TEST_CASE("two classes match the difference-of-gaussians closed form") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const double m0 = 3.0 * rng.normal();
    const double m1 = 3.0 * rng.normal();
    const double s0 = 0.05 + 3.0 * rng.uniform();
    const double s1 = 0.05 + 3.0 * rng.uniform();
    const auto c = component({m0, m1}, {s0, s1});
    // P(Z₁ > Z₀) = Φ((μ₁ - μ₀)/√(σ₀² + σ₁²))
    const double expected = std_normal_cdf((m1 - m0) / std::sqrt(s0 * s0 + s1 * s1));
    CHECK(std::abs(probit_class_probability(c, 1) - expected) <= 1e-6);
    CHECK(std::abs(probit_class_probability(c, 0) - (1.0 - expected)) <= 1e-6);
  }
}

TEST_CASE("three classes match Monte-Carlo argmax frequencies") {
  const auto c = component({1.0, 0.0, -1.0}, {1.0, 1.0, 1.0});
  const Eigen::VectorXd p = probit_class_probabilities(c);
  Rng rng(123);
  const long n = 10000000;
  Eigen::Vector3d counts = Eigen::Vector3d::Zero();
  for (long s = 0; s < n; ++s) {
    const double z0 = 1.0 + rng.normal();
    const double z1 = rng.normal();
    const double z2 = -1.0 + rng.normal();
    const int best = z0 >= z1 ? (z0 >= z2 ? 0 : 2) : (z1 >= z2 ? 1 : 2);
    counts(best) += 1.0;
  }
  for (int j = 0; j < 3; ++j) {
    const double freq = counts(j) / static_cast<double>(n);
    const double se = std::sqrt(p(j) * (1.0 - p(j)) / static_cast<double>(n));
    CHECK(std::abs(freq - p(j)) <= 4.0 * se);
  }
}

TEST_CASE("class probabilities sum to one") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index classes = 2 + static_cast<Eigen::Index>(rng.index(4));
    ProbitComponent c{Eigen::VectorXd(classes), Eigen::VectorXd(classes)};
    for (Eigen::Index i = 0; i < classes; ++i) {
      c.means(i) = 2.0 * rng.normal();
      c.sds(i) = 0.1 + 2.0 * rng.uniform();
    }
    const Eigen::VectorXd p = probit_class_probabilities(c);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-5);
    CHECK(p.minCoeff() >= 0.0);
    CHECK(p.maxCoeff() <= 1.0);
  }
}

TEST_CASE("probit from moments takes square roots of variances") {
  const ComponentMoments m{Eigen::Vector2d(0.5, -0.5), Eigen::Vector2d(4.0, 0.25), MomentProvenance::delta};
  const auto c = probit_from_moments(m);
  CHECK(c.means == m.mean);
  CHECK(c.sds(0) == 2.0);
  CHECK(c.sds(1) == 0.5);
}

TEST_CASE("probit input validation") {
  CHECK_THROWS_AS(probit_class_probability(component({0.0}, {1.0}), 0), DomainError);
  CHECK_THROWS_AS(probit_class_probability(component({0.0, 1.0}, {1.0, 0.0}), 0), DomainError);
  CHECK_THROWS_AS(probit_class_probability(component({0.0, 1.0}, {1.0, 1.0}), 2), DomainError);
}

TEST_CASE("EM: identical components keep the initial weights") {
  const ClassProbabilityTable probs = {{Eigen::Vector2d(0.3, 0.7), Eigen::Vector2d(0.3, 0.7)},
                                       {Eigen::Vector2d(0.6, 0.4), Eigen::Vector2d(0.6, 0.4)}};
  const SimplexWeights init(Eigen::Vector2d(0.2, 0.8));
  const auto fit = fit_categorical({{0, 1}, {1}}, probs, FitConfig{20, 0.0, false}, init);
  CHECK(std::abs(fit.weights[0] - 0.2) <= 1e-12);
  CHECK(std::abs(fit.weights[1] - 0.8) <= 1e-12);
}

TEST_CASE("EM: single label, one step") {
  const ClassProbabilityTable probs = {{Eigen::Vector2d(0.2, 0.8), Eigen::Vector2d(0.8, 0.2)}};
  const auto fit = fit_categorical({{1}}, probs, FitConfig{1, 0.0, false});
  CHECK(std::abs(fit.weights[0] - 0.8) <= 1e-15);
  CHECK(std::abs(fit.weights[1] - 0.2) <= 1e-15);
  CHECK(fit.loglik_trace.size() == 2);
  CHECK(fit.weight_trace.front() == Eigen::Vector2d(0.5, 0.5));
}

TEST_CASE("EM: labels from one component are attributed to it") {
  Rng rng(5);
  std::vector<std::vector<int>> labels;
  ClassProbabilityTable probs;
  for (int i = 0; i < 300; ++i) {
    // Component 0 favours class 0 strongly, component 1 class 2.
    const Eigen::Vector3d p0(0.9, 0.08, 0.02);
    const Eigen::Vector3d p1(0.02, 0.08, 0.9);
    probs.push_back({p0, p1});
    const double u = rng.uniform();
    labels.push_back({u < 0.9 ? 0 : (u < 0.98 ? 1 : 2)});
  }
  const auto fit = fit_categorical(labels, probs, FitConfig{100, 0.0, false});
  CHECK(fit.weights[0] > 0.95);
}

TEST_CASE("EM: log-likelihood never decreases") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    std::vector<std::vector<int>> labels;
    ClassProbabilityTable probs;
    for (int i = 0; i < 50; ++i) {
      std::vector<Eigen::VectorXd> row;
      for (int k = 0; k < 4; ++k) {
        Eigen::VectorXd p(3);
        for (int c = 0; c < 3; ++c) {
          p(c) = 0.01 + rng.uniform();
        }
        row.push_back(p / p.sum());
      }
      probs.push_back(row);
      labels.push_back({static_cast<int>(rng.index(3)), static_cast<int>(rng.index(3))});
    }
    const auto fit = fit_categorical(labels, probs, FitConfig{200, 0.0, false});
    for (std::size_t s = 1; s < fit.loglik_trace.size(); ++s) {
      CHECK(fit.loglik_trace[s] >= fit.loglik_trace[s - 1] - 1e-10);
    }
  }
}

TEST_CASE("EM: impossible label is degenerate") {
  const ClassProbabilityTable probs = {{Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(1.0, 0.0)}};
  CHECK_THROWS_AS(fit_categorical({{1}}, probs), DegenerateInputError);
  CHECK_THROWS_AS(fit_categorical({{2}}, probs), DomainError);
}

} // TEST_SUITE
