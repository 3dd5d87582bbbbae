#include <cmath>

#include "doctest.h"
#include "vbtta/augment.hpp"
#include "vbtta/error.hpp"
#include "vbtta/moments.hpp"

using namespace vbtta;

namespace {

Eigen::MatrixXd gaussian_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Eigen::MatrixXd out(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) {
      out(r, c) = rng.normal();
    }
  }
  return out;
}

Eigen::VectorXd random_vector(Eigen::Index d, Rng& rng) {
  Eigen::VectorXd v(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    v(i) = rng.normal();
  }
  return v;
}

} // namespace

TEST_SUITE("augment") {

TEST_CASE("zero gaussian noise is the identity") {
  Rng rng(1);
  const Eigen::VectorXd x = random_vector(5, rng);
  const Eigen::VectorXd out = apply_augmentation(GaussianNoiseAug{Eigen::VectorXd::Zero(1)}, x, rng);
  CHECK(out == x);
}

TEST_CASE("mixup endpoints") {
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(4, 1.0, 4.0);
  const Eigen::VectorXd partner = Eigen::VectorXd::LinSpaced(4, -3.0, 0.0);
  CHECK(mixup(x, partner, 0.0) == x);
  CHECK(mixup(x, partner, 1.0) == partner);
  CHECK(cutmix(x, partner, Eigen::VectorXd::Ones(4)) == x);
  CHECK(cutmix(x, partner, Eigen::VectorXd::Zero(4)) == partner);
}

TEST_CASE("rotation by 90 degrees") {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  x(0) = 1.0;
  Rng rng(0);
  const Eigen::VectorXd out = apply_augmentation(RotationAug{90.0, 0, 1}, x, rng);
  CHECK(std::abs(out(0)) <= 1e-12);
  CHECK(std::abs(out(1) - 1.0) <= 1e-12);
  CHECK(out(2) == 0.0);
}

TEST_CASE("affine applies the map") {
  Eigen::MatrixXd a(2, 2);
  a << 2.0, 1.0, 0.0, 3.0;
  const Eigen::VectorXd b = Eigen::Vector2d(0.5, -1.0);
  Rng rng(0);
  const Eigen::VectorXd out = apply_augmentation(AffineAug{a, b}, Eigen::Vector2d(1.0, 2.0), rng);
  CHECK(out(0) == 4.5);
  CHECK(out(1) == 5.0);
}

TEST_CASE("errors") {
  Rng rng(0);
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(apply_augmentation(MixupAug{0.5}, x, rng), ConfigError);
  CHECK_THROWS_AS(apply_augmentation(CutmixAug{0.5}, x, rng), ConfigError);
  const ReferencePool pool(Eigen::MatrixXd::Zero(4, 2));
  CHECK_THROWS_AS(apply_augmentation(MixupAug{0.5}, x, rng, &pool), DomainError);
  CHECK_THROWS_AS(apply_augmentation(RotationAug{10.0, 1, 1}, x, rng), DomainError);
  CHECK_THROWS_AS(apply_augmentation(RotationAug{10.0, 0, 3}, x, rng), DomainError);
  CHECK_THROWS_AS(apply_augmentation(GaussianNoiseAug{Eigen::VectorXd::Constant(1, -1.0)}, x, rng), DomainError);
  CHECK_THROWS_AS(apply_augmentation(AffineAug{Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2)}, x, rng),
                  DomainError);
  const ReferencePool pool3(Eigen::MatrixXd::Zero(4, 3));
  CHECK_THROWS_AS(apply_augmentation(MixupAug{1.0}, x, rng, &pool3), DomainError);
  CHECK_THROWS_AS(apply_augmentation(CutmixAug{0.0}, x, rng, &pool3), DomainError);
  CHECK_THROWS_AS(induced_distribution_sample(GaussianNoiseAug{Eigen::VectorXd::Ones(1)}, x, 0, rng), DomainError);
}

TEST_CASE("describe and parse round trip") {
  const std::vector<AugmentationSpec> specs = {
      MixupAug{0.1}, CutmixAug{0.9}, GaussianNoiseAug{Eigen::Vector2d(0.5, 0.25)}, RotationAug{30.0, 0, 2},
      AffineAug{Eigen::MatrixXd::Identity(2, 2) * 2.0, Eigen::Vector2d(1.0, -1.0)}};
  for (const auto& spec : specs) {
    const std::string text = describe(spec);
    const AugmentationSpec back = parse_augmentation(text);
    CHECK(describe(back) == text);
    CHECK(spec_hash(back) == spec_hash(spec));
  }
  CHECK(describe(MixupAug{0.5}) == "mixup(alpha=0.5)");
  CHECK(spec_hash(MixupAug{0.5}) != spec_hash(CutmixAug{0.5}));
  CHECK_THROWS_AS(parse_augmentation("blur(radius=2)"), ConfigError);
  CHECK_THROWS_AS(parse_augmentation("mixup"), ConfigError);
  CHECK_THROWS_AS(parse_augmentation("mixup(beta=0.5)"), ConfigError);
}

TEST_CASE("single draw equals one application") {
  const ReferencePool pool([] {
    Rng r(4);
    return gaussian_rows(50, 3, r);
  }());
  const Eigen::VectorXd x = Eigen::Vector3d(0.3, -0.2, 1.0);
  for (const AugmentationSpec& spec : std::vector<AugmentationSpec>{MixupAug{0.5}, CutmixAug{0.3}}) {
    Rng a(17);
    Rng b(17);
    const Eigen::MatrixXd one = induced_distribution_sample(spec, x, 1, a, &pool);
    REQUIRE(one.rows() == 1);
    CHECK(one.row(0).transpose() == apply_augmentation(spec, x, b, &pool));
  }
}

TEST_CASE("gaussian noise covariance within 4 standard errors") {
  Rng rng(8);
  const double sigma = 0.7;
  const Eigen::Index n = 100000;
  const Eigen::MatrixXd s =
      induced_distribution_sample(GaussianNoiseAug{Eigen::VectorXd::Constant(1, sigma)}, Eigen::Vector3d::Zero(), n, rng);
  const Eigen::MatrixXd centered = s.rowwise() - s.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  const double s2 = sigma * sigma;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      const double expected = a == b ? s2 : 0.0;
      const double se = a == b ? s2 * std::sqrt(2.0 / n) : s2 / std::sqrt(static_cast<double>(n));
      CHECK(std::abs(cov(a, b) - expected) <= 4.0 * se);
    }
  }
}

TEST_CASE("mixup and cutmix stay on the segment") {
  Rng rng(12);
  const ReferencePool pool(gaussian_rows(200, 6, rng));
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::VectorXd x = random_vector(6, rng);
    const double alpha = 0.05 + 0.9 * rng.uniform();
    // Replay the partner draw from a copy of the stream.
    Rng copy = rng;
    const Eigen::VectorXd partner = pool.draw(copy);
    const AugmentationSpec spec = trial % 2 ? AugmentationSpec{MixupAug{alpha}} : AugmentationSpec{CutmixAug{alpha}};
    const Eigen::VectorXd out = apply_augmentation(spec, x, rng, &pool);
    for (Eigen::Index i = 0; i < 6; ++i) {
      const double lo = std::min(x(i), partner(i));
      const double hi = std::max(x(i), partner(i));
      CHECK(out(i) >= lo - 1e-12);
      CHECK(out(i) <= hi + 1e-12);
    }
    if (trial % 2) {
      // Mixup moves every coordinate by the same fraction.
      const Eigen::VectorXd diff = partner - x;
      Eigen::Index j = 0;
      diff.cwiseAbs().maxCoeff(&j);
      const double lambda = (out(j) - x(j)) / diff(j);
      CHECK(((out - x) - lambda * diff).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("mixup input covariance matches analytic moments") {
  // z - x = λ(x* - x), λ ~ Beta(α, α) independent of x* ~ pool:
  // Cov z = E[λ²] S + Var(λ) (m - x)(m - x)ᵀ.
  Rng rng(21);
  const Eigen::Index d = 3;
  const ReferencePool pool(gaussian_rows(500, d, rng) * 0.8);
  const Eigen::VectorXd x = Eigen::Vector3d(1.0, -0.5, 0.25);
  for (double alpha : {0.1, 0.5, 0.9}) {
    const double var_l = 1.0 / (4.0 * (2.0 * alpha + 1.0));
    const double e_l2 = var_l + 0.25;
    const Eigen::VectorXd dm = pool.mean() - x;
    const Eigen::MatrixXd analytic = e_l2 * pool.covariance() + var_l * dm * dm.transpose();

    const Eigen::MatrixXd est = input_covariance(MixupAug{alpha}, x, &pool);

    // Per-entry Monte-Carlo standard error from an independent run of the same size.
    Rng oracle(1000 + static_cast<std::uint64_t>(alpha * 10));
    const Eigen::MatrixXd draws = induced_distribution_sample(MixupAug{alpha}, x, kCovarianceSamples, oracle, &pool);
    const Eigen::MatrixXd centered = draws.rowwise() - draws.colwise().mean();
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index b = 0; b < d; ++b) {
        const Eigen::ArrayXd prod = centered.col(a).array() * centered.col(b).array();
        const double sd = std::sqrt((prod - prod.mean()).square().mean());
        const double se = sd / std::sqrt(static_cast<double>(kCovarianceSamples));
        CHECK(std::abs(est(a, b) - analytic(a, b)) <= 4.0 * se);
      }
    }
  }
}

TEST_CASE("normality statistics: null calibration") {
  int accepted = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto stats = normality_statistics(gaussian_rows(100000, 2, rng));
    CHECK(stats.skewness.p_value >= 0.0);
    CHECK(stats.skewness.p_value <= 1.0);
    CHECK(stats.kurtosis.p_value >= 0.0);
    CHECK(stats.kurtosis.p_value <= 1.0);
    accepted += stats.skewness.p_value > 0.01;
  }
  CHECK(accepted >= 9);
}

TEST_CASE("normality statistics: log-normal kurtosis") {
  Rng rng(3);
  Eigen::MatrixXd s(2000, 1);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    s(i, 0) = std::exp(rng.normal());
  }
  const auto stats = normality_statistics(s);
  CHECK(stats.kurtosis.statistic > 2.3263478740408408); // N(0,1) 99th percentile
  CHECK(stats.kurtosis.p_value < 0.01);
}

TEST_CASE("normality statistics: degenerate input") {
  CHECK_THROWS_AS(normality_statistics(Eigen::MatrixXd::Constant(100, 2, 3.0)), DegenerateInputError);
  CHECK_THROWS_AS(normality_statistics(Eigen::MatrixXd::Random(3, 2)), DegenerateInputError);
}

TEST_CASE("normality statistics are affine invariant") {
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd s = gaussian_rows(500, 3, rng);
    s.col(0) = s.col(0).array().exp().matrix(); // some real skewness
    Eigen::MatrixXd a(3, 3);
    for (int i = 0; i < 9; ++i) {
      a(i / 3, i % 3) = rng.normal();
    }
    a += 3.0 * Eigen::MatrixXd::Identity(3, 3);
    REQUIRE(std::abs(a.determinant()) > 1e-3);
    const Eigen::RowVectorXd shift = random_vector(3, rng).transpose();
    const Eigen::MatrixXd t = (s * a.transpose()).rowwise() + shift;
    const auto before = normality_statistics(s);
    const auto after = normality_statistics(t);
    CHECK(std::abs(before.skewness.statistic - after.skewness.statistic) <= 1e-8);
    CHECK(std::abs(before.kurtosis.statistic - after.kurtosis.statistic) <= 1e-8);
  }
}

TEST_CASE("gaussian noise input covariance is exact") {
  const Eigen::MatrixXd cov =
      input_covariance(GaussianNoiseAug{Eigen::VectorXd::Constant(1, 0.3)}, Eigen::Vector2d(4.0, -1.0));
  CHECK(cov == (0.3 * 0.3) * Eigen::MatrixXd::Identity(2, 2));
  CHECK((cov - 0.09 * Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-17);
}

TEST_CASE("rotation by zero degrees has no spread") {
  CHECK_THROWS_AS(input_covariance(RotationAug{0.0, 0, 1}, Eigen::Vector2d(1.0, 2.0)), DegenerateInputError);
}

} // TEST_SUITE

// Kept apart so its known failure does not mask the rest of the suite.
TEST_SUITE("augment_mixup_normality") {

TEST_CASE("mixup at the pool mean looks gaussian") {
  // Pool of 10⁴ N(0, I₂) training points, 1000 induced draws per seed.
  int accepted = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const ReferencePool pool(gaussian_rows(10000, 2, rng));
    const Eigen::MatrixXd s = induced_distribution_sample(MixupAug{0.5}, pool.mean(), 1000, rng, &pool);
    accepted += normality_statistics(s).skewness.p_value > 0.01;
  }
  CHECK(accepted >= 8);
}

} // TEST_SUITE
