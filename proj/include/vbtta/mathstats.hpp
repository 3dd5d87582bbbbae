#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <variant>

#include <Eigen/Dense>

namespace vbtta {

// Seeded random stream. Streams derived with split() depend only on the
// parent seed and the index, never on how much of the parent was consumed.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  Rng split(std::uint64_t index) const;

  double uniform();   // [0, 1)
  double normal();    // N(0, 1)
  double gamma(double shape, double rate);
  double beta(double a, double b);
  double chi_squared(double dof);
  std::size_t index(std::size_t n); // uniform on {0, ..., n-1}

  std::mt19937_64& engine() noexcept { return engine_; }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

double lgamma(double x);
double digamma(double x);
double std_normal_pdf(double z) noexcept;
double std_normal_cdf(double z) noexcept;
// log Φ(z), accurate in the far left tail.
double std_normal_logcdf(double z) noexcept;

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  bool converged = false;
};

inline constexpr double kDefaultQuadratureTol = 1e-9;

// Adaptive Gauss-Kronrod (15 point) integration. Either bound may be
// infinite. Throws EvaluationError if f returns NaN.
QuadratureResult adaptive_quadrature(const std::function<double(double)>& f, double lower,
                                     double upper, double tol = kDefaultQuadratureTol);

// Distribution descriptors accepted by sample().
struct GaussianDist {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};
struct BetaDist {
  double a;
  double b;
};
struct GammaDist {
  double shape;
  double rate;
};
// Wishart over precision matrices, rate (inverse-scale) convention:
// density ∝ |Λ|^{(ν-c-1)/2} exp(-tr(V Λ)/2), mean ν V⁻¹.
struct WishartDist {
  double dof;
  Eigen::MatrixXd rate;
};
using DistSpec = std::variant<GaussianDist, BetaDist, GammaDist, WishartDist>;

void validate(const DistSpec& spec);

// Scalar draws come back as 1x1, vector draws as a column, Wishart draws as c x c.
Eigen::MatrixXd sample(const DistSpec& spec, Rng& rng);

struct WishartExpectation {
  Eigen::MatrixXd precision; // E[Λ] = ν V⁻¹
  double log_det = 0.0;      // E[ln|Λ|]
};

WishartExpectation wishart_expectations(double dof, const Eigen::MatrixXd& rate);

// log of the Wishart normalizer B(V, ν) in the rate convention:
// -(νc/2) ln 2 - (c(c-1)/4) ln π - Σ lnΓ((ν+1-i)/2) + (ν/2) ln|V|.
double wishart_log_normalizer(double dof, const Eigen::MatrixXd& rate);

// ln|A| for symmetric positive definite A; DomainError otherwise.
double spd_log_det(const Eigen::MatrixXd& a);
bool is_spd(const Eigen::MatrixXd& a);

} // namespace vbtta
