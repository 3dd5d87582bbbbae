#include "vbtta/mathstats.hpp"

#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "vbtta/error.hpp"

namespace vbtta {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

double uniform_nonzero_helper(Rng& rng) {
  double u = 0.0;
  while (u == 0.0) {
    u = rng.uniform();
  }
  return u;
}

} // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::split(std::uint64_t index) const {
  return Rng(splitmix64(seed_ ^ splitmix64(index + 0x632be59bd9b4e019ULL)));
}

double Rng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

double Rng::normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

double Rng::gamma(double shape, double rate) {
  return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_);
}

double Rng::beta(double a, double b) {
  if (a < 1.0 && b < 1.0) {
    // Jöhnk: accept U^{1/a} + V^{1/b} <= 1, in log space so tiny shapes do not underflow.
    for (;;) {
      const double lx = std::log(uniform_nonzero_helper(*this)) / a;
      const double ly = std::log(uniform_nonzero_helper(*this)) / b;
      const double m = std::max(lx, ly);
      const double lse = m + std::log1p(std::exp(std::min(lx, ly) - m));
      if (lse <= 0.0) {
        return std::exp(lx - lse);
      }
    }
  }
  if (a < 1.0 || b < 1.0) {
    // Ratio of gammas with the small shape boosted by one: G(a) = G(a+1)·U^{1/a}.
    const double lx = std::log(uniform_nonzero_helper(*this)) / a + std::log(gamma(a + 1.0, 1.0));
    const double ly = std::log(uniform_nonzero_helper(*this)) / b + std::log(gamma(b + 1.0, 1.0));
    const double m = std::max(lx, ly);
    const double ex = std::exp(lx - m);
    const double ey = std::exp(ly - m);
    return ex / (ex + ey);
  }
  const double x = gamma(a, 1.0);
  const double y = gamma(b, 1.0);
  return x / (x + y);
}

double Rng::chi_squared(double dof) { return gamma(0.5 * dof, 0.5); }

std::size_t Rng::index(std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

double lgamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError("lgamma: argument must be positive and finite");
  }
  return boost::math::lgamma(x);
}

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError("digamma: argument must be positive and finite");
  }
  return boost::math::digamma(x);
}

double std_normal_pdf(double z) noexcept {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double std_normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double std_normal_logcdf(double z) noexcept {
  if (z > -30.0) {
    return std::log(std_normal_cdf(z));
  }
  // Asymptotic Mills-ratio expansion.
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return -0.5 * z2 - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(-z) + std::log(series);
}

QuadratureResult adaptive_quadrature(const std::function<double(double)>& f, double lower,
                                     double upper, double tol) {
  if (!(tol > 0.0)) {
    throw DomainError("adaptive_quadrature: tol must be positive");
  }
  if (lower == upper) {
    return {0.0, 0.0, true};
  }
  auto checked = [&f](double x) {
    const double v = f(x);
    if (std::isnan(v)) {
      throw EvaluationError("adaptive_quadrature: integrand returned NaN");
    }
    return v;
  };
  constexpr unsigned kMaxDepth = 30;
  double error = 0.0;
  double l1 = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
      checked, lower, upper, kMaxDepth, tol, &error, &l1);
  return {value, error, error <= tol * std::max(1.0, l1)};
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) {
    throw DomainError(what);
  }
}

Eigen::MatrixXd sample_wishart(const WishartDist& w, Rng& rng) {
  const auto c = w.rate.rows();
  // Bartlett decomposition with scale S = V⁻¹ = L Lᵀ.
  const Eigen::MatrixXd scale = w.rate.inverse();
  const Eigen::MatrixXd l = scale.llt().matrixL();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(c, c);
  for (Eigen::Index i = 0; i < c; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(w.dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) {
      a(i, j) = rng.normal();
    }
  }
  const Eigen::MatrixXd la = l * a;
  return la * la.transpose();
}

} // namespace

bool is_spd(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols() || a.rows() == 0 || !a.allFinite()) {
    return false;
  }
  if (!a.isApprox(a.transpose(), 1e-10)) {
    return false;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  return llt.info() == Eigen::Success;
}

double spd_log_det(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (a.rows() != a.cols() || llt.info() != Eigen::Success) {
    throw DomainError("spd_log_det: matrix is not symmetric positive definite");
  }
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

void validate(const DistSpec& spec) {
  std::visit(
      [](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, GaussianDist>) {
          require(d.covariance.rows() == d.mean.size() && d.covariance.cols() == d.mean.size(),
                  "gaussian: covariance shape does not match mean");
          require(is_spd(d.covariance), "gaussian: covariance must be SPD");
        } else if constexpr (std::is_same_v<T, BetaDist>) {
          require(d.a > 0.0 && d.b > 0.0, "beta: parameters must be positive");
        } else if constexpr (std::is_same_v<T, GammaDist>) {
          require(d.shape > 0.0 && d.rate > 0.0, "gamma: shape and rate must be positive");
        } else {
          require(is_spd(d.rate), "wishart: rate matrix must be SPD");
          require(d.dof > static_cast<double>(d.rate.rows()) - 1.0,
                  "wishart: degrees of freedom must exceed dimension - 1");
        }
      },
      spec);
}

Eigen::MatrixXd sample(const DistSpec& spec, Rng& rng) {
  validate(spec);
  return std::visit(
      [&rng](const auto& d) -> Eigen::MatrixXd {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, GaussianDist>) {
          const Eigen::MatrixXd l = d.covariance.llt().matrixL();
          Eigen::VectorXd z(d.mean.size());
          for (Eigen::Index i = 0; i < z.size(); ++i) {
            z(i) = rng.normal();
          }
          return d.mean + l * z;
        } else if constexpr (std::is_same_v<T, BetaDist>) {
          return Eigen::MatrixXd::Constant(1, 1, rng.beta(d.a, d.b));
        } else if constexpr (std::is_same_v<T, GammaDist>) {
          return Eigen::MatrixXd::Constant(1, 1, rng.gamma(d.shape, d.rate));
        } else {
          return sample_wishart(d, rng);
        }
      },
      spec);
}

WishartExpectation wishart_expectations(double dof, const Eigen::MatrixXd& rate) {
  const auto c = rate.rows();
  if (!is_spd(rate)) {
    throw DomainError("wishart_expectations: rate matrix must be SPD");
  }
  if (!(dof > static_cast<double>(c) - 1.0)) {
    throw DomainError("wishart_expectations: degrees of freedom must exceed dimension - 1");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(rate);
  WishartExpectation out;
  out.precision = dof * llt.solve(Eigen::MatrixXd::Identity(c, c));
  double sum = 0.0;
  for (Eigen::Index i = 1; i <= c; ++i) {
    sum += digamma(0.5 * (dof + 1.0 - static_cast<double>(i)));
  }
  out.log_det = sum + static_cast<double>(c) * std::numbers::ln2 -
                2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return out;
}

double wishart_log_normalizer(double dof, const Eigen::MatrixXd& rate) {
  const double c = static_cast<double>(rate.rows());
  double out = -0.5 * dof * c * std::numbers::ln2 - 0.25 * c * (c - 1.0) * std::log(std::numbers::pi);
  for (Eigen::Index i = 1; i <= rate.rows(); ++i) {
    out -= lgamma(0.5 * (dof + 1.0 - static_cast<double>(i)));
  }
  return out + 0.5 * dof * spd_log_det(rate);
}

} // namespace vbtta
