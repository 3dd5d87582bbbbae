#include "vbtta/augment.hpp"

#include <cmath>
#include <numbers>
#include <map>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

#include "vbtta/error.hpp"
#include "vbtta/text.hpp"

namespace vbtta {

ReferencePool::ReferencePool(Eigen::MatrixXd instances) : instances_(std::move(instances)) {
  if (instances_.rows() < 1 || instances_.cols() < 1) {
    throw DomainError("ReferencePool: needs at least one instance");
  }
}

Eigen::VectorXd ReferencePool::draw(Rng& rng) const {
  return instances_.row(static_cast<Eigen::Index>(rng.index(instances_.rows()))).transpose();
}

Eigen::VectorXd ReferencePool::mean() const { return instances_.colwise().mean().transpose(); }

Eigen::MatrixXd ReferencePool::covariance() const {
  const Eigen::MatrixXd centered = instances_.rowwise() - instances_.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(instances_.rows());
}

bool needs_pool(const AugmentationSpec& spec) {
  return std::holds_alternative<MixupAug>(spec) || std::holds_alternative<CutmixAug>(spec);
}

void validate(const AugmentationSpec& spec, Eigen::Index dim) {
  auto fail = [](const std::string& msg) { throw DomainError(msg); };
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianNoiseAug>) {
          if (s.sigma.size() != 1 && s.sigma.size() != dim) {
            fail("gaussian_noise: sigma length must be 1 or the input dimension");
          }
          if ((s.sigma.array() < 0.0).any()) {
            fail("gaussian_noise: sigma must be non-negative");
          }
        } else if constexpr (std::is_same_v<T, RotationAug>) {
          if (s.axis_a == s.axis_b || s.axis_a < 0 || s.axis_b < 0 || s.axis_a >= dim ||
              s.axis_b >= dim) {
            fail("rotation: plane axes must be distinct and inside the input dimension");
          }
        } else if constexpr (std::is_same_v<T, AffineAug>) {
          if (s.a.rows() != dim || s.a.cols() != dim || s.b.size() != dim) {
            fail("affine: A must be d x d and b length d");
          }
        } else {
          if (!(s.alpha > 0.0 && s.alpha < 1.0)) {
            fail("mixup/cutmix: alpha must lie in (0, 1)");
          }
        }
      },
      spec);
}

namespace {

std::string join(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) {
      out += '|';
    }
    out += format_double(v(i));
  }
  return out;
}

std::vector<double> split_numbers(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '|')) {
    double v = 0.0;
    if (!parse_double(trim(item), v)) {
      throw ConfigError("augmentation: bad number '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) {
    throw ConfigError("augmentation: empty value");
  }
  return out;
}

} // namespace

std::string describe(const AugmentationSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianNoiseAug>) {
          return "gaussian_noise(sigma=" + join(s.sigma) + ")";
        } else if constexpr (std::is_same_v<T, RotationAug>) {
          return "rotation(degrees=" + format_double(s.degrees) + ",a=" + std::to_string(s.axis_a) +
                 ",b=" + std::to_string(s.axis_b) + ")";
        } else if constexpr (std::is_same_v<T, AffineAug>) {
          Eigen::MatrixXd at = s.a.transpose();
          return "affine(a=" + join(Eigen::Map<const Eigen::VectorXd>(at.data(), at.size())) +
                 ",b=" + join(s.b) + ")";
        } else if constexpr (std::is_same_v<T, MixupAug>) {
          return "mixup(alpha=" + format_double(s.alpha) + ")";
        } else {
          return "cutmix(alpha=" + format_double(s.alpha) + ")";
        }
      },
      spec);
}

AugmentationSpec parse_augmentation(const std::string& raw) {
  const std::string text = trim(raw);
  const auto open = text.find('(');
  if (open == std::string::npos || text.back() != ')') {
    throw ConfigError("augmentation: expected kind(key=value,...), got '" + text + "'");
  }
  const std::string kind = trim(text.substr(0, open));
  std::map<std::string, std::vector<double>> params;
  std::stringstream ss(text.substr(open + 1, text.size() - open - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("augmentation: expected key=value in '" + item + "'");
    }
    params[trim(item.substr(0, eq))] = split_numbers(trim(item.substr(eq + 1)));
  }
  auto get = [&](const std::string& key) -> const std::vector<double>& {
    auto it = params.find(key);
    if (it == params.end()) {
      throw ConfigError("augmentation " + kind + ": missing parameter '" + key + "'");
    }
    return it->second;
  };
  if (kind == "gaussian_noise") {
    const auto& s = get("sigma");
    return GaussianNoiseAug{Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()))};
  }
  if (kind == "rotation") {
    return RotationAug{get("degrees").at(0), static_cast<int>(get("a").at(0)),
                       static_cast<int>(get("b").at(0))};
  }
  if (kind == "affine") {
    const auto& a = get("a");
    const auto& b = get("b");
    const auto d = static_cast<Eigen::Index>(b.size());
    if (static_cast<Eigen::Index>(a.size()) != d * d) {
      throw ConfigError("affine: a must hold d*d row-major entries");
    }
    AffineAug out{Eigen::MatrixXd(d, d), Eigen::Map<const Eigen::VectorXd>(b.data(), d)};
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) {
        out.a(r, c) = a[static_cast<std::size_t>(r * d + c)];
      }
    }
    return out;
  }
  if (kind == "mixup") {
    return MixupAug{get("alpha").at(0)};
  }
  if (kind == "cutmix") {
    return CutmixAug{get("alpha").at(0)};
  }
  throw ConfigError("augmentation: unknown kind '" + kind + "'");
}

std::uint64_t spec_hash(const AugmentationSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : describe(spec)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Eigen::VectorXd mixup(const Eigen::VectorXd& x, const Eigen::VectorXd& partner, double lambda) {
  if (x.size() != partner.size()) {
    throw DomainError("mixup: dimension mismatch");
  }
  return (1.0 - lambda) * x + lambda * partner;
}

Eigen::VectorXd cutmix(const Eigen::VectorXd& x, const Eigen::VectorXd& partner,
                       const Eigen::VectorXd& mask) {
  if (x.size() != partner.size() || x.size() != mask.size()) {
    throw DomainError("cutmix: dimension mismatch");
  }
  return (mask.array() * x.array() + (1.0 - mask.array()) * partner.array()).matrix();
}

Eigen::VectorXd apply_augmentation(const AugmentationSpec& spec, const Eigen::VectorXd& x, Rng& rng,
                                   const ReferencePool* pool) {
  const Eigen::Index d = x.size();
  if (needs_pool(spec)) {
    if (pool == nullptr) {
      throw ConfigError(describe(spec) + ": needs a reference pool");
    }
    if (pool->dim() != d) {
      throw DomainError(describe(spec) + ": pool dimension does not match input");
    }
  }
  validate(spec, d);
  return std::visit(
      [&](const auto& s) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianNoiseAug>) {
          Eigen::VectorXd out = x;
          for (Eigen::Index i = 0; i < d; ++i) {
            const double sd = s.sigma.size() == 1 ? s.sigma(0) : s.sigma(i);
            out(i) += sd * rng.normal();
          }
          return out;
        } else if constexpr (std::is_same_v<T, RotationAug>) {
          const double rad = s.degrees * std::numbers::pi / 180.0;
          const double c = std::cos(rad);
          const double sn = std::sin(rad);
          Eigen::VectorXd out = x;
          out(s.axis_a) = c * x(s.axis_a) - sn * x(s.axis_b);
          out(s.axis_b) = sn * x(s.axis_a) + c * x(s.axis_b);
          return out;
        } else if constexpr (std::is_same_v<T, AffineAug>) {
          return s.a * x + s.b;
        } else if constexpr (std::is_same_v<T, MixupAug>) {
          const Eigen::VectorXd partner = pool->draw(rng);
          return mixup(x, partner, rng.beta(s.alpha, s.alpha));
        } else {
          const Eigen::VectorXd partner = pool->draw(rng);
          Eigen::VectorXd mask(d);
          for (Eigen::Index i = 0; i < d; ++i) {
            mask(i) = rng.beta(s.alpha, s.alpha);
          }
          return cutmix(x, partner, mask);
        }
      },
      spec);
}

Eigen::MatrixXd induced_distribution_sample(const AugmentationSpec& spec, const Eigen::VectorXd& x,
                                            Eigen::Index n, Rng& rng, const ReferencePool* pool) {
  if (n < 1) {
    throw DomainError("induced_distribution_sample: n must be at least 1");
  }
  Eigen::MatrixXd out(n, x.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    out.row(r) = apply_augmentation(spec, x, rng, pool).transpose();
  }
  return out;
}

NormalityStatistics normality_statistics(const Eigen::MatrixXd& samples) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index d = samples.cols();
  if (n <= d + 1) {
    throw DegenerateInputError("normality_statistics: need more than d+1 observations");
  }
  const Eigen::MatrixXd centered = samples.rowwise() - samples.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  const double scale = cov.diagonal().cwiseAbs().maxCoeff();
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (!(scale > 0.0) || llt.info() != Eigen::Success ||
      llt.matrixLLT().diagonal().minCoeff() <= 1e-10 * std::sqrt(scale)) {
    throw DegenerateInputError("normality_statistics: sample covariance is singular");
  }
  // Whitened observations z_i = L⁻¹ (x_i - x̄), one per column.
  const Eigen::MatrixXd z = llt.matrixL().solve(centered.transpose());

  // b₁ = n⁻² Σ_ij (z_i·z_j)³ = Σ_abc M_abc², M the third-moment tensor.
  double b1 = 0.0;
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) {
      const Eigen::ArrayXd ab = z.row(a).array() * z.row(b).array();
      for (Eigen::Index c = 0; c < d; ++c) {
        const double m = (ab * z.row(c).array().transpose()).sum() / static_cast<double>(n);
        b1 += m * m;
      }
    }
  }
  const double b2 = z.colwise().squaredNorm().array().square().mean();

  const double dd = static_cast<double>(d);
  const double nn = static_cast<double>(n);
  NormalityStatistics out;
  out.b1 = b1;
  out.b2 = b2;
  out.skewness.statistic = nn * b1 / 6.0;
  const double dof = dd * (dd + 1.0) * (dd + 2.0) / 6.0;
  out.skewness.p_value = boost::math::gamma_q(0.5 * dof, 0.5 * out.skewness.statistic);
  out.kurtosis.statistic = (b2 - dd * (dd + 2.0)) / std::sqrt(8.0 * dd * (dd + 2.0) / nn);
  out.kurtosis.p_value = std::erfc(std::abs(out.kurtosis.statistic) / std::numbers::sqrt2);
  return out;
}

} // namespace vbtta
