#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "vbtta/mathstats.hpp"

namespace vbtta {

// Training instances that mixup/cutmix draw their partner x* from,
// uniformly with replacement.
class ReferencePool {
public:
  explicit ReferencePool(Eigen::MatrixXd instances);

  Eigen::Index size() const noexcept { return instances_.rows(); }
  Eigen::Index dim() const noexcept { return instances_.cols(); }
  const Eigen::MatrixXd& instances() const noexcept { return instances_; }
  Eigen::VectorXd draw(Rng& rng) const;
  Eigen::VectorXd mean() const;
  Eigen::MatrixXd covariance() const; // 1/n normalization

private:
  Eigen::MatrixXd instances_;
};

struct GaussianNoiseAug {
  Eigen::VectorXd sigma; // per-dimension std; a single entry broadcasts
};
struct RotationAug {
  double degrees;
  int axis_a;
  int axis_b;
};
struct AffineAug {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
};
struct MixupAug {
  double alpha;
};
struct CutmixAug {
  double alpha;
};

using AugmentationSpec = std::variant<GaussianNoiseAug, RotationAug, AffineAug, MixupAug, CutmixAug>;

bool needs_pool(const AugmentationSpec& spec);
void validate(const AugmentationSpec& spec, Eigen::Index dim);

// Canonical text form, e.g. "mixup(alpha=0.5)". Round-trips through parse_augmentation.
std::string describe(const AugmentationSpec& spec);
AugmentationSpec parse_augmentation(const std::string& text);
// FNV-1a of describe(spec); identifies an augmentation independently of list order.
std::uint64_t spec_hash(const AugmentationSpec& spec);

// (1-λ) x + λ x*
Eigen::VectorXd mixup(const Eigen::VectorXd& x, const Eigen::VectorXd& partner, double lambda);
// M ⊙ x + (1-M) ⊙ x*
Eigen::VectorXd cutmix(const Eigen::VectorXd& x, const Eigen::VectorXd& partner,
                       const Eigen::VectorXd& mask);

Eigen::VectorXd apply_augmentation(const AugmentationSpec& spec, const Eigen::VectorXd& x, Rng& rng,
                                   const ReferencePool* pool = nullptr);

// n independent applications to the same x, one per row.
Eigen::MatrixXd induced_distribution_sample(const AugmentationSpec& spec, const Eigen::VectorXd& x,
                                            Eigen::Index n, Rng& rng,
                                            const ReferencePool* pool = nullptr);

struct TestStatistic {
  double statistic = 0.0;
  double p_value = 1.0;
};

struct NormalityStatistics {
  TestStatistic skewness; // n·b₁/6 against χ²(d(d+1)(d+2)/6)
  TestStatistic kurtosis; // standardized b₂ against N(0, 1), two-sided
  double b1 = 0.0;
  double b2 = 0.0;
};

// Mardia's multivariate skewness and kurtosis. Rows are observations.
NormalityStatistics normality_statistics(const Eigen::MatrixXd& samples);

} // namespace vbtta
