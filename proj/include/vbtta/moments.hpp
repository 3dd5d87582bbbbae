#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <utility>

#include <Eigen/Dense>

#include "vbtta/augment.hpp"
#include "vbtta/mathstats.hpp"
#include "vbtta/predictor.hpp"

namespace vbtta {

// Differentiable model seen through callables, so the moment routines work
// for the MLP and for closed-form test functions alike.
struct ModelView {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> value;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;
  // Optional rows -> rows evaluation; falls back to value() per row.
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> batch;

  Eigen::MatrixXd evaluate_rows(const Eigen::MatrixXd& inputs) const;
};

// The view references `model`; keep it alive while the view is used.
ModelView view_of(const MlpModel& model);

enum class MomentProvenance { delta, monte_carlo };

struct ComponentMoments {
  Eigen::VectorXd mean;     // μ_k(x; θ), one entry per output
  Eigen::VectorXd variance; // Σ_{k,i}(x; θ), one entry per output
  MomentProvenance provenance = MomentProvenance::delta;
};

struct NoiseConfig {
  Eigen::VectorXd sigma_eps = Eigen::VectorXd::Constant(1, 0.01); // variance, per output (size 1 broadcasts)
  int n_aug = 1; // number of augmented draws averaged; the N in the 1/N factor

  double noise_for(Eigen::Index output) const;
  void validate() const;
};

inline constexpr Eigen::Index kCovarianceSamples = 10000;

// Input covariance Σ_k of φ_k(x). Gaussian noise is exact (σ²I); every other
// kind is the empirical covariance of `n_samples` draws from a stream seeded by
// (spec, seed), shrunk by 1e-6·tr/d on the diagonal.
Eigen::MatrixXd input_covariance(const AugmentationSpec& spec, const Eigen::VectorXd& x,
                                 const ReferencePool* pool = nullptr,
                                 Eigen::Index n_samples = kCovarianceSamples,
                                 std::uint64_t seed = 0);

// Memoizes input_covariance per (spec, x). Not thread-safe.
class CovarianceCache {
public:
  explicit CovarianceCache(Eigen::Index n_samples = kCovarianceSamples, std::uint64_t seed = 0)
      : n_samples_(n_samples), seed_(seed) {}

  const Eigen::MatrixXd& get(const AugmentationSpec& spec, const Eigen::VectorXd& x,
                             const ReferencePool* pool);
  std::size_t size() const noexcept { return entries_.size(); }

private:
  Eigen::Index n_samples_;
  std::uint64_t seed_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, Eigen::MatrixXd> entries_;
};

// μ_k = f(x); Σ_{k,i} = (1/n_aug) gᵢᵀ Σ_k gᵢ + σ_εᵢ with gᵢ the input gradient at x.
ComponentMoments delta_method_moments(const ModelView& model, const Eigen::VectorXd& x,
                                      const AugmentationSpec& spec, const NoiseConfig& noise,
                                      const ReferencePool* pool = nullptr,
                                      CovarianceCache* cache = nullptr);

// Same quantity with the delta step replaced by the empirical covariance matrix.
ComponentMoments delta_method_moments(const ModelView& model, const Eigen::VectorXd& x,
                                      const Eigen::MatrixXd& input_cov, const NoiseConfig& noise);

// Empirical mean and (unbiased variance / n_aug + σ_ε) of f(φ_k(x)).
ComponentMoments mc_moments(const ModelView& model, const Eigen::VectorXd& x,
                            const AugmentationSpec& spec, Eigen::Index n_samples,
                            const NoiseConfig& noise, Rng& rng,
                            const ReferencePool* pool = nullptr);

// Moments from already evaluated outputs f(φ_k(x)), one draw per row.
ComponentMoments moments_from_outputs(const Eigen::MatrixXd& outputs, const NoiseConfig& noise);

} // namespace vbtta
