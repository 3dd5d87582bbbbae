#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "vbtta/adam.hpp"
#include "vbtta/error.hpp"
#include "vbtta/mathstats.hpp"
#include "vbtta/vbcore.hpp"

namespace vbtta {

// One block of the latent vector.
//   simplex(K):           K weights  <-> K-1 additive log-ratios (last coordinate is the reference)
//   positive_definite(c): c x c SPD matrix, column-major  <-> log-Cholesky, c(c+1)/2 values
//   identity(n):          n reals, unchanged
struct TransformBlock {
  enum class Kind { simplex, positive_definite, identity };
  Kind kind = Kind::identity;
  Eigen::Index size = 0; // K, c or n

  Eigen::Index constrained_size() const noexcept;
  Eigen::Index unconstrained_size() const noexcept;
};

class TransformSpec {
public:
  TransformSpec() = default;
  explicit TransformSpec(std::vector<TransformBlock> blocks);

  TransformSpec& simplex(Eigen::Index k);
  TransformSpec& positive_definite(Eigen::Index c);
  TransformSpec& identity(Eigen::Index n);

  const std::vector<TransformBlock>& blocks() const noexcept { return blocks_; }
  Eigen::Index constrained_size() const noexcept;
  Eigen::Index unconstrained_size() const noexcept;

private:
  std::vector<TransformBlock> blocks_;
};

struct Constrained {
  Eigen::VectorXd value;       // η
  double log_abs_det_jacobian; // ln|det J_{T⁻¹}(ζ)|
};

// Throws DomainError on boundary points (a zero weight, a non-SPD block).
Eigen::VectorXd to_unconstrained(const TransformSpec& transform, const Eigen::VectorXd& eta);
Constrained from_unconstrained(const TransformSpec& transform, const Eigen::VectorXd& zeta);

// q(ζ) = N(mean, L Lᵀ), L lower triangular with positive diagonal.
struct FullRankGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd chol;

  static FullRankGaussian standard(Eigen::Index m, double scale = 1.0);
  Eigen::Index dim() const noexcept { return mean.size(); }
  void validate() const;
  double entropy() const;
  Eigen::VectorXd draw(Rng& rng) const;
};

// ln p(data, η) on the constrained latent vector.
using LogJoint = std::function<double(const Eigen::VectorXd&)>;

// E_q[ln p(T⁻¹(ζ)) + ln|det J_{T⁻¹}(ζ)|] + H(q), by n_mc reparameterized draws.
// Draws with a non-finite integrand are replaced; 100 rejections in a row
// raise NumericalError.
double advi_elbo_estimate(const FullRankGaussian& q, const TransformSpec& transform,
                          const LogJoint& log_joint, int n_mc, Rng& rng);

struct AdviConfig {
  AdamConfig adam{0.01, 0.9, 0.999, 1e-8};
  int steps = 2000;
  // Standard-normal draws shared by every step. They are whitened to exact
  // zero mean and identity covariance when n_mc exceeds the latent dimension.
  int n_mc = 32;
  std::uint64_t seed = 0;
  // Called with the step index and q before each update and after the last.
  std::function<void(int, const FullRankGaussian&)> on_step;
};

struct AdviFit {
  FullRankGaussian q;
  std::vector<double> elbo_trace; // objective before each step, then after the last
};

// Thrown when the objective or the parameters stop being finite.
class AdviDivergenceError : public DivergenceError {
public:
  AdviDivergenceError(const std::string& what, std::vector<double> trace)
      : DivergenceError(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

private:
  std::vector<double> trace_;
};

AdviFit advi_fit(const LogJoint& log_joint, const TransformSpec& transform,
                 const FullRankGaussian& init, const AdviConfig& config);

// The weight model of fit_continuous written as a log joint over global
// latents: w on the simplex, offsets δ_k ~ N(0, β⁻¹I) and precision factors
// Λ_k. Label j of instance i has density N(y | center_ik + δ_k, P_ik⁻¹),
// where P_ik = D^{-1/2} Λ_k D^{-1/2} with D = diag(Σ_k(x_i)) and
// Λ_k ~ W(ν, νI) when the prior is moment informed, else P_ik = Λ_k with
// Λ_k ~ W(ν, V). The weight prior is flat on the simplex.
// With weights_only the model keeps δ_k = 0 and P_ik at its prior mean
// (D⁻¹, or νV⁻¹ without moment information).
struct VbttaAdviModel {
  TransformSpec transform;
  LogJoint log_joint;
  Eigen::Index components = 0;
  bool weights_only = false;
  Eigen::VectorXd prior_point; // constrained latents at their prior means

  FullRankGaussian initial_q(double scale = 0.1) const;
  Eigen::VectorXd posterior_mean_weights(const FullRankGaussian& q, int n_draws, Rng& rng) const;
  Eigen::VectorXd weights_at(const Eigen::VectorXd& zeta) const;
};

VbttaAdviModel vbtta_advi_model(const std::vector<LabelSet>& calibration, const MomentTable& moments,
                                const PriorConfig& prior, bool weights_only = false);

// Text format: "vbtta-advi 1", "m <n>", "mean ..." and m rows of L.
void write_gaussian(std::ostream& out, const FullRankGaussian& q);
FullRankGaussian read_gaussian(std::istream& in);

} // namespace vbtta
