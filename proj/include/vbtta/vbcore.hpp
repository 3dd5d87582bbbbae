#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vbtta/augment.hpp"
#include "vbtta/mathstats.hpp"
#include "vbtta/moments.hpp"

namespace vbtta {

// Nonnegative weights summing to one (within 1e-12).
class SimplexWeights {
public:
  explicit SimplexWeights(Eigen::VectorXd values);
  static SimplexWeights uniform(Eigen::Index k);

  const Eigen::VectorXd& values() const noexcept { return values_; }
  Eigen::Index size() const noexcept { return values_.size(); }
  double operator[](Eigen::Index k) const { return values_(k); }

private:
  Eigen::VectorXd values_;
};

// Noisy labels attached to one instance; each label is a c-vector.
using LabelSet = std::vector<Eigen::VectorXd>;
LabelSet scalar_labels(std::span<const double> values);
LabelSet scalar_labels(std::initializer_list<double> values);

// Conjugate priors. Component offsets δ_k ~ N(0, β⁻¹ I); precisions
// Λ_k ~ W(ν, V) in the rate convention. With moment_informed set, each
// (instance, component) pair uses V = ν · diag(Σ_k(x; θ)), so the prior mean
// precision is the inverse of the augmentation-induced variance.
struct PriorConfig {
  double beta = 10.0;
  double dof = 2.0;
  Eigen::MatrixXd rate = Eigen::MatrixXd::Identity(1, 1);
  bool moment_informed = true;

  Eigen::Index dim() const noexcept { return rate.rows(); }
  void validate() const;
};

struct GaussianFactor {
  Eigen::VectorXd mean;      // m_k
  Eigen::MatrixXd precision; // G_k
};

struct WishartFactor {
  double dof = 0.0;     // ν_k
  Eigen::MatrixXd rate; // V_k
};

// Everything the responsibility update needs about one component.
// Labels enter as residuals y - center.
struct ComponentExpectations {
  Eigen::VectorXd center;
  Eigen::VectorXd mean;     // E[δ_k] = m_k
  Eigen::MatrixXd mean_cov; // G_k⁻¹
  Eigen::MatrixXd precision; // E[Λ_k]
  double log_det = 0.0;      // E[ln|Λ_k|]
};

ComponentExpectations expectations(const Eigen::VectorXd& center, const GaussianFactor& gaussian,
                                   const WishartFactor& wishart);

// p_jk ∝ exp{½E[ln|Λ_k|] + ln w_k - ½ tr(E[Λ_k] E[(r_jk - δ_k)(r_jk - δ_k)ᵀ])},
// normalized per label in log space. Returns |S_x| x K.
Eigen::MatrixXd responsibilities_continuous(const LabelSet& labels, const SimplexWeights& weights,
                                            std::span<const ComponentExpectations> components);

// G_k = βI + E[Λ_k] Σ_j p_jk,  m_k = G_k⁻¹ E[Λ_k] Σ_j p_jk (y_j - center).
GaussianFactor update_gaussian_factor(const PriorConfig& prior, const Eigen::MatrixXd& expected_precision,
                                      const LabelSet& labels, const Eigen::VectorXd& resp,
                                      const Eigen::VectorXd& center);

// ν_k = ν + Σ_j p_jk,  V_k = V + Σ_j p_jk E[(r_j - δ_k)(r_j - δ_k)ᵀ], symmetrized
// and floored to SPD at eigenvalue 1e-12.
WishartFactor update_wishart_factor(const WishartFactor& prior, const LabelSet& labels,
                                    const Eigen::VectorXd& resp, const GaussianFactor& gaussian,
                                    const Eigen::VectorXd& center);

// Wishart prior for one (instance, component) pair.
WishartFactor wishart_prior(const PriorConfig& prior, const ComponentMoments& moments);

using MomentTable = std::vector<std::vector<ComponentMoments>>; // [instance][component]

struct VariationalState {
  std::vector<Eigen::MatrixXd> responsibilities;      // per instance, |S_x| x K
  std::vector<std::vector<GaussianFactor>> gaussian; // [instance][component]
  std::vector<std::vector<WishartFactor>> wishart;   // [instance][component]
};

// Initial factors: m_k = 0, G_k = βI, ν_k = ν + 1, V_k = (ν + 1)·diag(Σ_k),
// and responsibilities computed from those under `weights`.
VariationalState initial_state(const std::vector<LabelSet>& calibration, const MomentTable& moments,
                               const PriorConfig& prior, const SimplexWeights& weights);

struct ElboTerms {
  double likelihood = 0.0;         // J_{S|η}
  double assignment = 0.0;         // J_z
  double mean_prior = 0.0;         // J_μ
  double precision_prior = 0.0;    // J_Σ
  double assignment_entropy = 0.0; // Π_z
  double mean_entropy = 0.0;       // Π_μ
  double precision_entropy = 0.0;  // Π_Σ

  double total() const noexcept {
    return likelihood + assignment + mean_prior + precision_prior - assignment_entropy -
           mean_entropy - precision_entropy;
  }
};

// Full variational lower bound summed over instances. Throws NumericalError
// naming the first non-finite term.
ElboTerms elbo_continuous(const VariationalState& state, const std::vector<LabelSet>& calibration,
                          const SimplexWeights& weights, const PriorConfig& prior,
                          const MomentTable& moments);

// w_k ∝ Σ_{i,j} p_ijk.
SimplexWeights mstep_weights(std::span<const Eigen::MatrixXd> responsibilities);

struct FitConfig {
  int max_steps = 300;   // EM iterations
  double rel_tol = 1e-8; // stop once the ELBO gain falls below rel_tol·|ELBO|
  bool stop_early = true;
};

struct ContinuousFit {
  SimplexWeights weights;
  VariationalState state;
  std::vector<double> elbo_trace;                // [0] at initialization, then one per iteration
  std::vector<Eigen::VectorXd> weight_trace;     // weights in force for each elbo_trace entry
};

ContinuousFit fit_continuous(const std::vector<LabelSet>& calibration, const MomentTable& moments,
                             const PriorConfig& prior, const FitConfig& config = {});

// Multinomial probit component: independent latent utilities Z_i ~ N(means_i, sds_i²).
struct ProbitComponent {
  Eigen::VectorXd means;
  Eigen::VectorXd sds;
};

ProbitComponent probit_from_moments(const ComponentMoments& moments);

// P(Y = j) = P(Z_j = max_i Z_i), by adaptive quadrature over the maximum of the others.
double probit_class_probability(const ProbitComponent& component, Eigen::Index cls,
                                double tol = kDefaultQuadratureTol);
Eigen::VectorXd probit_class_probabilities(const ProbitComponent& component,
                                           double tol = kDefaultQuadratureTol);

using ClassProbabilityTable = std::vector<std::vector<Eigen::VectorXd>>; // [instance][component] -> P(Y = ·)

struct CategoricalFit {
  SimplexWeights weights;
  std::vector<double> loglik_trace;          // [0] at initialization
  std::vector<Eigen::VectorXd> weight_trace; // weights in force for each loglik_trace entry
};

// EM on Π_j Σ_k w_k P_k(Y = y_j) with fixed component class probabilities.
CategoricalFit fit_categorical(const std::vector<std::vector<int>>& calibration,
                               const ClassProbabilityTable& class_probs, const FitConfig& config = {},
                               std::optional<SimplexWeights> init = std::nullopt);

enum class Task { regression, classification };

struct WeightedPrediction {
  Eigen::VectorXd combined; // weighted mean output (regression) or class probabilities
  int label = -1;           // argmax class for classification
};

// Σ_k w_k · (mean over n_samples of f(φ_k(x))); for classification the model
// outputs pass through softmax first. Each augmentation draws from
// rng.split(spec_hash(spec)), so results do not depend on list order.
WeightedPrediction predict_weighted(const ModelView& model, const Eigen::VectorXd& x,
                                    std::span<const AugmentationSpec> specs,
                                    const SimplexWeights& weights, Eigen::Index n_samples,
                                    const Rng& rng, const ReferencePool* pool = nullptr,
                                    Task task = Task::regression);

// K x out matrix of per-component mean outputs (softmax applied first for
// classification); the building block of predict_weighted.
Eigen::MatrixXd component_outputs(const ModelView& model, const Eigen::VectorXd& x,
                                  std::span<const AugmentationSpec> specs, Eigen::Index n_samples,
                                  const Rng& rng, const ReferencePool* pool = nullptr,
                                  Task task = Task::regression);

// Combines per-component average outputs (K x out) with weights.
WeightedPrediction combine_components(const Eigen::MatrixXd& component_outputs,
                                      const SimplexWeights& weights, Task task);

// Versioned text record of a weight fit.
struct FitRecord {
  std::vector<std::string> specs; // canonical augmentation descriptions
  SimplexWeights weights;
  std::vector<double> elbo_trace;
};

void write_fit_record(std::ostream& out, const FitRecord& record);
FitRecord read_fit_record(std::istream& in);

} // namespace vbtta
