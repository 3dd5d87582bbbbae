#include <algorithm>
#include <cmath>

#include "vbtta/error.hpp"
#include "vbtta/vbcore.hpp"

namespace vbtta {

ProbitComponent probit_from_moments(const ComponentMoments& moments) {
  return ProbitComponent{moments.mean, moments.variance.array().sqrt().matrix()};
}

double probit_class_probability(const ProbitComponent& component, Eigen::Index cls, double tol) {
  const Eigen::Index classes = component.means.size();
  if (classes < 2) {
    throw DomainError("probit: need at least two classes");
  }
  if (component.sds.size() != classes || (component.sds.array() <= 0.0).any()) {
    throw DomainError("probit: one positive standard deviation per class required");
  }
  if (cls < 0 || cls >= classes) {
    throw DomainError("probit: class index out of range");
  }
  const auto& mu = component.means;
  const auto& sd = component.sds;

  // (1 - Φ(z_j)) · p_j(v), with p_j the density of max_{i≠j} Z_i:
  // p_j(v) = Σ_{i≠j} φ(z_i)/σ_i · Π_{l≠i,j} Φ(z_l).
  auto integrand = [&](double v) {
    double density = 0.0;
    for (Eigen::Index i = 0; i < classes; ++i) {
      if (i == cls) {
        continue;
      }
      double term = std_normal_pdf((v - mu(i)) / sd(i)) / sd(i);
      for (Eigen::Index l = 0; l < classes && term != 0.0; ++l) {
        if (l != cls && l != i) {
          term *= std_normal_cdf((v - mu(l)) / sd(l));
        }
      }
      density += term;
    }
    return std_normal_cdf(-(v - mu(cls)) / sd(cls)) * density;
  };

  // Break the real line at the latent means so every finite panel holds at
  // most one mode edge; tails go to the infinite-range rule.
  std::vector<double> knots(mu.data(), mu.data() + classes);
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  const double inf = std::numeric_limits<double>::infinity();
  double total = 0.0;
  const double piece_tol = tol / static_cast<double>(knots.size() + 1);
  auto add = [&](double a, double b) {
    const auto r = adaptive_quadrature(integrand, a, b, piece_tol);
    if (!r.converged) {
      throw NumericalError("probit: quadrature did not converge");
    }
    total += r.value;
  };
  add(-inf, knots.front());
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    add(knots[i], knots[i + 1]);
  }
  add(knots.back(), inf);
  return std::clamp(total, 0.0, 1.0);
}

Eigen::VectorXd probit_class_probabilities(const ProbitComponent& component, double tol) {
  Eigen::VectorXd out(component.means.size());
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    out(j) = probit_class_probability(component, j, tol);
  }
  return out;
}

namespace {

double log_likelihood(const std::vector<std::vector<int>>& calibration,
                      const ClassProbabilityTable& probs, const SimplexWeights& w) {
  double ll = 0.0;
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    for (int y : calibration[i]) {
      double mix = 0.0;
      for (Eigen::Index k = 0; k < w.size(); ++k) {
        mix += w[k] * probs[i][static_cast<std::size_t>(k)](y);
      }
      ll += std::log(mix);
    }
  }
  return ll;
}

} // namespace

CategoricalFit fit_categorical(const std::vector<std::vector<int>>& calibration,
                               const ClassProbabilityTable& class_probs, const FitConfig& config,
                               std::optional<SimplexWeights> init) {
  if (calibration.empty() || class_probs.size() != calibration.size()) {
    throw DomainError("fit_categorical: need class probabilities for every calibration instance");
  }
  const std::size_t k_count = class_probs.front().size();
  if (k_count == 0) {
    throw DomainError("fit_categorical: need at least one component");
  }
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    if (class_probs[i].size() != k_count) {
      throw DomainError("fit_categorical: inconsistent component counts");
    }
    for (int y : calibration[i]) {
      bool possible = false;
      for (const auto& p : class_probs[i]) {
        if (y < 0 || y >= p.size()) {
          throw DomainError("fit_categorical: label outside the class range");
        }
        possible = possible || p(y) > 0.0;
      }
      if (!possible) {
        throw DegenerateInputError("fit_categorical: label " + std::to_string(y) +
                                   " has zero probability under every component");
      }
    }
  }
  SimplexWeights weights = init.value_or(SimplexWeights::uniform(static_cast<Eigen::Index>(k_count)));
  if (weights.size() != static_cast<Eigen::Index>(k_count)) {
    throw DomainError("fit_categorical: initial weights do not match component count");
  }

  CategoricalFit fit{weights, {}, {}};
  double ll = log_likelihood(calibration, class_probs, weights);
  fit.loglik_trace.push_back(ll);
  fit.weight_trace.push_back(weights.values());
  std::vector<Eigen::MatrixXd> resp(calibration.size());
  for (int step = 0; step < config.max_steps; ++step) {
    for (std::size_t i = 0; i < calibration.size(); ++i) {
      resp[i].resize(static_cast<Eigen::Index>(calibration[i].size()), static_cast<Eigen::Index>(k_count));
      for (std::size_t j = 0; j < calibration[i].size(); ++j) {
        const int y = calibration[i][j];
        Eigen::VectorXd r(static_cast<Eigen::Index>(k_count));
        for (std::size_t k = 0; k < k_count; ++k) {
          r(static_cast<Eigen::Index>(k)) = weights[static_cast<Eigen::Index>(k)] * class_probs[i][k](y);
        }
        resp[i].row(static_cast<Eigen::Index>(j)) = (r / r.sum()).transpose();
      }
    }
    weights = mstep_weights(resp);
    const double next = log_likelihood(calibration, class_probs, weights);
    fit.loglik_trace.push_back(next);
    fit.weight_trace.push_back(weights.values());
    const double gain = next - ll;
    ll = next;
    if (config.stop_early && gain < config.rel_tol * std::abs(ll)) {
      break;
    }
  }
  fit.weights = weights;
  return fit;
}

} // namespace vbtta
