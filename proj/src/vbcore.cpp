#include "vbtta/vbcore.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "vbtta/error.hpp"

namespace vbtta {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kEigenFloor = 1e-12;

double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("matrix expected to be SPD is not");
  }
  return llt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
}

Eigen::MatrixXd floor_spd(const Eigen::MatrixXd& a) {
  Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  if (sym.rows() == 1) {
    sym(0, 0) = std::max(sym(0, 0), kEigenFloor);
    return sym;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.eigenvalues().minCoeff() >= kEigenFloor) {
    return sym;
  }
  const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(kEigenFloor);
  return eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
}

} // namespace

SimplexWeights::SimplexWeights(Eigen::VectorXd values) : values_(std::move(values)) {
  if (values_.size() < 1) {
    throw DomainError("SimplexWeights: need at least one component");
  }
  if (!values_.allFinite() || (values_.array() < 0.0).any()) {
    throw DomainError("SimplexWeights: weights must be finite and nonnegative");
  }
  if (std::abs(values_.sum() - 1.0) > 1e-12) {
    throw DomainError("SimplexWeights: weights must sum to one");
  }
}

SimplexWeights SimplexWeights::uniform(Eigen::Index k) {
  if (k < 1) {
    throw DomainError("SimplexWeights: need at least one component");
  }
  return SimplexWeights(Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k)));
}

LabelSet scalar_labels(std::span<const double> values) {
  LabelSet out;
  out.reserve(values.size());
  for (double v : values) {
    out.push_back(Eigen::VectorXd::Constant(1, v));
  }
  return out;
}

LabelSet scalar_labels(std::initializer_list<double> values) {
  return scalar_labels(std::span<const double>(values.begin(), values.size()));
}

void PriorConfig::validate() const {
  if (!(beta > 0.0)) {
    throw DomainError("prior: beta must be positive");
  }
  if (!(dof > static_cast<double>(dim()) - 1.0)) {
    throw DomainError("prior: nu must exceed c - 1");
  }
  if (!is_spd(rate)) {
    throw DomainError("prior: V must be SPD");
  }
}

ComponentExpectations expectations(const Eigen::VectorXd& center, const GaussianFactor& gaussian,
                                   const WishartFactor& wishart) {
  const auto w = wishart_expectations(wishart.dof, wishart.rate);
  return ComponentExpectations{center, gaussian.mean, spd_inverse(gaussian.precision), w.precision,
                               w.log_det};
}

Eigen::MatrixXd responsibilities_continuous(const LabelSet& labels, const SimplexWeights& weights,
                                            std::span<const ComponentExpectations> components) {
  const auto k_count = static_cast<Eigen::Index>(components.size());
  if (weights.size() != k_count) {
    throw DomainError("responsibilities: weight count does not match components");
  }
  const auto j_count = static_cast<Eigen::Index>(labels.size());
  Eigen::MatrixXd resp(j_count, k_count);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < j_count; ++j) {
    Eigen::VectorXd log_p(k_count);
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const auto& comp = components[static_cast<std::size_t>(k)];
      if (weights[k] == 0.0) {
        log_p(k) = kNegInf;
        continue;
      }
      const Eigen::VectorXd r = labels[static_cast<std::size_t>(j)] - comp.center - comp.mean;
      const double quad = (r.transpose() * comp.precision * r)(0, 0) +
                          (comp.precision.cwiseProduct(comp.mean_cov)).sum();
      log_p(k) = 0.5 * comp.log_det + std::log(weights[k]) - 0.5 * quad;
    }
    const double top = log_p.maxCoeff();
    if (!std::isfinite(top)) {
      throw NumericalError("responsibilities: no component can explain label " + std::to_string(j));
    }
    // std::exp rather than Eigen's vectorized exp, which clamps -inf to a denormal.
    const Eigen::ArrayXd e = (log_p.array() - top).unaryExpr([](double t) { return std::exp(t); });
    resp.row(j) = (e / e.sum()).matrix().transpose();
  }
  return resp;
}

GaussianFactor update_gaussian_factor(const PriorConfig& prior, const Eigen::MatrixXd& expected_precision,
                                      const LabelSet& labels, const Eigen::VectorXd& resp,
                                      const Eigen::VectorXd& center) {
  const Eigen::Index c = center.size();
  double mass = 0.0;
  Eigen::VectorXd weighted = Eigen::VectorXd::Zero(c);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const double p = resp(static_cast<Eigen::Index>(j));
    mass += p;
    weighted += p * (labels[j] - center);
  }
  GaussianFactor out;
  out.precision = prior.beta * Eigen::MatrixXd::Identity(c, c) + expected_precision * mass;
  out.precision = 0.5 * (out.precision + out.precision.transpose());
  out.mean = out.precision.llt().solve(expected_precision * weighted);
  return out;
}

WishartFactor update_wishart_factor(const WishartFactor& prior, const LabelSet& labels,
                                    const Eigen::VectorXd& resp, const GaussianFactor& gaussian,
                                    const Eigen::VectorXd& center) {
  const Eigen::MatrixXd mean_cov = spd_inverse(gaussian.precision);
  WishartFactor out{prior.dof, prior.rate};
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const double p = resp(static_cast<Eigen::Index>(j));
    const Eigen::VectorXd r = labels[j] - center - gaussian.mean;
    out.dof += p;
    out.rate += p * (r * r.transpose() + mean_cov);
  }
  out.rate = floor_spd(out.rate);
  return out;
}

WishartFactor wishart_prior(const PriorConfig& prior, const ComponentMoments& moments) {
  if (!prior.moment_informed) {
    return WishartFactor{prior.dof, prior.rate};
  }
  if (moments.variance.size() != prior.dim()) {
    throw DomainError("wishart_prior: moment dimension does not match prior dimension");
  }
  if ((moments.variance.array() <= 0.0).any()) {
    throw DomainError("wishart_prior: component variances must be positive");
  }
  return WishartFactor{prior.dof, Eigen::MatrixXd(prior.dof * moments.variance.asDiagonal())};
}

namespace {

void check_shapes(const std::vector<LabelSet>& calibration, const MomentTable& moments,
                  const PriorConfig& prior) {
  if (calibration.empty()) {
    throw DomainError("fit: calibration set is empty");
  }
  if (moments.size() != calibration.size()) {
    throw DomainError("fit: need one row of component moments per calibration instance");
  }
  const std::size_t k = moments.front().size();
  if (k == 0) {
    throw DomainError("fit: need at least one component");
  }
  for (std::size_t i = 0; i < moments.size(); ++i) {
    if (moments[i].size() != k) {
      throw DomainError("fit: every instance needs the same number of components");
    }
    for (const auto& m : moments[i]) {
      if (m.mean.size() != prior.dim() || m.variance.size() != prior.dim()) {
        throw DomainError("fit: moment dimension does not match prior dimension");
      }
    }
    for (const auto& y : calibration[i]) {
      if (y.size() != prior.dim()) {
        throw DomainError("fit: label dimension does not match prior dimension");
      }
    }
  }
}

std::vector<ComponentExpectations> instance_expectations(const VariationalState& state,
                                                         const MomentTable& moments, std::size_t i) {
  std::vector<ComponentExpectations> out;
  out.reserve(moments[i].size());
  for (std::size_t k = 0; k < moments[i].size(); ++k) {
    out.push_back(expectations(moments[i][k].mean, state.gaussian[i][k], state.wishart[i][k]));
  }
  return out;
}

} // namespace

VariationalState initial_state(const std::vector<LabelSet>& calibration, const MomentTable& moments,
                               const PriorConfig& prior, const SimplexWeights& weights) {
  prior.validate();
  check_shapes(calibration, moments, prior);
  const Eigen::Index c = prior.dim();
  VariationalState state;
  state.gaussian.resize(calibration.size());
  state.wishart.resize(calibration.size());
  state.responsibilities.resize(calibration.size());
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    for (const auto& m : moments[i]) {
      state.gaussian[i].push_back(
          GaussianFactor{Eigen::VectorXd::Zero(c), prior.beta * Eigen::MatrixXd::Identity(c, c)});
      // ν_k = ν + 1 and V_k chosen so that ν_k V_k⁻¹ = diag(Σ_k)⁻¹.
      const double dof = prior.dof + 1.0;
      const Eigen::MatrixXd rate =
          prior.moment_informed ? Eigen::MatrixXd(dof * m.variance.asDiagonal())
                                : Eigen::MatrixXd(dof / prior.dof * prior.rate);
      state.wishart[i].push_back(WishartFactor{dof, rate});
    }
    const auto comps = instance_expectations(state, moments, i);
    state.responsibilities[i] = responsibilities_continuous(calibration[i], weights, comps);
  }
  return state;
}

ElboTerms elbo_continuous(const VariationalState& state, const std::vector<LabelSet>& calibration,
                          const SimplexWeights& weights, const PriorConfig& prior,
                          const MomentTable& moments) {
  const double c = static_cast<double>(prior.dim());
  ElboTerms t;
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    const Eigen::MatrixXd& resp = state.responsibilities[i];
    for (std::size_t k = 0; k < moments[i].size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const GaussianFactor& g = state.gaussian[i][k];
      const WishartFactor& w = state.wishart[i][k];
      const WishartFactor w0 = wishart_prior(prior, moments[i][k]);
      const auto e = expectations(moments[i][k].mean, g, w);
      const double trace_cov = (e.precision.cwiseProduct(e.mean_cov)).sum();

      for (std::size_t j = 0; j < calibration[i].size(); ++j) {
        const double p = resp(static_cast<Eigen::Index>(j), kk);
        const Eigen::VectorXd r = calibration[i][j] - e.center - e.mean;
        const double quad = (r.transpose() * e.precision * r)(0, 0) + trace_cov;
        t.likelihood += p * (0.5 * e.log_det - 0.5 * c * kLog2Pi - 0.5 * quad);
        t.assignment += xlogy(p, weights[kk]);
        t.assignment_entropy += xlogy(p, p);
      }

      t.mean_prior += 0.5 * c * std::log(prior.beta / (2.0 * std::numbers::pi)) -
                      0.5 * prior.beta * (e.mean_cov.trace() + g.mean.squaredNorm());
      t.precision_prior += wishart_log_normalizer(w0.dof, w0.rate) +
                           0.5 * (w0.dof - c - 1.0) * e.log_det -
                           0.5 * (w0.rate.cwiseProduct(e.precision)).sum();
      t.mean_entropy += -0.5 * c * (1.0 + kLog2Pi) + 0.5 * spd_log_det(g.precision);
      t.precision_entropy += wishart_log_normalizer(w.dof, w.rate) +
                             0.5 * (w.dof - c - 1.0) * e.log_det - 0.5 * w.dof * c;
    }
  }
  const std::pair<const char*, double> named[] = {
      {"J_likelihood", t.likelihood},     {"J_assignment", t.assignment},
      {"J_mean", t.mean_prior},           {"J_precision", t.precision_prior},
      {"Pi_assignment", t.assignment_entropy}, {"Pi_mean", t.mean_entropy},
      {"Pi_precision", t.precision_entropy}};
  for (const auto& [name, value] : named) {
    if (!std::isfinite(value)) {
      throw NumericalError(std::string("elbo: term ") + name + " is not finite");
    }
  }
  return t;
}

SimplexWeights mstep_weights(std::span<const Eigen::MatrixXd> responsibilities) {
  if (responsibilities.empty()) {
    throw DegenerateInputError("mstep: no responsibilities");
  }
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(responsibilities.front().cols());
  for (const auto& r : responsibilities) {
    if (r.cols() != mass.size()) {
      throw DomainError("mstep: inconsistent component counts");
    }
    mass += r.colwise().sum().transpose();
  }
  const double total = mass.sum();
  if (!(total > 0.0)) {
    throw DegenerateInputError("mstep: zero total responsibility mass");
  }
  Eigen::VectorXd w = mass / total;
  // Absorb rounding so the simplex invariant holds to the last bit we can control.
  w /= w.sum();
  return SimplexWeights(std::move(w));
}

ContinuousFit fit_continuous(const std::vector<LabelSet>& calibration, const MomentTable& moments,
                             const PriorConfig& prior, const FitConfig& config) {
  prior.validate();
  check_shapes(calibration, moments, prior);
  if (config.max_steps < 0) {
    throw DomainError("fit_continuous: max_steps must be nonnegative");
  }
  const auto k_count = static_cast<Eigen::Index>(moments.front().size());
  SimplexWeights weights = SimplexWeights::uniform(k_count);
  VariationalState state = initial_state(calibration, moments, prior, weights);

  ContinuousFit fit{weights, {}, {}, {}};
  double elbo = elbo_continuous(state, calibration, weights, prior, moments).total();
  fit.elbo_trace.push_back(elbo);
  fit.weight_trace.push_back(weights.values());

  for (int step = 0; step < config.max_steps; ++step) {
    // E-step, instance by instance: Q_z, then Q_μ, then Q_Σ.
    for (std::size_t i = 0; i < calibration.size(); ++i) {
      const auto comps = instance_expectations(state, moments, i);
      state.responsibilities[i] = responsibilities_continuous(calibration[i], weights, comps);
      for (std::size_t k = 0; k < moments[i].size(); ++k) {
        const Eigen::VectorXd resp = state.responsibilities[i].col(static_cast<Eigen::Index>(k));
        const auto& center = moments[i][k].mean;
        state.gaussian[i][k] =
            update_gaussian_factor(prior, comps[k].precision, calibration[i], resp, center);
        state.wishart[i][k] = update_wishart_factor(wishart_prior(prior, moments[i][k]), calibration[i],
                                                    resp, state.gaussian[i][k], center);
      }
    }
    // M-step.
    weights = mstep_weights(state.responsibilities);

    const double next = elbo_continuous(state, calibration, weights, prior, moments).total();
    fit.elbo_trace.push_back(next);
    fit.weight_trace.push_back(weights.values());
    const double gain = next - elbo;
    elbo = next;
    if (config.stop_early && gain < config.rel_tol * std::abs(elbo)) {
      break;
    }
  }
  fit.weights = weights;
  fit.state = std::move(state);
  return fit;
}

} // namespace vbtta
