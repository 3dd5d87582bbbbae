#include "vbtta/moments.hpp"

#include "vbtta/error.hpp"

namespace vbtta {

Eigen::MatrixXd ModelView::evaluate_rows(const Eigen::MatrixXd& inputs) const {
  if (batch) {
    return batch(inputs);
  }
  Eigen::MatrixXd out;
  for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
    const Eigen::VectorXd y = value(inputs.row(r).transpose());
    if (r == 0) {
      out.resize(inputs.rows(), y.size());
    }
    out.row(r) = y.transpose();
  }
  return out;
}

ModelView view_of(const MlpModel& model) {
  const MlpModel* m = &model;
  return ModelView{
      [m](const Eigen::VectorXd& x) { return forward(*m, x); },
      [m](const Eigen::VectorXd& x) { return input_gradient(*m, x); },
      [m](const Eigen::MatrixXd& rows) { return forward_batch(*m, rows); },
  };
}

double NoiseConfig::noise_for(Eigen::Index output) const {
  return sigma_eps.size() == 1 ? sigma_eps(0) : sigma_eps(output);
}

void NoiseConfig::validate() const {
  if (sigma_eps.size() < 1 || (sigma_eps.array() <= 0.0).any()) {
    throw DomainError("noise: sigma_eps must be positive");
  }
  if (n_aug < 1) {
    throw DomainError("noise: n_aug must be at least 1");
  }
}

namespace {

std::uint64_t hash_vector(const Eigen::VectorXd& x) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(x.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(x.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

} // namespace

Eigen::MatrixXd input_covariance(const AugmentationSpec& spec, const Eigen::VectorXd& x,
                                 const ReferencePool* pool, Eigen::Index n_samples,
                                 std::uint64_t seed) {
  const Eigen::Index d = x.size();
  if (const auto* g = std::get_if<GaussianNoiseAug>(&spec)) {
    validate(spec, d);
    Eigen::VectorXd var(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double s = g->sigma.size() == 1 ? g->sigma(0) : g->sigma(i);
      var(i) = s * s;
    }
    return var.asDiagonal();
  }
  if (n_samples < 2) {
    throw DomainError("input_covariance: need at least two samples");
  }
  Rng rng = Rng(seed).split(spec_hash(spec));
  const Eigen::MatrixXd draws = induced_distribution_sample(spec, x, n_samples, rng, pool);
  const Eigen::MatrixXd centered = draws.rowwise() - draws.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n_samples - 1);
  const double ridge = 1e-6 * cov.trace() / static_cast<double>(d);
  cov.diagonal().array() += ridge;
  if (!(ridge > 0.0) || !is_spd(cov)) {
    throw DegenerateInputError("input_covariance: " + describe(spec) +
                               " induces no spread around x");
  }
  return cov;
}

const Eigen::MatrixXd& CovarianceCache::get(const AugmentationSpec& spec, const Eigen::VectorXd& x,
                                            const ReferencePool* pool) {
  const auto key = std::make_pair(spec_hash(spec), hash_vector(x));
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    it = entries_.emplace(key, input_covariance(spec, x, pool, n_samples_, seed_)).first;
  }
  return it->second;
}

ComponentMoments delta_method_moments(const ModelView& model, const Eigen::VectorXd& x,
                                      const Eigen::MatrixXd& input_cov, const NoiseConfig& noise) {
  noise.validate();
  ComponentMoments out;
  out.provenance = MomentProvenance::delta;
  out.mean = model.value(x);
  const Eigen::MatrixXd jac = model.jacobian(x);
  if (jac.cols() != input_cov.rows() || jac.rows() != out.mean.size()) {
    throw DomainError("delta_method_moments: Jacobian shape does not match covariance/output");
  }
  out.variance.resize(out.mean.size());
  const double inv_n = 1.0 / static_cast<double>(noise.n_aug);
  for (Eigen::Index i = 0; i < out.mean.size(); ++i) {
    const Eigen::RowVectorXd g = jac.row(i);
    out.variance(i) = inv_n * (g * input_cov * g.transpose())(0, 0) + noise.noise_for(i);
  }
  return out;
}

ComponentMoments delta_method_moments(const ModelView& model, const Eigen::VectorXd& x,
                                      const AugmentationSpec& spec, const NoiseConfig& noise,
                                      const ReferencePool* pool, CovarianceCache* cache) {
  if (cache != nullptr) {
    return delta_method_moments(model, x, cache->get(spec, x, pool), noise);
  }
  return delta_method_moments(model, x, input_covariance(spec, x, pool), noise);
}

ComponentMoments moments_from_outputs(const Eigen::MatrixXd& outputs, const NoiseConfig& noise) {
  noise.validate();
  const Eigen::Index n = outputs.rows();
  if (n < 2) {
    throw DomainError("mc_moments: need at least two samples");
  }
  ComponentMoments out;
  out.provenance = MomentProvenance::monte_carlo;
  out.mean = outputs.colwise().mean().transpose();
  const Eigen::MatrixXd centered = outputs.rowwise() - out.mean.transpose();
  out.variance = centered.colwise().squaredNorm().transpose() / static_cast<double>(n - 1);
  out.variance /= static_cast<double>(noise.n_aug);
  for (Eigen::Index i = 0; i < out.variance.size(); ++i) {
    out.variance(i) += noise.noise_for(i);
  }
  return out;
}

ComponentMoments mc_moments(const ModelView& model, const Eigen::VectorXd& x,
                            const AugmentationSpec& spec, Eigen::Index n_samples,
                            const NoiseConfig& noise, Rng& rng, const ReferencePool* pool) {
  if (n_samples < 2) {
    throw DomainError("mc_moments: need at least two samples");
  }
  // Evaluate in blocks to bound memory at 10⁶ draws.
  constexpr Eigen::Index kBlock = 4096;
  Eigen::MatrixXd outputs;
  for (Eigen::Index start = 0; start < n_samples; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, n_samples - start);
    const Eigen::MatrixXd draws = induced_distribution_sample(spec, x, len, rng, pool);
    const Eigen::MatrixXd y = model.evaluate_rows(draws);
    if (start == 0) {
      outputs.resize(n_samples, y.cols());
    }
    outputs.middleRows(start, len) = y;
  }
  return moments_from_outputs(outputs, noise);
}

} // namespace vbtta
