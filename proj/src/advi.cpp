#include "vbtta/advi.hpp"

#include <cmath>
#include <istream>
#include <memory>
#include <numbers>
#include <ostream>

#include "vbtta/text.hpp"

namespace vbtta {

namespace {

constexpr int kMaxRejections = 100;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double log_sum_exp(const Eigen::VectorXd& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) {
    return top;
  }
  return top + std::log((v.array() - top).unaryExpr([](double t) { return std::exp(t); }).sum());
}

// Unit standard-normal vector.
Eigen::VectorXd normal_vector(Eigen::Index m, Rng& rng) {
  Eigen::VectorXd e(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    e(i) = rng.normal();
  }
  return e;
}

} // namespace

Eigen::Index TransformBlock::constrained_size() const noexcept {
  switch (kind) {
  case Kind::simplex:
    return size;
  case Kind::positive_definite:
    return size * size;
  case Kind::identity:
    return size;
  }
  return 0;
}

Eigen::Index TransformBlock::unconstrained_size() const noexcept {
  switch (kind) {
  case Kind::simplex:
    return size - 1;
  case Kind::positive_definite:
    return size * (size + 1) / 2;
  case Kind::identity:
    return size;
  }
  return 0;
}

TransformSpec::TransformSpec(std::vector<TransformBlock> blocks) {
  for (const auto& b : blocks) {
    switch (b.kind) {
    case TransformBlock::Kind::simplex:
      simplex(b.size);
      break;
    case TransformBlock::Kind::positive_definite:
      positive_definite(b.size);
      break;
    case TransformBlock::Kind::identity:
      identity(b.size);
      break;
    }
  }
}

TransformSpec& TransformSpec::simplex(Eigen::Index k) {
  if (k < 1) {
    throw DomainError("simplex block needs at least one coordinate");
  }
  blocks_.push_back({TransformBlock::Kind::simplex, k});
  return *this;
}

TransformSpec& TransformSpec::positive_definite(Eigen::Index c) {
  if (c < 1) {
    throw DomainError("positive definite block needs dimension at least 1");
  }
  blocks_.push_back({TransformBlock::Kind::positive_definite, c});
  return *this;
}

TransformSpec& TransformSpec::identity(Eigen::Index n) {
  if (n < 0) {
    throw DomainError("identity block size must be nonnegative");
  }
  blocks_.push_back({TransformBlock::Kind::identity, n});
  return *this;
}

Eigen::Index TransformSpec::constrained_size() const noexcept {
  Eigen::Index n = 0;
  for (const auto& b : blocks_) {
    n += b.constrained_size();
  }
  return n;
}

Eigen::Index TransformSpec::unconstrained_size() const noexcept {
  Eigen::Index n = 0;
  for (const auto& b : blocks_) {
    n += b.unconstrained_size();
  }
  return n;
}

Eigen::VectorXd to_unconstrained(const TransformSpec& transform, const Eigen::VectorXd& eta) {
  if (eta.size() != transform.constrained_size()) {
    throw DomainError("to_unconstrained: latent vector has the wrong length");
  }
  Eigen::VectorXd zeta(transform.unconstrained_size());
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  for (const auto& b : transform.blocks()) {
    switch (b.kind) {
    case TransformBlock::Kind::simplex: {
      const auto w = eta.segment(in, b.size);
      if (!(w.array() > 0.0).all() || std::abs(w.sum() - 1.0) > 1e-9) {
        throw DomainError("to_unconstrained: simplex block must be strictly positive and sum to one");
      }
      const double ref = std::log(w(b.size - 1));
      for (Eigen::Index i = 0; i + 1 < b.size; ++i) {
        zeta(out + i) = std::log(w(i)) - ref;
      }
      break;
    }
    case TransformBlock::Kind::positive_definite: {
      const Eigen::Index c = b.size;
      const Eigen::MatrixXd lam = Eigen::Map<const Eigen::MatrixXd>(eta.data() + in, c, c);
      Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (lam + lam.transpose()));
      if (llt.info() != Eigen::Success || !lam.allFinite()) {
        throw DomainError("to_unconstrained: positive definite block is not SPD");
      }
      const Eigen::MatrixXd l = llt.matrixL();
      Eigen::Index p = out;
      for (Eigen::Index j = 0; j < c; ++j) {
        for (Eigen::Index i = j; i < c; ++i) {
          if (i == j) {
            if (!(l(i, i) > 0.0)) {
              throw DomainError("to_unconstrained: zero Cholesky diagonal");
            }
            zeta(p++) = std::log(l(i, i));
          } else {
            zeta(p++) = l(i, j);
          }
        }
      }
      break;
    }
    case TransformBlock::Kind::identity:
      zeta.segment(out, b.size) = eta.segment(in, b.size);
      break;
    }
    in += b.constrained_size();
    out += b.unconstrained_size();
  }
  return zeta;
}

Constrained from_unconstrained(const TransformSpec& transform, const Eigen::VectorXd& zeta) {
  if (zeta.size() != transform.unconstrained_size()) {
    throw DomainError("from_unconstrained: unconstrained vector has the wrong length");
  }
  Constrained result{Eigen::VectorXd(transform.constrained_size()), 0.0};
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  for (const auto& b : transform.blocks()) {
    switch (b.kind) {
    case TransformBlock::Kind::simplex: {
      const Eigen::Index k = b.size;
      Eigen::VectorXd logits(k);
      logits.head(k - 1) = zeta.segment(in, k - 1);
      logits(k - 1) = 0.0;
      const Eigen::VectorXd log_w = logits.array() - log_sum_exp(logits);
      result.value.segment(out, k) = log_w.array().unaryExpr([](double t) { return std::exp(t); });
      result.log_abs_det_jacobian += log_w.sum();
      break;
    }
    case TransformBlock::Kind::positive_definite: {
      const Eigen::Index c = b.size;
      Eigen::MatrixXd l = Eigen::MatrixXd::Zero(c, c);
      Eigen::Index p = in;
      for (Eigen::Index j = 0; j < c; ++j) {
        for (Eigen::Index i = j; i < c; ++i) {
          if (i == j) {
            l(i, i) = std::exp(zeta(p));
            result.log_abs_det_jacobian += static_cast<double>(c - i + 1) * zeta(p);
          } else {
            l(i, j) = zeta(p);
          }
          ++p;
        }
      }
      result.log_abs_det_jacobian += static_cast<double>(c) * std::numbers::ln2;
      Eigen::Map<Eigen::MatrixXd>(result.value.data() + out, c, c) = l * l.transpose();
      break;
    }
    case TransformBlock::Kind::identity:
      result.value.segment(out, b.size) = zeta.segment(in, b.size);
      break;
    }
    in += b.unconstrained_size();
    out += b.constrained_size();
  }
  return result;
}

FullRankGaussian FullRankGaussian::standard(Eigen::Index m, double scale) {
  return FullRankGaussian{Eigen::VectorXd::Zero(m), scale * Eigen::MatrixXd::Identity(m, m)};
}

void FullRankGaussian::validate() const {
  const Eigen::Index m = mean.size();
  if (chol.rows() != m || chol.cols() != m) {
    throw DomainError("FullRankGaussian: factor must be m x m");
  }
  if (!mean.allFinite() || !chol.allFinite()) {
    throw DomainError("FullRankGaussian: non-finite parameters");
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!(chol(i, i) > 0.0)) {
      throw DomainError("FullRankGaussian: factor diagonal must be positive");
    }
    for (Eigen::Index j = i + 1; j < m; ++j) {
      if (chol(i, j) != 0.0) {
        throw DomainError("FullRankGaussian: factor must be lower triangular");
      }
    }
  }
}

double FullRankGaussian::entropy() const {
  const double m = static_cast<double>(mean.size());
  return 0.5 * m * (1.0 + kLog2Pi) + chol.diagonal().array().log().sum();
}

Eigen::VectorXd FullRankGaussian::draw(Rng& rng) const {
  return mean + chol.triangularView<Eigen::Lower>() * normal_vector(mean.size(), rng);
}

double advi_elbo_estimate(const FullRankGaussian& q, const TransformSpec& transform,
                          const LogJoint& log_joint, int n_mc, Rng& rng) {
  if (n_mc < 1) {
    throw DomainError("advi_elbo_estimate: n_mc must be at least 1");
  }
  q.validate();
  if (q.dim() != transform.unconstrained_size()) {
    throw DomainError("advi_elbo_estimate: q dimension does not match the transform");
  }
  double sum = 0.0;
  for (int s = 0; s < n_mc; ++s) {
    for (int rejected = 0;; ++rejected) {
      if (rejected == kMaxRejections) {
        throw NumericalError("advi_elbo_estimate: log joint non-finite for 100 consecutive draws");
      }
      const auto c = from_unconstrained(transform, q.draw(rng));
      const double v = log_joint(c.value) + c.log_abs_det_jacobian;
      if (std::isfinite(v)) {
        sum += v;
        break;
      }
    }
  }
  return sum / n_mc + q.entropy();
}

namespace {

// Parameter vector: mean, then the lower triangle of L column by column with
// each diagonal entry stored as its logarithm.
struct Packing {
  Eigen::Index m;

  Eigen::Index size() const { return m + m * (m + 1) / 2; }

  Eigen::VectorXd pack(const FullRankGaussian& q) const {
    Eigen::VectorXd theta(size());
    theta.head(m) = q.mean;
    Eigen::Index p = m;
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index i = j; i < m; ++i) {
        theta(p++) = i == j ? std::log(q.chol(i, i)) : q.chol(i, j);
      }
    }
    return theta;
  }

  // Applies the change theta_new - theta_old to q; diagonal entries move
  // multiplicatively so a zero change leaves them bit-identical.
  void apply(FullRankGaussian& q, const Eigen::VectorXd& old_theta, const Eigen::VectorXd& new_theta) const {
    q.mean = new_theta.head(m);
    Eigen::Index p = m;
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index i = j; i < m; ++i, ++p) {
        if (i == j) {
          q.chol(i, i) *= std::exp(new_theta(p) - old_theta(p));
        } else {
          q.chol(i, j) = new_theta(p);
        }
      }
    }
  }
};

// Log joint plus Jacobian term on ζ.
class Integrand {
public:
  Integrand(const LogJoint& log_joint, const TransformSpec& transform)
      : log_joint_(log_joint), transform_(transform) {}

  double operator()(const Eigen::VectorXd& zeta) const {
    const auto c = from_unconstrained(transform_, zeta);
    return log_joint_(c.value) + c.log_abs_det_jacobian;
  }

  // Central differences with step 1e-5·(1 + |ζ_i|). Returns false when any
  // evaluation is non-finite.
  bool value_and_gradient(Eigen::VectorXd zeta, double& value, Eigen::VectorXd& grad) const {
    value = (*this)(zeta);
    if (!std::isfinite(value)) {
      return false;
    }
    grad.resize(zeta.size());
    for (Eigen::Index i = 0; i < zeta.size(); ++i) {
      const double z0 = zeta(i);
      const double h = 1e-5 * (1.0 + std::abs(z0));
      zeta(i) = z0 + h;
      const double up = (*this)(zeta);
      zeta(i) = z0 - h;
      const double down = (*this)(zeta);
      zeta(i) = z0;
      grad(i) = (up - down) / (2.0 * h);
      if (!std::isfinite(grad(i))) {
        return false;
      }
    }
    return true;
  }

private:
  const LogJoint& log_joint_;
  const TransformSpec& transform_;
};

Eigen::MatrixXd common_draws(Eigen::Index m, int n, Rng& rng) {
  Eigen::MatrixXd e(n, m);
  for (int s = 0; s < n; ++s) {
    e.row(s) = normal_vector(m, rng).transpose();
  }
  if (n > m) {
    e.rowwise() -= e.colwise().mean();
    const Eigen::MatrixXd cov = e.transpose() * e / static_cast<double>(n);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) {
      // Rows become L⁻¹x, so the sample covariance is exactly I.
      e = llt.matrixL().solve(e.transpose()).transpose();
    }
  }
  return e;
}

} // namespace

AdviFit advi_fit(const LogJoint& log_joint, const TransformSpec& transform, const FullRankGaussian& init,
                 const AdviConfig& config) {
  init.validate();
  const Eigen::Index m = init.dim();
  if (m != transform.unconstrained_size()) {
    throw DomainError("advi_fit: initial q does not match the transform");
  }
  if (config.n_mc < 1 || config.steps < 0) {
    throw DomainError("advi_fit: need n_mc >= 1 and steps >= 0");
  }
  if (!(config.adam.learning_rate >= 0.0)) {
    throw DomainError("advi_fit: learning rate must be nonnegative");
  }

  Rng rng(config.seed);
  Eigen::MatrixXd eps = common_draws(m, config.n_mc, rng);
  const Integrand g(log_joint, transform);
  const Packing packing{m};

  AdviFit fit{init, {}};
  Eigen::VectorXd theta = packing.pack(fit.q);
  Adam adam(theta.size(), config.adam);

  // Objective and its gradient in θ at the current q.
  auto evaluate = [&](Eigen::VectorXd& grad) {
    grad.setZero(theta.size());
    double total = 0.0;
    Eigen::VectorXd zeta_grad;
    for (int s = 0; s < config.n_mc; ++s) {
      double value = 0.0;
      for (int rejected = 0;; ++rejected) {
        if (rejected == kMaxRejections) {
          throw AdviDivergenceError("advi_fit: log joint non-finite for 100 consecutive draws", fit.elbo_trace);
        }
        const Eigen::VectorXd e = eps.row(s).transpose();
        const Eigen::VectorXd zeta = fit.q.mean + fit.q.chol.triangularView<Eigen::Lower>() * e;
        if (g.value_and_gradient(zeta, value, zeta_grad)) {
          break;
        }
        eps.row(s) = normal_vector(m, rng).transpose();
      }
      total += value;
      grad.head(m) += zeta_grad;
      Eigen::Index p = m;
      for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = j; i < m; ++i, ++p) {
          const double d = zeta_grad(i) * eps(s, j);
          grad(p) += i == j ? d * fit.q.chol(i, i) : d;
        }
      }
    }
    grad /= static_cast<double>(config.n_mc);
    Eigen::Index p = m;
    for (Eigen::Index j = 0; j < m; ++j) {
      grad(p) += 1.0; // ∂H/∂ ln L_jj
      p += m - j;
    }
    return total / config.n_mc + fit.q.entropy();
  };

  Eigen::VectorXd grad;
  for (int step = 0; step <= config.steps; ++step) {
    if (config.on_step) {
      config.on_step(step, fit.q);
    }
    const double objective = evaluate(grad);
    fit.elbo_trace.push_back(objective);
    if (!std::isfinite(objective) || !grad.allFinite()) {
      throw AdviDivergenceError("advi_fit: objective became non-finite at step " + std::to_string(step),
                                fit.elbo_trace);
    }
    if (step == config.steps) {
      break;
    }
    const Eigen::VectorXd old_theta = theta;
    adam.step(theta, -grad);
    packing.apply(fit.q, old_theta, theta);
    if (!fit.q.mean.allFinite() || !fit.q.chol.allFinite() || !(fit.q.chol.diagonal().array() > 0.0).all()) {
      throw AdviDivergenceError("advi_fit: parameters diverged at step " + std::to_string(step), fit.elbo_trace);
    }
  }
  return fit;
}

namespace {

struct LabelRow {
  std::size_t instance;
  Eigen::VectorXd y;
};

class VbttaLogJoint {
public:
  VbttaLogJoint(const std::vector<LabelSet>& calibration, const MomentTable& moments, const PriorConfig& prior,
                bool weights_only)
      : k_(static_cast<Eigen::Index>(moments.front().size())), c_(prior.dim()), prior_(prior),
        weights_only_(weights_only) {
    const std::size_t n_inst = calibration.size();
    center_.resize(n_inst);
    scale_.resize(n_inst);
    log_var_sum_.resize(n_inst);
    for (std::size_t i = 0; i < n_inst; ++i) {
      if (moments[i].size() != static_cast<std::size_t>(k_)) {
        throw DomainError("vbtta_advi_model: inconsistent component counts");
      }
      center_[i].resize(c_, k_);
      scale_[i].resize(c_, k_);
      log_var_sum_[i].resize(k_);
      for (Eigen::Index k = 0; k < k_; ++k) {
        const auto& mk = moments[i][static_cast<std::size_t>(k)];
        if (mk.mean.size() != c_ || mk.variance.size() != c_ || !(mk.variance.array() > 0.0).all()) {
          throw DomainError("vbtta_advi_model: moments must match the prior dimension with positive variance");
        }
        center_[i].col(k) = mk.mean;
        if (prior.moment_informed) {
          scale_[i].col(k) = mk.variance.array().rsqrt().matrix();
        } else {
          scale_[i].col(k).setOnes();
        }
        log_var_sum_[i](k) = prior.moment_informed ? mk.variance.array().log().sum() : 0.0;
      }
      for (const auto& y : calibration[i]) {
        if (y.size() != c_) {
          throw DomainError("vbtta_advi_model: label dimension does not match the prior");
        }
        rows_.push_back({i, y});
      }
    }
    prior_rate_ = prior.moment_informed ? Eigen::MatrixXd(prior.dof * Eigen::MatrixXd::Identity(c_, c_))
                                        : prior.rate;
    wishart_norm_ = wishart_log_normalizer(prior.dof, prior_rate_);
    // The fixed precision of the weights-only model, before D^{-1/2} scaling.
    fixed_precision_ = prior.moment_informed ? Eigen::MatrixXd::Identity(c_, c_)
                                             : Eigen::MatrixXd(prior.dof * spd_inverse(prior.rate));
  }

  TransformSpec transform() const {
    TransformSpec t;
    t.simplex(k_);
    if (!weights_only_) {
      t.identity(k_ * c_);
      for (Eigen::Index k = 0; k < k_; ++k) {
        t.positive_definite(c_);
      }
    }
    return t;
  }

  double operator()(const Eigen::VectorXd& eta) const {
    const Eigen::VectorXd w = eta.head(k_);
    Eigen::MatrixXd offsets = Eigen::MatrixXd::Zero(c_, k_);
    std::vector<Eigen::MatrixXd> chol_t(static_cast<std::size_t>(k_));
    Eigen::VectorXd log_det(k_);
    double log_prior = std::lgamma(static_cast<double>(k_)); // flat density on the simplex

    if (weights_only_) {
      Eigen::LLT<Eigen::MatrixXd> llt(fixed_precision_);
      for (Eigen::Index k = 0; k < k_; ++k) {
        chol_t[static_cast<std::size_t>(k)] = llt.matrixU();
        log_det(k) = spd_log_det(fixed_precision_);
      }
    } else {
      offsets = Eigen::Map<const Eigen::MatrixXd>(eta.data() + k_, c_, k_);
      const double beta = prior_.beta;
      Eigen::Index at = k_ + k_ * c_;
      for (Eigen::Index k = 0; k < k_; ++k, at += c_ * c_) {
        const Eigen::MatrixXd lam = Eigen::Map<const Eigen::MatrixXd>(eta.data() + at, c_, c_);
        Eigen::LLT<Eigen::MatrixXd> llt(lam);
        if (llt.info() != Eigen::Success) {
          return -std::numeric_limits<double>::infinity();
        }
        chol_t[static_cast<std::size_t>(k)] = llt.matrixU();
        log_det(k) = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
        log_prior += 0.5 * static_cast<double>(c_) * std::log(beta / (2.0 * std::numbers::pi)) -
                     0.5 * beta * offsets.col(k).squaredNorm();
        log_prior += wishart_norm_ + 0.5 * (prior_.dof - static_cast<double>(c_) - 1.0) * log_det(k) -
                     0.5 * (prior_rate_.cwiseProduct(lam)).sum();
      }
    }

    const Eigen::VectorXd log_w = w.array().log();
    const double half_c_log2pi = 0.5 * static_cast<double>(c_) * kLog2Pi;
    double loglik = 0.0;
    Eigen::VectorXd terms(k_);
    if (c_ == 1) {
      // Scalar labels: P_ik = λ_k / var_ik.
      Eigen::VectorXd lambda(k_);
      for (Eigen::Index k = 0; k < k_; ++k) {
        lambda(k) = std::exp(log_det(k));
      }
      for (const auto& row : rows_) {
        const auto& center = center_[row.instance];
        const auto& scale = scale_[row.instance];
        const auto& lvs = log_var_sum_[row.instance];
        for (Eigen::Index k = 0; k < k_; ++k) {
          const double r = (row.y(0) - center(0, k) - offsets(0, k)) * scale(0, k);
          terms(k) = log_w(k) + 0.5 * (log_det(k) - lvs(k)) - half_c_log2pi - 0.5 * lambda(k) * r * r;
        }
        loglik += log_sum_exp(terms);
      }
    } else {
      for (const auto& row : rows_) {
        const auto& center = center_[row.instance];
        const auto& scale = scale_[row.instance];
        const auto& lvs = log_var_sum_[row.instance];
        for (Eigen::Index k = 0; k < k_; ++k) {
          const Eigen::VectorXd r =
              (row.y - center.col(k) - offsets.col(k)).cwiseProduct(scale.col(k));
          const double quad = (chol_t[static_cast<std::size_t>(k)] * r).squaredNorm();
          terms(k) = log_w(k) + 0.5 * (log_det(k) - lvs(k)) - half_c_log2pi - 0.5 * quad;
        }
        loglik += log_sum_exp(terms);
      }
    }
    return loglik + log_prior;
  }

  // Constrained point matching the prior means, for initialization.
  Eigen::VectorXd prior_point() const {
    Eigen::VectorXd eta(transform().constrained_size());
    eta.head(k_).setConstant(1.0 / static_cast<double>(k_));
    if (!weights_only_) {
      eta.segment(k_, k_ * c_).setZero();
      const Eigen::MatrixXd mean_precision = prior_.dof * spd_inverse(prior_rate_);
      Eigen::Index at = k_ + k_ * c_;
      for (Eigen::Index k = 0; k < k_; ++k, at += c_ * c_) {
        Eigen::Map<Eigen::MatrixXd>(eta.data() + at, c_, c_) = mean_precision;
      }
    }
    return eta;
  }

  Eigen::Index components() const { return k_; }

private:
  static Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& a) {
    return a.llt().solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
  }

  Eigen::Index k_;
  Eigen::Index c_;
  PriorConfig prior_;
  bool weights_only_;
  std::vector<Eigen::MatrixXd> center_;     // [instance] c x K
  std::vector<Eigen::MatrixXd> scale_;      // [instance] c x K, D^{-1/2}
  std::vector<Eigen::VectorXd> log_var_sum_; // [instance] ln|D| per component
  std::vector<LabelRow> rows_;
  Eigen::MatrixXd prior_rate_;
  Eigen::MatrixXd fixed_precision_;
  double wishart_norm_ = 0.0;
};

} // namespace

VbttaAdviModel vbtta_advi_model(const std::vector<LabelSet>& calibration, const MomentTable& moments,
                                const PriorConfig& prior, bool weights_only) {
  prior.validate();
  if (calibration.empty() || moments.size() != calibration.size() || moments.front().empty()) {
    throw DomainError("vbtta_advi_model: need moments for every calibration instance");
  }
  auto joint = std::make_shared<VbttaLogJoint>(calibration, moments, prior, weights_only);
  VbttaAdviModel model;
  model.transform = joint->transform();
  model.components = joint->components();
  model.weights_only = weights_only;
  model.log_joint = [joint](const Eigen::VectorXd& eta) { return (*joint)(eta); };
  model.prior_point = joint->prior_point();
  return model;
}

FullRankGaussian VbttaAdviModel::initial_q(double scale) const {
  return FullRankGaussian{to_unconstrained(transform, prior_point),
                          scale * Eigen::MatrixXd::Identity(transform.unconstrained_size(),
                                                            transform.unconstrained_size())};
}

Eigen::VectorXd VbttaAdviModel::weights_at(const Eigen::VectorXd& zeta) const {
  TransformSpec simplex_only;
  simplex_only.simplex(components);
  return from_unconstrained(simplex_only, zeta.head(components - 1)).value;
}

Eigen::VectorXd VbttaAdviModel::posterior_mean_weights(const FullRankGaussian& q, int n_draws, Rng& rng) const {
  if (n_draws < 1) {
    throw DomainError("posterior_mean_weights: n_draws must be at least 1");
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(components);
  for (int s = 0; s < n_draws; ++s) {
    sum += weights_at(q.draw(rng));
  }
  return sum / static_cast<double>(n_draws);
}

void write_gaussian(std::ostream& out, const FullRankGaussian& q) {
  q.validate();
  out << "vbtta-advi 1\nm " << q.dim() << "\nmean";
  for (Eigen::Index i = 0; i < q.dim(); ++i) {
    out << ' ' << format_double(q.mean(i));
  }
  out << '\n';
  for (Eigen::Index i = 0; i < q.dim(); ++i) {
    out << "L";
    for (Eigen::Index j = 0; j <= i; ++j) {
      out << ' ' << format_double(q.chol(i, j));
    }
    out << '\n';
  }
}

FullRankGaussian read_gaussian(std::istream& in) {
  auto bad = [](const std::string& what) { return IoError("advi record: " + what); };
  std::string line;
  if (!std::getline(in, line) || line != "vbtta-advi 1") {
    throw bad("unsupported header");
  }
  double md = 0.0;
  if (!std::getline(in, line) || line.rfind("m ", 0) != 0 || !parse_double(trim(line.substr(2)), md) || md < 0) {
    throw bad("missing dimension");
  }
  const auto m = static_cast<Eigen::Index>(md);
  auto read_row = [&](const std::string& tag, Eigen::Index count) {
    if (!std::getline(in, line)) {
      throw bad("truncated record");
    }
    const auto fields = split(trim(line), ' ');
    if (fields.empty() || fields[0] != tag || static_cast<Eigen::Index>(fields.size()) != count + 1) {
      throw bad("malformed '" + tag + "' row");
    }
    Eigen::VectorXd v(count);
    for (Eigen::Index i = 0; i < count; ++i) {
      if (!parse_double(fields[static_cast<std::size_t>(i) + 1], v(i))) {
        throw bad("bad number in '" + tag + "' row");
      }
    }
    return v;
  };
  FullRankGaussian q{read_row("mean", m), Eigen::MatrixXd::Zero(m, m)};
  for (Eigen::Index i = 0; i < m; ++i) {
    q.chol.row(i).head(i + 1) = read_row("L", i + 1).transpose();
  }
  try {
    q.validate();
  } catch (const DomainError& e) {
    throw bad(e.what());
  }
  return q;
}

} // namespace vbtta
