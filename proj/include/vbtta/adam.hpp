#pragma once

#include <Eigen/Dense>

namespace vbtta {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam over a flat parameter vector. step() applies one descent update
// θ ← θ - lr · m̂ / (√v̂ + ε) with bias-corrected moments.
class Adam {
public:
  Adam(Eigen::Index size, AdamConfig config)
      : config_(config), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad) {
    ++t_;
    m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
    v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    params.array() -= config_.learning_rate * (m_.array() / c1) /
                      ((v_.array() / c2).sqrt() + config_.epsilon);
  }

  long steps() const noexcept { return t_; }

private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

} // namespace vbtta
