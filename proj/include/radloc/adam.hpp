#pragma once

#include <Eigen/Core>
#include <cmath>

namespace radloc {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over a flat parameter vector.
class Adam {
 public:
  Adam(Eigen::Index size, AdamConfig cfg = {})
      : cfg_(cfg), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

  void step(Eigen::Ref<Eigen::VectorXd> theta, const Eigen::VectorXd& grad, double lr) {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    theta.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

/// Exponential decay from lr_start at step 0 to lr_end at the last step.
inline double exponential_lr(double lr_start, double lr_end, int step, int total_steps) {
  if (lr_start <= 0.0) return 0.0;
  if (total_steps <= 1) return lr_start;
  const double f = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr_start * std::pow(lr_end / lr_start, f);
}

}  // namespace radloc
