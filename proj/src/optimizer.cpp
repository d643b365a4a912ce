#include "par/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace par {

AdamW::AdamW(Eigen::Index n_params, double weight_decay)
    : weight_decay(weight_decay), m(Eigen::VectorXd::Zero(n_params)),
      v(Eigen::VectorXd::Zero(n_params)) {}

void AdamW::step(Eigen::VectorXd& w, const Eigen::VectorXd& g, double lr) {
  if (w.size() != m.size() || g.size() != m.size()) {
    throw std::invalid_argument("AdamW::step: parameter/gradient size mismatch");
  }
  t += 1;
  w -= lr * weight_decay * w;
  m = beta1 * m + (1.0 - beta1) * g;
  v = beta2 * v + (1.0 - beta2) * g.array().square().matrix();
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  w.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

}  // namespace par
