#pragma once

#include <Eigen/Dense>

namespace par {

/// AdamW over a flat parameter vector. Weight decay is decoupled: it
/// scales the weights directly and never enters the moment estimates, so
/// a zero-gradient step changes weights by exactly -lr * wd * w.
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  explicit AdamW(Eigen::Index n_params, double weight_decay = 1e-4);

  /// One update of `w` in place; `g` must match its size.
  void step(Eigen::VectorXd& w, const Eigen::VectorXd& g, double lr);
};

}  // namespace par
