#pragma once

#include <permutofilt/types.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace permutofilt {

struct SgdConfig {
  double lr = 1e-6;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

struct SgdState {
  Matrix velocity;
};

SgdState make_sgd_state(Index rows, Index cols);

// Momentum update with weight decay folded into the gradient:
//   g <- grad + weight_decay * theta
//   v <- momentum * v - lr * g
//   theta <- theta + v
void sgd_step(Matrix& theta, const Eigen::Ref<const Matrix>& grad, SgdState& state,
              const SgdConfig& config);

struct LossValue {
  double value = 0.0;
  Matrix grad;
};

// Mean squared error over all entries; grad = 2 (pred - target) / (n c).
LossValue mse_loss(const Eigen::Ref<const Matrix>& pred, const Eigen::Ref<const Matrix>& target);

// Multinomial logistic loss on raw scores, averaged over points. Optional
// per-class weights scale each point's contribution by the weight of its
// true label; pass an empty vector for uniform weighting.
LossValue logistic_loss(const Eigen::Ref<const Matrix>& logits,
                        const std::vector<int>& labels, const Vector& class_weights = Vector());

struct GradCheckReport {
  double max_rel_err = 0.0;
  int failures = 0;
  int probes = 0;
};

// Central-difference check of an analytic gradient on randomly probed
// coordinates. The step is step_scale times the coordinate's magnitude
// (floored at 1).
GradCheckReport grad_check(const std::function<double(const Vector&)>& objective,
                           const Vector& params, const Vector& analytic_grad, int probes,
                           double step_scale, double tolerance, Rng& rng);

// Plain key=value lines; '#' starts a comment, blank lines are skipped.
std::map<std::string, std::string> parse_key_values(std::istream& in);

struct TrainConfig {
  double lr = 1e-6;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int epochs = 10;
  int batch = 1;
  std::string loss = "mse";
  std::uint64_t seed = 0;
  std::vector<double> feature_scales;
};

TrainConfig parse_train_config(std::istream& in);
TrainConfig load_train_config(const std::string& path);

}  // namespace permutofilt
