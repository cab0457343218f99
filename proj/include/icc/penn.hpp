#pragma once

#include "icc/validator.hpp"

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace icc {

/// One probabilistic regressor of the ensemble: a dense tanh MLP whose four
/// outputs are (mean, log-variance) per target for the two validator labels
/// (safety_target, progress_target). Log-variances are clamped to
/// [kLogVarMin, kLogVarMax] before exponentiation.
struct MlpMember {
  static constexpr double kLogVarMin = -10.0;
  static constexpr double kLogVarMax = 4.0;
  static constexpr int kTargets = 2;

  std::vector<Eigen::MatrixXd> weights;  // weights[l]: rows = layer l+1 width
  std::vector<Eigen::VectorXd> biases;

  struct Output {
    Eigen::Vector2d means;
    Eigen::Vector2d log_vars;  // clamped
  };

  static MlpMember make(int in_dim, const std::vector<int>& hidden, Rng& rng);

  int in_dim() const { return static_cast<int>(weights.front().cols()); }

  Output forward(const Eigen::VectorXd& features) const;

  /// Batched forward: X is F x B, returns the raw 4 x B output (means in
  /// rows 0..1, unclamped log-vars in rows 2..3).
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X) const;
};

/// Gaussian negative log-likelihood, summed over targets, constant dropped:
/// sum_t 0.5 * [log_var_t + (target_t - mean_t)^2 * exp(-log_var_t)].
double nll_loss(const MlpMember::Output& pred, const Eigen::Vector2d& target);

/// Mean NLL over a batch (X: F x B, targets: 2 x B) and, when grad != null,
/// the analytic gradient of that mean in a member-shaped accumulator.
/// Exposed for training and for the finite-difference gradient check.
double nll_batch(const MlpMember& member, const Eigen::MatrixXd& X,
                 const Eigen::MatrixXd& targets, MlpMember* grad);

struct TrainConfig {
  int members = 5;
  std::vector<int> hidden = {64, 64};
  int epochs = 200;
  int batch = 64;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct EnsemblePrediction {
  Eigen::Vector2d mean;
  Eigen::Vector2d aleatoric_var;  // mean of member variances
  Eigen::Vector2d epistemic_var;  // population variance of member means
  Eigen::Vector2d total_var() const { return aleatoric_var + epistemic_var; }
};

struct EnsembleModel {
  std::vector<MlpMember> members;
  Eigen::VectorXd feature_mean;  // copied from the dataset sidecar
  Eigen::VectorXd feature_std;
  TrainConfig config_echo;

  /// Prediction from raw features; normalization is applied here.
  EnsemblePrediction predict(const Eigen::VectorXd& raw_features) const;

  void save(const std::string& path) const;
  static EnsembleModel load(const std::string& path);
};

/// Train each member on a bootstrap resample of the dataset by mini-batch
/// gradient descent with momentum on the NLL. Deterministic given
/// config.seed. Requires at least 10 rows; aborts on NaN loss.
EnsembleModel train(const Dataset& data, const TrainConfig& config);

}  // namespace icc
