#pragma once

#include "dspp/data.hpp"
#include "dspp/models.hpp"
#include "dspp/objectives.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dspp {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;
};

/// One bias-corrected Adam step that decreases a loss with gradient `grads`.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
               const AdamConfig& config = {});

struct TrainConfig {
  double lr0 = 0.01;
  int epochs = 400;
  int batch_size = 1000;  // clamped to the training-set size
  std::optional<double> beta_reg;  // family default when empty
  int restarts = 3;
  std::optional<int> warmup_epochs;  // 10% of the budget when empty
  std::uint64_t seed = 0;
  AdamConfig adam;

  void validate() const;
  [[nodiscard]] int warmup() const;
};

/// Learning rate of a 0-based epoch: lr0, x0.1 from epochs/2, x0.01 from 3*epochs/4.
double learning_rate(const TrainConfig& config, int epoch);

/// Lloyd's algorithm (10 iterations) from k-means++ seeds on a subsample of
/// min(N, max(M, min(10 M d, 20000))) rows. Throws std::invalid_argument if m > N.
Eigen::MatrixXd kmeans_init(const Eigen::MatrixXd& x, int m, std::uint64_t seed);

struct EpochRecord {
  int restart = 0;
  int epoch = 0;
  double objective = 0.0;  // mean minibatch objective
  double data_term = 0.0;  // sum of minibatch data terms (a full-data estimate)
  double kl_term = 0.0;    // at the last step of the epoch
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since training started
};

struct RestartOutcome {
  int restart = 0;
  bool failed = false;
  std::string error;
  double warmup_data_term = 0.0;
};

struct TrainHooks {
  /// Called on each freshly initialized restart before training (tests use it to poison one).
  std::function<void(int restart, Model& model)> on_init;
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called after every epoch with the model as it stands (periodic checkpoints).
  std::function<void(const EpochRecord&, const Model&)> on_epoch_model;
  /// Called for restarts that fail with a non-finite gradient or a failed factorization.
  std::function<void(const RestartOutcome&)> on_restart_failure;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;  // selected restart only
  std::vector<RestartOutcome> restarts;
  int selected_restart = 0;
};

/// Full protocol on standardized data: `restarts` initializations trained for the warmup,
/// the best training data term continues to the epoch budget.
TrainResult train(const ModelConfig& model_config, const Dataset& data, const TrainConfig& config,
                  const TrainHooks& hooks = {});

/// Continues training an existing model for config.epochs epochs (no restarts).
TrainResult train_model(Model model, const Dataset& data, const TrainConfig& config, const TrainHooks& hooks = {});

/// Sum of the family's per-point data terms over the whole dataset, evaluated in chunks.
double full_data_term(const Model& model, const Dataset& data, std::uint64_t seed);

}  // namespace dspp
