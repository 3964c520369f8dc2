#pragma once

#include "dspp/data.hpp"
#include "dspp/models.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace dspp {

/// -log p(y) of a one-dimensional mixture (dimension `d` of a multivariate one).
double nll(const PredictiveMixture& mixture, double y, Eigen::Index d = 0);
/// Joint -log p(y) of a multivariate mixture with diagonal component covariances.
double nll(const PredictiveMixture& mixture, const Eigen::RowVectorXd& y);

/// Mixture mean, one entry per output dimension.
Eigen::RowVectorXd point_prediction(const PredictiveMixture& mixture);

/// Closed-form CRPS of a one-dimensional Gaussian mixture.
double crps_mixture(const PredictiveMixture& mixture, double y, Eigen::Index d = 0);

struct EvalReport {
  double nll = 0.0;    // nats per point, divided by the number of output dimensions
  double rmse = 0.0;   // first output dimension
  double mrmse = 0.0;  // mean of per-dimension RMSEs
  double crps = 0.0;   // mean over points and dimensions
  Eigen::Index n_test = 0;
};

/// Metrics on the original target scale for standardized inputs `test.x` and standardized targets
/// `test.y`. Sampled families use `mc_samples` pathways drawn from `seed`.
EvalReport evaluate(const Model& model, const Dataset& test, const Standardizer& standardizer, int mc_samples,
                    std::uint64_t seed = 0);

/// Same metrics for precomputed mixtures on the standardized scale.
EvalReport evaluate_mixtures(const std::vector<PredictiveMixture>& mixtures, const Eigen::MatrixXd& y,
                             const Standardizer& standardizer);

}  // namespace dspp
