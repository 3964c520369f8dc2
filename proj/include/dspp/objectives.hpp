#pragma once

// Training objectives, all in the "maximize" convention:
//
//   total = n_scale * data_term - beta_reg * kl_term
//
// SVGP and DGP use the variational lower bound: per pathway, log N(y | mean, obs) minus
// half the latent variance over obs. PPGPR, DSPP and BPDGP use the log predictive density
// of the (mixture) predictive distribution directly.

#include "dspp/models.hpp"
#include "dspp/tape.hpp"

#include <Eigen/Dense>

#include <cstdint>

namespace dspp {

struct Batch {
  Eigen::MatrixXd x;  // B x d
  Eigen::MatrixXd y;  // B x D
};

struct ObjectiveOptions {
  double beta_reg = 1.0;
  double n_scale = 1.0;     // N / B
  int samples = 0;          // sampled families; 0 uses the model's mc_samples
  std::uint64_t seed = 0;   // noise stream of sampled families
  bool zero_noise = false;  // sampled families: force every epsilon to zero
};

struct ObjectiveValue {
  double total = 0.0;
  double data_term = 0.0;
  double kl_term = 0.0;
  double n_scale = 1.0;
};

/// Default KL weight of a family: 1 for the variational bounds, 0.2 for the predictive objectives.
double default_beta_reg(Family family);

/// True for SVGP and DGP.
bool uses_variational_bound(Family family);

struct ObjectiveVars {
  ad::Var total;
  ad::Var data_term;
  ad::Var kl_term;
};

/// Records the objective of `model` on `batch` onto the tape that holds `vars`.
ObjectiveVars build_objective(const Model& model, const ModelVars& vars, const Batch& batch,
                              const ObjectiveOptions& options);

/// Sum of every unit's KL(q(u) || p(u)).
ad::Var total_kl(const ModelVars& vars);

struct ObjectiveResult {
  ObjectiveValue value;
  Eigen::VectorXd gradient;  // d total / d theta in ParamSet flat order; empty without gradient
};

/// Value and optionally the gradient of the family's objective. Throws NonFiniteGradient naming
/// the first parameter with a non-finite partial.
ObjectiveResult evaluate_objective(const Model& model, const Batch& batch, const ObjectiveOptions& options,
                                   bool with_gradient);

ObjectiveValue elbo_svgp(const Model& model, const Batch& batch, const ObjectiveOptions& options);
ObjectiveValue objective_ppgpr(const Model& model, const Batch& batch, const ObjectiveOptions& options);
ObjectiveValue elbo_dsvi(const Model& model, const Batch& batch, const ObjectiveOptions& options);
ObjectiveValue objective_dspp(const Model& model, const Batch& batch, const ObjectiveOptions& options);

/// Per-point data terms (length B) of the family's objective, without scaling.
Eigen::VectorXd pointwise_data_terms(const Model& model, const Batch& batch, const ObjectiveOptions& options);

}  // namespace dspp
