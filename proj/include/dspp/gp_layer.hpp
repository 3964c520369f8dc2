#pragma once

// One sparse variational GP unit in the unwhitened parameterization:
//
//   mu(x)  = mean_fn(x) + k_x^T K_MM^{-1} m
//   var(x) = k(x, x) - k_x^T K_MM^{-1} k_x + k_x^T K_MM^{-1} S K_MM^{-1} k_x
//
// The value API works on GPLayerState; the tape API (namespace gp) is what models and
// objectives are built from, so gradients flow to every parameter.

#include "dspp/kernels.hpp"
#include "dspp/tape.hpp"

#include <Eigen/Dense>

namespace dspp {

enum class CovarianceForm { Diagonal, Full };

struct MeanFunction {
  enum class Kind { Constant, Linear };
  Kind kind = Kind::Constant;
  double constant = 0.0;    // Constant(c), also the bias of Linear(w, b)
  Eigen::VectorXd weights;  // Linear only

  static MeanFunction make_constant(double c) { return {Kind::Constant, c, {}}; }
  static MeanFunction make_linear(Eigen::VectorXd w, double b) { return {Kind::Linear, b, std::move(w)}; }
};

struct GPLayerState {
  Eigen::MatrixXd z;  // M x d
  Eigen::VectorXd m;
  CovarianceForm form = CovarianceForm::Diagonal;
  Eigen::VectorXd s_diag;   // Diagonal: variances, all > 0
  Eigen::MatrixXd s_chol;   // Full: lower Cholesky factor with positive diagonal
  MeanFunction mean;
  KernelParams kernel;

  [[nodiscard]] Eigen::Index num_inducing() const { return z.rows(); }
  /// Dense S.
  [[nodiscard]] Eigen::MatrixXd covariance() const;
  void validate() const;
};

struct MarginalGaussian {
  Eigen::VectorXd mu;
  Eigen::VectorXd var;
};

inline constexpr double kVarianceFloor = 1e-10;

MarginalGaussian predict_marginal(const GPLayerState& state, const Eigen::Ref<const Eigen::MatrixXd>& x);
double kl_to_prior(const GPLayerState& state);
/// Sum over the batch of K~_ii = k(x_i, x_i) - k_i^T K_MM^{-1} k_i.
double trace_penalty(const GPLayerState& state, const Eigen::Ref<const Eigen::MatrixXd>& x);

namespace gp {

/// Tape handles for one unit. Positive quantities are carried as logs; for the full form
/// `s_param` holds the Cholesky factor with a log diagonal.
struct UnitVars {
  ad::Var z;
  ad::Var m;
  ad::Var s_param;
  ad::Var log_lengthscales;
  ad::Var log_outputscale;
  ad::Var mean_weights;  // invalid for constant mean functions
  ad::Var mean_bias;
  CovarianceForm form = CovarianceForm::Diagonal;
  Smoothness smoothness = Smoothness::FiveHalves;
};

/// Per-evaluation quantities that depend only on the unit's parameters.
struct UnitCache {
  ad::Var chol;           // L, K_MM = L L^T
  ad::Var whitened_mean;  // L^{-1} m
  ad::Var s_factor;       // lower factor of S
};

struct MarginalVars {
  ad::Var mean;            // n x 1
  ad::Var var;             // n x 1, clamped at kVarianceFloor
  ad::Var prior_residual;  // n x 1, K~_ii before clamping
};

UnitVars bind(ad::Tape& tape, const GPLayerState& state, bool trainable);
UnitCache prepare(const UnitVars& unit);
MarginalVars predict(const UnitVars& unit, const UnitCache& cache, ad::Var kernel_inputs, ad::Var mean_inputs);
ad::Var kl(const UnitVars& unit, const UnitCache& cache);

}  // namespace gp

}  // namespace dspp
