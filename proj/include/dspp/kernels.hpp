#pragma once

#include <Eigen/Dense>

#include <string>
#include <string_view>

namespace dspp {

enum class Smoothness { Half, ThreeHalves, FiveHalves };

Smoothness parse_smoothness(std::string_view text);
std::string to_string(Smoothness nu);

/// Matérn hyperparameters with one lengthscale per input dimension.
struct KernelParams {
  Eigen::VectorXd lengthscales;
  double outputscale = 1.0;
  Smoothness smoothness = Smoothness::FiveHalves;

  /// Throws std::invalid_argument unless every lengthscale and the outputscale are positive.
  void validate() const;
};

/// Matérn correlation rho(r) for a scaled distance r >= 0.
double matern_correlation(double r, Smoothness nu);

/// rho'(r) / r, finite at r = 0 for nu >= 3/2. For nu = 1/2 the r = 0 value is taken as 0
/// (subgradient at the cusp).
double matern_slope_over_r(double r, Smoothness nu);

double kernel_eval(const KernelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& x_prime);

/// Cross-covariance k(A, B) for row-major point sets A (n x d) and B (m x d).
Eigen::MatrixXd kernel_matrix(const KernelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& a,
                              const Eigen::Ref<const Eigen::MatrixXd>& b);

struct KernelBlocks {
  Eigen::MatrixXd k_mm;    // M x M, exactly symmetric
  Eigen::MatrixXd k_nm;    // N x M
  Eigen::VectorXd k_diag;  // N prior variances
};

KernelBlocks assemble_blocks(const KernelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& x,
                             const Eigen::Ref<const Eigen::MatrixXd>& z);

struct CholeskyResult {
  Eigen::MatrixXd factor;  // lower triangular
  double jitter = 0.0;     // absolute amount added to the diagonal
};

/// Jitter schedule: none, then 1e-8 * mean(diag A) escalating by 10x up to 1e-4 * mean(diag A).
struct JitterPolicy {
  double initial_relative = 1e-8;
  double final_relative = 1e-4;
  double growth = 10.0;
};

/// Cholesky of a symmetric matrix with escalating diagonal jitter.
/// Throws NotPositiveDefinite when the final jitter level still fails.
CholeskyResult robust_cholesky(const Eigen::Ref<const Eigen::MatrixXd>& a, const JitterPolicy& policy = {});

}  // namespace dspp
