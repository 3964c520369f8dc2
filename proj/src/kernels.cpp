#include "dspp/kernels.hpp"

#include "dspp/error.hpp"

#include <cmath>
#include <stdexcept>

namespace dspp {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;
constexpr double kSqrt5 = 2.23606797749979;

double scaled_distance(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                       const Eigen::VectorXd& lengthscales) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double u = (x[k] - y[k]) / lengthscales[k];
    acc += u * u;
  }
  return std::sqrt(acc);
}

}  // namespace

Smoothness parse_smoothness(std::string_view text) {
  if (text == "1/2" || text == "0.5") return Smoothness::Half;
  if (text == "3/2" || text == "1.5") return Smoothness::ThreeHalves;
  if (text == "5/2" || text == "2.5") return Smoothness::FiveHalves;
  throw std::invalid_argument("unknown Matern smoothness '" + std::string(text) + "'");
}

std::string to_string(Smoothness nu) {
  switch (nu) {
    case Smoothness::Half: return "1/2";
    case Smoothness::ThreeHalves: return "3/2";
    case Smoothness::FiveHalves: return "5/2";
  }
  return "?";
}

void KernelParams::validate() const {
  if (lengthscales.size() == 0) throw std::invalid_argument("kernel needs at least one lengthscale");
  if ((lengthscales.array() <= 0.0).any()) throw std::invalid_argument("lengthscales must be positive");
  if (!(outputscale > 0.0)) throw std::invalid_argument("outputscale must be positive");
}

double matern_correlation(double r, Smoothness nu) {
  switch (nu) {
    case Smoothness::Half: return std::exp(-r);
    case Smoothness::ThreeHalves: return (1.0 + kSqrt3 * r) * std::exp(-kSqrt3 * r);
    case Smoothness::FiveHalves: return (1.0 + kSqrt5 * r + 5.0 * r * r / 3.0) * std::exp(-kSqrt5 * r);
  }
  return 0.0;
}

double matern_slope_over_r(double r, Smoothness nu) {
  switch (nu) {
    case Smoothness::Half: return r > 0.0 ? -std::exp(-r) / r : 0.0;
    case Smoothness::ThreeHalves: return -3.0 * std::exp(-kSqrt3 * r);
    case Smoothness::FiveHalves: return -(5.0 / 3.0) * (1.0 + kSqrt5 * r) * std::exp(-kSqrt5 * r);
  }
  return 0.0;
}

double kernel_eval(const KernelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& x_prime) {
  if (x.size() != params.lengthscales.size() || x_prime.size() != params.lengthscales.size()) {
    throw DimensionMismatch("kernel_eval: point dimension does not match lengthscale count");
  }
  return params.outputscale * matern_correlation(scaled_distance(x, x_prime, params.lengthscales), params.smoothness);
}

Eigen::MatrixXd kernel_matrix(const KernelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& a,
                              const Eigen::Ref<const Eigen::MatrixXd>& b) {
  const auto d = params.lengthscales.size();
  if (a.cols() != d || b.cols() != d) throw DimensionMismatch("kernel_matrix: column count != lengthscale count");
  Eigen::MatrixXd out(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      out(i, j) = params.outputscale *
                  matern_correlation(scaled_distance(a.row(i).transpose(), b.row(j).transpose(), params.lengthscales),
                                     params.smoothness);
    }
  }
  return out;
}

KernelBlocks assemble_blocks(const KernelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& x,
                             const Eigen::Ref<const Eigen::MatrixXd>& z) {
  params.validate();
  KernelBlocks blocks;
  blocks.k_mm = kernel_matrix(params, z, z);
  blocks.k_mm = 0.5 * (blocks.k_mm + blocks.k_mm.transpose()).eval();
  blocks.k_nm = kernel_matrix(params, x, z);
  blocks.k_diag = Eigen::VectorXd::Constant(x.rows(), params.outputscale);
  return blocks;
}

CholeskyResult robust_cholesky(const Eigen::Ref<const Eigen::MatrixXd>& a, const JitterPolicy& policy) {
  if (a.rows() != a.cols()) throw DimensionMismatch("robust_cholesky: matrix is not square");
  const Eigen::Index n = a.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().allFinite()) {
    return {llt.matrixL(), 0.0};
  }
  const double scale = a.diagonal().mean();
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw NotPositiveDefinite("robust_cholesky: non-positive mean diagonal");
  }
  for (double rel = policy.initial_relative; rel <= policy.final_relative * (1.0 + 1e-12); rel *= policy.growth) {
    const double jitter = rel * scale;
    Eigen::MatrixXd shifted = a;
    shifted.diagonal().array() += jitter;
    llt.compute(shifted);
    if (llt.info() == Eigen::Success) return {llt.matrixL(), jitter};
  }
  throw NotPositiveDefinite("robust_cholesky: matrix of size " + std::to_string(n) +
                            " is not positive definite after maximum jitter");
}

}  // namespace dspp
