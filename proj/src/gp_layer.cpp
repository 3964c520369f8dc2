#include "dspp/gp_layer.hpp"

#include "dspp/error.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dspp {

Eigen::MatrixXd GPLayerState::covariance() const {
  if (form == CovarianceForm::Diagonal) return s_diag.asDiagonal();
  const Eigen::MatrixXd l = s_chol.triangularView<Eigen::Lower>();
  return l * l.transpose();
}

void GPLayerState::validate() const {
  const Eigen::Index mm = z.rows();
  if (mm < 1) throw std::invalid_argument("GP unit needs at least one inducing point");
  if (m.size() != mm) throw DimensionMismatch("variational mean length != number of inducing points");
  if (form == CovarianceForm::Diagonal) {
    if (s_diag.size() != mm) throw DimensionMismatch("diagonal S length != number of inducing points");
    if ((s_diag.array() <= 0.0).any()) throw std::invalid_argument("diagonal S entries must be positive");
  } else {
    if (s_chol.rows() != mm || s_chol.cols() != mm) throw DimensionMismatch("S factor shape mismatch");
    if ((s_chol.diagonal().array() <= 0.0).any()) throw std::invalid_argument("S factor diagonal must be positive");
  }
  if (kernel.lengthscales.size() != z.cols()) throw DimensionMismatch("lengthscale count != inducing dimension");
  kernel.validate();
}

namespace gp {

UnitVars bind(ad::Tape& tape, const GPLayerState& state, bool trainable) {
  state.validate();
  auto leaf = [&](Eigen::MatrixXd v) { return trainable ? tape.variable(std::move(v)) : tape.constant(std::move(v)); };
  UnitVars u;
  u.form = state.form;
  u.smoothness = state.kernel.smoothness;
  u.z = leaf(state.z);
  u.m = leaf(state.m);
  if (state.form == CovarianceForm::Diagonal) {
    u.s_param = leaf(state.s_diag.array().log().matrix());
  } else {
    Eigen::MatrixXd p = state.s_chol.triangularView<Eigen::StrictlyLower>();
    p.diagonal() = state.s_chol.diagonal().array().log();
    u.s_param = leaf(p);
  }
  u.log_lengthscales = leaf(state.kernel.lengthscales.array().log().matrix());
  u.log_outputscale = leaf(Eigen::MatrixXd::Constant(1, 1, std::log(state.kernel.outputscale)));
  if (state.mean.kind == MeanFunction::Kind::Linear) u.mean_weights = leaf(state.mean.weights);
  u.mean_bias = leaf(Eigen::MatrixXd::Constant(1, 1, state.mean.constant));
  return u;
}

UnitCache prepare(const UnitVars& unit) {
  UnitCache c;
  ad::Var k_mm = ad::kernel_matrix(unit.z, unit.z, unit.log_lengthscales, unit.log_outputscale, unit.smoothness);
  c.chol = ad::cholesky(k_mm);
  c.whitened_mean = ad::tri_solve(c.chol, unit.m, false);
  if (unit.form == CovarianceForm::Diagonal) {
    c.s_factor = ad::diag_matrix(ad::exp(ad::scale(unit.s_param, 0.5)));
  } else {
    c.s_factor = ad::lower_factor(unit.s_param);
  }
  return c;
}

MarginalVars predict(const UnitVars& unit, const UnitCache& cache, ad::Var kernel_inputs, ad::Var mean_inputs) {
  using namespace ad;
  Var k_nm = kernel_matrix(kernel_inputs, unit.z, unit.log_lengthscales, unit.log_outputscale, unit.smoothness);
  Var a = tri_solve(cache.chol, transpose(k_nm), false);  // L^{-1} K_MN
  Var mean = matmul(transpose(a), cache.whitened_mean);
  if (unit.mean_weights.valid()) {
    if (mean_inputs.cols() != unit.mean_weights.rows()) {
      throw DimensionMismatch("linear mean function expects " + std::to_string(unit.mean_weights.rows()) +
                              " inputs, got " + std::to_string(mean_inputs.cols()));
    }
    mean = add(mean, matmul(mean_inputs, unit.mean_weights));
  }
  mean = add(mean, unit.mean_bias);

  Var prior_diag = exp(unit.log_outputscale);  // stationary kernel: k(x, x) = outputscale
  Var residual = sub(prior_diag, transpose(col_sums(square(a))));
  Var kinv_k = tri_solve(cache.chol, a, true);  // K_MM^{-1} K_MN
  Var s_term;
  if (unit.form == CovarianceForm::Diagonal) {
    s_term = matmul(transpose(square(kinv_k)), exp(unit.s_param));
  } else {
    s_term = transpose(col_sums(square(matmul(transpose(cache.s_factor), kinv_k))));
  }
  MarginalVars out;
  out.mean = mean;
  out.prior_residual = residual;
  out.var = clamp_min(add(residual, s_term), kVarianceFloor);
  return out;
}

ad::Var kl(const UnitVars& unit, const UnitCache& cache) {
  using namespace ad;
  const auto mm = static_cast<double>(unit.z.rows());
  Var trace_term = sum(square(tri_solve(cache.chol, cache.s_factor, false)));
  Var mahalanobis = sum(square(cache.whitened_mean));
  Var logdet_k = scale(sum(log(diag_part(cache.chol))), 2.0);
  Var logdet_s = unit.form == CovarianceForm::Diagonal ? sum(unit.s_param)
                                                        : scale(sum(diag_part(unit.s_param)), 2.0);
  Var total = sub(add(add(trace_term, mahalanobis), logdet_k), logdet_s);
  return scale(add_scalar(total, -mm), 0.5);
}

}  // namespace gp

MarginalGaussian predict_marginal(const GPLayerState& state, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  if (x.cols() != state.z.cols()) throw DimensionMismatch("predict_marginal: input dimension mismatch");
  ad::Tape tape;
  const gp::UnitVars unit = gp::bind(tape, state, false);
  const gp::UnitCache cache = gp::prepare(unit);
  ad::Var xv = tape.constant(Eigen::MatrixXd(x));
  const gp::MarginalVars out = gp::predict(unit, cache, xv, xv);
  return {out.mean.value().col(0), out.var.value().col(0)};
}

double kl_to_prior(const GPLayerState& state) {
  ad::Tape tape;
  const gp::UnitVars unit = gp::bind(tape, state, false);
  const gp::UnitCache cache = gp::prepare(unit);
  return std::max(0.0, gp::kl(unit, cache).scalar());
}

double trace_penalty(const GPLayerState& state, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  if (x.cols() != state.z.cols()) throw DimensionMismatch("trace_penalty: input dimension mismatch");
  ad::Tape tape;
  const gp::UnitVars unit = gp::bind(tape, state, false);
  const gp::UnitCache cache = gp::prepare(unit);
  ad::Var xv = tape.constant(Eigen::MatrixXd(x));
  const gp::MarginalVars out = gp::predict(unit, cache, xv, xv);
  return out.prior_residual.value().array().max(0.0).sum();
}

}  // namespace dspp
