#include "dspp/error.hpp"
#include "dspp/gp_layer.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace dspp;

namespace {

GPLayerState random_state(int m, int d, CovarianceForm form, std::uint64_t seed) {
  GPLayerState s;
  s.z = testing::random_matrix(m, d, seed);
  s.m = testing::random_matrix(m, 1, seed + 1).col(0);
  s.form = form;
  if (form == CovarianceForm::Diagonal) {
    s.s_diag = testing::random_matrix(m, 1, seed + 2).col(0).array().abs() * 0.3 + 0.01;
  } else {
    Eigen::MatrixXd l = testing::random_matrix(m, m, seed + 2, 0.2).triangularView<Eigen::Lower>();
    l.diagonal() = l.diagonal().cwiseAbs().array() + 0.05;
    s.s_chol = l;
  }
  s.kernel.lengthscales = (testing::random_matrix(d, 1, seed + 3, 0.2).col(0).array().exp()).matrix();
  s.kernel.outputscale = 1.3;
  s.mean = MeanFunction::make_linear(testing::random_matrix(d, 1, seed + 4).col(0), 0.4);
  return s;
}

// Dense explicit-inverse transcription of the unwhitened predictive equations.
MarginalGaussian dense_oracle(const GPLayerState& s, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd kmm = kernel_matrix(s.kernel, s.z, s.z);
  const Eigen::MatrixXd kinv = kmm.inverse();
  const Eigen::MatrixXd knm = kernel_matrix(s.kernel, x, s.z);
  const Eigen::MatrixXd cov = s.covariance();
  MarginalGaussian out;
  out.mu.resize(x.rows());
  out.var.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd k = knm.row(i).transpose();
    double mean = s.mean.constant;
    if (s.mean.kind == MeanFunction::Kind::Linear) mean += x.row(i).dot(s.mean.weights);
    out.mu[i] = mean + k.dot(kinv * s.m);
    out.var[i] = s.kernel.outputscale - k.dot(kinv * k) + k.dot(kinv * cov * kinv * k);
  }
  return out;
}

double dense_kl(const GPLayerState& s) {
  const Eigen::MatrixXd kmm = kernel_matrix(s.kernel, s.z, s.z);
  const Eigen::MatrixXd kinv = kmm.inverse();
  const Eigen::MatrixXd cov = s.covariance();
  const double m = static_cast<double>(s.m.size());
  return 0.5 * ((kinv * cov).trace() + s.m.dot(kinv * s.m) - m + std::log(kmm.determinant()) -
                std::log(cov.determinant()));
}

}  // namespace

TEST_CASE("predict_marginal matches the explicit-inverse oracle") {
  for (CovarianceForm form : {CovarianceForm::Diagonal, CovarianceForm::Full}) {
    const GPLayerState s = random_state(6, 2, form, 10);
    const Eigen::MatrixXd x = testing::random_matrix(9, 2, 99);
    const MarginalGaussian got = predict_marginal(s, x);
    const MarginalGaussian want = dense_oracle(s, x);
    CHECK(testing::max_abs(got.mu - want.mu) < 1e-9);
    CHECK(testing::max_abs(got.var - want.var) < 1e-9);
  }
}

TEST_CASE("prior recovery: Z = X, S = K_MM, m = 0") {
  GPLayerState s = random_state(5, 2, CovarianceForm::Full, 20);
  s.m.setZero();
  s.mean = MeanFunction::make_constant(0.0);
  const Eigen::MatrixXd kmm = kernel_matrix(s.kernel, s.z, s.z);
  s.s_chol = kmm.llt().matrixL();
  const MarginalGaussian g = predict_marginal(s, s.z);
  CHECK(testing::max_abs(g.mu) < 1e-12);
  CHECK(testing::max_abs(g.var.array() - s.kernel.outputscale) < 1e-9);
  CHECK(kl_to_prior(s) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("interpolation: S -> 0 with Z = X collapses the variance") {
  GPLayerState s = random_state(4, 1, CovarianceForm::Diagonal, 30);
  s.s_diag.setConstant(1e-14);
  const MarginalGaussian g = predict_marginal(s, s.z);
  CHECK(g.var.maxCoeff() < 1e-8);
  CHECK(g.var.minCoeff() >= kVarianceFloor);
  // Mean interpolates the inducing values (plus the mean function).
  const Eigen::VectorXd mean_fn = (s.z * s.mean.weights).array() + s.mean.constant;
  CHECK(testing::max_abs(g.mu - mean_fn - s.m) < 1e-8);
}

TEST_CASE("KL divergence") {
  for (CovarianceForm form : {CovarianceForm::Diagonal, CovarianceForm::Full}) {
    const GPLayerState s = random_state(6, 3, form, 40);
    CHECK(kl_to_prior(s) == doctest::Approx(dense_kl(s)).epsilon(1e-9));
    CHECK(kl_to_prior(s) >= 0.0);
  }
}

TEST_CASE("trace penalty equals the summed conditional residual") {
  const GPLayerState s = random_state(5, 2, CovarianceForm::Diagonal, 50);
  const Eigen::MatrixXd x = testing::random_matrix(7, 2, 51);
  const Eigen::MatrixXd kmm = kernel_matrix(s.kernel, s.z, s.z);
  const Eigen::MatrixXd knm = kernel_matrix(s.kernel, x, s.z);
  const double want = (s.kernel.outputscale - (knm * kmm.inverse() * knm.transpose()).diagonal().array()).sum();
  CHECK(trace_penalty(s, x) == doctest::Approx(want).epsilon(1e-9));
  CHECK(trace_penalty(s, s.z) == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("validation and dimension errors") {
  GPLayerState s = random_state(4, 2, CovarianceForm::Diagonal, 60);
  CHECK_THROWS_AS(predict_marginal(s, testing::random_matrix(3, 3, 1)), DimensionMismatch);
  s.s_diag[1] = -1.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = random_state(4, 2, CovarianceForm::Diagonal, 60);
  s.m.resize(3);
  CHECK_THROWS_AS(s.validate(), DimensionMismatch);
}

TEST_CASE("tape API gradients match finite differences") {
  const GPLayerState s = random_state(5, 2, CovarianceForm::Full, 70);
  const Eigen::MatrixXd x = testing::random_matrix(4, 2, 71);
  auto objective = [&](const GPLayerState& st, GPLayerState* grad_holder) {
    ad::Tape tape;
    gp::UnitVars u = gp::bind(tape, st, grad_holder != nullptr);
    gp::UnitCache c = gp::prepare(u);
    ad::Var xin = tape.constant(x);
    gp::MarginalVars mv = gp::predict(u, c, xin, xin);
    ad::Var total = ad::add(ad::add(ad::sum(mv.mean), ad::sum(ad::log(mv.var))), gp::kl(u, c));
    if (grad_holder != nullptr) {
      tape.backward(total);
      grad_holder->m = tape.grad(u.m).col(0);
      grad_holder->z = tape.grad(u.z);
    }
    return total.scalar();
  };
  GPLayerState g;
  objective(s, &g);
  for (Eigen::Index k = 0; k < s.m.size(); ++k) {
    GPLayerState up = s, down = s;
    up.m[k] += 1e-6;
    down.m[k] -= 1e-6;
    CHECK(g.m[k] == doctest::Approx((objective(up, nullptr) - objective(down, nullptr)) / 2e-6).epsilon(1e-6));
  }
  for (Eigen::Index k = 0; k < s.z.size(); ++k) {
    GPLayerState up = s, down = s;
    up.z.data()[k] += 1e-6;
    down.z.data()[k] -= 1e-6;
    CHECK(g.z.data()[k] ==
          doctest::Approx((objective(up, nullptr) - objective(down, nullptr)) / 2e-6).epsilon(1e-5));
  }
}
