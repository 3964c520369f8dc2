#include "dspp/data.hpp"
#include "dspp/error.hpp"
#include "dspp/objectives.hpp"
#include "helpers.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace dspp;

namespace {

double log_normal(double y, double mean, double var) {
  return -0.5 * (y - mean) * (y - mean) / var - 0.5 * std::log(2 * std::numbers::pi * var);
}

ModelConfig config_for(Family family, int layers, QuadratureKind q = QuadratureKind::QR3, int sites = 1) {
  ModelConfig c;
  c.family = family;
  c.layers = layers;
  c.hidden_width = 2;
  c.inducing_points = 5;
  c.quadrature = q;
  c.quadrature_sites = sites;
  c.mc_samples = 3;
  return c;
}

void perturb(Model& model, std::uint64_t seed, double scale = 0.2) {
  Eigen::VectorXd theta = model.params().flatten();
  theta += testing::random_matrix(theta.size(), 1, seed, scale).col(0);
  model.params().unflatten(theta);
}

// Exact log marginal likelihood of a GP with constant mean c: log N(y | c, K + s2 I).
double exact_log_marginal(const KernelParams& k, double c, double s2, const Eigen::MatrixXd& x,
                          const Eigen::VectorXd& y) {
  Eigen::MatrixXd cov = kernel_matrix(k, x, x);
  cov.diagonal().array() += s2;
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::VectorXd r = y.array() - c;
  const Eigen::VectorXd a = llt.solve(r);
  const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * r.dot(a) - 0.5 * logdet - 0.5 * static_cast<double>(y.size()) * std::log(2 * std::numbers::pi);
}

Batch batch_of(const Dataset& d, Eigen::Index start, Eigen::Index n) {
  return {d.x.middleRows(start, n), d.y.middleRows(start, n)};
}

}  // namespace

TEST_CASE("SVGP bound at the prior equals the Gaussian expectation of the log likelihood") {
  const Dataset d = make_sin_heteroscedastic(5, 1);
  ModelConfig c = config_for(Family::SVGP, 1);
  c.covariance = CovarianceForm::Full;
  c.inducing_points = 5;
  Model model(c, 1, 1);
  GPLayerState s = model.unit_state(0, 0);
  s.z = d.x;
  s.kernel.outputscale = 0.8;
  s.s_chol = kernel_matrix(s.kernel, s.z, s.z).llt().matrixL();
  model.set_unit_state(0, 0, s);
  const double s2 = 0.3;
  model.set_obs_variance(Eigen::VectorXd::Constant(1, s2));

  double oracle = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double y = d.y(i, 0);
    auto integrand = [&](double f) {
      return std::exp(log_normal(f, 0.0, 0.8)) * log_normal(y, f, s2);
    };
    oracle += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, -12.0, 12.0, 15, 1e-14);
  }
  const ObjectiveValue v = elbo_svgp(model, {d.x, d.y}, {});
  CHECK(v.data_term == doctest::Approx(oracle).epsilon(1e-9));
  CHECK(v.kl_term == doctest::Approx(0.0).scale(1.0).epsilon(1e-8));
}

TEST_CASE("SVGP bound with vanishing S at the data is the plain Gaussian log likelihood") {
  const Dataset d = make_sin_heteroscedastic(5, 2);
  ModelConfig c = config_for(Family::SVGP, 1);
  c.covariance = CovarianceForm::Diagonal;
  Model model(c, 1, 1);
  GPLayerState s = model.unit_state(0, 0);
  s.z = d.x;
  s.m = testing::random_matrix(5, 1, 3).col(0);
  s.s_diag.setConstant(1e-14);
  model.set_unit_state(0, 0, s);
  const MarginalGaussian g = predict_marginal(s, d.x);
  const double s2 = model.obs_variance()[0];
  double want = 0.0;
  for (int i = 0; i < 5; ++i) want += log_normal(d.y(i, 0), g.mu[i], s2);
  CHECK(elbo_svgp(model, {d.x, d.y}, {}).data_term == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("SVGP bound never exceeds the exact log marginal likelihood") {
  const Dataset d = make_sin_heteroscedastic(40, 4);
  for (int trial = 0; trial < 10; ++trial) {
    ModelConfig c = config_for(Family::SVGP, 1);
    c.covariance = trial % 2 ? CovarianceForm::Full : CovarianceForm::Diagonal;
    c.inducing_points = 8;
    Model model = Model::initialize(c, d.x, d.y, static_cast<std::uint64_t>(trial));
    perturb(model, 100 + trial, 0.5);
    const GPLayerState s = model.unit_state(0, 0);
    const double s2 = model.obs_variance()[0];
    const ObjectiveValue v = elbo_svgp(model, {d.x, d.y}, {});
    CHECK(v.total <= exact_log_marginal(s.kernel, s.mean.constant, s2, d.x, d.y.col(0)) + 1e-8);
  }
}

TEST_CASE("PPGPR objective") {
  const Dataset d = make_sin_heteroscedastic(8, 5);
  Model model = Model::initialize(config_for(Family::PPGPR, 1), d.x, d.y, 1);
  perturb(model, 6);
  const GPLayerState s = model.unit_state(0, 0);
  const double s2 = model.obs_variance()[0];

  SUBCASE("transcription oracle") {
    const MarginalGaussian g = predict_marginal(s, d.x);
    double data = 0.0;
    for (int i = 0; i < 8; ++i) data += log_normal(d.y(i, 0), g.mu[i], g.var[i] + s2);
    ObjectiveOptions o;
    o.beta_reg = 0.37;
    o.n_scale = 3.0;
    const ObjectiveValue v = objective_ppgpr(model, {d.x, d.y}, o);
    CHECK(v.data_term == doctest::Approx(data).epsilon(1e-12));
    CHECK(v.kl_term == doctest::Approx(kl_to_prior(s)).epsilon(1e-12));
    CHECK(v.total == doctest::Approx(3.0 * data - 0.37 * kl_to_prior(s)).epsilon(1e-12));
  }
  SUBCASE("zero residual") {
    const MarginalGaussian g = predict_marginal(s, d.x.topRows(1));
    Batch b{d.x.topRows(1), Eigen::MatrixXd::Constant(1, 1, g.mu[0])};
    CHECK(objective_ppgpr(model, b, {}).data_term ==
          doctest::Approx(-0.5 * std::log(2 * std::numbers::pi * (g.var[0] + s2))).epsilon(1e-12));
  }
  SUBCASE("matches the SVGP data term when the latent variance vanishes") {
    GPLayerState t = s;
    t.z = d.x.topRows(5);
    t.s_diag.setConstant(1e-14);
    model.set_unit_state(0, 0, t);
    ModelConfig sc = config_for(Family::SVGP, 1);
    sc.covariance = CovarianceForm::Diagonal;
    Model svgp(sc, 1, 1);
    svgp.params().unflatten(model.params().flatten());
    const Batch b = batch_of(d, 0, 5);
    CHECK(objective_ppgpr(model, b, {}).data_term == doctest::Approx(elbo_svgp(svgp, b, {}).data_term).epsilon(1e-9));
  }
  CHECK_THROWS_AS(elbo_svgp(model, {d.x, d.y}, {}), std::invalid_argument);
}

TEST_CASE("data terms are additive and minibatch estimates are unbiased") {
  const Dataset d = make_sin_heteroscedastic(6, 7);
  for (Family fam : {Family::SVGP, Family::PPGPR, Family::DSPP, Family::DGP}) {
    const int layers = (fam == Family::SVGP || fam == Family::PPGPR) ? 1 : 2;
    ModelConfig c = config_for(fam, layers, QuadratureKind::QR1, 3);
    c.inducing_points = 4;
    Model model = Model::initialize(c, d.x, d.y, 2);
    perturb(model, 8);
    ObjectiveOptions o;
    o.zero_noise = true;
    const double full = evaluate_objective(model, {d.x, d.y}, o, false).value.data_term;
    double singles = 0.0;
    for (int i = 0; i < 6; ++i) singles += evaluate_objective(model, batch_of(d, i, 1), o, false).value.data_term;
    CHECK(full == doctest::Approx(singles).epsilon(1e-12));

    double mean = 0.0;
    int subsets = 0;
    for (int i = 0; i < 6; ++i) {
      for (int j = i + 1; j < 6; ++j) {
        Batch b;
        b.x.resize(2, 1);
        b.y.resize(2, 1);
        b.x << d.x(i, 0), d.x(j, 0);
        b.y << d.y(i, 0), d.y(j, 0);
        ObjectiveOptions ob = o;
        ob.n_scale = 3.0;
        const ObjectiveValue v = evaluate_objective(model, b, ob, false).value;
        mean += v.n_scale * v.data_term;
        ++subsets;
      }
    }
    CHECK(subsets == 15);
    CHECK(mean / subsets == doctest::Approx(full).epsilon(1e-12));
  }
}

TEST_CASE("KL term does not depend on the batch") {
  const Dataset d = make_sin_heteroscedastic(10, 9);
  Model model = Model::initialize(config_for(Family::DSPP, 2, QuadratureKind::QR3, 3), d.x, d.y, 3);
  perturb(model, 10);
  const double a = objective_dspp(model, batch_of(d, 0, 3), {}).kl_term;
  const double b = objective_dspp(model, batch_of(d, 4, 6), {}).kl_term;
  CHECK(a == b);
  double sum_kl = 0.0;
  for (int l = 0; l < 2; ++l) {
    for (int u = 0; u < (l == 0 ? 2 : 1); ++u) sum_kl += kl_to_prior(model.unit_state(l, u));
  }
  CHECK(a == doctest::Approx(sum_kl).epsilon(1e-12));
}

TEST_CASE("DSPP objective") {
  const Dataset d = make_sin_heteroscedastic(6, 11);
  const Eigen::MatrixXd x2 = testing::random_matrix(6, 2, 12);

  SUBCASE("beta = 0 is the scaled log likelihood") {
    Model model = Model::initialize(config_for(Family::DSPP, 2, QuadratureKind::QR3, 4), d.x, d.y, 1);
    perturb(model, 2);
    ObjectiveOptions o;
    o.beta_reg = 0.0;
    o.n_scale = 2.5;
    const ObjectiveValue v = objective_dspp(model, {d.x, d.y}, o);
    CHECK(v.total == doctest::Approx(2.5 * v.data_term).epsilon(1e-14));
  }
  SUBCASE("one site at zero is PPGPR on the composed functions") {
    Model model = Model::initialize(config_for(Family::DSPP, 2, QuadratureKind::QR3, 1), d.x, d.y, 3);
    perturb(model, 4);
    QuadratureRule r = model.quadrature_rule(0);
    r.set_node_params(Eigen::MatrixXd::Zero(1, 2));
    model.set_quadrature_rule(0, r);
    const MarginalGaussian g1 = predict_marginal(model.unit_state(0, 0), d.x);
    const MarginalGaussian g2 = predict_marginal(model.unit_state(0, 1), d.x);
    Eigen::MatrixXd h(6, 2);
    h << g1.mu, g2.mu;
    const MarginalGaussian out = predict_marginal(model.unit_state(1, 0), h);
    double want = 0.0;
    for (int i = 0; i < 6; ++i) want += log_normal(d.y(i, 0), out.mu[i], out.var[i] + model.obs_variance()[0]);
    CHECK(objective_dspp(model, {d.x, d.y}, {}).data_term == doctest::Approx(want).epsilon(1e-10));
  }
  SUBCASE("QR1 W = 2, S = 3 against a brute-force mixture density") {
    Model model = Model::initialize(config_for(Family::DSPP, 2, QuadratureKind::QR1, 3), x2, d.y, 5);
    perturb(model, 6);
    const QuadratureRule rule = model.quadrature_rule(0);
    const Eigen::MatrixXd xi = rule.node_table();
    const Eigen::VectorXd w = rule.weights();
    const Eigen::MatrixXd x = x2.topRows(1);
    const MarginalGaussian g1 = predict_marginal(model.unit_state(0, 0), x);
    const MarginalGaussian g2 = predict_marginal(model.unit_state(0, 1), x);
    double density = 0.0;
    for (int s1 = 0; s1 < 3; ++s1) {
      for (int s2 = 0; s2 < 3; ++s2) {
        Eigen::MatrixXd g(1, 2);
        g << g1.mu[0] + xi(s1, 0) * std::sqrt(g1.var[0]), g2.mu[0] + xi(s2, 1) * std::sqrt(g2.var[0]);
        const MarginalGaussian f = predict_marginal(model.unit_state(1, 0), g);
        density += w[s1 + 3 * s2] * std::exp(log_normal(d.y(0, 0), f.mu[0], f.var[0] + model.obs_variance()[0]));
      }
    }
    CHECK(objective_dspp(model, {x, d.y.topRows(1)}, {}).data_term ==
          doctest::Approx(std::log(density)).epsilon(1e-12));
  }
  SUBCASE("far-off targets give a finite mixture log density") {
    Model model = Model::initialize(config_for(Family::DSPP, 2, QuadratureKind::QR3, 5), d.x, d.y, 7);
    perturb(model, 8);
    Batch b{d.x.topRows(1), Eigen::MatrixXd::Constant(1, 1, 1e4)};
    const double v = objective_dspp(model, b, {}).data_term;
    CHECK(std::isfinite(v));
    // Extended-precision reference.
    const auto mix = predict(model, b.x)[0];
    long double acc = 0.0L;
    long double mx = -1e300L;
    std::vector<long double> terms;
    for (Eigen::Index k = 0; k < mix.components(); ++k) {
      const long double t = std::log((long double)mix.weights[k]) -
                            0.5L * (1e4L - mix.means(k, 0)) * (1e4L - mix.means(k, 0)) / mix.variances(k, 0) -
                            0.5L * std::log(2.0L * std::numbers::pi_v<long double> * mix.variances(k, 0));
      terms.push_back(t);
      mx = std::max(mx, t);
    }
    for (long double t : terms) acc += std::exp(t - mx);
    CHECK(v == doctest::Approx(static_cast<double>(mx + std::log(acc))).epsilon(1e-12));
  }
}

TEST_CASE("DSVI bound") {
  const Eigen::MatrixXd x = testing::random_matrix(5, 2, 21);
  const Eigen::MatrixXd y = testing::random_matrix(5, 1, 22);
  ModelConfig c = config_for(Family::DGP, 2);
  c.inducing_points = 5;
  c.covariance = CovarianceForm::Diagonal;
  Model model = Model::initialize(c, x, y, 1);
  perturb(model, 2);

  SUBCASE("fixed seed gives a fixed value") {
    ObjectiveOptions o;
    o.seed = 5;
    o.samples = 4;
    CHECK(elbo_dsvi(model, {x, y}, o).total == elbo_dsvi(model, {x, y}, o).total);
    ObjectiveOptions o2 = o;
    o2.seed = 6;
    CHECK(elbo_dsvi(model, {x, y}, o).total != elbo_dsvi(model, {x, y}, o2).total);
  }
  SUBCASE("deterministic hidden layer reduces to SVGP on the hidden means") {
    for (int u = 0; u < 2; ++u) {
      GPLayerState s = model.unit_state(0, u);
      s.z = x;  // evaluate at the inducing inputs
      s.s_diag.setConstant(1e-300);
      model.set_unit_state(0, u, s);
    }
    const MarginalGaussian g1 = predict_marginal(model.unit_state(0, 0), x);
    const MarginalGaussian g2 = predict_marginal(model.unit_state(0, 1), x);
    CHECK(g1.var.maxCoeff() < 1e-8);
    Eigen::MatrixXd h(5, 2);
    h << g1.mu, g2.mu;
    ModelConfig sc = config_for(Family::SVGP, 1);
    sc.inducing_points = 5;
    sc.covariance = CovarianceForm::Diagonal;
    Model svgp(sc, 2, 1);
    svgp.set_unit_state(0, 0, model.unit_state(1, 0));
    svgp.set_obs_variance(model.obs_variance());
    ObjectiveOptions o;
    o.seed = 3;
    o.samples = 16;
    const ObjectiveValue deep = elbo_dsvi(model, {x, y}, o);
    const ObjectiveValue flat = elbo_svgp(svgp, {h, y}, {});
    // Hidden variances sit at the 1e-10 floor, so sampled paths move by about 1e-5.
    CHECK(deep.data_term == doctest::Approx(flat.data_term).epsilon(1e-4));
    o.zero_noise = true;
    CHECK(elbo_dsvi(model, {x, y}, o).data_term == doctest::Approx(flat.data_term).epsilon(1e-12));
    CHECK(deep.kl_term == doctest::Approx(flat.kl_term + kl_to_prior(model.unit_state(0, 0)) +
                                          kl_to_prior(model.unit_state(0, 1)))
                              .epsilon(1e-12));
  }
  SUBCASE("Monte Carlo estimator agrees with a million-sample oracle") {
    const Batch one{x.topRows(1), y.topRows(1)};
    ObjectiveOptions big;
    big.samples = 1000000;
    big.seed = 99;
    const double oracle = pointwise_data_terms(model, one, big)[0];
    const int reps = 400;
    double mean = 0.0;
    double sq = 0.0;
    for (int r = 0; r < reps; ++r) {
      ObjectiveOptions o;
      o.samples = 10;
      o.seed = static_cast<std::uint64_t>(1000 + r);
      const double v = pointwise_data_terms(model, one, o)[0];
      mean += v;
      sq += v * v;
    }
    mean /= reps;
    const double se = std::sqrt((sq / reps - mean * mean) / reps);
    CHECK(se > 0.0);
    CHECK(std::abs(mean - oracle) < 3.0 * se);
  }
}

TEST_CASE("objective argument checks") {
  const Dataset d = make_sin_heteroscedastic(6, 1);
  Model model = Model::initialize(config_for(Family::PPGPR, 1), d.x, d.y, 1);
  CHECK_THROWS_AS(objective_ppgpr(model, {d.x, d.y.topRows(3)}, {}), DimensionMismatch);
  CHECK_THROWS_AS(objective_ppgpr(model, {Eigen::MatrixXd(0, 1), Eigen::MatrixXd(0, 1)}, {}), std::invalid_argument);
  ObjectiveOptions o;
  o.beta_reg = -1.0;
  CHECK_THROWS_AS(objective_ppgpr(model, {d.x, d.y}, o), std::invalid_argument);
  CHECK(default_beta_reg(Family::SVGP) == 1.0);
  CHECK(default_beta_reg(Family::DSPP) == 0.2);
}
