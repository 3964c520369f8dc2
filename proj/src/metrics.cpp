#include "dspp/metrics.hpp"

#include "dspp/error.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace dspp {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double log_normal(double y, double mean, double var) {
  const double r = y - mean;
  return -0.5 * r * r / var - 0.5 * std::log(var) - kHalfLog2Pi;
}

double logsumexp(const Eigen::VectorXd& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// E|X| for X ~ N(mu, v).
double abs_moment(double mu, double v) {
  if (v <= 0.0) return std::abs(mu);
  const double s = std::sqrt(v);
  return mu * (2.0 * normal_cdf(mu / s) - 1.0) + 2.0 * s * normal_pdf(mu / s);
}

}  // namespace

double nll(const PredictiveMixture& mixture, double y, Eigen::Index d) {
  const Eigen::Index k = mixture.components();
  Eigen::VectorXd terms(k);
  for (Eigen::Index s = 0; s < k; ++s) {
    terms[s] = std::log(mixture.weights[s]) + log_normal(y, mixture.means(s, d), mixture.variances(s, d));
  }
  return -logsumexp(terms);
}

double nll(const PredictiveMixture& mixture, const Eigen::RowVectorXd& y) {
  if (y.size() != mixture.dims()) throw DimensionMismatch("nll: target has the wrong number of dimensions");
  const Eigen::Index k = mixture.components();
  Eigen::VectorXd terms(k);
  for (Eigen::Index s = 0; s < k; ++s) {
    double t = std::log(mixture.weights[s]);
    for (Eigen::Index d = 0; d < y.size(); ++d) t += log_normal(y[d], mixture.means(s, d), mixture.variances(s, d));
    terms[s] = t;
  }
  return -logsumexp(terms);
}

Eigen::RowVectorXd point_prediction(const PredictiveMixture& mixture) {
  return mixture.weights.transpose() * mixture.means;
}

double crps_mixture(const PredictiveMixture& mixture, double y, Eigen::Index d) {
  const Eigen::Index k = mixture.components();
  double first = 0.0;
  double second = 0.0;
  for (Eigen::Index s = 0; s < k; ++s) {
    const double ws = mixture.weights[s];
    first += ws * abs_moment(y - mixture.means(s, d), mixture.variances(s, d));
    for (Eigen::Index t = 0; t < k; ++t) {
      second += ws * mixture.weights[t] *
                abs_moment(mixture.means(s, d) - mixture.means(t, d), mixture.variances(s, d) + mixture.variances(t, d));
    }
  }
  return std::max(0.0, first - 0.5 * second);
}

EvalReport evaluate_mixtures(const std::vector<PredictiveMixture>& mixtures, const Eigen::MatrixXd& y,
                             const Standardizer& standardizer) {
  const auto n = static_cast<Eigen::Index>(mixtures.size());
  if (n == 0) throw std::invalid_argument("evaluate: empty test set");
  if (y.rows() != n) throw DimensionMismatch("evaluate: one mixture per test point required");
  const Eigen::Index dy = y.cols();
  const Eigen::RowVectorXd scale = standardizer.y_scale;
  if (scale.size() != dy) throw DimensionMismatch("evaluate: standardizer does not match the targets");
  const double log_scale_sum = scale.array().log().sum();

  double nll_total = 0.0;
  double crps_total = 0.0;
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(dy);
  for (Eigen::Index i = 0; i < n; ++i) {
    const PredictiveMixture& pm = mixtures[static_cast<std::size_t>(i)];
    nll_total += nll(pm, Eigen::RowVectorXd(y.row(i))) + log_scale_sum;
    const Eigen::RowVectorXd err = point_prediction(pm) - y.row(i);
    sq += err.array().square().matrix();
    for (Eigen::Index d = 0; d < dy; ++d) crps_total += crps_mixture(pm, y(i, d), d) * scale[d];
  }
  EvalReport r;
  r.n_test = n;
  r.nll = nll_total / static_cast<double>(n) / static_cast<double>(dy);
  const Eigen::RowVectorXd rmse = (sq / static_cast<double>(n)).array().sqrt().matrix().cwiseProduct(scale);
  r.rmse = rmse[0];
  r.mrmse = rmse.mean();
  r.crps = crps_total / static_cast<double>(n * dy);
  return r;
}

EvalReport evaluate(const Model& model, const Dataset& test, const Standardizer& standardizer, int mc_samples,
                    std::uint64_t seed) {
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  std::mt19937_64 rng(seed);
  SampleSource source;
  if (model.config().sampled()) {
    source.rng = &rng;
    source.samples = mc_samples;
  }
  return evaluate_mixtures(predict(model, test.x, source), test.y, standardizer);
}

}  // namespace dspp
