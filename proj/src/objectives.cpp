#include "dspp/objectives.hpp"

#include "dspp/error.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace dspp {

double default_beta_reg(Family family) { return uses_variational_bound(family) ? 1.0 : 0.2; }

bool uses_variational_bound(Family family) { return family == Family::SVGP || family == Family::DGP; }

ad::Var total_kl(const ModelVars& vars) {
  ad::Var total;
  for (std::size_t l = 0; l < vars.units.size(); ++l) {
    for (std::size_t u = 0; u < vars.units[l].size(); ++u) {
      ad::Var k = gp::kl(vars.units[l][u], vars.caches[l][u]);
      total = total.valid() ? ad::add(total, k) : k;
    }
  }
  return total;
}

namespace {

void check_batch(const Model& model, const Batch& batch) {
  if (batch.x.rows() == 0) throw std::invalid_argument("objective: empty batch");
  if (batch.x.rows() != batch.y.rows()) throw DimensionMismatch("objective: X and Y row counts differ");
  if (batch.x.cols() != model.input_dim()) throw DimensionMismatch("objective: wrong number of input columns");
  if (batch.y.cols() != model.output_dims()) throw DimensionMismatch("objective: wrong number of output columns");
}

// Per-point data terms, n x 1.
ad::Var pointwise(const Model& model, const ModelVars& vars, const Batch& batch, const ObjectiveOptions& options) {
  using namespace ad;
  check_batch(model, batch);
  ad::Tape& tape = vars.log_obs_sd.tape();
  const Eigen::Index n = batch.x.rows();

  std::mt19937_64 rng(options.seed);
  SampleSource source;
  if (model.config().sampled()) {
    source.samples = options.samples > 0 ? options.samples : model.config().mc_samples;
    source.rng = options.zero_noise ? nullptr : &rng;
  }
  const ForwardVars fv = forward(model, vars, tape.constant(batch.x), source);
  const Eigen::Index k_total = fv.components;
  Var y = tape.constant(Eigen::MatrixXd(batch.y.replicate(k_total, 1)));

  if (uses_variational_bound(model.config().family)) {
    Var fit = gaussian_log_density(y, fv.mean, fv.obs_var);
    Var penalty = scale(div(fv.latent_var, fv.obs_var), -0.5);
    Var per_path = reshape(row_sums(add(fit, penalty)), n, k_total);
    return matmul(per_path, exp(fv.log_weights));
  }
  Var ll = gaussian_log_density(y, fv.mean, add(fv.latent_var, fv.obs_var));
  Var per_path = reshape(row_sums(ll), n, k_total);
  return logsumexp_rows(add(per_path, transpose(fv.log_weights)));
}

}  // namespace

ObjectiveVars build_objective(const Model& model, const ModelVars& vars, const Batch& batch,
                              const ObjectiveOptions& options) {
  if (!(options.beta_reg >= 0.0)) throw std::invalid_argument("objective: beta_reg must be >= 0");
  if (!(options.n_scale >= 0.0)) throw std::invalid_argument("objective: n_scale must be >= 0");
  ObjectiveVars out;
  out.data_term = ad::sum(pointwise(model, vars, batch, options));
  out.kl_term = total_kl(vars);
  out.total = ad::sub(ad::scale(out.data_term, options.n_scale), ad::scale(out.kl_term, options.beta_reg));
  return out;
}

ObjectiveResult evaluate_objective(const Model& model, const Batch& batch, const ObjectiveOptions& options,
                                   bool with_gradient) {
  ad::Tape tape;
  const ModelVars vars = bind(tape, model, with_gradient);
  const ObjectiveVars ov = build_objective(model, vars, batch, options);
  ObjectiveResult result;
  result.value.total = ov.total.scalar();
  result.value.data_term = ov.data_term.scalar();
  result.value.kl_term = ov.kl_term.scalar();
  result.value.n_scale = options.n_scale;
  if (!with_gradient) return result;

  tape.backward(ov.total);
  const ParamSet& ps = model.params();
  result.gradient.resize(ps.num_scalars());
  for (std::size_t b = 0; b < ps.blocks(); ++b) {
    const Eigen::MatrixXd g = tape.grad(vars.leaves[b]);
    const Eigen::Index offset = ps.offset(b);
    for (Eigen::Index k = 0; k < g.size(); ++k) {
      if (!std::isfinite(g.data()[k])) throw NonFiniteGradient(ps.scalar_name(offset + k));
      result.gradient[offset + k] = g.data()[k];
    }
  }
  return result;
}

Eigen::VectorXd pointwise_data_terms(const Model& model, const Batch& batch, const ObjectiveOptions& options) {
  ad::Tape tape;
  const ModelVars vars = bind(tape, model, false);
  return pointwise(model, vars, batch, options).value().col(0);
}

namespace {

ObjectiveValue checked(const Model& model, const Batch& batch, const ObjectiveOptions& options,
                       std::initializer_list<Family> allowed, const char* name) {
  bool ok = false;
  for (Family f : allowed) ok = ok || model.config().family == f;
  if (!ok) throw std::invalid_argument(std::string(name) + ": model family is " + to_string(model.config().family));
  return evaluate_objective(model, batch, options, false).value;
}

}  // namespace

ObjectiveValue elbo_svgp(const Model& model, const Batch& batch, const ObjectiveOptions& options) {
  return checked(model, batch, options, {Family::SVGP}, "elbo_svgp");
}

ObjectiveValue objective_ppgpr(const Model& model, const Batch& batch, const ObjectiveOptions& options) {
  return checked(model, batch, options, {Family::PPGPR}, "objective_ppgpr");
}

ObjectiveValue elbo_dsvi(const Model& model, const Batch& batch, const ObjectiveOptions& options) {
  return checked(model, batch, options, {Family::DGP}, "elbo_dsvi");
}

ObjectiveValue objective_dspp(const Model& model, const Batch& batch, const ObjectiveOptions& options) {
  return checked(model, batch, options, {Family::DSPP, Family::BPDGP}, "objective_dspp");
}

}  // namespace dspp
