#include "dspp/models.hpp"

#include "dspp/error.hpp"
#include "dspp/training.hpp"

#include <cmath>
#include <stdexcept>

namespace dspp {

Family parse_family(std::string_view text) {
  if (text == "svgp" || text == "SVGP") return Family::SVGP;
  if (text == "ppgpr" || text == "PPGPR") return Family::PPGPR;
  if (text == "dgp" || text == "DGP") return Family::DGP;
  if (text == "dspp" || text == "DSPP") return Family::DSPP;
  if (text == "bpdgp" || text == "BPDGP") return Family::BPDGP;
  throw std::invalid_argument("unknown model family '" + std::string(text) + "'");
}

std::string to_string(Family family) {
  switch (family) {
    case Family::SVGP: return "svgp";
    case Family::PPGPR: return "ppgpr";
    case Family::DGP: return "dgp";
    case Family::DSPP: return "dspp";
    case Family::BPDGP: return "bpdgp";
  }
  return "?";
}

std::string to_string(CovarianceForm form) { return form == CovarianceForm::Diagonal ? "diag" : "full"; }

CovarianceForm parse_covariance_form(std::string_view text) {
  if (text == "diag" || text == "diagonal") return CovarianceForm::Diagonal;
  if (text == "full") return CovarianceForm::Full;
  throw std::invalid_argument("unknown covariance form '" + std::string(text) + "'");
}

TopologyWiring topology_wiring(int topology) {
  switch (topology) {
    case 1: return {false, true, false};
    case 2: return {false, false, true};
    case 3: return {false, true, true};
    case 4: return {true, true, true};
    default: throw std::invalid_argument("topology must be 1, 2, 3 or 4 (got " + std::to_string(topology) + ")");
  }
}

CovarianceForm ModelConfig::covariance_form() const {
  if (covariance) return *covariance;
  return (family == Family::DSPP || family == Family::PPGPR || family == Family::BPDGP) ? CovarianceForm::Diagonal
                                                                                       : CovarianceForm::Full;
}

void ModelConfig::validate() const {
  if (layers < 1 || layers > 3) throw ConfigError("layers must be 1, 2 or 3");
  if ((family == Family::SVGP || family == Family::PPGPR) && layers != 1) {
    throw ConfigError(to_string(family) + " is a single-layer model");
  }
  if (hidden_width < 1) throw ConfigError("hidden_width must be >= 1");
  if (inducing_points < 1) throw ConfigError("inducing_points must be >= 1");
  if (quadrature_sites < 1 || quadrature_sites > kMaxHermiteSites) throw ConfigError("quadrature sites must be in 1..30");
  if (mc_samples < 1 || eval_mc_samples < 1) throw ConfigError("Monte Carlo sample counts must be >= 1");
  if (topology != 1 && layers != 3) throw ConfigError("topology applies only to 3-layer models");
  topology_wiring(topology);
}

PredictiveMixture PredictiveMixture::marginal(Eigen::Index d) const {
  return {weights, means.col(d), variances.col(d)};
}

// ---- Model construction ----------------------------------------------------------------------

Model::Model(ModelConfig config, int input_dim, int output_dims)
    : config_(std::move(config)), input_dim_(input_dim), output_dims_(output_dims) {
  config_.validate();
  if (input_dim < 1) throw DimensionMismatch("model needs at least one input dimension");
  if (output_dims < 1) throw DimensionMismatch("model needs at least one output dimension");
  lmc_ = config_.lmc || output_dims > 1;

  const int n_layers = config_.layers;
  const int w = config_.hidden_width;
  for (int l = 0; l < n_layers; ++l) {
    const bool hidden = l < n_layers - 1;
    int kernel_dim = l == 0 ? input_dim : w;
    int mean_dim = kernel_dim;
    if (n_layers == 3 && l == 1) {
      const TopologyWiring wiring = topology_wiring(config_.topology);
      kernel_dim = w + (wiring.kernel_sees_x ? input_dim : 0);
      mean_dim = (wiring.mean_sees_hidden ? w : 0) + (wiring.mean_sees_x ? input_dim : 0);
    }
    add_layer(l, kernel_dim, mean_dim, hidden ? w : (lmc_ ? output_dims : 1), hidden);
    if (hidden && config_.family == Family::DSPP) {
      RuleLayout slot;
      slot.rule = QuadratureRule::initial(config_.quadrature, config_.quadrature_sites, w);
      if (slot.rule.learnable()) {
        const std::string prefix = "layer" + std::to_string(l + 1) + ".quadrature.";
        slot.nodes = params_.add(prefix + "nodes", slot.rule.node_params());
        slot.logits = params_.add(prefix + "weight_logits", slot.rule.weight_logits());
      }
      rules_.push_back(std::move(slot));
    }
  }
  obs_param_ = params_.add("likelihood.log_sigma_obs", Eigen::MatrixXd::Constant(1, output_dims, std::log(0.5)));
  if (lmc_) mixing_param_ = params_.add("lmc.mixing", Eigen::MatrixXd::Identity(output_dims, output_dims));
}

void Model::add_layer(int index, int kernel_dim, int mean_dim, int units, bool hidden) {
  LayerLayout layout;
  layout.kernel_input_dim = kernel_dim;
  layout.mean_input_dim = mean_dim;
  const int mm = config_.inducing_points;
  const CovarianceForm form = config_.covariance_form();
  for (int u = 0; u < units; ++u) {
    const std::string prefix = "layer" + std::to_string(index + 1) + ".gp" + std::to_string(u + 1) + ".";
    UnitLayout ul;
    Eigen::MatrixXd z(mm, kernel_dim);
    for (int i = 0; i < mm; ++i) z.row(i).setConstant(-1.0 + 2.0 * (i + 0.5) / mm);
    ul.z = params_.add(prefix + "inducing_points", z);
    ul.m = params_.add(prefix + "variational_mean", Eigen::VectorXd::Zero(mm));
    if (form == CovarianceForm::Diagonal) {
      ul.s = params_.add(prefix + "variational_log_var", Eigen::VectorXd::Constant(mm, std::log(1e-2)));
    } else {
      Eigen::MatrixXd p = Eigen::MatrixXd::Zero(mm, mm);
      p.diagonal().setConstant(std::log(1e-1));
      ul.s = params_.add(prefix + "variational_chol", p);
    }
    ul.log_lengthscale = params_.add(prefix + "log_lengthscale", Eigen::VectorXd::Zero(kernel_dim));
    ul.log_outputscale = params_.add(prefix + "log_outputscale", Eigen::MatrixXd::Zero(1, 1));
    if (hidden) ul.mean_weights = params_.add(prefix + "mean_weights", Eigen::VectorXd::Zero(mean_dim));
    ul.mean_bias = params_.add(prefix + (hidden ? "mean_bias" : "mean_constant"), Eigen::MatrixXd::Zero(1, 1));
    layout.units.push_back(ul);
  }
  layers_.push_back(std::move(layout));
}

Model Model::initialize(const ModelConfig& config, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                        std::uint64_t seed) {
  if (x.rows() != y.rows()) throw DimensionMismatch("initialize: X and Y row counts differ");
  Model model(config, static_cast<int>(x.cols()), static_cast<int>(y.cols()));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n_layers = model.num_layers();

  Eigen::MatrixXd hidden;  // mean-function features of the previous hidden layer
  for (int l = 0; l < n_layers; ++l) {
    const bool is_hidden = l < n_layers - 1;
    Eigen::MatrixXd kernel_in;
    Eigen::MatrixXd mean_in;
    if (l == 0) {
      kernel_in = x;
      mean_in = x;
    } else if (n_layers == 3 && l == 1) {
      const TopologyWiring wiring = topology_wiring(config.topology);
      auto cat = [&](bool with_hidden, bool with_x) {
        Eigen::MatrixXd out(x.rows(), (with_hidden ? hidden.cols() : 0) + (with_x ? x.cols() : 0));
        if (with_hidden) out.leftCols(hidden.cols()) = hidden;
        if (with_x) out.rightCols(x.cols()) = x;
        return out;
      };
      kernel_in = cat(true, wiring.kernel_sees_x);
      mean_in = cat(wiring.mean_sees_hidden, wiring.mean_sees_x);
    } else {
      kernel_in = hidden;
      mean_in = hidden;
    }
    const Eigen::MatrixXd z = kmeans_init(kernel_in, config.inducing_points, rng());
    const LayerLayout& layout = model.layers_[static_cast<std::size_t>(l)];
    Eigen::MatrixXd next(x.rows(), static_cast<Eigen::Index>(layout.units.size()));
    for (std::size_t u = 0; u < layout.units.size(); ++u) {
      const UnitLayout& ul = layout.units[u];
      model.params_.value(ul.z) = z;
      if (is_hidden) {
        Eigen::VectorXd w(layout.mean_input_dim);
        for (Eigen::Index k = 0; k < w.size(); ++k) w[k] = normal(rng) / std::sqrt(static_cast<double>(w.size()));
        model.params_.value(*ul.mean_weights) = w;
        next.col(static_cast<Eigen::Index>(u)) = mean_in * w;
      } else {
        const Eigen::Index col = model.has_lmc() ? static_cast<Eigen::Index>(u) : 0;
        model.params_.value(ul.mean_bias)(0, 0) = y.col(col).mean();
      }
    }
    hidden = next;
  }
  for (std::size_t r = 0; r < model.rules_.size(); ++r) {
    RuleLayout& slot = model.rules_[r];
    slot.rule = QuadratureRule::initial(config.quadrature, config.quadrature_sites, config.hidden_width, &rng);
    if (slot.nodes) model.params_.value(*slot.nodes) = slot.rule.node_params();
    if (slot.logits) model.params_.value(*slot.logits) = slot.rule.weight_logits();
  }
  return model;
}

GPLayerState Model::unit_state(int layer, int unit) const {
  const LayerLayout& layout = layers_.at(static_cast<std::size_t>(layer));
  const UnitLayout& ul = layout.units.at(static_cast<std::size_t>(unit));
  GPLayerState s;
  s.z = params_.value(ul.z);
  s.m = params_.value(ul.m).col(0);
  s.form = config_.covariance_form();
  if (s.form == CovarianceForm::Diagonal) {
    s.s_diag = params_.value(ul.s).col(0).array().exp();
  } else {
    const Eigen::MatrixXd& p = params_.value(ul.s);
    s.s_chol = p.triangularView<Eigen::StrictlyLower>();
    s.s_chol.diagonal() = p.diagonal().array().exp();
  }
  s.kernel.lengthscales = params_.value(ul.log_lengthscale).col(0).array().exp();
  s.kernel.outputscale = std::exp(params_.value(ul.log_outputscale)(0, 0));
  s.kernel.smoothness = config_.smoothness;
  const double bias = params_.value(ul.mean_bias)(0, 0);
  s.mean = ul.mean_weights ? MeanFunction::make_linear(params_.value(*ul.mean_weights).col(0), bias)
                           : MeanFunction::make_constant(bias);
  return s;
}

void Model::set_unit_state(int layer, int unit, const GPLayerState& state) {
  state.validate();
  const LayerLayout& layout = layers_.at(static_cast<std::size_t>(layer));
  const UnitLayout& ul = layout.units.at(static_cast<std::size_t>(unit));
  auto assign = [&](std::size_t idx, const Eigen::MatrixXd& v) {
    Eigen::MatrixXd& dst = params_.value(idx);
    if (dst.rows() != v.rows() || dst.cols() != v.cols()) {
      throw DimensionMismatch("set_unit_state: shape mismatch for '" + params_[idx].name + "'");
    }
    dst = v;
  };
  if (state.form != config_.covariance_form()) throw DimensionMismatch("set_unit_state: covariance form mismatch");
  assign(ul.z, state.z);
  assign(ul.m, state.m);
  if (state.form == CovarianceForm::Diagonal) {
    assign(ul.s, state.s_diag.array().log().matrix());
  } else {
    Eigen::MatrixXd p = state.s_chol.triangularView<Eigen::StrictlyLower>();
    p.diagonal() = state.s_chol.diagonal().array().log();
    assign(ul.s, p);
  }
  assign(ul.log_lengthscale, state.kernel.lengthscales.array().log().matrix());
  assign(ul.log_outputscale, Eigen::MatrixXd::Constant(1, 1, std::log(state.kernel.outputscale)));
  if (ul.mean_weights) {
    if (state.mean.kind != MeanFunction::Kind::Linear) throw DimensionMismatch("hidden units use linear means");
    assign(*ul.mean_weights, state.mean.weights);
  } else if (state.mean.kind != MeanFunction::Kind::Constant) {
    throw DimensionMismatch("output units use constant means");
  }
  assign(ul.mean_bias, Eigen::MatrixXd::Constant(1, 1, state.mean.constant));
}

QuadratureRule Model::quadrature_rule(int l) const {
  const RuleLayout& slot = rules_.at(static_cast<std::size_t>(l));
  QuadratureRule rule = slot.rule;
  if (slot.nodes) rule.set_node_params(params_.value(*slot.nodes));
  if (slot.logits) rule.set_weight_logits(params_.value(*slot.logits).col(0));
  return rule;
}

void Model::set_quadrature_rule(int l, const QuadratureRule& rule) {
  RuleLayout& slot = rules_.at(static_cast<std::size_t>(l));
  if (rule.kind() != slot.rule.kind() || rule.sites() != slot.rule.sites() || rule.width() != slot.rule.width()) {
    throw DimensionMismatch("set_quadrature_rule: rule structure differs");
  }
  slot.rule = rule;
  if (slot.nodes) params_.value(*slot.nodes) = rule.node_params();
  if (slot.logits) params_.value(*slot.logits) = rule.weight_logits();
}

Eigen::VectorXd Model::obs_variance() const {
  return (2.0 * params_.value(obs_param_).row(0).array()).exp().transpose();
}

void Model::set_obs_variance(const Eigen::VectorXd& variance) {
  if (variance.size() != output_dims_) throw DimensionMismatch("set_obs_variance: wrong length");
  params_.value(obs_param_) = (0.5 * variance.array().log()).transpose().matrix();
}

Eigen::MatrixXd Model::mixing() const {
  if (!mixing_param_) return Eigen::MatrixXd::Identity(1, 1);
  return params_.value(*mixing_param_);
}

void Model::set_mixing(const Eigen::MatrixXd& a) {
  if (!mixing_param_) throw std::logic_error("model has no LMC head");
  if (a.rows() != output_dims_ || a.cols() != output_dims_) throw DimensionMismatch("mixing matrix must be D x D");
  params_.value(*mixing_param_) = a;
}

// ---- tape binding and forward pass -------------------------------------------------------------

ModelVars bind(ad::Tape& tape, const Model& model, bool trainable) {
  const ParamSet& ps = model.params();
  ModelVars vars;
  vars.leaves.reserve(ps.blocks());
  for (std::size_t i = 0; i < ps.blocks(); ++i) {
    vars.leaves.push_back(trainable ? tape.variable(ps.value(i)) : tape.constant(ps.value(i)));
  }
  const CovarianceForm form = model.config().covariance_form();
  for (int l = 0; l < model.num_layers(); ++l) {
    std::vector<gp::UnitVars> layer_vars;
    for (const UnitLayout& ul : model.layer(l).units) {
      gp::UnitVars u;
      u.z = vars.leaves[ul.z];
      u.m = vars.leaves[ul.m];
      u.s_param = vars.leaves[ul.s];
      u.log_lengthscales = vars.leaves[ul.log_lengthscale];
      u.log_outputscale = vars.leaves[ul.log_outputscale];
      if (ul.mean_weights) u.mean_weights = vars.leaves[*ul.mean_weights];
      u.mean_bias = vars.leaves[ul.mean_bias];
      u.form = form;
      u.smoothness = model.config().smoothness;
      layer_vars.push_back(u);
    }
    std::vector<gp::UnitCache> layer_caches;
    for (const gp::UnitVars& u : layer_vars) layer_caches.push_back(gp::prepare(u));
    vars.units.push_back(std::move(layer_vars));
    vars.caches.push_back(std::move(layer_caches));
  }
  for (std::size_t r = 0; r < model.rules().size(); ++r) {
    const RuleLayout& slot = model.rules()[r];
    const ad::Var nodes = slot.nodes ? vars.leaves[*slot.nodes] : ad::Var{};
    const ad::Var logits = slot.logits ? vars.leaves[*slot.logits] : ad::Var{};
    vars.rules.push_back(quad::bind(tape, slot.rule, nodes, logits));
  }
  vars.log_obs_sd = vars.leaves[model.obs_param()];
  if (model.mixing_param()) vars.mixing = vars.leaves[*model.mixing_param()];
  return vars;
}

std::pair<ad::Var, ad::Var> wire_topology(int topology, ad::Var hidden, ad::Var x) {
  const TopologyWiring wiring = topology_wiring(topology);
  if (hidden.rows() != x.rows()) throw DimensionMismatch("wire_topology: row counts differ");
  ad::Var both = ad::concat_cols({hidden, x});
  ad::Var kernel_in = wiring.kernel_sees_x ? both : hidden;
  ad::Var mean_in;
  if (wiring.mean_sees_hidden && wiring.mean_sees_x) {
    mean_in = both;
  } else if (wiring.mean_sees_x) {
    mean_in = x;
  } else {
    mean_in = hidden;
  }
  return {kernel_in, mean_in};
}

namespace {

ad::Var standard_normal_block(ad::Tape& tape, Eigen::Index rows, Eigen::Index cols, const SampleSource& source) {
  Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(rows, cols);
  if (source.rng != nullptr) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index k = 0; k < eps.size(); ++k) eps.data()[k] = normal(*source.rng);
  }
  return tape.constant(std::move(eps));
}

}  // namespace

ForwardVars forward(const Model& model, const ModelVars& vars, ad::Var x, const SampleSource& source) {
  using namespace ad;
  if (x.cols() != model.input_dim()) {
    throw DimensionMismatch("forward: expected " + std::to_string(model.input_dim()) + " input columns, got " +
                            std::to_string(x.cols()));
  }
  Tape& tape = x.tape();
  const ModelConfig& cfg = model.config();
  const Eigen::Index n = x.rows();
  const int n_layers = model.num_layers();
  if (cfg.sampled() && source.samples < 1) throw std::invalid_argument("forward: need at least one sample");

  Var kernel_in = x;
  Var mean_in = x;
  Var log_w = tape.constant(Eigen::MatrixXd::Zero(1, 1));
  Eigen::Index k_total = 1;
  std::vector<Var> out_means;
  std::vector<Var> out_vars;

  for (int l = 0; l < n_layers; ++l) {
    std::vector<Var> means;
    std::vector<Var> variances;
    const auto& units = vars.units[static_cast<std::size_t>(l)];
    for (std::size_t u = 0; u < units.size(); ++u) {
      const gp::MarginalVars mv = gp::predict(units[u], vars.caches[static_cast<std::size_t>(l)][u], kernel_in, mean_in);
      means.push_back(mv.mean);
      variances.push_back(mv.var);
    }
    if (l == n_layers - 1) {
      out_means = std::move(means);
      out_vars = std::move(variances);
      break;
    }
    Var mu = concat_cols(means);
    Var sd = sqrt(concat_cols(variances));
    const Eigen::Index rows = mu.rows();
    Var hidden;
    if (cfg.family == Family::DSPP) {
      const quad::RuleVars& rv = vars.rules[static_cast<std::size_t>(l)];
      const Eigen::Index k_layer = rv.component_nodes.rows();
      if (cfg.quadrature == QuadratureKind::QR3 && l > 0) {
        // Site s of this layer continues pathway s of the previous one.
        hidden = add(mu, mul(repeat_rows(rv.component_nodes, n), sd));
        log_w = log_softmax(add(log_w, rv.log_weights));
      } else {
        hidden = add(tile_rows(mu, k_layer), mul(repeat_rows(rv.component_nodes, rows), tile_rows(sd, k_layer)));
        log_w = add(tile_rows(log_w, k_layer), repeat_rows(rv.log_weights, k_total));
        k_total *= k_layer;
      }
    } else if (cfg.sampled()) {
      const Eigen::Index ns = source.samples;
      if (l == 0) {
        Var eps = standard_normal_block(tape, rows * ns, mu.cols(), source);
        hidden = add(tile_rows(mu, ns), mul(eps, tile_rows(sd, ns)));
        log_w = tape.constant(Eigen::MatrixXd::Constant(ns, 1, -std::log(static_cast<double>(ns))));
        k_total = ns;
      } else {
        Var eps = standard_normal_block(tape, rows, mu.cols(), source);
        hidden = add(mu, mul(eps, sd));
      }
    } else {
      throw std::logic_error("single-layer family with hidden layers");
    }
    if (n_layers == 3 && l == 0) {
      auto wired = wire_topology(cfg.topology, hidden, tile_rows(x, k_total));
      kernel_in = wired.first;
      mean_in = wired.second;
    } else {
      kernel_in = hidden;
      mean_in = hidden;
    }
  }

  ForwardVars fv;
  Var mu_f = concat_cols(out_means);
  Var var_f = concat_cols(out_vars);
  if (vars.mixing.valid()) {
    fv.mean = matmul(mu_f, vars.mixing);
    fv.latent_var = matmul(var_f, square(vars.mixing));
  } else {
    fv.mean = mu_f;
    fv.latent_var = var_f;
  }
  fv.obs_var = exp(scale(vars.log_obs_sd, 2.0));
  fv.log_weights = log_w;
  fv.points = n;
  fv.components = k_total;
  return fv;
}

std::vector<PredictiveMixture> to_mixtures(const ForwardVars& fv) {
  const Eigen::Index n = fv.points;
  const Eigen::Index k_total = fv.components;
  const Eigen::MatrixXd& mean = fv.mean.value();
  const Eigen::MatrixXd var = fv.latent_var.value().rowwise() + fv.obs_var.value().row(0);
  Eigen::VectorXd w = fv.log_weights.value().col(0).array().exp();
  w /= w.sum();
  std::vector<PredictiveMixture> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    PredictiveMixture& pm = out[static_cast<std::size_t>(i)];
    pm.weights = w;
    pm.means.resize(k_total, mean.cols());
    pm.variances.resize(k_total, mean.cols());
    for (Eigen::Index k = 0; k < k_total; ++k) {
      pm.means.row(k) = mean.row(k * n + i);
      pm.variances.row(k) = var.row(k * n + i);
    }
  }
  return out;
}

std::vector<PredictiveMixture> predict(const Model& model, const Eigen::MatrixXd& x, const SampleSource& source) {
  ad::Tape tape;
  const ModelVars vars = bind(tape, model, false);
  const ForwardVars fv = forward(model, vars, tape.constant(x), source);
  return to_mixtures(fv);
}

std::vector<PredictiveMixture> forward_svgp(const Model& model, const Eigen::MatrixXd& x) {
  if (model.num_layers() != 1) throw std::invalid_argument("forward_svgp: model has hidden layers");
  return predict(model, x);
}

std::vector<PredictiveMixture> forward_dspp(const Model& model, const Eigen::MatrixXd& x) {
  if (model.config().family != Family::DSPP) throw std::invalid_argument("forward_dspp: not a DSPP model");
  return predict(model, x);
}

std::vector<PredictiveMixture> forward_dgp_sampled(const Model& model, const Eigen::MatrixXd& x, int samples,
                                                   std::mt19937_64* rng) {
  if (!model.config().sampled()) throw std::invalid_argument("forward_dgp_sampled: not a sampled family");
  if (samples < 1) throw std::invalid_argument("forward_dgp_sampled: need at least one sample");
  return predict(model, x, SampleSource{rng, samples});
}

std::vector<PredictiveMixture> forward_lmc(const Model& model, const Eigen::MatrixXd& x, const SampleSource& source) {
  if (!model.has_lmc()) throw std::invalid_argument("forward_lmc: model has no LMC head");
  return predict(model, x, source);
}

}  // namespace dspp
