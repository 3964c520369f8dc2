#pragma once

#include "dspp/gp_layer.hpp"
#include "dspp/params.hpp"
#include "dspp/quadrature.hpp"
#include "dspp/tape.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace dspp {

enum class Family { SVGP, PPGPR, DGP, DSPP, BPDGP };

Family parse_family(std::string_view text);
std::string to_string(Family family);
std::string to_string(CovarianceForm form);
CovarianceForm parse_covariance_form(std::string_view text);

/// How the middle layer of a 3-layer model sees its inputs.
///   1: mean and kernel see layer-1 outputs
///   2: mean sees x, kernel sees layer-1 outputs
///   3: mean sees [layer-1 outputs, x], kernel sees layer-1 outputs
///   4: mean and kernel see [layer-1 outputs, x]
struct TopologyWiring {
  bool kernel_sees_x = false;
  bool mean_sees_hidden = true;
  bool mean_sees_x = false;
};
TopologyWiring topology_wiring(int topology);

struct ModelConfig {
  Family family = Family::DSPP;
  int layers = 2;             // 1..3; SVGP and PPGPR are single-layer
  int hidden_width = 3;       // W, also the middle width of 3-layer models
  int inducing_points = 32;   // M per GP
  QuadratureKind quadrature = QuadratureKind::QR3;
  int quadrature_sites = 10;  // S
  int mc_samples = 10;        // DGP training samples / BPDGP sites during training
  int eval_mc_samples = 32;   // DGP / BPDGP samples at evaluation time
  int topology = 1;
  std::optional<CovarianceForm> covariance;  // family default when empty
  Smoothness smoothness = Smoothness::FiveHalves;
  bool lmc = false;           // forced on when there is more than one output dimension

  [[nodiscard]] CovarianceForm covariance_form() const;
  [[nodiscard]] bool sampled() const { return family == Family::DGP || family == Family::BPDGP; }
  void validate() const;
};

struct PredictiveMixture {
  Eigen::VectorXd weights;    // K, positive, sum to one
  Eigen::MatrixXd means;      // K x D
  Eigen::MatrixXd variances;  // K x D, observation noise included

  [[nodiscard]] Eigen::Index components() const { return weights.size(); }
  [[nodiscard]] Eigen::Index dims() const { return means.cols(); }
  /// One-dimensional marginal of output dimension d.
  [[nodiscard]] PredictiveMixture marginal(Eigen::Index d) const;
};

/// Where each unit's parameters live in the model's ParamSet.
struct UnitLayout {
  std::size_t z = 0, m = 0, s = 0, log_lengthscale = 0, log_outputscale = 0, mean_bias = 0;
  std::optional<std::size_t> mean_weights;
};

struct LayerLayout {
  int kernel_input_dim = 0;
  int mean_input_dim = 0;
  std::vector<UnitLayout> units;
};

struct RuleLayout {
  QuadratureRule rule;  // structure plus the values of fixed (Gauss-Hermite) rules
  std::optional<std::size_t> nodes;
  std::optional<std::size_t> logits;
};

/// Source of reparameterization noise for sampled families. A null generator means
/// every epsilon is zero.
struct SampleSource {
  std::mt19937_64* rng = nullptr;
  int samples = 1;
};

class Model {
 public:
  /// Structure with placeholder parameter values (unit lengthscales, zero mean, prior-scale S).
  Model(ModelConfig config, int input_dim, int output_dims);

  /// Data-driven initialization: k-means inducing points, linear hidden means, target-mean
  /// output constants, Gauss-Hermite-initialized quadrature.
  static Model initialize(const ModelConfig& config, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                          std::uint64_t seed);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] int input_dim() const { return input_dim_; }
  [[nodiscard]] int output_dims() const { return output_dims_; }
  [[nodiscard]] bool has_lmc() const { return lmc_; }
  [[nodiscard]] int num_layers() const { return static_cast<int>(layers_.size()); }
  [[nodiscard]] const LayerLayout& layer(int l) const { return layers_.at(static_cast<std::size_t>(l)); }
  [[nodiscard]] const std::vector<RuleLayout>& rules() const { return rules_; }

  [[nodiscard]] ParamSet& params() { return params_; }
  [[nodiscard]] const ParamSet& params() const { return params_; }

  [[nodiscard]] GPLayerState unit_state(int layer, int unit) const;
  void set_unit_state(int layer, int unit, const GPLayerState& state);

  /// Current rule of hidden layer `l` (0-based), with learned values.
  [[nodiscard]] QuadratureRule quadrature_rule(int l) const;
  void set_quadrature_rule(int l, const QuadratureRule& rule);

  /// Observation noise variance per output dimension.
  [[nodiscard]] Eigen::VectorXd obs_variance() const;
  void set_obs_variance(const Eigen::VectorXd& variance);
  /// W' x D mixing matrix; identity-shaped 1 x 1 for univariate models without LMC.
  [[nodiscard]] Eigen::MatrixXd mixing() const;
  void set_mixing(const Eigen::MatrixXd& a);

  [[nodiscard]] std::size_t obs_param() const { return obs_param_; }
  [[nodiscard]] std::optional<std::size_t> mixing_param() const { return mixing_param_; }

 private:
  void add_layer(int index, int kernel_dim, int mean_dim, int units, bool hidden);

  ModelConfig config_;
  int input_dim_ = 0;
  int output_dims_ = 1;
  bool lmc_ = false;
  ParamSet params_;
  std::vector<LayerLayout> layers_;
  std::vector<RuleLayout> rules_;
  std::size_t obs_param_ = 0;
  std::optional<std::size_t> mixing_param_;
};

/// Every parameter bound on a tape, indexed like the ParamSet.
struct ModelVars {
  std::vector<ad::Var> leaves;
  std::vector<std::vector<gp::UnitVars>> units;
  std::vector<std::vector<gp::UnitCache>> caches;  // Cholesky factors shared by forward and KL
  std::vector<quad::RuleVars> rules;
  ad::Var log_obs_sd;  // 1 x D
  ad::Var mixing;      // W' x D, invalid without LMC
};

ModelVars bind(ad::Tape& tape, const Model& model, bool trainable);

/// Layer-2 inputs of a 3-layer model: (kernel inputs, mean inputs).
std::pair<ad::Var, ad::Var> wire_topology(int topology, ad::Var hidden, ad::Var x);

/// Stacked predictive mixture for a batch of n points: row k*n + i of `mean` and
/// `latent_var` belongs to component k of point i.
struct ForwardVars {
  ad::Var log_weights;  // K x 1
  ad::Var mean;         // (K n) x D
  ad::Var latent_var;   // (K n) x D, before observation noise
  ad::Var obs_var;      // 1 x D
  Eigen::Index points = 0;
  Eigen::Index components = 0;
};

ForwardVars forward(const Model& model, const ModelVars& vars, ad::Var x, const SampleSource& source);

/// Splits a stacked forward pass into one mixture per input point.
std::vector<PredictiveMixture> to_mixtures(const ForwardVars& fv);

/// Predictive mixtures for the rows of x. Sampled families draw source.samples pathways.
std::vector<PredictiveMixture> predict(const Model& model, const Eigen::MatrixXd& x, const SampleSource& source = {});

std::vector<PredictiveMixture> forward_svgp(const Model& model, const Eigen::MatrixXd& x);
std::vector<PredictiveMixture> forward_dspp(const Model& model, const Eigen::MatrixXd& x);
std::vector<PredictiveMixture> forward_dgp_sampled(const Model& model, const Eigen::MatrixXd& x, int samples,
                                                   std::mt19937_64* rng);
std::vector<PredictiveMixture> forward_lmc(const Model& model, const Eigen::MatrixXd& x,
                                           const SampleSource& source = {});

}  // namespace dspp
