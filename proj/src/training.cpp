#include "dspp/training.hpp"

#include "dspp/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace dspp {

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
               const AdamConfig& config) {
  if (grads.size() != params.size()) throw DimensionMismatch("adam_step: gradient size differs from parameters");
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.t = 0;
  }
  state.t += 1;
  state.m = config.beta1 * state.m + (1.0 - config.beta1) * grads;
  state.v = config.beta2 * state.v + (1.0 - config.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  const Eigen::ArrayXd m_hat = state.m.array() / c1;
  const Eigen::ArrayXd v_hat = state.v.array() / c2;
  params.array() -= lr * m_hat / (v_hat.sqrt() + config.eps);
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (restarts < 1) throw ConfigError("restarts must be >= 1");
  if (beta_reg && !(*beta_reg >= 0.0)) throw ConfigError("beta_reg must be >= 0");
  if (warmup_epochs && *warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
}

int TrainConfig::warmup() const {
  if (warmup_epochs) return std::min(*warmup_epochs, epochs);
  return std::min(epochs, std::max(1, epochs / 10));
}

double learning_rate(const TrainConfig& config, int epoch) {
  const int first = config.epochs / 2;
  const int second = (3 * config.epochs) / 4;
  double lr = config.lr0;
  if (first > 0 && epoch >= first) lr *= 0.1;
  if (second > 0 && epoch >= second) lr *= 0.1;
  return lr;
}

// ---- k-means -----------------------------------------------------------------------------------

Eigen::MatrixXd kmeans_init(const Eigen::MatrixXd& x, int m, std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (m < 1) throw std::invalid_argument("kmeans_init: M must be >= 1");
  if (m > n) {
    throw std::invalid_argument("kmeans_init: M = " + std::to_string(m) + " exceeds N = " + std::to_string(n));
  }
  std::mt19937_64 rng(seed);

  const Eigen::Index cap = std::max<Eigen::Index>(m, std::min<Eigen::Index>(10 * m * d, 20000));
  Eigen::MatrixXd pts;
  if (n <= cap) {
    pts = x;
  } else {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    for (Eigen::Index i = 0; i < cap; ++i) {
      const auto j = i + static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n - i));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    pts.resize(cap, d);
    for (Eigen::Index i = 0; i < cap; ++i) pts.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
  }
  const Eigen::Index p = pts.rows();
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // k-means++ seeding
  Eigen::MatrixXd centres(m, d);
  std::vector<bool> taken(static_cast<std::size_t>(p), false);
  Eigen::Index first = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(p));
  centres.row(0) = pts.row(first);
  taken[static_cast<std::size_t>(first)] = true;
  Eigen::VectorXd dist = (pts.rowwise() - centres.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < m; ++c) {
    const double total = dist.sum();
    Eigen::Index pick = -1;
    if (total > 0.0) {
      const double target = unif(rng) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < p; ++i) {
        acc += dist[i];
        if (acc >= target && dist[i] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        for (Eigen::Index i = p - 1; i >= 0; --i) {
          if (dist[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    }
    if (pick < 0) {  // every remaining point coincides with a centre
      std::vector<Eigen::Index> free;
      for (Eigen::Index i = 0; i < p; ++i) {
        if (!taken[static_cast<std::size_t>(i)]) free.push_back(i);
      }
      pick = free[static_cast<std::size_t>(rng() % free.size())];
    }
    taken[static_cast<std::size_t>(pick)] = true;
    centres.row(c) = pts.row(pick);
    dist = dist.cwiseMin((pts.rowwise() - centres.row(c)).rowwise().squaredNorm());
  }

  // Lloyd iterations
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(p), 0);
  for (int iter = 0; iter < 10; ++iter) {
    for (Eigen::Index i = 0; i < p; ++i) {
      Eigen::Index best = 0;
      (centres.rowwise() - pts.row(i)).rowwise().squaredNorm().minCoeff(&best);
      assign[static_cast<std::size_t>(i)] = best;
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(m, d);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < p; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += pts.row(i);
      counts[assign[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (int c = 0; c < m; ++c) {
      if (counts[c] > 0.0) centres.row(c) = sums.row(c) / counts[c];
    }
  }
  return centres;
}

// ---- training loop -----------------------------------------------------------------------------

double full_data_term(const Model& model, const Dataset& data, std::uint64_t seed) {
  constexpr Eigen::Index chunk = 1024;
  double total = 0.0;
  ObjectiveOptions options;
  options.seed = seed;
  for (Eigen::Index start = 0; start < data.size(); start += chunk) {
    const Eigen::Index len = std::min(chunk, data.size() - start);
    Batch b{data.x.middleRows(start, len), data.y.middleRows(start, len)};
    total += pointwise_data_terms(model, b, options).sum();
  }
  return total;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Run {
  Model model;
  AdamState adam;
  std::mt19937_64 rng;
  std::vector<EpochRecord> history;
};

void run_epochs(Run& run, int restart, int begin, int end, const Dataset& data, const TrainConfig& config,
                double beta_reg, const TrainHooks& hooks, Clock::time_point t0) {
  const Eigen::Index n = data.size();
  const Eigen::Index b = std::min<Eigen::Index>(config.batch_size, n);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (int epoch = begin; epoch < end; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (Eigen::Index i = n - 1; i > 0; --i) {
      const auto j = static_cast<Eigen::Index>(run.rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    const double lr = learning_rate(config, epoch);
    EpochRecord rec;
    rec.restart = restart;
    rec.epoch = epoch;
    rec.lr = lr;
    int steps = 0;
    for (Eigen::Index start = 0; start < n; start += b) {
      const Eigen::Index len = std::min(b, n - start);
      Batch batch;
      batch.x.resize(len, data.x.cols());
      batch.y.resize(len, data.y.cols());
      for (Eigen::Index i = 0; i < len; ++i) {
        batch.x.row(i) = data.x.row(order[static_cast<std::size_t>(start + i)]);
        batch.y.row(i) = data.y.row(order[static_cast<std::size_t>(start + i)]);
      }
      ObjectiveOptions options;
      options.beta_reg = beta_reg;
      options.n_scale = static_cast<double>(n) / static_cast<double>(len);
      options.seed = run.rng();
      const ObjectiveResult res = evaluate_objective(run.model, batch, options, true);
      Eigen::VectorXd theta = run.model.params().flatten();
      adam_step(theta, -res.gradient, run.adam, lr, config.adam);
      if (!theta.allFinite()) {
        for (Eigen::Index k = 0; k < theta.size(); ++k) {
          if (!std::isfinite(theta[k])) throw NonFiniteGradient(run.model.params().scalar_name(k));
        }
      }
      run.model.params().unflatten(theta);
      rec.objective += res.value.total;
      rec.data_term += res.value.data_term;
      rec.kl_term = res.value.kl_term;
      ++steps;
    }
    rec.objective /= std::max(steps, 1);
    rec.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (hooks.on_epoch_model) hooks.on_epoch_model(rec, run.model);
    run.history.push_back(rec);
  }
}

std::uint64_t restart_seed(std::uint64_t seed, int restart, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(restart), static_cast<std::uint32_t>(stream)};
  std::mt19937_64 g(seq);
  return g();
}

}  // namespace

TrainResult train_model(Model model, const Dataset& data, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (data.size() == 0) throw EmptyDataset("training set is empty");
  const double beta = config.beta_reg.value_or(default_beta_reg(model.config().family));
  Run run{std::move(model), {}, std::mt19937_64(restart_seed(config.seed, 0, 1)), {}};
  run_epochs(run, 0, 0, config.epochs, data, config, beta, hooks, Clock::now());
  TrainResult out{std::move(run.model), std::move(run.history), {RestartOutcome{}}, 0};
  return out;
}

TrainResult train(const ModelConfig& model_config, const Dataset& data, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  model_config.validate();
  if (data.size() == 0) throw EmptyDataset("training set is empty");
  const double beta = config.beta_reg.value_or(default_beta_reg(model_config.family));
  const auto t0 = Clock::now();
  const int warmup = config.restarts > 1 ? config.warmup() : config.epochs;

  std::vector<Run> runs;
  std::vector<RestartOutcome> outcomes;
  for (int r = 0; r < config.restarts; ++r) {
    RestartOutcome outcome;
    outcome.restart = r;
    Run run{Model::initialize(model_config, data.x, data.y, restart_seed(config.seed, r, 0)), {},
            std::mt19937_64(restart_seed(config.seed, r, 1)), {}};
    if (hooks.on_init) hooks.on_init(r, run.model);
    try {
      run_epochs(run, r, 0, warmup, data, config, beta, hooks, t0);
      outcome.warmup_data_term = config.restarts > 1 ? full_data_term(run.model, data, restart_seed(config.seed, 0, 2))
                                                     : 0.0;
      if (!std::isfinite(outcome.warmup_data_term)) throw NonFiniteGradient("training data term");
    } catch (const NonFiniteGradient& e) {
      outcome.failed = true;
      outcome.error = e.what();
    } catch (const NotPositiveDefinite& e) {
      outcome.failed = true;
      outcome.error = e.what();
    }
    if (outcome.failed && hooks.on_restart_failure) hooks.on_restart_failure(outcome);
    outcomes.push_back(outcome);
    runs.push_back(std::move(run));
  }

  int best = -1;
  for (int r = 0; r < config.restarts; ++r) {
    const RestartOutcome& o = outcomes[static_cast<std::size_t>(r)];
    if (o.failed) continue;
    if (best < 0 || o.warmup_data_term > outcomes[static_cast<std::size_t>(best)].warmup_data_term) best = r;
  }
  if (best < 0) throw std::runtime_error("every restart failed; first error: " + outcomes.front().error);

  Run& chosen = runs[static_cast<std::size_t>(best)];
  run_epochs(chosen, best, warmup, config.epochs, data, config, beta, hooks, t0);
  return TrainResult{std::move(chosen.model), std::move(chosen.history), std::move(outcomes), best};
}

}  // namespace dspp
