#include "dspp/autodiff.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <random>

namespace dspp {

Eigen::VectorXd gradient(const Model& model, const Batch& batch, const ObjectiveOptions& options) {
  return evaluate_objective(model, batch, options, true).gradient;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

FdReport fd_check(const ScalarFunction& f, const Eigen::VectorXd& theta, const Eigen::VectorXd& analytic,
                  const std::vector<Eigen::Index>& subset, const std::function<std::string(Eigen::Index)>& name_of) {
  FdReport report;
  Eigen::VectorXd probe = theta;
  for (Eigen::Index idx : subset) {
    const double h = fd_step(theta[idx]);
    probe[idx] = theta[idx] + h;
    const double up = f(probe);
    probe[idx] = theta[idx] - h;
    const double down = f(probe);
    probe[idx] = theta[idx];
    FdEntry e;
    e.index = idx;
    e.name = name_of ? name_of(idx) : std::to_string(idx);
    e.analytic = analytic[idx];
    e.numeric = (up - down) / (2.0 * h);
    e.rel_error = relative_error(e.analytic, e.numeric);
    if (!std::isfinite(e.rel_error)) e.rel_error = std::numeric_limits<double>::infinity();
    if (report.entries.empty() || e.rel_error > report.max_rel_error) {
      report.max_rel_error = e.rel_error;
      report.worst_parameter = e.name;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

FdReport fd_check(const Model& model, const Batch& batch, const ObjectiveOptions& options,
                  const std::vector<Eigen::Index>& subset) {
  const Eigen::VectorXd theta = model.params().flatten();
  const Eigen::VectorXd analytic = gradient(model, batch, options);
  Model probe = model;
  auto f = [&](const Eigen::VectorXd& t) {
    probe.params().unflatten(t);
    return evaluate_objective(probe, batch, options, false).value.total;
  };
  std::vector<Eigen::Index> indices = subset;
  if (indices.empty()) {
    indices.resize(static_cast<std::size_t>(theta.size()));
    std::iota(indices.begin(), indices.end(), Eigen::Index{0});
  }
  return fd_check(f, theta, analytic, indices, [&](Eigen::Index i) { return model.params().scalar_name(i); });
}

std::vector<Eigen::Index> sample_subset(const ParamSet& params, int per_block, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> out;
  for (std::size_t b = 0; b < params.blocks(); ++b) {
    const Eigen::Index size = params.value(b).size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(size));
    std::iota(idx.begin(), idx.end(), params.offset(b));
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t take = std::min(idx.size(), static_cast<std::size_t>(per_block));
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace dspp
