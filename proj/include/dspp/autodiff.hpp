#pragma once

// Gradient access and a central finite-difference oracle.

#include "dspp/objectives.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dspp {

/// d total / d theta of the model's objective, in ParamSet flat order.
Eigen::VectorXd gradient(const Model& model, const Batch& batch, const ObjectiveOptions& options);

struct FdEntry {
  Eigen::Index index = 0;
  std::string name;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct FdReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::vector<FdEntry> entries;
};

/// Relative error |a - f| / max(|a|, |f|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-3);

/// Central-difference step for a parameter value.
inline double fd_step(double theta) { return 1e-5 * (1.0 + std::abs(theta)); }

using ScalarFunction = std::function<double(const Eigen::VectorXd&)>;

/// Compares `analytic` against central differences of `f` at `theta` on the listed indices.
FdReport fd_check(const ScalarFunction& f, const Eigen::VectorXd& theta, const Eigen::VectorXd& analytic,
                  const std::vector<Eigen::Index>& subset,
                  const std::function<std::string(Eigen::Index)>& name_of = {});

/// Finite-difference check of the model objective. An empty subset checks every scalar.
FdReport fd_check(const Model& model, const Batch& batch, const ObjectiveOptions& options,
                  const std::vector<Eigen::Index>& subset = {});

/// Up to `per_block` flat indices from every parameter block, chosen with `seed`.
std::vector<Eigen::Index> sample_subset(const ParamSet& params, int per_block, std::uint64_t seed);

}  // namespace dspp
