#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace dspp {

struct NamedParam {
  std::string name;
  Eigen::MatrixXd value;
};

/// Ordered table of named trainable matrices with a flat-vector view.
///
/// Flat order is block order, column-major within a block. Scalar names follow
/// "block[i]" for vectors and "block[i,j]" for matrices.
class ParamSet {
 public:
  std::size_t add(std::string name, Eigen::MatrixXd value);

  [[nodiscard]] std::size_t blocks() const { return entries_.size(); }
  [[nodiscard]] Eigen::Index num_scalars() const;
  [[nodiscard]] const NamedParam& operator[](std::size_t i) const { return entries_[i]; }
  [[nodiscard]] NamedParam& operator[](std::size_t i) { return entries_[i]; }
  [[nodiscard]] const Eigen::MatrixXd& value(std::size_t i) const { return entries_[i].value; }
  [[nodiscard]] Eigen::MatrixXd& value(std::size_t i) { return entries_[i].value; }
  [[nodiscard]] std::optional<std::size_t> find(const std::string& name) const;
  [[nodiscard]] Eigen::Index offset(std::size_t block) const;

  [[nodiscard]] Eigen::VectorXd flatten() const;
  /// Overwrites every block from `flat`; the size must equal num_scalars().
  void unflatten(const Eigen::VectorXd& flat);

  [[nodiscard]] std::string scalar_name(Eigen::Index flat_index) const;
  /// Block index owning a flat position.
  [[nodiscard]] std::size_t block_of(Eigen::Index flat_index) const;

  [[nodiscard]] const std::vector<NamedParam>& entries() const { return entries_; }

 private:
  std::vector<NamedParam> entries_;
};

}  // namespace dspp
