#include "dspp/params.hpp"

#include "dspp/error.hpp"

#include <stdexcept>

namespace dspp {

std::size_t ParamSet::add(std::string name, Eigen::MatrixXd value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  entries_.push_back(NamedParam{std::move(name), std::move(value)});
  return entries_.size() - 1;
}

Eigen::Index ParamSet::num_scalars() const {
  Eigen::Index n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::optional<std::size_t> ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

Eigen::Index ParamSet::offset(std::size_t block) const {
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < block; ++i) off += entries_[i].value.size();
  return off;
}

Eigen::VectorXd ParamSet::flatten() const {
  Eigen::VectorXd flat(num_scalars());
  Eigen::Index off = 0;
  for (const auto& e : entries_) {
    flat.segment(off, e.value.size()) = Eigen::Map<const Eigen::VectorXd>(e.value.data(), e.value.size());
    off += e.value.size();
  }
  return flat;
}

void ParamSet::unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() != num_scalars()) throw DimensionMismatch("ParamSet::unflatten: size mismatch");
  Eigen::Index off = 0;
  for (auto& e : entries_) {
    Eigen::Map<Eigen::VectorXd>(e.value.data(), e.value.size()) = flat.segment(off, e.value.size());
    off += e.value.size();
  }
}

std::size_t ParamSet::block_of(Eigen::Index flat_index) const {
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (flat_index < off + entries_[i].value.size()) return i;
    off += entries_[i].value.size();
  }
  throw std::out_of_range("ParamSet: flat index out of range");
}

std::string ParamSet::scalar_name(Eigen::Index flat_index) const {
  const std::size_t b = block_of(flat_index);
  const auto& e = entries_[b];
  const Eigen::Index local = flat_index - offset(b);
  if (e.value.size() == 1) return e.name;
  if (e.value.cols() == 1) return e.name + "[" + std::to_string(local) + "]";
  const Eigen::Index i = local % e.value.rows();
  const Eigen::Index j = local / e.value.rows();
  return e.name + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
}

}  // namespace dspp
