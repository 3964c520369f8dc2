#pragma once

#include "dspp/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dspp {

enum class QuadratureKind { GaussHermite, QR1, QR2, QR3 };

QuadratureKind parse_quadrature_kind(std::string_view text);
std::string to_string(QuadratureKind kind);

inline constexpr int kMaxHermiteSites = 30;

template <typename T>
struct HermiteRule {
  std::vector<T> nodes;    // ascending, exactly antisymmetric
  std::vector<T> weights;  // sum to one, exactly symmetric
};

/// Probabilists' Gauss-Hermite rule for N(0, 1), computed in arithmetic type T.
/// Starting points come from the Golub-Welsch eigenproblem in double precision and are
/// polished by Newton iteration on He_S in T.
template <typename T>
HermiteRule<T> gauss_hermite_rule(int sites);

/// Double-precision rule: (nodes, weights), each of length `sites`, 1 <= sites <= 30.
std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite_nodes(int sites);

/// Expands ceil(S/2) free node rows into the full antisymmetric S-row table
/// xi(s) = -xi(S-1-s). For odd S the middle row is structurally zero and the last free row is unused.
Eigen::MatrixXd reflect_qr2(const Eigen::MatrixXd& free_nodes, int sites);
/// Linear map R (S x ceil(S/2)) with reflect_qr2(F) = R F.
Eigen::MatrixXd qr2_reflection(int sites);

/// Node and weight tables of one hidden layer's sigma-point rule.
///
/// GaussHermite: fixed S nodes shared across the W units, product weights.
/// QR1: S x W free nodes, S^W weight logits.
/// QR2: ceil(S/2) x W free nodes reflected to S x W, S^W weight logits.
/// QR3: S x W free nodes, S weight logits; component s uses row s of the table.
class QuadratureRule {
 public:
  QuadratureRule() = default;

  /// Classical rule for `kind`, learnable tables initialized at Gauss-Hermite values.
  /// QR3 nodes get N(0, 0.1^2) jitter per entry when width > 1 (drawn from `rng`).
  static QuadratureRule initial(QuadratureKind kind, int sites, int width, std::mt19937_64* rng = nullptr);

  [[nodiscard]] QuadratureKind kind() const { return kind_; }
  [[nodiscard]] int sites() const { return sites_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] bool learnable() const { return kind_ != QuadratureKind::GaussHermite; }
  [[nodiscard]] Eigen::Index components() const;

  /// Stored node parameters: GH S x 1, QR1/QR3 S x W, QR2 ceil(S/2) x W.
  [[nodiscard]] const Eigen::MatrixXd& node_params() const { return node_params_; }
  /// Stored weight logits (GH: log product weights).
  [[nodiscard]] const Eigen::VectorXd& weight_logits() const { return weight_logits_; }
  void set_node_params(Eigen::MatrixXd nodes);
  void set_weight_logits(Eigen::VectorXd logits);

  /// Full S x W node table.
  [[nodiscard]] Eigen::MatrixXd node_table() const;
  /// Node vector of every component: components() x W.
  [[nodiscard]] Eigen::MatrixXd component_nodes() const;
  /// Normalized component weights.
  [[nodiscard]] Eigen::VectorXd weights() const;

  /// For each component k and unit w, the row of the node table it uses.
  [[nodiscard]] Eigen::MatrixXi site_index() const;

 private:
  QuadratureKind kind_ = QuadratureKind::QR3;
  int sites_ = 1;
  int width_ = 1;
  Eigen::MatrixXd node_params_;
  Eigen::VectorXd weight_logits_;
};

struct SigmaPoint {
  double weight;
  Eigen::VectorXd point;
};

/// Deterministic feature sets mu + xi_k .* sigma, one per rule component.
std::vector<SigmaPoint> sigma_points(const QuadratureRule& rule, const Eigen::VectorXd& mu,
                                     const Eigen::VectorXd& sigma);

namespace quad {

struct RuleVars {
  ad::Var component_nodes;  // K x W
  ad::Var log_weights;      // K x 1
};

/// Tape form of a rule; `nodes` / `logits` are the bound parameter leaves for learnable kinds
/// and are ignored for Gauss-Hermite.
RuleVars bind(ad::Tape& tape, const QuadratureRule& rule, ad::Var nodes, ad::Var logits);

}  // namespace quad

}  // namespace dspp
