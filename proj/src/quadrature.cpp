#include "dspp/quadrature.hpp"

#include "dspp/error.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <numeric>

namespace dspp {

QuadratureKind parse_quadrature_kind(std::string_view text) {
  if (text == "gh" || text == "GH" || text == "gauss-hermite" || text == "GaussHermite") {
    return QuadratureKind::GaussHermite;
  }
  if (text == "qr1" || text == "QR1") return QuadratureKind::QR1;
  if (text == "qr2" || text == "QR2") return QuadratureKind::QR2;
  if (text == "qr3" || text == "QR3") return QuadratureKind::QR3;
  throw std::invalid_argument("unknown quadrature rule '" + std::string(text) + "'");
}

std::string to_string(QuadratureKind kind) {
  switch (kind) {
    case QuadratureKind::GaussHermite: return "gh";
    case QuadratureKind::QR1: return "qr1";
    case QuadratureKind::QR2: return "qr2";
    case QuadratureKind::QR3: return "qr3";
  }
  return "?";
}

namespace {

// Golub-Welsch starting points: eigenvalues of the symmetric Jacobi matrix of He_n.
std::vector<double> hermite_starting_nodes(int sites) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(sites, sites);
  for (int k = 1; k < sites; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi, Eigen::EigenvaluesOnly);
  std::vector<double> out(eig.eigenvalues().data(), eig.eigenvalues().data() + sites);
  std::sort(out.begin(), out.end());
  return out;
}

// (He_n(x), He_{n-1}(x)) by the three-term recurrence He_{k+1} = x He_k - k He_{k-1}.
template <typename T>
std::pair<T, T> hermite_pair(int n, const T& x) {
  T prev = 1;
  if (n == 0) return {prev, T(0)};
  T cur = x;
  for (int k = 1; k < n; ++k) {
    T next = x * cur - T(k) * prev;
    prev = cur;
    cur = next;
  }
  return {cur, prev};
}

}  // namespace

template <typename T>
HermiteRule<T> gauss_hermite_rule(int sites) {
  if (sites < 1 || sites > kMaxHermiteSites) {
    throw std::invalid_argument("Gauss-Hermite rule needs 1 <= S <= " + std::to_string(kMaxHermiteSites));
  }
  using std::abs;
  const std::vector<double> start = hermite_starting_nodes(sites);
  const T tol = std::numeric_limits<T>::epsilon() * 4;
  HermiteRule<T> rule;
  rule.nodes.resize(sites);
  rule.weights.resize(sites);
  // Only the non-positive half is solved for; the rest follows by symmetry.
  const int half = sites / 2;
  for (int i = 0; i < half; ++i) {
    T x = start[i];
    for (int iter = 0; iter < 100; ++iter) {
      auto [h, hm1] = hermite_pair<T>(sites, x);
      const T dh = T(sites) * hm1;  // He_n' = n He_{n-1}
      const T step = h / dh;
      x -= step;
      if (abs(step) <= tol * (1 + abs(x))) break;
    }
    rule.nodes[i] = x;
    rule.nodes[sites - 1 - i] = -x;
  }
  if (sites % 2 == 1) rule.nodes[half] = 0;
  // w_i = n! / (n^2 He_{n-1}(x_i)^2) for the N(0, 1) weight function.
  T factorial = 1;
  for (int k = 2; k <= sites; ++k) factorial *= k;
  for (int i = 0; i < (sites + 1) / 2; ++i) {
    const T hm1 = hermite_pair<T>(sites, rule.nodes[i]).second;
    const T w = factorial / (T(sites) * T(sites) * hm1 * hm1);
    rule.weights[i] = w;
    rule.weights[sites - 1 - i] = w;
  }
  T total = 0;
  for (const T& w : rule.weights) total += w;
  for (T& w : rule.weights) w /= total;
  return rule;
}

template HermiteRule<double> gauss_hermite_rule<double>(int);
template HermiteRule<long double> gauss_hermite_rule<long double>(int);
template HermiteRule<boost::multiprecision::cpp_bin_float_50> gauss_hermite_rule<boost::multiprecision::cpp_bin_float_50>(
    int);

std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite_nodes(int sites) {
  // Computed in 50-digit arithmetic and rounded once, so every node and weight is the
  // correctly rounded double of the exact rule.
  using Wide = boost::multiprecision::cpp_bin_float_50;
  const HermiteRule<Wide> wide = gauss_hermite_rule<Wide>(sites);
  Eigen::VectorXd nodes(sites);
  Eigen::VectorXd weights(sites);
  for (int i = 0; i < sites; ++i) {
    nodes[i] = static_cast<double>(wide.nodes[i]);
    weights[i] = static_cast<double>(wide.weights[i]);
  }
  return {nodes, weights};
}

Eigen::MatrixXd qr2_reflection(int sites) {
  if (sites < 1) throw std::invalid_argument("QR2 needs at least one site");
  const int free_rows = (sites + 1) / 2;
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(sites, free_rows);
  for (int s = 0; s < sites / 2; ++s) {
    r(s, s) = 1.0;
    r(sites - 1 - s, s) = -1.0;
  }
  return r;
}

Eigen::MatrixXd reflect_qr2(const Eigen::MatrixXd& free_nodes, int sites) {
  if (free_nodes.rows() != (sites + 1) / 2) throw DimensionMismatch("reflect_qr2: expected ceil(S/2) free rows");
  return qr2_reflection(sites) * free_nodes;
}

QuadratureRule QuadratureRule::initial(QuadratureKind kind, int sites, int width, std::mt19937_64* rng) {
  if (width < 1) throw std::invalid_argument("quadrature width must be >= 1");
  if (sites < 1 || sites > kMaxHermiteSites) {
    throw std::invalid_argument("quadrature needs 1 <= S <= " + std::to_string(kMaxHermiteSites));
  }
  QuadratureRule rule;
  rule.kind_ = kind;
  rule.sites_ = sites;
  rule.width_ = width;
  const auto [gh_nodes, gh_weights] = gauss_hermite_nodes(sites);
  const Eigen::VectorXd log_w = gh_weights.array().log();
  switch (kind) {
    case QuadratureKind::GaussHermite:
      rule.node_params_ = gh_nodes;
      break;
    case QuadratureKind::QR1:
      rule.node_params_ = gh_nodes.replicate(1, width);
      break;
    case QuadratureKind::QR2:
      rule.node_params_ = gh_nodes.head((sites + 1) / 2).replicate(1, width);
      break;
    case QuadratureKind::QR3: {
      rule.node_params_ = gh_nodes.replicate(1, width);
      if (width > 1 && rng != nullptr) {
        std::normal_distribution<double> jitter(0.0, 0.1);
        for (Eigen::Index j = 0; j < rule.node_params_.size(); ++j) rule.node_params_.data()[j] += jitter(*rng);
      }
      rule.weight_logits_ = log_w;
      return rule;
    }
  }
  // Product-grid kinds: log of the product Gauss-Hermite weights for every multi-index.
  const Eigen::MatrixXi idx = rule.site_index();
  rule.weight_logits_.resize(idx.rows());
  for (Eigen::Index k = 0; k < idx.rows(); ++k) {
    double acc = 0.0;
    for (Eigen::Index w = 0; w < idx.cols(); ++w) acc += log_w[idx(k, w)];
    rule.weight_logits_[k] = acc;
  }
  return rule;
}

Eigen::Index QuadratureRule::components() const {
  if (kind_ == QuadratureKind::QR3) return sites_;
  Eigen::Index k = 1;
  for (int w = 0; w < width_; ++w) k *= sites_;
  return k;
}

void QuadratureRule::set_node_params(Eigen::MatrixXd nodes) {
  if (nodes.rows() != node_params_.rows() || nodes.cols() != node_params_.cols()) {
    throw DimensionMismatch("QuadratureRule: node parameter shape mismatch");
  }
  node_params_ = std::move(nodes);
}

void QuadratureRule::set_weight_logits(Eigen::VectorXd logits) {
  if (logits.size() != weight_logits_.size()) throw DimensionMismatch("QuadratureRule: logit count mismatch");
  weight_logits_ = std::move(logits);
}

Eigen::MatrixXd QuadratureRule::node_table() const {
  switch (kind_) {
    case QuadratureKind::GaussHermite: return node_params_.replicate(1, width_);
    case QuadratureKind::QR2: return reflect_qr2(node_params_, sites_);
    default: return node_params_;
  }
}

Eigen::MatrixXi QuadratureRule::site_index() const {
  const Eigen::Index k_total = components();
  Eigen::MatrixXi idx(k_total, width_);
  for (Eigen::Index k = 0; k < k_total; ++k) {
    if (kind_ == QuadratureKind::QR3) {
      idx.row(k).setConstant(static_cast<int>(k));
      continue;
    }
    // Multi-index with the first unit varying fastest.
    Eigen::Index rest = k;
    for (int w = 0; w < width_; ++w) {
      idx(k, w) = static_cast<int>(rest % sites_);
      rest /= sites_;
    }
  }
  return idx;
}

Eigen::MatrixXd QuadratureRule::component_nodes() const {
  const Eigen::MatrixXd table = node_table();
  const Eigen::MatrixXi idx = site_index();
  Eigen::MatrixXd out(idx.rows(), width_);
  for (Eigen::Index k = 0; k < idx.rows(); ++k) {
    for (int w = 0; w < width_; ++w) out(k, w) = table(idx(k, w), w);
  }
  return out;
}

Eigen::VectorXd QuadratureRule::weights() const {
  const double mx = weight_logits_.maxCoeff();
  Eigen::VectorXd w = (weight_logits_.array() - mx).exp();
  return w / w.sum();
}

std::vector<SigmaPoint> sigma_points(const QuadratureRule& rule, const Eigen::VectorXd& mu,
                                     const Eigen::VectorXd& sigma) {
  if (mu.size() != rule.width() || sigma.size() != rule.width()) {
    throw DimensionMismatch("sigma_points: rule width " + std::to_string(rule.width()) + " vs " +
                            std::to_string(mu.size()) + " marginals");
  }
  if ((sigma.array() <= 0.0).any()) throw std::invalid_argument("sigma_points: sigma must be positive");
  const Eigen::MatrixXd nodes = rule.component_nodes();
  const Eigen::VectorXd w = rule.weights();
  std::vector<SigmaPoint> out;
  out.reserve(static_cast<std::size_t>(nodes.rows()));
  for (Eigen::Index k = 0; k < nodes.rows(); ++k) {
    out.push_back({w[k], mu + nodes.row(k).transpose().cwiseProduct(sigma)});
  }
  return out;
}

namespace quad {

RuleVars bind(ad::Tape& tape, const QuadratureRule& rule, ad::Var nodes, ad::Var logits) {
  RuleVars out;
  if (!rule.learnable()) {
    out.component_nodes = tape.constant(rule.component_nodes());
    out.log_weights = tape.constant(Eigen::MatrixXd(rule.weights().array().log()));
    return out;
  }
  ad::Var table = nodes;
  if (rule.kind() == QuadratureKind::QR2) table = ad::matmul(tape.constant(qr2_reflection(rule.sites())), nodes);
  if (rule.kind() == QuadratureKind::QR3) {
    out.component_nodes = table;
  } else {
    const Eigen::MatrixXi idx = rule.site_index();
    ad::IndexMatrix linear(idx.rows(), idx.cols());
    for (Eigen::Index k = 0; k < idx.rows(); ++k) {
      for (Eigen::Index w = 0; w < idx.cols(); ++w) linear(k, w) = idx(k, w) + w * rule.sites();
    }
    out.component_nodes = ad::gather(table, linear);
  }
  out.log_weights = ad::log_softmax(logits);
  return out;
}

}  // namespace quad

}  // namespace dspp
