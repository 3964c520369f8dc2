#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dspp {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& what);
  [[nodiscard]] std::size_t line() const { return line_; }
  [[nodiscard]] std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class NonFiniteValue : public std::runtime_error {
 public:
  NonFiniteValue(std::size_t line, std::size_t column);
  [[nodiscard]] std::size_t line() const { return line_; }
  [[nodiscard]] std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class EmptyDataset : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Columns whose sample standard deviation is below this are dropped.
inline constexpr double kNegligibleStd = 1e-10;

struct Standardizer {
  Eigen::RowVectorXd x_mean, x_scale;
  Eigen::RowVectorXd y_mean, y_scale;

  static Standardizer fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);
  [[nodiscard]] Eigen::MatrixXd transform_x(const Eigen::MatrixXd& x) const;
  [[nodiscard]] Eigen::MatrixXd transform_y(const Eigen::MatrixXd& y) const;
  [[nodiscard]] Eigen::MatrixXd inverse_y(const Eigen::MatrixXd& y) const;
  /// Identity transform for d inputs and D outputs.
  static Standardizer identity(Eigen::Index d, Eigen::Index dy);
};

struct Dataset {
  Eigen::MatrixXd x;  // N x d
  Eigen::MatrixXd y;  // N x D
  std::vector<std::string> x_names;
  std::vector<std::string> y_names;

  [[nodiscard]] Eigen::Index size() const { return x.rows(); }
  [[nodiscard]] Dataset rows(const std::vector<Eigen::Index>& index) const;
};

/// Reads a headed numeric CSV. `target_columns` name the outputs; every other column is an input.
/// Lines and columns in errors are 1-based (line 1 is the header).
Dataset ingest_csv(const std::string& path, const std::vector<std::string>& target_columns);
Dataset parse_csv(const std::string& text, const std::vector<std::string>& target_columns);
void write_csv(const std::string& path, const Dataset& data);

/// Drops input columns with negligible std; throws EmptyDataset if an output column is constant.
/// Returns the indices of kept input columns.
std::vector<Eigen::Index> drop_constant_columns(Dataset& data);

struct SplitSpec {
  int train = 15, test = 3, val = 2;
  std::uint64_t seed = 0;
  int index = 0;  // split number; combined with seed to pick the shuffle
};

struct SplitData {
  Dataset train, test, val;           // standardized with the training statistics
  Standardizer standardizer;
  std::vector<Eigen::Index> kept_inputs;  // input columns kept after the training-split variance check
};

/// Sizes of a ratio partition of n points (train, test, val); they sum to n.
std::array<Eigen::Index, 3> split_sizes(Eigen::Index n, const SplitSpec& spec);
SplitData split(const Dataset& data, const SplitSpec& spec);

// ---- synthetic generators ----------------------------------------------------------------------

/// x ~ U(-3, 3), y = sin(3x) + sigma(x) e with sigma(x) = 0.1 + 0.5 (x + 3) / 6.
Dataset make_sin_heteroscedastic(Eigen::Index n, std::uint64_t seed);
/// Two Gaussian blobs in d dimensions centred at -c and +c (c = 3 in each coordinate).
Dataset make_two_blob(Eigen::Index n, int d, std::uint64_t seed);
/// y = x B + noise with D outputs correlated through B.
Dataset make_linear_gaussian(Eigen::Index n, int d, int dy, std::uint64_t seed);

}  // namespace dspp
