#include "dspp/data.hpp"

#include "dspp/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace dspp {

ParseError::ParseError(std::size_t line, std::size_t column, const std::string& what)
    : std::runtime_error("parse error at line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                         what),
      line_(line),
      column_(column) {}

NonFiniteValue::NonFiniteValue(std::size_t line, std::size_t column)
    : std::runtime_error("non-finite value at line " + std::to_string(line) + ", column " + std::to_string(column)),
      line_(line),
      column_(column) {}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

Eigen::RowVectorXd column_std(const Eigen::MatrixXd& m, const Eigen::RowVectorXd& mean) {
  return ((m.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(m.rows())).sqrt();
}

Eigen::MatrixXd select_cols(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(cols[j]);
  return out;
}

}  // namespace

// ---- Standardizer ------------------------------------------------------------------------------

Standardizer Standardizer::fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() == 0) throw EmptyDataset("cannot fit a standardizer on zero rows");
  Standardizer s;
  s.x_mean = x.colwise().mean();
  s.y_mean = y.colwise().mean();
  s.x_scale = column_std(x, s.x_mean);
  s.y_scale = column_std(y, s.y_mean);
  for (Eigen::Index j = 0; j < s.x_scale.size(); ++j) {
    if (s.x_scale[j] < kNegligibleStd) s.x_scale[j] = 1.0;
  }
  for (Eigen::Index j = 0; j < s.y_scale.size(); ++j) {
    if (s.y_scale[j] < kNegligibleStd) s.y_scale[j] = 1.0;
  }
  return s;
}

Standardizer Standardizer::identity(Eigen::Index d, Eigen::Index dy) {
  return {Eigen::RowVectorXd::Zero(d), Eigen::RowVectorXd::Ones(d), Eigen::RowVectorXd::Zero(dy),
          Eigen::RowVectorXd::Ones(dy)};
}

Eigen::MatrixXd Standardizer::transform_x(const Eigen::MatrixXd& x) const {
  if (x.cols() != x_mean.size()) throw DimensionMismatch("standardizer: wrong number of input columns");
  return (x.rowwise() - x_mean).array().rowwise() / x_scale.array();
}

Eigen::MatrixXd Standardizer::transform_y(const Eigen::MatrixXd& y) const {
  if (y.cols() != y_mean.size()) throw DimensionMismatch("standardizer: wrong number of output columns");
  return (y.rowwise() - y_mean).array().rowwise() / y_scale.array();
}

Eigen::MatrixXd Standardizer::inverse_y(const Eigen::MatrixXd& y) const {
  if (y.cols() != y_mean.size()) throw DimensionMismatch("standardizer: wrong number of output columns");
  return (y.array().rowwise() * y_scale.array()).matrix().rowwise() + y_mean;
}

// ---- Dataset -----------------------------------------------------------------------------------

Dataset Dataset::rows(const std::vector<Eigen::Index>& index) const {
  Dataset out;
  out.x_names = x_names;
  out.y_names = y_names;
  out.x.resize(static_cast<Eigen::Index>(index.size()), x.cols());
  out.y.resize(static_cast<Eigen::Index>(index.size()), y.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = x.row(index[i]);
    out.y.row(static_cast<Eigen::Index>(i)) = y.row(index[i]);
  }
  return out;
}

Dataset parse_csv(const std::string& text, const std::vector<std::string>& target_columns) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) {
      header = split_fields(line);
      break;
    }
  }
  if (header.empty()) throw EmptyDataset("CSV has no header row");

  std::vector<Eigen::Index> x_cols;
  std::vector<Eigen::Index> y_cols;
  for (const std::string& t : target_columns) {
    auto it = std::find(header.begin(), header.end(), t);
    if (it == header.end()) throw ParseError(line_no, 0, "target column '" + t + "' not in header");
    y_cols.push_back(it - header.begin());
  }
  if (y_cols.empty()) throw ParseError(line_no, 0, "no target columns given");
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (std::find(y_cols.begin(), y_cols.end(), static_cast<Eigen::Index>(j)) == y_cols.end()) {
      x_cols.push_back(static_cast<Eigen::Index>(j));
    }
  }

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(line_no, std::min(fields.size(), header.size()) + 1,
                       "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    std::vector<double> row(fields.size());
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const std::string& f = fields[j];
      double v = 0.0;
      const char* end = f.data() + f.size();
      auto [ptr, ec] = std::from_chars(f.data(), end, v);
      if (f.empty() || ec != std::errc() || ptr != end) {
        throw ParseError(line_no, j + 1, "'" + f + "' is not a number");
      }
      if (!std::isfinite(v)) throw NonFiniteValue(line_no, j + 1);
      row[j] = v;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw EmptyDataset("CSV has a header but no data rows");

  Dataset data;
  const auto n = static_cast<Eigen::Index>(rows.size());
  data.x.resize(n, static_cast<Eigen::Index>(x_cols.size()));
  data.y.resize(n, static_cast<Eigen::Index>(y_cols.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < x_cols.size(); ++j) data.x(i, static_cast<Eigen::Index>(j)) = rows[i][x_cols[j]];
    for (std::size_t j = 0; j < y_cols.size(); ++j) data.y(i, static_cast<Eigen::Index>(j)) = rows[i][y_cols[j]];
  }
  for (Eigen::Index c : x_cols) data.x_names.push_back(header[c]);
  for (Eigen::Index c : y_cols) data.y_names.push_back(header[c]);
  drop_constant_columns(data);
  return data;
}

Dataset ingest_csv(const std::string& path, const std::vector<std::string>& target_columns) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << file.rdbuf();
  return parse_csv(ss.str(), target_columns);
}

void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.precision(17);
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
    names.push_back(j < static_cast<Eigen::Index>(data.x_names.size()) ? data.x_names[j] : "x" + std::to_string(j + 1));
  }
  for (Eigen::Index j = 0; j < data.y.cols(); ++j) {
    names.push_back(j < static_cast<Eigen::Index>(data.y_names.size()) ? data.y_names[j] : "y" + std::to_string(j + 1));
  }
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) out << (j ? "," : "") << data.x(i, j);
    for (Eigen::Index j = 0; j < data.y.cols(); ++j) out << (data.x.cols() + j ? "," : "") << data.y(i, j);
    out << '\n';
  }
}

std::vector<Eigen::Index> drop_constant_columns(Dataset& data) {
  if (data.x.rows() == 0) throw EmptyDataset("dataset has no rows");
  const Eigen::RowVectorXd y_std = column_std(data.y, data.y.colwise().mean());
  for (Eigen::Index j = 0; j < y_std.size(); ++j) {
    if (y_std[j] < kNegligibleStd && data.y.rows() > 1) {
      throw EmptyDataset("output column " + std::to_string(j + 1) + " has negligible variance");
    }
  }
  const Eigen::RowVectorXd x_std = column_std(data.x, data.x.colwise().mean());
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < x_std.size(); ++j) {
    if (x_std[j] >= kNegligibleStd || data.x.rows() == 1) keep.push_back(j);
  }
  if (keep.empty()) throw EmptyDataset("every input column has negligible variance");
  if (static_cast<Eigen::Index>(keep.size()) != data.x.cols()) {
    data.x = select_cols(data.x, keep);
    std::vector<std::string> names;
    for (Eigen::Index j : keep) {
      if (j < static_cast<Eigen::Index>(data.x_names.size())) names.push_back(data.x_names[j]);
    }
    data.x_names = std::move(names);
  }
  return keep;
}

// ---- splitting ---------------------------------------------------------------------------------

std::array<Eigen::Index, 3> split_sizes(Eigen::Index n, const SplitSpec& spec) {
  if (spec.train <= 0 || spec.test < 0 || spec.val < 0) throw std::invalid_argument("split ratios must be positive");
  const double total = spec.train + spec.test + spec.val;
  auto test = static_cast<Eigen::Index>(std::llround(static_cast<double>(n) * spec.test / total));
  auto val = static_cast<Eigen::Index>(std::llround(static_cast<double>(n) * spec.val / total));
  Eigen::Index train = n - test - val;
  if (train < 1) throw EmptyDataset("too few points for a split");
  return {train, test, val};
}

SplitData split(const Dataset& data, const SplitSpec& spec) {
  const Eigen::Index n = data.size();
  if (n == 0) throw EmptyDataset("cannot split an empty dataset");
  const auto sizes = split_sizes(n, spec);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(spec.index)};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit draw so the permutation does not depend on the library's shuffle.
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  auto part = [&](Eigen::Index begin, Eigen::Index count) {
    return data.rows(std::vector<Eigen::Index>(perm.begin() + begin, perm.begin() + begin + count));
  };
  SplitData out;
  out.train = part(0, sizes[0]);
  out.test = part(sizes[0], sizes[1]);
  out.val = part(sizes[0] + sizes[1], sizes[2]);

  out.kept_inputs = drop_constant_columns(out.train);
  if (static_cast<Eigen::Index>(out.kept_inputs.size()) != data.x.cols()) {
    for (Dataset* d : {&out.test, &out.val}) {
      d->x = select_cols(d->x, out.kept_inputs);
      d->x_names = out.train.x_names;
    }
  }
  out.standardizer = Standardizer::fit(out.train.x, out.train.y);
  for (Dataset* d : {&out.train, &out.test, &out.val}) {
    d->x = out.standardizer.transform_x(d->x);
    d->y = out.standardizer.transform_y(d->y);
  }
  return out;
}

// ---- synthetic data ----------------------------------------------------------------------------

Dataset make_sin_heteroscedastic(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.x.resize(n, 1);
  d.y.resize(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = unif(rng);
    const double sigma = 0.1 + 0.5 * (x + 3.0) / 6.0;
    d.x(i, 0) = x;
    d.y(i, 0) = std::sin(3.0 * x) + sigma * normal(rng);
  }
  d.x_names = {"x"};
  d.y_names = {"y"};
  return d;
}

Dataset make_two_blob(Eigen::Index n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset out;
  out.x.resize(n, d);
  out.y.resize(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double centre = i % 2 == 0 ? -3.0 : 3.0;
    for (int j = 0; j < d; ++j) out.x(i, j) = centre + 0.5 * normal(rng);
    out.y(i, 0) = i % 2 == 0 ? 0.0 : 1.0;
  }
  for (int j = 0; j < d; ++j) out.x_names.push_back("x" + std::to_string(j + 1));
  out.y_names = {"label"};
  return out;
}

Dataset make_linear_gaussian(Eigen::Index n, int d, int dy, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd b(d, dy);
  for (Eigen::Index k = 0; k < b.size(); ++k) b.data()[k] = normal(rng);
  Dataset out;
  out.x.resize(n, d);
  for (Eigen::Index k = 0; k < out.x.size(); ++k) out.x.data()[k] = normal(rng);
  out.y = out.x * b;
  for (Eigen::Index k = 0; k < out.y.size(); ++k) out.y.data()[k] += 0.1 * normal(rng);
  for (int j = 0; j < d; ++j) out.x_names.push_back("x" + std::to_string(j + 1));
  for (int j = 0; j < dy; ++j) out.y_names.push_back("y" + std::to_string(j + 1));
  return out;
}

}  // namespace dspp
