#include "dspp/data.hpp"
#include "dspp/error.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace dspp;

TEST_CASE("CSV ingestion") {
  SUBCASE("shape and names") {
    const Dataset d = parse_csv("a,b,t\n1,2,3\n4,5.5,6\n-7,8e-1,9\n", {"t"});
    CHECK(d.size() == 3);
    CHECK(d.x.cols() == 2);
    CHECK(d.y.cols() == 1);
    CHECK(d.x_names == std::vector<std::string>{"a", "b"});
    CHECK(d.y_names == std::vector<std::string>{"t"});
    CHECK(d.x(1, 1) == 5.5);
    CHECK(d.x(2, 1) == 0.8);
    CHECK(d.y(2, 0) == 9.0);
  }
  SUBCASE("targets can sit anywhere and there can be several") {
    const Dataset d = parse_csv("y1, x ,y2\r\n1,2,3\r\n4,5,7\r\n", {"y2", "y1"});
    CHECK(d.x_names == std::vector<std::string>{"x"});
    CHECK(d.y(1, 0) == 7.0);
    CHECK(d.y(1, 1) == 4.0);
  }
  SUBCASE("a constant feature is dropped") {
    const Dataset d = parse_csv("a,b,t\n1,2,3\n1,5,6\n1,8,2\n", {"t"});
    CHECK(d.x.cols() == 1);
    CHECK(d.x_names == std::vector<std::string>{"b"});
  }
  SUBCASE("errors carry 1-based coordinates") {
    try {
      (void)parse_csv("a,b,t\n1,2,3\n4,NaN,6\n", {"t"});
      FAIL("expected NonFiniteValue");
    } catch (const NonFiniteValue& e) {
      CHECK(e.line() == 3);
      CHECK(e.column() == 2);
    }
    try {
      (void)parse_csv("a,b,t\n1,2,3\n4,5,six\n", {"t"});
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(e.column() == 3);
    }
    try {
      (void)parse_csv("a,b,t\n1,2,3\n4,5\n", {"t"});
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse_csv("a,b,t\n1,inf,3\n2,1,1\n", {"t"}), NonFiniteValue);
    CHECK_THROWS_AS(parse_csv("a,b,t\n1,2,3\n", {"missing"}), ParseError);
    CHECK_THROWS_AS(parse_csv("a,b,t\n", {"t"}), EmptyDataset);
    CHECK_THROWS_AS(parse_csv("", {"t"}), EmptyDataset);
    CHECK_THROWS_AS(parse_csv("a,t\n1,3\n2,3\n", {"t"}), EmptyDataset);
  }
}

TEST_CASE("CSV files round-trip") {
  const Dataset d = make_linear_gaussian(20, 3, 2, 1);
  const auto path = std::filesystem::temp_directory_path() / "dspp_test_data_roundtrip.csv";
  write_csv(path.string(), d);
  const Dataset back = ingest_csv(path.string(), {"y1", "y2"});
  std::filesystem::remove(path);
  CHECK((back.x.array() == d.x.array()).all());
  CHECK((back.y.array() == d.y.array()).all());
  CHECK(back.x_names == d.x_names);
  CHECK_THROWS_AS(ingest_csv("/nonexistent/file.csv", {"y"}), std::runtime_error);
}

TEST_CASE("splits") {
  CHECK(split_sizes(20, {}) == std::array<Eigen::Index, 3>{15, 3, 2});
  CHECK(split_sizes(2000, {}) == std::array<Eigen::Index, 3>{1500, 300, 200});
  for (Eigen::Index n : {1, 7, 33, 101}) {
    const auto s = split_sizes(n, {});
    CHECK(s[0] + s[1] + s[2] == n);
  }

  const Dataset d = make_sin_heteroscedastic(20, 2);
  SplitSpec spec;
  spec.seed = 3;
  const SplitData a = split(d, spec);
  const SplitData b = split(d, spec);
  CHECK(a.train.size() == 15);
  CHECK(a.test.size() == 3);
  CHECK(a.val.size() == 2);
  CHECK((a.train.x.array() == b.train.x.array()).all());
  CHECK((a.test.y.array() == b.test.y.array()).all());

  // Disjoint and exhaustive: map every standardized row back to the raw data.
  std::multiset<double> raw(d.x.data(), d.x.data() + d.size());
  std::multiset<double> seen;
  for (const Dataset* part : {&a.train, &a.test, &a.val}) {
    const Eigen::MatrixXd x = (part->x.array() * a.standardizer.x_scale[0] + a.standardizer.x_mean[0]).matrix();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      auto it = std::min_element(raw.begin(), raw.end(),
                                 [&](double p, double q) { return std::abs(p - x(i, 0)) < std::abs(q - x(i, 0)); });
      CHECK(std::abs(*it - x(i, 0)) < 1e-12);
      seen.insert(*it);
    }
  }
  CHECK(seen == raw);

  spec.index = 1;
  const SplitData c = split(d, spec);
  CHECK_FALSE((c.train.x.array() == a.train.x.array()).all());
}

TEST_CASE("standardization uses training statistics") {
  const Dataset d = make_linear_gaussian(200, 3, 2, 4);
  const SplitData s = split(d, {});
  const Eigen::RowVectorXd mean_x = s.train.x.colwise().mean();
  const Eigen::RowVectorXd mean_y = s.train.y.colwise().mean();
  CHECK(mean_x.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(mean_y.cwiseAbs().maxCoeff() < 1e-10);
  const Eigen::RowVectorXd sd =
      (s.train.x.array().square().colwise().sum() / static_cast<double>(s.train.size())).sqrt();
  CHECK((sd.array() - 1.0).abs().maxCoeff() < 1e-10);
  const Eigen::MatrixXd y = s.standardizer.inverse_y(s.test.y);
  CHECK((s.standardizer.transform_y(y) - s.test.y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("columns constant on the training split are dropped everywhere") {
  Dataset d = make_sin_heteroscedastic(40, 5);
  d.x.conservativeResize(40, 2);
  d.x.col(1).setZero();
  d.x(0, 1) = 1.0;  // varies over the full data only through one row
  d.x_names = {"x", "z"};
  SplitSpec spec;
  for (spec.seed = 0; spec.seed < 50; ++spec.seed) {
    const SplitData s = split(d, spec);
    CHECK(s.train.x.cols() == s.test.x.cols());
    CHECK(s.val.x.cols() == s.train.x.cols());
    CHECK(s.kept_inputs.size() == static_cast<std::size_t>(s.train.x.cols()));
  }
}

TEST_CASE("standardizer details") {
  Eigen::MatrixXd x(3, 2);
  x << 1, 5, 2, 5, 3, 5;
  const Standardizer s = Standardizer::fit(x, x.col(0));
  CHECK(s.x_scale[1] == 1.0);
  CHECK(s.x_scale[0] == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK_THROWS_AS(s.transform_x(Eigen::MatrixXd::Zero(2, 3)), DimensionMismatch);
  CHECK_THROWS_AS(Standardizer::fit(Eigen::MatrixXd(0, 1), Eigen::MatrixXd(0, 1)), EmptyDataset);
}

TEST_CASE("synthetic generators") {
  const Dataset s = make_sin_heteroscedastic(500, 1);
  CHECK(s.x.minCoeff() >= -3.0);
  CHECK(s.x.maxCoeff() <= 3.0);
  // Noise grows left to right.
  double left = 0.0, right = 0.0;
  int nl = 0, nr = 0;
  for (Eigen::Index i = 0; i < 500; ++i) {
    const double r = s.y(i, 0) - std::sin(3.0 * s.x(i, 0));
    if (s.x(i, 0) < -1.5) {
      left += r * r;
      ++nl;
    } else if (s.x(i, 0) > 1.5) {
      right += r * r;
      ++nr;
    }
  }
  CHECK(right / nr > 4.0 * left / nl);

  const Dataset b = make_two_blob(100, 3, 2);
  CHECK(b.x.cols() == 3);
  CHECK(b.x.row(0).mean() < 0.0);
  CHECK(b.x.row(1).mean() > 0.0);

  const Dataset l = make_linear_gaussian(50, 4, 3, 3);
  CHECK(l.y.cols() == 3);
  CHECK(make_linear_gaussian(50, 4, 3, 3).y == l.y);
}
