#include "dspp/error.hpp"
#include "dspp/io.hpp"
#include "dspp/metrics.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <filesystem>

using namespace dspp;
using nlohmann::json;

namespace {

Model trained_like_model() {
  const Eigen::MatrixXd x = testing::random_matrix(40, 2, 1);
  const Eigen::MatrixXd y = testing::random_matrix(40, 2, 2);
  ModelConfig c;
  c.family = Family::DSPP;
  c.layers = 2;
  c.hidden_width = 2;
  c.inducing_points = 6;
  c.quadrature = QuadratureKind::QR2;
  c.quadrature_sites = 3;
  Model m = Model::initialize(c, x, y, 3);
  Eigen::VectorXd theta = m.params().flatten();
  theta += testing::random_matrix(theta.size(), 1, 4, 0.3).col(0);
  m.params().unflatten(theta);
  return m;
}

}  // namespace

TEST_CASE("checkpoints round-trip bitwise") {
  const Model m = trained_like_model();
  Standardizer st = Standardizer::identity(2, 2);
  st.x_mean << 0.1, -0.2;
  st.y_scale << 3.0, 0.5;
  const Checkpoint ck = make_checkpoint(m, st, {{"note", "x"}});
  const std::string bytes = encode_checkpoint(ck);
  CHECK(bytes.substr(0, 8) == "DSPPCKPT");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(back.meta.at("note") == "x");

  const LoadedModel lm = restore_checkpoint(back);
  const Eigen::VectorXd a = m.params().flatten();
  const Eigen::VectorXd b = lm.model.params().flatten();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
  CHECK(lm.standardizer.x_mean == st.x_mean);
  CHECK(lm.standardizer.y_scale == st.y_scale);
  CHECK(lm.model.config().quadrature == QuadratureKind::QR2);

  // Predictions from the restored model are identical.
  const Eigen::MatrixXd xt = testing::random_matrix(5, 2, 9);
  const EvalReport r1 = evaluate(m, {xt, testing::random_matrix(5, 2, 10), {}, {}}, st, 8);
  const EvalReport r2 = evaluate(lm.model, {xt, testing::random_matrix(5, 2, 10), {}, {}}, st, 8);
  CHECK(r1.nll == r2.nll);
  CHECK(r1.crps == r2.crps);

  const auto path = std::filesystem::temp_directory_path() / "dspp_test_io.ckpt";
  save_checkpoint(path.string(), ck);
  CHECK(encode_checkpoint(load_checkpoint(path.string())) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const Checkpoint ck = make_checkpoint(trained_like_model(), Standardizer::identity(2, 2), json::object());
  const std::string bytes = encode_checkpoint(ck);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), std::runtime_error);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), std::runtime_error);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), std::runtime_error);
  bad = bytes;
  bad[12] ^= 1;  // schema hash
  CHECK_THROWS_AS(decode_checkpoint(bad), std::runtime_error);
  bad = bytes;
  bad[8] = 2;  // version
  CHECK_THROWS_AS(decode_checkpoint(bad), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), std::runtime_error);
}

TEST_CASE("schema hash depends on names and shapes only") {
  std::vector<NamedParam> a{{"w", Eigen::MatrixXd::Zero(2, 3)}};
  std::vector<NamedParam> b{{"w", Eigen::MatrixXd::Ones(2, 3)}};
  std::vector<NamedParam> c{{"w", Eigen::MatrixXd::Zero(3, 2)}};
  std::vector<NamedParam> d{{"v", Eigen::MatrixXd::Zero(2, 3)}};
  CHECK(schema_hash(a) == schema_hash(b));
  CHECK(schema_hash(a) != schema_hash(c));
  CHECK(schema_hash(a) != schema_hash(d));
  CHECK(schema_hash({}) == 14695981039346656037ULL);
}

TEST_CASE("configuration documents") {
  RunConfig rc;
  rc.model.family = Family::BPDGP;
  rc.model.layers = 3;
  rc.model.topology = 4;
  rc.model.covariance = CovarianceForm::Full;
  rc.train.beta_reg = 0.5;
  rc.train.epochs = 17;
  rc.train.warmup_epochs = 3;
  rc.data.synthetic = "sin";
  rc.data.targets = {"a", "b"};
  const json doc = to_json(rc);
  const RunConfig back = run_config_from_json(doc);
  CHECK(to_json(back) == doc);
  CHECK(back.model.family == Family::BPDGP);
  CHECK(*back.model.covariance == CovarianceForm::Full);
  CHECK(*back.train.beta_reg == 0.5);

  SUBCASE("defaults fill missing keys") {
    const RunConfig d = run_config_from_json({{"schema_version", 1}});
    CHECK(d.model.family == Family::DSPP);
    CHECK(d.train.epochs == 400);
    CHECK_FALSE(d.train.beta_reg.has_value());
  }
  SUBCASE("unknown keys and bad values are errors") {
    json j = doc;
    j["model"]["inducing"] = 3;
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    j = doc;
    j["extra"] = 1;
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    j = doc;
    j["training"]["adam"]["gamma"] = 1;
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    j = doc;
    j["model"]["family"] = "GPT";
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    j = doc;
    j["model"]["layers"] = "two";
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    j = doc;
    j["model"]["layers"] = 7;
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    j = doc;
    j.erase("schema_version");
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    j["schema_version"] = 2;
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  }
  SUBCASE("overrides") {
    json j = doc;
    apply_override(j, "training.epochs=5");
    apply_override(j, "model.family=PPGPR");
    apply_override(j, "model.layers=1");
    apply_override(j, "model.topology=1");
    apply_override(j, "training.beta_reg=null");
    apply_override(j, "data.targets=[\"y\"]");
    apply_override(j, "training.adam.eps=1e-6");
    const RunConfig o = run_config_from_json(j);
    CHECK(o.train.epochs == 5);
    CHECK(o.model.family == Family::PPGPR);
    CHECK_FALSE(o.train.beta_reg.has_value());
    CHECK(o.data.targets == std::vector<std::string>{"y"});
    CHECK(o.train.adam.eps == 1e-6);
    CHECK_THROWS_AS(apply_override(j, "noequals"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "model..x=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "model.layers.x=1"), ConfigError);
  }
}
