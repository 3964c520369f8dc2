#include "commands.hpp"

#include "dspp/autodiff.hpp"
#include "dspp/error.hpp"
#include "dspp/quadrature.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace dspp::cli {

using nlohmann::json;
namespace fs = std::filesystem;

json load_config_document(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = {{"schema_version", kConfigSchemaVersion}};
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  return doc;
}

Dataset load_dataset(const DataConfig& config) {
  if (!config.path.empty()) {
    if (config.targets.empty()) throw ConfigError("data.targets must name the target columns of a CSV file");
    return ingest_csv(config.path, config.targets);
  }
  const std::uint64_t seed = config.split_seed;
  if (config.synthetic == "sin") return make_sin_heteroscedastic(config.synthetic_n, seed);
  if (config.synthetic == "two_blob") return make_two_blob(config.synthetic_n, config.synthetic_d, seed);
  if (config.synthetic == "linear") {
    return make_linear_gaussian(config.synthetic_n, config.synthetic_d, config.synthetic_dy, seed);
  }
  if (config.synthetic.empty()) throw ConfigError("config needs data.path or data.synthetic");
  throw ConfigError("unknown synthetic dataset '" + config.synthetic + "'");
}

std::string dataset_label(const DataConfig& config) {
  if (!config.name.empty()) return config.name;
  if (!config.path.empty()) return fs::path(config.path).stem().string();
  return "synthetic_" + config.synthetic;
}

namespace {

SplitData split_for(const DataConfig& d) {
  SplitSpec spec;
  spec.seed = d.split_seed;
  spec.index = d.split_index;
  return split(load_dataset(d), spec);
}

json epoch_json(const EpochRecord& r) {
  return {{"event", "epoch"},          {"restart", r.restart}, {"epoch", r.epoch},  {"objective", r.objective},
          {"data_term", r.data_term}, {"kl_term", r.kl_term}, {"lr", r.lr},        {"wall_time", r.wall_time}};
}

json report_json(const EvalReport& r) {
  return {{"nll", r.nll}, {"rmse", r.rmse}, {"mrmse", r.mrmse}, {"crps", r.crps}, {"n_test", r.n_test}};
}

std::string csv_number(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  json doc = load_config_document(args.config, args.overrides);
  if (args.seed) apply_override(doc, "training.seed=" + std::to_string(*args.seed));
  const RunConfig rc = run_config_from_json(doc);
  const SplitData data = split_for(rc.data);

  fs::create_directories(args.out_dir);
  const fs::path log_path = fs::path(args.out_dir) / "train_log.jsonl";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write '" + log_path.string() + "'");

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) { log << epoch_json(r).dump() << '\n'; };
  hooks.on_restart_failure = [&](const RestartOutcome& o) {
    log << json{{"event", "restart_failed"}, {"restart", o.restart}, {"error", o.error}}.dump() << '\n';
    err << "restart " << o.restart << " failed: " << o.error << '\n';
  };
  json meta;
  meta["run"] = to_json(rc);
  meta["x_names"] = data.train.x_names;
  meta["y_names"] = data.train.y_names;
  meta["kept_inputs"] = data.kept_inputs;
  if (args.checkpoint_every > 0) {
    hooks.on_epoch_model = [&](const EpochRecord& r, const Model& m) {
      if ((r.epoch + 1) % args.checkpoint_every != 0) return;
      json m_meta = meta;
      m_meta["restart"] = r.restart;
      m_meta["epoch"] = r.epoch + 1;
      const fs::path p = fs::path(args.out_dir) / ("checkpoint_r" + std::to_string(r.restart) + "_e" +
                                                   std::to_string(r.epoch + 1) + ".ckpt");
      save_checkpoint(p.string(), make_checkpoint(m, data.standardizer, m_meta));
    };
  }
  err << "training " << to_string(rc.model.family) << " on " << data.train.size() << " points ("
      << dataset_label(rc.data) << ")\n";
  const TrainResult result = train(rc.model, data.train, rc.train, hooks);

  meta["selected_restart"] = result.selected_restart;
  const fs::path ckpt_path = fs::path(args.out_dir) / "model.ckpt";
  save_checkpoint(ckpt_path.string(), make_checkpoint(result.model, data.standardizer, meta));

  json summary = {{"checkpoint", ckpt_path.string()},
                  {"log", log_path.string()},
                  {"selected_restart", result.selected_restart},
                  {"epochs", result.history.size()}};
  if (!result.history.empty()) summary["final_objective"] = result.history.back().objective;
  out << summary.dump() << '\n';
  return 0;
}

void append_result(const std::string& path, const std::string& dataset, const std::string& family, int split,
                   std::uint64_t seed, const EvalReport& report) {
  const std::string header = "dataset,family,split,seed,nll,rmse,mrmse,crps,n_test";
  const std::string key = dataset + "," + family + "," + std::to_string(split) + "," + std::to_string(seed);
  bool fresh = true;
  {
    std::ifstream in(path);
    std::string line;
    if (in && std::getline(in, line)) {
      fresh = false;
      if (line != header) throw std::runtime_error("'" + path + "' is not a results file");
      while (std::getline(in, line)) {
        const auto f = split_commas(line);
        if (f.size() >= 4 && f[0] + "," + f[1] + "," + f[2] + "," + f[3] == key) {
          throw std::runtime_error("results already hold a row for (" + key + ")");
        }
      }
    }
  }
  std::ofstream o(path, std::ios::app);
  if (!o) throw std::runtime_error("cannot append to '" + path + "'");
  if (fresh) o << header << '\n';
  o << key << ',' << csv_number(report.nll) << ',' << csv_number(report.rmse) << ',' << csv_number(report.mrmse)
    << ',' << csv_number(report.crps) << ',' << report.n_test << '\n';
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream&) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const LoadedModel lm = restore_checkpoint(ckpt);
  const RunConfig rc = run_config_from_json(lm.meta.at("run"));
  const SplitData data = split_for(rc.data);
  if (args.split != "test" && args.split != "val") throw ConfigError("--split must be test or val");
  const Dataset& part = args.split == "test" ? data.test : data.val;
  const EvalReport report = evaluate(lm.model, part, lm.standardizer, rc.model.eval_mc_samples, rc.train.seed);
  const std::string label = dataset_label(rc.data);
  const std::string family = to_string(rc.model.family);
  if (!args.results.empty()) append_result(args.results, label, family, rc.data.split_index, rc.train.seed, report);
  json j = report_json(report);
  j["dataset"] = label;
  j["family"] = family;
  j["split"] = rc.data.split_index;
  j["seed"] = rc.train.seed;
  j["partition"] = args.split;
  out << j.dump() << '\n';
  return 0;
}

int cmd_grad_check(const GradCheckArgs& args, std::ostream& out, std::ostream& err) {
  const RunConfig rc = run_config_from_json(load_config_document(args.config, args.overrides));
  const SplitData data = split_for(rc.data);
  Model model = Model::initialize(rc.model, data.train.x, data.train.y, rc.train.seed);
  if (args.perturb > 0.0) {
    std::mt19937_64 rng(rc.train.seed + 1);
    std::normal_distribution<double> normal(0.0, args.perturb);
    Eigen::VectorXd theta = model.params().flatten();
    for (Eigen::Index k = 0; k < theta.size(); ++k) theta[k] += normal(rng);
    model.params().unflatten(theta);
  }
  const Eigen::Index b = std::min<Eigen::Index>(args.batch, data.train.size());
  const Batch batch{data.train.x.topRows(b), data.train.y.topRows(b)};
  ObjectiveOptions options;
  options.beta_reg = rc.train.beta_reg.value_or(default_beta_reg(rc.model.family));
  options.n_scale = static_cast<double>(data.train.size()) / static_cast<double>(b);
  options.seed = rc.train.seed;
  const std::vector<Eigen::Index> subset =
      args.per_block > 0 ? sample_subset(model.params(), args.per_block, rc.train.seed) : std::vector<Eigen::Index>{};
  const FdReport report = fd_check(model, batch, options, subset);
  const bool pass = report.max_rel_error < args.tolerance;
  out << json{{"family", to_string(rc.model.family)},
              {"checked", report.entries.size()},
              {"max_rel_error", report.max_rel_error},
              {"worst_parameter", report.worst_parameter},
              {"tolerance", args.tolerance},
              {"pass", pass}}
             .dump()
      << '\n';
  if (!pass) err << "gradient check failed at " << report.worst_parameter << '\n';
  return pass ? 0 : 1;
}

int cmd_dump_quadrature(const DumpQuadratureArgs& args, std::ostream& out, std::ostream&) {
  std::vector<QuadratureRule> rules;
  if (!args.checkpoint.empty()) {
    const LoadedModel lm = restore_checkpoint(load_checkpoint(args.checkpoint));
    for (int l = 0; l + 1 < lm.model.num_layers(); ++l) {
      if (!lm.model.rules().empty()) rules.push_back(lm.model.quadrature_rule(l));
    }
    if (rules.empty()) throw std::invalid_argument("checkpoint model has no quadrature rules");
  } else {
    std::mt19937_64 rng(args.seed);
    rules.push_back(QuadratureRule::initial(parse_quadrature_kind(args.kind), args.sites, args.width, &rng));
  }
  std::ofstream file;
  if (!args.out.empty()) {
    file.open(args.out, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write '" + args.out + "'");
  }
  std::ostream& o = args.out.empty() ? out : file;
  int width = 0;
  for (const QuadratureRule& r : rules) width = std::max(width, r.width());
  o << "layer,kind,component,weight";
  for (int w = 0; w < width; ++w) o << ",node_" << w + 1;
  o << '\n';
  for (std::size_t l = 0; l < rules.size(); ++l) {
    const Eigen::MatrixXd nodes = rules[l].component_nodes();
    const Eigen::VectorXd weights = rules[l].weights();
    for (Eigen::Index k = 0; k < nodes.rows(); ++k) {
      o << l + 1 << ',' << to_string(rules[l].kind()) << ',' << k << ',' << csv_number(weights[k]);
      for (Eigen::Index w = 0; w < nodes.cols(); ++w) o << ',' << csv_number(nodes(k, w));
      o << '\n';
    }
  }
  return 0;
}

double time_objective(Family family, QuadratureKind quadrature, int m, int s, int b, int width, int input_dim,
                      int reps, std::uint64_t seed) {
  const int n = std::max(m, b) * 2;
  const Dataset data = make_linear_gaussian(n, input_dim, 1, seed);
  ModelConfig mc;
  mc.family = family;
  mc.layers = 2;
  mc.hidden_width = width;
  mc.inducing_points = m;
  mc.quadrature = quadrature;
  mc.quadrature_sites = s;
  mc.mc_samples = s;
  const Model model = Model::initialize(mc, data.x, data.y, seed);
  const Batch batch{data.x.topRows(b), data.y.topRows(b)};
  ObjectiveOptions options;
  options.beta_reg = default_beta_reg(family);
  options.seed = seed;
  (void)evaluate_objective(model, batch, options, true);
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) (void)evaluate_objective(model, batch, options, true);
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / std::max(reps, 1);
}

std::vector<BenchRecord> run_bench(const BenchArgs& args) {
  const Family family = parse_family(args.family);
  const QuadratureKind q = parse_quadrature_kind(args.quadrature);
  std::vector<BenchRecord> out;
  for (int m : args.m) {
    for (int s : args.s) {
      for (int b : args.b) {
        out.push_back({m, s, b, args.width,
                       time_objective(family, q, m, s, b, args.width, args.input_dim, args.reps, args.seed)});
      }
    }
  }
  return out;
}

int cmd_bench(const BenchArgs& args, std::ostream& out, std::ostream& err) {
  std::ofstream file;
  if (!args.out.empty()) {
    file.open(args.out, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write '" + args.out + "'");
  }
  std::ostream& o = args.out.empty() ? out : file;
  o << "M,S,B,W,mean_seconds\n";
  for (const BenchRecord& r : run_bench(args)) {
    o << r.m << ',' << r.s << ',' << r.b << ',' << r.width << ',' << csv_number(r.mean_seconds) << '\n';
    err << "M=" << r.m << " S=" << r.s << " B=" << r.b << ": " << r.mean_seconds << " s\n";
  }
  return 0;
}

int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream&) {
  DataConfig d;
  d.synthetic = args.kind;
  d.synthetic_n = args.n;
  d.synthetic_d = args.d;
  d.synthetic_dy = args.dy;
  d.split_seed = args.seed;
  const Dataset data = load_dataset(d);
  write_csv(args.out, data);
  out << json{{"path", args.out}, {"rows", data.size()}, {"inputs", data.x_names}, {"targets", data.y_names}}.dump()
      << '\n';
  return 0;
}

}  // namespace dspp::cli
