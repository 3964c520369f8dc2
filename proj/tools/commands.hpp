#pragma once

// Subcommands of the dspp command-line tool. Each returns the process exit status; data goes to
// `out` or to files, diagnostics to `err`.

#include "dspp/io.hpp"
#include "dspp/metrics.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dspp::cli {

/// Config file (or the defaults when `path` is empty) with "a.b=value" overrides applied.
nlohmann::json load_config_document(const std::string& path, const std::vector<std::string>& overrides);

/// CSV file or synthetic generator named by the data section. Synthetic data is drawn with
/// `split_seed`.
Dataset load_dataset(const DataConfig& config);
std::string dataset_label(const DataConfig& config);

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  int checkpoint_every = 0;  // also write a checkpoint every this many epochs; 0 disables
};
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct EvalArgs {
  std::string checkpoint;
  std::string split = "test";  // test or val
  std::string results;         // results CSV to append to; empty skips
};
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

struct GradCheckArgs {
  std::string config;
  std::vector<std::string> overrides;
  int batch = 8;
  int per_block = 0;  // 0 checks every scalar
  double perturb = 0.1;
  double tolerance = 1e-4;
};
int cmd_grad_check(const GradCheckArgs& args, std::ostream& out, std::ostream& err);

struct DumpQuadratureArgs {
  std::string checkpoint;  // learned rules; empty dumps an initial rule
  std::string kind = "QR3";
  int sites = 10;
  int width = 3;
  std::uint64_t seed = 0;
  std::string out;  // CSV path; empty writes to `out`
};
int cmd_dump_quadrature(const DumpQuadratureArgs& args, std::ostream& out, std::ostream& err);

struct BenchArgs {
  std::vector<int> m{32, 64, 128};
  std::vector<int> s{8};
  std::vector<int> b{256};
  int width = 3;
  int input_dim = 4;
  int reps = 5;
  std::string family = "DSPP";
  std::string quadrature = "QR3";
  std::uint64_t seed = 0;
  std::string out;  // CSV path; empty writes to `out`
};

struct BenchRecord {
  int m = 0, s = 0, b = 0, width = 0;
  double mean_seconds = 0.0;
};

/// Mean wall time of one objective-plus-gradient evaluation of a 2-layer model, after one
/// untimed warm-up call.
double time_objective(Family family, QuadratureKind quadrature, int m, int s, int b, int width, int input_dim,
                      int reps, std::uint64_t seed);
std::vector<BenchRecord> run_bench(const BenchArgs& args);
int cmd_bench(const BenchArgs& args, std::ostream& out, std::ostream& err);

struct SynthArgs {
  std::string kind = "sin";
  int n = 2000;
  int d = 2;
  int dy = 2;
  std::uint64_t seed = 0;
  std::string out;
};
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);

/// Appends one row keyed by (dataset, family, split, seed); an existing key is an error.
void append_result(const std::string& path, const std::string& dataset, const std::string& family, int split,
                   std::uint64_t seed, const EvalReport& report);

}  // namespace dspp::cli
