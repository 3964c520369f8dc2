#include "commands.hpp"

#include <CLI11.hpp>

#include <exception>
#include <iostream>

int main(int argc, char** argv) {
  using namespace dspp::cli;
  CLI::App app{"Deep sigma point processes and sparse GP baselines"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint and a JSON-lines log");
  train_cmd->add_option("-c,--config", train.config, "JSON config file");
  train_cmd->add_option("--set", train.overrides, "override a config key, e.g. --set training.epochs=50");
  train_cmd->add_option("-o,--out", train.out_dir, "output directory");
  train_cmd->add_option("--seed", train.seed, "training seed (overrides training.seed)");
  train_cmd->add_option("--checkpoint-every", train.checkpoint_every, "write a checkpoint every N epochs (0: final only)");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on its test or validation split");
  eval_cmd->add_option("checkpoint", eval.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--split", eval.split, "test or val");
  eval_cmd->add_option("--results", eval.results, "results CSV to append to");

  GradCheckArgs grad;
  auto* grad_cmd = app.add_subcommand("grad-check", "compare analytic gradients with central differences");
  grad_cmd->add_option("-c,--config", grad.config, "JSON config file");
  grad_cmd->add_option("--set", grad.overrides, "override a config key");
  grad_cmd->add_option("--batch", grad.batch, "minibatch size");
  grad_cmd->add_option("--per-block", grad.per_block, "scalars checked per parameter block (0 = all)");
  grad_cmd->add_option("--perturb", grad.perturb, "std of the random offset added to the initial parameters");
  grad_cmd->add_option("--tol", grad.tolerance, "relative error tolerance");

  DumpQuadratureArgs dump;
  auto* dump_cmd = app.add_subcommand("dump-quadrature", "write sigma-point nodes and weights as CSV");
  dump_cmd->add_option("--checkpoint", dump.checkpoint, "dump the learned rules of a checkpoint");
  dump_cmd->add_option("--kind", dump.kind, "GH, QR1, QR2 or QR3");
  dump_cmd->add_option("--sites", dump.sites, "sites per unit");
  dump_cmd->add_option("--width", dump.width, "hidden width");
  dump_cmd->add_option("--seed", dump.seed, "seed of the QR3 node jitter");
  dump_cmd->add_option("-o,--out", dump.out, "CSV path (default: standard output)");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "time objective and gradient evaluations");
  bench_cmd->add_option("--M", bench.m, "inducing points per GP")->delimiter(',');
  bench_cmd->add_option("--S", bench.s, "quadrature sites")->delimiter(',');
  bench_cmd->add_option("--B", bench.b, "minibatch sizes")->delimiter(',');
  bench_cmd->add_option("--W", bench.width, "hidden width");
  bench_cmd->add_option("--d", bench.input_dim, "input dimension");
  bench_cmd->add_option("--reps", bench.reps, "timed repetitions");
  bench_cmd->add_option("--family", bench.family, "model family");
  bench_cmd->add_option("--quadrature", bench.quadrature, "quadrature rule");
  bench_cmd->add_option("--seed", bench.seed, "seed");
  bench_cmd->add_option("-o,--out", bench.out, "CSV path (default: standard output)");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset as CSV");
  synth_cmd->add_option("--kind", synth.kind, "sin, two_blob or linear");
  synth_cmd->add_option("--n", synth.n, "rows");
  synth_cmd->add_option("--d", synth.d, "input dimension (two_blob, linear)");
  synth_cmd->add_option("--dy", synth.dy, "output dimension (linear)");
  synth_cmd->add_option("--seed", synth.seed, "seed");
  synth_cmd->add_option("-o,--out", synth.out, "CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(train, std::cout, std::cerr);
    if (*eval_cmd) return cmd_eval(eval, std::cout, std::cerr);
    if (*grad_cmd) return cmd_grad_check(grad, std::cout, std::cerr);
    if (*dump_cmd) return cmd_dump_quadrature(dump, std::cout, std::cerr);
    if (*bench_cmd) return cmd_bench(bench, std::cout, std::cerr);
    if (*synth_cmd) return cmd_synth(synth, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
