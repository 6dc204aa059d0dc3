#include <CLI11.hpp>
#include <map>
#include <string>
#include <vector>

#include "rdm/cli.hpp"

namespace {

using rdm::cli::CommonOptions;

void add_common(CLI::App* cmd, CommonOptions& common,
                std::vector<std::string>& overrides) {
  cmd->add_option("--config", common.config_path, "config file (key = value lines)");
  cmd->add_option("--set", overrides, "override a config key, e.g. --set seed=3")
      ->take_all();
}

CommonOptions finalize_common(CommonOptions common,
                              const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError("--set expects key=value, got: " + kv);
    }
    common.overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return common;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "rdm — coarse-to-fine point cloud registration with rotary positional "
      "attention.\n"
      "Exit codes: 0 ok, 1 argument error, 2 io error, 3 parse error, 4 data "
      "error, 5 numeric error."};
  app.require_subcommand(1);

  rdm::cli::RegisterOptions reg;
  std::vector<std::string> reg_overrides;
  auto* reg_cmd = app.add_subcommand("register", "register a source scan onto a target scan");
  reg_cmd->add_option("--source", reg.source_path, "source .bin scan")->required();
  reg_cmd->add_option("--target", reg.target_path, "target .bin scan")->required();
  reg_cmd->add_option("--weights", reg.weights_path, "weight checkpoint (.rdmw)");
  reg_cmd->add_option("--gt", reg.gt_path, "ground-truth pose file (first line used)");
  reg_cmd->add_option("--out", reg.out_dir, "output directory")->required();
  add_common(reg_cmd, reg.common, reg_overrides);

  rdm::cli::TrainOptions train;
  std::vector<std::string> train_overrides;
  auto* train_cmd = app.add_subcommand("train-toy", "train on synthetic scenes");
  train_cmd->add_option("--scenes", train.scenes, "number of training scenes");
  train_cmd->add_option("--epochs", train.epochs, "training epochs");
  train_cmd->add_option("--out-weights", train.out_weights, "checkpoint output path")
      ->required();
  train_cmd->add_option("--log", train.log_path, "CSV loss log path");
  add_common(train_cmd, train.common, train_overrides);

  rdm::cli::EvalOptions eval;
  std::vector<std::string> eval_overrides;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate registration over a pair set");
  eval_cmd->add_option("--pairs", eval.manifest_path,
                       "manifest: source target r00..r22 t (12 numbers per line)");
  eval_cmd->add_option("--synthetic", eval.synthetic_pairs,
                       "evaluate this many generated synthetic pairs instead");
  eval_cmd->add_option("--synth-offset", eval.synthetic_seed_offset,
                       "seed offset for synthetic evaluation pairs");
  eval_cmd->add_option("--weights", eval.weights_path, "weight checkpoint (.rdmw)");
  eval_cmd->add_option("--report", eval.report_dir, "report output directory")->required();
  add_common(eval_cmd, eval.common, eval_overrides);

  rdm::cli::BenchOptions bench;
  std::vector<std::string> bench_overrides;
  auto* bench_cmd = app.add_subcommand("bench-attn", "attention runtime/storage benchmark");
  bench_cmd->add_option("--nodes", bench.nodes, "node counts");
  bench_cmd->add_option("--kinds", bench.kinds,
                        "kinds: rotary vanilla absolute-position pairwise-geometric");
  bench_cmd->add_option("--repeats", bench.repeats, "repeats per cell");
  bench_cmd->add_option("--dim", bench.dim, "feature width for the benchmark");
  bench_cmd->add_option("--ffn-multiple", bench.ffn_multiple, "ffn hidden = multiple * dim");
  bench_cmd->add_option("--out", bench.out_csv, "CSV output path (default stdout)");
  add_common(bench_cmd, bench.common, bench_overrides);

  rdm::cli::SynthOptions synth;
  std::vector<std::string> synth_overrides;
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic pairs to disk");
  synth_cmd->add_option("--count", synth.count, "number of pairs");
  synth_cmd->add_option("--seed-offset", synth.seed_offset, "seed offset");
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  add_common(synth_cmd, synth.common, synth_overrides);

  CLI11_PARSE(app, argc, argv);

  return rdm::cli::guarded([&]() -> int {
    if (reg_cmd->parsed()) {
      reg.common = finalize_common(reg.common, reg_overrides);
      return rdm::cli::run_register(reg);
    }
    if (train_cmd->parsed()) {
      train.common = finalize_common(train.common, train_overrides);
      return rdm::cli::run_train_toy(train);
    }
    if (eval_cmd->parsed()) {
      eval.common = finalize_common(eval.common, eval_overrides);
      return rdm::cli::run_eval(eval);
    }
    if (bench_cmd->parsed()) {
      bench.common = finalize_common(bench.common, bench_overrides);
      return rdm::cli::run_bench_attn(bench);
    }
    if (synth_cmd->parsed()) {
      synth.common = finalize_common(synth.common, synth_overrides);
      return rdm::cli::run_synth(synth);
    }
    return rdm::cli::kArgumentError;
  });
}
