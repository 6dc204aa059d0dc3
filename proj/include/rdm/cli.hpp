#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rdm/config.hpp"

namespace rdm::cli {

// Exit codes shared by every subcommand.
enum ExitCode {
  kOk = 0,
  kArgumentError = 1,
  kIoError = 2,
  kParseError = 3,
  kDataError = 4,
  kNumericError = 5,
};

struct CommonOptions {
  std::optional<std::string> config_path;
  std::map<std::string, std::string> overrides;  // --set key=value
};

Config resolve_config(const CommonOptions& common);

struct RegisterOptions {
  CommonOptions common;
  std::string source_path;
  std::string target_path;
  std::optional<std::string> weights_path;  // absent: fresh seed-initialized weights
  std::optional<std::string> gt_path;       // pose file, first line used
  std::string out_dir;
};
int run_register(const RegisterOptions& opts);

struct TrainOptions {
  CommonOptions common;
  int scenes = 50;
  int epochs = 20;
  std::string out_weights;
  std::string log_path;  // CSV: step,L_s1,L_s2,L_c,L_f,total,lr
};
int run_train_toy(const TrainOptions& opts);

struct EvalOptions {
  CommonOptions common;
  std::optional<std::string> manifest_path;  // lines: source target r00..t2 (12 numbers)
  int synthetic_pairs = 0;                   // used when no manifest is given
  uint64_t synthetic_seed_offset = 1000;
  std::optional<std::string> weights_path;
  std::string report_dir;
};
int run_eval(const EvalOptions& opts);

struct BenchOptions {
  CommonOptions common;
  std::vector<int> nodes = {100, 500, 1000};
  std::vector<std::string> kinds = {"vanilla", "absolute-position", "pairwise-geometric",
                                    "rotary"};
  int repeats = 3;
  int dim = 512;       // network width for the timing study
  int ffn_multiple = 4;
  std::string out_csv;  // empty: stdout
};
int run_bench_attn(const BenchOptions& opts);

struct SynthOptions {
  CommonOptions common;
  int count = 10;
  uint64_t seed_offset = 0;
  std::string out_dir;  // writes pair .bin files plus manifest.txt
};
int run_synth(const SynthOptions& opts);

// Maps an in-flight exception to the documented exit code and prints the
// message to stderr.
int exit_code_for_current_exception();

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (...) {
    return exit_code_for_current_exception();
  }
}

}  // namespace rdm::cli
