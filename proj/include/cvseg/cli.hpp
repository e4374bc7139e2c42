#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "cvseg/config.hpp"

namespace cvseg {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // unexpected internal error
  kExitUsage = 2,
  kExitIo = 3,  // missing or unreadable file, malformed cloud
  kExitConfig = 4,
  kExitNonFinite = 5,
  kExitCheckpoint = 6,
  kExitValidation = 7,
};

// Entry point behind the `cvseg` binary. Never throws; failures print one
// line to `err` and return the matching exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Synthetic room from the config when no training path is set.
PointCloud load_training_cloud(const RunConfig& config);
PointCloud load_eval_cloud(const RunConfig& config);

// "1k" -> 1000, "2m" -> 2000000, plain integers as is.
Index parse_size(const std::string& text);

struct BenchRow {
  std::string kernel;
  Index points = 0;
  double median_ms = 0.0;
  int reps = 0;
};

// Kernels: knn, gather, lafa, vlad. One warm-up run, then `reps` timed runs.
std::vector<BenchRow> run_bench(const std::string& kernel, const std::vector<Index>& sizes, int reps);
std::string format_bench_csv(const std::vector<BenchRow>& rows);

}  // namespace cvseg
