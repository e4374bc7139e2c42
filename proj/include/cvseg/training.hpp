#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvseg/losses.hpp"
#include "cvseg/metrics.hpp"
#include "cvseg/network.hpp"

namespace cvseg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Eigen::ArrayXd> m;
  std::vector<Eigen::ArrayXd> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update of every array in `params` using its
// accumulated gradient (arrays without a gradient count as zero). The state
// is sized on first use and must keep matching afterwards.
void adam_step(std::span<const DiffArray> params, AdamState& state, double lr, const AdamConfig& config = {});

struct TrainConfig {
  int epochs = 100;
  Index batch = 6;
  Index points = 40960;
  double lr = 0.01;
  double lr_decay = 0.95;  // multiplied in once per epoch
  AdamConfig adam;
  LossMode loss = LossMode::kAggregation;
  std::uint64_t seed = 1;
  // 0: ceil(total points / (batch * points)).
  Index steps_per_epoch = 0;
  // Stop after the first epoch whose train OA reaches this value.
  std::optional<double> target_oa;
  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;
  std::filesystem::path log_path;  // RunLog CSV, appended after every epoch

  void validate() const;
};

Index steps_per_epoch(const TrainConfig& config, Index total_points);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // mean optimised loss over the epoch's steps
  double wce = 0.0;   // cross-entropy part alone
  double oa = 0.0;    // over every training-mode prediction of the epoch
  double lr = 0.0;
  double seconds = 0.0;
};

struct RunLog {
  std::vector<EpochRecord> epochs;

  static constexpr const char* kHeader = "epoch,loss,oa,lr,seconds";
  static std::string format_row(const EpochRecord& r, bool with_time = true);
  // Without time the seconds column is left empty, for exact comparison.
  std::string to_csv(bool with_time = true) const;
};

// First epoch whose value is <= threshold, if any.
std::optional<int> epochs_to_reach(const std::vector<EpochRecord>& log, double threshold, bool use_wce = false);

struct TrainResult {
  RunLog log;
  AdamState optimizer;
};

// Trains in place on labelled clouds.
TrainResult train(Model& model, std::span<const PointCloud> dataset, const TrainConfig& config);

struct EvalConfig {
  Index points = 40960;
  std::uint64_t seed = 1;
};

struct EvalResult {
  ConfusionMatrix confusion;
  std::vector<int> predictions;
  Index crops = 0;
};

// Overlapping crops centred on not-yet-covered points until every point has
// a prediction; points seen several times take the majority vote (ties to
// the smaller class).
EvalResult evaluate(Model& model, const PointCloud& cloud, const EvalConfig& config);

}  // namespace cvseg
