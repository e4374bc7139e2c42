#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cvseg/config.hpp"

namespace cvseg {

struct AblationPreset {
  std::string id;
  std::string description;
  ModelVariant variant;
  LossMode loss = LossMode::kAggregation;
};

// The 22 presets in table order: A1-A4, B1-B5, C1-C6, D1-D5, E1-E2.
const std::vector<AblationPreset>& ablation_presets();

// Throws UsageError listing the valid ids.
const AblationPreset& find_preset(const std::string& id);

struct AblationRow {
  std::string id;
  std::string description;
  double miou = 0.0;
  double oa = 0.0;
  double final_loss = 0.0;
  std::optional<int> convergence_epoch;  // first epoch with train OA >= convergence_oa
  int epochs = 0;
  Index parameters = 0;
};

// Trains and evaluates every preset on the same data with the same seeds.
std::vector<AblationRow> run_ablation(const std::vector<std::string>& ids, const RunConfig& config,
                                      const PointCloud& train_cloud, const PointCloud& eval_cloud);

std::string format_ablation_table(const std::vector<AblationRow>& rows);
std::string format_ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace cvseg
