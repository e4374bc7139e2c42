#include "cvseg/ablation.hpp"

#include <cstdio>

#include "cvseg/errors.hpp"

namespace cvseg {

namespace {

AblationPreset make(std::string id, std::string description, LossMode loss, auto&& edit) {
  AblationPreset p{std::move(id), std::move(description), ModelVariant{}, loss};
  edit(p.variant);
  return p;
}

std::vector<AblationPreset> build_presets() {
  constexpr LossMode agg = LossMode::kAggregation;
  constexpr LossMode wce = LossMode::kWceOnly;
  const auto full = [](ModelVariant&) {};
  std::vector<AblationPreset> p;

  p.push_back(make("A1", "local encoding + mean pooling", agg, [](ModelVariant& v) { v.lafa.adaptive_unit = false; }));
  p.push_back(make("A2", "repeated semantics + adaptive augmentation", agg,
                   [](ModelVariant& v) { v.lafa.local_encoding = false; }));
  p.push_back(make("A3", "LAFA without global descriptor", agg,
                   [](ModelVariant& v) { v.global = GlobalMode::kNone; }));
  p.push_back(make("A4", "full network", agg, full));

  p.push_back(make("B1", "semantic differences only", agg, [](ModelVariant& v) {
    v.lafa.encode_xyz = false;
    v.lafa.encode_rgb = false;
  }));
  p.push_back(make("B2", "xyz + semantic differences", agg, [](ModelVariant& v) { v.lafa.encode_rgb = false; }));
  p.push_back(make("B3", "rgb + semantic differences", agg, [](ModelVariant& v) { v.lafa.encode_xyz = false; }));
  p.push_back(make("B4", "xyz + rgb differences, raw neighbour semantics", agg, [](ModelVariant& v) {
    v.lafa.encode_semantic = false;
    v.lafa.append_semantic = true;
  }));
  p.push_back(make("B5", "xyz + rgb + semantic differences", agg, full));

  p.push_back(make("C1", "max pooling", wce, [](ModelVariant& v) {
    v.lafa.adaptive_weight = false;
    v.lafa.pool_sum = false;
  }));
  p.push_back(make("C2", "sum pooling", wce, [](ModelVariant& v) {
    v.lafa.adaptive_weight = false;
    v.lafa.pool_max = false;
  }));
  p.push_back(make("C3", "max + sum pooling", wce, [](ModelVariant& v) { v.lafa.adaptive_weight = false; }));
  p.push_back(make("C4", "adaptive weight + max pooling", wce, [](ModelVariant& v) { v.lafa.pool_sum = false; }));
  p.push_back(make("C5", "adaptive weight + sum pooling", wce, [](ModelVariant& v) { v.lafa.pool_max = false; }));
  p.push_back(make("C6", "adaptive weighted sum + max pooling", wce, full));

  p.push_back(make("D1", "no global descriptor", agg, [](ModelVariant& v) { v.global = GlobalMode::kNone; }));
  p.push_back(make("D2", "VLAD of the last encoder level", agg,
                   [](ModelVariant& v) { v.global = GlobalMode::kLastLayerVlad; }));
  p.push_back(make("D3", "global max pooling", agg, [](ModelVariant& v) { v.global = GlobalMode::kMaxPool; }));
  p.push_back(make("D4", "global mean pooling", agg, [](ModelVariant& v) { v.global = GlobalMode::kMeanPool; }));
  p.push_back(make("D5", "comprehensive VLAD", agg, full));

  p.push_back(make("E1", "weighted cross-entropy only", wce, full));
  p.push_back(make("E2", "aggregation loss", agg, full));
  return p;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

const std::vector<AblationPreset>& ablation_presets() {
  static const std::vector<AblationPreset> presets = build_presets();
  return presets;
}

const AblationPreset& find_preset(const std::string& id) {
  std::string valid;
  for (const AblationPreset& p : ablation_presets()) {
    if (p.id == id) return p;
    valid += (valid.empty() ? "" : ", ") + p.id;
  }
  throw UsageError("unknown ablation preset '" + id + "'; valid ids: " + valid);
}

std::vector<AblationRow> run_ablation(const std::vector<std::string>& ids, const RunConfig& config,
                                      const PointCloud& train_cloud, const PointCloud& eval_cloud) {
  if (ids.empty()) throw UsageError("no ablation presets given");
  std::vector<const AblationPreset*> presets;
  for (const std::string& id : ids) presets.push_back(&find_preset(id));

  std::vector<AblationRow> rows;
  for (const AblationPreset* p : presets) {
    Model model = build_model(config.network, p->variant);
    TrainConfig tc = config.train;
    tc.loss = p->loss;
    tc.log_path.clear();
    tc.checkpoint_every = 0;
    const TrainResult tr = train(model, std::span<const PointCloud>(&train_cloud, 1), tc);
    const EvalResult er = evaluate(model, eval_cloud, EvalConfig{config.eval_points, config.train.seed});

    AblationRow row;
    row.id = p->id;
    row.description = p->description;
    row.miou = er.confusion.miou();
    row.oa = er.confusion.oa();
    row.final_loss = tr.log.epochs.back().loss;
    for (const EpochRecord& r : tr.log.epochs) {
      if (r.oa >= config.ablation.convergence_oa) {
        row.convergence_epoch = r.epoch;
        break;
      }
    }
    row.epochs = static_cast<int>(tr.log.epochs.size());
    row.parameters = count_parameters(model);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::size_t desc = 11;
  for (const AblationRow& r : rows) desc = std::max(desc, r.description.size());
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-6s  %-*s  %7s  %7s  %10s  %9s  %10s\n", "preset", static_cast<int>(desc),
                "description", "mIoU(%)", "OA(%)", "final_loss", "converged", "parameters");
  out += buf;
  for (const AblationRow& r : rows) {
    const std::string conv = r.convergence_epoch ? std::to_string(*r.convergence_epoch) : "-";
    std::snprintf(buf, sizeof buf, "%-6s  %-*s  %7.1f  %7.1f  %10.4f  %9s  %10lld\n", r.id.c_str(),
                  static_cast<int>(desc), r.description.c_str(), 100.0 * r.miou, 100.0 * r.oa, r.final_loss,
                  conv.c_str(), static_cast<long long>(r.parameters));
    out += buf;
  }
  return out;
}

std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "preset,description,miou,oa,final_loss,convergence_epoch,epochs,parameters\n";
  for (const AblationRow& r : rows) {
    out += r.id + ",\"" + r.description + "\"," + fixed(r.miou, 6) + "," + fixed(r.oa, 6) + "," +
           fixed(r.final_loss, 6) + "," + (r.convergence_epoch ? std::to_string(*r.convergence_epoch) : "") + "," +
           std::to_string(r.epochs) + "," + std::to_string(r.parameters) + "\n";
  }
  return out;
}

}  // namespace cvseg
