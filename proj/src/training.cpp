#include "cvseg/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cvseg/errors.hpp"
#include "cvseg/numerics/tape.hpp"

namespace cvseg {

void adam_step(std::span<const DiffArray> params, AdamState& state, double lr, const AdamConfig& config) {
  if (state.m.empty() && state.step == 0) {
    for (const DiffArray& p : params) {
      state.m.push_back(Eigen::ArrayXd::Zero(p.size()));
      state.v.push_back(Eigen::ArrayXd::Zero(p.size()));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ValidationError("optimizer state tracks " + std::to_string(state.m.size()) + " arrays, got " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].size() || state.v[i].size() != params[i].size()) {
      throw ValidationError("optimizer state shape mismatch at array " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const DiffArray& p = params[i];
    if (!p.has_grad()) continue;
    const Eigen::ArrayXd& g = p.node()->grad;
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g.square();
    p.node()->value -= lr * (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + config.epsilon);
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch < 1) throw ConfigError("batch size must be positive");
  if (points < 1) throw ConfigError("points per crop must be positive");
  if (lr < 0.0 || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
  if (lr_decay <= 0.0) throw ConfigError("learning-rate decay must be positive");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0 || adam.epsilon <= 0.0) {
    throw ConfigError("Adam hyperparameters out of range");
  }
  if (steps_per_epoch < 0) throw ConfigError("steps per epoch must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint cadence must be non-negative");
  if (checkpoint_every > 0 && checkpoint_dir.empty()) throw ConfigError("checkpoint cadence needs a directory");
}

Index steps_per_epoch(const TrainConfig& config, Index total_points) {
  if (config.steps_per_epoch > 0) return config.steps_per_epoch;
  const Index per_step = config.batch * config.points;
  return std::max<Index>(1, (total_points + per_step - 1) / per_step);
}

std::string RunLog::format_row(const EpochRecord& r, bool with_time) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,", r.epoch, r.loss, r.oa, r.lr);
  std::string row = buf;
  if (with_time) {
    std::snprintf(buf, sizeof buf, "%.3f", r.seconds);
    row += buf;
  }
  return row;
}

std::string RunLog::to_csv(bool with_time) const {
  std::string out = std::string(kHeader) + "\n";
  for (const EpochRecord& r : epochs) out += format_row(r, with_time) + "\n";
  return out;
}

std::optional<int> epochs_to_reach(const std::vector<EpochRecord>& log, double threshold, bool use_wce) {
  for (const EpochRecord& r : log) {
    if ((use_wce ? r.wce : r.loss) <= threshold) return r.epoch;
  }
  return std::nullopt;
}

namespace {

std::vector<DiffArray> trainable(const Model& model) {
  std::vector<DiffArray> out;
  for (const auto& e : model.store.entries()) {
    if (e.trainable) out.push_back(e.array);
  }
  return out;
}

bool all_finite(const Eigen::ArrayXd& a) { return a.isFinite().all(); }

[[noreturn]] void report_non_finite(const Tape& tape, const std::string& what) {
  const auto entries = tape.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& node = entries[i].output;
    if (!all_finite(node->value)) {
      throw NonFiniteError(what + ": first non-finite tensor is the output of '" + entries[i].op + "' (tape entry " +
                           std::to_string(i) + ", shape " + shape_string(node->shape) + ")");
    }
  }
  throw NonFiniteError(what + ": non-finite value with finite intermediates");
}

void check_gradients(const Model& model, int epoch) {
  for (const auto& e : model.store.entries()) {
    if (e.trainable && e.array.has_grad() && !all_finite(e.array.node()->grad)) {
      throw NonFiniteError("epoch " + std::to_string(epoch) + ": gradient of '" + e.name + "' is non-finite");
    }
  }
}

}  // namespace

TrainResult train(Model& model, std::span<const PointCloud> dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw ValidationError("training needs at least one cloud");
  std::vector<int> all_labels;
  Index total_points = 0;
  for (const PointCloud& c : dataset) {
    if (!c.has_labels()) throw ValidationError("training clouds must be labelled");
    c.validate();
    if (c.class_count > model.config.classes) {
      throw ValidationError("cloud has " + std::to_string(c.class_count) + " classes, network predicts " +
                            std::to_string(model.config.classes));
    }
    all_labels.insert(all_labels.end(), c.labels->begin(), c.labels->end());
    total_points += c.size();
  }
  const ClassWeights weights = ClassWeights::from_labels(all_labels, model.config.classes);
  const Index steps = steps_per_epoch(config, total_points);
  const std::vector<DiffArray> params = trainable(model);

  std::ofstream log_file;
  if (!config.log_path.empty()) {
    log_file.open(config.log_path);
    if (!log_file) throw IoError("cannot write run log " + config.log_path.string());
    log_file << RunLog::kHeader << '\n';
  }
  if (config.checkpoint_every > 0) std::filesystem::create_directories(config.checkpoint_dir);

  TrainResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = config.lr * std::pow(config.lr_decay, epoch - 1);
    double loss_sum = 0.0, wce_sum = 0.0;
    std::int64_t correct = 0, seen = 0;
    for (Index step = 0; step < steps; ++step) {
      model.store.zero_grad();
      std::vector<PointCloud> crops;
      std::vector<SamplingHierarchy> hierarchies;
      std::vector<int> labels;
      std::uint64_t dropout_seed = 0;
      for (Index b = 0; b < config.batch; ++b) {
        const std::uint64_t item = static_cast<std::uint64_t>(step * config.batch + b);
        const std::uint64_t s = mix_seed(config.seed, static_cast<std::uint64_t>(epoch), item);
        Rng pick_rng(s);
        const PointCloud& scene = dataset[pick_rng.below(dataset.size())];
        Crop crop = crop_batch(scene, config.points, mix_seed(s, 1));
        hierarchies.push_back(hierarchy_for(model, crop.cloud, mix_seed(s, 2)));
        labels.insert(labels.end(), crop.cloud.labels->begin(), crop.cloud.labels->end());
        crops.push_back(std::move(crop.cloud));
        if (b == 0) dropout_seed = mix_seed(s, 3);
      }

      // One pass over the whole batch so normalization statistics span every crop.
      Tape tape;
      TapeScope scope(tape);
      ForwardOptions opts;
      opts.training = true;
      opts.dropout_seed = dropout_seed;
      const ForwardResult fr = forward(model, crops, hierarchies, opts);
      const DiffArray wce = weighted_cross_entropy(fr.logits, labels, weights);
      DiffArray loss = wce;
      if (config.loss == LossMode::kAggregation) {
        const std::vector<DiffArray> levels = level_constraints(fr);
        loss = aggregation_loss(wce, levels);
      }
      const std::string where = "epoch " + std::to_string(epoch) + " step " + std::to_string(step);
      if (!std::isfinite(loss.item())) report_non_finite(tape, where);
      backward(loss);

      loss_sum += loss.item();
      wce_sum += wce.item();
      const std::vector<int> pred = predict(fr.logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
      seen += static_cast<std::int64_t>(pred.size());
      check_gradients(model, epoch);
      adam_step(params, result.optimizer, lr, config.adam);
    }
    model.store.zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    const double denom = static_cast<double>(steps);
    rec.loss = loss_sum / denom;
    rec.wce = wce_sum / denom;
    rec.oa = static_cast<double>(correct) / static_cast<double>(seen);
    rec.lr = lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.epochs.push_back(rec);
    if (log_file) log_file << RunLog::format_row(rec) << '\n' << std::flush;

    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
      save_model(model, config.checkpoint_dir / name);
    }
    if (config.target_oa && rec.oa >= *config.target_oa) break;
  }
  return result;
}

EvalResult evaluate(Model& model, const PointCloud& cloud, const EvalConfig& config) {
  if (!cloud.has_labels()) throw ValidationError("evaluation needs a labelled cloud");
  if (config.points < 1) throw ValidationError("evaluation crop size must be positive");
  cloud.validate();
  const int classes = model.config.classes;
  const Index n = cloud.size();
  std::vector<std::int32_t> votes(static_cast<std::size_t>(n * classes), 0);
  std::vector<char> covered(static_cast<std::size_t>(n), 0);
  std::vector<Index> uncovered(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) uncovered[static_cast<std::size_t>(i)] = i;

  NoGradGuard no_grad;
  Rng rng(config.seed);
  EvalResult result;
  while (!uncovered.empty()) {
    const Index center = uncovered[rng.below(uncovered.size())];
    const std::uint64_t s = mix_seed(config.seed, static_cast<std::uint64_t>(result.crops));
    const Crop crop = crop_around(cloud, center, config.points, s);
    const SamplingHierarchy h = hierarchy_for(model, crop.cloud, mix_seed(s, 2));
    ForwardOptions opts;
    opts.training = false;
    const std::vector<int> pred = predict(forward(model, crop.cloud, h, opts).logits);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const Index row = crop.source[i];
      ++votes[static_cast<std::size_t>(row * classes + pred[i])];
      covered[static_cast<std::size_t>(row)] = 1;
    }
    ++result.crops;
    std::erase_if(uncovered, [&](Index i) { return covered[static_cast<std::size_t>(i)] != 0; });
  }

  result.predictions.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    int best = 0;
    for (int c = 1; c < classes; ++c) {
      if (votes[static_cast<std::size_t>(i * classes + c)] > votes[static_cast<std::size_t>(i * classes + best)]) {
        best = c;
      }
    }
    result.predictions[static_cast<std::size_t>(i)] = best;
  }
  result.confusion = ConfusionMatrix(classes);
  result.confusion.accumulate(*cloud.labels, result.predictions);
  return result;
}

}  // namespace cvseg
