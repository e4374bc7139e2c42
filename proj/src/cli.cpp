#include "cvseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>

#include "cvseg/ablation.hpp"
#include "cvseg/errors.hpp"
#include "cvseg/numerics/tape.hpp"

namespace cvseg {

PointCloud load_training_cloud(const RunConfig& config) {
  if (config.data.train_path.empty()) {
    return generate_synthetic_scene(SyntheticSceneSpec::room(config.network.classes, config.data.synthetic_points,
                                                             config.data.synthetic_seed));
  }
  return read_ascii_cloud(config.data.train_path, true, config.network.classes);
}

PointCloud load_eval_cloud(const RunConfig& config) {
  if (config.data.eval_path.empty()) return load_training_cloud(config);
  return read_ascii_cloud(config.data.eval_path, true, config.network.classes);
}

Index parse_size(const std::string& text) {
  if (text.empty()) throw UsageError("empty size");
  Index scale = 1;
  std::string digits = text;
  const char last = static_cast<char>(std::tolower(static_cast<unsigned char>(text.back())));
  if (last == 'k' || last == 'm') {
    scale = last == 'k' ? 1000 : 1000000;
    digits.pop_back();
  }
  Index v = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || v < 1) {
    throw UsageError("invalid size '" + text + "'");
  }
  return v * scale;
}

namespace {

Points3<double> random_points(Index n, std::uint64_t seed) {
  Rng rng(seed);
  Points3<double> p(n, 3);
  for (Index i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) p(i, j) = rng.uniform();
  }
  return p;
}

DiffArray random_array(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  DiffArray a = DiffArray::zeros(std::move(shape));
  for (Index i = 0; i < a.size(); ++i) a.values_mut()[i] = rng.uniform(-1.0, 1.0);
  return a;
}

DiffArray as_array(const Points3<double>& m) {
  return DiffArray({m.rows(), 3}, Eigen::Map<const Eigen::ArrayXd>(m.data(), m.size()));
}

}  // namespace

std::vector<BenchRow> run_bench(const std::string& kernel, const std::vector<Index>& sizes, int reps) {
  if (reps < 5) throw UsageError("bench needs at least 5 repetitions");
  if (sizes.empty()) throw UsageError("bench needs at least one size");
  constexpr Index k = 16;
  std::vector<BenchRow> rows;
  for (Index n : sizes) {
    if (n < k) throw UsageError("bench size must be at least " + std::to_string(k));
    const Points3<double> pts = random_points(n, 11);
    std::function<void()> body;
    Rng rng(3);
    ParamStore store;
    if (kernel == "knn") {
      body = [&] { (void)knn(pts, pts, k); };
    } else if (kernel == "gather") {
      NeighborIndex idx = knn(pts, pts, k);
      const DiffArray x = random_array({n, 32}, 5);
      body = [x, idx] { (void)gather_rows(x, idx); };
    } else if (kernel == "lafa") {
      const NeighborIndex idx = knn(pts, pts, k);
      const DiffArray positions = as_array(pts);
      const DiffArray colors = as_array(random_points(n, 12));
      const DiffArray features = random_array({n, 32}, 5);
      auto params = std::make_shared<LafaParams>(make_lafa(store, "bench", 32, 32, LafaVariant{}, rng));
      body = [=] {
        NoGradGuard guard;
        (void)lafa_forward(positions, colors, features, idx, *params, ForwardMode{});
      };
    } else if (kernel == "vlad") {
      const DiffArray features = random_array({n, 32}, 5);
      const VladLayerParams params = make_vlad_layer(store, "bench", 32, 16, rng);
      body = [=] {
        NoGradGuard guard;
        (void)vlad_layer(features, params);
      };
    } else {
      throw UsageError("unknown bench kernel '" + kernel + "'; valid kernels: knn, gather, lafa, vlad");
    }
    body();  // warm-up
    std::vector<double> ms;
    for (int r = 0; r < reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      body();
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    const std::size_t mid = ms.size() / 2;
    const double median = ms.size() % 2 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
    rows.push_back(BenchRow{kernel, n, median, reps});
  }
  return rows;
}

std::string format_bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "kernel,points,median_ms,reps\n";
  char buf[128];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%.3f,%d\n", r.kernel.c_str(), static_cast<long long>(r.points),
                  r.median_ms, r.reps);
    out += buf;
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

RunConfig config_from(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    c.validate();
    return c;
  }
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path);
  return load_config(path);
}

ModelVariant variant_for(RunConfig& config) {
  if (config.preset.empty()) return {};
  const AblationPreset& p = find_preset(config.preset);
  config.train.loss = p.loss;
  return p.variant;
}

int cmd_gen(int classes, Index points, std::uint64_t seed, double noise, const std::string& out_path,
            std::ostream& out) {
  SyntheticSceneSpec spec = SyntheticSceneSpec::room(classes, points, seed);
  spec.noise_sigma = noise;
  const PointCloud cloud = generate_synthetic_scene(spec);
  if (std::filesystem::path(out_path).has_parent_path()) {
    std::filesystem::create_directories(std::filesystem::path(out_path).parent_path());
  }
  write_ascii_cloud(cloud, out_path);
  out << "wrote " << cloud.size() << " points, " << classes << " classes to " << out_path << '\n';
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, bool print_config, std::ostream& out) {
  RunConfig config = config_from(config_path);
  if (print_config) {
    out << format_config(config);
    return kExitOk;
  }
  if (out_dir.empty()) throw UsageError("train needs --out");
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  const ModelVariant variant = variant_for(config);
  const PointCloud cloud = load_training_cloud(config);

  Model model = build_model(config.network, variant);
  TrainConfig tc = config.train;
  tc.log_path = dir / "runlog.csv";
  tc.checkpoint_dir = dir / "checkpoints";
  const TrainResult result = train(model, std::span<const PointCloud>(&cloud, 1), tc);
  save_model(model, dir / "model.ckpt");
  write_text(dir / "config.ini", format_config(config));

  const EpochRecord& last = result.log.epochs.back();
  out << "trained " << result.log.epochs.size() << " epochs, " << count_parameters(model)
      << " parameters; final loss " << last.loss << ", train OA " << last.oa << '\n';
  out << "checkpoint " << (dir / "model.ckpt").string() << ", run log " << tc.log_path.string() << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, const std::string& data,
             const std::string& csv_path, bool absent_as_zero, std::ostream& out) {
  RunConfig config = config_from(config_path);
  const ModelVariant variant = variant_for(config);
  if (!std::filesystem::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint);
  Model model = build_model(config.network, variant);
  load_model(model, checkpoint);
  const PointCloud cloud =
      data.empty() ? load_eval_cloud(config) : read_ascii_cloud(data, true, config.network.classes);
  const EvalResult r = evaluate(model, cloud, EvalConfig{config.eval_points, config.train.seed});
  out << format_metrics_table(r.confusion, {}, absent_as_zero);
  if (!csv_path.empty()) write_text(csv_path, format_metrics_csv(r.confusion, {}, absent_as_zero));
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& presets, const std::string& out_dir,
               std::ostream& out) {
  const RunConfig config = config_from(config_path);
  const std::vector<std::string> ids = presets.empty() ? config.ablation.presets : presets;
  if (ids.empty()) {
    std::string valid;
    for (const AblationPreset& p : ablation_presets()) valid += (valid.empty() ? "" : ", ") + p.id;
    throw UsageError("no ablation presets given; valid ids: " + valid);
  }
  for (const std::string& id : ids) (void)find_preset(id);
  const PointCloud train_cloud = load_training_cloud(config);
  const PointCloud eval_cloud = load_eval_cloud(config);
  const std::vector<AblationRow> rows = run_ablation(ids, config, train_cloud, eval_cloud);
  const std::string table = format_ablation_table(rows);
  out << table;
  if (!out_dir.empty()) {
    write_text(std::filesystem::path(out_dir) / "ablation.txt", table);
    write_text(std::filesystem::path(out_dir) / "ablation.csv", format_ablation_csv(rows));
  }
  return kExitOk;
}

int cmd_bench(const std::string& kernel, const std::string& sizes, int reps, const std::string& csv_path,
              std::ostream& out) {
  std::vector<Index> parsed;
  std::size_t start = 0;
  while (start <= sizes.size()) {
    const std::size_t comma = sizes.find(',', start);
    parsed.push_back(parse_size(sizes.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  const std::string csv = format_bench_csv(run_bench(kernel, parsed, reps));
  if (csv_path.empty()) {
    out << csv;
  } else {
    write_text(csv_path, csv);
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"point-cloud semantic segmentation: data generation, training, evaluation, ablation, benchmarks",
               "cvseg"};
  app.require_subcommand(1);

  int gen_classes = 3;
  Index gen_points = 16384;
  std::uint64_t gen_seed = 7;
  double gen_noise = 0.005;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "write a synthetic labelled room as an ASCII cloud");
  gen->add_option("--classes", gen_classes, "number of classes")->check(CLI::Range(1, 1000));
  gen->add_option("--points", gen_points, "number of points")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--noise", gen_noise, "positional noise sigma in metres")->check(CLI::NonNegativeNumber);
  gen->add_option("--out", gen_out, "output file")->required();

  std::string config_path, out_dir;
  bool print_config = false;
  auto* train_cmd = app.add_subcommand("train", "train a model; writes model.ckpt, runlog.csv and config.ini");
  train_cmd->add_option("--config", config_path, "run configuration (defaults when omitted)");
  train_cmd->add_option("--out", out_dir, "output directory");
  train_cmd->add_flag("--print-config", print_config, "print the effective configuration and exit");

  std::string checkpoint, data, csv_path;
  bool absent_as_zero = false;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a labelled cloud");
  eval_cmd->add_option("--config", config_path, "run configuration the checkpoint was trained with");
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--data", data, "labelled ASCII cloud (default: the config's evaluation data)");
  eval_cmd->add_option("--csv", csv_path, "also write the metrics as CSV");
  eval_cmd->add_flag("--absent-as-zero", absent_as_zero, "count classes absent from truth and prediction as IoU 0");

  std::vector<std::string> presets;
  auto* ablate = app.add_subcommand("ablate", "train and evaluate ablation presets on the same data");
  ablate->add_option("--config", config_path, "run configuration");
  ablate->add_option("--presets", presets, "preset ids, e.g. A1,E2 (default: the config's list)")->delimiter(',');
  ablate->add_option("--out", out_dir, "directory for ablation.txt and ablation.csv");

  std::string kernel, sizes = "1k,10k,100k";
  int reps = 5;
  auto* bench = app.add_subcommand("bench", "time a kernel; CSV with median milliseconds per size");
  bench->add_option("kernel", kernel, "knn, gather, lafa or vlad")->required();
  bench->add_option("--sizes", sizes, "comma separated point counts, k/m suffixes allowed");
  bench->add_option("--reps", reps, "timed repetitions (at least 5)");
  bench->add_option("--csv", csv_path, "write the CSV here instead of stdout");

  std::vector<const char*> argv{"cvseg"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "cvseg: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_classes, gen_points, gen_seed, gen_noise, gen_out, out);
    if (*train_cmd) return cmd_train(config_path, out_dir, print_config, out);
    if (*eval_cmd) return cmd_eval(config_path, checkpoint, data, csv_path, absent_as_zero, out);
    if (*ablate) return cmd_ablate(config_path, presets, out_dir, out);
    if (*bench) return cmd_bench(kernel, sizes, reps, csv_path, out);
  } catch (const UsageError& e) {
    err << "cvseg: usage: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "cvseg: io: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    err << "cvseg: parse: " << e.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "cvseg: config: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NonFiniteError& e) {
    err << "cvseg: non-finite: " << e.what() << '\n';
    return kExitNonFinite;
  } catch (const CheckpointError& e) {
    err << "cvseg: checkpoint: " << e.what() << '\n';
    return kExitCheckpoint;
  } catch (const Error& e) {
    err << "cvseg: invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "cvseg: error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace cvseg
